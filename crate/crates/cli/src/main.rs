use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dynaclear::engine::{CostRefresh, DecayModel};
use dynaclear::experiment::{run_experiment, sweep, DenominatorChoice, ExperimentConfig};
use dynaclear::oracles;
use dynaclear::validation::{run_selected, select, Options};
use dynaclear::ScheduleSpec;

#[derive(Parser)]
#[command(name = "dynaclear", version, about = "Dynamic matching market simulator and oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replications of one schedule and write the report files.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run several schedules with shared settings, one folder each.
    Sweep {
        /// Comma-separated schedule specs.
        #[arg(long, value_delimiter = ',', required = true)]
        schedules: Vec<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Decay-model runs: cost g(x, y) = c / min(x, y)^δ under threshold k^γ.
    Gmode {
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        gamma: f64,
        /// Scale c of the decay function.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print an analytic reference value.
    Oracle {
        #[command(subcommand)]
        which: OracleCmd,
        /// Decimal places.
        #[arg(long, default_value_t = 5, global = true)]
        precision: usize,
    },
    /// Run the acceptance criteria.
    Validate {
        /// Comma-separated criterion ids or groups.
        #[arg(long)]
        only: Option<String>,
        /// Print results as JSON lines.
        #[arg(long)]
        json: bool,
        #[arg(long, env = "DYNACLEAR_JOBS", default_value_t = 0)]
        jobs: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Refresh {
    PerEvent,
    Fixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Denom {
    Auto,
    Analytic,
    Empirical,
    Raw,
}

/// Experiment settings; each flag given overrides the config file.
#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    schedule: Option<String>,
    /// Rate model: const:<λ> | uniform:<lo>:<hi> | product:<flo>:<fhi>:<lo>:<hi>.
    #[arg(long)]
    rate: Option<String>,
    #[arg(long, value_enum)]
    refresh: Option<Refresh>,
    /// Zero costs; only the waiting functional is tracked.
    #[arg(long)]
    waiting_only: bool,
    #[arg(long, conflicts_with = "horizon")]
    matches: Option<u64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    reps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    a_grid: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    tau_grid: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    denominator: Option<Denom>,
    /// Empirical patient-table replications at the smallest A.
    #[arg(long)]
    patient_reps: Option<u64>,
    /// Skip trace.csv.
    #[arg(long)]
    no_trace: bool,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "DYNACLEAR_JOBS", default_value_t = 0)]
    jobs: usize,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::from_json_path(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.schedule {
            c.schedule = v.clone();
        }
        if let Some(v) = &self.rate {
            c.rate = v.clone();
        }
        if let Some(v) = self.refresh {
            c.refresh = match v {
                Refresh::PerEvent => CostRefresh::PerEvent,
                Refresh::Fixed => CostRefresh::Fixed,
            };
        }
        if self.waiting_only {
            c.waiting_only = true;
        }
        match (self.matches, self.horizon) {
            (Some(a), _) => (c.matches, c.horizon) = (Some(a), None),
            (_, Some(h)) => (c.matches, c.horizon) = (None, Some(h)),
            _ => {}
        }
        if let Some(v) = self.reps {
            c.reps = v;
        }
        if let Some(v) = self.seed {
            c.seed = Some(v);
        }
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        if let Some(v) = &self.a_grid {
            c.a_grid = v.clone();
        }
        if let Some(v) = &self.tau_grid {
            c.tau_grid = v.clone();
        }
        if let Some(v) = self.denominator {
            c.denominator = match v {
                Denom::Auto => DenominatorChoice::Auto,
                Denom::Analytic => DenominatorChoice::Analytic,
                Denom::Empirical => DenominatorChoice::Empirical,
                Denom::Raw => DenominatorChoice::Raw,
            };
        }
        if let Some(v) = self.patient_reps {
            c.patient_reps = v;
        }
        if self.no_trace {
            c.write_trace = false;
        }
        Ok(c)
    }
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Expected optimal k-assignment cost with i.i.d. exp(1) costs.
    Buck {
        #[arg(long)]
        nc: u64,
        #[arg(long)]
        np: u64,
        #[arg(long)]
        k: u64,
    },
    /// Σ_{k ≤ n} 1/k².
    Basel {
        #[arg(long)]
        n: u64,
    },
    /// Patient cost envelope for rates in [under, over].
    PatientBounds {
        #[arg(long)]
        under: f64,
        #[arg(long)]
        over: f64,
    },
    /// Greedy waiting (2/3) τ^(3/2).
    GreedyWait {
        #[arg(long)]
        tau: f64,
    },
    /// E|S_k| for the fair ±1 walk.
    AbsWalk {
        #[arg(long)]
        k: u64,
    },
    /// Riemann ζ(s) for s > 1.
    Zeta {
        #[arg(long)]
        s: f64,
    },
    /// Matching-ratio envelope of a schedule at A matches.
    AlphaBounds {
        #[arg(long)]
        schedule: String,
        #[arg(long)]
        a: u64,
        #[arg(long, default_value_t = 1.0)]
        under: f64,
        #[arg(long, default_value_t = 1.0)]
        over: f64,
        #[arg(long, default_value_t = 1.0)]
        mean: f64,
    },
    /// Growth order of the waiting ratio.
    BetaOrder {
        #[arg(long)]
        schedule: String,
    },
    /// Decay-model critical γ and free-lunch window.
    FreeLunch {
        #[arg(long)]
        delta: f64,
    },
    /// Expected flips until two of each side.
    TwoEach,
    /// Σ_{k ≤ n} 1/(2^k k).
    Log2Series {
        #[arg(long, default_value_t = 60)]
        n: u64,
    },
}

fn print_bounds(b: oracles::BoundPair, p: usize) {
    println!("{}: [{:.p$}, {:.p$}]", b.regime, b.lower, b.upper);
}

fn oracle(which: OracleCmd, p: usize) -> Result<()> {
    match which {
        OracleCmd::Buck { nc, np, k } => println!("{:.p$}", oracles::expected_min_k_assignment(nc, np, k)?),
        OracleCmd::Basel { n } => println!("{:.p$}", oracles::basel_partial(n)),
        OracleCmd::PatientBounds { under, over } => print_bounds(oracles::patient_cost_bounds(over, under)?, p),
        OracleCmd::GreedyWait { tau } => println!("{:.p$}", oracles::greedy_expected_wait(tau)),
        OracleCmd::AbsWalk { k } => println!("{:.p$}", oracles::expected_abs_walk(k)),
        OracleCmd::Zeta { s } => println!("{:.p$}", oracles::zeta(s)?),
        OracleCmd::AlphaBounds {
            schedule,
            a,
            under,
            over,
            mean,
        } => {
            let spec = ScheduleSpec::parse(&schedule)?;
            print_bounds(oracles::alpha_bounds(&spec, a, under, over, mean)?, p);
        }
        OracleCmd::BetaOrder { schedule } => println!("{}", oracles::beta_order(&ScheduleSpec::parse(&schedule)?)?),
        OracleCmd::FreeLunch { delta } => {
            let f = oracles::free_lunch_window(delta)?;
            match f.window {
                Some((lo, hi)) => println!("critical γ = {:.p$}; window ({lo:.p$}, {hi:.p$}]", f.critical_gamma),
                None => println!("critical γ = {:.p$}; window empty", f.critical_gamma),
            }
        }
        OracleCmd::TwoEach => println!(
            "{:.p$} (quoted constant {})",
            oracles::expected_arrivals_two_each(),
            oracles::TWO_EACH_QUOTED
        ),
        OracleCmd::Log2Series { n } => println!("{:.p$}", oracles::log2_series(n)),
    }
    Ok(())
}

fn validate(only: Option<&str>, json: bool, jobs: usize) -> Result<bool> {
    let ids = select(only).map_err(anyhow::Error::msg)?;
    let results = run_selected(&ids, &Options { jobs }, |r| {
        if json {
            println!("{}", serde_json::to_string(r).expect("result serialises"));
        } else {
            println!("{}", r.line());
            if !r.passed {
                println!("{}", r.detail());
            }
        }
    });
    let failed = results.iter().filter(|r| !r.passed).count();
    if !json {
        println!("{} of {} criteria passed", results.len() - failed, results.len());
    }
    Ok(failed == 0)
}

fn report_run(out: &std::path::Path, hash: &str) {
    println!("wrote {} (config {})", out.display(), &hash[..12]);
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { run } => {
            let cfg = run.resolve()?;
            let report = run_experiment(&cfg, run.jobs)?;
            report_run(&cfg.out, &report.config_hash);
        }
        Command::Sweep { schedules, run } => {
            let cfg = run.resolve()?;
            let report = sweep(&cfg, &schedules, run.jobs)?;
            report_run(&cfg.out, &report.config_hash);
        }
        Command::Gmode {
            delta,
            gamma,
            scale,
            run,
        } => {
            let mut cfg = run.resolve()?;
            if run.schedule.is_some() {
                bail!("gmode sets the schedule from --gamma");
            }
            cfg.schedule = format!("power:{gamma}");
            cfg.decay = Some(DecayModel::new(delta, scale).context("decay model")?);
            let report = run_experiment(&cfg, run.jobs)?;
            report_run(&cfg.out, &report.config_hash);
        }
        Command::Oracle { which, precision } => oracle(which, precision)?,
        Command::Validate { only, json, jobs } => return validate(only.as_deref(), json, jobs),
    }
    Ok(true)
}
