//! Experiment runner: a serialisable config, replication fan-out, and the
//! report files (trace, ratio tables, fits, summary).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{
    empirical_patient_table, fit_growth, geometric_grid, matching_ratio_from_samples, waiting_ratio_from_samples,
    AnalysisError, Denominator, GrowthFit, RatioEstimate, Transform,
};
use crate::cost_model::RateModel;
use crate::engine::{
    run_replication_range, CheckpointPolicy, CostMode, CostRefresh, DecayModel, EngineError, FinalState, MatchRecord,
    RunConfig, StopRule,
};
use crate::schedules::ScheduleSpec;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config field `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {msg}")]
    Json { path: PathBuf, msg: String },
}

fn field_err(field: &str, msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config {
        field: field.into(),
        msg: msg.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// How the matching ratio is normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorChoice {
    /// Analytic for unit micro rates, raw cost for decay and waiting-only runs.
    /// Heterogeneous rates have no closed form and must ask for `empirical`.
    #[default]
    Auto,
    Analytic,
    Empirical,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schedule: String,
    /// Rate-model grammar, e.g. `const:1`, `uniform:0.5:2`, `product:0.5:2:1:2`.
    pub rate: String,
    /// When set, costs follow the decay model instead of the rate model.
    pub decay: Option<DecayModel>,
    pub waiting_only: bool,
    pub refresh: CostRefresh,
    pub matches: Option<u64>,
    pub horizon: Option<f64>,
    pub reps: u64,
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// Empty means a default five-point geometric grid.
    pub a_grid: Vec<u64>,
    pub tau_grid: Vec<f64>,
    pub denominator: DenominatorChoice,
    /// Replications of the empirical patient table at the smallest grid
    /// point; larger points use proportionally fewer.
    pub patient_reps: u64,
    pub write_trace: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schedule: "greedy".into(),
            rate: "const:1".into(),
            decay: None,
            waiting_only: false,
            refresh: CostRefresh::PerEvent,
            matches: None,
            horizon: None,
            reps: 1,
            seed: None,
            out: PathBuf::from("out"),
            a_grid: Vec::new(),
            tau_grid: Vec::new(),
            denominator: DenominatorChoice::Auto,
            patient_reps: 200,
            write_trace: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_path(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Json {
            path: path.to_path_buf(),
            msg: format!("line {} column {}: {e}", e.line(), e.column()),
        })
    }

    pub fn schedule_spec(&self) -> Result<ScheduleSpec, ExperimentError> {
        ScheduleSpec::parse(&self.schedule).map_err(|e| field_err("schedule", e.to_string()))
    }

    pub fn cost_mode(&self) -> Result<CostMode, ExperimentError> {
        if self.waiting_only {
            if self.decay.is_some() {
                return Err(field_err("waiting_only", "cannot be combined with a decay model"));
            }
            return Ok(CostMode::WaitingOnly);
        }
        if let Some(d) = self.decay {
            d.validate().map_err(|e| field_err("decay", e.to_string()))?;
            return Ok(CostMode::Decay(d));
        }
        RateModel::parse(&self.rate)
            .map(CostMode::Micro)
            .map_err(|e| field_err("rate", e.to_string()))
    }

    pub fn stop_rule(&self) -> Result<StopRule, ExperimentError> {
        match (self.matches, self.horizon) {
            (Some(a), None) => Ok(StopRule::Matches(a)),
            (None, Some(h)) => Ok(StopRule::Horizon(h)),
            (Some(_), Some(_)) => Err(field_err("matches", "give either matches or horizon, not both")),
            (None, None) => Err(field_err(
                "matches",
                "a stop condition (matches or horizon) is required",
            )),
        }
    }

    pub fn seed(&self) -> Result<u64, ExperimentError> {
        self.seed.ok_or_else(|| field_err("seed", "a seed is required"))
    }

    /// A grid, defaulting to five geometric points over the last two decades
    /// the run is sure to reach.
    pub fn resolved_a_grid(&self) -> Result<Vec<u64>, ExperimentError> {
        if !self.a_grid.is_empty() {
            return Ok(self.a_grid.clone());
        }
        let top = match self.stop_rule()? {
            StopRule::Matches(a) => a,
            // roughly τ/2 matches by the horizon
            StopRule::Horizon(h) => (h / 4.0).floor() as u64,
        };
        Ok(default_grid(top as f64)
            .into_iter()
            .map(|x| x.round() as u64)
            .filter(|&a| a >= 1)
            .fold(Vec::new(), |mut v, a| {
                if v.last() != Some(&a) {
                    v.push(a);
                }
                v
            }))
    }

    pub fn resolved_tau_grid(&self) -> Result<Vec<f64>, ExperimentError> {
        if !self.tau_grid.is_empty() {
            return Ok(self.tau_grid.clone());
        }
        let top = match self.stop_rule()? {
            // A matches take at least 2A arrivals, so τ = A is always covered.
            StopRule::Matches(a) => a as f64,
            StopRule::Horizon(h) => h,
        };
        Ok(default_grid(top))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.schedule_spec()?;
        self.cost_mode()?;
        self.stop_rule()?;
        self.seed()?;
        if self.reps == 0 {
            return Err(field_err("reps", "replication count must be at least 1"));
        }
        let a = self.resolved_a_grid()?;
        if a.is_empty() || a.windows(2).any(|w| w[1] < w[0]) || a[0] == 0 {
            return Err(field_err("a_grid", "must be non-empty, positive and sorted"));
        }
        if let StopRule::Matches(target) = self.stop_rule()? {
            if a.last().is_some_and(|&x| x > target) {
                return Err(field_err("a_grid", format!("exceeds the match target {target}")));
            }
        }
        let t = self.resolved_tau_grid()?;
        if t.is_empty() || t.windows(2).any(|w| w[1] < w[0]) || t.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(field_err(
                "tau_grid",
                "must be non-empty, finite, non-negative and sorted",
            ));
        }
        if let StopRule::Horizon(h) = self.stop_rule()? {
            if t.last().is_some_and(|&x| x > h) {
                return Err(field_err("tau_grid", format!("exceeds the horizon {h}")));
            }
        }
        self.denominator()?;
        self.run_config()?.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON of the config, output directory excluded.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out = PathBuf::new();
        let json = serde_json::to_string(&canon).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_config(&self) -> Result<RunConfig, ExperimentError> {
        Ok(RunConfig::new(
            self.schedule_spec()?,
            self.cost_mode()?,
            self.stop_rule()?,
            self.seed()?,
        )
        .with_refresh(self.refresh)
        .with_checkpoints(CheckpointPolicy::Grid(self.resolved_tau_grid()?)))
    }

    fn denominator(&self) -> Result<DenominatorChoice, ExperimentError> {
        let mode = self.cost_mode()?;
        let micro = match mode {
            CostMode::Micro(m) => Some(m),
            _ => None,
        };
        match (self.denominator, micro) {
            (DenominatorChoice::Auto, Some(m)) if m.is_unit() => Ok(DenominatorChoice::Analytic),
            (DenominatorChoice::Auto, Some(_)) => Err(field_err(
                "denominator",
                "heterogeneous rates need the empirical patient denominator",
            )),
            (DenominatorChoice::Auto, None) => Ok(DenominatorChoice::Raw),
            (DenominatorChoice::Analytic, Some(m)) if !m.is_unit() => {
                Err(field_err("denominator", "the analytic denominator assumes unit rates"))
            }
            (DenominatorChoice::Analytic | DenominatorChoice::Empirical, None) => Err(field_err(
                "denominator",
                "patient baselines are defined for micro costs only",
            )),
            (d, _) => Ok(d),
        }
    }
}

fn default_grid(top: f64) -> Vec<f64> {
    let top = top.max(1.0);
    geometric_grid((top / 100.0).max(1.0), top, 5)
}

/// Fits of the mean ratio curves; `None` where a fit is not possible
/// (fewer than four points, or non-positive values under a log transform).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fits {
    pub config_hash: String,
    pub schedule: String,
    pub alpha_loglog: Option<GrowthFit>,
    pub alpha_semilogx: Option<GrowthFit>,
    pub beta_loglog: Option<GrowthFit>,
    pub beta_semilogx: Option<GrowthFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepSummary {
    pub rep: u64,
    pub seed: u64,
    pub tau: f64,
    pub matches: u64,
    pub wait: f64,
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub schedule: String,
    pub cost_mode: String,
    pub runs: Vec<RepSummary>,
    pub mean_total_cost: f64,
    pub mean_wait: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub config_hash: String,
    pub alpha: Vec<RatioEstimate>,
    pub beta: Vec<RatioEstimate>,
    pub fits: Fits,
    pub summary: Summary,
}

struct RepDigest {
    records: Vec<MatchRecord>,
    summary: FinalState,
    seed: u64,
    cost: Vec<f64>,
    wait: Vec<f64>,
    short_a: bool,
    short_tau: bool,
}

fn fit_points(points: &[RatioEstimate], transform: Transform) -> Option<GrowthFit> {
    let pts: Vec<(f64, f64)> = points.iter().map(|r| (r.x, r.ratio)).collect();
    fit_growth(&pts, transform).ok()
}

fn hash_line(hash: &str) -> String {
    format!("# config_hash={hash}\n")
}

fn write_ratio_csv(path: &Path, hash: &str, rows: &[RatioEstimate]) -> Result<(), ExperimentError> {
    let mut file = File::create(path).map_err(io_err(path))?;
    file.write_all(hash_line(hash).as_bytes()).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| ExperimentError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    w.write_record(["x", "ratio", "stderr", "denominator"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.x.to_string(),
            r.ratio.to_string(),
            r.stderr.to_string(),
            r.denominator.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let text = serde_json::to_string_pretty(value).expect("report serialises");
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Runs every replication of `config` on `jobs` workers and writes
/// `trace.csv`, `ratios_alpha.csv`, `ratios_beta.csv`, `fits.json` and
/// `summary.json` into `config.out`.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<Report, ExperimentError> {
    config.validate()?;
    let hash = config.hash();
    let run_cfg = config.run_config()?;
    let a_grid = config.resolved_a_grid()?;
    let tau_grid = config.resolved_tau_grid()?;
    let out = &config.out;
    fs::create_dir_all(out).map_err(io_err(out))?;

    let denominator = match config.denominator()? {
        DenominatorChoice::Analytic => Denominator::AnalyticEqualSided,
        DenominatorChoice::Raw | DenominatorChoice::Auto => Denominator::Raw,
        DenominatorChoice::Empirical => {
            let CostMode::Micro(model) = run_cfg.cost_mode else {
                unreachable!("checked by validate")
            };
            let table = empirical_patient_table(&a_grid, &model, config.patient_reps, config.seed()?)?;
            Denominator::EmpiricalPatient(table.into_iter().map(|(a, e)| (a, e.mean)).collect())
        }
    };

    let trace_path = out.join("trace.csv");
    let mut trace = if config.write_trace {
        let file = File::create(&trace_path).map_err(io_err(&trace_path))?;
        let mut w = BufWriter::new(file);
        w.write_all(hash_line(&hash).as_bytes()).map_err(io_err(&trace_path))?;
        w.write_all(b"rep,k,time,cost,m_c,m_p,cum_cost,cum_wait\n")
            .map_err(io_err(&trace_path))?;
        Some(w)
    } else {
        None
    };

    let a_max = *a_grid.last().unwrap_or(&0);
    let tau_max = *tau_grid.last().unwrap_or(&0.0);
    let keep = config.write_trace;
    let chunk = (jobs.max(1) as u64) * 8;
    let mut costs = Vec::with_capacity(config.reps as usize);
    let mut waits = Vec::with_capacity(config.reps as usize);
    let mut runs = Vec::with_capacity(config.reps as usize);
    let (mut short_a, mut short_tau) = (Vec::new(), Vec::new());
    let mut start = 0;
    while start < config.reps {
        let end = (start + chunk).min(config.reps);
        let digests = run_replication_range(&run_cfg, start..end, jobs, |_, t| RepDigest {
            cost: a_grid.iter().map(|&a| t.cum_cost_at(a).unwrap_or(f64::NAN)).collect(),
            wait: tau_grid.iter().map(|&x| t.wait_at(x).unwrap_or(f64::NAN)).collect(),
            short_a: t.cum_cost_at(a_max).is_none(),
            short_tau: t.wait_at(tau_max).is_none(),
            summary: t.summary,
            seed: t.meta.seed,
            records: if keep { t.records } else { Vec::new() },
        })?;
        for (i, d) in digests.into_iter().enumerate() {
            let rep = start + i as u64;
            if let Some(w) = trace.as_mut() {
                for r in &d.records {
                    writeln!(
                        w,
                        "{rep},{},{},{},{},{},{},{}",
                        r.k, r.time, r.cost, r.m_c, r.m_p, r.cum_cost, r.cum_wait
                    )
                    .map_err(io_err(&trace_path))?;
                }
            }
            if d.short_a {
                short_a.push(rep as usize);
            }
            if d.short_tau {
                short_tau.push(rep as usize);
            }
            runs.push(RepSummary {
                rep,
                seed: d.seed,
                tau: d.summary.clock,
                matches: d.summary.matches,
                wait: d.summary.wait,
                total_cost: d.summary.total_cost,
            });
            costs.push(d.cost);
            waits.push(d.wait);
        }
        start = end;
    }
    if let Some(mut w) = trace {
        w.flush().map_err(io_err(&trace_path))?;
    }
    if !short_a.is_empty() {
        return Err(AnalysisError::Coverage {
            what: format!("A = {a_max}"),
            reps: short_a,
        }
        .into());
    }
    if !short_tau.is_empty() {
        return Err(AnalysisError::Coverage {
            what: format!("τ = {tau_max}"),
            reps: short_tau,
        }
        .into());
    }

    let alpha = matching_ratio_from_samples(&costs, &a_grid, &denominator)?;
    let beta: Vec<RatioEstimate> = waiting_ratio_from_samples(&waits, &tau_grid)?
        .into_iter()
        .flatten()
        .collect();
    let schedule = config.schedule_spec()?.label();
    let fits = Fits {
        config_hash: hash.clone(),
        schedule: schedule.clone(),
        alpha_loglog: fit_points(&alpha, Transform::LogLog),
        alpha_semilogx: fit_points(&alpha, Transform::SemiLogX),
        beta_loglog: fit_points(&beta, Transform::LogLog),
        beta_semilogx: fit_points(&beta, Transform::SemiLogX),
    };
    let n = runs.len() as f64;
    let summary = Summary {
        config_hash: hash.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        schedule,
        cost_mode: run_cfg.cost_mode.label(),
        mean_total_cost: runs.iter().map(|r| r.total_cost).sum::<f64>() / n,
        mean_wait: runs.iter().map(|r| r.wait).sum::<f64>() / n,
        runs,
    };

    write_ratio_csv(&out.join("ratios_alpha.csv"), &hash, &alpha)?;
    write_ratio_csv(&out.join("ratios_beta.csv"), &hash, &beta)?;
    write_json(&out.join("fits.json"), &fits)?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(Report {
        config_hash: hash,
        alpha,
        beta,
        fits,
        summary,
    })
}

/// Directory name for a schedule inside a sweep folder.
pub fn schedule_dir_name(schedule: &str) -> String {
    schedule
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config_hash: String,
    pub fits: Vec<Fits>,
}

/// Runs `base` once per schedule, each into its own sub-directory of
/// `base.out`, and writes a combined `fits.json` at the top.
pub fn sweep(base: &ExperimentConfig, schedules: &[String], jobs: usize) -> Result<SweepReport, ExperimentError> {
    if schedules.is_empty() {
        return Err(field_err("schedules", "at least one schedule is required"));
    }
    let configs: Vec<ExperimentConfig> = schedules
        .iter()
        .map(|s| ExperimentConfig {
            schedule: s.clone(),
            out: base.out.join(schedule_dir_name(s)),
            ..base.clone()
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let mut sweep_hasher = Sha256::new();
    let mut fits = Vec::with_capacity(configs.len());
    for c in &configs {
        let report = run_experiment(c, jobs)?;
        sweep_hasher.update(report.config_hash.as_bytes());
        fits.push(report.fits);
    }
    let report = SweepReport {
        config_hash: sweep_hasher.finalize().iter().map(|b| format!("{b:02x}")).collect(),
        fits,
    };
    write_json(&base.out.join("fits.json"), &report)?;
    Ok(report)
}
