//! The acceptance suite: each criterion runs with a pinned seed and reports
//! observed against expected values.

use std::f64::consts::{LN_2, PI};
use std::fmt::Display;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{
    fit_growth, geometric_grid, matching_ratio_from_samples, slope_across_replications, waiting_ratio_from_samples,
    Denominator, RatioEstimate, Transform,
};
use crate::arrival::{stopping_time_mean, McEstimate, Side, TapeSource};
use crate::assignment::{brute_force_k_assignment, min_k_assignment, CostMatrix};
use crate::cost_model::{draw_pair_cost, RateModel};
use crate::engine::{
    cost_seed, run, run_replications_map, CheckpointPolicy, CostMode, CostRefresh, DecayModel, RunConfig, RunTrace,
    StopRule,
};
use crate::oracles::{
    expected_abs_walk, expected_arrivals_two_each, expected_min_k_assignment, log2_series, two_each_tail, zeta,
    TWO_EACH_QUOTED,
};
use crate::schedules::ScheduleSpec;
use crate::seeding::derive_seed;

const BASE_SEED: u64 = 0x5eed_0d1c;

#[derive(Debug, Clone, Copy, Default)]
pub struct Options {
    /// Worker threads for replication ensembles (`0` = all cores).
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub label: String,
    pub passed: bool,
    pub observed: String,
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub group: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub elapsed_secs: f64,
    pub budget_secs: f64,
}

impl CriterionResult {
    /// One line: `PASS [ 3] name (1.2 s / 120 s)`.
    pub fn line(&self) -> String {
        format!(
            "{} [{:>2}] {} ({:.2} s / {} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed_secs,
            self.budget_secs
        )
    }

    /// Indented observed-vs-expected lines, one per check.
    pub fn detail(&self) -> String {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "    [{}] {}: observed {} | expected {}",
                    if c.passed { "ok" } else { "FAIL" },
                    c.label,
                    c.observed,
                    c.expected
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Default)]
struct Checks(Vec<Check>);

impl Checks {
    fn add(&mut self, label: impl Into<String>, passed: bool, observed: impl Display, expected: impl Display) {
        self.0.push(Check {
            label: label.into(),
            passed,
            observed: observed.to_string(),
            expected: expected.to_string(),
        });
    }
}

type Outcome = Result<Checks, String>;

pub struct Criterion {
    pub id: u32,
    pub name: &'static str,
    pub group: &'static str,
    pub budget_secs: f64,
    body: fn(&Options, u64) -> Outcome,
}

pub fn criteria() -> Vec<Criterion> {
    let c = |id, name, group, budget_secs, body| Criterion {
        id,
        name,
        group,
        budget_secs,
        body,
    };
    vec![
        c(
            1,
            "oracle identity: optimal k-assignment sum equals the Basel partial sum",
            "oracles",
            1.0,
            c1 as fn(&Options, u64) -> Outcome,
        ),
        c(2, "assignment solver equals brute force", "assignment", 30.0, c2),
        c(3, "static Monte Carlo 5x5 optimal assignment", "assignment", 120.0, c3),
        c(4, "exact E|S_k| vs path enumeration and bracket", "oracles", 1.0, c4),
        c(5, "greedy waiting law W/T^1.5 = 2/3", "waiting", 120.0, c5),
        c(6, "greedy cost growth", "cost", 600.0, c6),
        c(7, "critical regime gamma = 1/2", "cost", 600.0, c7),
        c(8, "supercritical regime gamma = 0.75", "cost", 600.0, c8),
        c(9, "waiting regimes", "waiting", 900.0, c9),
        c(10, "fcfs cost", "engine", 60.0, c10),
        c(11, "balanced schedule", "balanced", 1200.0, c11),
        c(12, "decay model free-lunch window", "decay", 600.0, c12),
        c(13, "engine exactness on tapes", "engine", 1.0, c13),
        c(14, "series and stopping-time constants", "oracles", 60.0, c14),
    ]
}

/// Criterion ids selected by a comma-separated filter of ids and group names.
pub fn select(filter: Option<&str>) -> Result<Vec<u32>, String> {
    let all = criteria();
    let Some(filter) = filter else {
        return Ok(all.iter().map(|c| c.id).collect());
    };
    let mut ids = Vec::new();
    for token in filter.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let hits: Vec<u32> = match token.parse::<u32>() {
            Ok(id) => all.iter().filter(|c| c.id == id).map(|c| c.id).collect(),
            Err(_) => all.iter().filter(|c| c.group == token).map(|c| c.id).collect(),
        };
        if hits.is_empty() {
            let groups: Vec<&str> = all.iter().map(|c| c.group).collect();
            return Err(format!(
                "`{token}` is neither a criterion id nor a group ({})",
                groups.join(", ")
            ));
        }
        ids.extend(hits);
    }
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

pub fn run_criterion(id: u32, opts: &Options) -> Option<CriterionResult> {
    let c = criteria().into_iter().find(|c| c.id == id)?;
    let start = Instant::now();
    let outcome = (c.body)(opts, derive_seed(BASE_SEED, id as u64));
    let elapsed = start.elapsed().as_secs_f64();
    let mut checks = match outcome {
        Ok(checks) => checks,
        Err(e) => {
            let mut checks = Checks::default();
            checks.add("run", false, e, "no error");
            checks
        }
    };
    checks.add(
        "runtime",
        elapsed <= c.budget_secs,
        format!("{elapsed:.2} s"),
        format!("<= {} s", c.budget_secs),
    );
    Some(CriterionResult {
        id,
        name: c.name.to_string(),
        group: c.group.to_string(),
        passed: checks.0.iter().all(|c| c.passed),
        checks: checks.0,
        elapsed_secs: elapsed,
        budget_secs: c.budget_secs,
    })
}

/// Runs the selected criteria in id order, calling `report` after each.
pub fn run_selected(ids: &[u32], opts: &Options, mut report: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    ids.iter()
        .filter_map(|&id| {
            let r = run_criterion(id, opts)?;
            report(&r);
            Some(r)
        })
        .collect()
}

fn unit() -> CostMode {
    CostMode::Micro(RateModel::constant(1.0).expect("unit rate is valid"))
}

fn schedule(text: &str) -> ScheduleSpec {
    ScheduleSpec::parse(text).expect("built-in schedule")
}

const A_GRID: [u64; 5] = [100, 316, 1000, 3162, 10_000];

fn tau_grid() -> Vec<f64> {
    geometric_grid(100.0, 10_000.0, 5)
}

/// Per-replication samples: cumulative cost on `a_grid`, `W` on `tau_grid`.
struct Ensemble {
    cost: Vec<Vec<f64>>,
    wait: Vec<Vec<f64>>,
}

fn ensemble(
    config: RunConfig,
    reps: u64,
    opts: &Options,
    a_grid: &[u64],
    tau_grid: &[f64],
) -> Result<Ensemble, String> {
    let config = config.with_checkpoints(CheckpointPolicy::Grid(tau_grid.to_vec()));
    let rows = run_replications_map(&config, reps, opts.jobs, |rep, t: RunTrace| {
        let cost = a_grid.iter().map(|&a| t.cum_cost_at(a)).collect::<Option<Vec<f64>>>();
        let wait = tau_grid.iter().map(|&x| t.wait_at(x)).collect::<Option<Vec<f64>>>();
        (rep, cost, wait)
    })
    .map_err(|e| e.to_string())?;
    let mut out = Ensemble {
        cost: Vec::with_capacity(rows.len()),
        wait: Vec::with_capacity(rows.len()),
    };
    for (rep, cost, wait) in rows {
        out.cost
            .push(cost.ok_or_else(|| format!("replication {rep} stopped before the A grid"))?);
        out.wait
            .push(wait.ok_or_else(|| format!("replication {rep} stopped before the τ grid"))?);
    }
    Ok(out)
}

fn points(ratios: &[RatioEstimate]) -> Vec<(f64, f64)> {
    ratios.iter().map(|r| (r.x, r.ratio)).collect()
}

fn column(samples: &[Vec<f64>], i: usize) -> McEstimate {
    McEstimate::from_samples(samples.iter().map(|s| s[i]))
}

fn betas(wait: &[Vec<f64>], grid: &[f64]) -> Result<Vec<RatioEstimate>, String> {
    waiting_ratio_from_samples(wait, grid)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|r| r.ok_or_else(|| "β undefined at τ = 0".to_string()))
        .collect()
}

fn fmt_list(xs: impl IntoIterator<Item = f64>) -> String {
    let v: Vec<String> = xs.into_iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", v.join(", "))
}

/// `ζ(s)` by a direct partial sum with an integral tail, independent of the
/// oracle's Euler–Maclaurin route.
fn zeta_direct(s: f64) -> f64 {
    let n = 2_000_000u64;
    let head: f64 = (1..=n).rev().map(|k| (k as f64).powf(-s)).sum();
    let nf = n as f64;
    head + nf.powf(1.0 - s) / (s - 1.0) - 0.5 * nf.powf(-s)
}

fn c1(_: &Options, _: u64) -> Outcome {
    let mut c = Checks::default();
    let basel = PI * PI / 6.0;
    let (mut worst_n, mut worst) = (0, 0.0f64);
    let (mut prev, mut increasing, mut below) = (0.0, true, true);
    for n in 1..=200u64 {
        let direct: f64 = (1..=n).rev().map(|k| 1.0 / (k * k) as f64).sum();
        let v = expected_min_k_assignment(n, n, n).map_err(|e| e.to_string())?;
        let d = (v - direct).abs();
        if d > worst {
            (worst_n, worst) = (n, d);
        }
        increasing &= v > prev;
        below &= v < basel;
        prev = v;
    }
    c.add(
        "identity for N = 1..200",
        worst <= 1e-12,
        format!("max |diff| {worst:.3e} (N = {worst_n})"),
        "<= 1e-12",
    );
    let v5 = expected_min_k_assignment(5, 5, 5).map_err(|e| e.to_string())?;
    c.add(
        "value at N = 5",
        (v5 - 1.46361).abs() < 5e-6,
        format!("{v5:.6}"),
        "1.46361",
    );
    c.add(
        "increasing and below π²/6",
        increasing && below,
        format!("N = 200 gives {prev:.9}"),
        format!("increasing, < {basel:.9}"),
    );
    Ok(c)
}

fn c2(_: &Options, seed: u64) -> Outcome {
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut solved, mut mismatches, mut first) = (0u64, 0u64, None);
    for m in 0..1000 {
        let rows = rng.random_range(1..=8usize);
        let cols = rng.random_range(1..=8usize);
        let integer = m % 2 == 0;
        let matrix = CostMatrix::from_fn(rows, cols, |_, _| {
            if integer {
                rng.random_range(0..10u32) as f64
            } else {
                -(1.0 - rng.random::<f64>()).ln()
            }
        })
        .map_err(|e| e.to_string())?;
        for k in 1..=rows.min(cols) {
            let fast = min_k_assignment(&matrix, k).map_err(|e| e.to_string())?;
            let slow = brute_force_k_assignment(&matrix, k).map_err(|e| e.to_string())?;
            solved += 1;
            if fast.total_cost != slow.total_cost {
                mismatches += 1;
                first.get_or_insert((m, k, fast.total_cost, slow.total_cost));
            }
        }
    }
    let observed = match first {
        None => format!("{solved} problems, 0 mismatches"),
        Some((m, k, a, b)) => format!("{mismatches} mismatches; first: matrix {m}, k = {k}: {a} vs {b}"),
    };
    c.add("exact equality of totals", mismatches == 0, observed, "0 mismatches");
    Ok(c)
}

fn c3(_: &Options, seed: u64) -> Outcome {
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut totals = Vec::with_capacity(100_000);
    for _ in 0..100_000 {
        let m = CostMatrix::from_fn(5, 5, |_, _| -(1.0 - rng.random::<f64>()).ln()).map_err(|e| e.to_string())?;
        totals.push(min_k_assignment(&m, 5).map_err(|e| e.to_string())?.total_cost);
    }
    let est = McEstimate::from_samples(totals);
    let target = 1.46361;
    c.add(
        "mean optimal cost within 3σ",
        (est.mean - target).abs() <= 3.0 * est.stderr,
        format!(
            "{:.5} ± {:.5} (diff {:.2}σ)",
            est.mean,
            est.stderr,
            (est.mean - target) / est.stderr
        ),
        target,
    );
    Ok(c)
}

fn c4(_: &Options, _: u64) -> Outcome {
    let mut c = Checks::default();
    let mut bad = Vec::new();
    for k in 0..=20u32 {
        let total: u64 = (0u64..1 << k)
            .map(|path| (2 * path.count_ones() as i64 - k as i64).unsigned_abs())
            .sum();
        let enumerated = total as f64 / (k as f64).exp2();
        let exact = expected_abs_walk(k as u64);
        if exact != enumerated {
            bad.push(format!("k = {k}: {exact} vs {enumerated}"));
        }
    }
    c.add(
        "exact value equals path enumeration, k <= 20",
        bad.is_empty(),
        if bad.is_empty() {
            "all equal".to_string()
        } else {
            bad.join("; ")
        },
        "bitwise equality",
    );
    let (mut lo, mut hi) = ((0u64, f64::INFINITY), (0u64, 0.0f64));
    for k in 1..=10_000u64 {
        let r = expected_abs_walk(k) / (k as f64).sqrt();
        if r < lo.1 {
            lo = (k, r);
        }
        if r > hi.1 {
            hi = (k, r);
        }
    }
    c.add(
        "bracket [0.67 √k, 1.23 √k] for k <= 10^4",
        lo.1 >= 0.67 && hi.1 <= 1.23,
        format!("ratio range [{:.4} (k = {}), {:.4} (k = {})]", lo.1, lo.0, hi.1, hi.0),
        "[0.67, 1.23]",
    );
    Ok(c)
}

fn c5(opts: &Options, seed: u64) -> Outcome {
    let mut c = Checks::default();
    let horizon = 10_000.0;
    let config = RunConfig::new(ScheduleSpec::greedy(), unit(), StopRule::Horizon(horizon), seed);
    let e = ensemble(config, 200, opts, &[], &[horizon])?;
    let est = McEstimate::from_samples(e.wait.iter().map(|w| w[0] / horizon.powf(1.5)));
    let target = 2.0 / 3.0;
    c.add(
        "mean W/T^1.5 within 10% of 2/3",
        (est.mean - target).abs() <= 0.1 * target,
        format!(
            "{:.4} ± {:.4} ({:+.1}% off; (2/3)√(2/π) = {:.4})",
            est.mean,
            est.stderr,
            100.0 * (est.mean / target - 1.0),
            target * (2.0 / PI).sqrt()
        ),
        format!("{target:.4} ± 10%"),
    );
    Ok(c)
}

fn cost_run(text: &str, opts: &Options, seed: u64) -> Result<(Ensemble, Vec<RatioEstimate>), String> {
    let config = RunConfig::new(schedule(text), unit(), StopRule::Matches(10_000), seed);
    let e = ensemble(config, 200, opts, &A_GRID, &[0.0])?;
    let alpha =
        matching_ratio_from_samples(&e.cost, &A_GRID, &Denominator::AnalyticEqualSided).map_err(|e| e.to_string())?;
    Ok((e, alpha))
}

fn c6(opts: &Options, seed: u64) -> Outcome {
    let mut c = Checks::default();
    let (_, alpha) = cost_run("greedy", opts, seed)?;
    let fit = fit_growth(&points(&alpha), Transform::LogLog).map_err(|e| e.to_string())?;
    c.add(
        "LogLog slope of α̂",
        fit.slope >= 0.4,
        format!("{:.4} ± {:.4}", fit.slope, fit.slope_stderr),
        ">= 0.4",
    );
    let bound = |a: f64| 6.0 / (5.0 * PI * PI) * a.sqrt();
    c.add(
        "α̂(A) >= (6/(5π²)) √A",
        alpha.iter().all(|r| r.ratio >= bound(r.x)),
        fmt_list(alpha.iter().map(|r| r.ratio)),
        format!(">= {}", fmt_list(alpha.iter().map(|r| bound(r.x)))),
    );
    Ok(c)
}

fn c7(opts: &Options, seed: u64) -> Outcome {
    let mut c = Checks::default();
    let (_, alpha) = cost_run("power:0.5", opts, seed)?;
    for r in &alpha {
        let ln_a = r.x.ln();
        let (v, s) = (r.ratio / ln_a, r.stderr / ln_a);
        let lower = 2.0 / (PI * PI) - 3.0 * s;
        let upper = (1.0 + ln_a) / (LN_2 * ln_a) + 3.0 * s;
        c.add(
            format!("α̂/log A at A = {}", r.x),
            v >= lower && v <= upper,
            format!("{v:.4}"),
            format!("[{lower:.4}, {upper:.4}]"),
        );
    }
    let fit = fit_growth(&points(&alpha), Transform::SemiLogX).map_err(|e| e.to_string())?;
    c.add(
        "SemiLogX fit R²",
        fit.r2 >= 0.95,
        format!("{:.4} (slope {:.4})", fit.r2, fit.slope),
        ">= 0.95",
    );
    Ok(c)
}

fn c8(opts: &Options, seed: u64) -> Outcome {
    let mut c = Checks::default();
    let (e, _) = cost_run("power:0.75", opts, seed)?;
    let last = column(&e.cost, A_GRID.len() - 1);
    let z = zeta(1.5).map_err(|e| e.to_string())?;
    let z_direct = zeta_direct(1.5);
    c.add(
        "ζ(1.5) by two routes",
        (z - z_direct).abs() < 1e-9,
        format!("{z:.10}"),
        format!("{z_direct:.10}"),
    );
    c.add(
        "cumulative cost at A = 10^4 <= ζ(1.5) + 3σ",
        last.mean <= z + 3.0 * last.stderr,
        format!("{:.4} ± {:.4}", last.mean, last.stderr),
        format!("<= {:.4}", z + 3.0 * last.stderr),
    );
    let xs: Vec<f64> = A_GRID.iter().map(|&a| a as f64).collect();
    let means: Vec<(f64, f64)> = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| (x, column(&e.cost, i).mean))
        .collect();
    let fit = fit_growth(&means, Transform::LogLog).map_err(|e| e.to_string())?;
    let per_rep = slope_across_replications(&xs, &e.cost, Transform::LogLog).map_err(|e| e.to_string())?;
    c.add(
        "LogLog slope of cost within 3σ of 0",
        fit.slope.abs() <= 3.0 * fit.slope_stderr,
        format!(
            "{:.4} ± {:.4} (per-replication slopes {:.4} ± {:.4})",
            fit.slope, fit.slope_stderr, per_rep.mean, per_rep.stderr
        ),
        format!("|slope| <= {:.4}", 3.0 * fit.slope_stderr),
    );
    Ok(c)
}

fn c9(opts: &Options, seed: u64) -> Outcome {
    let mut c = Checks::default();
    let grid = tau_grid();
    let horizon = StopRule::Horizon(10_000.0);
    let cases: [(&str, CostMode, Option<f64>); 4] = [
        ("greedy", unit(), None),
        ("fcfs", unit(), None),
        ("power:0.75", unit(), Some(0.25)),
        ("patient", CostMode::WaitingOnly, Some(0.5)),
    ];
    for (i, (text, mode, target)) in cases.into_iter().enumerate() {
        let config = RunConfig::new(schedule(text), mode, horizon, derive_seed(seed, i as u64));
        let e = ensemble(config, 200, opts, &[], &grid)?;
        let beta = betas(&e.wait, &grid)?;
        let fit = fit_growth(&points(&beta), Transform::LogLog).map_err(|e| e.to_string())?;
        let slope = format!("{:.4} ± {:.4}", fit.slope, fit.slope_stderr);
        match target {
            Some(t) => c.add(
                format!("{text}: LogLog slope of β̂"),
                (fit.slope - t).abs() <= 0.05,
                slope,
                format!("{t} ± 0.05"),
            ),
            None => {
                c.add(
                    format!("{text}: LogLog slope of β̂"),
                    fit.slope.abs() <= 0.05,
                    slope,
                    "0 ± 0.05",
                );
                c.add(
                    format!("{text}: β̂ within 1 ± 10%"),
                    beta.iter().all(|r| (r.ratio - 1.0).abs() <= 0.1),
                    fmt_list(beta.iter().map(|r| r.ratio)),
                    "each in [0.9, 1.1]",
                );
            }
        }
    }
    Ok(c)
}

fn c10(opts: &Options, seed: u64) -> Outcome {
    let mut c = Checks::default();
    let config = RunConfig::new(ScheduleSpec::fcfs(), unit(), StopRule::Matches(1000), seed);
    let e = ensemble(config, 100, opts, &[1000], &[0.0])?;
    let est = column(&e.cost, 0);
    c.add(
        "mean cumulative cost within 3σ of A",
        (est.mean - 1000.0).abs() <= 3.0 * est.stderr,
        format!("{:.2} ± {:.2}", est.mean, est.stderr),
        1000,
    );
    Ok(c)
}

fn c11(opts: &Options, seed: u64) -> Outcome {
    let mut c = Checks::default();
    let a_grid: Vec<u64> = geometric_grid(1e3, 1e5, 5)
        .into_iter()
        .map(|x| x.round() as u64)
        .collect();
    // β is read at τ = A, which every run reaches before its A-th match
    let tau: Vec<f64> = a_grid.iter().map(|&a| a as f64).collect();
    let config = RunConfig::new(schedule("balanced"), unit(), StopRule::Matches(100_000), seed);
    let e = ensemble(config, 50, opts, &a_grid, &tau)?;
    let alpha =
        matching_ratio_from_samples(&e.cost, &a_grid, &Denominator::AnalyticEqualSided).map_err(|e| e.to_string())?;
    let beta = betas(&e.wait, &tau)?;
    for (name, ratios) in [("α̂", &alpha), ("β̂", &beta)] {
        let fit = fit_growth(&points(ratios), Transform::SemiLogX).map_err(|e| e.to_string())?;
        c.add(
            format!("{name}: SemiLogX trend"),
            fit.slope > 0.0,
            format!("{:.4} ± {:.4}", fit.slope, fit.slope_stderr),
            "> 0",
        );
        let base = ratios[0].ratio;
        let ln0 = ratios[0].x.ln();
        let predicted: Vec<f64> = ratios.iter().map(|r| base * (r.x.ln() / ln0).powf(1.0 / 3.0)).collect();
        c.add(
            format!("{name} <= 2 × (log A)^(1/3) prediction"),
            ratios.iter().zip(&predicted).all(|(r, p)| r.ratio <= 2.0 * p),
            fmt_list(ratios.iter().map(|r| r.ratio)),
            format!("<= {}", fmt_list(predicted.iter().map(|p| 2.0 * p))),
        );
    }
    Ok(c)
}

fn c12(opts: &Options, seed: u64) -> Outcome {
    let mut c = Checks::default();
    let decay = |delta| {
        DecayModel::new(delta, 1.0)
            .map(CostMode::Decay)
            .map_err(|e| e.to_string())
    };

    let config = RunConfig::new(
        schedule(&format!("power:{}", 1.0 / 1.5)),
        decay(1.5)?,
        StopRule::Matches(10_000),
        seed,
    );
    let e = ensemble(config, 200, opts, &A_GRID, &[0.0])?;
    let means: Vec<(f64, f64)> = A_GRID
        .iter()
        .enumerate()
        .map(|(i, &a)| (a as f64, column(&e.cost, i).mean))
        .collect();
    let fit = fit_growth(&means, Transform::SemiLogX).map_err(|e| e.to_string())?;
    c.add(
        "δ = 1.5, γ = 2/3: cost vs log A fit R²",
        fit.r2 >= 0.9,
        format!("{:.4} (slope {:.4})", fit.r2, fit.slope),
        ">= 0.9",
    );

    let grid = tau_grid();
    let config = RunConfig::new(
        schedule("power:0.45"),
        decay(3.0)?,
        StopRule::Matches(10_000),
        derive_seed(seed, 1),
    );
    let e = ensemble(config, 200, opts, &[10_000], &grid)?;
    let cost = column(&e.cost, 0);
    let z = zeta(1.35).map_err(|e| e.to_string())?;
    let z_direct = zeta_direct(1.35);
    c.add(
        "ζ(1.35) by two routes",
        (z - z_direct).abs() < 1e-9,
        format!("{z:.10}"),
        format!("{z_direct:.10}"),
    );
    c.add(
        "δ = 3, γ = 0.45: cost at A = 10^4 <= ζ(1.35) + 3σ",
        cost.mean <= z + 3.0 * cost.stderr,
        format!("{:.4} ± {:.4}", cost.mean, cost.stderr),
        format!("<= {:.4}", z + 3.0 * cost.stderr),
    );
    let beta = betas(&e.wait, &grid)?;
    let fit = fit_growth(&points(&beta), Transform::LogLog).map_err(|e| e.to_string())?;
    c.add(
        "δ = 3, γ = 0.45: LogLog slope of β̂",
        fit.slope.abs() <= 0.05,
        format!("{:.4} ± {:.4}", fit.slope, fit.slope_stderr),
        "0 ± 0.05",
    );
    Ok(c)
}

fn tape(entries: &[(f64, Side)]) -> Result<TapeSource, String> {
    TapeSource::new(entries.to_vec()).map_err(|e| e.to_string())
}

fn c13(_: &Options, seed: u64) -> Outcome {
    use Side::{Client as C, Provider as P};
    let mut c = Checks::default();
    let go = |cfg: RunConfig| run(&cfg).map_err(|e| e.to_string());

    let t = go(
        RunConfig::new(ScheduleSpec::greedy(), unit(), StopRule::Matches(1), seed)
            .with_tape(tape(&[(1.0, C), (2.0, P)])?),
    )?;
    let ok = t.records.len() == 1 && t.records[0].time == 2.0 && t.summary.wait == 1.0;
    c.add(
        "[C@1, P@2] greedy: one match at τ = 2, W",
        ok,
        format!(
            "{} match(es), τ = {:?}, W = {}",
            t.records.len(),
            t.records.first().map(|r| r.time),
            t.summary.wait
        ),
        "1 match, τ = 2, W = 1",
    );

    let three = tape(&[(1.0, C), (2.0, C), (3.0, P)])?;
    let model = RateModel::constant(1.0).map_err(|e| e.to_string())?;
    let t = go(
        RunConfig::new(ScheduleSpec::greedy(), unit(), StopRule::Horizon(3.0), seed)
            .with_tape(three.clone())
            .with_refresh(CostRefresh::Fixed),
    )?;
    let cs = cost_seed(seed);
    let w0 = draw_pair_cost(0, 2, &model, cs).map_err(|e| e.to_string())?;
    let w1 = draw_pair_cost(1, 2, &model, cs).map_err(|e| e.to_string())?;
    let ok = t.records.len() == 1 && t.records[0].time == 3.0 && t.records[0].cost == w0.min(w1);
    c.add(
        "[C@1, C@2, P@3] greedy, fixed costs: cost = min of the two pair draws",
        ok,
        format!("{:?}", t.records.first().map(|r| r.cost)),
        w0.min(w1),
    );
    c.add(
        "[C@1, C@2, P@3] greedy: W at τ = 3",
        t.summary.wait == 3.0,
        t.summary.wait,
        3.0,
    );
    let t = go(RunConfig::new(ScheduleSpec::greedy(), unit(), StopRule::Horizon(3.0), seed).with_tape(three.clone()))?;
    c.add(
        "[C@1, C@2, P@3] greedy, per-event costs: W at τ = 3",
        t.summary.wait == 3.0,
        t.summary.wait,
        3.0,
    );

    let four = tape(&[(1.0, C), (2.0, C), (3.0, P), (4.0, P)])?;
    let t = go(
        RunConfig::new(ScheduleSpec::fcfs(), unit(), StopRule::Horizon(4.0), seed)
            .with_tape(four)
            .with_refresh(CostRefresh::Fixed),
    )?;
    let expected = draw_pair_cost(0, 2, &model, cs).map_err(|e| e.to_string())?
        + draw_pair_cost(1, 3, &model, cs).map_err(|e| e.to_string())?;
    let pairs: Vec<(u64, u64)> = t.records.iter().map(|r| (r.client_id, r.provider_id)).collect();
    c.add(
        "[C@1, C@2, P@3, P@4] fcfs: pairs, cost, W",
        pairs == [(0, 2), (1, 3)] && t.summary.total_cost == expected && t.summary.wait == 4.0,
        format!("{pairs:?}, cost {}, W {}", t.summary.total_cost, t.summary.wait),
        format!("[(0, 2), (1, 3)], cost {expected}, W 4"),
    );

    let d = DecayModel::new(2.0, 1.0).map_err(|e| e.to_string())?;
    let t =
        go(RunConfig::new(ScheduleSpec::greedy(), CostMode::Decay(d), StopRule::Horizon(3.0), seed).with_tape(three))?;
    c.add(
        "[C@1, C@2, P@3] decay δ = 2: cost g(2, 1)",
        t.summary.total_cost == 1.0 && t.records.first().map(|r| (r.m_c, r.m_p)) == Some((2, 1)),
        format!(
            "{} at {:?}",
            t.summary.total_cost,
            t.records.first().map(|r| (r.m_c, r.m_p))
        ),
        "1 at (2, 1)",
    );
    Ok(c)
}

/// `E[Y]` for "two of each side" by first-step analysis on the capped counts.
fn two_each_by_recursion() -> f64 {
    // e[h][t]: expected further flips with min(h, 2) heads and min(t, 2) tails
    let mut e = [[0.0f64; 3]; 3];
    for h in (0..=2).rev() {
        for t in (0..=2).rev() {
            if h == 2 && t == 2 {
                continue;
            }
            let (nh, nt) = ((h + 1).min(2), (t + 1).min(2));
            // self-loops when one side is already capped
            let (stay, go) = match (h == 2, t == 2) {
                (true, false) => (0.5, 0.5 * e[h][nt]),
                (false, true) => (0.5, 0.5 * e[nh][t]),
                _ => (0.0, 0.5 * e[nh][t] + 0.5 * e[h][nt]),
            };
            e[h][t] = (1.0 + go) / (1.0 - stay);
        }
    }
    e[0][0]
}

fn c14(_: &Options, seed: u64) -> Outcome {
    let mut c = Checks::default();
    let s = log2_series(60);
    c.add(
        "Σ 1/(2^k k) = log 2",
        (s - LN_2).abs() <= 1e-12,
        format!("{s:.15}"),
        format!("{LN_2:.15}"),
    );
    for (i, k) in [10u64, 100, 1000].into_iter().enumerate() {
        let est = stopping_time_mean(k, 1, 10_000, derive_seed(seed, i as u64)).map_err(|e| e.to_string())?;
        c.add(
            format!("t({k}, 1) mean + 3σ < 5k"),
            est.mean + 3.0 * est.stderr < 5.0 * k as f64,
            format!("{:.2} ± {:.2}", est.mean, est.stderr),
            format!("< {}", 5 * k),
        );
    }
    let exact = expected_arrivals_two_each();
    let recursion = two_each_by_recursion();
    c.add(
        "two-of-each expectation by series and recursion",
        (exact - recursion).abs() <= 1e-12,
        format!("{exact} (quoted constant {TWO_EACH_QUOTED})"),
        format!("{recursion}"),
    );
    c.add("P[Y > 4]", two_each_tail(4) == 0.625, two_each_tail(4), 0.625);
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_by_group_and_id() {
        assert_eq!(select(Some("oracles")).unwrap(), vec![1, 4, 14]);
        assert_eq!(select(Some("13, oracles,1")).unwrap(), vec![1, 4, 13, 14]);
        assert_eq!(select(None).unwrap().len(), 14);
        assert!(select(Some("nope")).is_err());
    }

    #[test]
    fn two_each_recursion_is_eleven_halves() {
        assert!((two_each_by_recursion() - 5.5).abs() < 1e-15);
    }

    #[test]
    fn direct_zeta_route() {
        assert!((zeta_direct(2.0) - PI * PI / 6.0).abs() < 1e-10);
    }
}
