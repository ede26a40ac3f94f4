//! Ratio estimates over replication ensembles and growth fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arrival::McEstimate;
use crate::assignment::{min_k_assignment, CostMatrix};
use crate::cost_model::{CostSampler, RateModel};
use crate::engine::RunTrace;
use crate::oracles::{basel_partial, greedy_expected_wait};
use crate::seeding::{derive_seed, replication_seed, tags};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("replications {reps:?} do not reach {what}")]
    Coverage { what: String, reps: Vec<usize> },
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Mean of a ratio over replications with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub x: f64,
    pub ratio: f64,
    pub stderr: f64,
    pub denominator: String,
}

impl RatioEstimate {
    /// `(ratio − z·se, ratio + z·se)`.
    pub fn interval(&self, z: f64) -> (f64, f64) {
        (self.ratio - z * self.stderr, self.ratio + z * self.stderr)
    }
}

/// Normaliser of the matching ratio.
#[derive(Debug, Clone, PartialEq)]
pub enum Denominator {
    /// `Σ_{k=1}^{A} 1/k²`: the expected optimal cost of `A` couples out of
    /// `A` clients and `A` providers with rate-1 costs.
    AnalyticEqualSided,
    /// Measured patient cost per `A`, e.g. from [`empirical_patient_table`].
    EmpiricalPatient(Vec<(u64, f64)>),
    /// No normalisation: the ratio column holds the raw cumulative cost.
    Raw,
}

impl Denominator {
    fn value(&self, a: u64) -> Result<f64, AnalysisError> {
        match self {
            Denominator::AnalyticEqualSided => Ok(basel_partial(a)),
            Denominator::EmpiricalPatient(table) => table
                .iter()
                .find(|(x, _)| *x == a)
                .map(|(_, v)| *v)
                .ok_or_else(|| AnalysisError::Argument(format!("no patient cost for A = {a}"))),
            Denominator::Raw => Ok(1.0),
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            Denominator::AnalyticEqualSided => "analytic",
            Denominator::EmpiricalPatient(_) => "empirical-patient",
            Denominator::Raw => "raw",
        }
    }
}

fn check_sorted<T: PartialOrd + Copy>(grid: &[T]) -> Result<(), AnalysisError> {
    if grid.is_empty() {
        return Err(AnalysisError::Argument("empty grid".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(AnalysisError::Argument("grid must be sorted".into()));
    }
    Ok(())
}

fn estimate(values: impl IntoIterator<Item = f64>) -> McEstimate {
    McEstimate::from_samples(values)
}

/// `samples[rep][i]` is the cumulative cost of replication `rep` at `a_grid[i]`.
pub fn matching_ratio_from_samples(
    samples: &[Vec<f64>],
    a_grid: &[u64],
    denominator: &Denominator,
) -> Result<Vec<RatioEstimate>, AnalysisError> {
    check_sorted(a_grid)?;
    if samples.is_empty() {
        return Err(AnalysisError::Argument("no replications".into()));
    }
    a_grid
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let den = denominator.value(a)?;
            let est = estimate(samples.iter().map(|s| s[i]));
            Ok(RatioEstimate {
                x: a as f64,
                ratio: est.mean / den,
                stderr: est.stderr / den,
                denominator: denominator.tag().to_string(),
            })
        })
        .collect()
}

/// Cumulative cost of each trace at each grid point.
pub fn cost_samples(traces: &[RunTrace], a_grid: &[u64]) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let max = *a_grid.iter().max().unwrap_or(&0);
    let short: Vec<usize> = traces
        .iter()
        .enumerate()
        .filter(|(_, t)| t.cum_cost_at(max).is_none())
        .map(|(i, _)| i)
        .collect();
    if !short.is_empty() {
        return Err(AnalysisError::Coverage {
            what: format!("A = {max}"),
            reps: short,
        });
    }
    Ok(traces
        .iter()
        .map(|t| a_grid.iter().map(|&a| t.cum_cost_at(a).unwrap_or_default()).collect())
        .collect())
}

/// `α̂(A)`: mean cumulative cost at the A-th match over the denominator.
pub fn matching_ratio(
    traces: &[RunTrace],
    a_grid: &[u64],
    denominator: &Denominator,
) -> Result<Vec<RatioEstimate>, AnalysisError> {
    check_sorted(a_grid)?;
    matching_ratio_from_samples(&cost_samples(traces, a_grid)?, a_grid, denominator)
}

/// `samples[rep][i]` is `W(τ_grid[i])` of replication `rep`.
pub fn waiting_ratio_from_samples(
    samples: &[Vec<f64>],
    tau_grid: &[f64],
) -> Result<Vec<Option<RatioEstimate>>, AnalysisError> {
    check_sorted(tau_grid)?;
    if samples.is_empty() {
        return Err(AnalysisError::Argument("no replications".into()));
    }
    Ok(tau_grid
        .iter()
        .enumerate()
        .map(|(i, &tau)| {
            let den = greedy_expected_wait(tau);
            (den > 0.0).then(|| {
                let est = estimate(samples.iter().map(|s| s[i]));
                RatioEstimate {
                    x: tau,
                    ratio: est.mean / den,
                    stderr: est.stderr / den,
                    denominator: "greedy-wait".into(),
                }
            })
        })
        .collect())
}

/// `W(τ)` of each trace at each grid point.
pub fn wait_samples(traces: &[RunTrace], tau_grid: &[f64]) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let max = tau_grid.iter().copied().fold(0.0, f64::max);
    let short: Vec<usize> = traces
        .iter()
        .enumerate()
        .filter(|(_, t)| t.wait_at(max).is_none())
        .map(|(i, _)| i)
        .collect();
    if !short.is_empty() {
        return Err(AnalysisError::Coverage {
            what: format!("τ = {max}"),
            reps: short,
        });
    }
    Ok(traces
        .iter()
        .map(|t| tau_grid.iter().map(|&tau| t.wait_at(tau).unwrap_or_default()).collect())
        .collect())
}

/// `β̂(τ)`: mean `W(τ)` over `(2/3) τ^{3/2}`; `None` at `τ = 0`.
pub fn waiting_ratio(traces: &[RunTrace], tau_grid: &[f64]) -> Result<Vec<Option<RatioEstimate>>, AnalysisError> {
    check_sorted(tau_grid)?;
    waiting_ratio_from_samples(&wait_samples(traces, tau_grid)?, tau_grid)
}

/// Mean optimal cost of matching `A` clients to `A` providers, by Monte
/// Carlo over fresh `A × A` cost matrices.
///
/// `reps` matrices are drawn at the smallest grid point. The cost variance
/// falls like `1/A`, so larger points use `reps · A_min / A` of them (at
/// least two), which keeps every standard error at or below the first.
pub fn empirical_patient_table(
    a_grid: &[u64],
    model: &RateModel,
    reps: u64,
    seed: u64,
) -> Result<Vec<(u64, McEstimate)>, AnalysisError> {
    check_sorted(a_grid)?;
    if reps < 2 {
        return Err(AnalysisError::Argument("need at least two replications".into()));
    }
    a_grid
        .iter()
        .map(|&a| {
            if a == 0 {
                return Err(AnalysisError::Argument("A must be positive".into()));
            }
            let n = a as usize;
            let reps_here = (reps as u128 * a_grid[0] as u128).div_ceil(a as u128).max(2) as u64;
            let samples: Vec<f64> = (0..reps_here)
                .into_par_iter()
                .map(|rep| {
                    let run_seed = derive_seed(replication_seed(seed ^ a, rep), tags::COST_STREAM);
                    let sampler = CostSampler::new(*model, run_seed).expect("validated model");
                    // clients take ids 0..A, providers A..2A
                    let m = CostMatrix::from_fn(n, n, |i, j| sampler.cost(i as u64, (n + j) as u64))
                        .expect("exponential draws are finite");
                    min_k_assignment(&m, n).expect("k = n is in range").total_cost
                })
                .collect();
            Ok((a, estimate(samples)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// `(log x, log y)`: the slope is a power-law exponent.
    LogLog,
    /// `(log x, y)`: the slope is the coefficient on `log x`.
    SemiLogX,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub transform: Transform,
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r2: f64,
}

impl GrowthFit {
    pub fn predict(&self, x: f64) -> f64 {
        match self.transform {
            Transform::LogLog => (self.intercept + self.slope * x.ln()).exp(),
            Transform::SemiLogX => self.intercept + self.slope * x.ln(),
            Transform::Raw => self.intercept + self.slope * x,
        }
    }
}

fn transformed(points: &[(f64, f64)], transform: Transform) -> Result<Vec<(f64, f64)>, AnalysisError> {
    if points.len() < 4 {
        return Err(AnalysisError::Argument(format!(
            "need at least 4 points, got {}",
            points.len()
        )));
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(AnalysisError::Argument("x must be strictly increasing".into()));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(AnalysisError::Argument("non-finite data".into()));
    }
    let logx = matches!(transform, Transform::LogLog | Transform::SemiLogX);
    if logx && points[0].0 <= 0.0 {
        return Err(AnalysisError::Argument("log transform needs x > 0".into()));
    }
    if transform == Transform::LogLog && points.iter().any(|p| p.1 <= 0.0) {
        return Err(AnalysisError::Argument("log-log fit needs y > 0".into()));
    }
    Ok(points
        .iter()
        .map(|&(x, y)| match transform {
            Transform::LogLog => (x.ln(), y.ln()),
            Transform::SemiLogX => (x.ln(), y),
            Transform::Raw => (x, y),
        })
        .collect())
}

/// Ordinary least squares on transformed coordinates. The slope standard
/// error is the usual residual-based one.
pub fn fit_growth(points: &[(f64, f64)], transform: Transform) -> Result<GrowthFit, AnalysisError> {
    let pts = transformed(points, transform)?;
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let slope_stderr = (ssr / (n - 2.0) / sxx).sqrt();
    let r2 = if syy > 0.0 { (1.0 - ssr / syy).max(0.0) } else { 1.0 };
    Ok(GrowthFit {
        transform,
        slope,
        intercept,
        slope_stderr,
        r2,
    })
}

/// Fits every replication's own curve and summarises the slopes. Unlike
/// the residual error of a single fit to the means, the spread of per-run
/// slopes reflects sampling noise, including correlation along a trace.
pub fn slope_across_replications(
    xs: &[f64],
    samples: &[Vec<f64>],
    transform: Transform,
) -> Result<McEstimate, AnalysisError> {
    if samples.len() < 2 {
        return Err(AnalysisError::Argument("need at least two replications".into()));
    }
    let slopes: Result<Vec<f64>, AnalysisError> = samples
        .iter()
        .map(|ys| {
            let pts: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
            fit_growth(&pts, transform).map(|f| f.slope)
        })
        .collect();
    Ok(McEstimate::from_samples(slopes?))
}

/// Geometric grid of `n` points from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi / lo).ln() / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo * (step * i as f64).exp() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patient_table_thins_replications_with_a() {
        let model = RateModel::constant(1.0).unwrap();
        let table = empirical_patient_table(&[4, 8, 40, 400], &model, 30, 1).unwrap();
        let counts: Vec<u64> = table.iter().map(|(_, e)| e.n).collect();
        assert_eq!(counts, vec![30, 15, 3, 2]);
        assert!(empirical_patient_table(&[0, 4], &model, 30, 1).is_err());
    }

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64)> = [10.0, 100.0, 1000.0, 10_000.0]
            .iter()
            .map(|&x: &f64| (x, x.sqrt()))
            .collect();
        let f = fit_growth(&pts, Transform::LogLog).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(f.slope_stderr < 1e-10);
    }

    #[test]
    fn exact_log_growth() {
        let pts: Vec<(f64, f64)> = [2.0, 20.0, 200.0, 2000.0, 9000.0]
            .iter()
            .map(|&x: &f64| (x, 3.0 * x.ln()))
            .collect();
        let f = fit_growth(&pts, Transform::SemiLogX).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12);
        assert!(f.intercept.abs() < 1e-10);
        assert!((f.predict(50.0) - 3.0 * 50f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn fit_rejects_bad_input() {
        let few = [(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)];
        assert!(fit_growth(&few, Transform::Raw).is_err());
        let unsorted = [(1.0, 1.0), (3.0, 2.0), (2.0, 3.0), (4.0, 4.0)];
        assert!(fit_growth(&unsorted, Transform::Raw).is_err());
        let nonpos = [(1.0, 1.0), (2.0, 0.0), (3.0, 3.0), (4.0, 4.0)];
        assert!(fit_growth(&nonpos, Transform::LogLog).is_err());
        assert!(fit_growth(&nonpos, Transform::Raw).is_ok());
    }

    #[test]
    fn zero_cost_samples_give_zero_ratio() {
        let samples = vec![vec![0.0, 0.0]; 10];
        let r = matching_ratio_from_samples(&samples, &[10, 20], &Denominator::AnalyticEqualSided).unwrap();
        assert!(r.iter().all(|e| e.ratio == 0.0 && e.stderr == 0.0));
    }

    #[test]
    fn tau_zero_is_absent() {
        let samples = vec![vec![0.0, 5.0]; 3];
        let r = waiting_ratio_from_samples(&samples, &[0.0, 9.0]).unwrap();
        assert!(r[0].is_none());
        let b = r[1].as_ref().unwrap();
        assert!((b.ratio - 5.0 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn grids() {
        let g = geometric_grid(100.0, 10_000.0, 5);
        assert_eq!(g.len(), 5);
        assert_eq!(g[4], 10_000.0);
        assert!((g[2] - 1000.0).abs() < 1e-9);
        assert!(matching_ratio_from_samples(&[vec![1.0, 1.0]], &[5, 3], &Denominator::AnalyticEqualSided).is_err());
    }

    #[test]
    fn empirical_denominator_lookup() {
        let den = Denominator::EmpiricalPatient(vec![(4, 2.0)]);
        let r = matching_ratio_from_samples(&[vec![1.0], vec![3.0]], &[4], &den).unwrap();
        assert_eq!(r[0].ratio, 1.0);
        assert!(matching_ratio_from_samples(&[vec![1.0]], &[5], &den).is_err());
    }
}
