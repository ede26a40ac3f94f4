//! Python bindings: runs, assignments, oracles, ratio fits and the
//! experiment runner.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dynaclear_core::analysis::{self, Transform};
use dynaclear_core::arrival::{Side, TapeSource};
use dynaclear_core::assignment::{self as asg, CostMatrix};
use dynaclear_core::engine::{self, CostMode, CostRefresh, DecayModel, RunConfig, StopRule};
use dynaclear_core::experiment::{self, ExperimentConfig};
use dynaclear_core::validation;
use dynaclear_core::{oracles, RateModel, ScheduleSpec};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl ToString) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

#[pyclass(name = "RateModel", frozen, from_py_object)]
#[derive(Clone)]
struct PyRateModel(RateModel);

#[pymethods]
impl PyRateModel {
    /// Parses `const:<λ>`, `uniform:<lo>:<hi>` or `product:<flo>:<fhi>:<lo>:<hi>`.
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        RateModel::parse(text).map(Self).map_err(value_err)
    }

    #[getter]
    fn lambda_under(&self) -> f64 {
        self.0.lambda_under
    }

    #[getter]
    fn lambda_over(&self) -> f64 {
        self.0.lambda_over
    }

    #[getter]
    fn lambda_mean(&self) -> f64 {
        self.0.lambda_mean
    }

    fn __repr__(&self) -> String {
        format!("RateModel('{}')", self.0.label())
    }
}

#[pyclass(name = "ScheduleSpec", frozen, from_py_object)]
#[derive(Clone)]
struct PySchedule(ScheduleSpec);

#[pymethods]
impl PySchedule {
    /// `greedy | fcfs | patient | power:<γ>[:<c>] | balanced[:<c>] | custom:<csv>`.
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        ScheduleSpec::parse(text).map(Self).map_err(value_err)
    }

    fn threshold(&self, k: u64) -> PyResult<u64> {
        self.0.threshold(k).map_err(value_err)
    }

    fn should_clear(&self, unmatched_clients: u64, unmatched_providers: u64, next_k: u64) -> bool {
        self.0.should_clear(unmatched_clients, unmatched_providers, next_k)
    }

    fn __repr__(&self) -> String {
        format!("ScheduleSpec('{}')", self.0.label())
    }
}

#[pyclass(name = "MatchRecord", frozen, get_all)]
struct PyMatchRecord {
    k: u64,
    time: f64,
    client_id: u64,
    provider_id: u64,
    cost: f64,
    m_c: u64,
    m_p: u64,
    cum_cost: f64,
    cum_wait: f64,
}

#[pymethods]
impl PyMatchRecord {
    fn __repr__(&self) -> String {
        format!(
            "MatchRecord(k={}, time={}, client={}, provider={}, cost={})",
            self.k, self.time, self.client_id, self.provider_id, self.cost
        )
    }
}

#[pyclass(name = "RunTrace", frozen)]
struct PyTrace(engine::RunTrace);

#[pymethods]
impl PyTrace {
    #[getter]
    fn records(&self) -> Vec<PyMatchRecord> {
        self.0
            .records
            .iter()
            .map(|r| PyMatchRecord {
                k: r.k,
                time: r.time,
                client_id: r.client_id,
                provider_id: r.provider_id,
                cost: r.cost,
                m_c: r.m_c,
                m_p: r.m_p,
                cum_cost: r.cum_cost,
                cum_wait: r.cum_wait,
            })
            .collect()
    }

    #[getter]
    fn wait_checkpoints(&self) -> Vec<(f64, f64)> {
        self.0.wait_checkpoints.clone()
    }

    #[getter]
    fn clock(&self) -> f64 {
        self.0.summary.clock
    }

    #[getter]
    fn matches(&self) -> u64 {
        self.0.summary.matches
    }

    #[getter]
    fn arrivals(&self) -> u64 {
        self.0.summary.arrivals
    }

    #[getter]
    fn wait(&self) -> f64 {
        self.0.summary.wait
    }

    #[getter]
    fn total_cost(&self) -> f64 {
        self.0.summary.total_cost
    }

    fn cum_cost_at(&self, a: u64) -> Option<f64> {
        self.0.cum_cost_at(a)
    }

    fn wait_at(&self, tau: f64) -> Option<f64> {
        self.0.wait_at(tau)
    }

    fn __repr__(&self) -> String {
        format!("RunTrace({})", self.0.summary)
    }
}

#[allow(clippy::too_many_arguments)]
fn build_config(
    schedule: &str,
    rate: &str,
    matches: Option<u64>,
    horizon: Option<f64>,
    seed: u64,
    refresh: &str,
    decay_delta: Option<f64>,
    decay_scale: f64,
    waiting_only: bool,
    tape: Option<Vec<(f64, String)>>,
) -> PyResult<RunConfig> {
    let spec = ScheduleSpec::parse(schedule).map_err(value_err)?;
    let mode = match (decay_delta, waiting_only) {
        (Some(_), true) => return Err(value_err("decay_delta and waiting_only are exclusive")),
        (Some(d), false) => CostMode::Decay(DecayModel::new(d, decay_scale).map_err(value_err)?),
        (None, true) => CostMode::WaitingOnly,
        (None, false) => CostMode::Micro(RateModel::parse(rate).map_err(value_err)?),
    };
    let stop = match (matches, horizon) {
        (Some(a), None) => StopRule::Matches(a),
        (None, Some(h)) => StopRule::Horizon(h),
        _ => return Err(value_err("give exactly one of matches= or horizon=")),
    };
    let refresh = match refresh {
        "per_event" => CostRefresh::PerEvent,
        "fixed" => CostRefresh::Fixed,
        other => return Err(value_err(format!("refresh `{other}` is not per_event or fixed"))),
    };
    let mut cfg = RunConfig::new(spec, mode, stop, seed).with_refresh(refresh);
    if let Some(entries) = tape {
        let entries = entries
            .into_iter()
            .map(|(t, s)| match s.as_str() {
                "C" | "c" => Ok((t, Side::Client)),
                "P" | "p" => Ok((t, Side::Provider)),
                other => Err(value_err(format!("side `{other}` is not C or P"))),
            })
            .collect::<PyResult<Vec<_>>>()?;
        cfg = cfg.with_tape(TapeSource::new(entries).map_err(value_err)?);
    }
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

/// Runs one market and returns its trace. `tape` is a list of
/// `(time, "C" | "P")`; without it arrivals are Poisson.
#[pyfunction]
#[pyo3(signature = (schedule, *, seed, rate = "const:1", matches = None, horizon = None,
    refresh = "per_event", decay_delta = None, decay_scale = 1.0, waiting_only = false, tape = None))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    schedule: &str,
    seed: u64,
    rate: &str,
    matches: Option<u64>,
    horizon: Option<f64>,
    refresh: &str,
    decay_delta: Option<f64>,
    decay_scale: f64,
    waiting_only: bool,
    tape: Option<Vec<(f64, String)>>,
) -> PyResult<PyTrace> {
    let cfg = build_config(
        schedule,
        rate,
        matches,
        horizon,
        seed,
        refresh,
        decay_delta,
        decay_scale,
        waiting_only,
        tape,
    )?;
    py.detach(|| engine::run(&cfg)).map(PyTrace).map_err(runtime_err)
}

type RatioRow = (f64, f64, f64);

/// `(alpha, beta)` ratio tables over `reps` replications: lists of
/// `(x, ratio, stderr)`.
#[pyfunction]
#[pyo3(signature = (schedule, *, seed, reps, a_grid, tau_grid, rate = "const:1", matches = None,
    horizon = None, jobs = 0))]
#[allow(clippy::too_many_arguments)]
fn ratios(
    py: Python<'_>,
    schedule: &str,
    seed: u64,
    reps: u64,
    a_grid: Vec<u64>,
    tau_grid: Vec<f64>,
    rate: &str,
    matches: Option<u64>,
    horizon: Option<f64>,
    jobs: usize,
) -> PyResult<(Vec<RatioRow>, Vec<RatioRow>)> {
    let cfg = build_config(
        schedule,
        rate,
        matches,
        horizon,
        seed,
        "per_event",
        None,
        1.0,
        false,
        None,
    )?
    .with_checkpoints(engine::CheckpointPolicy::Grid(tau_grid.clone()));
    let traces = py
        .detach(|| engine::run_replications(&cfg, reps, jobs))
        .map_err(runtime_err)?;
    let alpha =
        analysis::matching_ratio(&traces, &a_grid, &analysis::Denominator::AnalyticEqualSided).map_err(value_err)?;
    let beta = analysis::waiting_ratio(&traces, &tau_grid).map_err(value_err)?;
    Ok((
        alpha.iter().map(|r| (r.x, r.ratio, r.stderr)).collect(),
        beta.iter().flatten().map(|r| (r.x, r.ratio, r.stderr)).collect(),
    ))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<CostMatrix> {
    CostMatrix::from_rows(&rows).map_err(value_err)
}

/// Optimal k-assignment: `(pairs, total_cost)`.
#[pyfunction]
fn min_k_assignment(rows: Vec<Vec<f64>>, k: usize) -> PyResult<(Vec<(usize, usize)>, f64)> {
    let a = asg::min_k_assignment(&matrix(rows)?, k).map_err(value_err)?;
    Ok((a.pairs, a.total_cost))
}

#[pyfunction]
fn brute_force_k_assignment(rows: Vec<Vec<f64>>, k: usize) -> PyResult<(Vec<(usize, usize)>, f64)> {
    let a = asg::brute_force_k_assignment(&matrix(rows)?, k).map_err(value_err)?;
    Ok((a.pairs, a.total_cost))
}

#[pyfunction]
fn min_edge(rows: Vec<Vec<f64>>) -> PyResult<(usize, usize, f64)> {
    asg::min_edge(&matrix(rows)?).map_err(value_err)
}

#[pyfunction]
fn expected_min_k_assignment(n_c: u64, n_p: u64, k: u64) -> PyResult<f64> {
    oracles::expected_min_k_assignment(n_c, n_p, k).map_err(value_err)
}

#[pyfunction]
fn basel_partial(n: u64) -> f64 {
    oracles::basel_partial(n)
}

#[pyfunction]
fn zeta(s: f64) -> PyResult<f64> {
    oracles::zeta(s).map_err(value_err)
}

#[pyfunction]
fn expected_abs_walk(k: u64) -> f64 {
    oracles::expected_abs_walk(k)
}

#[pyfunction]
fn greedy_expected_wait(tau: f64) -> f64 {
    oracles::greedy_expected_wait(tau)
}

#[pyfunction]
fn expected_arrivals_two_each() -> f64 {
    oracles::expected_arrivals_two_each()
}

/// `(lower, upper, regime)`; `upper` is `inf` for greedy.
#[pyfunction]
#[pyo3(signature = (schedule, a, lambda_under = 1.0, lambda_over = 1.0, lambda_mean = 1.0))]
fn alpha_bounds(
    schedule: &str,
    a: u64,
    lambda_under: f64,
    lambda_over: f64,
    lambda_mean: f64,
) -> PyResult<(f64, f64, String)> {
    let spec = ScheduleSpec::parse(schedule).map_err(value_err)?;
    let b = oracles::alpha_bounds(&spec, a, lambda_under, lambda_over, lambda_mean).map_err(value_err)?;
    Ok((b.lower, b.upper, b.regime.to_string()))
}

/// `(critical_gamma, window)`, the window being `None` when empty.
#[pyfunction]
fn free_lunch_window(delta: f64) -> PyResult<(f64, Option<(f64, f64)>)> {
    let f = oracles::free_lunch_window(delta).map_err(value_err)?;
    Ok((f.critical_gamma, f.window))
}

/// `(slope, intercept, slope_stderr, r2)` of a fit under `loglog`,
/// `semilogx` or `raw` coordinates.
#[pyfunction]
#[pyo3(signature = (points, transform = "loglog"))]
fn fit_growth(points: Vec<(f64, f64)>, transform: &str) -> PyResult<(f64, f64, f64, f64)> {
    let t = match transform {
        "loglog" => Transform::LogLog,
        "semilogx" => Transform::SemiLogX,
        "raw" => Transform::Raw,
        other => return Err(value_err(format!("unknown transform `{other}`"))),
    };
    let f = analysis::fit_growth(&points, t).map_err(value_err)?;
    Ok((f.slope, f.intercept, f.slope_stderr, f.r2))
}

/// Runs an experiment from its JSON config and returns the config hash.
#[pyfunction]
#[pyo3(signature = (config_json, jobs = 0))]
fn run_experiment(py: Python<'_>, config_json: &str, jobs: usize) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json).map_err(value_err)?;
    py.detach(|| experiment::run_experiment(&cfg, jobs))
        .map(|r| r.config_hash)
        .map_err(runtime_err)
}

/// Runs acceptance criteria; returns `(id, name, passed)` per criterion.
#[pyfunction]
#[pyo3(signature = (only = None, jobs = 0))]
fn validate(py: Python<'_>, only: Option<&str>, jobs: usize) -> PyResult<Vec<(u32, String, bool)>> {
    let ids = validation::select(only).map_err(value_err)?;
    let results = py.detach(|| validation::run_selected(&ids, &validation::Options { jobs }, |_| {}));
    Ok(results.into_iter().map(|r| (r.id, r.name, r.passed)).collect())
}

#[pymodule]
#[pyo3(name = "dynaclear")]
fn dynaclear_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRateModel>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyMatchRecord>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(ratios, m)?)?;
    m.add_function(wrap_pyfunction!(min_k_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_k_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(min_edge, m)?)?;
    m.add_function(wrap_pyfunction!(expected_min_k_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(basel_partial, m)?)?;
    m.add_function(wrap_pyfunction!(zeta, m)?)?;
    m.add_function(wrap_pyfunction!(expected_abs_walk, m)?)?;
    m.add_function(wrap_pyfunction!(greedy_expected_wait, m)?)?;
    m.add_function(wrap_pyfunction!(expected_arrivals_two_each, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(free_lunch_window, m)?)?;
    m.add_function(wrap_pyfunction!(fit_growth, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
