//! Closed-form and series reference values.

use std::f64::consts::{LN_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::schedules::{ScheduleKind, ScheduleSpec};

/// `π²/6`.
pub fn basel() -> f64 {
    PI * PI / 6.0
}

/// Bracket for `E|S_k| / √k` on the symmetric walk.
pub const ABS_WALK_LOWER: f64 = 0.67;
pub const ABS_WALK_UPPER: f64 = 1.23;

/// The figure the two-of-each argument quotes for `E[Y]`.
pub const TWO_EACH_QUOTED: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("not available in closed form: {0}")]
    NotApplicable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    PatientBaseline,
    Fcfs,
    Greedy,
    Subcritical,
    Critical,
    Supercritical,
    Patient,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::PatientBaseline => "patient-cost",
            Regime::Fcfs => "fcfs",
            Regime::Greedy => "greedy",
            Regime::Subcritical => "subcritical",
            Regime::Critical => "critical",
            Regime::Supercritical => "supercritical",
            Regime::Patient => "patient",
        };
        f.write_str(s)
    }
}

/// `lower ≤ upper`; `upper` may be `+∞` where only a lower bound is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
    pub regime: Regime,
}

impl BoundPair {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

fn positive(name: &str, x: f64) -> Result<(), OracleError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(OracleError::Argument(format!(
            "{name} = {x} must be positive and finite"
        )))
    }
}

fn rates(under: f64, over: f64) -> Result<(), OracleError> {
    positive("λ_under", under)?;
    positive("λ_over", over)?;
    if under > over {
        return Err(OracleError::Argument(format!(
            "λ_under = {under} exceeds λ_over = {over}"
        )));
    }
    Ok(())
}

/// Compensated running sum.
#[derive(Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Expected minimum cost of a `k`-assignment between `n_c` clients and `n_p`
/// providers with i.i.d. exp(1) costs:
/// `Σ_{i,j ≥ 0, i+j < k} 1 / ((n_c − i)(n_p − j))`.
pub fn expected_min_k_assignment(n_c: u64, n_p: u64, k: u64) -> Result<f64, OracleError> {
    if k == 0 || k > n_c.min(n_p) {
        return Err(OracleError::Argument(format!("k = {k} outside 1..={}", n_c.min(n_p))));
    }
    let mut acc = Neumaier::default();
    for i in 0..k {
        let row = 1.0 / (n_c - i) as f64;
        for j in 0..k - i {
            acc.add(row / (n_p - j) as f64);
        }
    }
    Ok(acc.value())
}

/// `Σ_{k=1}^{n} 1/k²`.
pub fn basel_partial(n: u64) -> f64 {
    let mut acc = Neumaier::default();
    for k in (1..=n).rev() {
        let k = k as f64;
        acc.add(1.0 / (k * k));
    }
    acc.value()
}

/// Envelope for the patient schedule's expected total cost:
/// `[log 2 / λ_over, π² / (6 λ_under)]`.
pub fn patient_cost_bounds(lambda_over: f64, lambda_under: f64) -> Result<BoundPair, OracleError> {
    rates(lambda_under, lambda_over)?;
    Ok(BoundPair {
        lower: LN_2 / lambda_over,
        upper: basel() / lambda_under,
        regime: Regime::PatientBaseline,
    })
}

/// `(2/3) τ^{3/2}`, the greedy schedule's expected waiting integral.
pub fn greedy_expected_wait(tau: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    2.0 / 3.0 * tau.powf(1.5)
}

/// Exact `E|S_k|` for the simple symmetric walk. For even `k` this is
/// `k · C(k, k/2) / 2^k`; an odd step count has the value of the next even one.
pub fn expected_abs_walk(k: u64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let k = k + (k & 1);
    if k <= 60 {
        let mut binom: u128 = 1;
        for i in 0..k / 2 {
            binom = binom * (k - i) as u128 / (i + 1) as u128;
        }
        return (k as u128 * binom) as f64 / (k as f64).exp2();
    }
    let kf = k as f64;
    let half = kf / 2.0;
    (kf.ln() + ln_gamma(kf + 1.0) - 2.0 * ln_gamma(half + 1.0) - kf * LN_2).exp()
}

/// Bernoulli numbers `B_2, B_4, ..., B_16`.
const BERNOULLI: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

/// Riemann zeta for real `s > 1`: partial sum to `N − 1`, integral tail and
/// Euler–Maclaurin corrections.
pub fn zeta(s: f64) -> Result<f64, OracleError> {
    if !(s > 1.0 && s.is_finite()) {
        return Err(OracleError::Argument(format!("zeta needs s > 1, got {s}")));
    }
    const N: usize = 32;
    let n = N as f64;
    let mut acc = Neumaier::default();
    for m in (1..N).rev() {
        acc.add((m as f64).powf(-s));
    }
    acc.add(n.powf(1.0 - s) / (s - 1.0));
    acc.add(0.5 * n.powf(-s));
    // term j: B_{2j} / (2j)! · s (s+1) ... (s+2j−2) · N^{−s−2j+1}
    let mut rising = s;
    let mut fact = 2.0;
    let mut npow = n.powf(-s - 1.0);
    for (j, b) in BERNOULLI.iter().enumerate() {
        if j > 0 {
            let m = 2.0 * j as f64;
            rising *= (s + m - 1.0) * (s + m);
            fact *= (m + 1.0) * (m + 2.0);
            npow /= n * n;
        }
        acc.add(b / fact * rising * npow);
    }
    Ok(acc.value())
}

fn power_gamma(schedule: &ScheduleSpec) -> Option<f64> {
    match schedule.kind {
        ScheduleKind::PowerLaw { gamma, .. } => Some(gamma),
        _ => None,
    }
}

/// Envelope for the matching ratio `α(A)` of a schedule.
///
/// The power-law constants are those of the unit-scale schedule `f(k) = k^γ`:
/// `C̲_γ = λ_under / (π² (1/2 − γ))` and
/// `C̄_γ = (1 + 1/(1 − 2γ)) λ_over / (λ_under log 2)`.
pub fn alpha_bounds(
    schedule: &ScheduleSpec,
    a: u64,
    lambda_under: f64,
    lambda_over: f64,
    lambda_mean: f64,
) -> Result<BoundPair, OracleError> {
    if a < 2 {
        return Err(OracleError::Argument(format!("A = {a} must be at least 2")));
    }
    rates(lambda_under, lambda_over)?;
    positive("λ_mean", lambda_mean)?;
    let af = a as f64;
    let ratio = lambda_over / lambda_under;
    let pi2 = PI * PI;
    let pair = |lower: f64, upper: f64, regime| Ok(BoundPair { lower, upper, regime });
    match &schedule.kind {
        ScheduleKind::Fcfs => {
            let v = 6.0 * lambda_under * lambda_mean * af / pi2;
            pair(v, v, Regime::Fcfs)
        }
        ScheduleKind::Greedy => pair(
            6.0 * lambda_under * af.sqrt() / (5.0 * pi2),
            f64::INFINITY,
            Regime::Greedy,
        ),
        ScheduleKind::Patient => pair(1.0, 1.0, Regime::Patient),
        ScheduleKind::PowerLaw { .. } => {
            let gamma = power_gamma(schedule).unwrap_or_default();
            if gamma < 0.5 {
                let lower = lambda_under / (pi2 * (0.5 - gamma)) * af.powf(0.5 - gamma);
                let upper = (1.0 + 1.0 / (1.0 - 2.0 * gamma)) * ratio / LN_2 * af.powf(1.0 - 2.0 * gamma);
                pair(lower, upper, Regime::Subcritical)
            } else if gamma == 0.5 {
                let ln_a = af.ln();
                pair(
                    2.0 * lambda_under * ln_a / pi2,
                    ratio * (1.0 + ln_a) / LN_2,
                    Regime::Critical,
                )
            } else {
                pair(0.0, ratio * zeta(2.0 * gamma)? / LN_2, Regime::Supercritical)
            }
        }
        ScheduleKind::Balanced { .. } => Err(OracleError::NotApplicable(
            "the balanced schedule is checked through its (log A)^(1/3) growth".into(),
        )),
        ScheduleKind::CustomThreshold { .. } => Err(OracleError::NotApplicable(
            "custom threshold tables have no closed form".into(),
        )),
    }
}

/// Growth order of the waiting ratio: `β(τ) = Θ(τ^exponent (log τ)^log_power)`,
/// or exactly 1 when `exactly_one` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaOrder {
    pub exponent: f64,
    pub log_power: f64,
    pub exactly_one: bool,
}

impl fmt::Display for BetaOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exactly_one {
            return f.write_str("1");
        }
        match (self.exponent == 0.0, self.log_power == 0.0) {
            (true, true) => f.write_str("Θ(1)"),
            (true, false) => write!(f, "Θ((log τ)^{})", self.log_power),
            (false, true) => write!(f, "Θ(τ^{})", self.exponent),
            (false, false) => write!(f, "Θ(τ^{} (log τ)^{})", self.exponent, self.log_power),
        }
    }
}

pub fn beta_order(schedule: &ScheduleSpec) -> Result<BetaOrder, OracleError> {
    let order = |exponent, log_power, exactly_one| {
        Ok(BetaOrder {
            exponent,
            log_power,
            exactly_one,
        })
    };
    match &schedule.kind {
        ScheduleKind::Fcfs | ScheduleKind::Greedy => order(0.0, 0.0, true),
        ScheduleKind::PowerLaw { gamma, .. } if *gamma <= 0.5 => order(0.0, 0.0, false),
        ScheduleKind::PowerLaw { gamma, .. } => order(gamma - 0.5, 0.0, false),
        ScheduleKind::Balanced { .. } => order(0.0, 1.0 / 3.0, false),
        ScheduleKind::Patient => order(0.5, 0.0, false),
        ScheduleKind::CustomThreshold { .. } => Err(OracleError::NotApplicable(
            "custom threshold tables have no closed form".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeLunch {
    pub critical_gamma: f64,
    /// Half-open `(lo, hi]`, or `None` when empty.
    pub window: Option<(f64, f64)>,
}

/// Decay-model phase boundary `γ = 1/δ` and the range of `γ` where both
/// ratios stay bounded.
pub fn free_lunch_window(delta: f64) -> Result<FreeLunch, OracleError> {
    if !(delta > 1.0 && delta.is_finite()) {
        return Err(OracleError::Argument(format!(
            "δ = {delta}: the patient cost is only finite for δ > 1"
        )));
    }
    let critical_gamma = 1.0 / delta;
    let window = (delta > 2.0).then_some((critical_gamma, 0.5));
    Ok(FreeLunch { critical_gamma, window })
}

/// `P[Y > n]` where `Y` counts fair-coin flips until both faces have shown
/// at least twice.
pub fn two_each_tail(n: u64) -> f64 {
    if n <= 3 {
        return 1.0;
    }
    // at most one head or at most one tail; disjoint once n ≥ 4
    2.0 * (n as f64 + 1.0) / (n as f64).exp2()
}

/// `E[Y] = Σ_{n ≥ 0} P[Y > n]`, which sums to 11/2.
pub fn expected_arrivals_two_each() -> f64 {
    let mut acc = Neumaier::default();
    for n in (0..=200).rev() {
        acc.add(two_each_tail(n));
    }
    acc.value()
}

/// `Σ_{k=1}^{n} 1 / (2^k k)`, which tends to `log 2`.
pub fn log2_series(n: u64) -> f64 {
    let mut acc = Neumaier::default();
    for k in (1..=n).rev() {
        acc.add(1.0 / ((k as f64).exp2() * k as f64));
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn buck_examples() {
        assert_eq!(expected_min_k_assignment(1, 1, 1).unwrap(), 1.0);
        assert!(close(expected_min_k_assignment(2, 2, 2).unwrap(), 1.25, 1e-15));
        assert!(close(expected_min_k_assignment(3, 2, 1).unwrap(), 1.0 / 6.0, 1e-15));
        assert!(close(expected_min_k_assignment(5, 5, 5).unwrap(), 1.46361, 5e-6));
        assert!(expected_min_k_assignment(2, 3, 3).is_err());
        assert!(expected_min_k_assignment(2, 3, 0).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn patient_bounds_examples() {
        let b = patient_cost_bounds(1.0, 1.0).unwrap();
        assert!(close(b.lower, 0.693147, 1e-6) && close(b.upper, 1.644934, 1e-6));
        assert!(close(patient_cost_bounds(2.0, 1.0).unwrap().lower, 0.346574, 1e-6));
        assert!(patient_cost_bounds(1.0, 2.0).is_err());
        assert!(patient_cost_bounds(1.0, 0.0).is_err());
    }

    #[test]
    fn greedy_wait_examples() {
        assert_eq!(greedy_expected_wait(0.0), 0.0);
        assert!(close(greedy_expected_wait(9.0), 18.0, 1e-12));
        assert!(close(greedy_expected_wait(1e4), 666_666.666_666_7, 1e-6));
    }

    #[test]
    fn abs_walk_examples() {
        assert_eq!(expected_abs_walk(0), 0.0);
        assert_eq!(expected_abs_walk(1), 1.0);
        assert_eq!(expected_abs_walk(2), 1.0);
        assert_eq!(expected_abs_walk(4), 1.5);
        assert_eq!(expected_abs_walk(3), 1.5);
        let v = expected_abs_walk(100);
        assert!((6.7..=12.3).contains(&v), "{v}");
    }

    #[test]
    fn abs_walk_branches_agree() {
        // the exact-integer branch and the log-gamma branch overlap in range
        for k in (2..=60).step_by(2) {
            let kf = k as f64;
            let lg = (kf.ln() + ln_gamma(kf + 1.0) - 2.0 * ln_gamma(kf / 2.0 + 1.0) - kf * LN_2).exp();
            let exact = expected_abs_walk(k);
            assert!((lg - exact).abs() < 1e-11 * exact, "k = {k}");
        }
        // a_{k+2} = a_k (k + 1) / k for even k
        for k in (2..=400).step_by(2) {
            let lhs = expected_abs_walk(k + 2);
            let rhs = expected_abs_walk(k) * (k as f64 + 1.0) / k as f64;
            assert!((lhs - rhs).abs() < 1e-10 * lhs, "k = {k}");
        }
    }

    #[test]
    fn zeta_examples() {
        assert!(close(zeta(2.0).unwrap(), basel(), 1e-12));
        assert!(close(zeta(4.0).unwrap(), PI.powi(4) / 90.0, 1e-12));
        assert!(close(zeta(1.5).unwrap(), 2.612_375_348_685_488, 1e-11));
        assert!(close(zeta(1.35).unwrap(), 3.459_237_275_554_87, 1e-9));
        assert!(zeta(1.0).is_err());
        assert!(zeta(0.5).is_err());
    }

    #[test]
    fn zeta_against_direct_sum() {
        // tail of Σ n^{-s} beyond M lies between the two integrals
        for s in [1.2f64, 2.5, 3.0, 6.0] {
            let m = 200_000u64;
            let partial: f64 = (1..=m).rev().map(|n| (n as f64).powf(-s)).sum();
            let lo = partial + ((m + 1) as f64).powf(1.0 - s) / (s - 1.0);
            let hi = partial + (m as f64).powf(1.0 - s) / (s - 1.0);
            let z = zeta(s).unwrap();
            assert!(z >= lo - 1e-9 && z <= hi + 1e-9, "s = {s}: {z} not in [{lo}, {hi}]");
        }
    }

    #[test]
    fn alpha_examples() {
        let patient = alpha_bounds(&ScheduleSpec::patient(), 10, 1.0, 1.0, 1.0).unwrap();
        assert_eq!((patient.lower, patient.upper), (1.0, 1.0));

        let crit = ScheduleSpec::power_law(0.5, 1.0).unwrap();
        let a = 10f64.exp().round() as u64;
        let b = alpha_bounds(&crit, a, 1.0, 1.0, 1.0).unwrap();
        assert!(close(b.lower, 2.026, 1e-3), "{}", b.lower);
        assert_eq!(b.regime, Regime::Critical);

        let sup = ScheduleSpec::power_law(1.0, 1.0).unwrap();
        let b = alpha_bounds(&sup, 100, 1.0, 1.0, 1.0).unwrap();
        assert!(close(b.upper, 2.3732, 1e-4));

        let g = alpha_bounds(&ScheduleSpec::greedy(), 100, 1.0, 1.0, 1.0).unwrap();
        assert!(g.upper.is_infinite() && close(g.lower, 60.0 / (5.0 * PI * PI), 1e-12));

        let f = alpha_bounds(&ScheduleSpec::fcfs(), 1000, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(f.lower, f.upper);

        let sub = alpha_bounds(&ScheduleSpec::power_law(0.25, 1.0).unwrap(), 10_000, 1.0, 1.0, 1.0).unwrap();
        assert!(sub.lower < sub.upper);
        assert!(close(sub.lower, 4.0 / (PI * PI) * 10.0, 1e-9));
        assert!(close(sub.upper, 3.0 / LN_2 * 100.0, 1e-9));

        assert!(alpha_bounds(&ScheduleSpec::balanced(1.0).unwrap(), 100, 1.0, 1.0, 1.0).is_err());
        assert!(alpha_bounds(&ScheduleSpec::greedy(), 1, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn beta_examples() {
        let b = beta_order(&ScheduleSpec::fcfs()).unwrap();
        assert!(b.exactly_one);
        assert_eq!(b.to_string(), "1");
        let b = beta_order(&ScheduleSpec::power_law(0.75, 1.0).unwrap()).unwrap();
        assert!(close(b.exponent, 0.25, 1e-15));
        assert_eq!(beta_order(&ScheduleSpec::patient()).unwrap().exponent, 0.5);
        assert_eq!(
            beta_order(&ScheduleSpec::power_law(0.5, 1.0).unwrap())
                .unwrap()
                .exponent,
            0.0
        );
        assert_eq!(
            beta_order(&ScheduleSpec::balanced(1.0).unwrap()).unwrap().to_string(),
            "Θ((log τ)^0.3333333333333333)"
        );
    }

    #[test]
    fn free_lunch_examples() {
        let w = free_lunch_window(2.0).unwrap();
        assert_eq!(w.critical_gamma, 0.5);
        assert_eq!(w.window, None);
        let w = free_lunch_window(3.0).unwrap();
        assert!(close(w.critical_gamma, 1.0 / 3.0, 1e-15));
        assert_eq!(w.window, Some((1.0 / 3.0, 0.5)));
        let w = free_lunch_window(1.5).unwrap();
        assert!(close(w.critical_gamma, 0.6667, 1e-4) && w.window.is_none());
        assert!(free_lunch_window(1.0).is_err());
    }

    #[test]
    fn two_each_values() {
        assert_eq!(two_each_tail(3), 1.0);
        assert_eq!(two_each_tail(4), 0.625);
        assert!(close(expected_arrivals_two_each(), 5.5, 1e-14));
    }

    #[test]
    fn two_each_tail_by_enumeration() {
        for n in 0..=16u32 {
            let short = (0u32..1 << n)
                .filter(|bits| {
                    let heads = bits.count_ones();
                    heads < 2 || n - heads < 2
                })
                .count();
            assert_eq!(two_each_tail(n as u64), short as f64 / (n as f64).exp2(), "n = {n}");
        }
    }

    #[test]
    fn log2_series_converges() {
        assert!(close(log2_series(60), LN_2, 1e-12));
        assert!(log2_series(5) < LN_2);
    }
}
