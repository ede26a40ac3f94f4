//! Match-cost rates and reproducible exponential cost draws.
//!
//! The cost `w_ij` of pairing client `i` with provider `j` is exponential with
//! rate `λ_ij`. Draws are counter-style: the uniform behind `w_ij` is a hash
//! of `(run_seed, i, j)`, so a pair's cost is fixed for the whole run and
//! does not depend on which pairs were inspected before it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::{hash4, open_unit, tags};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostModelError {
    #[error("invalid rate model: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// How `λ_ij` is generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RateMode {
    /// Every pair has the same rate.
    Constant,
    /// `λ_ij` uniform on `[λ_under, λ_over]`, independently per pair.
    UniformIid,
    /// One factor per agent, uniform on `[factor_lo, factor_hi]`, with
    /// `λ_ij = clamp(f_i · f_j, λ_under, λ_over)`.
    ProductForm { factor_lo: f64, factor_hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub mode: RateMode,
    pub lambda_under: f64,
    pub lambda_over: f64,
    pub lambda_mean: f64,
}

impl RateModel {
    pub fn constant(lambda: f64) -> Result<Self, CostModelError> {
        let model = Self {
            mode: RateMode::Constant,
            lambda_under: lambda,
            lambda_over: lambda,
            lambda_mean: lambda,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn uniform_iid(lambda_under: f64, lambda_over: f64) -> Result<Self, CostModelError> {
        let model = Self {
            mode: RateMode::UniformIid,
            lambda_under,
            lambda_over,
            lambda_mean: 0.5 * (lambda_under + lambda_over),
        };
        model.validate()?;
        Ok(model)
    }

    /// Product-form rates. The asymptotic mean rate is computed by midpoint
    /// quadrature of the clamped product over the factor square.
    pub fn product_form(
        factor_lo: f64,
        factor_hi: f64,
        lambda_under: f64,
        lambda_over: f64,
    ) -> Result<Self, CostModelError> {
        if !(factor_lo > 0.0 && factor_lo <= factor_hi && factor_hi.is_finite()) {
            return Err(CostModelError::Config(format!(
                "product-form factors must satisfy 0 < lo <= hi, got [{factor_lo}, {factor_hi}]"
            )));
        }
        check_bounds(lambda_under, lambda_over)?;
        const GRID: usize = 512;
        let step = (factor_hi - factor_lo) / GRID as f64;
        let mut acc = 0.0;
        for a in 0..GRID {
            let fa = factor_lo + (a as f64 + 0.5) * step;
            for b in 0..GRID {
                let fb = factor_lo + (b as f64 + 0.5) * step;
                acc += (fa * fb).clamp(lambda_under, lambda_over);
            }
        }
        let model = Self {
            mode: RateMode::ProductForm { factor_lo, factor_hi },
            lambda_under,
            lambda_over,
            lambda_mean: (acc / (GRID * GRID) as f64).clamp(lambda_under, lambda_over),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), CostModelError> {
        check_bounds(self.lambda_under, self.lambda_over)?;
        if !(self.lambda_under <= self.lambda_mean && self.lambda_mean <= self.lambda_over) {
            return Err(CostModelError::Config(format!(
                "mean rate {} outside [{}, {}]",
                self.lambda_mean, self.lambda_under, self.lambda_over
            )));
        }
        match self.mode {
            RateMode::Constant if self.lambda_under != self.lambda_over => {
                Err(CostModelError::Config("constant mode needs λ_under = λ_over".into()))
            }
            RateMode::ProductForm { factor_lo, factor_hi } if !(factor_lo > 0.0 && factor_lo <= factor_hi) => {
                Err(CostModelError::Config(format!(
                    "product-form factors must satisfy 0 < lo <= hi, got [{factor_lo}, {factor_hi}]"
                )))
            }
            _ => Ok(()),
        }
    }

    /// True when every pair has rate exactly 1.
    pub fn is_unit(&self) -> bool {
        self.lambda_under == 1.0 && self.lambda_over == 1.0
    }

    /// Per-agent factor of the product form (1 for the other modes).
    pub fn agent_factor(&self, agent_id: u64, run_seed: u64) -> f64 {
        match self.mode {
            RateMode::ProductForm { factor_lo, factor_hi } => {
                let u = open_unit(hash4(run_seed, tags::AGENT_FACTOR, agent_id, 0));
                factor_lo + u * (factor_hi - factor_lo)
            }
            _ => 1.0,
        }
    }

    /// Parses `const:<λ>`, `uniform:<lo>:<hi>` or
    /// `product:<factor_lo>:<factor_hi>:<λ_under>:<λ_over>`.
    pub fn parse(text: &str) -> Result<Self, CostModelError> {
        let parts: Vec<&str> = text.trim().split(':').collect();
        let nums = |xs: &[&str]| -> Result<Vec<f64>, CostModelError> {
            xs.iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| CostModelError::Config(format!("`{s}` is not a number in rate `{text}`")))
                })
                .collect()
        };
        match (parts[0], parts.len()) {
            ("const", 2) => Self::constant(nums(&parts[1..])?[0]),
            ("uniform", 3) => {
                let v = nums(&parts[1..])?;
                Self::uniform_iid(v[0], v[1])
            }
            ("product", 5) => {
                let v = nums(&parts[1..])?;
                Self::product_form(v[0], v[1], v[2], v[3])
            }
            _ => Err(CostModelError::Config(format!(
                "unrecognised rate model `{text}` (expected const:<λ> | uniform:<lo>:<hi> | product:<flo>:<fhi>:<lo>:<hi>)"
            ))),
        }
    }

    /// Inverse of [`RateModel::parse`].
    pub fn label(&self) -> String {
        match self.mode {
            RateMode::Constant => format!("const:{}", self.lambda_mean),
            RateMode::UniformIid => format!("uniform:{}:{}", self.lambda_under, self.lambda_over),
            RateMode::ProductForm { factor_lo, factor_hi } => format!(
                "product:{factor_lo}:{factor_hi}:{}:{}",
                self.lambda_under, self.lambda_over
            ),
        }
    }
}

fn check_bounds(under: f64, over: f64) -> Result<(), CostModelError> {
    if !(under > 0.0 && under.is_finite()) {
        return Err(CostModelError::Config(format!(
            "λ_under must be positive and finite, got {under}"
        )));
    }
    if !(under <= over && over.is_finite()) {
        return Err(CostModelError::Config(format!(
            "need λ_under <= λ_over, got {under} > {over}"
        )));
    }
    Ok(())
}

/// A realised pair: its rate and its cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCost {
    pub client_id: u64,
    pub provider_id: u64,
    pub rate: f64,
    pub cost: f64,
}

/// Validated `(model, run_seed)` used on the engine's hot path.
#[derive(Debug, Clone, Copy)]
pub struct CostSampler {
    model: RateModel,
    run_seed: u64,
}

impl CostSampler {
    pub fn new(model: RateModel, run_seed: u64) -> Result<Self, CostModelError> {
        model.validate()?;
        Ok(Self { model, run_seed })
    }

    pub fn model(&self) -> &RateModel {
        &self.model
    }

    #[inline]
    pub fn rate(&self, client_id: u64, provider_id: u64) -> f64 {
        let m = &self.model;
        match m.mode {
            RateMode::Constant => m.lambda_mean,
            RateMode::UniformIid => {
                let u = open_unit(hash4(self.run_seed, tags::PAIR_RATE, client_id, provider_id));
                m.lambda_under + u * (m.lambda_over - m.lambda_under)
            }
            RateMode::ProductForm { .. } => {
                let fi = m.agent_factor(client_id, self.run_seed);
                let fj = m.agent_factor(provider_id, self.run_seed);
                (fi * fj).clamp(m.lambda_under, m.lambda_over)
            }
        }
    }

    /// `w_ij`, always strictly positive.
    #[inline]
    pub fn cost(&self, client_id: u64, provider_id: u64) -> f64 {
        let u = open_unit(hash4(self.run_seed, tags::PAIR_COST, client_id, provider_id));
        -u.ln() / self.rate(client_id, provider_id)
    }

    /// A cost for the pair's fixed rate driven by an independent uniform
    /// stream `draw_seed`, for models that redraw costs over time.
    #[inline]
    pub fn cost_redrawn(&self, draw_seed: u64, client_id: u64, provider_id: u64) -> f64 {
        let u = open_unit(hash4(draw_seed, tags::PAIR_COST, client_id, provider_id));
        -u.ln() / self.rate(client_id, provider_id)
    }

    /// Integer key whose order refines that of [`CostSampler::cost`]. With a
    /// constant rate it skips the logarithm.
    #[inline]
    pub fn order_key(&self, client_id: u64, provider_id: u64) -> u64 {
        match self.model.mode {
            RateMode::Constant => {
                let bits = hash4(self.run_seed, tags::PAIR_COST, client_id, provider_id) >> 12;
                ((1u64 << 52) - 1) - bits
            }
            _ => self.cost(client_id, provider_id).to_bits(),
        }
    }

    pub fn pair(&self, client_id: u64, provider_id: u64) -> PairCost {
        PairCost {
            client_id,
            provider_id,
            rate: self.rate(client_id, provider_id),
            cost: self.cost(client_id, provider_id),
        }
    }
}

/// `λ_ij` for one pair.
pub fn rate_of(client_id: u64, provider_id: u64, model: &RateModel, run_seed: u64) -> Result<f64, CostModelError> {
    Ok(CostSampler::new(*model, run_seed)?.rate(client_id, provider_id))
}

/// `w_ij ~ exp(λ_ij)` for one pair, fixed per `(ids, model, run_seed)`.
pub fn draw_pair_cost(
    client_id: u64,
    provider_id: u64,
    model: &RateModel,
    run_seed: u64,
) -> Result<f64, CostModelError> {
    Ok(CostSampler::new(*model, run_seed)?.cost(client_id, provider_id))
}

/// Expectation of the minimum of independent exponentials: `1 / Σ λ_j`.
pub fn min_of_exponentials_mean(rates: &[f64]) -> Result<f64, CostModelError> {
    if rates.is_empty() {
        return Err(CostModelError::Argument("rate list is empty".into()));
    }
    if let Some(bad) = rates.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(CostModelError::Argument(format!(
            "rates must be positive and finite, got {bad}"
        )));
    }
    Ok(1.0 / rates.iter().sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    /// Distinct pairs laid out on a grid of clients x providers.
    fn pairs(n: u64) -> impl Iterator<Item = (u64, u64)> {
        (0..n).map(|i| (i / 1000, 1_000_000 + i % 1000))
    }

    #[test]
    fn constant_rate_is_constant() {
        let m = RateModel::constant(1.0).unwrap();
        for (c, p) in pairs(100) {
            assert_eq!(rate_of(c, p, &m, 9).unwrap(), 1.0);
        }
    }

    #[test]
    fn uniform_rates_average_to_midpoint() {
        let m = RateModel::uniform_iid(0.5, 2.0).unwrap();
        let xs: Vec<f64> = pairs(100_000).map(|(c, p)| rate_of(c, p, &m, 3).unwrap()).collect();
        assert!(xs.iter().all(|r| (0.5..=2.0).contains(r)));
        let (mean, _) = mean_var(&xs);
        assert!((mean - 1.25).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn repeated_queries_are_identical() {
        for m in [
            RateModel::constant(1.0).unwrap(),
            RateModel::uniform_iid(0.5, 2.0).unwrap(),
            RateModel::product_form(0.5, 2.0, 0.5, 2.0).unwrap(),
        ] {
            let a = draw_pair_cost(17, 42, &m, 5).unwrap();
            let r = rate_of(17, 42, &m, 5).unwrap();
            // interleave unrelated queries
            for (c, p) in pairs(50) {
                draw_pair_cost(c, p, &m, 5).unwrap();
            }
            assert_eq!(draw_pair_cost(17, 42, &m, 5).unwrap(), a);
            assert_eq!(rate_of(17, 42, &m, 5).unwrap(), r);
        }
    }

    #[test]
    fn exponential_means() {
        let one = RateModel::constant(1.0).unwrap();
        let xs: Vec<f64> = pairs(100_000)
            .map(|(c, p)| draw_pair_cost(c, p, &one, 11).unwrap())
            .collect();
        assert!(xs.iter().all(|&w| w > 0.0));
        assert!((mean_var(&xs).0 - 1.0).abs() < 0.02);

        let two = RateModel::constant(2.0).unwrap();
        let ys: Vec<f64> = pairs(100_000)
            .map(|(c, p)| draw_pair_cost(c, p, &two, 11).unwrap())
            .collect();
        assert!((mean_var(&ys).0 - 0.5).abs() < 0.01);
    }

    #[test]
    fn scaling_law_holds_in_distribution() {
        let n = 100_000;
        let lambda = 3.0;
        let fast = RateModel::constant(lambda).unwrap();
        let unit = RateModel::constant(1.0).unwrap();
        let a: Vec<f64> = pairs(n)
            .map(|(c, p)| draw_pair_cost(c, p, &fast, 21).unwrap())
            .collect();
        // different seed, so the samples are independent
        let b: Vec<f64> = pairs(n)
            .map(|(c, p)| draw_pair_cost(c, p, &unit, 22).unwrap() / lambda)
            .collect();
        let (ma, va) = mean_var(&a);
        let (mb, vb) = mean_var(&b);
        let nf = n as f64;
        let se_mean = ((va + vb) / nf).sqrt();
        assert!((ma - mb).abs() < 3.0 * se_mean, "{ma} vs {mb}");
        // var of the sample variance of an exponential: (μ4 - σ^4)/n = 8σ^4/n
        let se_var = (8.0 * va * va / nf + 8.0 * vb * vb / nf).sqrt();
        assert!((va - vb).abs() < 3.0 * se_var, "{va} vs {vb}");
    }

    #[test]
    fn ks_distance_to_unit_exponential() {
        let one = RateModel::constant(1.0).unwrap();
        let mut xs: Vec<f64> = pairs(100_000)
            .map(|(c, p)| draw_pair_cost(c, p, &one, 31).unwrap())
            .collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = 1.0 - (-x).exp();
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 0.01, "KS distance {d}");
    }

    #[test]
    fn product_form_respects_bounds() {
        let m = RateModel::product_form(0.5, 2.0, 0.5, 2.0).unwrap();
        assert!(m.lambda_under <= m.lambda_mean && m.lambda_mean <= m.lambda_over);
        for (c, p) in pairs(2000) {
            let r = rate_of(c, p, &m, 1).unwrap();
            assert!((0.5..=2.0).contains(&r));
        }
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(RateModel::constant(0.0).is_err());
        assert!(RateModel::uniform_iid(2.0, 1.0).is_err());
        assert!(RateModel::uniform_iid(-1.0, 1.0).is_err());
        let broken = RateModel {
            mode: RateMode::UniformIid,
            lambda_under: 0.0,
            lambda_over: 1.0,
            lambda_mean: 0.5,
        };
        assert!(rate_of(1, 2, &broken, 0).is_err());
        assert!(draw_pair_cost(1, 2, &broken, 0).is_err());
    }

    #[test]
    fn parse_round_trips() {
        for text in ["const:1", "uniform:0.5:2", "product:0.5:2:0.5:2"] {
            let m = RateModel::parse(text).unwrap();
            assert_eq!(RateModel::parse(&m.label()).unwrap(), m);
        }
        assert!(RateModel::parse("gauss:1").is_err());
        assert!(RateModel::parse("const:x").is_err());
    }

    #[test]
    fn min_of_exponentials_closed_form() {
        assert_eq!(min_of_exponentials_mean(&[1.0]).unwrap(), 1.0);
        assert_eq!(min_of_exponentials_mean(&[1.0; 4]).unwrap(), 0.25);
        assert!((min_of_exponentials_mean(&[1.0, 2.0, 3.0]).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!(min_of_exponentials_mean(&[]).is_err());
        assert!(min_of_exponentials_mean(&[1.0, 0.0]).is_err());
    }
}
