//! The discrete-event market loop.
//!
//! Arrivals are processed in time order. After each arrival the schedule is
//! asked whether the next matching event fires; if so one couple is matched
//! and removed, and the question is asked again. The waiting functional
//! `W(τ) = ∫ R dτ` is integrated exactly, since the number of unmatched agents
//! `R` is constant between arrivals.

use std::collections::VecDeque;
use std::fmt;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arrival::{Agent, ArrivalError, ArrivalSource, PoissonStream, Side, TapeSource, RUNAWAY_ARRIVALS};
use crate::assignment::{min_k_assignment, AssignmentError, CostMatrix};
use crate::cost_model::{CostModelError, CostSampler, RateMode, RateModel};
use crate::schedules::{PairingRule, ScheduleError, ScheduleSpec};
use crate::seeding::{derive_seed, hash4, open_unit, replication_seed, tags};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Arrival(#[from] ArrivalError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Cost(#[from] CostModelError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error("runaway run: more than {0} arrivals")]
    Runaway(u64),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Functional form of the decay-mode cost `g(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecayForm {
    /// `c / min(x, y)^δ`
    #[default]
    MinPow,
    /// `c / (x y)^{δ/2}`
    GeoMean,
}

/// Aggregate cost model: the k-th match costs `g(m_c, m_p)` given the
/// unmatched counts at the moment of clearing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    pub delta: f64,
    pub scale: f64,
    #[serde(default)]
    pub form: DecayForm,
}

impl DecayModel {
    pub fn new(delta: f64, scale: f64) -> Result<Self, EngineError> {
        let model = Self {
            delta,
            scale,
            form: DecayForm::MinPow,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.delta > 1.0 && self.delta.is_finite()) {
            return Err(EngineError::Config(format!(
                "decay exponent δ = {} must exceed 1",
                self.delta
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(EngineError::Config(format!(
                "decay scale c = {} must be positive",
                self.scale
            )));
        }
        Ok(())
    }

    pub fn g(&self, x: u64, y: u64) -> f64 {
        let (x, y) = (x.max(1) as f64, y.max(1) as f64);
        match self.form {
            DecayForm::MinPow => self.scale / x.min(y).powf(self.delta),
            DecayForm::GeoMean => self.scale / (x * y).powf(0.5 * self.delta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CostMode {
    /// Pair costs drawn from the rate model.
    Micro(RateModel),
    /// Per-event cost `g(m_c, m_p)`; couples are removed oldest-first.
    Decay(DecayModel),
    /// Zero costs, oldest-first removal. Only the waiting functional is
    /// meaningful, and it does not depend on who is matched.
    WaitingOnly,
}

impl CostMode {
    pub fn label(&self) -> String {
        match self {
            CostMode::Micro(m) => format!("micro:{}", m.label()),
            CostMode::Decay(d) => format!("decay:{:?}:{}:{}", d.form, d.delta, d.scale),
            CostMode::WaitingOnly => "waiting-only".into(),
        }
    }
}

/// Whether a pair's micro cost is drawn once per run or afresh at every
/// matching event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostRefresh {
    /// Every present pair has an independent exp(λ_ij) cost at each matching
    /// event; rates stay fixed per pair.
    #[default]
    PerEvent,
    /// `w_ij` is drawn once and kept for the whole run.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Run the clock to `τ_max`.
    Horizon(f64),
    /// Stop at the instant of the `A`-th match.
    Matches(u64),
}

#[derive(Debug, Clone)]
pub enum SourceSpec {
    Poisson,
    Tape(TapeSource),
}

/// Where `(τ, W)` checkpoints are taken.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointPolicy {
    /// After every arrival; interpolation between them is exact.
    EveryEvent,
    /// Only at these (sorted) times, plus the start and stop.
    Grid(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub schedule: ScheduleSpec,
    pub cost_mode: CostMode,
    pub stop: StopRule,
    pub seed: u64,
    pub source: SourceSpec,
    pub refresh: CostRefresh,
    /// Patient clearing time; defaults to `2A + 4√A` under a match target.
    pub patient_horizon: Option<f64>,
    pub checkpoints: CheckpointPolicy,
    pub max_arrivals: u64,
}

impl RunConfig {
    pub fn new(schedule: ScheduleSpec, cost_mode: CostMode, stop: StopRule, seed: u64) -> Self {
        Self {
            schedule,
            cost_mode,
            stop,
            seed,
            source: SourceSpec::Poisson,
            refresh: CostRefresh::PerEvent,
            patient_horizon: None,
            checkpoints: CheckpointPolicy::EveryEvent,
            max_arrivals: RUNAWAY_ARRIVALS,
        }
    }

    pub fn with_tape(mut self, tape: TapeSource) -> Self {
        self.source = SourceSpec::Tape(tape);
        self
    }

    pub fn with_refresh(mut self, refresh: CostRefresh) -> Self {
        self.refresh = refresh;
        self
    }

    pub fn with_checkpoints(mut self, policy: CheckpointPolicy) -> Self {
        self.checkpoints = policy;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.schedule.validate()?;
        match &self.cost_mode {
            CostMode::Micro(m) => m.validate()?,
            CostMode::Decay(d) => {
                d.validate()?;
                if self.schedule.is_patient() {
                    return Err(EngineError::Config("decay mode cannot run the patient schedule".into()));
                }
                if self.schedule.pairing_rule == PairingRule::ArrivalOrder {
                    return Err(EngineError::Config("decay mode cannot run fcfs pairing".into()));
                }
            }
            CostMode::WaitingOnly => {}
        }
        match self.stop {
            StopRule::Horizon(h) if !(h.is_finite() && h >= 0.0) => {
                return Err(EngineError::Config(format!(
                    "horizon {h} must be finite and non-negative"
                )));
            }
            StopRule::Matches(0) => return Err(EngineError::Config("match target must be at least 1".into())),
            _ => {}
        }
        if let Some(h) = self.patient_horizon {
            if !(h.is_finite() && h >= 0.0) {
                return Err(EngineError::Config(format!(
                    "patient horizon {h} must be finite and non-negative"
                )));
            }
        }
        if let CheckpointPolicy::Grid(g) = &self.checkpoints {
            if g.windows(2).any(|w| w[1] < w[0]) || g.iter().any(|t| !t.is_finite()) {
                return Err(EngineError::Config("checkpoint grid must be finite and sorted".into()));
            }
        }
        Ok(())
    }

    fn patient_clear_time(&self) -> f64 {
        match (self.patient_horizon, self.stop) {
            (Some(h), _) => h,
            (None, StopRule::Horizon(h)) => h,
            (None, StopRule::Matches(a)) => default_patient_horizon(a),
        }
    }
}

/// `2A + 4√A`: enough arrivals for `A` on each side with high probability.
pub fn default_patient_horizon(target: u64) -> f64 {
    let a = target as f64;
    2.0 * a + 4.0 * a.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub k: u64,
    pub time: f64,
    pub client_id: u64,
    pub provider_id: u64,
    pub cost: f64,
    /// Unmatched clients at the instant of clearing, the matched one included.
    pub m_c: u64,
    pub m_p: u64,
    pub cum_cost: f64,
    pub cum_wait: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalState {
    pub clock: f64,
    pub arrivals: u64,
    pub n_clients: u64,
    pub n_providers: u64,
    pub matches: u64,
    pub wait: f64,
    pub total_cost: f64,
    pub max_clears_per_arrival: u64,
}

impl FinalState {
    pub fn unmatched(&self) -> u64 {
        self.n_clients + self.n_providers - 2 * self.matches
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub schedule: String,
    pub cost_mode: String,
    pub stop: StopRule,
    pub seed: u64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<MatchRecord>,
    pub wait_checkpoints: Vec<(f64, f64)>,
    pub summary: FinalState,
    pub meta: RunMeta,
}

impl RunTrace {
    /// Cumulative cost after `a` matches, if the run got that far.
    pub fn cum_cost_at(&self, a: u64) -> Option<f64> {
        if a == 0 {
            return Some(0.0);
        }
        self.records.get(a as usize - 1).map(|r| r.cum_cost)
    }

    /// `W(τ)` by linear interpolation between checkpoints; `None` past the end.
    pub fn wait_at(&self, tau: f64) -> Option<f64> {
        let cp = &self.wait_checkpoints;
        let last = cp.last()?;
        if tau > last.0 || tau < 0.0 {
            return None;
        }
        let i = cp.partition_point(|&(t, _)| t < tau);
        let (t1, w1) = cp[i];
        if t1 == tau || i == 0 {
            return Some(w1);
        }
        let (t0, w0) = cp[i - 1];
        Some(w0 + (w1 - w0) * (tau - t0) / (t1 - t0))
    }

    pub fn total_cost(&self) -> f64 {
        self.summary.total_cost
    }
}

#[derive(Clone, Copy)]
struct Waiting {
    id: u64,
}

struct ClientSlot {
    id: u64,
    best_key: u64,
    best_provider: u64,
}

/// Present agents with each client's cheapest provider cached.
struct MinEdgePools {
    sampler: CostSampler,
    clients: Vec<ClientSlot>,
    providers: Vec<Waiting>,
}

impl MinEdgePools {
    fn best_for(&self, client_id: u64) -> (u64, u64) {
        let mut best = (u64::MAX, u64::MAX);
        for p in &self.providers {
            let cand = (self.sampler.order_key(client_id, p.id), p.id);
            if cand < best {
                best = cand;
            }
        }
        best
    }

    fn add(&mut self, agent: Agent) {
        match agent.side {
            Side::Client => {
                let (best_key, best_provider) = self.best_for(agent.id);
                self.clients.push(ClientSlot {
                    id: agent.id,
                    best_key,
                    best_provider,
                });
            }
            Side::Provider => {
                let pid = agent.id;
                for c in &mut self.clients {
                    let key = self.sampler.order_key(c.id, pid);
                    if (key, pid) < (c.best_key, c.best_provider) {
                        c.best_key = key;
                        c.best_provider = pid;
                    }
                }
                self.providers.push(Waiting { id: pid });
            }
        }
    }

    /// Removes the globally cheapest couple; ties go to the lower client id,
    /// then the lower provider id.
    fn take(&mut self) -> (u64, u64, f64) {
        let (ci, _) = self
            .clients
            .iter()
            .enumerate()
            .min_by_key(|(_, c)| (c.best_key, c.id, c.best_provider))
            .expect("take on empty pools");
        let client = self.clients.swap_remove(ci);
        let pid = client.best_provider;
        let pi = self
            .providers
            .iter()
            .position(|p| p.id == pid)
            .expect("cached provider is present");
        self.providers.swap_remove(pi);
        for i in 0..self.clients.len() {
            if self.clients[i].best_provider == pid {
                let (k, p) = self.best_for(self.clients[i].id);
                self.clients[i].best_key = k;
                self.clients[i].best_provider = p;
            }
        }
        (client.id, pid, self.sampler.cost(client.id, pid))
    }

    /// Optimal `k`-assignment over everyone present; pairs in client order.
    fn drain_optimal(&mut self, k: usize) -> Result<Vec<(u64, u64, f64)>, EngineError> {
        self.clients.sort_by_key(|c| c.id);
        self.providers.sort_by_key(|p| p.id);
        let matrix = CostMatrix::from_fn(self.clients.len(), self.providers.len(), |i, j| {
            self.sampler.cost(self.clients[i].id, self.providers[j].id)
        })?;
        let assignment = min_k_assignment(&matrix, k)?;
        let out: Vec<(u64, u64, f64)> = assignment
            .pairs
            .iter()
            .map(|&(i, j)| (self.clients[i].id, self.providers[j].id, matrix.get(i, j)))
            .collect();
        let (mut rows, mut cols): (Vec<usize>, Vec<usize>) = assignment.pairs.iter().copied().unzip();
        rows.sort_unstable();
        cols.sort_unstable();
        for &i in rows.iter().rev() {
            self.clients.remove(i);
        }
        for &j in cols.iter().rev() {
            self.providers.remove(j);
        }
        let ids: Vec<u64> = self.clients.iter().map(|c| c.id).collect();
        for (i, id) in ids.into_iter().enumerate() {
            let (k, p) = self.best_for(id);
            self.clients[i].best_key = k;
            self.clients[i].best_provider = p;
        }
        Ok(out)
    }
}

/// Per-event costs. The cheapest of independent exponentials is exponential
/// with the summed rate and falls on a pair with probability proportional to
/// its rate, so one event needs three uniforms rather than `m_c · m_p` draws.
struct FreshPools {
    rates: CostSampler,
    seed: u64,
    constant_rate: Option<f64>,
    clients: Vec<u64>,
    providers: Vec<u64>,
    /// `Σ_j λ_ij` over present providers; unused with a constant rate.
    row_sums: Vec<f64>,
}

impl FreshPools {
    fn new(model: RateModel, seed: u64) -> Result<Self, EngineError> {
        let constant_rate = matches!(model.mode, RateMode::Constant).then_some(model.lambda_mean);
        Ok(Self {
            rates: CostSampler::new(model, derive_seed(seed, tags::PAIR_RATE))?,
            seed,
            constant_rate,
            clients: Vec::new(),
            providers: Vec::new(),
            row_sums: Vec::new(),
        })
    }

    fn uniform(&self, k: u64, slot: u64) -> f64 {
        open_unit(hash4(self.seed, tags::EVENT_COST, k, slot))
    }

    /// Independent cost of one pair at event `k`, drawn explicitly.
    fn event_cost(&self, k: u64, client_id: u64, provider_id: u64) -> f64 {
        let draw_seed = hash4(self.seed, tags::EVENT_COST, k, u64::MAX);
        self.rates.cost_redrawn(draw_seed, client_id, provider_id)
    }

    fn add(&mut self, agent: Agent) {
        match agent.side {
            Side::Client => {
                if self.constant_rate.is_none() {
                    let s = self.providers.iter().map(|&p| self.rates.rate(agent.id, p)).sum();
                    self.row_sums.push(s);
                }
                self.clients.push(agent.id);
            }
            Side::Provider => {
                if self.constant_rate.is_none() {
                    for (c, s) in self.clients.iter().zip(self.row_sums.iter_mut()) {
                        *s += self.rates.rate(*c, agent.id);
                    }
                }
                self.providers.push(agent.id);
            }
        }
    }

    fn take(&mut self, k: u64) -> (u64, u64, f64) {
        let (m_c, m_p) = (self.clients.len(), self.providers.len());
        assert!(m_c > 0 && m_p > 0, "take on empty pools");
        let (u_cost, u_row, u_col) = (self.uniform(k, 0), self.uniform(k, 1), self.uniform(k, 2));
        let (ci, pi, total) = match self.constant_rate {
            Some(rate) => {
                let ci = ((u_row * m_c as f64) as usize).min(m_c - 1);
                let pi = ((u_col * m_p as f64) as usize).min(m_p - 1);
                (ci, pi, rate * (m_c * m_p) as f64)
            }
            None => {
                let total: f64 = self.row_sums.iter().sum();
                let ci = pick(self.row_sums.iter().copied(), u_row * total, m_c);
                let c = self.clients[ci];
                let row: Vec<f64> = self.providers.iter().map(|&p| self.rates.rate(c, p)).collect();
                let row_total: f64 = row.iter().sum();
                let pi = pick(row.into_iter(), u_col * row_total, m_p);
                (ci, pi, total)
            }
        };
        let c = self.clients.swap_remove(ci);
        let p = self.providers.swap_remove(pi);
        if self.constant_rate.is_none() {
            self.row_sums.swap_remove(ci);
            for (other, s) in self.clients.iter().zip(self.row_sums.iter_mut()) {
                *s = (*s - self.rates.rate(*other, p)).max(0.0);
            }
        }
        (c, p, -u_cost.ln() / total)
    }

    /// Optimal `k`-assignment on costs drawn for this one event.
    fn drain_optimal(&mut self, k: usize, event: u64) -> Result<Vec<(u64, u64, f64)>, EngineError> {
        self.clients.sort_unstable();
        self.providers.sort_unstable();
        let matrix = CostMatrix::from_fn(self.clients.len(), self.providers.len(), |i, j| {
            self.event_cost(event, self.clients[i], self.providers[j])
        })?;
        let assignment = min_k_assignment(&matrix, k)?;
        let out = assignment
            .pairs
            .iter()
            .map(|&(i, j)| (self.clients[i], self.providers[j], matrix.get(i, j)))
            .collect();
        let matched_c: Vec<u64> = assignment.pairs.iter().map(|&(i, _)| self.clients[i]).collect();
        let matched_p: Vec<u64> = assignment.pairs.iter().map(|&(_, j)| self.providers[j]).collect();
        self.clients.retain(|c| !matched_c.contains(c));
        self.providers.retain(|p| !matched_p.contains(p));
        if self.constant_rate.is_none() {
            self.row_sums = self
                .clients
                .iter()
                .map(|&c| self.providers.iter().map(|&p| self.rates.rate(c, p)).sum())
                .collect();
        }
        Ok(out)
    }
}

/// Index where the running sum of `weights` first exceeds `target`.
fn pick(weights: impl Iterator<Item = f64>, target: f64, len: usize) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    len - 1
}

enum FifoCost {
    Fresh(FreshPools),
    Pair(CostSampler),
    Decay(DecayModel),
    Zero,
}

/// Present agents in arrival order; the oldest couple is matched first.
struct FifoPools {
    cost: FifoCost,
    clients: VecDeque<Waiting>,
    providers: VecDeque<Waiting>,
}

impl FifoPools {
    fn add(&mut self, agent: Agent) {
        let w = Waiting { id: agent.id };
        match agent.side {
            Side::Client => self.clients.push_back(w),
            Side::Provider => self.providers.push_back(w),
        }
    }

    fn take(&mut self, k: u64) -> (u64, u64, f64) {
        let (m_c, m_p) = (self.clients.len() as u64, self.providers.len() as u64);
        let c = self.clients.pop_front().expect("take on empty pools");
        let p = self.providers.pop_front().expect("take on empty pools");
        let cost = match &self.cost {
            FifoCost::Fresh(f) => f.event_cost(k, c.id, p.id),
            FifoCost::Pair(s) => s.cost(c.id, p.id),
            FifoCost::Decay(d) => d.g(m_c, m_p),
            FifoCost::Zero => 0.0,
        };
        (c.id, p.id, cost)
    }
}

enum Pools {
    MinEdge(MinEdgePools),
    Fresh(FreshPools),
    Fifo(FifoPools),
}

impl Pools {
    fn build(config: &RunConfig) -> Result<Self, EngineError> {
        let cost_seed = cost_seed(config.seed);
        let fifo = |cost| {
            Pools::Fifo(FifoPools {
                cost,
                clients: VecDeque::new(),
                providers: VecDeque::new(),
            })
        };
        let fresh = config.refresh == CostRefresh::PerEvent;
        Ok(match (&config.cost_mode, config.schedule.pairing_rule) {
            (CostMode::Micro(m), PairingRule::MinEdge) if fresh => Pools::Fresh(FreshPools::new(*m, cost_seed)?),
            (CostMode::Micro(m), PairingRule::MinEdge) => Pools::MinEdge(MinEdgePools {
                sampler: CostSampler::new(*m, cost_seed)?,
                clients: Vec::new(),
                providers: Vec::new(),
            }),
            (CostMode::Micro(m), PairingRule::ArrivalOrder) if fresh => {
                fifo(FifoCost::Fresh(FreshPools::new(*m, cost_seed)?))
            }
            (CostMode::Micro(m), PairingRule::ArrivalOrder) => fifo(FifoCost::Pair(CostSampler::new(*m, cost_seed)?)),
            (CostMode::Decay(d), _) => fifo(FifoCost::Decay(*d)),
            (CostMode::WaitingOnly, _) => fifo(FifoCost::Zero),
        })
    }

    fn add(&mut self, agent: Agent) {
        match self {
            Pools::MinEdge(p) => p.add(agent),
            Pools::Fresh(p) => p.add(agent),
            Pools::Fifo(p) => p.add(agent),
        }
    }

    fn counts(&self) -> (u64, u64) {
        match self {
            Pools::MinEdge(p) => (p.clients.len() as u64, p.providers.len() as u64),
            Pools::Fresh(p) => (p.clients.len() as u64, p.providers.len() as u64),
            Pools::Fifo(p) => (p.clients.len() as u64, p.providers.len() as u64),
        }
    }

    /// Matches one couple as event `k`.
    fn take(&mut self, k: u64) -> (u64, u64, f64) {
        match self {
            Pools::MinEdge(p) => p.take(),
            Pools::Fresh(p) => p.take(k),
            Pools::Fifo(p) => p.take(k),
        }
    }

    /// Clears `k` couples in one event numbered `event`.
    fn drain(&mut self, k: usize, event: u64) -> Result<Vec<(u64, u64, f64)>, EngineError> {
        if k == 0 {
            return Ok(Vec::new());
        }
        match self {
            Pools::MinEdge(p) => p.drain_optimal(k),
            Pools::Fresh(p) => p.drain_optimal(k, event),
            Pools::Fifo(p) => Ok((0..k as u64).map(|i| p.take(event + i)).collect()),
        }
    }
}

/// Clock, counters and the exact waiting integral.
struct Market {
    clock: f64,
    wait: f64,
    n_clients: u64,
    n_providers: u64,
    matches: u64,
    total_cost: f64,
    arrivals: u64,
    max_clears: u64,
    checkpoints: Vec<(f64, f64)>,
    grid: Option<Vec<f64>>,
    grid_pos: usize,
    records: Vec<MatchRecord>,
}

impl Market {
    fn unmatched(&self) -> u64 {
        self.n_clients + self.n_providers - 2 * self.matches
    }

    /// Moves the clock to `t`, recording any grid checkpoints passed on the way.
    fn advance(&mut self, t: f64) {
        let r = self.unmatched() as f64;
        if let Some(grid) = &self.grid {
            while self.grid_pos < grid.len() && grid[self.grid_pos] <= t {
                let g = grid[self.grid_pos];
                if g >= self.clock {
                    self.checkpoints.push((g, self.wait + r * (g - self.clock)));
                }
                self.grid_pos += 1;
            }
        }
        if t > self.clock {
            self.wait += r * (t - self.clock);
            self.clock = t;
        }
    }

    fn checkpoint(&mut self) {
        if self.checkpoints.last() != Some(&(self.clock, self.wait)) {
            self.checkpoints.push((self.clock, self.wait));
        }
    }

    fn record(&mut self, (client_id, provider_id, cost): (u64, u64, f64), m_c: u64, m_p: u64) {
        self.matches += 1;
        self.total_cost += cost;
        self.records.push(MatchRecord {
            k: self.matches,
            time: self.clock,
            client_id,
            provider_id,
            cost,
            m_c,
            m_p,
            cum_cost: self.total_cost,
            cum_wait: self.wait,
        });
    }
}

/// Runs one replication with the source named in the config.
pub fn run(config: &RunConfig) -> Result<RunTrace, EngineError> {
    match &config.source {
        SourceSpec::Poisson => {
            let mut stream = PoissonStream::new(derive_seed(config.seed, tags::ARRIVAL_STREAM));
            run_with_source(config, &mut stream, "poisson")
        }
        SourceSpec::Tape(tape) => {
            let mut tape = TapeSource::new(tape.entries().to_vec())?;
            run_with_source(config, &mut tape, "tape")
        }
    }
}

/// Runs one replication pulling arrivals from `source`.
pub fn run_with_source(
    config: &RunConfig,
    source: &mut dyn ArrivalSource,
    source_label: &str,
) -> Result<RunTrace, EngineError> {
    config.validate()?;
    let mut pools = Pools::build(config)?;
    let patient = config.schedule.is_patient();
    let (grid, checkpoints) = match &config.checkpoints {
        CheckpointPolicy::EveryEvent => (None, vec![(0.0, 0.0)]),
        CheckpointPolicy::Grid(g) => (Some(g.clone()), Vec::with_capacity(g.len() + 2)),
    };
    let mut mk = Market {
        clock: 0.0,
        wait: 0.0,
        n_clients: 0,
        n_providers: 0,
        matches: 0,
        total_cost: 0.0,
        arrivals: 0,
        max_clears: 0,
        checkpoints,
        grid,
        grid_pos: 0,
        records: Vec::new(),
    };
    if mk.grid.is_some() {
        mk.advance(0.0);
        mk.checkpoint();
    }
    let every_event = mk.grid.is_none();
    let horizon = if patient {
        Some(config.patient_clear_time())
    } else {
        match config.stop {
            StopRule::Horizon(h) => Some(h),
            StopRule::Matches(_) => None,
        }
    };
    let target = match config.stop {
        StopRule::Matches(a) => Some(a),
        StopRule::Horizon(_) => None,
    };

    while let Some(agent) = source.next_arrival()? {
        if let Some(h) = horizon {
            if agent.arrival_time > h {
                let (m_c, m_p) = pools.counts();
                let short = m_c.min(m_p);
                let patient_short = patient && target.is_some_and(|a| short < a);
                if !patient_short {
                    break;
                }
                // a patient run short of its target keeps admitting agents
            }
        }
        mk.arrivals += 1;
        if mk.arrivals > config.max_arrivals {
            return Err(EngineError::Runaway(config.max_arrivals));
        }
        mk.advance(agent.arrival_time);
        match agent.side {
            Side::Client => mk.n_clients += 1,
            Side::Provider => mk.n_providers += 1,
        }
        pools.add(agent);

        let mut clears = 0;
        let mut reached = false;
        if !patient {
            loop {
                let (m_c, m_p) = pools.counts();
                if !config.schedule.should_clear(m_c, m_p, mk.matches + 1) {
                    break;
                }
                let taken = pools.take(mk.matches + 1);
                mk.record(taken, m_c, m_p);
                clears += 1;
                if target == Some(mk.matches) {
                    reached = true;
                    break;
                }
            }
        }
        mk.max_clears = mk.max_clears.max(clears);
        if every_event {
            mk.checkpoint();
        }
        if reached {
            break;
        }
    }

    if let Some(h) = horizon {
        mk.advance(h);
    }
    if patient {
        let (m_c, m_p) = pools.counts();
        let mut k = m_c.min(m_p);
        if let Some(a) = target {
            k = k.min(a);
        }
        for taken in pools.drain(k as usize, mk.matches + 1)? {
            mk.record(taken, m_c, m_p);
        }
    }
    let end = mk.clock;
    mk.advance(end);
    mk.checkpoint();

    let summary = FinalState {
        clock: mk.clock,
        arrivals: mk.arrivals,
        n_clients: mk.n_clients,
        n_providers: mk.n_providers,
        matches: mk.matches,
        wait: mk.wait,
        total_cost: mk.total_cost,
        max_clears_per_arrival: mk.max_clears,
    };
    Ok(RunTrace {
        records: mk.records,
        wait_checkpoints: mk.checkpoints,
        summary,
        meta: RunMeta {
            schedule: config.schedule.label(),
            cost_mode: match config.cost_mode {
                CostMode::Micro(_) => format!("{}:{:?}", config.cost_mode.label(), config.refresh),
                _ => config.cost_mode.label(),
            },
            stop: config.stop,
            seed: config.seed,
            source: source_label.to_string(),
        },
    })
}

/// Seed of the run-level cost stream for a run seeded with `seed`.
pub fn cost_seed(seed: u64) -> u64 {
    derive_seed(seed, tags::COST_STREAM)
}

/// The config of replication `rep`: same settings, seed derived from the base.
pub fn replication_config(config: &RunConfig, rep: u64) -> RunConfig {
    let mut cfg = config.clone();
    cfg.seed = replication_seed(config.seed, rep);
    cfg
}

/// Runs `reps` independent replications (seeds derived from `config.seed`
/// and the replication index) and maps each trace through `f` on a pool of
/// `jobs` workers (`0` = rayon default). Output is in replication order.
pub fn run_replications_map<T, F>(config: &RunConfig, reps: u64, jobs: usize, f: F) -> Result<Vec<T>, EngineError>
where
    T: Send,
    F: Fn(u64, RunTrace) -> T + Sync + Send,
{
    run_replication_range(config, 0..reps, jobs, f)
}

/// [`run_replications_map`] over a sub-range of replication indices.
pub fn run_replication_range<T, F>(
    config: &RunConfig,
    reps: Range<u64>,
    jobs: usize,
    f: F,
) -> Result<Vec<T>, EngineError>
where
    T: Send,
    F: Fn(u64, RunTrace) -> T + Sync + Send,
{
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| EngineError::Pool(e.to_string()))?;
    pool.install(|| {
        reps.into_par_iter()
            .map(|rep| run(&replication_config(config, rep)).map(|t| f(rep, t)))
            .collect()
    })
}

pub fn run_replications(config: &RunConfig, reps: u64, jobs: usize) -> Result<Vec<RunTrace>, EngineError> {
    run_replications_map(config, reps, jobs, |_, t| t)
}

impl fmt::Display for FinalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "τ = {:.4}, arrivals = {}, A = {}, W = {:.4}, cost = {:.6}",
            self.clock, self.arrivals, self.matches, self.wait, self.total_cost
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tape(entries: &[(f64, Side)]) -> TapeSource {
        TapeSource::new(entries.to_vec()).unwrap()
    }

    fn unit() -> CostMode {
        CostMode::Micro(RateModel::constant(1.0).unwrap())
    }

    #[test]
    fn decay_g_shapes() {
        let d = DecayModel::new(2.0, 1.0).unwrap();
        assert_eq!(d.g(3, 5), 1.0 / 9.0);
        assert_eq!(d.g(5, 3), 1.0 / 9.0);
        let geo = DecayModel {
            form: DecayForm::GeoMean,
            ..d
        };
        assert!((geo.g(4, 9) - 1.0 / 36.0).abs() < 1e-15);
        assert!(DecayModel::new(1.0, 1.0).is_err());
        assert!(DecayModel::new(2.0, 0.0).is_err());
    }

    #[test]
    fn incompatible_modes_rejected() {
        let decay = CostMode::Decay(DecayModel::new(2.0, 1.0).unwrap());
        for s in [ScheduleSpec::patient(), ScheduleSpec::fcfs()] {
            let cfg = RunConfig::new(s, decay, StopRule::Matches(5), 1);
            assert!(matches!(run(&cfg), Err(EngineError::Config(_))));
        }
        let cfg = RunConfig::new(ScheduleSpec::greedy(), unit(), StopRule::Matches(0), 1);
        assert!(run(&cfg).is_err());
    }

    #[test]
    fn wait_interpolation() {
        let cfg = RunConfig::new(ScheduleSpec::greedy(), unit(), StopRule::Horizon(4.0), 0).with_tape(tape(&[
            (1.0, Side::Client),
            (2.0, Side::Client),
            (3.0, Side::Provider),
        ]));
        let t = run(&cfg).unwrap();
        assert_eq!(t.wait_at(0.5), Some(0.0));
        assert_eq!(t.wait_at(1.5), Some(0.5));
        assert_eq!(t.wait_at(2.5), Some(2.0));
        assert_eq!(t.wait_at(4.0), Some(4.0));
        assert_eq!(t.wait_at(4.5), None);
    }

    #[test]
    fn grid_checkpoints_agree_with_event_checkpoints() {
        let grid: Vec<f64> = (1..=40).map(|i| i as f64 * 2.5).collect();
        let base = RunConfig::new(
            ScheduleSpec::power_law(0.5, 1.0).unwrap(),
            unit(),
            StopRule::Horizon(100.0),
            3,
        );
        let full = run(&base).unwrap();
        let sparse = run(&base.clone().with_checkpoints(CheckpointPolicy::Grid(grid.clone()))).unwrap();
        for g in grid {
            let a = full.wait_at(g).unwrap();
            let b = sparse.wait_at(g).unwrap();
            assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{g}: {a} vs {b}");
        }
        assert_eq!(full.records, sparse.records);
    }

    #[test]
    fn patient_short_target_keeps_admitting() {
        let cfg = RunConfig {
            patient_horizon: Some(1.0),
            ..RunConfig::new(ScheduleSpec::patient(), unit(), StopRule::Matches(20), 9)
        };
        let t = run(&cfg).unwrap();
        assert_eq!(t.summary.matches, 20);
        assert!(t.records.iter().all(|r| r.time == t.summary.clock));
    }

    #[test]
    fn fifo_oldest_first() {
        let mut pools = Pools::build(&RunConfig::new(ScheduleSpec::fcfs(), unit(), StopRule::Matches(1), 0)).unwrap();
        for (i, (t, s)) in [(1.0, Side::Client), (2.0, Side::Client), (3.0, Side::Provider)]
            .into_iter()
            .enumerate()
        {
            pools.add(Agent {
                id: i as u64,
                side: s,
                arrival_time: t,
            });
        }
        let (c, p, _) = pools.take(1);
        assert_eq!((c, p), (0, 2));
        assert_eq!(pools.counts(), (1, 0));
    }
}
