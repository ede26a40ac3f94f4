//! Agent arrival streams and the random-walk diagnostics built on them.

use std::fmt;
use std::io::Read;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::{derive_seed, open_unit, tags};

/// Hard cap on the number of arrivals any single simulation may consume.
pub const RUNAWAY_ARRIVALS: u64 = 1_000_000_000;

#[derive(Debug, Error)]
pub enum ArrivalError {
    #[error("tape line {line}: {msg}")]
    Tape { line: usize, msg: String },
    #[error("tape I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("runaway: no termination after {0} arrivals")]
    Runaway(u64),
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Client,
    Provider,
}

impl Side {
    pub fn code(self) -> char {
        match self {
            Side::Client => 'C',
            Side::Provider => 'P',
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u64,
    pub side: Side,
    pub arrival_time: f64,
}

/// Anything that can feed agents to the engine in time order.
///
/// `Ok(None)` means the source is exhausted.
pub trait ArrivalSource {
    fn next_arrival(&mut self) -> Result<Option<Agent>, ArrivalError>;
}

/// Fair coin drawn one bit at a time from its own ChaCha stream.
#[derive(Debug, Clone)]
pub struct SideCoin {
    rng: ChaCha8Rng,
    bits: u64,
    left: u32,
}

impl SideCoin {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, tags::SIDE)),
            bits: 0,
            left: 0,
        }
    }

    #[inline]
    pub fn flip(&mut self) -> Side {
        if self.left == 0 {
            self.bits = self.rng.next_u64();
            self.left = 64;
        }
        let b = self.bits & 1;
        self.bits >>= 1;
        self.left -= 1;
        if b == 1 {
            Side::Client
        } else {
            Side::Provider
        }
    }
}

/// Rate-1 Poisson arrivals with a fair side coin. Interarrival times and
/// sides come from separate sub-streams of the seed.
#[derive(Debug, Clone)]
pub struct PoissonStream {
    clock: f64,
    next_id: u64,
    gaps: ChaCha8Rng,
    coin: SideCoin,
}

impl PoissonStream {
    pub fn new(seed: u64) -> Self {
        Self {
            clock: 0.0,
            next_id: 0,
            gaps: ChaCha8Rng::seed_from_u64(derive_seed(seed, tags::INTERARRIVAL)),
            coin: SideCoin::new(seed),
        }
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Advances the clock by an exp(1) gap and flips the side coin.
    pub fn next_agent(&mut self) -> Agent {
        let gap = -open_unit(self.gaps.next_u64()).ln();
        let mut t = self.clock + gap;
        if t <= self.clock {
            // gap below the clock's resolution
            t = f64::from_bits(self.clock.to_bits() + 1);
        }
        self.clock = t;
        let id = self.next_id;
        self.next_id += 1;
        Agent {
            id,
            side: self.coin.flip(),
            arrival_time: t,
        }
    }
}

impl ArrivalSource for PoissonStream {
    fn next_arrival(&mut self) -> Result<Option<Agent>, ArrivalError> {
        Ok(Some(self.next_agent()))
    }
}

/// Explicit list of `(time, side)` arrivals; ids are assigned in order.
#[derive(Debug, Clone)]
pub struct TapeSource {
    entries: Vec<(f64, Side)>,
    pos: usize,
}

impl TapeSource {
    pub fn new(entries: Vec<(f64, Side)>) -> Result<Self, ArrivalError> {
        let mut prev = f64::NEG_INFINITY;
        for (i, &(t, _)) in entries.iter().enumerate() {
            if !(t.is_finite() && t >= 0.0) {
                return Err(ArrivalError::Tape {
                    line: i + 2,
                    msg: format!("time {t} must be finite and non-negative"),
                });
            }
            if t <= prev {
                return Err(ArrivalError::Tape {
                    line: i + 2,
                    msg: format!("time {t} does not strictly increase (previous {prev})"),
                });
            }
            prev = t;
        }
        Ok(Self { entries, pos: 0 })
    }

    /// Reads CSV with header `time,side`, side in {C, P}.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, ArrivalError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| ArrivalError::Tape {
                line: 1,
                msg: e.to_string(),
            })?
            .clone();
        if headers.len() != 2 || &headers[0] != "time" || &headers[1] != "side" {
            return Err(ArrivalError::Tape {
                line: 1,
                msg: format!(
                    "expected header `time,side`, got `{}`",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| ArrivalError::Tape {
                line,
                msg: e.to_string(),
            })?;
            let t: f64 = rec[0].parse().map_err(|_| ArrivalError::Tape {
                line,
                msg: format!("bad time `{}`", &rec[0]),
            })?;
            let side = match &rec[1] {
                "C" => Side::Client,
                "P" => Side::Provider,
                other => {
                    return Err(ArrivalError::Tape {
                        line,
                        msg: format!("side must be C or P, got `{other}`"),
                    })
                }
            };
            entries.push((t, side));
        }
        Self::new(entries)
    }

    pub fn from_path(path: &Path) -> Result<Self, ArrivalError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn entries(&self) -> &[(f64, Side)] {
        &self.entries
    }
}

impl ArrivalSource for TapeSource {
    fn next_arrival(&mut self) -> Result<Option<Agent>, ArrivalError> {
        let Some(&(t, side)) = self.entries.get(self.pos) else {
            return Ok(None);
        };
        let id = self.pos as u64;
        self.pos += 1;
        Ok(Some(Agent {
            id,
            side,
            arrival_time: t,
        }))
    }
}

/// Clients minus providers after `k` arrivals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkSample {
    pub k: u64,
    pub s_k: i64,
}

impl WalkSample {
    pub fn is_consistent(&self) -> bool {
        self.s_k.unsigned_abs() <= self.k && (self.s_k - self.k as i64).rem_euclid(2) == 0
    }
}

/// One path of the side walk, `S_1, …, S_k`.
pub fn walk_path(k: u64, seed: u64) -> Vec<WalkSample> {
    let mut coin = SideCoin::new(seed);
    let mut s = 0i64;
    (1..=k)
        .map(|i| {
            s += match coin.flip() {
                Side::Client => 1,
                Side::Provider => -1,
            };
            WalkSample { k: i, s_k: s }
        })
        .collect()
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
}

impl McEstimate {
    pub fn from_samples(xs: impl IntoIterator<Item = f64>) -> Self {
        // Welford
        let (mut n, mut mean, mut m2) = (0u64, 0.0f64, 0.0f64);
        for x in xs {
            n += 1;
            let d = x - mean;
            mean += d / n as f64;
            m2 += d * (x - mean);
        }
        let stderr = if n > 1 {
            (m2 / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n }
    }
}

/// Monte Carlo estimate of `E|S_k|` from the side coin.
pub fn walk_abs_mean(k: u64, reps: u64, seed: u64) -> Result<McEstimate, ArrivalError> {
    if k == 0 {
        return Ok(McEstimate {
            mean: 0.0,
            stderr: 0.0,
            n: reps,
        });
    }
    if reps == 0 {
        return Err(ArrivalError::Argument("reps must be at least 1".into()));
    }
    let mut coin = SideCoin::new(seed);
    Ok(McEstimate::from_samples((0..reps).map(|_| {
        let mut s = 0i64;
        for _ in 0..k {
            s += if coin.flip() == Side::Client { 1 } else { -1 };
        }
        s.unsigned_abs() as f64
    })))
}

/// One draw of `t(k, C)`: arrivals until, for the k-th time, at least `C`
/// clients and `C` providers are present, one of each being removed every
/// time that happens.
pub fn stopping_time_sample(k: u64, c: u64, seed: u64) -> Result<u64, ArrivalError> {
    let mut coin = SideCoin::new(seed);
    stopping_time_with(k, c, &mut coin, RUNAWAY_ARRIVALS)
}

pub(crate) fn stopping_time_with(k: u64, c: u64, coin: &mut SideCoin, cap: u64) -> Result<u64, ArrivalError> {
    if k == 0 || c == 0 {
        return Err(ArrivalError::Argument("need k >= 1 and C >= 1".into()));
    }
    let (mut clients, mut providers, mut hits, mut t) = (0u64, 0u64, 0u64, 0u64);
    loop {
        if t >= cap {
            return Err(ArrivalError::Runaway(cap));
        }
        t += 1;
        match coin.flip() {
            Side::Client => clients += 1,
            Side::Provider => providers += 1,
        }
        if clients >= c && providers >= c {
            hits += 1;
            if hits == k {
                return Ok(t);
            }
            clients -= 1;
            providers -= 1;
        }
    }
}

/// Monte Carlo mean of `t(k, C)` over `reps` draws from one coin stream.
pub fn stopping_time_mean(k: u64, c: u64, reps: u64, seed: u64) -> Result<McEstimate, ArrivalError> {
    if reps == 0 {
        return Err(ArrivalError::Argument("reps must be at least 1".into()));
    }
    let mut coin = SideCoin::new(seed);
    let mut out = Vec::with_capacity(reps as usize);
    for _ in 0..reps {
        out.push(stopping_time_with(k, c, &mut coin, RUNAWAY_ARRIVALS)? as f64);
    }
    Ok(McEstimate::from_samples(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interarrival_and_side_statistics() {
        let mut s = PoissonStream::new(1);
        let n = 100_000;
        let mut prev = 0.0;
        let mut clients = 0;
        for _ in 0..n {
            let a = s.next_agent();
            assert!(a.arrival_time > prev);
            prev = a.arrival_time;
            if a.side == Side::Client {
                clients += 1;
            }
        }
        assert!((prev / n as f64 - 1.0).abs() < 0.01, "mean gap {}", prev / n as f64);
        assert!((clients as f64 / n as f64 - 0.5).abs() < 0.005);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = PoissonStream::new(77);
        let mut b = PoissonStream::new(77);
        for _ in 0..1000 {
            assert_eq!(a.next_agent(), b.next_agent());
        }
        let mut c = PoissonStream::new(78);
        assert_ne!(PoissonStream::new(77).next_agent(), c.next_agent());
    }

    #[test]
    fn ids_increase_with_time() {
        let mut s = PoissonStream::new(3);
        let a = s.next_agent();
        let b = s.next_agent();
        assert!(b.id > a.id && b.arrival_time > a.arrival_time);
    }

    #[test]
    fn tape_parsing() {
        let tape = TapeSource::from_reader("time,side\n1.0,C\n2.5,P\n".as_bytes()).unwrap();
        assert_eq!(tape.entries(), &[(1.0, Side::Client), (2.5, Side::Provider)]);

        let err = TapeSource::from_reader("time,side\n1.0,C\n1.0,P\n".as_bytes()).unwrap_err();
        assert!(matches!(err, ArrivalError::Tape { line: 3, .. }), "{err}");
        assert!(TapeSource::from_reader("t,s\n1,C\n".as_bytes()).is_err());
        assert!(TapeSource::from_reader("time,side\n1,X\n".as_bytes()).is_err());
    }

    #[test]
    fn walk_invariants_hold_on_paths() {
        for seed in 0..20 {
            for w in walk_path(200, seed) {
                assert!(w.is_consistent(), "{w:?}");
            }
        }
    }

    #[test]
    fn walk_small_cases() {
        assert_eq!(walk_abs_mean(0, 10, 1).unwrap().mean, 0.0);
        let one = walk_abs_mean(1, 1000, 1).unwrap();
        assert_eq!(one.mean, 1.0);
        let two = walk_abs_mean(2, 200_000, 2).unwrap();
        assert!((two.mean - 1.0).abs() < 4.0 * two.stderr);
        let four = walk_abs_mean(4, 200_000, 3).unwrap();
        assert!((four.mean - 1.5).abs() < 4.0 * four.stderr);
    }

    #[test]
    fn first_pair_needs_two_arrivals() {
        for seed in 0..500 {
            assert!(stopping_time_sample(1, 1, seed).unwrap() >= 2);
        }
    }

    #[test]
    fn runaway_guard_fires() {
        let mut coin = SideCoin::new(0);
        let err = stopping_time_with(1000, 1000, &mut coin, 100).unwrap_err();
        assert!(matches!(err, ArrivalError::Runaway(100)));
    }
}
