//! Clearing schedules: the threshold `f(k)` on the short side that the k-th
//! matching event waits for.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absorbs floating-point noise before rounding up, so `c * 9^0.5` gives 3.
const CEIL_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("cannot parse schedule `{0}`; expected greedy | fcfs | patient | power:<gamma>[:<c>] | balanced[:<c>] | custom:<path>")]
    Grammar(String),
    #[error("invalid schedule: {0}")]
    Invalid(String),
    #[error("the patient schedule has no per-event threshold")]
    NotApplicable,
    #[error("threshold table {path}: {msg}")]
    Table { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairingRule {
    MinEdge,
    ArrivalOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ScheduleKind {
    Fcfs,
    Greedy,
    PowerLaw {
        gamma: f64,
        scale: f64,
    },
    Balanced {
        scale: f64,
    },
    Patient,
    /// `table[k - 1]` is `f(k)`; the last entry is held beyond the table.
    CustomThreshold {
        table: Vec<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub pairing_rule: PairingRule,
}

impl ScheduleSpec {
    pub fn fcfs() -> Self {
        Self {
            kind: ScheduleKind::Fcfs,
            pairing_rule: PairingRule::ArrivalOrder,
        }
    }

    pub fn greedy() -> Self {
        Self::min_edge(ScheduleKind::Greedy)
    }

    pub fn patient() -> Self {
        Self::min_edge(ScheduleKind::Patient)
    }

    pub fn power_law(gamma: f64, scale: f64) -> Result<Self, ScheduleError> {
        let spec = Self::min_edge(ScheduleKind::PowerLaw { gamma, scale });
        spec.validate()?;
        Ok(spec)
    }

    pub fn balanced(scale: f64) -> Result<Self, ScheduleError> {
        let spec = Self::min_edge(ScheduleKind::Balanced { scale });
        spec.validate()?;
        Ok(spec)
    }

    pub fn custom(table: Vec<u64>) -> Result<Self, ScheduleError> {
        let spec = Self::min_edge(ScheduleKind::CustomThreshold { table });
        spec.validate()?;
        Ok(spec)
    }

    fn min_edge(kind: ScheduleKind) -> Self {
        Self {
            kind,
            pairing_rule: PairingRule::MinEdge,
        }
    }

    pub fn is_patient(&self) -> bool {
        matches!(self.kind, ScheduleKind::Patient)
    }

    pub fn is_fcfs(&self) -> bool {
        matches!(self.kind, ScheduleKind::Fcfs)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let arrival_order = self.pairing_rule == PairingRule::ArrivalOrder;
        if self.is_fcfs() != arrival_order {
            return Err(ScheduleError::Invalid(
                "arrival-order pairing goes with fcfs and only with fcfs".into(),
            ));
        }
        match &self.kind {
            ScheduleKind::PowerLaw { gamma, scale } => {
                if !(0.0..=1.0).contains(gamma) {
                    return Err(ScheduleError::Invalid(format!("gamma = {gamma} outside [0, 1]")));
                }
                check_scale(*scale)
            }
            ScheduleKind::Balanced { scale } => check_scale(*scale),
            ScheduleKind::CustomThreshold { table } => validate_table(table),
            _ => Ok(()),
        }
    }

    /// Parses the textual form; `custom:` reads its table from disk.
    pub fn parse(text: &str) -> Result<Self, ScheduleError> {
        let text = text.trim();
        let grammar = || ScheduleError::Grammar(text.to_string());
        let (head, rest) = match text.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (text, None),
        };
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| grammar());
        match (head.to_ascii_lowercase().as_str(), rest) {
            ("greedy", None) => Ok(Self::greedy()),
            ("fcfs", None) => Ok(Self::fcfs()),
            ("patient", None) => Ok(Self::patient()),
            ("power", Some(args)) => {
                let parts: Vec<&str> = args.split(':').collect();
                match parts.as_slice() {
                    [g] => Self::power_law(num(g)?, 1.0),
                    [g, c] => Self::power_law(num(g)?, num(c)?),
                    _ => Err(grammar()),
                }
            }
            ("balanced", None) => Self::balanced(1.0),
            ("balanced", Some(c)) => Self::balanced(num(c)?),
            ("custom", Some(path)) if !path.is_empty() => Self::custom(read_table(Path::new(path))?),
            _ => Err(grammar()),
        }
    }

    /// `f(k)` for the k-th matching event.
    pub fn threshold(&self, k: u64) -> Result<u64, ScheduleError> {
        let k = k.max(1);
        Ok(match &self.kind {
            ScheduleKind::Fcfs | ScheduleKind::Greedy => 1,
            ScheduleKind::PowerLaw { gamma, scale } => ceil_at_least_one(scale * (k as f64).powf(*gamma)),
            ScheduleKind::Balanced { scale } => {
                let kf = k as f64;
                ceil_at_least_one(scale * kf.sqrt() * kf.ln().cbrt())
            }
            ScheduleKind::CustomThreshold { table } => {
                let idx = (k as usize - 1).min(table.len() - 1);
                table[idx]
            }
            ScheduleKind::Patient => return Err(ScheduleError::NotApplicable),
        })
    }

    /// Whether the next matching event (index `next_k`) fires in this state.
    pub fn should_clear(&self, unmatched_clients: u64, unmatched_providers: u64, next_k: u64) -> bool {
        match self.threshold(next_k) {
            Ok(f) => unmatched_clients.min(unmatched_providers) >= f,
            Err(_) => false,
        }
    }

    /// Canonical textual form; the custom table is summarised.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ScheduleKind::Fcfs => write!(f, "fcfs"),
            ScheduleKind::Greedy => write!(f, "greedy"),
            ScheduleKind::Patient => write!(f, "patient"),
            ScheduleKind::PowerLaw { gamma, scale } if *scale == 1.0 => write!(f, "power:{gamma}"),
            ScheduleKind::PowerLaw { gamma, scale } => write!(f, "power:{gamma}:{scale}"),
            ScheduleKind::Balanced { scale } if *scale == 1.0 => write!(f, "balanced"),
            ScheduleKind::Balanced { scale } => write!(f, "balanced:{scale}"),
            ScheduleKind::CustomThreshold { table } => write!(f, "custom[{}]", table.len()),
        }
    }
}

fn ceil_at_least_one(x: f64) -> u64 {
    ((x - CEIL_SLACK).ceil() as u64).max(1)
}

fn check_scale(scale: f64) -> Result<(), ScheduleError> {
    if scale.is_finite() && scale > 0.0 {
        Ok(())
    } else {
        Err(ScheduleError::Invalid(format!("scale = {scale} must be positive")))
    }
}

fn validate_table(table: &[u64]) -> Result<(), ScheduleError> {
    if table.is_empty() {
        return Err(ScheduleError::Invalid("empty threshold table".into()));
    }
    if let Some(k) = table.iter().position(|&f| f < 1) {
        return Err(ScheduleError::Invalid(format!(
            "f({}) = 0; thresholds start at 1",
            k + 1
        )));
    }
    if let Some(k) = table.windows(2).position(|w| w[1] < w[0]) {
        return Err(ScheduleError::Invalid(format!("threshold decreases at k = {}", k + 2)));
    }
    // a threshold that keeps pace with k never lets the unmatched share shrink
    let n = table.len();
    if n >= 4 {
        let tail_start = n / 2;
        if table[tail_start..]
            .iter()
            .enumerate()
            .all(|(i, &f)| f >= (tail_start + i + 1) as u64)
        {
            return Err(ScheduleError::Invalid(format!(
                "infeasible: f(k) >= k over the whole tail k = {}..={n}",
                tail_start + 1
            )));
        }
    }
    Ok(())
}

/// Reads a `k,threshold` CSV. Rows must list k = 1, 2, ... in order.
pub fn read_table(path: &Path) -> Result<Vec<u64>, ScheduleError> {
    let table_err = |msg: String| ScheduleError::Table {
        path: path.display().to_string(),
        msg,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| table_err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| table_err(e.to_string()))?.clone();
    if headers.len() != 2 || headers[0].trim() != "k" || headers[1].trim() != "threshold" {
        return Err(table_err("header must be `k,threshold`".into()));
    }
    let mut table = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| table_err(format!("line {line}: {e}")))?;
        let k: u64 = row[0]
            .trim()
            .parse()
            .map_err(|_| table_err(format!("line {line}: bad k `{}`", &row[0])))?;
        let f: u64 = row[1]
            .trim()
            .parse()
            .map_err(|_| table_err(format!("line {line}: bad threshold `{}`", &row[1])))?;
        if k != table.len() as u64 + 1 {
            return Err(table_err(format!(
                "line {line}: expected k = {}, got {k}",
                table.len() + 1
            )));
        }
        table.push(f);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_examples() {
        assert_eq!(ScheduleSpec::greedy().threshold(12345).unwrap(), 1);
        assert_eq!(ScheduleSpec::fcfs().threshold(3).unwrap(), 1);
        let p = ScheduleSpec::power_law(0.5, 1.0).unwrap();
        assert_eq!(p.threshold(9).unwrap(), 3);
        assert_eq!(p.threshold(10).unwrap(), 4);
        let b = ScheduleSpec::balanced(1.0).unwrap();
        assert_eq!(b.threshold(1).unwrap(), 1);
        assert_eq!(b.threshold(2981).unwrap(), 110);
        assert_eq!(ScheduleSpec::patient().threshold(1), Err(ScheduleError::NotApplicable));
    }

    #[test]
    fn balanced_value_recomputed() {
        let k = 2981f64;
        let raw = k.sqrt() * k.ln().cbrt();
        assert!(raw > 109.0 && raw < 110.0, "{raw}");
    }

    #[test]
    fn should_clear_examples() {
        assert!(ScheduleSpec::greedy().should_clear(1, 1, 1));
        assert!(!ScheduleSpec::greedy().should_clear(0, 4, 1));
        let p = ScheduleSpec::power_law(0.5, 1.0).unwrap();
        assert!(!p.should_clear(2, 5, 9));
        assert!(p.should_clear(3, 5, 9));
        assert!(!ScheduleSpec::patient().should_clear(100, 100, 1));
    }

    #[test]
    fn builtins_are_non_decreasing() {
        let specs = [
            ScheduleSpec::greedy(),
            ScheduleSpec::power_law(0.25, 1.0).unwrap(),
            ScheduleSpec::power_law(0.75, 2.5).unwrap(),
            ScheduleSpec::power_law(1.0, 0.3).unwrap(),
            ScheduleSpec::balanced(1.0).unwrap(),
            ScheduleSpec::balanced(0.5).unwrap(),
        ];
        for s in &specs {
            let mut prev = 0;
            for k in 1..20_000 {
                let f = s.threshold(k).unwrap();
                assert!(f >= prev && f >= 1, "{s} at k = {k}");
                prev = f;
            }
        }
    }

    #[test]
    fn parse_grammar() {
        assert_eq!(ScheduleSpec::parse("greedy").unwrap(), ScheduleSpec::greedy());
        assert_eq!(ScheduleSpec::parse("FCFS").unwrap(), ScheduleSpec::fcfs());
        assert_eq!(ScheduleSpec::parse("patient").unwrap(), ScheduleSpec::patient());
        assert_eq!(
            ScheduleSpec::parse("power:0.75").unwrap(),
            ScheduleSpec::power_law(0.75, 1.0).unwrap()
        );
        assert_eq!(
            ScheduleSpec::parse("power:0.5:2").unwrap(),
            ScheduleSpec::power_law(0.5, 2.0).unwrap()
        );
        assert_eq!(
            ScheduleSpec::parse("balanced").unwrap(),
            ScheduleSpec::balanced(1.0).unwrap()
        );
        assert_eq!(
            ScheduleSpec::parse("balanced:0.5").unwrap(),
            ScheduleSpec::balanced(0.5).unwrap()
        );
        for bad in [
            "",
            "power",
            "power:x",
            "power:1.5",
            "power:0.5:0",
            "balanced:-1",
            "lazy",
            "greedy:1",
            "custom:",
        ] {
            assert!(ScheduleSpec::parse(bad).is_err(), "{bad}");
        }
        for s in [
            "greedy",
            "fcfs",
            "patient",
            "power:0.25",
            "power:0.5:2",
            "balanced",
            "balanced:3",
        ] {
            assert_eq!(ScheduleSpec::parse(s).unwrap().label(), s);
        }
    }

    #[test]
    fn pairing_rule_must_match_kind() {
        let mut s = ScheduleSpec::greedy();
        s.pairing_rule = PairingRule::ArrivalOrder;
        assert!(s.validate().is_err());
        let mut f = ScheduleSpec::fcfs();
        f.pairing_rule = PairingRule::MinEdge;
        assert!(f.validate().is_err());
    }

    #[test]
    fn custom_tables() {
        let s = ScheduleSpec::custom(vec![1, 1, 2, 2, 3]).unwrap();
        assert_eq!(s.threshold(1).unwrap(), 1);
        assert_eq!(s.threshold(5).unwrap(), 3);
        assert_eq!(s.threshold(500).unwrap(), 3);
        assert!(ScheduleSpec::custom(vec![]).is_err());
        assert!(ScheduleSpec::custom(vec![0, 1]).is_err());
        assert!(ScheduleSpec::custom(vec![2, 1]).is_err());
        assert!(ScheduleSpec::custom((1..=20).collect()).is_err());
        assert!(ScheduleSpec::custom((1..=20).map(|k: u64| k.div_ceil(2)).collect()).is_ok());
    }

    #[test]
    fn custom_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "k,threshold\n1,1\n2,1\n3,2\n4,2\n").unwrap();
        let s = ScheduleSpec::parse(&format!("custom:{}", path.display())).unwrap();
        assert_eq!(s.threshold(3).unwrap(), 2);

        std::fs::write(&path, "k,threshold\n1,1\n3,2\n").unwrap();
        assert!(matches!(read_table(&path), Err(ScheduleError::Table { .. })));
        std::fs::write(&path, "k,f\n1,1\n").unwrap();
        assert!(read_table(&path).is_err());
    }
}
