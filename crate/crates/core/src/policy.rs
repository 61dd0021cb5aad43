//! Tabular stochastic policies.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance used for row sums and for elementwise policy equality.
pub const ROW_TOL: f64 = 1e-12;

/// Row-stochastic table `pi[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    /// Builds a policy from a flat row-major table, validating every row.
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Shape("policy needs at least one state and one action".into()));
        }
        if probs.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "policy table has {} entries, expected {}x{}",
                probs.len(),
                n_states,
                n_actions
            )));
        }
        for s in 0..n_states {
            check_distribution(&probs[s * n_actions..(s + 1) * n_actions])
                .map_err(|e| Error::InvalidDistribution(format!("policy row {s}: {e}")))?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::Shape("ragged policy rows".into()));
        }
        Self::new(rows.len(), n_actions, rows.concat())
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self {
            n_states,
            n_actions,
            probs: vec![p; n_states * n_actions],
        }
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::Shape(format!("action {a} out of range in state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.n_actions)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn same_shape(&self, other: &TabularPolicy) -> bool {
        self.n_states == other.n_states && self.n_actions == other.n_actions
    }

    pub fn ensure_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.n_states != n_states || self.n_actions != n_actions {
            return Err(Error::Shape(format!(
                "policy is {}x{}, expected {}x{}",
                self.n_states, self.n_actions, n_states, n_actions
            )));
        }
        Ok(())
    }

    /// Whether row `s` of both policies agrees elementwise within [`ROW_TOL`].
    pub fn row_equals(&self, other: &TabularPolicy, s: usize) -> bool {
        self.row(s)
            .iter()
            .zip(other.row(s))
            .all(|(x, y)| (x - y).abs() <= ROW_TOL)
    }

    /// Elementwise equality within [`ROW_TOL`] on every row.
    pub fn approx_eq(&self, other: &TabularPolicy) -> bool {
        self.same_shape(other) && (0..self.n_states).all(|s| self.row_equals(other, s))
    }

    /// Action chosen in every state when the policy is deterministic.
    pub fn deterministic_actions(&self) -> Option<Vec<usize>> {
        self.rows()
            .map(|row| {
                let a = row.iter().position(|&p| p > 1.0 - ROW_TOL)?;
                row.iter()
                    .enumerate()
                    .all(|(b, &p)| b == a || p <= ROW_TOL)
                    .then_some(a)
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(self.row(s), rng)
    }
}

/// Draws an index from a discrete distribution by inverting its CDF.
///
/// Zero-probability entries are never returned.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last_positive = i;
        if u < acc {
            return i;
        }
    }
    last_positive
}

pub(crate) fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(format!("entry {p} is negative or non-finite"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

/// Text form: header `policy n_states n_actions`, then one row per state.
impl fmt::Display for TabularPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "policy {} {}", self.n_states, self.n_actions)?;
        for row in self.rows() {
            let cells: Vec<String> = row.iter().map(|p| format!("{p:?}")).collect();
            writeln!(f, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}

impl FromStr for TabularPolicy {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = crate::format::content_lines(text);
        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing policy header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 || fields[0] != "policy" {
            return Err(Error::parse(hline, "expected `policy n_states n_actions`"));
        }
        let n_states: usize = crate::format::parse_field(fields[1], hline)?;
        let n_actions: usize = crate::format::parse_field(fields[2], hline)?;
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::parse(hline, "truncated policy table"))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| crate::format::parse_field(t, ln))
                .collect::<Result<_>>()?;
            if row.len() != n_actions {
                return Err(Error::parse(ln, format!("expected {n_actions} probabilities")));
            }
            probs.extend(row);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(Error::parse(ln, "trailing content after policy table"));
        }
        Self::new(n_states, n_actions, probs)
    }
}
