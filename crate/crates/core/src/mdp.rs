//! Finite MDPs, exact policy evaluation and trajectory simulation.
//!
//! Finite-horizon evaluation counts exactly `H` reward steps `t = 0..H-1`.
//! Discounted fixed-point evaluation ignores the horizon and requires
//! `gamma < 1`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::format::{content_lines, parse_field};
use crate::policy::{check_distribution, sample_index, TabularPolicy};

/// Time-homogeneous episodic MDP with finite state and action sets.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    /// `P[s][a][s']`, row-major.
    transition: Vec<f64>,
    reward_mean: Vec<f64>,
    /// Rewards are uniform on `[R - w, R + w]`.
    reward_noise: Vec<f64>,
    horizon: usize,
    discount: f64,
    initial_state: usize,
}

impl FiniteMdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward_mean: Vec<f64>,
        reward_noise: Vec<f64>,
        horizon: usize,
        discount: f64,
        initial_state: usize,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        let sa = n_states * n_actions;
        if transition.len() != sa * n_states {
            return Err(Error::Shape(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                sa * n_states
            )));
        }
        if reward_mean.len() != sa || reward_noise.len() != sa {
            return Err(Error::Shape(format!("reward tables must have {sa} entries")));
        }
        for (i, row) in transition.chunks(n_states).enumerate() {
            check_distribution(row).map_err(|e| {
                Error::InvalidMdp(format!(
                    "P[{}][{}] {e}",
                    i / n_actions,
                    i % n_actions
                ))
            })?;
        }
        if let Some(r) = reward_mean.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp(format!("reward {r} is not finite")));
        }
        if let Some(w) = reward_noise.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidMdp(format!("noise half-width {w} must be >= 0")));
        }
        if horizon == 0 {
            return Err(Error::InvalidMdp("horizon must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&discount) {
            return Err(Error::InvalidMdp(format!("discount {discount} outside [0, 1]")));
        }
        if initial_state >= n_states {
            return Err(Error::InvalidMdp(format!("initial state {initial_state} out of range")));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward_mean,
            reward_noise,
            horizon,
            discount,
            initial_state,
        })
    }

    /// Same MDP with deterministic rewards.
    pub fn deterministic_rewards(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward_mean: Vec<f64>,
        horizon: usize,
        discount: f64,
        initial_state: usize,
    ) -> Result<Self> {
        let noise = vec![0.0; reward_mean.len()];
        Self::new(
            n_states,
            n_actions,
            transition,
            reward_mean,
            noise,
            horizon,
            discount,
            initial_state,
        )
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward_mean[s * self.n_actions + a]
    }

    pub fn reward_noise(&self, s: usize, a: usize) -> f64 {
        self.reward_noise[s * self.n_actions + a]
    }

    /// Largest absolute mean reward.
    pub fn reward_bound(&self) -> f64 {
        self.reward_mean.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn with_initial_state(mut self, s0: usize) -> Result<Self> {
        if s0 >= self.n_states {
            return Err(Error::InvalidMdp(format!("initial state {s0} out of range")));
        }
        self.initial_state = s0;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidMdp("horizon must be at least 1".into()));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn with_discount(mut self, discount: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&discount) {
            return Err(Error::InvalidMdp(format!("discount {discount} outside [0, 1]")));
        }
        self.discount = discount;
        Ok(self)
    }

    /// Same dynamics with every reward (and its noise) set to zero.
    pub fn zero_rewards(mut self) -> Self {
        self.reward_mean.iter_mut().for_each(|r| *r = 0.0);
        self.reward_noise.iter_mut().for_each(|w| *w = 0.0);
        self
    }

    /// Overwrites a mean reward; used by fault-injection checks.
    pub fn set_reward(&mut self, s: usize, a: usize, r: f64) {
        self.reward_mean[s * self.n_actions + a] = r;
    }

    pub fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        policy.ensure_shape(self.n_states, self.n_actions)
    }

    /// Draws a reward for `(s, a)` from its bounded uniform law.
    pub fn sample_reward<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> f64 {
        let w = self.reward_noise(s, a);
        if w > 0.0 {
            self.reward(s, a) + w * (2.0 * rng.gen::<f64>() - 1.0)
        } else {
            self.reward(s, a)
        }
    }

    /// `sum_{s'} P(s'|s,a) v[s']`.
    pub fn expect_next(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.transition_row(s, a)
            .iter()
            .zip(v)
            .map(|(p, x)| p * x)
            .sum()
    }
}

/// Dense table indexed by `(state, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

/// Net Q-functions share the representation of ordinary Q-tables.
pub type NetQTable = QTable;

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_vec(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "Q-table has {} entries, expected {}x{}",
                values.len(),
                n_states,
                n_actions
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `V[s] = sum_a pi(a|s) Q[s][a]`.
    pub fn state_values(&self, policy: &TabularPolicy) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| {
                self.row(s)
                    .iter()
                    .zip(policy.row(s))
                    .map(|(q, p)| q * p)
                    .sum()
            })
            .collect()
    }

    /// Sup-norm distance.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> QTable {
        QTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Value and Q tables of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub values: Vec<f64>,
    pub q: QTable,
}

/// Backward induction over the `H` reward steps; element `t` holds `Q_t`.
pub fn backward_induction(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<Vec<QTable>> {
    mdp.check_policy(policy)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let gamma = mdp.discount;
    let mut stages = Vec::with_capacity(mdp.horizon);
    let mut next_v = vec![0.0; ns];
    for _ in 0..mdp.horizon {
        let mut q = QTable::zeros(ns, na);
        for s in 0..ns {
            for a in 0..na {
                q.set(s, a, mdp.reward(s, a) + gamma * mdp.expect_next(s, a, &next_v));
            }
        }
        next_v = q.state_values(policy);
        stages.push(q);
    }
    stages.reverse();
    Ok(stages)
}

/// Finite-horizon discounted value and Q of `policy`.
pub fn evaluate_exact(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<ValueTables> {
    let mut stages = backward_induction(mdp, policy)?;
    let q = stages.swap_remove(0);
    Ok(ValueTables {
        values: q.state_values(policy),
        q,
    })
}

/// One application of the discounted policy Bellman operator.
pub fn bellman_apply(mdp: &FiniteMdp, policy: &TabularPolicy, q: &QTable) -> QTable {
    let v = q.state_values(policy);
    let mut out = QTable::zeros(mdp.n_states, mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            out.set(s, a, mdp.reward(s, a) + mdp.discount * mdp.expect_next(s, a, &v));
        }
    }
    out
}

fn require_contractive(mdp: &FiniteMdp) -> Result<()> {
    if mdp.discount >= 1.0 {
        return Err(Error::UnsupportedDiscount(mdp.discount));
    }
    Ok(())
}

/// Infinite-horizon Q of `policy` via a direct linear solve of
/// `(I - gamma P Pi) Q = R`, polished by fixed-point sweeps until the
/// Bellman residual is at most `tol`.
pub fn evaluate_infinite(mdp: &FiniteMdp, policy: &TabularPolicy, tol: f64) -> Result<QTable> {
    mdp.check_policy(policy)?;
    require_contractive(mdp)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let n = ns * na;
    let gamma = mdp.discount;
    let mut system = DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for s in 0..ns {
        for a in 0..na {
            let row = s * na + a;
            rhs[row] = mdp.reward(s, a);
            for (s2, &p) in mdp.transition_row(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for a2 in 0..na {
                    system[(row, s2 * na + a2)] -= gamma * p * policy.prob(s2, a2);
                }
            }
        }
    }
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NonFinite("singular evaluation system".into()))?;
    let mut q = QTable::from_vec(ns, na, solution.iter().copied().collect())?;
    for _ in 0..1000 {
        let next = bellman_apply(mdp, policy, &q);
        let residual = next.sup_distance(&q);
        q = next;
        if residual <= tol {
            return Ok(q);
        }
    }
    Err(Error::NotConverged {
        iters: 1000,
        last_change: bellman_apply(mdp, policy, &q).sup_distance(&q),
    })
}

/// Infinite-horizon Q by plain value iteration from zero.
pub fn evaluate_infinite_iterative(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
    tol: f64,
    max_iters: usize,
) -> Result<QTable> {
    mdp.check_policy(policy)?;
    require_contractive(mdp)?;
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    let mut change = f64::INFINITY;
    for _ in 0..max_iters {
        let next = bellman_apply(mdp, policy, &q);
        change = next.sup_distance(&q);
        q = next;
        if change <= tol {
            return Ok(q);
        }
    }
    Err(Error::NotConverged {
        iters: max_iters,
        last_change: change,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// `sum_t gamma^t r_t` over the stored steps.
    pub episode_return: f64,
}

/// Runs `n_episodes` episodes of exactly `H` steps from `s0`.
pub fn simulate(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    mdp.check_policy(policy)?;
    if n_episodes == 0 {
        return Err(Error::Config("n_episodes must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_episodes)
        .map(|_| rollout(mdp, policy, &mut rng))
        .collect())
}

pub(crate) fn rollout<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
    rng: &mut R,
) -> Trajectory {
    let mut steps = Vec::with_capacity(mdp.horizon);
    let mut s = mdp.initial_state;
    let mut ret = 0.0;
    let mut disc = 1.0;
    for _ in 0..mdp.horizon {
        let a = policy.sample(s, rng);
        let r = mdp.sample_reward(s, a, rng);
        let s2 = sample_index(mdp.transition_row(s, a), rng);
        ret += disc * r;
        disc *= mdp.discount;
        steps.push(Step {
            state: s,
            action: a,
            reward: r,
            next_state: s2,
        });
        s = s2;
    }
    Trajectory {
        steps,
        episode_return: ret,
    }
}

/// Text form: header `mdp n_states n_actions H gamma s0`, then one line per
/// `(s, a)`: `s a R halfwidth p_0 ... p_{n-1}`. Floats use the shortest
/// representation that parses back to the same value.
impl fmt::Display for FiniteMdp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "mdp {} {} {} {:?} {}",
            self.n_states, self.n_actions, self.horizon, self.discount, self.initial_state
        )?;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                write!(f, "{s} {a} {:?} {:?}", self.reward(s, a), self.reward_noise(s, a))?;
                for p in self.transition_row(s, a) {
                    write!(f, " {p:?}")?;
                }
                writeln!(f)?;
            }
        }
        Ok(())
    }
}

impl FromStr for FiniteMdp {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = content_lines(text);
        let (hline, header) = lines.next().ok_or_else(|| Error::parse(1, "missing mdp header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "mdp" {
            return Err(Error::parse(hline, "expected `mdp n_states n_actions H gamma s0`"));
        }
        let ns: usize = parse_field(fields[1], hline)?;
        let na: usize = parse_field(fields[2], hline)?;
        let horizon: usize = parse_field(fields[3], hline)?;
        let gamma: f64 = parse_field(fields[4], hline)?;
        let s0: usize = parse_field(fields[5], hline)?;
        if ns == 0 || na == 0 {
            return Err(Error::parse(hline, "state and action counts must be positive"));
        }
        let mut seen = vec![false; ns * na];
        let mut transition = vec![0.0; ns * na * ns];
        let mut reward = vec![0.0; ns * na];
        let mut noise = vec![0.0; ns * na];
        for (ln, line) in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 4 + ns {
                return Err(Error::parse(ln, format!("expected {} fields", 4 + ns)));
            }
            let s: usize = parse_field(toks[0], ln)?;
            let a: usize = parse_field(toks[1], ln)?;
            if s >= ns || a >= na {
                return Err(Error::parse(ln, "state or action index out of range"));
            }
            let idx = s * na + a;
            if std::mem::replace(&mut seen[idx], true) {
                return Err(Error::parse(ln, format!("duplicate row for ({s}, {a})")));
            }
            reward[idx] = parse_field(toks[2], ln)?;
            noise[idx] = parse_field(toks[3], ln)?;
            for (k, t) in toks[4..].iter().enumerate() {
                transition[idx * ns + k] = parse_field(t, ln)?;
            }
        }
        if let Some(missing) = seen.iter().position(|x| !x) {
            return Err(Error::parse(
                hline,
                format!("missing row for ({}, {})", missing / na, missing % na),
            ));
        }
        FiniteMdp::new(ns, na, transition, reward, noise, horizon, gamma, s0)
    }
}
