//! Net values, the net Bellman operator and switch-optimal search.
//!
//! Finite-horizon net values subtract the switching cost once from the
//! `H`-step value. The net Bellman operator charges `(1 - gamma) C` per step,
//! so its fixed point is the discounted infinite-horizon Q minus `C`.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::cost::{CustomCostTable, SwitchCost};
use crate::error::{Error, Result};
use crate::format::fmt_num;
use crate::mdp::{evaluate_exact, FiniteMdp, NetQTable, QTable};
use crate::policy::TabularPolicy;

/// Largest candidate set enumerated exhaustively.
pub const MAX_CANDIDATES: f64 = 1e6;

/// An MDP, the incumbent policy and the cost of leaving it.
#[derive(Debug, Clone)]
pub struct SwitchProblem {
    mdp: FiniteMdp,
    old_policy: TabularPolicy,
    cost: SwitchCost,
}

impl SwitchProblem {
    pub fn new(mdp: FiniteMdp, old_policy: TabularPolicy, cost: SwitchCost) -> Result<Self> {
        mdp.check_policy(&old_policy)?;
        cost.validate(mdp.n_states(), mdp.n_actions())?;
        Ok(Self {
            mdp,
            old_policy,
            cost,
        })
    }

    pub fn mdp(&self) -> &FiniteMdp {
        &self.mdp
    }

    pub fn old_policy(&self) -> &TabularPolicy {
        &self.old_policy
    }

    pub fn cost(&self) -> &SwitchCost {
        &self.cost
    }

    pub fn initial_state(&self) -> usize {
        self.mdp.initial_state()
    }

    pub fn with_initial_state(mut self, s0: usize) -> Result<Self> {
        self.mdp = self.mdp.with_initial_state(s0)?;
        Ok(self)
    }

    /// Cost of adopting `candidate`. Keeping the old policy is free under
    /// family costs; custom tables decide for themselves.
    pub fn switch_cost(&self, candidate: &TabularPolicy) -> Result<f64> {
        self.mdp.check_policy(candidate)?;
        match &self.cost {
            SwitchCost::Family(_) if candidate.approx_eq(&self.old_policy) => Ok(0.0),
            cost => cost.evaluate(&self.old_policy, candidate),
        }
    }

    /// As [`switch_cost`](Self::switch_cost) with a Monte-Carlo state sample.
    pub fn switch_cost_mc(&self, candidate: &TabularPolicy, n_samples: usize, seed: u64) -> Result<f64> {
        self.mdp.check_policy(candidate)?;
        match &self.cost {
            SwitchCost::Family(_) if candidate.approx_eq(&self.old_policy) => Ok(0.0),
            cost => cost.evaluate_mc(&self.old_policy, candidate, n_samples, seed),
        }
    }
}

/// Finite-horizon value tables and their net counterparts.
#[derive(Debug, Clone, PartialEq)]
pub struct NetValue {
    /// Net value at the initial state.
    pub v_net: f64,
    pub v_net_all: Vec<f64>,
    pub q_net: NetQTable,
    pub value: Vec<f64>,
    pub q: QTable,
    pub cost: f64,
}

pub fn net_value_exact(problem: &SwitchProblem, candidate: &TabularPolicy) -> Result<NetValue> {
    let ev = evaluate_exact(problem.mdp(), candidate)?;
    let cost = problem.switch_cost(candidate)?;
    let v_net_all: Vec<f64> = ev.values.iter().map(|v| v - cost).collect();
    Ok(NetValue {
        v_net: v_net_all[problem.initial_state()],
        v_net_all,
        q_net: ev.q.map(|q| q - cost),
        value: ev.values,
        q: ev.q,
        cost,
    })
}

/// `R - (1 - gamma) c + gamma P Pi Q` for a precomputed cost value `c`.
pub fn net_bellman_apply_with_cost(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
    cost: f64,
    q: &NetQTable,
) -> Result<NetQTable> {
    mdp.check_policy(policy)?;
    let gamma = mdp.discount();
    if gamma >= 1.0 {
        return Err(Error::UnsupportedDiscount(gamma));
    }
    if q.n_states() != mdp.n_states() || q.n_actions() != mdp.n_actions() {
        return Err(Error::Shape("Q table does not match the MDP".into()));
    }
    let v = q.state_values(policy);
    let charge = (1.0 - gamma) * cost;
    let mut out = QTable::zeros(mdp.n_states(), mdp.n_actions());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            out.set(s, a, mdp.reward(s, a) - charge + gamma * mdp.expect_next(s, a, &v));
        }
    }
    Ok(out)
}

pub fn net_bellman_apply(
    problem: &SwitchProblem,
    policy: &TabularPolicy,
    q: &NetQTable,
) -> Result<NetQTable> {
    let cost = problem.switch_cost(policy)?;
    net_bellman_apply_with_cost(problem.mdp(), policy, cost, q)
}

/// Iterates the net Bellman operator from zero until the sup-norm change is
/// at most `tol`.
pub fn net_q_fixed_point(
    problem: &SwitchProblem,
    policy: &TabularPolicy,
    tol: f64,
    max_iters: usize,
) -> Result<NetQTable> {
    let cost = problem.switch_cost(policy)?;
    let mdp = problem.mdp();
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    let mut change = f64::INFINITY;
    for _ in 0..max_iters {
        let next = net_bellman_apply_with_cost(mdp, policy, cost, &q)?;
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

/// Finite policy sets searched for a switch-optimal policy.
#[derive(Debug, Clone, PartialEq)]
pub enum CandidateSet {
    /// Every deterministic policy, lexicographic with state 0 most significant.
    AllDeterministic,
    /// Every policy whose probabilities are multiples of `1 / resolution`.
    StochasticGrid { resolution: usize },
    Explicit(Vec<TabularPolicy>),
}

impl CandidateSet {
    pub fn size(&self, n_states: usize, n_actions: usize) -> f64 {
        match self {
            CandidateSet::AllDeterministic => (n_actions as f64).powi(n_states as i32),
            CandidateSet::StochasticGrid { resolution } => {
                (simplex_grid(n_actions, *resolution).len() as f64).powi(n_states as i32)
            }
            CandidateSet::Explicit(v) => v.len() as f64,
        }
    }

    pub fn enumerate(&self, n_states: usize, n_actions: usize) -> Result<Vec<TabularPolicy>> {
        let size = self.size(n_states, n_actions);
        if size > MAX_CANDIDATES {
            return Err(Error::CandidateSetTooLarge(size));
        }
        let rows: Vec<Vec<f64>> = match self {
            CandidateSet::Explicit(v) => {
                for p in v {
                    p.ensure_shape(n_states, n_actions)?;
                }
                return Ok(v.clone());
            }
            CandidateSet::AllDeterministic => (0..n_actions)
                .map(|a| (0..n_actions).map(|b| f64::from(u8::from(a == b))).collect())
                .collect(),
            CandidateSet::StochasticGrid { resolution } => {
                if *resolution == 0 {
                    return Err(Error::Config("grid resolution must be at least 1".into()));
                }
                simplex_grid(n_actions, *resolution)
            }
        };
        let k = rows.len();
        let mut out = Vec::with_capacity(size as usize);
        let mut digits = vec![0usize; n_states];
        loop {
            let probs: Vec<f64> = digits.iter().flat_map(|&d| rows[d].iter().copied()).collect();
            out.push(TabularPolicy::new(n_states, n_actions, probs)?);
            let mut i = n_states;
            loop {
                if i == 0 {
                    return Ok(out);
                }
                i -= 1;
                digits[i] += 1;
                if digits[i] < k {
                    break;
                }
                digits[i] = 0;
            }
        }
    }
}

/// Rows `c / resolution` for every composition `c` of `resolution` into
/// `n_actions` parts.
fn simplex_grid(n_actions: usize, resolution: usize) -> Vec<Vec<f64>> {
    fn rec(left: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in (0..=left).rev() {
            prefix.push(c);
            rec(left - c, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut comps = Vec::new();
    rec(resolution, n_actions, &mut Vec::new(), &mut comps);
    comps
        .into_iter()
        .map(|c| c.into_iter().map(|x| x as f64 / resolution as f64).collect())
        .collect()
}

/// One line of a search ranking. `policy_id` 0 is the old policy; candidate
/// `i` in enumeration order has id `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankEntry {
    pub rank: usize,
    pub policy_id: usize,
    pub value: f64,
    pub cost: f64,
    pub net_value: f64,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: TabularPolicy,
    pub best_id: usize,
    pub v_net: f64,
    /// Sorted by net value, descending; equal values keep id order.
    pub ranking: Vec<RankEntry>,
    pub policies: Vec<TabularPolicy>,
}

impl SearchResult {
    pub fn render_ranking(&self) -> String {
        let mut out = String::from("rank, policy_id, value, cost, net_value\n");
        for e in &self.ranking {
            let _ = writeln!(
                out,
                "{}, {}, {}, {}, {}",
                e.rank,
                e.policy_id,
                fmt_num(e.value),
                fmt_num(e.cost),
                fmt_num(e.net_value)
            );
        }
        out
    }
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

/// Maximiser of the finite-horizon net value at the initial state over the
/// candidate set plus the old policy.
pub fn switch_optimal_search(problem: &SwitchProblem, set: &CandidateSet) -> Result<SearchResult> {
    let mdp = problem.mdp();
    let mut policies = vec![problem.old_policy().clone()];
    let candidates = set.enumerate(mdp.n_states(), mdp.n_actions())?;
    if candidates.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    policies.extend(candidates);
    let scored: Vec<(f64, f64)> = policies
        .par_iter()
        .map(|p| net_value_exact(problem, p).map(|nv| (nv.value[problem.initial_state()], nv.cost)))
        .collect::<Result<_>>()?;

    let mut best_id = 0;
    for (id, &(v, c)) in scored.iter().enumerate() {
        let (bv, bc) = scored[best_id];
        let (net, best_net) = (v - c, bv - bc);
        if net > best_net && !near(net, best_net) {
            best_id = id;
        }
    }
    let mut ranking: Vec<RankEntry> = scored
        .iter()
        .enumerate()
        .map(|(id, &(value, cost))| RankEntry {
            rank: 0,
            policy_id: id,
            value,
            cost,
            net_value: value - cost,
        })
        .collect();
    ranking.sort_by(|a, b| b.net_value.total_cmp(&a.net_value));
    for (i, e) in ranking.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    let (bv, bc) = scored[best_id];
    Ok(SearchResult {
        best: policies[best_id].clone(),
        best_id,
        v_net: bv - bc,
        ranking,
        policies,
    })
}

/// Builds a custom cost under which no value-optimal policy in the set is
/// switch-optimal: each one is charged the value gap to the runner-up plus
/// one, every other policy is free. Absent when all values coincide.
pub fn nontriviality_witness(
    mdp: &FiniteMdp,
    pi_o: &TabularPolicy,
    set: &CandidateSet,
) -> Result<Option<CustomCostTable>> {
    let mut policies = vec![pi_o.clone()];
    policies.extend(set.enumerate(mdp.n_states(), mdp.n_actions())?);
    let s0 = mdp.initial_state();
    let values: Vec<f64> = policies
        .par_iter()
        .map(|p| evaluate_exact(mdp, p).map(|ev| ev.values[s0]))
        .collect::<Result<_>>()?;
    let v_star = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let v_low = values
        .iter()
        .copied()
        .filter(|&v| !near(v, v_star))
        .fold(f64::NEG_INFINITY, f64::max);
    if v_low == f64::NEG_INFINITY {
        return Ok(None);
    }
    let charge = v_star - v_low + 1.0;
    let mut table = CustomCostTable::new().with_default(0.0);
    for (p, &v) in policies.iter().zip(&values) {
        if near(v, v_star) {
            table = table.with_policy(p.clone(), charge);
        }
    }
    Ok(Some(table))
}
