//! Exact discrete optimal transport over finite action supports.
//!
//! Builds the general transport switching cost: surplus measures moved
//! across partition components (learning), within-component rearrangement
//! plans (transaction), and their combination into a single feasible
//! coupling of the two action distributions.
//!
//! Plans are solved by successive shortest paths on the bipartite support
//! graph, in `f64` on residual capacities so that a saturated arc is set to
//! exactly zero and marginals are reproduced to rounding error.

use std::collections::BTreeMap;
use std::fmt;

use crate::cost::Partition;
use crate::error::{Error, Result};

/// Largest support accepted on either side of a transport problem.
pub const MAX_SUPPORT: usize = 64;
/// Allowed total-mass mismatch between source and target.
pub const MASS_TOL: f64 = 1e-9;

/// Nonnegative masses on distinct action indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiscreteMeasure {
    support: Vec<usize>,
    mass: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(support: Vec<usize>, mass: Vec<f64>) -> Result<Self> {
        if support.len() != mass.len() {
            return Err(Error::Shape("support and mass lengths differ".into()));
        }
        if let Some(m) = mass.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(Error::InvalidDistribution(format!("mass {m} must be finite and >= 0")));
        }
        let mut sorted = support.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidDistribution("support indices must be distinct".into()));
        }
        Ok(Self { support, mass })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Positive entries of a dense vector.
    pub fn from_dense(weights: &[f64]) -> Self {
        let (support, mass) = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, &w)| (i, w))
            .unzip();
        Self { support, mass }
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support.iter().copied().zip(self.mass.iter().copied())
    }

    /// Mass at action `x` (zero off the support).
    pub fn mass_at(&self, x: usize) -> f64 {
        self.iter().filter(|(y, _)| *y == x).map(|(_, m)| m).sum()
    }

    fn push(&mut self, x: usize, m: f64) {
        if m > 0.0 {
            self.support.push(x);
            self.mass.push(m);
        }
    }

    fn same_as(&self, other: &DiscreteMeasure) -> bool {
        let sorted = |m: &DiscreteMeasure| {
            let mut v: Vec<(usize, f64)> = m.iter().collect();
            v.sort_by_key(|(x, _)| *x);
            v
        };
        let (a, b) = (sorted(self), sorted(other));
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|((x, p), (y, q))| x == y && (p - q).abs() <= 1e-15)
    }
}

/// Sparse coupling `(source action, target action) -> mass`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransportPlan {
    entries: BTreeMap<(usize, usize), f64>,
}

impl TransportPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, src: usize, dst: usize, mass: f64) {
        if mass > 0.0 {
            *self.entries.entry((src, dst)).or_insert(0.0) += mass;
        }
    }

    pub fn get(&self, src: usize, dst: usize) -> f64 {
        self.entries.get(&(src, dst)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &m)| (i, j, m))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.values().sum()
    }

    /// Source marginal as a dense vector of length `n`.
    pub fn row_marginal(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (i, _, m) in self.iter() {
            out[i] += m;
        }
        out
    }

    /// Target marginal as a dense vector of length `n`.
    pub fn col_marginal(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (_, j, m) in self.iter() {
            out[j] += m;
        }
        out
    }

    pub fn cost(&self, ground: &GroundCost) -> f64 {
        self.iter().map(|(i, j, m)| m * ground.cost(i, j)).sum()
    }

    pub fn scaled(&self, k: f64) -> TransportPlan {
        let mut out = TransportPlan::new();
        for (i, j, m) in self.iter() {
            out.add(i, j, k * m);
        }
        out
    }

    pub fn merge(&mut self, other: &TransportPlan) {
        for (i, j, m) in other.iter() {
            self.add(i, j, m);
        }
    }
}

/// Sparse triples `(src, dst, mass)`, one per line.
impl fmt::Display for TransportPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, j, m) in self.iter() {
            writeln!(f, "({i}, {j}, {m:?})")?;
        }
        Ok(())
    }
}

/// Cost of moving a unit of mass from action `x` to action `y`.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundCost {
    /// 1 when `x` and `y` lie in different components, 0 otherwise.
    CrossComponent(Partition),
    Constant(f64),
    /// Dense `n x n` matrix, row-major.
    Matrix { n: usize, values: Vec<f64> },
}

impl GroundCost {
    pub fn constant_one() -> Self {
        GroundCost::Constant(1.0)
    }

    pub fn matrix(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Shape(format!("cost matrix needs {} entries", n * n)));
        }
        let g = GroundCost::Matrix { n, values };
        g.validate(n)?;
        Ok(g)
    }

    /// Checks the cost is defined, finite and nonnegative on `n_actions` actions.
    pub fn validate(&self, n_actions: usize) -> Result<()> {
        match self {
            GroundCost::CrossComponent(p) => {
                if p.len() != n_actions {
                    return Err(Error::Shape(format!(
                        "ground-cost partition covers {} actions, expected {n_actions}",
                        p.len()
                    )));
                }
            }
            GroundCost::Constant(c) => {
                if !(c.is_finite() && *c >= 0.0) {
                    return Err(Error::InvalidCost(format!("constant ground cost {c}")));
                }
            }
            GroundCost::Matrix { n, values } => {
                if *n < n_actions {
                    return Err(Error::Shape(format!(
                        "cost matrix is {n}x{n}, need at least {n_actions}"
                    )));
                }
                if let Some(c) = values.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
                    return Err(Error::InvalidCost(format!("ground cost entry {c}")));
                }
            }
        }
        Ok(())
    }

    pub fn cost(&self, x: usize, y: usize) -> f64 {
        match self {
            GroundCost::CrossComponent(p) => {
                if p.component(x) == p.component(y) {
                    0.0
                } else {
                    1.0
                }
            }
            GroundCost::Constant(c) => *c,
            GroundCost::Matrix { n, values } => values[x * n + y],
        }
    }
}

/// Which feasible plan backs a transport cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlanMode {
    /// Minimum-cost plan.
    #[default]
    Optimal,
    /// Northwest-corner plan in support order: feasible, not optimal.
    FirstFeasible,
}

fn check_balance(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    if mu.len() > MAX_SUPPORT || nu.len() > MAX_SUPPORT {
        return Err(Error::TooLarge(mu.len().max(nu.len()), MAX_SUPPORT));
    }
    let (a, b) = (mu.total(), nu.total());
    if (a - b).abs() > MASS_TOL {
        return Err(Error::MassMismatch {
            source_mass: a,
            target_mass: b,
        });
    }
    Ok(())
}

struct Arc {
    to: usize,
    rev: usize,
    residual: f64,
    cost: f64,
}

struct FlowGraph {
    adj: Vec<Vec<usize>>,
    arcs: Vec<Arc>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        Self {
            adj: vec![Vec::new(); n],
            arcs: Vec::new(),
        }
    }

    fn add_arc(&mut self, from: usize, to: usize, cap: f64, cost: f64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc {
            to,
            rev: id + 1,
            residual: cap,
            cost,
        });
        self.arcs.push(Arc {
            to: from,
            rev: id,
            residual: 0.0,
            cost: -cost,
        });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        id
    }

    /// Bellman-Ford shortest path on arcs with positive residual; returns the
    /// arc used to enter each node.
    fn shortest_path(&self, source: usize) -> Vec<Option<usize>> {
        let n = self.adj.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut parent = vec![None; n];
        dist[source] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if dist[u] == f64::INFINITY {
                    continue;
                }
                for &e in &self.adj[u] {
                    let arc = &self.arcs[e];
                    if arc.residual <= 0.0 {
                        continue;
                    }
                    let nd = dist[u] + arc.cost;
                    // strict improvement beyond rounding noise keeps the
                    // relaxation finite on zero-cost cycles
                    if nd < dist[arc.to] - 1e-14 * (1.0 + nd.abs()) {
                        dist[arc.to] = nd;
                        parent[arc.to] = Some(e);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        parent
    }
}

/// Minimum-cost coupling of `mu` and `nu` under `cost`.
pub fn solve_ot(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &GroundCost,
) -> Result<(TransportPlan, f64)> {
    check_balance(mu, nu)?;
    if mu.is_empty() || nu.is_empty() {
        return Ok((TransportPlan::new(), 0.0));
    }
    let (m, n) = (mu.len(), nu.len());
    let source = 0;
    let sink = m + n + 1;
    let mut g = FlowGraph::new(m + n + 2);
    for (i, (_, w)) in mu.iter().enumerate() {
        g.add_arc(source, 1 + i, w, 0.0);
    }
    let mut pair_arcs = Vec::with_capacity(m * n);
    for (i, (x, wx)) in mu.iter().enumerate() {
        for (j, (y, wy)) in nu.iter().enumerate() {
            let id = g.add_arc(1 + i, 1 + m + j, wx.min(wy), cost.cost(x, y));
            pair_arcs.push((x, y, id));
        }
    }
    for (j, (_, w)) in nu.iter().enumerate() {
        g.add_arc(1 + m + j, sink, w, 0.0);
    }

    // each augmentation saturates at least one arc
    let max_rounds = 4 * (m + n) * (m * n + m + n) + 16;
    for _ in 0..max_rounds {
        let parent = g.shortest_path(source);
        if parent[sink].is_none() {
            break;
        }
        let mut path = Vec::new();
        let mut v = sink;
        while let Some(e) = parent[v] {
            path.push(e);
            v = g.arcs[g.arcs[e].rev].to;
        }
        let delta = path
            .iter()
            .map(|&e| g.arcs[e].residual)
            .fold(f64::INFINITY, f64::min);
        if delta <= 0.0 {
            break;
        }
        for &e in &path {
            let arc = &mut g.arcs[e];
            arc.residual = if arc.residual == delta {
                0.0
            } else {
                arc.residual - delta
            };
            let rev = arc.rev;
            g.arcs[rev].residual += delta;
        }
    }

    let mut plan = TransportPlan::new();
    for &(x, y, id) in &pair_arcs {
        plan.add(x, y, g.arcs[id + 1].residual);
    }
    let objective = plan.cost(cost);

    if mu.same_as(nu) {
        let mut identity = TransportPlan::new();
        for (x, w) in mu.iter() {
            identity.add(x, x, w);
        }
        let id_cost = identity.cost(cost);
        if id_cost <= objective + 1e-15 * (1.0 + objective.abs()) {
            return Ok((identity, id_cost));
        }
    }
    Ok((plan, objective))
}

/// Northwest-corner coupling in support order.
pub fn northwest_corner(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<TransportPlan> {
    check_balance(mu, nu)?;
    let mut plan = TransportPlan::new();
    let (xs, ys): (Vec<_>, Vec<_>) = (mu.iter().collect(), nu.iter().collect());
    let (mut i, mut j) = (0, 0);
    let (mut left_x, mut left_y) = match (xs.first(), ys.first()) {
        (Some(a), Some(b)) => (a.1, b.1),
        _ => return Ok(plan),
    };
    while i < xs.len() && j < ys.len() {
        let moved = left_x.min(left_y);
        plan.add(xs[i].0, ys[j].0, moved);
        if left_x <= left_y {
            left_y -= moved;
            i += 1;
            left_x = xs.get(i).map_or(0.0, |p| p.1);
        } else {
            left_x -= moved;
            j += 1;
            left_y = ys.get(j).map_or(0.0, |p| p.1);
        }
    }
    Ok(plan)
}

/// Plan and its cost under the requested mode.
pub fn transport(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &GroundCost,
    mode: PlanMode,
) -> Result<(TransportPlan, f64)> {
    match mode {
        PlanMode::Optimal => solve_ot(mu, nu, cost),
        PlanMode::FirstFeasible => {
            let plan = northwest_corner(mu, nu)?;
            let c = plan.cost(cost);
            Ok((plan, c))
        }
    }
}

fn check_rows(pi_o_row: &[f64], pi_n_row: &[f64], partition: &Partition) -> Result<()> {
    if pi_o_row.len() != pi_n_row.len() || pi_o_row.len() != partition.len() {
        return Err(Error::Shape(format!(
            "rows of length {} and {} with a partition of {} actions",
            pi_o_row.len(),
            pi_n_row.len(),
            partition.len()
        )));
    }
    Ok(())
}

/// Conditional distribution of `row` on component `l`; empty when the
/// component carries no mass.
fn conditional(row: &[f64], partition: &Partition, l: usize, mass: f64) -> DiscreteMeasure {
    let mut out = DiscreteMeasure::empty();
    if mass <= 0.0 {
        return out;
    }
    for &x in partition.members(l) {
        out.push(x, row[x] / mass);
    }
    out
}

/// Surplus mass that must leave each component of `pi_o` (`rho`) and the
/// deficit each component of `pi_n` must receive (`eta`).
pub fn surplus_measures(
    pi_o_row: &[f64],
    pi_n_row: &[f64],
    partition: &Partition,
) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    check_rows(pi_o_row, pi_n_row, partition)?;
    let a = partition.component_masses(pi_o_row);
    let b = partition.component_masses(pi_n_row);
    let mut rho = DiscreteMeasure::empty();
    let mut eta = DiscreteMeasure::empty();
    for l in 0..partition.n_components() {
        if a[l] > b[l] {
            for &x in partition.members(l) {
                rho.push(x, (a[l] - b[l]) * pi_o_row[x] / a[l]);
            }
        } else if b[l] > a[l] {
            for &y in partition.members(l) {
                eta.push(y, (b[l] - a[l]) * pi_n_row[y] / b[l]);
            }
        }
    }
    Ok((rho, eta))
}

/// Cost of the cross-component plan between the surplus measures.
pub fn learning_cost_general(
    pi_o_row: &[f64],
    pi_n_row: &[f64],
    partition: &Partition,
    c1: &GroundCost,
    mode: PlanMode,
) -> Result<f64> {
    let (rho, eta) = surplus_measures(pi_o_row, pi_n_row, partition)?;
    Ok(transport(&rho, &eta, c1, mode)?.1)
}

/// Within-component plans weighted by the retained mass `tau_l = a_l ∧ b_l`.
fn within_component_plans(
    pi_o_row: &[f64],
    pi_n_row: &[f64],
    partition: &Partition,
    c2: &GroundCost,
    mode: PlanMode,
) -> Result<Vec<(f64, TransportPlan, f64)>> {
    check_rows(pi_o_row, pi_n_row, partition)?;
    let a = partition.component_masses(pi_o_row);
    let b = partition.component_masses(pi_n_row);
    let mut out = Vec::new();
    for l in 0..partition.n_components() {
        let tau = a[l].min(b[l]);
        if tau <= 0.0 {
            continue;
        }
        let from = conditional(pi_o_row, partition, l, a[l]);
        let to = conditional(pi_n_row, partition, l, b[l]);
        let (plan, c) = transport(&from, &to, c2, mode)?;
        out.push((tau, plan, c));
    }
    Ok(out)
}

/// `sum_l tau_l * (within-component plan cost under c2)`.
pub fn transaction_cost_general(
    pi_o_row: &[f64],
    pi_n_row: &[f64],
    partition: &Partition,
    c2: &GroundCost,
    mode: PlanMode,
) -> Result<f64> {
    Ok(within_component_plans(pi_o_row, pi_n_row, partition, c2, mode)?
        .iter()
        .map(|(tau, _, c)| tau * c)
        .sum())
}

/// Learning plan plus the tau-weighted transaction plans: a coupling of the
/// full old and new action distributions.
pub fn combined_plan(
    pi_o_row: &[f64],
    pi_n_row: &[f64],
    partition: &Partition,
    c1: &GroundCost,
    c2: &GroundCost,
    mode: PlanMode,
) -> Result<TransportPlan> {
    let (rho, eta) = surplus_measures(pi_o_row, pi_n_row, partition)?;
    let (mut plan, _) = transport(&rho, &eta, c1, mode)?;
    for (tau, within, _) in within_component_plans(pi_o_row, pi_n_row, partition, c2, mode)? {
        plan.merge(&within.scaled(tau));
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_way() -> Partition {
        Partition::new(vec![0, 0, 1, 1]).unwrap()
    }

    #[test]
    fn both_empty_is_free() {
        let (plan, c) = solve_ot(
            &DiscreteMeasure::empty(),
            &DiscreteMeasure::empty(),
            &GroundCost::constant_one(),
        )
        .unwrap();
        assert!(plan.is_empty());
        assert_eq!(c, 0.0);
    }

    #[test]
    fn equal_measures_use_identity_under_zero_diagonal() {
        let mu = DiscreteMeasure::new(vec![0, 1, 2], vec![0.2, 0.5, 0.3]).unwrap();
        let cost = GroundCost::matrix(3, vec![0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0]).unwrap();
        let (plan, c) = solve_ot(&mu, &mu, &cost).unwrap();
        assert_eq!(c, 0.0);
        assert_eq!(plan.get(1, 1), 0.5);
        assert_eq!(plan.len(), 3);
    }

    #[test]
    fn mass_mismatch_is_infeasible() {
        let mu = DiscreteMeasure::new(vec![0], vec![0.5]).unwrap();
        let nu = DiscreteMeasure::new(vec![1], vec![0.6]).unwrap();
        assert!(matches!(
            solve_ot(&mu, &nu, &GroundCost::constant_one()),
            Err(Error::MassMismatch { .. })
        ));
    }

    #[test]
    fn oversized_instance_rejected() {
        let n = MAX_SUPPORT + 1;
        let mu = DiscreteMeasure::new((0..n).collect(), vec![1.0 / n as f64; n]).unwrap();
        assert!(matches!(
            solve_ot(&mu, &mu, &GroundCost::constant_one()),
            Err(Error::TooLarge(..))
        ));
    }

    #[test]
    fn duplicate_support_rejected() {
        assert!(DiscreteMeasure::new(vec![1, 1], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn line_metric_matches_hand_solution() {
        // move 0.5 from action 0 to action 2 on a line: cost 2 * 0.5
        let mu = DiscreteMeasure::new(vec![0, 1], vec![0.5, 0.5]).unwrap();
        let nu = DiscreteMeasure::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        let line: Vec<f64> = (0..3)
            .flat_map(|i: i32| (0..3).map(move |j: i32| (i - j).abs() as f64))
            .collect();
        let (_, c) = solve_ot(&mu, &nu, &GroundCost::matrix(3, line).unwrap()).unwrap();
        assert!((c - 1.0).abs() < 1e-15);
    }

    #[test]
    fn surplus_two_components() {
        let o = [0.35, 0.35, 0.1, 0.2];
        let n = [0.2, 0.2, 0.3, 0.3];
        let (rho, eta) = surplus_measures(&o, &n, &two_way()).unwrap();
        assert!((rho.total() - 0.3).abs() < 1e-15);
        assert!((eta.total() - 0.3).abs() < 1e-15);
        assert!(rho.support().iter().all(|&x| x < 2));
        assert!(eta.support().iter().all(|&x| x >= 2));
    }

    #[test]
    fn surplus_skips_empty_components() {
        let o = [1.0, 0.0, 0.0, 0.0];
        let n = [0.0, 0.0, 0.5, 0.5];
        let (rho, eta) = surplus_measures(&o, &n, &two_way()).unwrap();
        assert_eq!(rho.support(), &[0]);
        assert_eq!(eta.total(), 1.0);
        let t = transaction_cost_general(&o, &n, &two_way(), &GroundCost::constant_one(), PlanMode::Optimal)
            .unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn identical_rows_combine_to_diagonal() {
        let o = [0.1, 0.4, 0.3, 0.2];
        let p = two_way();
        let plan = combined_plan(
            &o,
            &o,
            &p,
            &GroundCost::CrossComponent(p.clone()),
            &GroundCost::constant_one(),
            PlanMode::Optimal,
        )
        .unwrap();
        assert_eq!(plan.len(), 4);
        for (i, j, m) in plan.iter() {
            assert_eq!(i, j);
            assert!((m - o[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn first_feasible_is_feasible_but_can_cost_more() {
        let mu = DiscreteMeasure::new(vec![0, 1], vec![0.5, 0.5]).unwrap();
        let nu = DiscreteMeasure::new(vec![1, 0], vec![0.5, 0.5]).unwrap();
        let cost = GroundCost::matrix(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let (nw, c_nw) = transport(&mu, &nu, &cost, PlanMode::FirstFeasible).unwrap();
        let (_, c_opt) = transport(&mu, &nu, &cost, PlanMode::Optimal).unwrap();
        assert_eq!(nw.row_marginal(2), vec![0.5, 0.5]);
        assert_eq!(nw.col_marginal(2), vec![0.5, 0.5]);
        assert_eq!(c_opt, 0.0);
        assert_eq!(c_nw, 1.0);
    }

    #[test]
    fn plan_prints_sparse_triples() {
        let mut plan = TransportPlan::new();
        plan.add(0, 2, 0.25);
        assert_eq!(plan.to_string(), "(0, 2, 0.25)\n");
    }
}
