//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use netswitch::{FiniteMdp, TabularPolicy};

/// Minimum transport cost by enumerating every basic feasible plan.
///
/// A basis of the `m x n` transportation polytope is a set of `m + n - 1`
/// cells forming a spanning tree of the bipartite row/column graph; its plan
/// is fixed by peeling leaves. The cheapest nonnegative basis plan is optimal.
pub fn brute_force_ot(mu: &[f64], nu: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (m, n) = (mu.len(), nu.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let k = m + n - 1;
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << cells.len()) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let chosen: Vec<(usize, usize)> =
            (0..cells.len()).filter(|b| mask >> b & 1 == 1).map(|b| cells[b]).collect();
        if let Some(plan) = basis_plan(mu, nu, &chosen) {
            let c: f64 = chosen.iter().zip(&plan).map(|(&(i, j), x)| x * cost[i][j]).sum();
            best = best.min(c);
        }
    }
    best
}

fn basis_plan(mu: &[f64], nu: &[f64], cells: &[(usize, usize)]) -> Option<Vec<f64>> {
    let m = mu.len();
    let mut row_left = mu.to_vec();
    let mut col_left = nu.to_vec();
    let mut flow = vec![f64::NAN; cells.len()];
    let mut open: Vec<bool> = vec![true; cells.len()];
    for _ in 0..cells.len() {
        // node degree over open cells; rows are 0..m, columns m..
        let mut degree = vec![0usize; m + nu.len()];
        for (c, &(i, j)) in cells.iter().enumerate() {
            if open[c] {
                degree[i] += 1;
                degree[m + j] += 1;
            }
        }
        let leaf = cells.iter().enumerate().find(|&(c, &(i, j))| {
            open[c] && (degree[i] == 1 || degree[m + j] == 1)
        });
        let (c, &(i, j)) = leaf?;
        let x = if degree[i] == 1 { row_left[i] } else { col_left[j] };
        flow[c] = x;
        row_left[i] -= x;
        col_left[j] -= x;
        open[c] = false;
    }
    let balanced = row_left.iter().chain(&col_left).all(|r| r.abs() < 1e-12);
    let feasible = flow.iter().all(|&x| x >= -1e-12);
    (balanced && feasible).then_some(flow)
}

/// Expected number of visits to each `(s, a)` in one episode.
pub fn occupancy(mdp: &FiniteMdp, policy: &TabularPolicy) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut dist = vec![0.0; ns];
    dist[mdp.initial_state()] = 1.0;
    let mut occ = vec![0.0; ns * na];
    for _ in 0..mdp.horizon() {
        let mut next = vec![0.0; ns];
        for (s, &d) in dist.iter().enumerate() {
            for a in 0..na {
                let w = d * policy.prob(s, a);
                occ[s * na + a] += w;
                for (s2, p) in mdp.transition_row(s, a).iter().enumerate() {
                    next[s2] += w * p;
                }
            }
        }
        dist = next;
    }
    occ
}

/// `H`-step discounted value by summing the state distribution forward.
pub fn forward_value(mdp: &FiniteMdp, policy: &TabularPolicy) -> f64 {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut dist = vec![0.0; ns];
    dist[mdp.initial_state()] = 1.0;
    let (mut total, mut disc) = (0.0, 1.0);
    for _ in 0..mdp.horizon() {
        let mut next = vec![0.0; ns];
        for (s, &d) in dist.iter().enumerate() {
            for a in 0..na {
                let w = d * policy.prob(s, a);
                total += disc * w * mdp.reward(s, a);
                for (s2, p) in mdp.transition_row(s, a).iter().enumerate() {
                    next[s2] += w * p;
                }
            }
        }
        dist = next;
        disc *= mdp.discount();
    }
    total
}

pub fn bin() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_netswitch"))
}
