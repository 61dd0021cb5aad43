//! Bundled problems: the two-state counterexample, a six-state chain with a
//! terminal bonus, and seeded random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::{CostSpec, CustomCostTable, Partition, PolicyClass, SwitchCost};
use crate::error::Result;
use crate::mdp::FiniteMdp;
use crate::net_value::SwitchProblem;
use crate::policy::TabularPolicy;

/// State indices and action indices of the two-state example.
pub const ALPHA: usize = 0;
pub const BETA: usize = 1;
pub const STAY: usize = 0;
pub const ALT: usize = 1;

/// Two states; `STAY` keeps the state, `ALT` moves to the other one; reward 1
/// whenever the next state is `ALPHA`. `H = 100`, `gamma = 1`.
pub fn two_state_mdp() -> FiniteMdp {
    let mut transition = vec![0.0; 8];
    let mut reward = vec![0.0; 4];
    for s in 0..2 {
        for a in 0..2 {
            let next = if a == STAY { s } else { 1 - s };
            transition[(s * 2 + a) * 2 + next] = 1.0;
            reward[s * 2 + a] = if next == ALPHA { 1.0 } else { 0.0 };
        }
    }
    FiniteMdp::deterministic_rewards(2, 2, transition, reward, 100, 1.0, ALPHA)
        .expect("two-state example is valid")
}

/// Uniform incumbent policy of the two-state example.
pub fn two_state_old_policy() -> TabularPolicy {
    TabularPolicy::uniform(2, 2)
}

/// 25 for deterministic same-action policies, 50 for deterministic mixed
/// ones, 500 for anything stochastic.
pub fn two_state_cost() -> CustomCostTable {
    use PolicyClass::*;
    CustomCostTable::new()
        .with_class(Stochastic, DeterministicSame, 25.0)
        .with_class(Stochastic, DeterministicMixed, 50.0)
        .with_class(Stochastic, Stochastic, 500.0)
}

/// The four deterministic candidates `n1..n4` as `(name, policy)`.
pub fn two_state_candidates() -> Vec<(&'static str, TabularPolicy)> {
    [
        ("n1", [STAY, STAY]),
        ("n2", [ALT, ALT]),
        ("n3", [STAY, ALT]),
        ("n4", [ALT, STAY]),
    ]
    .into_iter()
    .map(|(name, acts)| (name, TabularPolicy::deterministic(2, &acts).unwrap()))
    .collect()
}

pub fn two_state_problem(s0: usize) -> Result<SwitchProblem> {
    SwitchProblem::new(
        two_state_mdp().with_initial_state(s0)?,
        two_state_old_policy(),
        SwitchCost::Custom(two_state_cost()),
    )
}

pub const CHAIN_STATES: usize = 6;
pub const BACK: usize = 0;
pub const FORWARD: usize = 1;

/// Six-state chain. `BACK` returns to state 0 with reward 0.5; `FORWARD`
/// advances one state with no reward, except from the last state where it
/// pays 10 and returns to state 0. `gamma = 0.9`, `H = 50`.
pub fn chain_mdp() -> FiniteMdp {
    let n = CHAIN_STATES;
    let mut transition = vec![0.0; n * 2 * n];
    let mut reward = vec![0.0; n * 2];
    for s in 0..n {
        transition[(s * 2 + BACK) * n] = 1.0;
        reward[s * 2 + BACK] = 0.5;
        if s + 1 < n {
            transition[(s * 2 + FORWARD) * n + s + 1] = 1.0;
        } else {
            transition[(s * 2 + FORWARD) * n] = 1.0;
            reward[s * 2 + FORWARD] = 10.0;
        }
    }
    FiniteMdp::deterministic_rewards(n, 2, transition, reward, 50, 0.9, 0).expect("chain is valid")
}

/// Always move forward; value-optimal on the chain.
pub fn chain_forward_policy() -> TabularPolicy {
    TabularPolicy::deterministic(2, &[FORWARD; CHAIN_STATES]).unwrap()
}

/// Two-component transport cost with `BACK` and `FORWARD` in separate
/// components and learning weight 5.
pub fn chain_cost(c_t: f64) -> CostSpec {
    CostSpec::transport_two(CHAIN_STATES, Partition::split_at(2, 1).unwrap(), 5.0, c_t)
}

/// Looks up a bundled MDP by name.
pub fn builtin_mdp(name: &str) -> Option<FiniteMdp> {
    match name {
        "two-state" => Some(two_state_mdp()),
        "chain6" => Some(chain_mdp()),
        _ => None,
    }
}

pub const BUILTIN_NAMES: [&str; 2] = ["two-state", "chain6"];

/// Dense random MDP: transition rows normalised from uniform draws, rewards
/// uniform in `[0, 1)`, no reward noise, start state 0.
pub fn random_mdp(n_states: usize, n_actions: usize, horizon: usize, gamma: f64, seed: u64) -> FiniteMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(random_simplex(n_states, &mut rng));
    }
    let reward = (0..n_states * n_actions).map(|_| rng.gen::<f64>()).collect();
    FiniteMdp::deterministic_rewards(n_states, n_actions, transition, reward, horizon, gamma, 0)
        .expect("random rows are stochastic")
}

/// Random fully stochastic policy.
pub fn random_policy(n_states: usize, n_actions: usize, seed: u64) -> TabularPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs = (0..n_states)
        .flat_map(|_| random_simplex(n_actions, &mut rng))
        .collect();
    TabularPolicy::new(n_states, n_actions, probs).expect("random rows are stochastic")
}

/// Normalised positive weights; the last entry absorbs rounding so the row
/// sums to one.
pub fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let total: f64 = w.iter().sum();
    let mut row: Vec<f64> = w.iter().map(|x| x / total).collect();
    let head: f64 = row[..n - 1].iter().sum();
    row[n - 1] = (1.0 - head).max(0.0);
    row
}
