//! Tabular net actor-critic: a softmax actor trained against twin
//! pessimistic critics, a two-epoch stopping rule, and the final keep-or-switch
//! decision.

use std::fmt;

use crate::error::{Error, Result};
use crate::format::fmt_num;
use crate::mdp::{evaluate_infinite, QTable};
use crate::net_value::{net_value_exact, SwitchProblem};
use crate::offline::{evaluate_offline, CriticTrainer, OpeConfig, TransitionDataset, TwinNetQ};
use crate::policy::TabularPolicy;

/// Floor applied to probabilities before taking logs for a warm start.
pub const WARM_START_FLOOR: f64 = 1e-6;

/// Softmax policy logits `theta[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorParams {
    n_states: usize,
    n_actions: usize,
    logits: Vec<f64>,
}

impl ActorParams {
    pub fn new(n_states: usize, n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "logit table has {} entries, expected {}x{}",
                logits.len(),
                n_states,
                n_actions
            )));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("actor logits".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            logits,
        })
    }

    /// `theta = ln(clip(pi, floor, 1))`.
    pub fn from_policy(policy: &TabularPolicy) -> Self {
        Self {
            n_states: policy.n_states(),
            n_actions: policy.n_actions(),
            logits: policy
                .as_slice()
                .iter()
                .map(|p| p.clamp(WARM_START_FLOOR, 1.0).ln())
                .collect(),
        }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn row_probs(&self, s: usize) -> Vec<f64> {
        softmax(&self.logits[s * self.n_actions..(s + 1) * self.n_actions])
    }

    pub fn policy(&self) -> TabularPolicy {
        let probs = (0..self.n_states).flat_map(|s| self.row_probs(s)).collect();
        TabularPolicy::new(self.n_states, self.n_actions, probs).expect("softmax rows are stochastic")
    }
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let mut p: Vec<f64> = e.iter().map(|v| v / z).collect();
    // put the rounding residue on the largest entry
    let residue = 1.0 - p.iter().sum::<f64>();
    if let Some(i) = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])) {
        p[i] += residue;
    }
    p
}

/// `sum_a pi_theta(a|s0) min_i Q_i(s0, a)`.
pub fn actor_objective(twin: &TwinNetQ, actor: &ActorParams, s0: usize) -> f64 {
    actor
        .row_probs(s0)
        .iter()
        .enumerate()
        .map(|(a, p)| p * twin.min_q(s0, a))
        .sum()
}

/// Gradient of [`actor_objective`] over the full logit table; only row `s0`
/// is nonzero.
pub fn actor_gradient(twin: &TwinNetQ, actor: &ActorParams, s0: usize) -> Vec<f64> {
    let na = actor.n_actions;
    let p = actor.row_probs(s0);
    let q: Vec<f64> = (0..na).map(|a| twin.min_q(s0, a)).collect();
    let mean: f64 = p.iter().zip(&q).map(|(p, q)| p * q).sum();
    let mut grad = vec![0.0; actor.logits.len()];
    for b in 0..na {
        grad[s0 * na + b] = p[b] * (q[b] - mean);
    }
    grad
}

/// One ascent step, clipped to `grad_clip` in 2-norm.
pub fn actor_step(actor: &ActorParams, twin: &TwinNetQ, s0: usize, lr: f64, grad_clip: f64) -> ActorParams {
    let grad = actor_gradient(twin, actor, s0);
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let scale = if norm > grad_clip { grad_clip / norm } else { 1.0 };
    let mut next = actor.clone();
    for (x, g) in next.logits.iter_mut().zip(&grad) {
        *x += lr * scale * g;
    }
    next
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingConfig {
    /// No stop before this many epochs.
    pub epochs_stop: usize,
    /// Relative improvement that counts as a clear gain.
    pub alpha: f64,
    /// Absolute improvement that counts as a clear gain.
    pub b_u: f64,
    /// Absolute loss that counts as a clear failure.
    pub b_d: f64,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self {
            epochs_stop: 5,
            alpha: 0.1,
            b_u: 1.0,
            b_d: 1.0,
        }
    }
}

/// Stop once the last two epoch values `v1`, `v2` are both clearly above or
/// both clearly below the old policy's value `v0`.
pub fn stopping_check(v0: f64, v1: f64, v2: f64, cfg: &StoppingConfig, epoch: usize) -> bool {
    if epoch < cfg.epochs_stop {
        return false;
    }
    let rate = v0 > 0.0 && v1 > (1.0 + cfg.alpha) * v0 && v2 > (1.0 + cfg.alpha) * v0;
    let sign = v0 <= 0.0 && v1 > 0.0 && v2 > 0.0;
    let up = v1 >= v0 + cfg.b_u && v2 > v0 + cfg.b_u;
    let down = v1 <= v0 - cfg.b_d && v2 <= v0 - cfg.b_d;
    rate || sign || up || down
}

#[derive(Debug, Clone, PartialEq)]
pub struct NacConfig {
    pub ope: OpeConfig,
    pub stopping: StoppingConfig,
    pub actor_lr: f64,
    pub actor_grad_clip: f64,
    pub max_epochs: usize,
    pub steps_per_epoch: usize,
    /// Re-estimate the final policy with a fresh offline evaluation.
    pub reevaluate: bool,
}

impl Default for NacConfig {
    fn default() -> Self {
        Self {
            ope: OpeConfig::default(),
            stopping: StoppingConfig::default(),
            actor_lr: 0.05,
            actor_grad_clip: 1.0,
            max_epochs: 20,
            steps_per_epoch: 1000,
            reevaluate: true,
        }
    }
}

impl NacConfig {
    pub fn validate(&self) -> Result<()> {
        self.ope.validate()?;
        let s = &self.stopping;
        if !(s.alpha > 0.0 && s.b_u > 0.0 && s.b_d > 0.0) {
            return Err(Error::Config("alpha, b_u and b_d must be positive".into()));
        }
        if !(self.actor_lr > 0.0 && self.actor_grad_clip > 0.0) {
            return Err(Error::Config("actor_lr and actor_grad_clip must be positive".into()));
        }
        if self.steps_per_epoch == 0 {
            return Err(Error::Config("steps_per_epoch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Old,
    New,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NacReport {
    pub chosen: Choice,
    pub v_old: f64,
    pub v_new_net: f64,
    pub switch_flag: bool,
    pub epochs_run: usize,
    /// Mean per-step net value estimate of each epoch.
    pub value_trace: Vec<f64>,
    pub new_policy: TabularPolicy,
}

/// Key=value summary, then the per-epoch trace and the learned policy.
impl fmt::Display for NacReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let chosen = match self.chosen {
            Choice::Old => "old",
            Choice::New => "new",
        };
        writeln!(f, "chosen={chosen}")?;
        writeln!(f, "switch={}", self.switch_flag)?;
        writeln!(f, "v_old={}", fmt_num(self.v_old))?;
        writeln!(f, "v_new_net={}", fmt_num(self.v_new_net))?;
        writeln!(f, "epochs_run={}", self.epochs_run)?;
        writeln!(f, "[trace]")?;
        for (i, v) in self.value_trace.iter().enumerate() {
            writeln!(f, "{} {}", i + 1, fmt_num(*v))?;
        }
        writeln!(f, "[policy]")?;
        write!(f, "{}", self.new_policy)
    }
}

/// Trains a candidate against the old policy's offline value and decides
/// whether to switch.
pub fn run_nac(problem: &SwitchProblem, data: &TransitionDataset, cfg: &NacConfig) -> Result<NacReport> {
    cfg.validate()?;
    let s0 = problem.initial_state();
    let old = problem.old_policy();
    let base = evaluate_offline(problem, old, data, &cfg.ope)?;
    let v_old = base.v_net_hat;

    let mut actor = ActorParams::from_policy(old);
    let mut twin = base.twin.clone();
    let mut trainer = CriticTrainer::new(problem, data, &cfg.ope)?;
    let mut trace: Vec<f64> = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let mut sum = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let policy = actor.policy();
            let cost = trainer.cost(problem, &policy)?;
            trainer.step(&mut twin, &policy, cost);
            actor = actor_step(&actor, &twin, s0, cfg.actor_lr, cfg.actor_grad_clip);
            sum += trainer.readout(&twin, &actor.policy(), s0);
        }
        if !twin.is_finite() || !sum.is_finite() {
            return Err(Error::NonFinite(format!("actor-critic diverged in epoch {epoch}")));
        }
        trace.push(sum / cfg.steps_per_epoch as f64);
        if let [.., v1, v2] = trace[..] {
            if stopping_check(v_old, v1, v2, &cfg.stopping, epoch) {
                break;
            }
        }
    }

    let new_policy = actor.policy();
    let v_new_net = match trace.last() {
        Some(&v) if !cfg.reevaluate => v,
        _ => {
            // same seed and epoch budget as the old policy's estimate
            let paired = OpeConfig {
                epochs: base.loss_trace.len(),
                loss_tol: 0.0,
                ..cfg.ope.clone()
            };
            evaluate_offline(problem, &new_policy, data, &paired)?.v_net_hat
        }
    };
    let switch_flag = v_new_net > v_old;
    Ok(NacReport {
        chosen: if switch_flag { Choice::New } else { Choice::Old },
        v_old,
        v_new_net,
        switch_flag,
        epochs_run: trace.len(),
        value_trace: trace,
        new_policy,
    })
}

/// Exact net values of the old policy and the report's candidate at `s0`:
/// discounted fixed point when `gamma < 1`, the `H`-step value otherwise.
pub fn exact_decision_values(problem: &SwitchProblem, candidate: &TabularPolicy) -> Result<(f64, f64)> {
    let mdp = problem.mdp();
    let s0 = problem.initial_state();
    if mdp.discount() < 1.0 {
        let value = |p: &TabularPolicy| -> Result<f64> {
            let q: QTable = evaluate_infinite(mdp, p, 1e-12)?;
            Ok(q.state_values(p)[s0])
        };
        let old = problem.old_policy();
        let v_old = value(old)? - problem.switch_cost(old)?;
        let v_new = value(candidate)? - problem.switch_cost(candidate)?;
        Ok((v_old, v_new))
    } else {
        Ok((
            net_value_exact(problem, problem.old_policy())?.v_net,
            net_value_exact(problem, candidate)?.v_net,
        ))
    }
}

/// Whether exact evaluation reaches the same keep-or-switch decision as
/// the report.
pub fn responsibility_check(problem: &SwitchProblem, report: &NacReport) -> Result<bool> {
    let (v_old, v_new) = exact_decision_values(problem, &report.new_policy)?;
    Ok((v_new > v_old) == report.switch_flag)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn twin_with_row(q: &[f64]) -> TwinNetQ {
        let na = q.len();
        let mut vals = vec![0.0; 2 * na];
        vals[..na].copy_from_slice(q);
        TwinNetQ::from_table(&QTable::from_vec(2, na, vals).unwrap(), 2)
    }

    #[test]
    fn uniform_logits_on_constant_q() {
        let twin = twin_with_row(&[3.0, 3.0, 3.0]);
        let actor = ActorParams::new(2, 3, vec![0.0; 6]).unwrap();
        assert!((actor_objective(&twin, &actor, 0) - 3.0).abs() < 1e-15);
        assert_eq!(actor_step(&actor, &twin, 0, 0.5, 1.0), actor);
    }

    #[test]
    fn dominant_logit_reads_its_action() {
        let twin = twin_with_row(&[1.0, 5.0]);
        let actor = ActorParams::new(2, 2, vec![0.0, 40.0, 0.0, 0.0]).unwrap();
        assert!((actor_objective(&twin, &actor, 0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn ascent_concentrates_on_best_action() {
        let twin = twin_with_row(&[1.0, 2.0, 0.5]);
        let mut actor = ActorParams::new(2, 3, vec![0.0; 6]).unwrap();
        for _ in 0..5000 {
            actor = actor_step(&actor, &twin, 0, 1.0, 1.0);
        }
        assert!(actor.row_probs(0)[1] > 0.99);
        assert_eq!(actor.row_probs(1), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn warm_start_recovers_policy() {
        let pi = TabularPolicy::from_rows(&[vec![0.25, 0.75], vec![1.0, 0.0]]).unwrap();
        let back = ActorParams::from_policy(&pi).policy();
        assert!((back.prob(0, 1) - 0.75).abs() < 1e-12);
        assert!(back.prob(1, 1) < 2e-6);
    }

    #[test]
    fn stopping_examples() {
        let cfg = StoppingConfig {
            epochs_stop: 3,
            alpha: 1.0,
            b_u: 100.0,
            b_d: 100.0,
        };
        assert!(stopping_check(10.0, 25.0, 30.0, &cfg, 3));
        assert!(stopping_check(-5.0, 1.0, 2.0, &cfg, 3));
        assert!(!stopping_check(10.0, 25.0, 30.0, &cfg, 2));
        assert!(!stopping_check(10.0, 15.0, 30.0, &cfg, 9));
        let tight = StoppingConfig {
            b_u: 1.0,
            b_d: 1.0,
            ..cfg
        };
        assert!(stopping_check(10.0, 11.0, 11.5, &tight, 3));
        assert!(!stopping_check(10.0, 11.0, 11.0, &tight, 3));
        assert!(stopping_check(10.0, 8.0, 9.0, &tight, 3));
        assert!(!stopping_check(10.0, 8.0, 9.5, &tight, 3));
    }
}
