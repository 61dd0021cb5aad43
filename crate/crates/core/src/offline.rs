//! Logged transition datasets and offline net-value evaluation with twin
//! pessimistic critics.
//!
//! The critics are dense tables trained on sampled mini-batches toward
//! `r - (1 - gamma) C + gamma * min_j Q'_j(s', a')`, with `a'` drawn from the
//! evaluated policy and `Q'_j` soft-updated copies. Every transition
//! bootstraps, so the estimate targets the discounted fixed point.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::format::{content_lines, parse_field};
use crate::mdp::{rollout, FiniteMdp, QTable};
use crate::net_value::SwitchProblem;
use crate::policy::TabularPolicy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub episode: usize,
    pub t: usize,
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    pub done: bool,
}

/// Transitions logged by a behaviour policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    behavior_id: String,
    records: Vec<Transition>,
}

impl TransitionDataset {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        behavior_id: impl Into<String>,
        records: Vec<Transition>,
    ) -> Result<Self> {
        let behavior_id = behavior_id.into();
        if behavior_id.is_empty() || behavior_id.contains(char::is_whitespace) {
            return Err(Error::InvalidDataset("behavior id must be a single non-empty token".into()));
        }
        for (i, rec) in records.iter().enumerate() {
            let bad = if rec.s >= n_states || rec.s_next >= n_states || rec.a >= n_actions {
                Some("index out of range")
            } else if rec.t >= horizon {
                Some("step index beyond horizon")
            } else if rec.done != (rec.t + 1 == horizon) {
                Some("done flag must mark the last step")
            } else if !rec.r.is_finite() {
                Some("non-finite reward")
            } else {
                None
            };
            if let Some(msg) = bad {
                return Err(Error::InvalidDataset(format!("record {i}: {msg}")));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            horizon,
            behavior_id,
            records,
        })
    }

    pub fn records(&self) -> &[Transition] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
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

    pub fn behavior_id(&self) -> &str {
        &self.behavior_id
    }

    pub fn with_behavior_id(mut self, id: impl Into<String>) -> Result<Self> {
        let records = std::mem::take(&mut self.records);
        Self::new(self.n_states, self.n_actions, self.horizon, id, records)
    }

    /// Visits per `(s, a)`, row-major.
    pub fn visit_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_states * self.n_actions];
        for rec in &self.records {
            counts[rec.s * self.n_actions + rec.a] += 1;
        }
        counts
    }

    /// Fraction of `(s, a)` pairs present at least once.
    pub fn coverage(&self) -> f64 {
        let seen: BTreeSet<(usize, usize)> = self.records.iter().map(|r| (r.s, r.a)).collect();
        seen.len() as f64 / (self.n_states * self.n_actions) as f64
    }
}

/// Text form: header `dataset n_records n_states n_actions H behavior_id`,
/// then `episode t s a r s_next done` per record.
impl fmt::Display for TransitionDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "dataset {} {} {} {} {}",
            self.records.len(),
            self.n_states,
            self.n_actions,
            self.horizon,
            self.behavior_id
        )?;
        for r in &self.records {
            writeln!(
                f,
                "{} {} {} {} {:?} {} {}",
                r.episode,
                r.t,
                r.s,
                r.a,
                r.r,
                r.s_next,
                u8::from(r.done)
            )?;
        }
        Ok(())
    }
}

impl FromStr for TransitionDataset {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = content_lines(text);
        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing dataset header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "dataset" {
            return Err(Error::parse(
                hline,
                "expected `dataset n_records n_states n_actions H behavior_id`",
            ));
        }
        let n: usize = parse_field(fields[1], hline)?;
        let ns: usize = parse_field(fields[2], hline)?;
        let na: usize = parse_field(fields[3], hline)?;
        let horizon: usize = parse_field(fields[4], hline)?;
        let mut records = Vec::with_capacity(n);
        for (ln, line) in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 7 {
                return Err(Error::parse(ln, "expected `episode t s a r s_next done`"));
            }
            let done = match toks[6] {
                "0" => false,
                "1" => true,
                other => return Err(Error::parse(ln, format!("done flag `{other}` must be 0 or 1"))),
            };
            records.push(Transition {
                episode: parse_field(toks[0], ln)?,
                t: parse_field(toks[1], ln)?,
                s: parse_field(toks[2], ln)?,
                a: parse_field(toks[3], ln)?,
                r: parse_field(toks[4], ln)?,
                s_next: parse_field(toks[5], ln)?,
                done,
            });
        }
        if records.len() != n {
            return Err(Error::parse(
                hline,
                format!("header declares {n} records, found {}", records.len()),
            ));
        }
        Self::new(ns, na, horizon, fields[5], records)
    }
}

/// Short identifier for a behaviour policy.
pub fn policy_tag(policy: &TabularPolicy) -> String {
    if let Some(acts) = policy.deterministic_actions() {
        let acts: Vec<String> = acts.iter().map(usize::to_string).collect();
        return format!("det:{}", acts.join(","));
    }
    if policy.approx_eq(&TabularPolicy::uniform(policy.n_states(), policy.n_actions())) {
        return "uniform".into();
    }
    "stochastic".into()
}

/// Rolls out `n_episodes` full episodes of `behavior`.
pub fn generate_dataset(
    mdp: &FiniteMdp,
    behavior: &TabularPolicy,
    n_episodes: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    mdp.check_policy(behavior)?;
    if n_episodes == 0 {
        return Err(Error::Config("n_episodes must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = mdp.horizon();
    let mut records = Vec::with_capacity(n_episodes * h);
    for episode in 0..n_episodes {
        let traj = rollout(mdp, behavior, &mut rng);
        records.extend(traj.steps.iter().enumerate().map(|(t, st)| Transition {
            episode,
            t,
            s: st.state,
            a: st.action,
            r: st.reward,
            s_next: st.next_state,
            done: t + 1 == h,
        }));
    }
    TransitionDataset::new(mdp.n_states(), mdp.n_actions(), h, policy_tag(behavior), records)
}

/// Critic tables and their soft-updated targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinNetQ {
    pub q: Vec<QTable>,
    pub target: Vec<QTable>,
    pub step_count: usize,
}

impl TwinNetQ {
    /// `m` zero critics with targets copied from them.
    pub fn zeros(n_states: usize, n_actions: usize, m: usize) -> Self {
        Self::from_table(&QTable::zeros(n_states, n_actions), m)
    }

    pub fn from_table(q: &QTable, m: usize) -> Self {
        Self {
            q: vec![q.clone(); m],
            target: vec![q.clone(); m],
            step_count: 0,
        }
    }

    pub fn n_critics(&self) -> usize {
        self.q.len()
    }

    /// Pointwise minimum over the critics.
    pub fn min_q(&self, s: usize, a: usize) -> f64 {
        self.q.iter().map(|t| t.get(s, a)).fold(f64::INFINITY, f64::min)
    }

    pub fn min_target(&self, s: usize, a: usize) -> f64 {
        self.target.iter().map(|t| t.get(s, a)).fold(f64::INFINITY, f64::min)
    }

    /// The pessimistic table `min_i Q_i`.
    pub fn min_table(&self) -> QTable {
        let (ns, na) = (self.q[0].n_states(), self.q[0].n_actions());
        let mut out = QTable::zeros(ns, na);
        for s in 0..ns {
            for a in 0..na {
                out.set(s, a, self.min_q(s, a));
            }
        }
        out
    }

    /// `E_{a ~ pi(.|s)} min_i Q_i(s, a)`.
    pub fn value(&self, policy: &TabularPolicy, s: usize) -> f64 {
        policy
            .row(s)
            .iter()
            .enumerate()
            .map(|(a, p)| p * self.min_q(s, a))
            .sum()
    }

    /// Monte-Carlo version of [`value`](Self::value) with `n` action draws.
    pub fn value_mc<R: Rng + ?Sized>(&self, policy: &TabularPolicy, s: usize, n: usize, rng: &mut R) -> f64 {
        (0..n).map(|_| self.min_q(s, policy.sample(s, rng))).sum::<f64>() / n as f64
    }

    /// `target <- soft * target + (1 - soft) * q`.
    pub fn soft_update(&mut self, soft: f64) {
        for (t, q) in self.target.iter_mut().zip(&self.q) {
            for (x, y) in t.as_mut_slice().iter_mut().zip(q.as_slice()) {
                *x = soft * *x + (1.0 - soft) * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.target).all(QTable::is_finite)
    }
}

/// Hyperparameters of offline evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct OpeConfig {
    pub lr_q: f64,
    /// Target retention per step.
    pub soft: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Action draws for the readout; 0 means the exact expectation.
    pub mc_action_samples: usize,
    /// State draws for the cost; `None` means the exact cost.
    pub mc_cost_states: Option<usize>,
    pub grad_clip_q: f64,
    pub n_critics: usize,
    /// Stop when the epoch-mean TD loss changes by less than this.
    pub loss_tol: f64,
    pub seed: u64,
}

impl Default for OpeConfig {
    fn default() -> Self {
        Self {
            lr_q: 0.5,
            soft: 0.995,
            batch_size: 256,
            epochs: 50,
            steps_per_epoch: 1000,
            mc_action_samples: 0,
            mc_cost_states: None,
            grad_clip_q: 10.0,
            n_critics: 2,
            loss_tol: 1e-6,
            seed: 0,
        }
    }
}

impl OpeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr_q > 0.0 && self.lr_q.is_finite()) {
            return bad("lr_q must be positive");
        }
        if !(0.0..=1.0).contains(&self.soft) {
            return bad("soft must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.steps_per_epoch == 0 || self.n_critics == 0 {
            return bad("batch_size, steps_per_epoch and n_critics must be positive");
        }
        if self.grad_clip_q.is_nan() || self.grad_clip_q <= 0.0 {
            return bad("grad_clip_q must be positive");
        }
        if self.mc_cost_states == Some(0) {
            return bad("mc_cost_states must be at least 1");
        }
        Ok(())
    }
}

/// `r - (1 - gamma) c + gamma * min_j Q'_j(s', a')` with `a' ~ pi(.|s')`.
pub fn ope_target<R: Rng + ?Sized>(
    r: f64,
    s_next: usize,
    policy: &TabularPolicy,
    twin: &TwinNetQ,
    cost_value: f64,
    gamma: f64,
    rng: &mut R,
) -> f64 {
    let a_next = policy.sample(s_next, rng);
    r - (1.0 - gamma) * cost_value + gamma * twin.min_target(s_next, a_next)
}

/// Mini-batch critic updates shared by offline evaluation and the
/// actor-critic loop.
pub(crate) struct CriticTrainer<'a> {
    data: &'a TransitionDataset,
    cfg: &'a OpeConfig,
    gamma: f64,
    grad: Vec<f64>,
    targets: Vec<f64>,
    batch: Vec<usize>,
    pub(crate) rng: ChaCha8Rng,
}

impl<'a> CriticTrainer<'a> {
    pub(crate) fn new(problem: &SwitchProblem, data: &'a TransitionDataset, cfg: &'a OpeConfig) -> Result<Self> {
        cfg.validate()?;
        let mdp = problem.mdp();
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if data.n_states() != mdp.n_states() || data.n_actions() != mdp.n_actions() {
            return Err(Error::Shape("dataset does not match the MDP".into()));
        }
        if mdp.discount() >= 1.0 {
            return Err(Error::UnsupportedDiscount(mdp.discount()));
        }
        Ok(Self {
            data,
            cfg,
            gamma: mdp.discount(),
            grad: vec![0.0; mdp.n_states() * mdp.n_actions()],
            targets: vec![0.0; cfg.batch_size],
            batch: vec![0; cfg.batch_size],
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    /// One clipped gradient step per critic on its own mini-batch, then a
    /// soft target update. Returns the mean squared TD error.
    pub(crate) fn step(&mut self, twin: &mut TwinNetQ, policy: &TabularPolicy, cost_value: f64) -> f64 {
        let n = self.data.len();
        let bs = self.cfg.batch_size as f64;
        let na = policy.n_actions();
        let mut loss = 0.0;
        for i in 0..twin.n_critics() {
            for k in 0..self.cfg.batch_size {
                let idx = self.rng.gen_range(0..n);
                let rec = self.data.records[idx];
                self.batch[k] = idx;
                self.targets[k] = ope_target(rec.r, rec.s_next, policy, twin, cost_value, self.gamma, &mut self.rng);
            }
            self.grad.iter_mut().for_each(|g| *g = 0.0);
            let q = &mut twin.q[i];
            for k in 0..self.cfg.batch_size {
                let rec = self.data.records[self.batch[k]];
                let err = q.get(rec.s, rec.a) - self.targets[k];
                loss += err * err / bs;
                self.grad[rec.s * na + rec.a] += 2.0 * err / bs;
            }
            let norm = self.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let scale = if norm > self.cfg.grad_clip_q {
                self.cfg.grad_clip_q / norm
            } else {
                1.0
            };
            for (x, g) in q.as_mut_slice().iter_mut().zip(&self.grad) {
                *x -= self.cfg.lr_q * scale * g;
            }
        }
        twin.soft_update(self.cfg.soft);
        twin.step_count += 1;
        loss / twin.n_critics() as f64
    }

    pub(crate) fn readout(&mut self, twin: &TwinNetQ, policy: &TabularPolicy, s0: usize) -> f64 {
        match self.cfg.mc_action_samples {
            0 => twin.value(policy, s0),
            n => twin.value_mc(policy, s0, n, &mut self.rng),
        }
    }

    pub(crate) fn cost(&mut self, problem: &SwitchProblem, policy: &TabularPolicy) -> Result<f64> {
        match self.cfg.mc_cost_states {
            None => problem.switch_cost(policy),
            Some(n) => {
                let seed = self.rng.gen();
                problem.switch_cost_mc(policy, n, seed)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_td_loss: f64,
    pub v_net_estimate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpeReport {
    /// Pessimistic net value estimate at the initial state (discounted
    /// fixed-point semantics).
    pub v_net_hat: f64,
    pub twin: TwinNetQ,
    pub loss_trace: Vec<EpochStats>,
    pub coverage: f64,
    /// Cost used in the targets (last draw under Monte-Carlo costs).
    pub cost_value: f64,
}

impl OpeReport {
    /// One line per epoch: `epoch mean_td_loss v_net_estimate`.
    pub fn render_trace(&self) -> String {
        use crate::format::fmt_num;
        self.loss_trace
            .iter()
            .map(|e| format!("{} {} {}\n", e.epoch, fmt_num(e.mean_td_loss), fmt_num(e.v_net_estimate)))
            .collect()
    }
}

pub fn evaluate_offline(
    problem: &SwitchProblem,
    policy: &TabularPolicy,
    data: &TransitionDataset,
    cfg: &OpeConfig,
) -> Result<OpeReport> {
    let mdp = problem.mdp();
    mdp.check_policy(policy)?;
    let twin = TwinNetQ::zeros(mdp.n_states(), mdp.n_actions(), cfg.n_critics);
    evaluate_offline_from(problem, policy, data, cfg, twin)
}

/// Offline evaluation starting from the given critics.
pub fn evaluate_offline_from(
    problem: &SwitchProblem,
    policy: &TabularPolicy,
    data: &TransitionDataset,
    cfg: &OpeConfig,
    mut twin: TwinNetQ,
) -> Result<OpeReport> {
    let mut trainer = CriticTrainer::new(problem, data, cfg)?;
    let s0 = problem.initial_state();
    let mut cost_value = trainer.cost(problem, policy)?;
    let mut trace: Vec<EpochStats> = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut loss = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            if cfg.mc_cost_states.is_some() {
                cost_value = trainer.cost(problem, policy)?;
            }
            loss += trainer.step(&mut twin, policy, cost_value);
        }
        if !twin.is_finite() {
            return Err(Error::NonFinite(format!("critic diverged in epoch {epoch}")));
        }
        let mean = loss / cfg.steps_per_epoch as f64;
        let v = trainer.readout(&twin, policy, s0);
        let converged = trace
            .last()
            .is_some_and(|prev| (prev.mean_td_loss - mean).abs() < cfg.loss_tol);
        trace.push(EpochStats {
            epoch,
            mean_td_loss: mean,
            v_net_estimate: v,
        });
        if converged {
            break;
        }
    }
    let v_net_hat = trainer.readout(&twin, policy, s0);
    Ok(OpeReport {
        v_net_hat,
        twin,
        loss_trace: trace,
        coverage: data.coverage(),
        cost_value,
    })
}
