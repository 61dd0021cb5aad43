//! Switching costs between an incumbent and a candidate policy.
//!
//! The family is `sigma( sum_s mu(s) f(s) (c_l L_s + c_t T_s) )` with a
//! per-state learning term `L_s` and transaction term `T_s`. Local and global
//! costs are special cases; a class-keyed table covers hand-built examples.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ot::{self, GroundCost, PlanMode};
use crate::policy::{sample_index, TabularPolicy, ROW_TOL};

/// Assignment of every action to one of `L` components (0-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl Partition {
    /// Builds a partition from 0-based labels; every label below the maximum
    /// must be used.
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidCost("partition must cover at least one action".into()));
        }
        let n_components = labels.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); n_components];
        for (a, &l) in labels.iter().enumerate() {
            members[l].push(a);
        }
        if let Some(l) = members.iter().position(Vec::is_empty) {
            return Err(Error::InvalidCost(format!("partition component {} is empty", l + 1)));
        }
        Ok(Self { labels, members })
    }

    /// Parses 1-based labels such as `1,1,2`.
    pub fn from_one_based(labels: &[usize]) -> Result<Self> {
        if labels.contains(&0) {
            return Err(Error::InvalidCost("partition labels start at 1".into()));
        }
        Self::new(labels.iter().map(|l| l - 1).collect())
    }

    /// All actions in one component.
    pub fn single(n_actions: usize) -> Self {
        Self {
            labels: vec![0; n_actions],
            members: vec![(0..n_actions).collect()],
        }
    }

    /// First `k` actions in component 1, the rest in component 2.
    pub fn split_at(n_actions: usize, k: usize) -> Result<Self> {
        Self::new((0..n_actions).map(|a| usize::from(a >= k)).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_components(&self) -> usize {
        self.members.len()
    }

    pub fn component(&self, action: usize) -> usize {
        self.labels[action]
    }

    pub fn members(&self, component: usize) -> &[usize] {
        &self.members[component]
    }

    /// Mass of `row` on each component.
    pub fn component_masses(&self, row: &[f64]) -> Vec<f64> {
        self.members
            .iter()
            .map(|m| m.iter().map(|&a| row[a]).sum())
            .collect()
    }

    pub fn one_based_labels(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l + 1).collect()
    }
}

/// Scalar map applied to the aggregated state integral.
#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    Identity,
    Scaled(f64),
    /// 1 for positive input, 0 otherwise.
    PositiveIndicator,
    /// Piecewise-linear through sorted breakpoints, constant beyond the ends.
    Table(Vec<(f64, f64)>),
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Scaled(k) => k * x,
            Activation::PositiveIndicator => f64::from(u8::from(x > 0.0)),
            Activation::Table(points) => interpolate(points, x),
        }
    }

    /// `apply(sum / total)`, arranged so integer-valued scaled sums stay exact.
    fn apply_ratio(&self, sum: f64, total: f64) -> f64 {
        match self {
            Activation::Scaled(k) => (k / total) * sum,
            other => other.apply(sum / total),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Activation::Scaled(k) if !k.is_finite() => {
                Err(Error::InvalidCost(format!("sigma factor {k}")))
            }
            Activation::Table(points) => {
                if points.is_empty() {
                    return Err(Error::InvalidCost("sigma table needs a breakpoint".into()));
                }
                if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite())
                    || points.windows(2).any(|w| w[0].0 >= w[1].0)
                {
                    return Err(Error::InvalidCost(
                        "sigma table breakpoints must be finite and strictly increasing".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let (first, last) = (points[0], points[points.len() - 1]);
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let i = points.partition_point(|p| p.0 <= x);
    let ((x0, y0), (x1, y1)) = (points[i - 1], points[i]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Identity => write!(f, "identity"),
            Activation::Scaled(k) => write!(f, "scaled:{k:?}"),
            Activation::PositiveIndicator => write!(f, "positive"),
            Activation::Table(points) => {
                let cells: Vec<String> = points.iter().map(|(x, y)| format!("{x:?}:{y:?}")).collect();
                write!(f, "table:{}", cells.join(","))
            }
        }
    }
}

/// Distribution over states used to integrate the per-state terms.
#[derive(Debug, Clone, PartialEq)]
pub enum StateMeasure {
    Uniform,
    Weights(Vec<f64>),
}

impl StateMeasure {
    fn weight(&self, s: usize) -> f64 {
        match self {
            StateMeasure::Uniform => 1.0,
            StateMeasure::Weights(w) => w[s],
        }
    }

    fn total(&self, n_states: usize) -> f64 {
        match self {
            StateMeasure::Uniform => n_states as f64,
            StateMeasure::Weights(_) => 1.0,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, n_states: usize, rng: &mut R) -> usize {
        match self {
            StateMeasure::Uniform => rng.gen_range(0..n_states),
            StateMeasure::Weights(w) => sample_index(w, rng),
        }
    }
}

/// Per-state learning and transaction functionals.
#[derive(Debug, Clone, PartialEq)]
pub enum StatewiseKind {
    /// `L_s = 1{rows differ}`, `T_s = 0`.
    Indicator,
    /// Closed forms for a two-component partition.
    TransportTwo,
    /// Optimal-transport costs over an arbitrary partition.
    TransportGeneral {
        c1: GroundCost,
        c2: GroundCost,
        mode: PlanMode,
    },
}

/// Parameters of the cost family.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub activation: Activation,
    pub state_weight: Vec<f64>,
    pub state_measure: StateMeasure,
    pub learn_weight: f64,
    pub trans_weight: f64,
    pub partition: Partition,
    pub statewise: StatewiseKind,
}

impl CostSpec {
    /// Number of states whose rows differ.
    pub fn local(n_states: usize, n_actions: usize) -> Self {
        Self {
            activation: Activation::Scaled(n_states as f64),
            state_weight: vec![1.0; n_states],
            state_measure: StateMeasure::Uniform,
            learn_weight: 1.0,
            trans_weight: 0.0,
            partition: Partition::single(n_actions),
            statewise: StatewiseKind::Indicator,
        }
    }

    /// 1 if any row differs.
    pub fn global(n_states: usize, n_actions: usize) -> Self {
        Self {
            activation: Activation::PositiveIndicator,
            ..Self::local(n_states, n_actions)
        }
    }

    pub fn zero(n_states: usize, n_actions: usize) -> Self {
        Self {
            activation: Activation::Identity,
            learn_weight: 0.0,
            ..Self::local(n_states, n_actions)
        }
    }

    /// Two-component transport cost with identity activation.
    pub fn transport_two(n_states: usize, partition: Partition, c_l: f64, c_t: f64) -> Self {
        Self {
            activation: Activation::Identity,
            state_weight: vec![1.0; n_states],
            state_measure: StateMeasure::Uniform,
            learn_weight: c_l,
            trans_weight: c_t,
            partition,
            statewise: StatewiseKind::TransportTwo,
        }
    }

    /// General transport cost; cross-component learning, unit transaction.
    pub fn transport_general(n_states: usize, partition: Partition, c_l: f64, c_t: f64) -> Self {
        let c1 = GroundCost::CrossComponent(partition.clone());
        Self {
            statewise: StatewiseKind::TransportGeneral {
                c1,
                c2: GroundCost::constant_one(),
                mode: PlanMode::Optimal,
            },
            ..Self::transport_two(n_states, partition, c_l, c_t)
        }
    }

    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        self.activation.validate()?;
        if self.state_weight.len() != n_states {
            return Err(Error::InvalidCost(format!(
                "f has {} entries, expected {n_states}",
                self.state_weight.len()
            )));
        }
        if self.state_weight.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidCost("f must be finite".into()));
        }
        if let StateMeasure::Weights(mu) = &self.state_measure {
            if mu.len() != n_states {
                return Err(Error::InvalidCost(format!(
                    "mu has {} entries, expected {n_states}",
                    mu.len()
                )));
            }
            crate::policy::check_distribution(mu)
                .map_err(|e| Error::InvalidCost(format!("mu {e}")))?;
        }
        if !self.learn_weight.is_finite() || !self.trans_weight.is_finite() {
            return Err(Error::InvalidCost("c_l and c_t must be finite".into()));
        }
        if self.partition.len() != n_actions {
            return Err(Error::InvalidCost(format!(
                "partition covers {} actions, expected {n_actions}",
                self.partition.len()
            )));
        }
        match &self.statewise {
            StatewiseKind::TransportTwo if self.partition.n_components() != 2 => {
                Err(Error::PartitionArity {
                    expected: 2,
                    found: self.partition.n_components(),
                })
            }
            StatewiseKind::TransportGeneral { c1, c2, .. } => {
                c1.validate(n_actions)?;
                c2.validate(n_actions)
            }
            _ => Ok(()),
        }
    }

    /// `(L_s, T_s)` for one pair of rows.
    pub fn statewise_terms(&self, pi_o_row: &[f64], pi_n_row: &[f64]) -> Result<(f64, f64)> {
        match &self.statewise {
            StatewiseKind::Indicator => {
                let differ = pi_o_row
                    .iter()
                    .zip(pi_n_row)
                    .any(|(x, y)| (x - y).abs() > ROW_TOL);
                Ok((f64::from(u8::from(differ)), 0.0))
            }
            StatewiseKind::TransportTwo => Ok((
                statewise_learning_two(pi_o_row, pi_n_row, &self.partition)?,
                statewise_transaction_two(pi_o_row, pi_n_row, &self.partition)?,
            )),
            StatewiseKind::TransportGeneral { c1, c2, mode } => Ok((
                ot::learning_cost_general(pi_o_row, pi_n_row, &self.partition, c1, *mode)?,
                ot::transaction_cost_general(pi_o_row, pi_n_row, &self.partition, c2, *mode)?,
            )),
        }
    }

    fn integrand(&self, pi_o: &TabularPolicy, pi_n: &TabularPolicy, s: usize) -> Result<f64> {
        let (l, t) = self.statewise_terms(pi_o.row(s), pi_n.row(s))?;
        let mut inner = 0.0;
        if self.learn_weight != 0.0 {
            inner += self.learn_weight * l;
        }
        if self.trans_weight != 0.0 {
            inner += self.trans_weight * t;
        }
        Ok(self.state_weight[s] * inner)
    }

    fn check_pair(&self, pi_o: &TabularPolicy, pi_n: &TabularPolicy) -> Result<()> {
        if !pi_o.same_shape(pi_n) {
            return Err(Error::Shape("policies differ in shape".into()));
        }
        self.validate(pi_o.n_states(), pi_o.n_actions())
    }

    /// Exact cost: weighted sum over every state.
    pub fn evaluate(&self, pi_o: &TabularPolicy, pi_n: &TabularPolicy) -> Result<f64> {
        self.check_pair(pi_o, pi_n)?;
        let n = pi_o.n_states();
        let mut sum = 0.0;
        for s in 0..n {
            let w = self.state_measure.weight(s);
            if w != 0.0 {
                sum += w * self.integrand(pi_o, pi_n, s)?;
            }
        }
        Ok(self.activation.apply_ratio(sum, self.state_measure.total(n)))
    }

    /// Monte-Carlo cost from `n_samples` states drawn from `mu`.
    pub fn evaluate_mc(
        &self,
        pi_o: &TabularPolicy,
        pi_n: &TabularPolicy,
        n_samples: usize,
        seed: u64,
    ) -> Result<f64> {
        self.check_pair(pi_o, pi_n)?;
        if n_samples == 0 {
            return Err(Error::Config("mc_states must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = pi_o.n_states();
        let mut sum = 0.0;
        for _ in 0..n_samples {
            let s = self.state_measure.sample(n, &mut rng);
            sum += self.integrand(pi_o, pi_n, s)?;
        }
        let total = n_samples as f64;
        // sample mean of a mu-distributed integrand: rescale to the exact form
        Ok(match (&self.activation, &self.state_measure) {
            (Activation::Scaled(k), StateMeasure::Uniform) => (k / total) * sum,
            (a, _) => a.apply(sum / total),
        })
    }
}

fn check_two(pi_o_row: &[f64], pi_n_row: &[f64], partition: &Partition) -> Result<()> {
    if partition.n_components() != 2 {
        return Err(Error::PartitionArity {
            expected: 2,
            found: partition.n_components(),
        });
    }
    if pi_o_row.len() != partition.len() || pi_n_row.len() != partition.len() {
        return Err(Error::Shape("row length differs from partition size".into()));
    }
    Ok(())
}

/// `|pi_o(A_1|s) - pi_n(A_1|s)|`.
pub fn statewise_learning_two(pi_o_row: &[f64], pi_n_row: &[f64], partition: &Partition) -> Result<f64> {
    check_two(pi_o_row, pi_n_row, partition)?;
    let a = partition.component_masses(pi_o_row);
    let b = partition.component_masses(pi_n_row);
    Ok((a[0] - b[0]).abs())
}

/// `min(a_1, b_1) + min(a_2, b_2)`.
pub fn statewise_transaction_two(
    pi_o_row: &[f64],
    pi_n_row: &[f64],
    partition: &Partition,
) -> Result<f64> {
    check_two(pi_o_row, pi_n_row, partition)?;
    let a = partition.component_masses(pi_o_row);
    let b = partition.component_masses(pi_n_row);
    Ok(a[0].min(b[0]) + a[1].min(b[1]))
}

/// Number of states whose rows differ.
pub fn local_cost(pi_o: &TabularPolicy, pi_n: &TabularPolicy) -> Result<usize> {
    if !pi_o.same_shape(pi_n) {
        return Err(Error::Shape("policies differ in shape".into()));
    }
    Ok((0..pi_o.n_states()).filter(|&s| !pi_o.row_equals(pi_n, s)).count())
}

/// 1 if any row differs, else 0.
pub fn global_cost(pi_o: &TabularPolicy, pi_n: &TabularPolicy) -> Result<usize> {
    Ok(usize::from(local_cost(pi_o, pi_n)? > 0))
}

/// Coarse shape of a policy, used to key custom cost tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyClass {
    /// Stochastic in at least one state.
    Stochastic,
    /// Deterministic, same action in every state.
    DeterministicSame,
    /// Deterministic, different actions in different states.
    DeterministicMixed,
}

impl PolicyClass {
    pub fn of(policy: &TabularPolicy) -> Self {
        match policy.deterministic_actions() {
            None => PolicyClass::Stochastic,
            Some(acts) if acts.windows(2).all(|w| w[0] == w[1]) => PolicyClass::DeterministicSame,
            Some(_) => PolicyClass::DeterministicMixed,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyClass::Stochastic => "stochastic",
            PolicyClass::DeterministicSame => "det-same",
            PolicyClass::DeterministicMixed => "det-mixed",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "stochastic" => Ok(PolicyClass::Stochastic),
            "det-same" => Ok(PolicyClass::DeterministicSame),
            "det-mixed" => Ok(PolicyClass::DeterministicMixed),
            other => Err(Error::InvalidCost(format!("unknown policy class `{other}`"))),
        }
    }
}

/// Cost looked up by the classes of the old and new policy.
///
/// Lookup order: an explicit entry for the candidate, then zero for keeping
/// the old policy, then the class pair, then the default.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CustomCostTable {
    classes: BTreeMap<(PolicyClass, PolicyClass), f64>,
    explicit: Vec<(TabularPolicy, f64)>,
    default: Option<f64>,
}

impl CustomCostTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_class(mut self, old: PolicyClass, new: PolicyClass, cost: f64) -> Self {
        self.classes.insert((old, new), cost);
        self
    }

    pub fn with_policy(mut self, policy: TabularPolicy, cost: f64) -> Self {
        self.explicit.push((policy, cost));
        self
    }

    pub fn with_default(mut self, cost: f64) -> Self {
        self.default = Some(cost);
        self
    }

    pub fn class_entries(&self) -> impl Iterator<Item = (PolicyClass, PolicyClass, f64)> + '_ {
        self.classes.iter().map(|(&(o, n), &c)| (o, n, c))
    }

    pub fn policy_entries(&self) -> &[(TabularPolicy, f64)] {
        &self.explicit
    }

    pub fn default_cost(&self) -> Option<f64> {
        self.default
    }

    pub fn evaluate(&self, pi_o: &TabularPolicy, pi_n: &TabularPolicy) -> Result<f64> {
        if !pi_o.same_shape(pi_n) {
            return Err(Error::Shape("policies differ in shape".into()));
        }
        if let Some((_, c)) = self.explicit.iter().find(|(p, _)| p.approx_eq(pi_n)) {
            return Ok(*c);
        }
        if pi_n.approx_eq(pi_o) {
            return Ok(0.0);
        }
        let key = (PolicyClass::of(pi_o), PolicyClass::of(pi_n));
        self.classes
            .get(&key)
            .copied()
            .or(self.default)
            .ok_or_else(|| Error::MissingCostEntry(format!("{} -> {}", key.0.name(), key.1.name())))
    }
}

/// Any supported switching cost.
#[derive(Debug, Clone, PartialEq)]
pub enum SwitchCost {
    Family(CostSpec),
    Custom(CustomCostTable),
}

impl From<CostSpec> for SwitchCost {
    fn from(spec: CostSpec) -> Self {
        SwitchCost::Family(spec)
    }
}

impl From<CustomCostTable> for SwitchCost {
    fn from(table: CustomCostTable) -> Self {
        SwitchCost::Custom(table)
    }
}

impl SwitchCost {
    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        match self {
            SwitchCost::Family(spec) => spec.validate(n_states, n_actions),
            SwitchCost::Custom(_) => Ok(()),
        }
    }

    pub fn evaluate(&self, pi_o: &TabularPolicy, pi_n: &TabularPolicy) -> Result<f64> {
        match self {
            SwitchCost::Family(spec) => spec.evaluate(pi_o, pi_n),
            SwitchCost::Custom(table) => table.evaluate(pi_o, pi_n),
        }
    }

    /// Monte-Carlo estimate for family costs; tables are always exact.
    pub fn evaluate_mc(
        &self,
        pi_o: &TabularPolicy,
        pi_n: &TabularPolicy,
        n_samples: usize,
        seed: u64,
    ) -> Result<f64> {
        match self {
            SwitchCost::Family(spec) => spec.evaluate_mc(pi_o, pi_n, n_samples, seed),
            SwitchCost::Custom(table) => table.evaluate(pi_o, pi_n),
        }
    }

    /// Parses `key=value` pairs describing a cost.
    ///
    /// `kind` is one of `indicator`, `transport_two`, `transport_general`,
    /// `custom_table`, or the presets `local`, `global`, `zero`; remaining
    /// keys override the preset.
    pub fn from_pairs(pairs: &[(String, String)], n_states: usize, n_actions: usize) -> Result<Self> {
        let get = |k: &str| pairs.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let kind = get("kind").unwrap_or("zero");
        if kind == "custom_table" {
            return parse_custom(pairs).map(SwitchCost::Custom);
        }
        let partition = match get("partition") {
            Some(v) => Partition::from_one_based(&parse_list(v, "partition")?)?,
            None if kind == "transport_two" || kind == "transport_general" => {
                Partition::split_at(n_actions, n_actions / 2)?
            }
            None => Partition::single(n_actions),
        };
        let mut spec = match kind {
            "local" => CostSpec::local(n_states, n_actions),
            "global" => CostSpec::global(n_states, n_actions),
            "zero" => CostSpec::zero(n_states, n_actions),
            "indicator" => CostSpec {
                activation: Activation::Identity,
                ..CostSpec::local(n_states, n_actions)
            },
            "transport_two" => CostSpec::transport_two(n_states, partition.clone(), 1.0, 0.0),
            "transport_general" => CostSpec::transport_general(n_states, partition.clone(), 1.0, 0.0),
            other => return Err(Error::InvalidCost(format!("unknown cost kind `{other}`"))),
        };
        spec.partition = partition;
        if let Some(v) = get("sigma") {
            spec.activation = parse_activation(v)?;
        }
        if let Some(v) = get("c_l") {
            spec.learn_weight = parse_num(v, "c_l")?;
        }
        if let Some(v) = get("c_t") {
            spec.trans_weight = parse_num(v, "c_t")?;
        }
        if let Some(v) = get("mu") {
            spec.state_measure = if v == "uniform" {
                StateMeasure::Uniform
            } else {
                StateMeasure::Weights(parse_list(v, "mu")?)
            };
        }
        if let Some(v) = get("f") {
            spec.state_weight = parse_list(v, "f")?;
        }
        if let StatewiseKind::TransportGeneral { c1, c2, mode } = &mut spec.statewise {
            if let Some(v) = get("c1") {
                *c1 = parse_ground(v, &spec.partition)?;
            } else {
                *c1 = GroundCost::CrossComponent(spec.partition.clone());
            }
            if let Some(v) = get("c2") {
                *c2 = parse_ground(v, &spec.partition)?;
            }
            if let Some(v) = get("plan") {
                *mode = match v {
                    "optimal" => PlanMode::Optimal,
                    "first-feasible" => PlanMode::FirstFeasible,
                    other => return Err(Error::InvalidCost(format!("unknown plan mode `{other}`"))),
                };
            }
        }
        spec.validate(n_states, n_actions)?;
        Ok(SwitchCost::Family(spec))
    }

    /// Canonical `key=value` pairs; parses back to an equal cost.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        match self {
            SwitchCost::Family(spec) => {
                let kind = match spec.statewise {
                    StatewiseKind::Indicator => "indicator",
                    StatewiseKind::TransportTwo => "transport_two",
                    StatewiseKind::TransportGeneral { .. } => "transport_general",
                };
                put("kind", kind.into());
                put("sigma", spec.activation.to_string());
                put("c_l", format!("{:?}", spec.learn_weight));
                put("c_t", format!("{:?}", spec.trans_weight));
                put("partition", join(&spec.partition.one_based_labels(), |l| l.to_string()));
                put(
                    "mu",
                    match &spec.state_measure {
                        StateMeasure::Uniform => "uniform".into(),
                        StateMeasure::Weights(w) => join(w, |x| format!("{x:?}")),
                    },
                );
                put("f", join(&spec.state_weight, |x| format!("{x:?}")));
                if let StatewiseKind::TransportGeneral { c1, c2, mode } = &spec.statewise {
                    put("c1", ground_to_string(c1));
                    put("c2", ground_to_string(c2));
                    let m = match mode {
                        PlanMode::Optimal => "optimal",
                        PlanMode::FirstFeasible => "first-feasible",
                    };
                    put("plan", m.into());
                }
            }
            SwitchCost::Custom(table) => {
                put("kind", "custom_table".into());
                for (o, n, c) in table.class_entries() {
                    put(&format!("table.{}.{}", o.name(), n.name()), format!("{c:?}"));
                }
                if let Some(d) = table.default_cost() {
                    put("default", format!("{d:?}"));
                }
                for (p, c) in table.policy_entries() {
                    let rows: Vec<String> =
                        p.rows().map(|r| join(r, |x| format!("{x:?}"))).collect();
                    put(&format!("policy.{}", rows.join(";")), format!("{c:?}"));
                }
            }
        }
        out
    }
}

impl fmt::Display for SwitchCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

fn parse_num(v: &str, key: &str) -> Result<f64> {
    v.trim()
        .parse()
        .map_err(|_| Error::InvalidCost(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_list<T: std::str::FromStr>(v: &str, key: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::InvalidCost(format!("`{key}`: cannot parse `{t}`")))
        })
        .collect()
}

fn parse_activation(v: &str) -> Result<Activation> {
    let act = match v.split_once(':') {
        None if v == "identity" => Activation::Identity,
        None if v == "positive" => Activation::PositiveIndicator,
        Some(("scaled", k)) => Activation::Scaled(parse_num(k, "sigma")?),
        Some(("table", pts)) => Activation::Table(
            pts.split(',')
                .map(|p| {
                    let (x, y) = p
                        .split_once(':')
                        .ok_or_else(|| Error::InvalidCost(format!("sigma breakpoint `{p}`")))?;
                    Ok((parse_num(x, "sigma")?, parse_num(y, "sigma")?))
                })
                .collect::<Result<_>>()?,
        ),
        _ => return Err(Error::InvalidCost(format!("unknown sigma `{v}`"))),
    };
    act.validate()?;
    Ok(act)
}

fn parse_ground(v: &str, partition: &Partition) -> Result<GroundCost> {
    match v.split_once(':') {
        None if v == "cross" => Ok(GroundCost::CrossComponent(partition.clone())),
        None if v == "one" => Ok(GroundCost::constant_one()),
        Some(("const", c)) => Ok(GroundCost::Constant(parse_num(c, "ground cost")?)),
        Some(("matrix", rows)) => {
            let rows: Vec<Vec<f64>> = rows
                .split(';')
                .map(|r| parse_list(r, "ground cost"))
                .collect::<Result<_>>()?;
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidCost("ground-cost matrix must be square".into()));
            }
            GroundCost::matrix(n, rows.concat())
        }
        _ => Err(Error::InvalidCost(format!("unknown ground cost `{v}`"))),
    }
}

fn ground_to_string(g: &GroundCost) -> String {
    match g {
        GroundCost::CrossComponent(_) => "cross".into(),
        GroundCost::Constant(c) => format!("const:{c:?}"),
        GroundCost::Matrix { n, values } => {
            let rows: Vec<String> = values.chunks(*n).map(|r| join(r, |x| format!("{x:?}"))).collect();
            format!("matrix:{}", rows.join(";"))
        }
    }
}

fn parse_custom(pairs: &[(String, String)]) -> Result<CustomCostTable> {
    let mut table = CustomCostTable::new();
    for (k, v) in pairs {
        if k == "kind" {
            continue;
        }
        if k == "default" {
            table = table.with_default(parse_num(v, k)?);
        } else if let Some(rest) = k.strip_prefix("table.") {
            let (o, n) = rest
                .split_once('.')
                .ok_or_else(|| Error::InvalidCost(format!("expected `table.OLD.NEW`, got `{k}`")))?;
            table = table.with_class(PolicyClass::parse(o)?, PolicyClass::parse(n)?, parse_num(v, k)?);
        } else if let Some(rows) = k.strip_prefix("policy.") {
            let rows: Vec<Vec<f64>> = rows
                .split(';')
                .map(|r| parse_list(r, "policy"))
                .collect::<Result<_>>()?;
            table = table.with_policy(TabularPolicy::from_rows(&rows)?, parse_num(v, k)?);
        } else {
            return Err(Error::InvalidCost(format!("unknown custom cost key `{k}`")));
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn two() -> Partition {
        Partition::split_at(2, 1).unwrap()
    }

    #[test]
    fn two_component_closed_forms() {
        let (o, n) = ([0.7, 0.3], [0.4, 0.6]);
        assert!((statewise_learning_two(&o, &n, &two()).unwrap() - 0.3).abs() < 1e-15);
        assert!((statewise_transaction_two(&o, &n, &two()).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(statewise_learning_two(&o, &o, &two()).unwrap(), 0.0);
        assert_eq!(statewise_transaction_two(&o, &o, &two()).unwrap(), 1.0);
        assert_eq!(statewise_learning_two(&[1.0, 0.0], &[0.0, 1.0], &two()).unwrap(), 1.0);
        assert_eq!(statewise_transaction_two(&[1.0, 0.0], &[0.0, 1.0], &two()).unwrap(), 0.0);
    }

    #[test]
    fn arity_is_enforced() {
        let p = Partition::new(vec![0, 1, 2]).unwrap();
        let row = [0.2, 0.3, 0.5];
        assert!(matches!(
            statewise_learning_two(&row, &row, &p),
            Err(Error::PartitionArity { expected: 2, found: 3 })
        ));
        let spec = CostSpec::transport_two(1, p, 1.0, 0.0);
        assert!(spec.validate(1, 3).is_err());
    }

    #[test]
    fn empty_component_rejected() {
        assert!(Partition::new(vec![0, 2]).is_err());
        assert!(Partition::from_one_based(&[0, 1]).is_err());
    }

    #[test]
    fn local_and_global_presets() {
        let a = TabularPolicy::deterministic(2, &[0, 0, 1, 1]).unwrap();
        let b = TabularPolicy::deterministic(2, &[0, 1, 1, 0]).unwrap();
        assert_eq!(CostSpec::local(4, 2).evaluate(&a, &b).unwrap(), 2.0);
        assert_eq!(CostSpec::global(4, 2).evaluate(&a, &b).unwrap(), 1.0);
        assert_eq!(CostSpec::local(4, 2).evaluate(&a, &a).unwrap(), 0.0);
        assert_eq!(local_cost(&a, &b).unwrap(), 2);
        assert_eq!(global_cost(&a, &a).unwrap(), 0);
    }

    #[test]
    fn monte_carlo_converges_to_exact() {
        let pi_o = fixtures::random_policy(6, 3, 1);
        let pi_n = fixtures::random_policy(6, 3, 2);
        let spec = CostSpec::transport_general(6, Partition::new(vec![0, 1, 1]).unwrap(), 2.0, 0.5);
        let exact = spec.evaluate(&pi_o, &pi_n).unwrap();
        let mc = spec.evaluate_mc(&pi_o, &pi_n, 200_000, 3).unwrap();
        assert!((mc - exact).abs() < 0.02 * exact.abs().max(1.0));
        assert!(spec.evaluate_mc(&pi_o, &pi_n, 0, 3).is_err());
    }

    #[test]
    fn table_activation_interpolates() {
        let act = Activation::Table(vec![(0.0, 0.0), (1.0, 10.0), (2.0, 12.0)]);
        assert_eq!(act.apply(-1.0), 0.0);
        assert_eq!(act.apply(0.5), 5.0);
        assert_eq!(act.apply(1.5), 11.0);
        assert_eq!(act.apply(5.0), 12.0);
    }

    #[test]
    fn custom_table_lookup_order() {
        let pi_o = TabularPolicy::uniform(2, 2);
        let table = fixtures::two_state_cost();
        let same = TabularPolicy::deterministic(2, &[1, 1]).unwrap();
        let mixed = TabularPolicy::deterministic(2, &[0, 1]).unwrap();
        let stoch = TabularPolicy::from_rows(&[vec![0.3, 0.7], vec![1.0, 0.0]]).unwrap();
        assert_eq!(table.evaluate(&pi_o, &same).unwrap(), 25.0);
        assert_eq!(table.evaluate(&pi_o, &mixed).unwrap(), 50.0);
        assert_eq!(table.evaluate(&pi_o, &stoch).unwrap(), 500.0);
        assert_eq!(table.evaluate(&pi_o, &pi_o).unwrap(), 0.0);
        let sparse = CustomCostTable::new().with_policy(mixed.clone(), 7.0);
        assert_eq!(sparse.evaluate(&pi_o, &mixed).unwrap(), 7.0);
        assert!(matches!(
            sparse.evaluate(&pi_o, &same),
            Err(Error::MissingCostEntry(_))
        ));
    }

    #[test]
    fn pairs_round_trip() {
        let costs = [
            SwitchCost::Family(CostSpec::local(3, 2)),
            SwitchCost::Family(CostSpec::transport_general(3, Partition::new(vec![0, 1, 1]).unwrap(), 5.0, 0.1)),
            SwitchCost::Family(CostSpec {
                activation: Activation::Table(vec![(0.0, 0.0), (3.0, 1.5)]),
                state_measure: StateMeasure::Weights(vec![0.5, 0.25, 0.25]),
                statewise: StatewiseKind::TransportGeneral {
                    c1: GroundCost::matrix(3, vec![0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0]).unwrap(),
                    c2: GroundCost::Constant(0.5),
                    mode: PlanMode::FirstFeasible,
                },
                ..CostSpec::transport_two(3, Partition::new(vec![0, 1, 1]).unwrap(), 1.0, 2.0)
            }),
            SwitchCost::Custom(fixtures::two_state_cost().with_policy(TabularPolicy::uniform(3, 2), 9.0)),
        ];
        for cost in costs {
            let back = SwitchCost::from_pairs(&cost.to_pairs(), 3, cost_actions(&cost)).unwrap();
            assert_eq!(back, cost);
        }
    }

    fn cost_actions(cost: &SwitchCost) -> usize {
        match cost {
            SwitchCost::Family(spec) => spec.partition.len(),
            SwitchCost::Custom(_) => 2,
        }
    }

    #[test]
    fn unknown_keys_are_errors() {
        let pairs = vec![("kind".to_string(), "triangle".to_string())];
        assert!(SwitchCost::from_pairs(&pairs, 2, 2).is_err());
        let pairs = vec![
            ("kind".to_string(), "local".to_string()),
            ("sigma".to_string(), "cubic".to_string()),
        ];
        assert!(SwitchCost::from_pairs(&pairs, 2, 2).is_err());
    }
}
