//! Golden checks on the two-state example plus randomized property sweeps.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cli::{Output, EXIT_CHECK_FAILED, EXIT_OK};
use crate::cost::{
    global_cost, local_cost, statewise_learning_two, statewise_transaction_two, CostSpec, Partition, SwitchCost,
};
use crate::error::Result;
use crate::fixtures::{self, ALPHA, ALT, BETA, STAY};
use crate::mdp::{evaluate_exact, evaluate_infinite, simulate, FiniteMdp, QTable};
use crate::net_value::{
    net_bellman_apply, net_q_fixed_point, net_value_exact, nontriviality_witness, switch_optimal_search,
    CandidateSet, SwitchProblem,
};
use crate::ot::{combined_plan, learning_cost_general, transaction_cost_general, GroundCost, PlanMode};
use crate::policy::TabularPolicy;

type Outcome = std::result::Result<(), String>;
type Check = fn(&Bench) -> Outcome;

struct Bench {
    mdp: FiniteMdp,
}

impl Bench {
    fn problem(&self, s0: usize) -> Result<SwitchProblem> {
        SwitchProblem::new(
            self.mdp.clone().with_initial_state(s0)?,
            fixtures::two_state_old_policy(),
            SwitchCost::Custom(fixtures::two_state_cost()),
        )
    }

    fn candidate(&self, name: &str) -> TabularPolicy {
        fixtures::two_state_candidates()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, p)| p)
            .expect("known candidate")
    }
}

fn expect(what: &str, got: f64, want: f64) -> Outcome {
    if got == want {
        Ok(())
    } else {
        Err(format!("{what}: got {got}, expected {want}"))
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

const CHECKS: &[(&str, Check)] = &[
    ("golden.values", golden_values),
    ("golden.net_values", golden_net_values),
    ("golden.net_q", golden_net_q),
    ("search.switch_optimal_alpha", search_alpha),
    ("search.switch_optimal_beta", search_beta),
    ("search.initial_state_dependence", initial_state_dependence),
    ("net_q.not_actionwise_optimal", net_q_not_actionwise),
    ("witness.value_optimum_loses", witness),
    ("cost.local_global_recovery", local_global_recovery),
    ("ot.feasibility", ot_feasibility),
    ("ot.two_component_recovery", ot_recovery),
    ("operator.contraction", contraction),
    ("operator.fixed_point", fixed_point),
    ("simulate.alternation", alternation),
];

fn golden_values(b: &Bench) -> Outcome {
    let table = [
        ("n1", [100.0, 0.0]),
        ("n2", [50.0, 50.0]),
        ("n3", [100.0, 100.0]),
        ("n4", [0.0, 0.0]),
    ];
    for (name, want) in table {
        let ev = evaluate_exact(&b.mdp, &b.candidate(name)).map_err(fail)?;
        for s in [ALPHA, BETA] {
            expect(&format!("V[{name}]({s})"), ev.values[s], want[s])?;
        }
    }
    let ev = evaluate_exact(&b.mdp, &fixtures::two_state_old_policy()).map_err(fail)?;
    for s in [ALPHA, BETA] {
        expect(&format!("V[old]({s})"), ev.values[s], 50.0)?;
    }
    Ok(())
}

fn golden_net_values(b: &Bench) -> Outcome {
    let table = [
        ("n1", [75.0, -25.0]),
        ("n2", [25.0, 25.0]),
        ("n3", [50.0, 50.0]),
        ("n4", [-50.0, -50.0]),
    ];
    let problem = b.problem(ALPHA).map_err(fail)?;
    for (name, want) in table {
        let nv = net_value_exact(&problem, &b.candidate(name)).map_err(fail)?;
        for s in [ALPHA, BETA] {
            expect(&format!("V_N[{name}]({s})"), nv.v_net_all[s], want[s])?;
        }
    }
    let nv = net_value_exact(&problem, problem.old_policy()).map_err(fail)?;
    for s in [ALPHA, BETA] {
        expect(&format!("V_N[old]({s})"), nv.v_net_all[s], 50.0)?;
    }
    Ok(())
}

fn golden_net_q(b: &Bench) -> Outcome {
    let problem = b.problem(ALPHA).map_err(fail)?;
    let n1 = net_value_exact(&problem, &b.candidate("n1")).map_err(fail)?;
    let n3 = net_value_exact(&problem, &b.candidate("n3")).map_err(fail)?;
    expect("Q_N[n1](alpha, stay)", n1.q_net.get(ALPHA, STAY), 75.0)?;
    expect("Q_N[n1](alpha, alt)", n1.q_net.get(ALPHA, ALT), -25.0)?;
    expect("Q_N[n3](alpha, alt)", n3.q_net.get(ALPHA, ALT), 49.0)
}

fn search_alpha(b: &Bench) -> Outcome {
    let res = switch_optimal_search(&b.problem(ALPHA).map_err(fail)?, &CandidateSet::AllDeterministic)
        .map_err(fail)?;
    if !res.best.approx_eq(&b.candidate("n1")) {
        return Err(format!("best is policy {}, expected n1", res.best_id));
    }
    expect("net value", res.v_net, 75.0)
}

fn search_beta(b: &Bench) -> Outcome {
    let res = switch_optimal_search(&b.problem(BETA).map_err(fail)?, &CandidateSet::AllDeterministic)
        .map_err(fail)?;
    if res.best_id != 0 {
        return Err(format!("best is policy {}, expected the old policy", res.best_id));
    }
    expect("net value", res.v_net, 50.0)?;
    let n3 = res
        .policies
        .iter()
        .position(|p| p.approx_eq(&b.candidate("n3")))
        .ok_or("n3 missing from the candidate set")?;
    let tied = res.ranking.iter().find(|e| e.policy_id == n3).map(|e| e.net_value);
    expect("net value of n3", tied.unwrap_or(f64::NAN), 50.0)
}

fn initial_state_dependence(b: &Bench) -> Outcome {
    let at = |s0| {
        switch_optimal_search(&b.problem(s0).map_err(fail)?, &CandidateSet::AllDeterministic)
            .map(|r| r.best)
            .map_err(fail)
    };
    if at(ALPHA)?.approx_eq(&at(BETA)?) {
        return Err("same maximiser at both initial states".into());
    }
    Ok(())
}

fn net_q_not_actionwise(b: &Bench) -> Outcome {
    let problem = b.problem(ALPHA).map_err(fail)?;
    let n1 = net_value_exact(&problem, &b.candidate("n1")).map_err(fail)?;
    let n3 = net_value_exact(&problem, &b.candidate("n3")).map_err(fail)?;
    let (q1, q3) = (n1.q_net.get(ALPHA, ALT), n3.q_net.get(ALPHA, ALT));
    if q3 > q1 {
        Ok(())
    } else {
        Err(format!("Q_N[n3](alpha, alt) = {q3} does not exceed Q_N[n1](alpha, alt) = {q1}"))
    }
}

fn witness(b: &Bench) -> Outcome {
    let mdp = b.mdp.clone().with_initial_state(BETA).map_err(fail)?;
    let old = fixtures::two_state_old_policy();
    let set = CandidateSet::AllDeterministic;
    let table = nontriviality_witness(&mdp, &old, &set)
        .map_err(fail)?
        .ok_or("no witness for a problem with distinct values")?;
    let problem = SwitchProblem::new(mdp, old, SwitchCost::Custom(table)).map_err(fail)?;
    let res = switch_optimal_search(&problem, &set).map_err(fail)?;
    if res.best_id != 0 {
        return Err(format!("witness cost still selects policy {}", res.best_id));
    }
    Ok(())
}

/// Random pair of policies that share some rows.
fn policy_pair(rng: &mut ChaCha8Rng) -> (TabularPolicy, TabularPolicy) {
    let ns = rng.gen_range(1..=6);
    let na = rng.gen_range(1..=4);
    let rows = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..ns).map(|_| fixtures::random_simplex(na, rng)).collect()
    };
    let a = rows(rng);
    let mut b = rows(rng);
    for s in 0..ns {
        if rng.gen_bool(0.4) {
            b[s] = a[s].clone();
        }
    }
    (
        TabularPolicy::from_rows(&a).expect("simplex rows"),
        TabularPolicy::from_rows(&b).expect("simplex rows"),
    )
}

fn local_global_recovery(_: &Bench) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..200 {
        let (o, n) = policy_pair(&mut rng);
        let (ns, na) = (o.n_states(), o.n_actions());
        let local = CostSpec::local(ns, na).evaluate(&o, &n).map_err(fail)?;
        let global = CostSpec::global(ns, na).evaluate(&o, &n).map_err(fail)?;
        let want_l = local_cost(&o, &n).map_err(fail)? as f64;
        let want_g = global_cost(&o, &n).map_err(fail)? as f64;
        expect(&format!("local cost, trial {trial}"), local, want_l)?;
        expect(&format!("global cost, trial {trial}"), global, want_g)?;
    }
    Ok(())
}

fn random_partition(na: usize, rng: &mut ChaCha8Rng) -> Partition {
    let k = rng.gen_range(1..=na.min(4));
    let mut labels: Vec<usize> = (0..na).map(|x| if x < k { x } else { rng.gen_range(0..k) }).collect();
    for i in (1..na).rev() {
        labels.swap(i, rng.gen_range(0..=i));
    }
    Partition::new(labels).expect("every label in range is used")
}

fn ot_feasibility(_: &Bench) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..200 {
        let na = rng.gen_range(1..=8);
        let o = fixtures::random_simplex(na, &mut rng);
        let n = fixtures::random_simplex(na, &mut rng);
        let p = random_partition(na, &mut rng);
        let c1 = GroundCost::CrossComponent(p.clone());
        let plan = combined_plan(&o, &n, &p, &c1, &GroundCost::constant_one(), PlanMode::Optimal).map_err(fail)?;
        let (rows, cols) = (plan.row_marginal(na), plan.col_marginal(na));
        for x in 0..na {
            if (rows[x] - o[x]).abs() > 1e-9 || (cols[x] - n[x]).abs() > 1e-9 {
                return Err(format!("trial {trial}: marginal mismatch at action {x}"));
            }
        }
    }
    Ok(())
}

fn ot_recovery(_: &Bench) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for trial in 0..200 {
        let na = rng.gen_range(2..=8);
        let p = Partition::split_at(na, rng.gen_range(1..na)).map_err(fail)?;
        let o = fixtures::random_simplex(na, &mut rng);
        let n = fixtures::random_simplex(na, &mut rng);
        let c1 = GroundCost::CrossComponent(p.clone());
        let one = GroundCost::constant_one();
        let l = learning_cost_general(&o, &n, &p, &c1, PlanMode::Optimal).map_err(fail)?;
        let t = transaction_cost_general(&o, &n, &p, &one, PlanMode::Optimal).map_err(fail)?;
        let l2 = statewise_learning_two(&o, &n, &p).map_err(fail)?;
        let t2 = statewise_transaction_two(&o, &n, &p).map_err(fail)?;
        if (l - l2).abs() > 1e-9 || (t - t2).abs() > 1e-9 {
            return Err(format!("trial {trial}: ({l}, {t}) vs closed form ({l2}, {t2})"));
        }
    }
    Ok(())
}

fn random_q(ns: usize, na: usize, rng: &mut ChaCha8Rng) -> QTable {
    let vals = (0..ns * na).map(|_| rng.gen_range(-20.0..20.0)).collect();
    QTable::from_vec(ns, na, vals).expect("shape matches")
}

fn random_problem(trial: u64, rng: &mut ChaCha8Rng) -> Result<SwitchProblem> {
    let ns = rng.gen_range(1..=8);
    let na = rng.gen_range(1..=4);
    let gamma = rng.gen_range(0.1..0.99);
    let mdp = fixtures::random_mdp(ns, na, 10, gamma, trial);
    let old = fixtures::random_policy(ns, na, trial + 1);
    let cost = if na >= 2 {
        let (c_l, c_t) = (rng.gen_range(0.0..5.0), rng.gen_range(0.0..1.0));
        CostSpec::transport_two(ns, Partition::split_at(na, 1)?, c_l, c_t)
    } else {
        CostSpec::local(ns, na)
    };
    SwitchProblem::new(mdp, old, SwitchCost::Family(cost))
}

fn contraction(_: &Bench) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for trial in 0..200 {
        let problem = random_problem(trial, &mut rng).map_err(fail)?;
        let (ns, na) = (problem.mdp().n_states(), problem.mdp().n_actions());
        let pi = fixtures::random_policy(ns, na, trial + 2);
        let (q1, q2) = (random_q(ns, na, &mut rng), random_q(ns, na, &mut rng));
        let b1 = net_bellman_apply(&problem, &pi, &q1).map_err(fail)?;
        let b2 = net_bellman_apply(&problem, &pi, &q2).map_err(fail)?;
        let gamma = problem.mdp().discount();
        let (lhs, rhs) = (b1.sup_distance(&b2), gamma * q1.sup_distance(&q2) + 1e-12);
        if lhs > rhs {
            return Err(format!("trial {trial}: {lhs} > {rhs}"));
        }
    }
    Ok(())
}

fn fixed_point(_: &Bench) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for trial in 0..50 {
        let problem = random_problem(trial, &mut rng).map_err(fail)?;
        let mdp = problem.mdp();
        let pi = fixtures::random_policy(mdp.n_states(), mdp.n_actions(), trial + 2);
        let q = net_q_fixed_point(&problem, &pi, 1e-12, 100_000).map_err(fail)?;
        let c = problem.switch_cost(&pi).map_err(fail)?;
        let exact = evaluate_infinite(mdp, &pi, 1e-13).map_err(fail)?.map(|x| x - c);
        let gap = q.sup_distance(&exact);
        if gap > 1e-8 {
            return Err(format!("trial {trial}: fixed point differs by {gap}"));
        }
    }
    Ok(())
}

fn alternation(b: &Bench) -> Outcome {
    let runs = simulate(&b.mdp, &b.candidate("n2"), 1, 0).map_err(fail)?;
    for (t, step) in runs[0].steps.iter().enumerate() {
        let want = if t % 2 == 0 { ALPHA } else { BETA };
        if step.state != want {
            return Err(format!("step {t}: state {}, expected {want}", step.state));
        }
    }
    Ok(())
}

pub(crate) fn cmd_verify(list: bool, fixture: Option<&Path>, out: &Output) -> Result<i32> {
    let mut report = String::new();
    if list {
        for (name, _) in CHECKS {
            let _ = writeln!(report, "{name}");
        }
        out.emit("verify.txt", &report)?;
        return Ok(EXIT_OK);
    }
    let mdp = match fixture {
        Some(path) => std::fs::read_to_string(path)?.parse()?,
        None => fixtures::two_state_mdp(),
    };
    let bench = Bench { mdp };
    let mut first_failure = None;
    for (name, check) in CHECKS {
        match check(&bench) {
            Ok(()) => {
                let _ = writeln!(report, "[PASS] {name}");
            }
            Err(detail) => {
                let _ = writeln!(report, "[FAIL] {name}: {detail}");
                first_failure.get_or_insert(*name);
            }
        }
    }
    let passed = CHECKS.len() - report.matches("[FAIL]").count();
    let _ = writeln!(report, "{passed}/{} checks passed", CHECKS.len());
    if let Some(name) = first_failure {
        let _ = writeln!(report, "first divergence: {name}");
    }
    out.emit("verify.txt", &report)?;
    Ok(if first_failure.is_some() { EXIT_CHECK_FAILED } else { EXIT_OK })
}
