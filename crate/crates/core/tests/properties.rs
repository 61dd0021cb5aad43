use netswitch::cost::{global_cost, local_cost};
use netswitch::fixtures::{random_mdp, random_policy, random_simplex};
use netswitch::nac::{stopping_check, ActorParams};
use netswitch::net_value::net_bellman_apply;
use netswitch::ot::combined_plan;
use netswitch::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dims() -> impl Strategy<Value = (usize, usize, u64)> {
    (1usize..=6, 1usize..=4, any::<u64>())
}

/// Two policies on the same shape that agree on a random subset of rows.
fn overlapping(ns: usize, na: usize, seed: u64) -> (TabularPolicy, TabularPolicy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<Vec<f64>> = (0..ns).map(|_| random_simplex(na, &mut rng)).collect();
    let b: Vec<Vec<f64>> = a
        .iter()
        .map(|row| if rng.gen_bool(0.5) { row.clone() } else { random_simplex(na, &mut rng) })
        .collect();
    (TabularPolicy::from_rows(&a).unwrap(), TabularPolicy::from_rows(&b).unwrap())
}

fn random_partition(na: usize, seed: u64) -> Partition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(1..=na.min(4));
    let labels: Vec<usize> = (0..na).map(|x| if x < k { x } else { rng.gen_range(0..k) }).collect();
    Partition::new(labels).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn policy_text_round_trips((ns, na, seed) in dims()) {
        let pi = random_policy(ns, na, seed);
        let back: TabularPolicy = pi.to_string().parse().unwrap();
        prop_assert_eq!(back, pi);
    }

    #[test]
    fn mdp_text_round_trips((ns, na, seed) in dims(), h in 1usize..30, gamma in 0.0f64..1.0) {
        let mdp = random_mdp(ns, na, h, gamma, seed);
        let back: FiniteMdp = mdp.to_string().parse().unwrap();
        prop_assert_eq!(back, mdp);
    }

    #[test]
    fn dataset_text_round_trips((ns, na, seed) in dims()) {
        let mdp = random_mdp(ns, na, 5, 0.9, seed);
        let data = generate_dataset(&mdp, &random_policy(ns, na, seed ^ 1), 3, seed).unwrap();
        let back: TransitionDataset = data.to_string().parse().unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn cost_spec_pairs_round_trip((ns, na, seed) in dims(), c_l in 0.0f64..10.0, c_t in 0.0f64..10.0) {
        let spec = CostSpec::transport_general(ns, random_partition(na, seed), c_l, c_t);
        let cost = SwitchCost::Family(spec);
        let back = SwitchCost::from_pairs(&cost.to_pairs(), ns, na).unwrap();
        prop_assert_eq!(back, cost);
    }

    #[test]
    fn family_costs_are_nonnegative_and_vanish_on_identity(
        (ns, na, seed) in dims(), c_l in 0.0f64..10.0, c_t in 0.0f64..10.0,
    ) {
        let (o, n) = overlapping(ns, na, seed);
        let p = random_partition(na, seed);
        let spec = CostSpec::transport_general(ns, p.clone(), c_l, c_t);
        prop_assert!(spec.evaluate(&o, &n).unwrap() >= 0.0);
        let learning_only = CostSpec::transport_general(ns, p, c_l, 0.0);
        prop_assert!(learning_only.evaluate(&o, &o).unwrap().abs() < 1e-12);
        let problem = SwitchProblem::new(random_mdp(ns, na, 3, 0.9, seed), o.clone(), spec.into()).unwrap();
        prop_assert_eq!(problem.switch_cost(&o).unwrap(), 0.0);
    }

    #[test]
    fn local_and_global_are_family_members((ns, na, seed) in dims()) {
        let (o, n) = overlapping(ns, na, seed);
        let local = CostSpec::local(ns, na).evaluate(&o, &n).unwrap();
        let global = CostSpec::global(ns, na).evaluate(&o, &n).unwrap();
        prop_assert_eq!(local, local_cost(&o, &n).unwrap() as f64);
        prop_assert_eq!(global, global_cost(&o, &n).unwrap() as f64);
    }

    #[test]
    fn two_component_general_cost_equals_closed_form(
        (ns, na, seed) in (1usize..=5, 2usize..=6, any::<u64>()), c_l in 0.0f64..10.0, c_t in 0.0f64..10.0,
    ) {
        let (o, n) = overlapping(ns, na, seed);
        let p = Partition::split_at(na, 1 + (seed as usize) % (na - 1)).unwrap();
        let general = CostSpec::transport_general(ns, p.clone(), c_l, c_t).evaluate(&o, &n).unwrap();
        let closed = CostSpec::transport_two(ns, p, c_l, c_t).evaluate(&o, &n).unwrap();
        prop_assert!((general - closed).abs() <= 1e-9 * (1.0 + closed.abs()));
    }

    #[test]
    fn combined_plan_couples_the_rows(na in 1usize..=8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = random_simplex(na, &mut rng);
        let n = random_simplex(na, &mut rng);
        let p = random_partition(na, seed);
        let c1 = GroundCost::CrossComponent(p.clone());
        let plan = combined_plan(&o, &n, &p, &c1, &GroundCost::constant_one(), PlanMode::Optimal).unwrap();
        for (got, want) in plan.row_marginal(na).iter().zip(&o) {
            prop_assert!((got - want).abs() <= 1e-9);
        }
        for (got, want) in plan.col_marginal(na).iter().zip(&n) {
            prop_assert!((got - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn net_value_is_value_minus_cost((ns, na, seed) in dims()) {
        let mdp = random_mdp(ns, na, 8, 0.95, seed);
        let (o, n) = overlapping(ns, na, seed);
        let problem = SwitchProblem::new(mdp.clone(), o, CostSpec::local(ns, na).into()).unwrap();
        let nv = net_value_exact(&problem, &n).unwrap();
        let ev = evaluate_exact(&mdp, &n).unwrap();
        for s in 0..ns {
            prop_assert_eq!(nv.v_net_all[s], ev.values[s] - nv.cost);
            for a in 0..na {
                prop_assert_eq!(nv.q_net.get(s, a), ev.q.get(s, a) - nv.cost);
            }
        }
    }

    #[test]
    fn net_operator_contracts((ns, na, seed) in dims(), gamma in 0.1f64..0.99) {
        let mdp = random_mdp(ns, na, 10, gamma, seed);
        let (o, n) = overlapping(ns, na, seed);
        let problem = SwitchProblem::new(mdp, o, CostSpec::local(ns, na).into()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let mut q = || {
            let v = (0..ns * na).map(|_| rng.gen_range(-50.0..50.0)).collect();
            QTable::from_vec(ns, na, v).unwrap()
        };
        let (q1, q2) = (q(), q());
        let d = net_bellman_apply(&problem, &n, &q1).unwrap()
            .sup_distance(&net_bellman_apply(&problem, &n, &q2).unwrap());
        prop_assert!(d <= gamma * q1.sup_distance(&q2) + 1e-12);
    }

    #[test]
    fn search_returns_a_maximiser((ns, na, seed) in (1usize..=3, 1usize..=3, any::<u64>())) {
        let mdp = random_mdp(ns, na, 6, 0.9, seed);
        let old = random_policy(ns, na, seed ^ 3);
        let problem = SwitchProblem::new(mdp, old, CostSpec::local(ns, na).into()).unwrap();
        let res = switch_optimal_search(&problem, &CandidateSet::AllDeterministic).unwrap();
        for e in &res.ranking {
            prop_assert!(e.net_value <= res.v_net);
        }
    }

    #[test]
    fn stopping_check_is_pure(
        v0 in -10.0f64..10.0, v1 in -10.0f64..10.0, v2 in -10.0f64..10.0, epoch in 0usize..10,
    ) {
        let cfg = StoppingConfig::default();
        let first = stopping_check(v0, v1, v2, &cfg, epoch);
        prop_assert_eq!(first, stopping_check(v0, v1, v2, &cfg, epoch));
        if epoch < cfg.epochs_stop {
            prop_assert!(!first);
        }
    }

    #[test]
    fn softmax_policies_are_stochastic((ns, na, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = (0..ns * na).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let pi = ActorParams::new(ns, na, logits).unwrap().policy();
        for row in pi.rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn warm_start_reproduces_the_policy((ns, na, seed) in dims()) {
        let pi = random_policy(ns, na, seed);
        let back = ActorParams::from_policy(&pi).policy();
        for (x, y) in back.as_slice().iter().zip(pi.as_slice()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
