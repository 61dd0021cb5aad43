use std::fmt::Write as _;

use crate::cli::{Config, Output, EXIT_OK};
use crate::cost::{local_cost, global_cost, SwitchCost};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::format::fmt_num;
use crate::mdp::{evaluate_infinite, FiniteMdp};
use crate::nac::{responsibility_check, run_nac, NacConfig, StoppingConfig};
use crate::net_value::{net_value_exact, switch_optimal_search, CandidateSet, SwitchProblem};
use crate::offline::{evaluate_offline, generate_dataset, OpeConfig, TransitionDataset};
use crate::policy::TabularPolicy;

const DEFAULT_MDP: &str = "builtin:two-state";

fn seed(cfg: &Config) -> Result<u64> {
    cfg.get_or("", "seed", 0)
}

fn read(cfg: &Config, path: &str) -> Result<String> {
    let p = cfg.resolve(path);
    std::fs::read_to_string(&p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))
}

fn load_mdp(cfg: &Config) -> Result<FiniteMdp> {
    let spec = cfg.get("problem", "mdp").unwrap_or(DEFAULT_MDP);
    let mut mdp = match spec.strip_prefix("builtin:") {
        Some(name) => fixtures::builtin_mdp(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown builtin MDP `{name}`; available: {}",
                fixtures::BUILTIN_NAMES.join(", ")
            ))
        })?,
        None => read(cfg, spec)?.parse()?,
    };
    if let Some(h) = cfg.get("problem", "horizon") {
        mdp = mdp.with_horizon(parse(h, "problem.horizon")?)?;
    }
    if let Some(g) = cfg.get("problem", "gamma") {
        mdp = mdp.with_discount(parse(g, "problem.gamma")?)?;
    }
    if let Some(s0) = cfg.get("problem", "s0") {
        mdp = mdp.with_initial_state(parse(s0, "problem.s0")?)?;
    }
    Ok(mdp)
}

fn parse<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

/// `uniform`, `det:A0,A1,...`, `const:A` (same action everywhere) or a
/// policy file.
fn load_policy(cfg: &Config, spec: &str, mdp: &FiniteMdp) -> Result<TabularPolicy> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let policy = if spec == "uniform" {
        TabularPolicy::uniform(ns, na)
    } else if let Some(list) = spec.strip_prefix("det:") {
        let acts: Vec<usize> = list
            .split(',')
            .map(|t| parse(t.trim(), "policy"))
            .collect::<Result<_>>()?;
        TabularPolicy::deterministic(na, &acts)?
    } else if let Some(a) = spec.strip_prefix("const:") {
        TabularPolicy::deterministic(na, &vec![parse(a, "policy")?; ns])?
    } else {
        read(cfg, spec)?.parse()?
    };
    mdp.check_policy(&policy)?;
    Ok(policy)
}

struct Setup {
    problem: SwitchProblem,
    candidate: TabularPolicy,
}

fn setup(cfg: &Config) -> Result<Setup> {
    let mdp = load_mdp(cfg)?;
    let old_spec = cfg.get("problem", "old_policy").unwrap_or("uniform");
    let old = load_policy(cfg, old_spec, &mdp)?;
    let candidate = match cfg.get("problem", "policy") {
        Some(spec) => load_policy(cfg, spec, &mdp)?,
        None => old.clone(),
    };
    let bundled = cfg.get("problem", "mdp").unwrap_or(DEFAULT_MDP) == DEFAULT_MDP;
    let cost = if cfg.pairs("cost").is_empty() && bundled {
        SwitchCost::Custom(fixtures::two_state_cost())
    } else {
        SwitchCost::from_pairs(cfg.pairs("cost"), mdp.n_states(), mdp.n_actions())?
    };
    Ok(Setup {
        problem: SwitchProblem::new(mdp, old, cost)?,
        candidate,
    })
}

fn ope_config(cfg: &Config) -> Result<OpeConfig> {
    let d = OpeConfig::default();
    let mc_cost: usize = cfg.get_or("ope", "mc_cost_states", 0)?;
    let c = OpeConfig {
        lr_q: cfg.get_or("ope", "lr_q", d.lr_q)?,
        soft: cfg.get_or("ope", "soft", d.soft)?,
        batch_size: cfg.get_or("ope", "batch_size", d.batch_size)?,
        epochs: cfg.get_or("ope", "epochs", d.epochs)?,
        steps_per_epoch: cfg.get_or("ope", "steps_per_epoch", d.steps_per_epoch)?,
        mc_action_samples: cfg.get_or("ope", "mc_action_samples", d.mc_action_samples)?,
        mc_cost_states: (mc_cost > 0).then_some(mc_cost),
        grad_clip_q: cfg.get_or("ope", "grad_clip_q", d.grad_clip_q)?,
        n_critics: cfg.get_or("ope", "n_critics", d.n_critics)?,
        loss_tol: cfg.get_or("ope", "loss_tol", d.loss_tol)?,
        seed: seed(cfg)?,
    };
    c.validate()?;
    Ok(c)
}

fn nac_config(cfg: &Config) -> Result<NacConfig> {
    let d = NacConfig::default();
    let s = StoppingConfig::default();
    let c = NacConfig {
        ope: ope_config(cfg)?,
        stopping: StoppingConfig {
            epochs_stop: cfg.get_or("nac", "epochs_stop", s.epochs_stop)?,
            alpha: cfg.get_or("nac", "alpha", s.alpha)?,
            b_u: cfg.get_or("nac", "b_u", s.b_u)?,
            b_d: cfg.get_or("nac", "b_d", s.b_d)?,
        },
        actor_lr: cfg.get_or("nac", "actor_lr", d.actor_lr)?,
        actor_grad_clip: cfg.get_or("nac", "actor_grad_clip", d.actor_grad_clip)?,
        max_epochs: cfg.get_or("nac", "max_epochs", d.max_epochs)?,
        steps_per_epoch: cfg.get_or("nac", "steps_per_epoch", d.steps_per_epoch)?,
        reevaluate: cfg.get_or("nac", "reevaluate", d.reevaluate)?,
    };
    c.validate()?;
    Ok(c)
}

/// Dataset from `data.path`, or rolled out from `data.behavior`.
fn dataset(cfg: &Config, problem: &SwitchProblem) -> Result<TransitionDataset> {
    let mdp = problem.mdp();
    if let Some(path) = cfg.get("data", "path") {
        let data: TransitionDataset = read(cfg, path)?.parse()?;
        if data.n_states() != mdp.n_states() || data.n_actions() != mdp.n_actions() {
            return Err(Error::Shape("dataset does not match the MDP".into()));
        }
        return Ok(data);
    }
    let behavior = load_policy(cfg, cfg.get("data", "behavior").unwrap_or("uniform"), mdp)?;
    let episodes = cfg.get_or("data", "episodes", 100usize)?;
    let data_seed = cfg.get_or("data", "seed", seed(cfg)?)?;
    generate_dataset(mdp, &behavior, episodes, data_seed)
}

fn header(out: &mut String, command: &str, problem: &SwitchProblem) {
    let m = problem.mdp();
    let _ = writeln!(out, "# {command}");
    let _ = writeln!(
        out,
        "mdp states={} actions={} horizon={} gamma={} s0={}",
        m.n_states(),
        m.n_actions(),
        m.horizon(),
        fmt_num(m.discount()),
        m.initial_state()
    );
}

pub(crate) fn cmd_evaluate(cfg: &Config, out: &Output) -> Result<i32> {
    let Setup { problem, candidate } = setup(cfg)?;
    let nv = net_value_exact(&problem, &candidate)?;
    let mut r = String::new();
    header(&mut r, "evaluate", &problem);
    let _ = writeln!(r, "cost={}", fmt_num(nv.cost));
    let _ = writeln!(r, "v_net={}", fmt_num(nv.v_net));
    let _ = writeln!(r, "[values]\ns value net_value");
    for (s, (v, n)) in nv.value.iter().zip(&nv.v_net_all).enumerate() {
        let _ = writeln!(r, "{s} {} {}", fmt_num(*v), fmt_num(*n));
    }
    let _ = writeln!(r, "[q]\ns a q net_q");
    for s in 0..nv.q.n_states() {
        for a in 0..nv.q.n_actions() {
            let _ = writeln!(r, "{s} {a} {} {}", fmt_num(nv.q.get(s, a)), fmt_num(nv.q_net.get(s, a)));
        }
    }
    out.file("mdp.txt", &problem.mdp().to_string())?;
    out.file("policy.txt", &candidate.to_string())?;
    out.emit("evaluate.txt", &r)?;
    Ok(EXIT_OK)
}

pub(crate) fn cmd_cost(cfg: &Config, out: &Output) -> Result<i32> {
    let Setup { problem, candidate } = setup(cfg)?;
    let old = problem.old_policy();
    let mut r = String::from("# cost\n");
    let c = match cfg.get_or("cost", "mc_states", 0usize)? {
        0 => problem.switch_cost(&candidate)?,
        n => problem.switch_cost_mc(&candidate, n, seed(cfg)?)?,
    };
    let _ = writeln!(r, "cost={}", fmt_num(c));
    let _ = writeln!(r, "local={}", local_cost(old, &candidate)?);
    let _ = writeln!(r, "global={}", global_cost(old, &candidate)?);
    if let SwitchCost::Family(spec) = problem.cost() {
        let _ = writeln!(r, "[statewise]\ns learning transaction");
        for s in 0..old.n_states() {
            let (l, t) = spec.statewise_terms(old.row(s), candidate.row(s))?;
            let _ = writeln!(r, "{s} {} {}", fmt_num(l), fmt_num(t));
        }
    }
    let _ = writeln!(r, "[spec]");
    r.push_str(&problem.cost().to_string());
    out.emit("cost.txt", &r)?;
    Ok(EXIT_OK)
}

pub(crate) fn cmd_gen_data(cfg: &Config, out: &Output) -> Result<i32> {
    let Setup { problem, .. } = setup(cfg)?;
    let data = dataset(cfg, &problem)?;
    out.emit("dataset.txt", &data.to_string())?;
    Ok(EXIT_OK)
}

pub(crate) fn cmd_ope(cfg: &Config, out: &Output) -> Result<i32> {
    let Setup { problem, candidate } = setup(cfg)?;
    let data = dataset(cfg, &problem)?;
    let rep = evaluate_offline(&problem, &candidate, &data, &ope_config(cfg)?)?;
    let mut r = String::new();
    header(&mut r, "ope", &problem);
    let _ = writeln!(r, "semantics=discounted-fixed-point");
    let _ = writeln!(r, "v_net_hat={}", fmt_num(rep.v_net_hat));
    if problem.mdp().discount() < 1.0 {
        let q = evaluate_infinite(problem.mdp(), &candidate, 1e-12)?;
        let exact = q.state_values(&candidate)[problem.initial_state()] - rep.cost_value;
        let _ = writeln!(r, "v_net_exact={}", fmt_num(exact));
    }
    let _ = writeln!(r, "cost={}", fmt_num(rep.cost_value));
    let _ = writeln!(r, "coverage={}", fmt_num(rep.coverage));
    let _ = writeln!(r, "records={}", data.len());
    let _ = writeln!(r, "epochs_run={}", rep.loss_trace.len());
    let _ = writeln!(r, "[trace]\nepoch mean_td_loss v_net_estimate");
    r.push_str(&rep.render_trace());
    out.emit("ope.txt", &r)?;
    Ok(EXIT_OK)
}

fn candidate_set(cfg: &Config) -> Result<CandidateSet> {
    let spec = cfg.get("search", "candidates").unwrap_or("deterministic");
    match spec.split_once(':') {
        None if spec == "deterministic" => Ok(CandidateSet::AllDeterministic),
        Some(("grid", k)) => Ok(CandidateSet::StochasticGrid {
            resolution: parse(k, "search.candidates")?,
        }),
        _ => Err(Error::Config(format!("unknown candidate set `{spec}`"))),
    }
}

pub(crate) fn cmd_search(cfg: &Config, out: &Output) -> Result<i32> {
    let Setup { problem, .. } = setup(cfg)?;
    let res = switch_optimal_search(&problem, &candidate_set(cfg)?)?;
    let mut r = String::new();
    header(&mut r, "search", &problem);
    let _ = writeln!(r, "best_id={}", res.best_id);
    if let Some(acts) = res.best.deterministic_actions() {
        let acts: Vec<String> = acts.iter().map(usize::to_string).collect();
        let _ = writeln!(r, "best_actions={}", acts.join(","));
    }
    let _ = writeln!(r, "net_value={}", fmt_num(res.v_net));
    let _ = writeln!(r, "[ranking]");
    r.push_str(&res.render_ranking());
    let _ = writeln!(r, "[best]");
    r.push_str(&res.best.to_string());
    out.emit("search.txt", &r)?;
    Ok(EXIT_OK)
}

pub(crate) fn cmd_nac(cfg: &Config, out: &Output) -> Result<i32> {
    let Setup { problem, .. } = setup(cfg)?;
    let data = dataset(cfg, &problem)?;
    let report = run_nac(&problem, &data, &nac_config(cfg)?)?;
    let responsible = responsibility_check(&problem, &report)?;
    let mut r = String::new();
    header(&mut r, "nac", &problem);
    r.push_str(&report.to_string());
    let _ = writeln!(r, "[check]\nresponsible={responsible}");
    out.emit("nac.txt", &r)?;
    Ok(EXIT_OK)
}
