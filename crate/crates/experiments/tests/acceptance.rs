//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if a primary criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use mafe_core::config::MafeConfig;
use mafe_core::envs::education::EduEnv;
use mafe_core::envs::healthcare::{illness_transition, HealthEnv, NegativeBase};
use mafe_core::envs::loan::installment_request;
use mafe_core::envs::{make_env, reward_norms, EnvKind};
use mafe_core::framework::{
    build_action, d_group_violation, policy_seed, run_episode, total_rewards, two_group_violation,
    ActionKind, ComponentAccumulator, ComponentSchema, Environment, SuccessSpec,
};
use mafe_core::gym::GymEnv;
use mafe_core::policy::{AffinePolicy, Policy, PolicyLayout, PolicyParams};
use mafe_core::rng::mix;
use mafe_core::trainer::{train, EnvObjective, Evaluation, Objective, TrainConfig, TrainOptions};
use mafe_experiments::catalog::{self, CATALOG};
use mafe_experiments::studies::{self, BaselineOptions};

const KINDS: [EnvKind; 3] = [EnvKind::Loan, EnvKind::Healthcare, EnvKind::Education];

/// Uniform in [0, 1) from a hash of `parts`.
fn unit(parts: &[u64]) -> f64 {
    (mix(parts) >> 11) as f64 / (1u64 << 53) as f64
}

fn scaled(n: usize, t: usize) -> MafeConfig {
    let mut cfg = MafeConfig::default();
    cfg.loan.population_size = n;
    cfg.loan.horizon = t;
    cfg.healthcare.population_size = n;
    cfg.healthcare.horizon = t;
    cfg.education.population_size = n;
    cfg.education.horizon = t;
    cfg
}

fn random_policies(env: &dyn Environment, seed: u64, scale: f64) -> Vec<Box<dyn Policy>> {
    env.agent_specs()
        .iter()
        .map(|s| {
            let layout = PolicyLayout::for_agent(s);
            let theta = (0..layout.param_count())
                .map(|i| scale * (2.0 * unit(&[seed, s.agent_id as u64, i as u64]) - 1.0))
                .collect();
            Box::new(AffinePolicy { params: PolicyParams::new(theta, layout).unwrap() }) as Box<dyn Policy>
        })
        .collect()
}

fn spec_for(kind: EnvKind, cfg: &MafeConfig) -> SuccessSpec {
    studies::lambda_spec(kind, cfg, 0.5).unwrap()
}

type Check = Result<String, String>;

/// Name, whether the criterion is primary, and its check.
type Criterion = (&'static str, bool, fn() -> Check);

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn amortization() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..200u64 {
        let b = 100.0 + unit(&[1, i]) * 1e6;
        let r = if i % 20 == 0 { 0.0 } else { unit(&[2, i]) * 0.05 };
        let m = 1 + (unit(&[3, i]) * 360.0) as usize;
        let mut bal = b;
        for t in 0..m {
            let y = installment_request(bal, r, t, m);
            bal = bal * (1.0 + r) - y;
        }
        worst = worst.max(bal.abs());
    }
    let el = start.elapsed();
    ensure(worst < 1e-6 && el < Duration::from_secs(1), format!("max residual {worst:.2e}, {el:.2?}"))
}

fn aggregation() -> Check {
    let schema = ComponentSchema::new(&["profit"], &[("rate", 1.0)], &[("m", false)], 2);
    let mut acc = ComponentAccumulator::new(&schema);
    for (t, (num, den, profit)) in [(1.0, 4.0, 2.0), (3.0, 2.0, 5.0)].into_iter().enumerate() {
        let mut s = schema.empty_step(t);
        s.reward = vec![profit, num, den];
        acc.accumulate(&s).unwrap();
    }
    let agg = total_rewards(&acc, &schema).unwrap();
    let stepwise = (1.0 / 4.0 + 3.0 / 2.0) / 2.0;
    let ok = agg.values == vec![7.0, 4.0 / 6.0] && agg.values[1] != stepwise;
    ensure(ok, format!("aggregated {:?} vs step-wise mean {stepwise}", agg.values))
}

fn std_oracle(xs: &[f64]) -> f64 {
    // Mean squared pairwise difference equals twice the population variance.
    let n = xs.len() as f64;
    let mut s = 0.0;
    for a in xs {
        for b in xs {
            s += (a - b) * (a - b);
        }
    }
    (s / (2.0 * n * n)).sqrt()
}

fn sums_of(rates: &[f64], seed: u64) -> Vec<f64> {
    rates
        .iter()
        .enumerate()
        .flat_map(|(g, r)| {
            let den = 1.0 + (unit(&[seed, g as u64, 99]) * 50.0).floor();
            [r * den, den]
        })
        .collect()
}

fn fairness_measures() -> Check {
    let sym2 = two_group_violation(&[3.0, 6.0, 1.0, 2.0], 0).unwrap().value;
    let symd = d_group_violation(&[1.0, 4.0, 2.0, 8.0, 5.0, 20.0], 0, 3).unwrap().value;
    let mut worst_half: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for i in 0..100u64 {
        let d = 2 + (i % 7) as usize;
        let rates: Vec<f64> = (0..d).map(|g| unit(&[i, g as u64])).collect();
        let sums = sums_of(&rates, i);
        let realized: Vec<f64> = sums.chunks(2).map(|c| c[0] / c[1]).collect();
        let v = d_group_violation(&sums, 0, d).unwrap().value;
        worst_oracle = worst_oracle.max((v + std_oracle(&realized)).abs());
        if d == 2 {
            let two = two_group_violation(&sums, 0).unwrap().value;
            worst_half = worst_half.max((v - two / 2.0).abs());
        }
    }
    let ok = sym2 == 0.0 && symd == 0.0 && worst_half <= 1e-15 && worst_oracle <= 1e-12;
    ensure(ok, format!("symmetric {sym2} / {symd}; D=2 half gap {worst_half:.1e}; oracle gap {worst_oracle:.1e}"))
}

fn probability_safety() -> Check {
    let mut cfg = MafeConfig::default().healthcare;
    let mut bad = 0;
    for i in 0..10_000u64 {
        cfg.negative_base = if i % 2 == 0 { NegativeBase::Reflected } else { NegativeBase::SignedMagnitude };
        let it = (unit(&[i, 1]) * 60.0).floor();
        let wb = (unit(&[i, 2]) * 60.0).floor();
        let h = 1.0 + unit(&[i, 3]) * 4.0;
        let tr = illness_transition(&cfg, it, wb, h);
        let in01 = |p: f64| (0.0..=1.0).contains(&p);
        if !(in01(tr.death) && in01(tr.cured) && in01(tr.terminate) && tr.death + tr.cured == tr.terminate) {
            bad += 1;
        }
    }
    ensure(bad == 0, format!("{bad} of 10000 states violate the bounds or the identity"))
}

fn conservation() -> Check {
    let cfg = scaled(200, 40);
    let mut worst: f64 = 0.0;
    let mut records = 0;
    for ep in 0..50u64 {
        let mut h = HealthEnv::new(cfg.healthcare.clone()).unwrap();
        let mut ps = random_policies(&h, ep, 2.0);
        run_episode(&mut h, &mut ps, ep, &spec_for(EnvKind::Healthcare, &cfg)).unwrap();
        for r in h.planner_ledger() {
            worst = worst.max((r.spent() + r.rollover - r.budget).abs());
            records += 1;
        }
        let mut e = EduEnv::new(cfg.education.clone()).unwrap();
        let mut ps = random_policies(&e, ep, 2.0);
        run_episode(&mut e, &mut ps, ep, &spec_for(EnvKind::Education, &cfg)).unwrap();
        for r in e.university_ledger() {
            worst = worst.max((r.spent() + r.rollover - r.budget).abs());
            records += 1;
        }
        for r in e.planner_ledger() {
            worst = worst.max((r.spent() - r.budget).abs());
            records += 1;
        }
    }
    ensure(worst <= 1e-6 && records > 0, format!("{records} budget records, worst imbalance {worst:.2e}"))
}

/// Steps two copies of an environment, one fed row-permuted observations.
fn equivariance_env(kind: EnvKind, cfg: &MafeConfig, perms: usize) -> Result<usize, String> {
    let mut a = make_env(kind, cfg).unwrap();
    let mut b = make_env(kind, cfg).unwrap();
    a.reset(11);
    b.reset(11);
    let mut pa = random_policies(a.as_ref(), 5, 1.0);
    let mut pb = random_policies(b.as_ref(), 5, 1.0);
    let specs = a.agent_specs().to_vec();
    let mut used = 0;
    let mut t = 0;
    while used < perms && t < a.horizon() {
        let mut acts_a = Vec::new();
        let mut acts_b = Vec::new();
        for s in &specs {
            if !s.acts_at(t) {
                acts_a.push(None);
                acts_b.push(None);
                continue;
            }
            let obs = a.observe(s.agent_id);
            if obs != b.observe(s.agent_id) {
                return Err(format!("{kind}: observations diverged at t={t}"));
            }
            let n = obs.n_rows();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.sort_by_key(|&i| mix(&[used as u64, t as u64, s.agent_id as u64, i as u64]));
            used += 1;
            let pobs = obs.permuted(&perm);
            let out = pa[s.agent_id].act(&obs);
            let pout = pb[s.agent_id].act(&pobs);
            let same = match s.action_kind {
                ActionKind::IndividualScores => perm.iter().enumerate().all(|(i, &p)| pout[i] == out[p]),
                _ => pout == out,
            };
            if !same {
                return Err(format!("{kind}: agent {} output not equivariant at t={t}", s.name));
            }
            acts_a.push(Some(build_action(s, &obs, out).unwrap()));
            acts_b.push(Some(build_action(s, &pobs, pout).unwrap()));
        }
        let oa = a.step(&acts_a).unwrap();
        let ob = b.step(&acts_b).unwrap();
        if oa != ob || a.indicators() != b.indicators() {
            return Err(format!("{kind}: step components differ at t={t}"));
        }
        if oa.termination.is_some() {
            break;
        }
        t += 1;
    }
    Ok(used)
}

fn equivariance() -> Check {
    let cfg = scaled(150, 60);
    let mut total = 0;
    for kind in KINDS {
        total += equivariance_env(kind, &cfg, 40)?;
    }
    ensure(total >= 100, format!("{total} permutations over all agents and envs"))
}

fn determinism() -> Check {
    let cfg = MafeConfig::default();
    let tc = TrainConfig { epochs: 2, episodes_per_epoch: 10, seed: 42, ..Default::default() };
    let mut lines = Vec::new();
    for kind in KINDS {
        let run = || {
            let obj = EnvObjective::all_learned(studies::env_factory(kind, &cfg), spec_for(kind, &cfg)).unwrap();
            train(&obj, &tc, &TrainOptions::default()).unwrap()
        };
        let (x, y) = (run(), run());
        let same = x.dist == y.dist && x.history_json_lines() == y.history_json_lines();
        if !same {
            return Err(format!("{kind}: runs differ"));
        }
        lines.push(format!("{kind} ok"));
    }
    Ok(lines.join(", "))
}

struct Quadratic {
    opt: Vec<f64>,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.opt.len()
    }

    fn evaluate(&self, theta: &[f64], _seed: u64) -> mafe_core::Result<Evaluation> {
        let s = -theta.iter().zip(&self.opt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        Ok(Evaluation { success: s, ..Default::default() })
    }
}

fn cem_quadratic() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let opt: Vec<f64> = (0..6).map(|i| 4.0 * unit(&[seed, i]) - 2.0).collect();
        let tc = TrainConfig { epochs: 20, episodes_per_epoch: 100, seed, ..Default::default() };
        let out = train(&Quadratic { opt: opt.clone() }, &tc, &TrainOptions::default()).unwrap();
        for (m, o) in out.dist.mu.iter().zip(&opt) {
            worst = worst.max((m - o).abs());
        }
    }
    let el = start.elapsed();
    ensure(worst < 0.05 && el < Duration::from_secs(10), format!("max |mu - opt| {worst:.4} over 5 seeds, {el:.2?}"))
}

fn interventions() -> Check {
    let start = Instant::now();
    let cfg = scaled(500, 100);
    let seeds = [1, 2, 3, 4, 5];
    let required = [
        "debt-relief-20pct",
        "universal-insurance",
        "beds-unlimited",
        "full-scholarships",
        "tertiary-max",
        "mentorship-all",
        "diversity-max",
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for iv in CATALOG.iter().filter(|iv| required.contains(&iv.name)) {
        let runs = studies::intervene(iv, &cfg, &seeds).unwrap();
        let held = runs.iter().filter(|r| r.direction_holds(iv)).count();
        ok &= held >= 4;
        parts.push(format!("{} {held}/5", iv.name));
    }
    let el = start.elapsed();
    ensure(ok && el < Duration::from_secs(300), format!("{}; {el:.2?}", parts.join(", ")))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn baselines() -> Check {
    let cfg = scaled(500, 100);
    let opts = BaselineOptions {
        train: TrainConfig { epochs: 10, episodes_per_epoch: 30, ..Default::default() },
        ..Default::default()
    };
    let rows = studies::baselines(&cfg, &opts, &[1, 2, 3]).unwrap();
    let fixed = mean(rows.iter().filter(|r| r.name == "fixed").map(|r| r.success));
    let multi = mean(rows.iter().filter(|r| r.name == "multi").map(|r| r.success));
    let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
    let anchors = rows.iter().filter(|r| r.name == "fixed").all(|r| {
        close(&r.action_means[0], &catalog::FIXED_THRESHOLDS) && close(&r.action_means[2], &catalog::FIXED_DEBT)
    });
    ensure(multi >= fixed && anchors, format!("multi {multi:.4} vs fixed {fixed:.4}; fixed actions anchored: {anchors}"))
}

fn frontier() -> Check {
    let cfg = scaled(500, 100);
    let tc = TrainConfig { epochs: 10, episodes_per_epoch: 30, ..Default::default() };
    let pts = studies::frontier(EnvKind::Loan, &cfg, &tc, &[0.0, 1.0], &[1, 2, 3], 30).unwrap();
    let f0 = mean(pts.iter().filter(|p| p.lambda == 0.0).map(|p| p.fairness));
    let f1 = mean(pts.iter().filter(|p| p.lambda == 1.0).map(|p| p.fairness));
    ensure(f0 >= f1, format!("mean fairness lambda=0 {f0:.4} vs lambda=1 {f1:.4}"))
}

fn bindings_parity() -> Check {
    let cfg = scaled(200, 50);
    for kind in KINDS {
        let spec = spec_for(kind, &cfg);
        let mut native = make_env(kind, &cfg).unwrap();
        let mut ps = random_policies(native.as_ref(), 9, 1.0);
        let want = run_episode(native.as_mut(), &mut ps, 77, &spec).unwrap();

        let mut gym = GymEnv::new(make_env(kind, &cfg).unwrap(), reward_norms(kind, &cfg));
        let mut ps = random_policies(gym.inner(), 9, 1.0);
        for (i, p) in ps.iter_mut().enumerate() {
            p.reset(policy_seed(77, i));
        }
        let mut obs = gym.reset(77);
        let mut steps = 0;
        loop {
            let acting = gym.acting_now();
            let outputs = ps
                .iter_mut()
                .zip(&obs)
                .zip(&acting)
                .map(|((p, o), &a)| a.then(|| p.act(o)))
                .collect();
            let st = gym.step(outputs).unwrap();
            steps += 1;
            obs = st.observations;
            if st.done {
                break;
            }
        }
        let got = gym.result(&spec).unwrap();
        if got != want || steps != want.steps_run {
            return Err(format!("{kind}: gym result differs from native run"));
        }
    }
    Ok("three envs, 50-step episodes, bit-identical results".into())
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("amortization oracle", true, amortization),
        ("aggregation vs step-wise", true, aggregation),
        ("fairness measures", true, fairness_measures),
        ("probability safety", true, probability_safety),
        ("budget conservation", true, conservation),
        ("permutation equivariance", true, equivariance),
        ("training determinism", true, determinism),
        ("CEM planted quadratic", true, cem_quadratic),
        ("intervention directions", true, interventions),
        ("baseline ordering", true, baselines),
        ("frontier endpoints", true, frontier),
        ("bindings parity", false, bindings_parity),
    ];
    let mut failed_primary = 0;
    for (name, primary, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| Err(format!("panicked: {:?}", e.downcast_ref::<String>().map(String::as_str).or(e.downcast_ref::<&str>().copied()))));
        let tier = if primary { "PRIMARY" } else { "SECONDARY" };
        let el = start.elapsed();
        match outcome {
            Ok(msg) => println!("PASS [{tier}] {name}: {msg} ({el:.1?})"),
            Err(msg) => {
                println!("FAIL [{tier}] {name}: {msg} ({el:.1?})");
                failed_primary += usize::from(primary);
            }
        }
    }
    if failed_primary > 0 {
        println!("{failed_primary} primary criteria failed");
        std::process::exit(1);
    }
}
