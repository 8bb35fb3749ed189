use proptest::prelude::*;

use mafe_core::config::MafeConfig;
use mafe_core::envs::healthcare::{ExpFamily, NegativeBase, Transition};
use mafe_core::envs::loan::installment_request;
use mafe_core::envs::{make_env, reward_norms, EnvKind};
use mafe_core::framework::{
    d_group_violation, policy_seed, run_episode, total_rewards, two_group_violation, ActionKind,
    ComponentAccumulator, ComponentSchema, Environment, ObservationMatrix, SuccessSpec,
};
use mafe_core::gym::GymEnv;
use mafe_core::policy::{apply, AffinePolicy, Policy, PolicyLayout, PolicyParams};
use mafe_core::trainer::{elite_size, elite_update};

fn small(kind: EnvKind) -> MafeConfig {
    let mut cfg = MafeConfig::default();
    match kind {
        EnvKind::Loan => {
            cfg.loan.population_size = 80;
            cfg.loan.horizon = 24;
        }
        EnvKind::Healthcare => {
            cfg.healthcare.population_size = 80;
            cfg.healthcare.horizon = 24;
        }
        EnvKind::Education => {
            cfg.education.population_size = 150;
            cfg.education.horizon = 24;
        }
    }
    cfg
}

fn kind_strategy() -> impl Strategy<Value = EnvKind> {
    prop_oneof![Just(EnvKind::Loan), Just(EnvKind::Healthcare), Just(EnvKind::Education)]
}

fn affine_policies(env: &dyn Environment, theta: &[f64]) -> Vec<Box<dyn Policy>> {
    let mut at = 0;
    env.agent_specs()
        .iter()
        .map(|s| {
            let layout = PolicyLayout::for_agent(s);
            let n = layout.param_count();
            let th: Vec<f64> = (0..n).map(|i| theta[(at + i) % theta.len()]).collect();
            at += n;
            Box::new(AffinePolicy { params: PolicyParams::new(th, layout).unwrap() }) as Box<dyn Policy>
        })
        .collect()
}

fn spec(kind: EnvKind, cfg: &MafeConfig, env: &dyn Environment) -> SuccessSpec {
    let s = env.schema();
    SuccessSpec::from_lambda(s.n_rewards(), s.n_fair_measures, 0.5, reward_norms(kind, cfg)).unwrap()
}

proptest! {
    #[test]
    fn rate_is_ratio_of_sums(steps in prop::collection::vec((0.0f64..100.0, 0.5f64..100.0), 1..30)) {
        let schema = ComponentSchema::new(&[], &[("r", 1.0)], &[("m", false)], 2);
        let mut acc = ComponentAccumulator::new(&schema);
        for (t, (n, d)) in steps.iter().enumerate() {
            let mut c = schema.empty_step(t);
            c.reward = vec![*n, *d];
            acc.accumulate(&c).unwrap();
        }
        let num: f64 = steps.iter().map(|s| s.0).sum();
        let den: f64 = steps.iter().map(|s| s.1).sum();
        prop_assert_eq!(total_rewards(&acc, &schema).unwrap().values[0], num / den);
    }

    #[test]
    fn two_group_std_is_half_the_gap(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let sums = [a, 1.0, b, 1.0];
        let two = two_group_violation(&sums, 0).unwrap().value;
        let d = d_group_violation(&sums, 0, 2).unwrap().value;
        prop_assert!(two <= 0.0);
        prop_assert!((d - two / 2.0).abs() <= 1e-15);
    }

    #[test]
    fn group_order_does_not_matter(rates in prop::collection::vec(0.0f64..1.0, 2..9), rot in 0usize..8) {
        let sums: Vec<f64> = rates.iter().flat_map(|r| [*r, 1.0]).collect();
        let mut rotated = rates.clone();
        let k = rot % rates.len();
        rotated.rotate_left(k);
        let rsums: Vec<f64> = rotated.iter().flat_map(|r| [*r, 1.0]).collect();
        let d = rates.len();
        let a = d_group_violation(&sums, 0, d).unwrap().value;
        let b = d_group_violation(&rsums, 0, d).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-15);
        prop_assert!(a <= 0.0);
    }

    #[test]
    fn transition_identity(t in 0.0f64..=1.0, m in 0.0f64..=1.0) {
        let tr = Transition::new(t, m);
        prop_assert_eq!(tr.death + tr.cured, t);
        prop_assert!(tr.death >= 0.0 && tr.cured >= 0.0);
    }

    #[test]
    fn exp_family_stays_in_unit_interval(
        c in -5.0f64..5.0, d in -3.0f64..3.0, e in -10.0f64..10.0,
        it in 0.0f64..200.0, wb in 0.0f64..200.0, h in 0.0f64..6.0, signed in any::<bool>(),
    ) {
        let fam = ExpFamily { c, d, e, f: e, g: 1.0, h: -1.0 };
        let rule = if signed { NegativeBase::SignedMagnitude } else { NegativeBase::Reflected };
        let p = fam.probability(it, wb, h, rule);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn installments_retire_the_balance(b in 1.0f64..1e6, r in 0.0f64..0.05, m in 1usize..400) {
        let mut bal = b;
        for t in 0..m {
            bal = bal * (1.0 + r) - installment_request(bal, r, t, m);
        }
        prop_assert!(bal.abs() < 1e-6, "residual {}", bal);
    }

    #[test]
    fn affine_outputs_follow_row_permutations(
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..12),
        theta in prop::collection::vec(-2.0f64..2.0, 40),
        kind_ix in 0usize..3,
        seed in any::<u64>(),
    ) {
        let kind = match kind_ix {
            0 => ActionKind::IndividualScores,
            1 => ActionKind::GroupVector { dims: 2 },
            _ => ActionKind::BudgetTree { blocks: vec![3, 2] },
        };
        let layout = PolicyLayout { n_inputs: 3, kind: kind.clone() };
        let params = PolicyParams::new(theta[..layout.param_count()].to_vec(), layout).unwrap();
        let mut obs = ObservationMatrix::new(3);
        for (i, r) in rows.iter().enumerate() {
            obs.push_row(100 + i, r);
        }
        let mut perm: Vec<usize> = (0..rows.len()).collect();
        perm.sort_by_key(|&i| mafe_core::rng::mix(&[seed, i as u64]));
        let out = apply(&params, &obs).unwrap();
        let pout = apply(&params, &obs.permuted(&perm)).unwrap();
        match kind {
            ActionKind::IndividualScores => {
                for (i, &p) in perm.iter().enumerate() {
                    prop_assert_eq!(pout[i], out[p]);
                }
            }
            ActionKind::BudgetTree { .. } => {
                prop_assert_eq!(&pout, &out);
                prop_assert!((out[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!((out[3..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            ActionKind::GroupVector { .. } => prop_assert_eq!(&pout, &out),
        }
        prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn elite_update_respects_the_floor(
        samples in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..40),
        p in 0.01f64..1.0,
    ) {
        let succ: Vec<f64> = samples.iter().map(|s| -s[0].abs()).collect();
        let k = elite_size(p, samples.len());
        prop_assert!(k >= 1 && k <= samples.len());
        let d = elite_update(&samples, &succ, p, 1e-4).unwrap();
        prop_assert!(d.sigma2.iter().all(|s| *s >= 1e-4));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn episodes_are_deterministic(kind in kind_strategy(), seed in any::<u64>(),
                                  theta in prop::collection::vec(-1.5f64..1.5, 16)) {
        let cfg = small(kind);
        let run = || {
            let mut env = make_env(kind, &cfg).unwrap();
            let sp = spec(kind, &cfg, env.as_ref());
            let mut ps = affine_policies(env.as_ref(), &theta);
            run_episode(env.as_mut(), &mut ps, seed, &sp).unwrap()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn gym_matches_native(kind in kind_strategy(), seed in any::<u64>(),
                          theta in prop::collection::vec(-1.5f64..1.5, 16)) {
        let cfg = small(kind);
        let mut native = make_env(kind, &cfg).unwrap();
        let sp = spec(kind, &cfg, native.as_ref());
        let mut ps = affine_policies(native.as_ref(), &theta);
        let want = run_episode(native.as_mut(), &mut ps, seed, &sp).unwrap();

        let mut gym = GymEnv::new(make_env(kind, &cfg).unwrap(), reward_norms(kind, &cfg));
        let mut ps = affine_policies(gym.inner(), &theta);
        for (i, p) in ps.iter_mut().enumerate() {
            p.reset(policy_seed(seed, i));
        }
        let mut obs = gym.reset(seed);
        loop {
            let acting = gym.acting_now();
            let outputs = ps.iter_mut().zip(&obs).zip(&acting).map(|((p, o), &a)| a.then(|| p.act(o))).collect();
            let st = gym.step(outputs).unwrap();
            obs = st.observations;
            if st.done {
                break;
            }
        }
        prop_assert_eq!(gym.result(&sp).unwrap(), want);
    }

    #[test]
    fn components_have_schema_lengths(kind in kind_strategy(), seed in any::<u64>(),
                                      theta in prop::collection::vec(-1.5f64..1.5, 16)) {
        let cfg = small(kind);
        let mut env = make_env(kind, &cfg).unwrap();
        let sp = spec(kind, &cfg, env.as_ref());
        let mut ps = affine_policies(env.as_ref(), &theta);
        let (r, trace) = mafe_core::framework::run_episode_traced(env.as_mut(), &mut ps, seed, &sp).unwrap();
        let schema = env.schema();
        for c in &trace.components {
            prop_assert_eq!(c.reward.len(), schema.reward_len());
            prop_assert_eq!(c.fairness.len(), schema.fairness_len());
            prop_assert!(c.reward.iter().chain(&c.fairness).all(|v| v.is_finite()));
        }
        prop_assert!(r.fairness.iter().all(|f| *f <= 0.0));
    }
}
