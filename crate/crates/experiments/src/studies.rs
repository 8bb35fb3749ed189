//! Experiment drivers. Every driver is a pure function of its config and
//! seeds; seeds fan out over the rayon pool.

use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mafe_core::config::MafeConfig;
use mafe_core::envs::{make_env, reward_norms, EnvKind};
use mafe_core::framework::{run_episode_traced, EpisodeResult, EpisodeTrace, SuccessSpec};
use mafe_core::policy::PolicyLayout;
use mafe_core::rng::mix;
use mafe_core::trainer::{
    self, grid_search, EnvFactory, EnvObjective, EpochRecord, GridResult, Objective, PolicyFactory,
    Slot, TrainConfig, TrainOptions, TrainOutcome,
};
use mafe_core::{MafeError, Result};

use crate::catalog::{self, Intervention};

/// Seed of evaluation episode `i` under master seed `seed`.
pub fn eval_seed(seed: u64, i: usize) -> u64 {
    mix(&[seed, 0xe7a1, i as u64])
}

pub fn env_factory(kind: EnvKind, cfg: &MafeConfig) -> EnvFactory {
    let cfg = cfg.clone();
    Arc::new(move || make_env(kind, &cfg))
}

/// `(K, M)` of an environment under `cfg`.
pub fn dims(kind: EnvKind, cfg: &MafeConfig) -> Result<(usize, usize)> {
    let env = make_env(kind, cfg)?;
    let s = env.schema();
    Ok((s.n_rewards(), s.n_fair_measures))
}

pub fn lambda_spec(kind: EnvKind, cfg: &MafeConfig, lambda: f64) -> Result<SuccessSpec> {
    let (k, m) = dims(kind, cfg)?;
    SuccessSpec::from_lambda(k, m, lambda, reward_norms(kind, cfg))
}

/// One episode with the given policies.
pub fn run_policies(
    kind: EnvKind,
    cfg: &MafeConfig,
    policies: &[PolicyFactory],
    seed: u64,
    spec: &SuccessSpec,
) -> Result<(EpisodeResult, EpisodeTrace)> {
    let mut env = make_env(kind, cfg)?;
    let mut ps = catalog::instantiate(policies);
    run_episode_traced(env.as_mut(), &mut ps, seed, spec)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Arm {
    pub result: EpisodeResult,
    /// Indicator snapshots, index 0 being the state after reset.
    pub indicators: Vec<Vec<(String, f64)>>,
}

impl Arm {
    fn new((result, trace): (EpisodeResult, EpisodeTrace)) -> Self {
        Arm { result, indicators: trace.indicators }
    }

    /// Value of `name` in the last snapshot.
    pub fn terminal(&self, name: &str) -> Option<f64> {
        self.indicators.last()?.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedRun {
    pub seed: u64,
    pub baseline: Arm,
    pub intervened: Arm,
}

impl PairedRun {
    /// Whether the target moved in the expected direction (ties count as held).
    pub fn direction_holds(&self, iv: &Intervention) -> bool {
        let (Some(b), Some(i)) = (self.baseline.terminal(iv.target), self.intervened.terminal(iv.target))
        else {
            return false;
        };
        if iv.raises {
            i >= b
        } else {
            i <= b
        }
    }
}

/// Baseline and intervened arms driven by the same seed.
pub fn intervene(iv: &Intervention, cfg: &MafeConfig, seeds: &[u64]) -> Result<Vec<PairedRun>> {
    let spec = lambda_spec(iv.env, cfg, 0.5)?;
    let base_policies = catalog::reference_policies(iv.env, cfg);
    let (iv_cfg, iv_policies) = catalog::intervened_arm(iv, cfg);
    seeds
        .par_iter()
        .map(|&seed| {
            Ok(PairedRun {
                seed,
                baseline: Arm::new(run_policies(iv.env, cfg, &base_policies, seed, &spec)?),
                intervened: Arm::new(run_policies(iv.env, &iv_cfg, &iv_policies, seed, &spec)?),
            })
        })
        .collect()
}

/// Reward-term inclusion sets compared by the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    Direct,
    DirectFair,
    DirectFairRate,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Direct, Ablation::DirectFair, Ablation::DirectFairRate];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Direct => "direct",
            Ablation::DirectFair => "direct+fair",
            Ablation::DirectFairRate => "direct+fair+rate",
        }
    }

    pub fn spec(self, kind: EnvKind, cfg: &MafeConfig) -> Result<SuccessSpec> {
        let env = make_env(kind, cfg)?;
        let s = env.schema();
        let rate = self == Ablation::DirectFairRate;
        let fair = self != Ablation::Direct;
        let rewards: Vec<bool> = (0..s.n_rewards()).map(|k| k < s.n_direct || rate).collect();
        SuccessSpec::uniform_over(&rewards, &vec![fair; s.n_fair_measures], reward_norms(kind, cfg))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedRun {
    pub label: String,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    pub mu: Vec<f64>,
}

fn with_seed(train: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..train.clone() }
}

/// Trains every agent jointly.
pub fn train(
    kind: EnvKind,
    cfg: &MafeConfig,
    train: &TrainConfig,
    spec: SuccessSpec,
    checkpoint: Option<PathBuf>,
) -> Result<TrainOutcome> {
    let obj = EnvObjective::all_learned(env_factory(kind, cfg), spec)?;
    trainer::train(&obj, train, &TrainOptions { checkpoint, ..Default::default() })
}

pub fn ablate(
    kind: EnvKind,
    cfg: &MafeConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<TrainedRun>> {
    let jobs: Vec<(Ablation, u64)> =
        Ablation::ALL.iter().flat_map(|&a| seeds.iter().map(move |&s| (a, s))).collect();
    jobs.par_iter()
        .map(|&(a, seed)| {
            let out = train(kind, cfg, &with_seed(train_cfg, seed), a.spec(kind, cfg)?, None)?;
            Ok(TrainedRun { label: a.label().into(), seed, history: out.history, mu: out.dist.mu })
        })
        .collect()
}

/// Mean of the per-episode sums of normalized rewards and of fairness values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub lambda: f64,
    pub seed: u64,
    pub reward: f64,
    pub fairness: f64,
    pub success: f64,
}

/// Mean evaluation of `theta` over `episodes` episodes.
pub fn evaluate_params(obj: &dyn Objective, theta: &[f64], seed: u64, episodes: usize) -> Result<Vec<trainer::Evaluation>> {
    (0..episodes).into_par_iter().map(|i| obj.evaluate(theta, eval_seed(seed, i))).collect()
}

pub fn frontier(
    kind: EnvKind,
    cfg: &MafeConfig,
    train_cfg: &TrainConfig,
    lambdas: &[f64],
    seeds: &[u64],
    eval_episodes: usize,
) -> Result<Vec<FrontierPoint>> {
    let norms = reward_norms(kind, cfg);
    let jobs: Vec<(f64, u64)> = lambdas.iter().flat_map(|&l| seeds.iter().map(move |&s| (l, s))).collect();
    jobs.par_iter()
        .map(|&(lambda, seed)| {
            let spec = lambda_spec(kind, cfg, lambda)?;
            let obj = EnvObjective::all_learned(env_factory(kind, cfg), spec)?;
            let out = trainer::train(&obj, &with_seed(train_cfg, seed), &TrainOptions::default())?;
            let evals = evaluate_params(&obj, &out.dist.mu, seed, eval_episodes)?;
            let n = evals.len().max(1) as f64;
            let reward = evals
                .iter()
                .map(|e| e.rewards.iter().zip(&norms).map(|(r, z)| r / z).sum::<f64>())
                .sum::<f64>()
                / n;
            let fairness = evals.iter().map(|e| e.fairness.iter().sum::<f64>()).sum::<f64>() / n;
            let success = evals.iter().map(|e| e.success).sum::<f64>() / n;
            Ok(FrontierPoint { lambda, seed, reward, fairness, success })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineRow {
    pub name: String,
    pub seed: u64,
    /// Mean success over the evaluation episodes.
    pub success: f64,
    /// Mean action per agent over the evaluation episodes.
    pub action_means: Vec<Vec<f64>>,
}

pub struct BaselineOptions {
    pub train: TrainConfig,
    pub lambda: f64,
    pub eval_episodes: usize,
    pub thresholds: Vec<f64>,
    pub debt: Vec<f64>,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions {
            train: TrainConfig::default(),
            lambda: 0.5,
            eval_episodes: 30,
            thresholds: catalog::FIXED_THRESHOLDS.to_vec(),
            debt: catalog::FIXED_DEBT.to_vec(),
        }
    }
}

fn mean_actions(evals: &[trainer::Evaluation]) -> Vec<Vec<f64>> {
    let Some(first) = evals.first() else { return Vec::new() };
    let mut out: Vec<Vec<f64>> = first.action_means.iter().map(|a| vec![0.0; a.len()]).collect();
    for e in evals {
        for (o, a) in out.iter_mut().zip(&e.action_means) {
            o.iter_mut().zip(a).for_each(|(x, y)| *x += y);
        }
    }
    let n = evals.len() as f64;
    out.iter_mut().flatten().for_each(|x| *x /= n);
    out
}

fn summarize(name: &str, seed: u64, evals: &[trainer::Evaluation]) -> BaselineRow {
    BaselineRow {
        name: name.into(),
        seed,
        success: evals.iter().map(|e| e.success).sum::<f64>() / evals.len().max(1) as f64,
        action_means: mean_actions(evals),
    }
}

/// Fixed policy, one single-agent run per loan agent (the others fixed), and
/// joint training, all scored on the same evaluation episodes.
pub fn baselines(cfg: &MafeConfig, opts: &BaselineOptions, seeds: &[u64]) -> Result<Vec<BaselineRow>> {
    let kind = EnvKind::Loan;
    let spec = lambda_spec(kind, cfg, opts.lambda)?;
    let factory = env_factory(kind, cfg);
    let fixed = catalog::fixed_loan_policies(&opts.thresholds, &opts.debt);
    let layouts: Vec<PolicyLayout> =
        factory()?.agent_specs().iter().map(PolicyLayout::for_agent).collect();
    let names = ["admissions", "disbursement", "debt"];
    let mut variants: Vec<(String, Vec<Slot>)> =
        vec![("fixed".into(), fixed.iter().cloned().map(Slot::Fixed).collect())];
    for (a, name) in names.iter().enumerate() {
        let slots = (0..layouts.len())
            .map(|b| if a == b { Slot::Learned(layouts[b].clone()) } else { Slot::Fixed(fixed[b].clone()) })
            .collect();
        variants.push((format!("single-{name}"), slots));
    }
    variants.push(("multi".into(), layouts.iter().cloned().map(Slot::Learned).collect()));

    let jobs: Vec<(usize, u64)> =
        (0..variants.len()).flat_map(|v| seeds.iter().map(move |&s| (v, s))).collect();
    jobs.par_iter()
        .map(|&(v, seed)| {
            let (name, slots) = &variants[v];
            let obj = EnvObjective::new(factory.clone(), slots.clone(), spec.clone())?;
            let theta = if obj.dim() == 0 {
                Vec::new()
            } else {
                trainer::train(&obj, &with_seed(&opts.train, seed), &TrainOptions::default())?.dist.mu
            };
            let evals = evaluate_params(&obj, &theta, seed, opts.eval_episodes)?;
            Ok(summarize(name, seed, &evals))
        })
        .collect()
}

/// Grid search for the fixed loan baseline's thresholds and debt factors.
pub fn grid_baseline(
    cfg: &MafeConfig,
    resolution: usize,
    step: f64,
    lambda: f64,
    seed: u64,
    episodes: usize,
) -> Result<GridResult> {
    let kind = EnvKind::Loan;
    let spec = lambda_spec(kind, cfg, lambda)?;
    if cfg.loan.threshold_arity != cfg.loan.debt_arity {
        return Err(MafeError::Config("grid search needs equal threshold and debt arity".into()));
    }
    grid_search(resolution, step, cfg.loan.debt_arity, |th, debt| {
        let policies = catalog::fixed_loan_policies(th, debt);
        let mut total = 0.0;
        for i in 0..episodes {
            total += run_policies(kind, cfg, &policies, eval_seed(seed, i), &spec)?.0.success;
        }
        Ok(total / episodes.max(1) as f64)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MafeConfig {
        let mut cfg = MafeConfig::default();
        cfg.loan.population_size = 60;
        cfg.loan.horizon = 12;
        cfg.healthcare.population_size = 80;
        cfg.healthcare.horizon = 12;
        cfg.education.population_size = 120;
        cfg.education.horizon = 12;
        cfg
    }

    #[test]
    fn null_intervention_arms_are_identical() {
        let cfg = small();
        for kind in [EnvKind::Loan, EnvKind::Healthcare, EnvKind::Education] {
            let iv = catalog::lookup(kind, "null").unwrap();
            for run in intervene(&iv, &cfg, &[1, 2]).unwrap() {
                assert_eq!(run.baseline.result, run.intervened.result);
                assert_eq!(run.baseline.indicators, run.intervened.indicators);
            }
        }
    }

    #[test]
    fn ablation_weights() {
        let cfg = small();
        let direct = Ablation::Direct.spec(EnvKind::Loan, &cfg).unwrap();
        assert!(direct.beta.iter().all(|b| *b == 0.0));
        let all = Ablation::DirectFairRate.spec(EnvKind::Loan, &cfg).unwrap();
        let w = all.alpha[0];
        assert!(all.alpha.iter().chain(&all.beta).all(|x| *x == w));
        let env = make_env(EnvKind::Loan, &cfg).unwrap();
        let nd = env.schema().n_direct;
        assert!(direct.alpha[nd..].iter().all(|a| *a == 0.0));
    }

    #[test]
    fn frontier_endpoint_weights() {
        let cfg = small();
        let one = lambda_spec(EnvKind::Loan, &cfg, 1.0).unwrap();
        assert!(one.beta.iter().all(|b| *b == 0.0));
        let zero = lambda_spec(EnvKind::Loan, &cfg, 0.0).unwrap();
        assert!(zero.alpha.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn fixed_baseline_is_reproducible() {
        let cfg = small();
        let opts = BaselineOptions {
            train: TrainConfig { epochs: 1, episodes_per_epoch: 5, ..Default::default() },
            eval_episodes: 3,
            ..Default::default()
        };
        let a = baselines(&cfg, &opts, &[5]).unwrap();
        let b = baselines(&cfg, &opts, &[5]).unwrap();
        assert_eq!(a.len(), 5);
        let fa = a.iter().find(|r| r.name == "fixed").unwrap();
        let fb = b.iter().find(|r| r.name == "fixed").unwrap();
        assert_eq!(fa.success.to_bits(), fb.success.to_bits());
        assert_eq!(fa.action_means[0], vec![0.0, 0.0]);
    }

    #[test]
    fn grid_resolution_one() {
        let cfg = small();
        let g = grid_baseline(&cfg, 1, 0.0, 0.5, 3, 1).unwrap();
        assert_eq!(g.thresholds, vec![0.0, 0.0]);
        assert_eq!(g.debt, vec![0.0, 0.0]);
    }
}
