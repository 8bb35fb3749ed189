//! Cross-entropy search over the concatenated parameters of all agents.
//!
//! Each epoch samples `E` parameter vectors from a diagonal Gaussian, runs one
//! episode per sample, keeps the top `ceil(p E)` by success and refits the
//! Gaussian to them. Samples are evaluated in parallel; each sample's noise
//! and episode seed derive from `(master seed, epoch, index)`, so results do
//! not depend on scheduling.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MafeError, Result};
use crate::framework::{run_episode_traced, Environment, SuccessSpec};
use crate::policy::{AffinePolicy, Policy, PolicyLayout, PolicyParams};
use crate::rng;

const TAG_NOISE: u64 = 0xce40;
const TAG_EPISODE: u64 = 0xce41;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub elite_fraction: f64,
    pub sigma2_floor: f64,
    pub init_mu: f64,
    pub init_sigma: f64,
    /// Episodes averaged per sample.
    pub seeds_per_sample: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            episodes_per_epoch: 100,
            elite_fraction: 0.2,
            sigma2_floor: 1e-4,
            init_mu: 0.0,
            init_sigma: 1.0,
            seeds_per_sample: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.elite_fraction;
        if !(p > 0.0 && p <= 1.0) {
            return Err(MafeError::Config(format!("elite fraction {p} not in (0, 1]")));
        }
        if self.episodes_per_epoch == 0 || (self.episodes_per_epoch as f64) * p < 1.0 - 1e-9 {
            return Err(MafeError::Config(format!(
                "{} episodes per epoch leave no elite at p = {p}",
                self.episodes_per_epoch
            )));
        }
        if !(self.sigma2_floor > 0.0) || !(self.init_sigma > 0.0) || self.seeds_per_sample == 0 {
            return Err(MafeError::Config(
                "sigma floor, initial sigma and seeds per sample must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `ceil(p E)`, at least 1.
pub fn elite_size(p: f64, e: usize) -> usize {
    ((p * e as f64 - 1e-9).ceil() as usize).clamp(1, e.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchDist {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl SearchDist {
    pub fn new(dim: usize, mu: f64, sigma: f64) -> Self {
        SearchDist { mu: vec![mu; dim], sigma2: vec![sigma * sigma; dim] }
    }

    /// Sample `index` of `epoch`; frozen coordinates stay at the mean.
    pub fn sample(&self, master: u64, epoch: usize, index: usize, mask: Option<&[bool]>) -> Vec<f64> {
        let mut r = rng::stream(master, TAG_NOISE, rng::mix(&[epoch as u64, index as u64]));
        self.mu
            .iter()
            .zip(&self.sigma2)
            .enumerate()
            .map(|(j, (m, s2))| {
                let z: f64 = StandardNormal.sample(&mut r);
                if mask.is_some_and(|m| !m[j]) {
                    *m
                } else {
                    m + s2.sqrt() * z
                }
            })
            .collect()
    }
}

/// Indices of the elite, best first; ties keep the lower index.
pub fn elite_indices(successes: &[f64], p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..successes.len()).collect();
    order.sort_by(|&a, &b| successes[b].total_cmp(&successes[a]).then(a.cmp(&b)));
    order.truncate(elite_size(p, successes.len()));
    order
}

/// Mean and population variance of the elite, variance floored.
pub fn elite_update(samples: &[Vec<f64>], successes: &[f64], p: f64, floor: f64) -> Result<SearchDist> {
    if samples.is_empty() || samples.len() != successes.len() {
        return Err(MafeError::Config(format!(
            "{} samples with {} successes",
            samples.len(),
            successes.len()
        )));
    }
    let elite = elite_indices(successes, p);
    let dim = samples[0].len();
    let k = elite.len() as f64;
    let mut mu = vec![0.0; dim];
    for &i in &elite {
        for (m, x) in mu.iter_mut().zip(&samples[i]) {
            *m += x;
        }
    }
    mu.iter_mut().for_each(|m| *m /= k);
    let mut sigma2 = vec![0.0; dim];
    for &i in &elite {
        for ((s, x), m) in sigma2.iter_mut().zip(&samples[i]).zip(&mu) {
            *s += (x - m) * (x - m);
        }
    }
    sigma2.iter_mut().for_each(|s| *s = (*s / k).max(floor));
    Ok(SearchDist { mu, sigma2 })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evaluation {
    pub success: f64,
    pub rewards: Vec<f64>,
    pub fairness: Vec<f64>,
    /// Mean action per agent.
    pub action_means: Vec<Vec<f64>>,
}

pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, theta: &[f64], seed: u64) -> Result<Evaluation>;
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_success: f64,
    pub max_success: f64,
    pub elite_success: f64,
    pub mean_rewards: Vec<f64>,
    pub mean_fairness: Vec<f64>,
    pub mean_actions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Epochs completed.
    pub epoch: usize,
    pub seed: u64,
    pub dist: SearchDist,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| MafeError::Config(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| MafeError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub dist: SearchDist,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn history_json_lines(&self) -> String {
        self.history
            .iter()
            .map(|r| serde_json::to_string(r).expect("history serializes") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// `true` marks a trainable coordinate.
    pub mask: Option<Vec<bool>>,
    pub init: Option<SearchDist>,
    /// Checkpoint written after every epoch and resumed from if present.
    pub checkpoint: Option<PathBuf>,
}

fn mean_of(rows: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0.0;
    for r in rows {
        if sum.len() < r.len() {
            sum.resize(r.len(), 0.0);
        }
        for (s, v) in sum.iter_mut().zip(&r) {
            *s += v;
        }
        n += 1.0;
    }
    sum.iter().map(|s| s / n).collect()
}

pub fn train(obj: &dyn Objective, cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dim = obj.dim();
    if let Some(m) = &opts.mask {
        if m.len() != dim {
            return Err(MafeError::Config(format!("mask of {} for {dim} parameters", m.len())));
        }
    }
    let mut dist = opts.init.clone().unwrap_or_else(|| SearchDist::new(dim, cfg.init_mu, cfg.init_sigma));
    if dist.mu.len() != dim || dist.sigma2.len() != dim {
        return Err(MafeError::Config("initial distribution has the wrong dimension".into()));
    }
    let mut history = Vec::new();
    let mut start = 0;
    if let Some(path) = &opts.checkpoint {
        if path.exists() {
            let ck = Checkpoint::load(path)?;
            if ck.seed != cfg.seed || ck.dist.mu.len() != dim {
                return Err(MafeError::Config(format!(
                    "checkpoint {} belongs to another run",
                    path.display()
                )));
            }
            start = ck.epoch;
            dist = ck.dist;
            history = ck.history;
        }
    }
    let mask = opts.mask.as_deref();
    for epoch in start..cfg.epochs {
        let e = cfg.episodes_per_epoch;
        let samples: Vec<Vec<f64>> = (0..e).map(|i| dist.sample(cfg.seed, epoch, i, mask)).collect();
        let evals: Vec<Evaluation> = samples
            .par_iter()
            .enumerate()
            .map(|(i, theta)| {
                let per: Result<Vec<Evaluation>> = (0..cfg.seeds_per_sample)
                    .map(|r| {
                        let seed = rng::mix(&[cfg.seed, TAG_EPISODE, epoch as u64, i as u64, r as u64]);
                        obj.evaluate(theta, seed)
                    })
                    .collect();
                per.map(|v| average(&v))
            })
            .collect::<Result<_>>()?;
        let successes: Vec<f64> = evals.iter().map(|v| v.success).collect();
        let elite = elite_indices(&successes, cfg.elite_fraction);
        history.push(EpochRecord {
            epoch,
            mean_success: successes.iter().sum::<f64>() / e as f64,
            max_success: successes.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            elite_success: elite.iter().map(|&i| successes[i]).sum::<f64>() / elite.len() as f64,
            mean_rewards: mean_of(evals.iter().map(|v| v.rewards.clone())),
            mean_fairness: mean_of(evals.iter().map(|v| v.fairness.clone())),
            mean_actions: (0..evals[0].action_means.len())
                .map(|a| mean_of(evals.iter().map(|v| v.action_means[a].clone())))
                .collect(),
        });
        let mut next = elite_update(&samples, &successes, cfg.elite_fraction, cfg.sigma2_floor)?;
        if let Some(m) = mask {
            for j in 0..dim {
                if !m[j] {
                    next.mu[j] = dist.mu[j];
                    next.sigma2[j] = dist.sigma2[j];
                }
            }
        }
        dist = next;
        if let Some(path) = &opts.checkpoint {
            Checkpoint { epoch: epoch + 1, seed: cfg.seed, dist: dist.clone(), history: history.clone() }
                .save(path)?;
        }
    }
    Ok(TrainOutcome { dist, history })
}

fn average(v: &[Evaluation]) -> Evaluation {
    if v.len() == 1 {
        return v[0].clone();
    }
    Evaluation {
        success: v.iter().map(|e| e.success).sum::<f64>() / v.len() as f64,
        rewards: mean_of(v.iter().map(|e| e.rewards.clone())),
        fairness: mean_of(v.iter().map(|e| e.fairness.clone())),
        action_means: (0..v[0].action_means.len())
            .map(|a| mean_of(v.iter().map(|e| e.action_means[a].clone())))
            .collect(),
    }
}

pub type EnvFactory = Arc<dyn Fn() -> Result<Box<dyn Environment>> + Send + Sync>;
pub type PolicyFactory = Arc<dyn Fn() -> Box<dyn Policy> + Send + Sync>;

/// How one agent is played during training.
#[derive(Clone)]
pub enum Slot {
    Learned(PolicyLayout),
    Fixed(PolicyFactory),
}

/// Success of a full episode with the learned agents' parameters taken from
/// consecutive slices of `theta`.
pub struct EnvObjective {
    factory: EnvFactory,
    slots: Vec<Slot>,
    spec: SuccessSpec,
    dim: usize,
}

impl EnvObjective {
    pub fn new(factory: EnvFactory, slots: Vec<Slot>, spec: SuccessSpec) -> Result<Self> {
        let env = factory()?;
        let specs = env.agent_specs();
        if specs.len() != slots.len() {
            return Err(MafeError::Schema(format!("{} slots for {} agents", slots.len(), specs.len())));
        }
        for (s, slot) in specs.iter().zip(&slots) {
            if let Slot::Learned(l) = slot {
                if *l != PolicyLayout::for_agent(s) {
                    return Err(MafeError::Layout(format!("layout mismatch for agent {}", s.name)));
                }
            }
        }
        spec.validate(env.schema().n_rewards(), env.schema().n_fair_measures)?;
        let dim = slots
            .iter()
            .map(|s| match s {
                Slot::Learned(l) => l.param_count(),
                Slot::Fixed(_) => 0,
            })
            .sum();
        Ok(EnvObjective { factory, slots, spec, dim })
    }

    /// Every agent learned.
    pub fn all_learned(factory: EnvFactory, spec: SuccessSpec) -> Result<Self> {
        let env = factory()?;
        let slots = env.agent_specs().iter().map(|s| Slot::Learned(PolicyLayout::for_agent(s))).collect();
        Self::new(factory, slots, spec)
    }

    /// Parameter ranges of the learned agents, in slot order.
    pub fn slices(&self) -> Vec<Option<std::ops::Range<usize>>> {
        let mut at = 0;
        self.slots
            .iter()
            .map(|s| match s {
                Slot::Learned(l) => {
                    let r = at..at + l.param_count();
                    at = r.end;
                    Some(r)
                }
                Slot::Fixed(_) => None,
            })
            .collect()
    }

    pub fn policies(&self, theta: &[f64]) -> Result<Vec<Box<dyn Policy>>> {
        if theta.len() != self.dim {
            return Err(MafeError::Layout(format!("{} parameters, expected {}", theta.len(), self.dim)));
        }
        self.slots
            .iter()
            .zip(self.slices())
            .map(|(slot, range)| -> Result<Box<dyn Policy>> {
                Ok(match (slot, range) {
                    (Slot::Learned(l), Some(r)) => Box::new(AffinePolicy {
                        params: PolicyParams::new(theta[r].to_vec(), l.clone())?,
                    }),
                    (Slot::Fixed(f), _) => f(),
                    _ => unreachable!(),
                })
            })
            .collect()
    }

    pub fn spec(&self) -> &SuccessSpec {
        &self.spec
    }
}

impl Objective for EnvObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, theta: &[f64], seed: u64) -> Result<Evaluation> {
        let mut env = (self.factory)()?;
        let mut policies = self.policies(theta)?;
        let (res, trace) = run_episode_traced(env.as_mut(), &mut policies, seed, &self.spec)?;
        Ok(Evaluation {
            success: res.success,
            rewards: res.rewards,
            fairness: res.fairness,
            action_means: trace.action_means(),
        })
    }
}

/// Result of the two-tier grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub thresholds: Vec<f64>,
    pub debt: Vec<f64>,
    pub success: f64,
}

/// Tier 1 scans shared (threshold, debt) pairs on `{i / r : i < r}`; tier 2
/// tries per-group offsets in `{-step, 0, step}` around the tier-1 optimum.
/// Ties keep the first point in iteration order.
pub fn grid_search<F>(resolution: usize, step: f64, groups: usize, eval: F) -> Result<GridResult>
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Sync,
{
    if resolution == 0 {
        return Err(MafeError::Config("grid resolution must be at least 1".into()));
    }
    let grid: Vec<f64> = (0..resolution).map(|i| i as f64 / resolution as f64).collect();
    let tier1: Vec<(f64, f64)> =
        grid.iter().flat_map(|&a| grid.iter().map(move |&d| (a, d))).collect();
    let scores: Vec<f64> = tier1
        .par_iter()
        .map(|&(a, d)| eval(&vec![a; groups], &vec![d; groups]))
        .collect::<Result<_>>()?;
    let best = argmax(&scores);
    let (a0, d0) = tier1[best];
    let mut result = GridResult { thresholds: vec![a0; groups], debt: vec![d0; groups], success: scores[best] };
    if step <= 0.0 {
        return Ok(result);
    }
    // Offsets for the 2 * groups coordinates, odometer order.
    let n = 2 * groups;
    let total = 3usize.pow(n as u32);
    let points: Vec<(Vec<f64>, Vec<f64>)> = (0..total)
        .map(|mut code| {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push((code % 3) as f64 - 1.0);
                code /= 3;
            }
            let th = (0..groups).map(|g| (a0 + step * v[g]).clamp(0.0, 1.0)).collect();
            let db = (0..groups).map(|g| (d0 + step * v[groups + g]).clamp(0.0, 1.0)).collect();
            (th, db)
        })
        .collect();
    let scores: Vec<f64> =
        points.par_iter().map(|(th, db)| eval(th, db)).collect::<Result<_>>()?;
    let best2 = argmax(&scores);
    if scores[best2] > result.success {
        result = GridResult { thresholds: points[best2].0.clone(), debt: points[best2].1.clone(), success: scores[best2] };
    }
    Ok(result)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic(Vec<f64>);

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn evaluate(&self, theta: &[f64], _seed: u64) -> Result<Evaluation> {
            let s = -theta.iter().zip(&self.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            Ok(Evaluation { success: s, rewards: vec![s], ..Default::default() })
        }
    }

    #[test]
    fn elite_sizes() {
        assert_eq!(elite_size(0.2, 5), 1);
        assert_eq!(elite_size(0.2, 100), 20);
        assert_eq!(elite_size(2.0 / 3.0, 3), 2);
        assert_eq!(elite_size(1.0, 7), 7);
        assert_eq!(elite_size(0.01, 5), 1);
    }

    #[test]
    fn elite_update_example() {
        let s = vec![vec![0.0], vec![2.0], vec![4.0]];
        let d = elite_update(&s, &[3.0, 1.0, 2.0], 2.0 / 3.0, 1e-4).unwrap();
        assert_eq!(d.mu, vec![2.0]);
        assert_eq!(d.sigma2, vec![4.0]);
    }

    #[test]
    fn elite_single_and_ties() {
        let s: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let d = elite_update(&s, &[0.0, 5.0, 1.0, 2.0, 3.0], 0.2, 1e-4).unwrap();
        assert_eq!((d.mu.clone(), d.sigma2.clone()), (vec![1.0], vec![1e-4]));
        assert_eq!(elite_indices(&[1.0; 5], 0.4), vec![0, 1]);
        let all = elite_update(&s, &[0.0; 5], 1.0, 1e-4).unwrap();
        assert_eq!(all.mu, vec![2.0]);
        assert!(elite_update(&[], &[], 0.2, 1e-4).is_err());
    }

    #[test]
    fn quadratic_converges() {
        let obj = Quadratic(vec![0.5, -1.0, 2.0]);
        let cfg = TrainConfig { epochs: 20, episodes_per_epoch: 50, seed: 3, ..Default::default() };
        let out = train(&obj, &cfg, &TrainOptions::default()).unwrap();
        for (m, t) in out.dist.mu.iter().zip(&obj.0) {
            assert!((m - t).abs() < 0.05, "{m} vs {t}");
        }
        assert_eq!(out.history.len(), 20);
        assert!(out.dist.sigma2.iter().all(|s| *s >= 1e-4));
    }

    #[test]
    fn mask_freezes_coordinates() {
        let obj = Quadratic(vec![1.0, 1.0]);
        let cfg = TrainConfig { epochs: 5, episodes_per_epoch: 20, ..Default::default() };
        let opts = TrainOptions { mask: Some(vec![true, false]), ..Default::default() };
        let out = train(&obj, &cfg, &opts).unwrap();
        assert_eq!(out.dist.mu[1], 0.0);
        assert_eq!(out.dist.sigma2[1], 1.0);
        assert_ne!(out.dist.mu[0], 0.0);
    }

    #[test]
    fn checkpoint_resume_matches_straight_run() {
        let obj = Quadratic(vec![0.3]);
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("ck.json");
        let cfg = TrainConfig { epochs: 6, episodes_per_epoch: 10, seed: 11, ..Default::default() };
        let straight = train(&obj, &cfg, &TrainOptions::default()).unwrap();
        let opts = TrainOptions { checkpoint: Some(ck.clone()), ..Default::default() };
        train(&obj, &TrainConfig { epochs: 3, ..cfg.clone() }, &opts).unwrap();
        assert_eq!(Checkpoint::load(&ck).unwrap().epoch, 3);
        let resumed = train(&obj, &cfg, &opts).unwrap();
        assert_eq!(resumed, straight);
        let other = TrainConfig { seed: 12, ..cfg };
        assert!(train(&obj, &other, &opts).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { elite_fraction: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { episodes_per_epoch: 4, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { episodes_per_epoch: 5, ..Default::default() }.validate().is_ok());
    }

    #[test]
    fn grid_examples() {
        let r = grid_search(1, 0.0, 2, |_, _| Ok(1.0)).unwrap();
        assert_eq!((r.thresholds, r.debt), (vec![0.0; 2], vec![0.0; 2]));
        let r = grid_search(5, 0.0, 2, |_, _| Ok(0.0)).unwrap();
        assert_eq!(r.thresholds, vec![0.0; 2]);
        let r = grid_search(10, 0.0, 2, |a, _| Ok(-(a[0] - 0.4).powi(2))).unwrap();
        assert!((r.thresholds[0] - 0.4).abs() <= 0.1 + 1e-12);
        let r = grid_search(10, 0.05, 2, |a, d| Ok(-(a[1] - 0.45).powi(2) - (d[0] - 0.1).powi(2)))
            .unwrap();
        assert!((r.thresholds[1] - 0.45).abs() < 1e-9);
        assert!((r.debt[0] - 0.1).abs() < 1e-9);
    }
}
