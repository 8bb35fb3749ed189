//! Affine, permutation-equivariant policies.
//!
//! Every output unit ("head") is an affine map of a feature vector: individual
//! scores apply one head to each observation row, group and budget actions
//! apply their heads to the mean-pooled observation. Flat parameter order is
//! head by head, `[w_1, ..., w_k, b]`.

use serde::{Deserialize, Serialize};

use crate::error::{MafeError, Result};
use crate::framework::{ActionKind, AgentSpec, ObservationMatrix};

pub trait Policy: Send {
    fn act(&mut self, obs: &ObservationMatrix) -> Vec<f64>;
    /// Called once per episode with a seed derived from the episode seed.
    fn reset(&mut self, _seed: u64) {}
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyLayout {
    pub n_inputs: usize,
    pub kind: ActionKind,
}

impl PolicyLayout {
    pub fn for_agent(spec: &AgentSpec) -> Self {
        PolicyLayout { n_inputs: spec.obs_features.len(), kind: spec.action_kind.clone() }
    }

    pub fn param_count(&self) -> usize {
        self.kind.heads() * (self.n_inputs + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl AffineHead {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub theta: Vec<f64>,
    pub layout: PolicyLayout,
}

impl PolicyParams {
    pub fn new(theta: Vec<f64>, layout: PolicyLayout) -> Result<Self> {
        if theta.len() != layout.param_count() {
            return Err(MafeError::Layout(format!(
                "expected {} parameters, got {}",
                layout.param_count(),
                theta.len()
            )));
        }
        Ok(PolicyParams { theta, layout })
    }

    pub fn zeros(layout: PolicyLayout) -> Self {
        PolicyParams { theta: vec![0.0; layout.param_count()], layout }
    }

    pub fn unflatten(&self) -> Vec<AffineHead> {
        self.theta
            .chunks(self.layout.n_inputs + 1)
            .map(|c| AffineHead { weights: c[..c.len() - 1].to_vec(), bias: c[c.len() - 1] })
            .collect()
    }

    pub fn flatten(heads: &[AffineHead], layout: PolicyLayout) -> Result<Self> {
        if heads.len() != layout.kind.heads()
            || heads.iter().any(|h| h.weights.len() != layout.n_inputs)
        {
            return Err(MafeError::Layout("heads do not match layout".into()));
        }
        let theta = heads
            .iter()
            .flat_map(|h| h.weights.iter().copied().chain(std::iter::once(h.bias)))
            .collect();
        Ok(PolicyParams { theta, layout })
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Column means; the zero vector when there are no rows. Each column is summed
/// in sorted order so the result does not depend on row order at all.
pub fn mean_pool(obs: &ObservationMatrix) -> Vec<f64> {
    let m = obs.n_rows();
    if m == 0 {
        return vec![0.0; obs.n_cols];
    }
    let mut col = Vec::with_capacity(m);
    (0..obs.n_cols)
        .map(|j| {
            col.clear();
            col.extend((0..m).map(|i| obs.data[i * obs.n_cols + j]));
            col.sort_by(f64::total_cmp);
            col.iter().sum::<f64>() / m as f64
        })
        .collect()
}

fn check_cols(params: &PolicyParams, obs: &ObservationMatrix) -> Result<()> {
    if obs.n_cols != params.layout.n_inputs {
        return Err(MafeError::Shape { expected: params.layout.n_inputs, got: obs.n_cols });
    }
    Ok(())
}

fn wrong_kind(want: &str) -> MafeError {
    MafeError::Layout(format!("policy layout is not {want}"))
}

pub fn score_individuals(params: &PolicyParams, obs: &ObservationMatrix) -> Result<Vec<f64>> {
    if params.layout.kind != ActionKind::IndividualScores {
        return Err(wrong_kind("IndividualScores"));
    }
    check_cols(params, obs)?;
    let head = &params.unflatten()[0];
    Ok((0..obs.n_rows()).map(|i| logistic(head.eval(obs.row(i)))).collect())
}

pub fn group_action(params: &PolicyParams, obs: &ObservationMatrix) -> Result<Vec<f64>> {
    if !matches!(params.layout.kind, ActionKind::GroupVector { .. }) {
        return Err(wrong_kind("GroupVector"));
    }
    check_cols(params, obs)?;
    let pooled = mean_pool(obs);
    Ok(params.unflatten().iter().map(|h| logistic(h.eval(&pooled))).collect())
}

pub fn budget_tree_action(params: &PolicyParams, obs: &ObservationMatrix) -> Result<Vec<f64>> {
    let ActionKind::BudgetTree { blocks } = &params.layout.kind else {
        return Err(wrong_kind("BudgetTree"));
    };
    check_cols(params, obs)?;
    let pooled = mean_pool(obs);
    let logits: Vec<f64> = params.unflatten().iter().map(|h| h.eval(&pooled)).collect();
    let mut out = Vec::with_capacity(logits.len());
    let mut start = 0;
    for &b in blocks {
        out.extend(softmax(&logits[start..start + b]));
        start += b;
    }
    Ok(out)
}

pub fn apply(params: &PolicyParams, obs: &ObservationMatrix) -> Result<Vec<f64>> {
    match params.layout.kind {
        ActionKind::IndividualScores => score_individuals(params, obs),
        ActionKind::GroupVector { .. } => group_action(params, obs),
        ActionKind::BudgetTree { .. } => budget_tree_action(params, obs),
    }
}

#[derive(Debug, Clone)]
pub struct AffinePolicy {
    pub params: PolicyParams,
}

impl Policy for AffinePolicy {
    fn act(&mut self, obs: &ObservationMatrix) -> Vec<f64> {
        // A column mismatch yields an empty output, which the runner reports as
        // a contract error naming the agent.
        apply(&self.params, obs).unwrap_or_default()
    }
}

/// The same output at every call.
#[derive(Debug, Clone)]
pub struct ConstantVector(pub Vec<f64>);

impl Policy for ConstantVector {
    fn act(&mut self, _obs: &ObservationMatrix) -> Vec<f64> {
        self.0.clone()
    }
}

/// The same score for every row.
#[derive(Debug, Clone)]
pub struct ConstantScores(pub f64);

impl Policy for ConstantScores {
    fn act(&mut self, obs: &ObservationMatrix) -> Vec<f64> {
        vec![self.0; obs.n_rows()]
    }
}

/// Independent uniform scores, i.e. a random queue order. Each score is a
/// hash of (seed, call, row id), so reordering rows reorders the scores.
#[derive(Debug, Clone)]
pub struct RandomScores {
    seed: u64,
    calls: u64,
}

impl RandomScores {
    pub fn new(seed: u64) -> Self {
        RandomScores { seed, calls: 0 }
    }
}

impl Policy for RandomScores {
    fn act(&mut self, obs: &ObservationMatrix) -> Vec<f64> {
        self.calls += 1;
        obs.row_ids
            .iter()
            .map(|&id| {
                let h = crate::rng::mix(&[self.seed, self.calls, id as u64]);
                (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
            })
            .collect()
    }

    fn reset(&mut self, seed: u64) {
        self.seed = seed;
        self.calls = 0;
    }
}
