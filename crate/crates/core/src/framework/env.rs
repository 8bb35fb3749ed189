use serde::{Deserialize, Serialize};

use super::components::{ComponentSchema, StepComponents};
use super::success::Termination;
use crate::error::{MafeError, Result};

const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionKind {
    /// One score in [0, 1] per observed individual.
    IndividualScores,
    /// A fixed-length vector in [0, 1]^dims.
    GroupVector { dims: usize },
    /// Concatenated simplex blocks.
    BudgetTree { blocks: Vec<usize> },
}

impl ActionKind {
    /// Output width for a given number of observed rows.
    pub fn output_len(&self, rows: usize) -> usize {
        match self {
            ActionKind::IndividualScores => rows,
            ActionKind::GroupVector { dims } => *dims,
            ActionKind::BudgetTree { blocks } => blocks.iter().sum(),
        }
    }

    /// Number of affine heads a policy needs.
    pub fn heads(&self) -> usize {
        match self {
            ActionKind::IndividualScores => 1,
            ActionKind::GroupVector { dims } => *dims,
            ActionKind::BudgetTree { blocks } => blocks.iter().sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent_id: usize,
    pub name: String,
    pub obs_features: Vec<String>,
    pub action_kind: ActionKind,
    pub action_period: usize,
}

impl AgentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| MafeError::Config(format!("agent {} ({}): {d}", self.agent_id, self.name));
        if self.action_period == 0 {
            return Err(bad("action period must be at least 1".into()));
        }
        if self.obs_features.is_empty() {
            return Err(bad("no observation features".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for f in &self.obs_features {
            if !seen.insert(f) {
                return Err(bad(format!("duplicate feature {f}")));
            }
        }
        match &self.action_kind {
            ActionKind::GroupVector { dims } if *dims == 0 => Err(bad("zero-width group vector".into())),
            ActionKind::BudgetTree { blocks } if blocks.is_empty() || blocks.contains(&0) => {
                Err(bad("budget blocks must be non-empty".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn acts_at(&self, t: usize) -> bool {
        t.is_multiple_of(self.action_period)
    }

    fn contract(&self, detail: String) -> MafeError {
        MafeError::Contract { agent: self.agent_id, name: self.name.clone(), detail }
    }
}

/// Rows are individuals, columns are the agent's (standardized) features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationMatrix {
    pub n_cols: usize,
    /// Row-major values.
    pub data: Vec<f64>,
    pub row_ids: Vec<usize>,
}

impl ObservationMatrix {
    pub fn new(n_cols: usize) -> Self {
        ObservationMatrix { n_cols, data: Vec::new(), row_ids: Vec::new() }
    }

    pub fn push_row(&mut self, id: usize, row: &[f64]) {
        debug_assert_eq!(row.len(), self.n_cols);
        self.data.extend_from_slice(row);
        self.row_ids.push(id);
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// Row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> ObservationMatrix {
        let mut out = ObservationMatrix::new(self.n_cols);
        for &p in perm {
            out.push_row(self.row_ids[p], self.row(p));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    /// Scores keyed by individual id.
    Scores { row_ids: Vec<usize>, values: Vec<f64> },
    Vector(Vec<f64>),
}

impl Action {
    /// Scores laid out by individual id (length `n_total`); every id in
    /// `expected` must be scored exactly once.
    pub fn scores_by_id(
        &self,
        spec: &AgentSpec,
        expected: &[usize],
        n_total: usize,
    ) -> Result<Vec<f64>> {
        let Action::Scores { row_ids, values } = self else {
            return Err(spec.contract("expected individual scores, got a vector".into()));
        };
        if row_ids.len() != expected.len() || values.len() != row_ids.len() {
            return Err(spec.contract(format!(
                "expected {} scores, got {} ids and {} values",
                expected.len(),
                row_ids.len(),
                values.len()
            )));
        }
        let mut out = vec![f64::NAN; n_total];
        for (&id, &v) in row_ids.iter().zip(values) {
            if id >= n_total || !out[id].is_nan() {
                return Err(spec.contract(format!("unexpected or repeated row id {id}")));
            }
            out[id] = v;
        }
        if let Some(id) = expected.iter().find(|&&id| id >= n_total || out[id].is_nan()) {
            return Err(spec.contract(format!("no score for individual {id}")));
        }
        Ok(out)
    }

    pub fn vector(&self, spec: &AgentSpec) -> Result<&[f64]> {
        match self {
            Action::Vector(v) => Ok(v),
            Action::Scores { .. } => Err(spec.contract("expected a vector, got scores".into())),
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Action::Scores { values, .. } => values,
            Action::Vector(v) => v,
        }
    }
}

/// Checks range and simplex constraints of an action against the agent spec.
pub fn check_action(spec: &AgentSpec, action: &Action, rows: usize) -> Result<()> {
    let values = match (&spec.action_kind, action) {
        (ActionKind::IndividualScores, Action::Scores { row_ids, values }) => {
            if values.len() != row_ids.len() {
                return Err(spec.contract(format!(
                    "{} scores for {} rows",
                    values.len(),
                    row_ids.len()
                )));
            }
            values
        }
        (ActionKind::IndividualScores, Action::Vector(_)) => {
            return Err(spec.contract("expected individual scores, got a vector".into()))
        }
        (_, Action::Vector(v)) => v,
        (_, Action::Scores { .. }) => {
            return Err(spec.contract("expected a vector, got individual scores".into()))
        }
    };
    let want = spec.action_kind.output_len(rows);
    if values.len() != want {
        return Err(spec.contract(format!("expected action of length {want}, got {}", values.len())));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
        return Err(spec.contract(format!("action value {v} outside [0, 1]")));
    }
    if let ActionKind::BudgetTree { blocks } = &spec.action_kind {
        let mut start = 0;
        for (b, &len) in blocks.iter().enumerate() {
            let s: f64 = values[start..start + len].iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(spec.contract(format!("budget block {b} sums to {s}, not 1")));
            }
            start += len;
        }
    }
    Ok(())
}

/// Wraps a policy output for the given observation and validates it.
pub fn build_action(spec: &AgentSpec, obs: &ObservationMatrix, output: Vec<f64>) -> Result<Action> {
    let action = match spec.action_kind {
        ActionKind::IndividualScores => {
            if output.len() != obs.n_rows() {
                return Err(spec.contract(format!(
                    "expected {} scores (one per observed row), got {}",
                    obs.n_rows(),
                    output.len()
                )));
            }
            Action::Scores { row_ids: obs.row_ids.clone(), values: output }
        }
        _ => Action::Vector(output),
    };
    check_action(spec, &action, obs.n_rows())?;
    Ok(action)
}

/// Checks that exactly the agents due at `t` supplied actions of valid shape.
pub fn check_step_actions(
    specs: &[AgentSpec],
    t: usize,
    actions: &[Option<Action>],
    rows: impl Fn(usize) -> usize,
) -> Result<()> {
    if actions.len() != specs.len() {
        return Err(MafeError::Schema(format!(
            "{} action slots for {} agents",
            actions.len(),
            specs.len()
        )));
    }
    for (spec, a) in specs.iter().zip(actions) {
        match (spec.acts_at(t), a) {
            (true, None) => return Err(spec.contract(format!("must act at step {t}"))),
            (false, Some(_)) => {
                return Err(spec.contract(format!(
                    "acts every {} steps and may not act at step {t}",
                    spec.action_period
                )))
            }
            (true, Some(a)) => check_action(spec, a, rows(spec.agent_id))?,
            (false, None) => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub components: StepComponents,
    pub termination: Option<Termination>,
}

/// A fair multi-agent environment.
///
/// After `reset` (and after every `step`) the environment is positioned at the
/// start of the next step: `observe` returns what each agent sees before acting.
/// Agents act only at multiples of their period; their last action keeps
/// effect in between.
pub trait Environment: Send {
    fn name(&self) -> &str;
    fn agent_specs(&self) -> &[AgentSpec];
    fn schema(&self) -> &ComponentSchema;
    fn horizon(&self) -> usize;
    /// Stored for completeness; aggregation is undiscounted.
    fn discount(&self) -> f64 {
        1.0
    }
    fn reset(&mut self, seed: u64);
    /// Index of the next step to be executed.
    fn time(&self) -> usize;
    fn observe(&self, agent: usize) -> ObservationMatrix;
    fn step(&mut self, actions: &[Option<Action>]) -> Result<StepOutcome>;
    /// Named scalar summaries of the current state (for time-series exports).
    fn indicators(&self) -> Vec<(String, f64)>;
}
