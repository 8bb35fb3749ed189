//! Gym-style stepping interface over any environment.
//!
//! `reset(seed)` returns every agent's observation; `step` takes one optional
//! raw output per agent (`None` for agents that do not act this step) and
//! returns the next observations, the step's reward and fairness components,
//! a done flag and the termination reason.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::MafeConfig;
use crate::envs::{make_env, reward_norms, EnvKind};
use crate::error::{MafeError, Result};
use crate::framework::{
    build_action, ActionKind, ComponentAccumulator, EpisodeResult, Environment, ObservationMatrix,
    SuccessSpec, Termination,
};

/// Observation and action space of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Space {
    pub agent: String,
    /// Observation columns; the row count varies with the population.
    pub obs_cols: usize,
    pub action_kind: ActionKind,
    /// `None` when the action has one value per observation row.
    pub action_len: Option<usize>,
    pub low: f64,
    pub high: f64,
    /// Blocks that must each sum to 1.
    pub simplex_blocks: Vec<usize>,
    pub period: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GymStep {
    pub observations: Vec<ObservationMatrix>,
    /// Direct values, numerators and denominators.
    pub rewards: Vec<f64>,
    /// (numerator, denominator) pairs per measure and group.
    pub fairness: Vec<f64>,
    pub done: bool,
    pub termination: Option<Termination>,
    /// Agents that must act on the next call to `step`.
    pub acting_next: Vec<bool>,
}

pub struct GymEnv {
    env: Box<dyn Environment>,
    norms: Vec<f64>,
    last_obs: Vec<ObservationMatrix>,
    acc: Option<ComponentAccumulator>,
    seed: u64,
    termination: Option<Termination>,
    started: bool,
}

/// Builds an environment by name from an optional TOML file.
pub fn make(env_name: &str, config_path: Option<&Path>) -> Result<GymEnv> {
    let kind: EnvKind = env_name.parse()?;
    let cfg = MafeConfig::load(config_path, &[])?;
    Ok(GymEnv::new(make_env(kind, &cfg)?, reward_norms(kind, &cfg)))
}

impl GymEnv {
    pub fn new(env: Box<dyn Environment>, reward_norms: Vec<f64>) -> Self {
        GymEnv {
            env,
            norms: reward_norms,
            last_obs: Vec::new(),
            acc: None,
            seed: 0,
            termination: None,
            started: false,
        }
    }

    pub fn agents(&self) -> Vec<String> {
        self.env.agent_specs().iter().map(|s| s.name.clone()).collect()
    }

    pub fn spaces(&self) -> Vec<Space> {
        self.env
            .agent_specs()
            .iter()
            .map(|s| Space {
                agent: s.name.clone(),
                obs_cols: s.obs_features.len(),
                action_kind: s.action_kind.clone(),
                action_len: match &s.action_kind {
                    ActionKind::IndividualScores => None,
                    k => Some(k.output_len(0)),
                },
                low: 0.0,
                high: 1.0,
                simplex_blocks: match &s.action_kind {
                    ActionKind::BudgetTree { blocks } => blocks.clone(),
                    _ => Vec::new(),
                },
                period: s.action_period,
            })
            .collect()
    }

    pub fn reward_norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn inner(&self) -> &dyn Environment {
        self.env.as_ref()
    }

    fn acting(&self) -> Vec<bool> {
        let t = self.env.time();
        self.env.agent_specs().iter().map(|s| s.acts_at(t)).collect()
    }

    fn observe_all(&mut self) {
        let n = self.env.agent_specs().len();
        self.last_obs = (0..n).map(|a| self.env.observe(a)).collect();
    }

    pub fn reset(&mut self, seed: u64) -> Vec<ObservationMatrix> {
        self.env.reset(seed);
        self.seed = seed;
        self.acc = Some(ComponentAccumulator::new(self.env.schema()));
        self.termination = None;
        self.started = true;
        self.observe_all();
        self.last_obs.clone()
    }

    /// Agents that must act on the next `step`.
    pub fn acting_now(&self) -> Vec<bool> {
        self.acting()
    }

    pub fn step(&mut self, outputs: Vec<Option<Vec<f64>>>) -> Result<GymStep> {
        if !self.started {
            return Err(MafeError::Schema("step before reset".into()));
        }
        if self.termination.is_some() {
            return Err(MafeError::Schema("step after the episode ended".into()));
        }
        let specs = self.env.agent_specs().to_vec();
        if outputs.len() != specs.len() {
            return Err(MafeError::Shape { expected: specs.len(), got: outputs.len() });
        }
        let mut actions = Vec::with_capacity(specs.len());
        for (spec, out) in specs.iter().zip(outputs) {
            actions.push(match out {
                Some(o) => Some(build_action(spec, &self.last_obs[spec.agent_id], o)?),
                None => None,
            });
        }
        let outcome = self.env.step(&actions)?;
        if let Some(acc) = &mut self.acc {
            acc.accumulate(&outcome.components)?;
        }
        let mut termination = outcome.termination;
        if termination.is_none() && self.env.time() >= self.env.horizon() {
            termination = Some(Termination::Horizon);
        }
        self.termination = termination;
        self.observe_all();
        Ok(GymStep {
            observations: self.last_obs.clone(),
            rewards: outcome.components.reward,
            fairness: outcome.components.fairness,
            done: termination.is_some(),
            termination,
            acting_next: self.acting(),
        })
    }

    /// Episode result so far, scored with `spec`.
    pub fn result(&self, spec: &SuccessSpec) -> Result<EpisodeResult> {
        let acc = self.acc.as_ref().ok_or_else(|| MafeError::Schema("no episode started".into()))?;
        EpisodeResult::from_accumulator(
            acc,
            self.env.schema(),
            spec,
            self.seed,
            self.termination.unwrap_or(Termination::Horizon),
        )
    }
}
