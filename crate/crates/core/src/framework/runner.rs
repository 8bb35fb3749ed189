use super::components::{ComponentAccumulator, StepComponents};
use super::env::{build_action, Action, ActionKind, Environment};
use super::success::{EpisodeResult, SuccessSpec, Termination};
use crate::error::{MafeError, Result};
use crate::policy::Policy;

/// Per-step record of an episode, for exports and plots.
#[derive(Debug, Clone, Default)]
pub struct EpisodeTrace {
    pub components: Vec<StepComponents>,
    /// Indicator snapshot after each step (index 0 is the state after reset).
    pub indicators: Vec<Vec<(String, f64)>>,
    action_sums: Vec<Vec<f64>>,
    action_counts: Vec<usize>,
}

impl EpisodeTrace {
    /// Mean action per agent over the steps it acted. Individual scores are
    /// summarised by their mean.
    pub fn action_means(&self) -> Vec<Vec<f64>> {
        self.action_sums
            .iter()
            .zip(&self.action_counts)
            .map(|(s, &c)| s.iter().map(|v| if c == 0 { 0.0 } else { v / c as f64 }).collect())
            .collect()
    }

    fn record_action(&mut self, agent: usize, kind: &ActionKind, action: &Action) {
        let vals = action.values();
        let summary: Vec<f64> = match kind {
            ActionKind::IndividualScores => {
                if vals.is_empty() {
                    return;
                }
                vec![vals.iter().sum::<f64>() / vals.len() as f64]
            }
            _ => vals.to_vec(),
        };
        let sums = &mut self.action_sums[agent];
        if sums.is_empty() {
            sums.resize(summary.len(), 0.0);
        }
        for (s, v) in sums.iter_mut().zip(&summary) {
            *s += v;
        }
        self.action_counts[agent] += 1;
    }
}

/// Seed handed to agent `agent`'s policy at the start of an episode.
pub fn policy_seed(episode_seed: u64, agent: usize) -> u64 {
    crate::rng::mix(&[episode_seed, 0x501c, agent as u64])
}

/// Runs one episode from `reset(seed)` until termination or the horizon.
pub fn run_episode(
    env: &mut dyn Environment,
    policies: &mut [Box<dyn Policy>],
    seed: u64,
    spec: &SuccessSpec,
) -> Result<EpisodeResult> {
    run(env, policies, seed, spec, None)
}

pub fn run_episode_traced(
    env: &mut dyn Environment,
    policies: &mut [Box<dyn Policy>],
    seed: u64,
    spec: &SuccessSpec,
) -> Result<(EpisodeResult, EpisodeTrace)> {
    let n = env.agent_specs().len();
    let mut trace = EpisodeTrace {
        action_sums: vec![Vec::new(); n],
        action_counts: vec![0; n],
        ..Default::default()
    };
    let r = run(env, policies, seed, spec, Some(&mut trace))?;
    Ok((r, trace))
}

fn run(
    env: &mut dyn Environment,
    policies: &mut [Box<dyn Policy>],
    seed: u64,
    spec: &SuccessSpec,
    mut trace: Option<&mut EpisodeTrace>,
) -> Result<EpisodeResult> {
    let specs = env.agent_specs().to_vec();
    if policies.len() != specs.len() {
        return Err(MafeError::Schema(format!(
            "{} policies for {} agents",
            policies.len(),
            specs.len()
        )));
    }
    env.reset(seed);
    for (i, p) in policies.iter_mut().enumerate() {
        p.reset(policy_seed(seed, i));
    }
    let schema = env.schema().clone();
    let mut acc = ComponentAccumulator::new(&schema);
    let mut termination = Termination::Horizon;
    if let Some(tr) = trace.as_deref_mut() {
        tr.indicators.push(env.indicators());
    }
    for t in 0..env.horizon() {
        let mut actions = Vec::with_capacity(specs.len());
        for (spec_n, policy) in specs.iter().zip(policies.iter_mut()) {
            if !spec_n.acts_at(t) {
                actions.push(None);
                continue;
            }
            let obs = env.observe(spec_n.agent_id);
            let out = policy.act(&obs);
            let action = build_action(spec_n, &obs, out)?;
            if let Some(tr) = trace.as_deref_mut() {
                tr.record_action(spec_n.agent_id, &spec_n.action_kind, &action);
            }
            actions.push(Some(action));
        }
        let outcome = env.step(&actions)?;
        acc.accumulate(&outcome.components)?;
        if let Some(tr) = trace.as_deref_mut() {
            tr.components.push(outcome.components);
            tr.indicators.push(env.indicators());
        }
        if let Some(term) = outcome.termination {
            termination = term;
            break;
        }
    }
    EpisodeResult::from_accumulator(&acc, &schema, spec, seed, termination)
}
