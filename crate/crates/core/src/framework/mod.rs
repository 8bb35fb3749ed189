//! The fair Dec-POMDP contract: agents, component schemas, accumulation,
//! aggregation into rewards and fairness violations, and the episode runner.

mod components;
mod env;
mod runner;
mod success;

pub use components::{
    d_group_violation, ratio, total_rewards, two_group_violation, Aggregate, ComponentAccumulator,
    ComponentSchema, Ratio, StepComponents, Violation,
};
pub use env::{
    build_action, check_action, check_step_actions, Action, ActionKind, AgentSpec, Environment,
    ObservationMatrix, StepOutcome,
};
pub use runner::{policy_seed, run_episode, run_episode_traced, EpisodeTrace};
pub use success::{episode_success, EpisodeResult, SuccessSpec, Termination};
