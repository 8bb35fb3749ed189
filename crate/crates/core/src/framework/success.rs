use serde::{Deserialize, Serialize};

use super::components::{
    d_group_violation, normalize_rates, total_rewards, two_group_violation, ComponentAccumulator,
    ComponentSchema,
};
use crate::error::{MafeError, Result};

/// Weights and normalization factors of the episode score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessSpec {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub reward_norms: Vec<f64>,
    pub lambda: Option<f64>,
    /// Reporting-only thresholds on |F_m|.
    pub epsilon: Option<Vec<f64>>,
}

impl SuccessSpec {
    /// `alpha_k = lambda / K`, `beta_m = (1 - lambda) / M`.
    pub fn from_lambda(k: usize, m: usize, lambda: f64, reward_norms: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(MafeError::Config(format!("lambda {lambda} outside [0, 1]")));
        }
        let spec = SuccessSpec {
            alpha: vec![if k == 0 { 0.0 } else { lambda / k as f64 }; k],
            beta: vec![if m == 0 { 0.0 } else { (1.0 - lambda) / m as f64 }; m],
            reward_norms,
            lambda: Some(lambda),
            epsilon: None,
        };
        spec.validate(k, m)?;
        Ok(spec)
    }

    /// Equal weight on every included term; excluded terms get zero weight.
    pub fn uniform_over(
        include_reward: &[bool],
        include_fair: &[bool],
        reward_norms: Vec<f64>,
    ) -> Result<Self> {
        let n = include_reward.iter().chain(include_fair).filter(|b| **b).count();
        let w = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        let spec = SuccessSpec {
            alpha: include_reward.iter().map(|&b| if b { w } else { 0.0 }).collect(),
            beta: include_fair.iter().map(|&b| if b { w } else { 0.0 }).collect(),
            reward_norms,
            lambda: None,
            epsilon: None,
        };
        spec.validate(include_reward.len(), include_fair.len())?;
        Ok(spec)
    }

    pub fn validate(&self, k: usize, m: usize) -> Result<()> {
        if self.alpha.len() != k || self.reward_norms.len() != k || self.beta.len() != m {
            return Err(MafeError::Config(format!(
                "success spec has {} alphas, {} norms, {} betas; environment has K={k}, M={m}",
                self.alpha.len(),
                self.reward_norms.len(),
                self.beta.len()
            )));
        }
        if self.reward_norms.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
            return Err(MafeError::Config("reward norms must be positive".into()));
        }
        if let Some(eps) = &self.epsilon {
            if eps.len() != m {
                return Err(MafeError::Config(format!("epsilon has {} entries, need {m}", eps.len())));
            }
        }
        Ok(())
    }
}

/// `sum_k alpha_k R_k / norm_k + sum_m beta_m F_m`.
pub fn episode_success(rewards: &[f64], violations: &[f64], spec: &SuccessSpec) -> f64 {
    let r: f64 = rewards
        .iter()
        .zip(&spec.alpha)
        .zip(&spec.reward_norms)
        .map(|((r, a), n)| a * (r / n))
        .sum();
    let f: f64 = violations.iter().zip(&spec.beta).map(|(f, b)| b * f).sum();
    r + f
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Horizon,
    FinancialFailure,
    PopulationDepleted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub steps_run: usize,
    pub termination: Termination,
    pub rewards: Vec<f64>,
    pub fairness: Vec<f64>,
    pub success: f64,
    /// Labels of rates or fairness groups whose denominators summed to zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined_rates: Vec<String>,
    /// Per measure, whether |F_m| <= epsilon_m (only when thresholds are set).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints_met: Option<Vec<bool>>,
}

impl EpisodeResult {
    pub fn from_accumulator(
        acc: &ComponentAccumulator,
        schema: &ComponentSchema,
        spec: &SuccessSpec,
        seed: u64,
        termination: Termination,
    ) -> Result<Self> {
        spec.validate(schema.n_rewards(), schema.n_fair_measures)?;
        let totals = total_rewards(acc, schema)?;
        let mut undefined_rates: Vec<String> = totals.undefined.into_iter().collect();
        let d = schema.n_groups;
        let mut fairness = Vec::with_capacity(schema.n_fair_measures);
        for m in 0..schema.n_fair_measures {
            let sums = if schema.normalize_by_rate_sum.get(m).copied().unwrap_or(false) {
                normalize_rates(&acc.fairness_sums, m, d)
            } else {
                acc.fairness_sums.clone()
            };
            let v = if d == 2 { two_group_violation(&sums, m)? } else { d_group_violation(&sums, m, d)? };
            for g in v.undefined_groups {
                undefined_rates.push(format!("{}[group {g}]", schema.fairness_labels[m]));
            }
            fairness.push(v.value);
        }
        let success = episode_success(&totals.values, &fairness, spec);
        let constraints_met = spec
            .epsilon
            .as_ref()
            .map(|eps| fairness.iter().zip(eps).map(|(f, e)| f.abs() <= *e).collect());
        Ok(EpisodeResult {
            seed,
            steps_run: acc.steps,
            termination,
            rewards: totals.values,
            fairness,
            success,
            undefined_rates,
            constraints_met,
        })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("episode results always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(alpha: &[f64], beta: &[f64], norms: &[f64]) -> SuccessSpec {
        SuccessSpec {
            alpha: alpha.to_vec(),
            beta: beta.to_vec(),
            reward_norms: norms.to_vec(),
            lambda: None,
            epsilon: None,
        }
    }

    #[test]
    fn success_examples() {
        assert_eq!(episode_success(&[2.0], &[], &spec(&[1.0], &[], &[1.0])), 2.0);
        assert_eq!(episode_success(&[], &[-0.3], &spec(&[], &[1.0], &[])), -0.3);
        let s = episode_success(&[1.0, 0.4], &[-0.1], &spec(&[0.5, 0.5], &[1.0], &[1.0, 1.0]));
        assert!((s - 0.6).abs() < 1e-15);
    }

    #[test]
    fn norms_divide() {
        let s = episode_success(&[8.9e4], &[], &spec(&[1.0], &[], &[8.9e4]));
        assert_eq!(s, 1.0);
    }

    #[test]
    fn lambda_weights() {
        let s = SuccessSpec::from_lambda(3, 2, 0.6, vec![1.0; 3]).unwrap();
        for a in &s.alpha {
            assert!((a - 0.2).abs() < 1e-15);
        }
        assert_eq!(s.beta, vec![(1.0 - 0.6) / 2.0; 2]);
        let s = SuccessSpec::from_lambda(3, 2, 1.0, vec![1.0; 3]).unwrap();
        assert_eq!(s.beta, vec![0.0, 0.0]);
        let s = SuccessSpec::from_lambda(3, 2, 0.0, vec![1.0; 3]).unwrap();
        assert_eq!(s.alpha, vec![0.0; 3]);
        assert!(SuccessSpec::from_lambda(3, 2, 1.5, vec![1.0; 3]).is_err());
    }

    #[test]
    fn uniform_weights_cover_included_terms() {
        let s = SuccessSpec::uniform_over(&[true, false], &[true, true], vec![1.0; 2]).unwrap();
        assert_eq!(s.alpha, vec![1.0 / 3.0, 0.0]);
        assert_eq!(s.beta, vec![1.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn epsilon_is_reported() {
        let schema = ComponentSchema::new(&["p"], &[], &[("a", false), ("b", false)], 2);
        let acc = ComponentAccumulator {
            reward_sums: vec![1.0],
            fairness_sums: vec![1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 1.0, 4.0],
            steps: 1,
        };
        let mut sp = spec(&[1.0], &[1.0, 1.0], &[1.0]);
        sp.epsilon = Some(vec![0.1, 0.1]);
        let r = EpisodeResult::from_accumulator(&acc, &schema, &sp, 0, Termination::Horizon).unwrap();
        assert_eq!(r.fairness, vec![0.0, -0.5]);
        assert_eq!(r.constraints_met, Some(vec![true, false]));
        assert!((r.success - (1.0 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn json_line_has_required_fields() {
        let r = EpisodeResult {
            seed: 3,
            steps_run: 2,
            termination: Termination::FinancialFailure,
            rewards: vec![1.0],
            fairness: vec![-0.5],
            success: 0.25,
            undefined_rates: vec![],
            constraints_met: None,
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json_line()).unwrap();
        for k in ["seed", "steps_run", "termination", "rewards", "fairness", "success"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
        assert!(!r.to_json_line().contains('\n'));
    }
}
