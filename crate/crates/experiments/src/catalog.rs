//! Reference policies and the intervention catalog.
//!
//! The reference policies form the baseline arm of every intervention: each
//! intervention changes exactly one mechanism relative to them.

use std::sync::Arc;

use mafe_core::config::MafeConfig;
use mafe_core::envs::EnvKind;
use mafe_core::policy::{ConstantScores, ConstantVector, Policy, RandomScores};
use mafe_core::trainer::PolicyFactory;
use mafe_core::{MafeError, Result};

/// Thresholds and debt factors of the fixed loan baseline.
pub const FIXED_THRESHOLDS: [f64; 2] = [0.0, 0.0];
pub const FIXED_DEBT: [f64; 2] = [0.12, 0.18];

fn constant(v: Vec<f64>) -> PolicyFactory {
    Arc::new(move || Box::new(ConstantVector(v.clone())) as Box<dyn Policy>)
}

fn scores(x: f64) -> PolicyFactory {
    Arc::new(move || Box::new(ConstantScores(x)) as Box<dyn Policy>)
}

fn random() -> PolicyFactory {
    Arc::new(|| Box::new(RandomScores::new(0)) as Box<dyn Policy>)
}

fn with_uniform_leaves(root: &[f64], leaves: usize, n: usize) -> Vec<f64> {
    let mut v = root.to_vec();
    for _ in 0..leaves {
        v.extend(std::iter::repeat_n(1.0 / n as f64, n));
    }
    v
}

/// Baseline-arm policies, one factory per agent.
pub fn reference_policies(kind: EnvKind, cfg: &MafeConfig) -> Vec<PolicyFactory> {
    match kind {
        EnvKind::Loan => vec![
            constant(vec![0.0; cfg.loan.threshold_arity]),
            random(),
            constant(vec![0.0; cfg.loan.debt_arity]),
        ],
        EnvKind::Healthcare => {
            let g = cfg.healthcare.n_regions;
            vec![
                scores(1.0),
                scores(0.5),
                constant(with_uniform_leaves(&[0.0, 0.5, 0.5, 0.0], 3, g)),
            ]
        }
        EnvKind::Education => vec![
            random(),
            constant(vec![0.1, 0.6, 0.0, 0.0, 0.3]),
            scores(0.3),
            constant(with_uniform_leaves(&[0.0, 1.0, 0.0], 1, cfg.education.n_regions)),
        ],
    }
}

/// The fixed loan baseline: random queue order, fixed thresholds and debt factors.
pub fn fixed_loan_policies(thresholds: &[f64], debt: &[f64]) -> Vec<PolicyFactory> {
    vec![constant(thresholds.to_vec()), random(), constant(debt.to_vec())]
}

pub fn instantiate(factories: &[PolicyFactory]) -> Vec<Box<dyn Policy>> {
    factories.iter().map(|f| f()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Intervention {
    pub env: EnvKind,
    pub name: &'static str,
    /// Indicator compared between arms.
    pub target: &'static str,
    /// Whether the intervention is expected to raise the target.
    pub raises: bool,
}

pub const CATALOG: [Intervention; 8] = [
    Intervention { env: EnvKind::Loan, name: "debt-relief-20pct", target: "mean_qualification", raises: true },
    Intervention { env: EnvKind::Healthcare, name: "beds-unlimited", target: "mortality_rate", raises: false },
    Intervention { env: EnvKind::Healthcare, name: "universal-insurance", target: "mortality_rate", raises: false },
    Intervention { env: EnvKind::Healthcare, name: "public-health-max", target: "mortality_rate", raises: false },
    Intervention { env: EnvKind::Education, name: "tertiary-max", target: "graduation_rate", raises: true },
    Intervention { env: EnvKind::Education, name: "full-scholarships", target: "graduation_rate", raises: true },
    Intervention { env: EnvKind::Education, name: "mentorship-all", target: "graduation_rate_g1", raises: true },
    Intervention { env: EnvKind::Education, name: "diversity-max", target: "mean_utility_g1", raises: true },
];

/// `null` is accepted for every environment and changes nothing.
pub fn lookup(kind: EnvKind, name: &str) -> Result<Intervention> {
    if name == "null" {
        let target = match kind {
            EnvKind::Loan => "mean_qualification",
            EnvKind::Healthcare => "mortality_rate",
            EnvKind::Education => "graduation_rate",
        };
        return Ok(Intervention { env: kind, name: "null", target, raises: true });
    }
    CATALOG
        .iter()
        .find(|i| i.env == kind && i.name == name)
        .copied()
        .ok_or_else(|| MafeError::Unknown(format!("intervention {name:?} for {kind}")))
}

pub fn names(kind: EnvKind) -> Vec<&'static str> {
    CATALOG.iter().filter(|i| i.env == kind).map(|i| i.name).collect()
}

/// Config and policies of the intervened arm.
pub fn intervened_arm(iv: &Intervention, base: &MafeConfig) -> (MafeConfig, Vec<PolicyFactory>) {
    let mut cfg = base.clone();
    let mut policies = reference_policies(iv.env, base);
    let unlimited_health = 10.0 * base.healthcare.planner_budget;
    let unlimited_edu = 10.0 * base.education.planner_budget;
    match iv.name {
        "debt-relief-20pct" => {
            policies[mafe_core::envs::loan::DEBT] = constant(vec![0.2; base.loan.debt_arity]);
        }
        "beds-unlimited" => cfg.healthcare.beds_unlimited = true,
        "universal-insurance" => cfg.healthcare.force_insured = true,
        "public-health-max" => cfg.healthcare.public_health_override = Some(unlimited_health),
        "tertiary-max" => cfg.education.tertiary_override = Some(unlimited_edu),
        "full-scholarships" => cfg.education.full_scholarship = true,
        "mentorship-all" => cfg.education.mentorship_all = true,
        "diversity-max" => cfg.education.diversity_override = Some(unlimited_edu),
        _ => {}
    }
    (cfg, policies)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_lookup() {
        assert_eq!(lookup(EnvKind::Loan, "debt-relief-20pct").unwrap().target, "mean_qualification");
        assert!(lookup(EnvKind::Loan, "beds-unlimited").is_err());
        assert_eq!(names(EnvKind::Education).len(), 4);
        assert_eq!(lookup(EnvKind::Healthcare, "null").unwrap().name, "null");
    }

    #[test]
    fn null_arm_is_the_baseline() {
        let base = MafeConfig::default();
        let iv = lookup(EnvKind::Education, "null").unwrap();
        let (cfg, _) = intervened_arm(&iv, &base);
        assert_eq!(cfg, base);
    }

    #[test]
    fn interventions_touch_one_mechanism() {
        let base = MafeConfig::default();
        for iv in CATALOG {
            let (cfg, _) = intervened_arm(&iv, &base);
            let changed = [cfg.loan != base.loan, cfg.healthcare != base.healthcare, cfg.education != base.education]
                .iter()
                .filter(|c| **c)
                .count();
            assert!(changed <= 1, "{}", iv.name);
        }
    }

    #[test]
    fn reference_policy_counts() {
        let cfg = MafeConfig::default();
        assert_eq!(reference_policies(EnvKind::Loan, &cfg).len(), 3);
        assert_eq!(reference_policies(EnvKind::Healthcare, &cfg).len(), 3);
        assert_eq!(reference_policies(EnvKind::Education, &cfg).len(), 4);
    }
}
