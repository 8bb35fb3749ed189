//! The three environments and helpers they share.

pub mod education;
pub mod healthcare;
pub mod loan;

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::MafeConfig;
use crate::error::{MafeError, Result};
use crate::framework::Environment;
use crate::policy::logistic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Loan,
    Healthcare,
    Education,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::Loan, EnvKind::Healthcare, EnvKind::Education];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Loan => "loan",
            EnvKind::Healthcare => "healthcare",
            EnvKind::Education => "education",
        }
    }
}

impl FromStr for EnvKind {
    type Err = MafeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "loan" => Ok(EnvKind::Loan),
            "healthcare" | "health" => Ok(EnvKind::Healthcare),
            "education" | "edu" => Ok(EnvKind::Education),
            other => Err(MafeError::Unknown(format!("environment {other:?}"))),
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn make_env(kind: EnvKind, cfg: &MafeConfig) -> Result<Box<dyn Environment>> {
    Ok(match kind {
        EnvKind::Loan => Box::new(loan::LoanEnv::new(cfg.loan.clone())?),
        EnvKind::Healthcare => Box::new(healthcare::HealthEnv::new(cfg.healthcare.clone())?),
        EnvKind::Education => Box::new(education::EduEnv::new(cfg.education.clone())?),
    })
}

/// Reward normalization factors for an environment's K rewards.
pub fn reward_norms(kind: EnvKind, cfg: &MafeConfig) -> Vec<f64> {
    match kind {
        EnvKind::Loan => cfg.loan.reward_norms(),
        EnvKind::Healthcare => cfg.healthcare.reward_norms(),
        EnvKind::Education => cfg.education.reward_norms(),
    }
}

/// Probability that invested-in features improve: `Q + R * sigmoid(V x + W)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub q: f64,
    pub r: f64,
    /// V is `v_per_region * n_regions / budget`.
    pub v_per_region: f64,
    pub w: f64,
    /// Probability of no change.
    pub u: f64,
}

impl Improvement {
    pub fn probability(&self, x: f64, n_regions: usize, budget: f64) -> f64 {
        let v = self.v_per_region * n_regions as f64 / budget;
        (self.q + self.r * logistic(v * x + self.w)).clamp(0.0, 1.0)
    }

    /// +1 improve, 0 unchanged, -1 deteriorate, from one uniform draw.
    pub fn outcome(&self, p_improve: f64, u01: f64) -> i8 {
        if u01 < p_improve {
            1
        } else if u01 < (p_improve + self.u).min(1.0) {
            0
        } else {
            -1
        }
    }
}

/// Linear cost `base + per_unit * n`; returns the units bought and their cost.
pub fn buy_units(spend: f64, base: f64, per_unit: f64) -> (usize, f64) {
    if spend < base + per_unit || per_unit <= 0.0 {
        return (0, 0.0);
    }
    let n = ((spend - base) / per_unit).floor() as usize;
    (n, base + per_unit * n as f64)
}

pub fn build_time(base: f64, per_unit: f64, units: usize) -> usize {
    (base + per_unit * units as f64).ceil().max(1.0) as usize
}

/// One uniform draw per individual, in id order.
pub(crate) fn uniforms(seed: u64, tag: u64, t: usize, n: usize) -> Vec<f64> {
    let mut r = crate::rng::stream(seed, tag, t as u64);
    (0..n).map(|_| r.random::<f64>()).collect()
}

/// Per-column affine standardization.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Scaler {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    /// Mean/std of each column; columns with no spread keep `fallback` scales.
    pub fn fit(rows: &[Vec<f64>], fallback: &[(f64, f64)]) -> Self {
        let k = fallback.len();
        let n = rows.len() as f64;
        let mut center = Vec::with_capacity(k);
        let mut scale = Vec::with_capacity(k);
        for j in 0..k {
            let (c0, s0) = fallback[j];
            if rows.is_empty() {
                center.push(c0);
                scale.push(s0);
                continue;
            }
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            if var.sqrt() > 1e-12 {
                center.push(mean);
                scale.push(var.sqrt());
            } else {
                center.push(c0);
                scale.push(s0);
            }
        }
        Scaler { center, scale }
    }

    pub fn apply(&self, j: usize, x: f64) -> f64 {
        (x - self.center[j]) / self.scale[j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improvement_examples() {
        let health = Improvement { q: 0.29, r: 0.4, v_per_region: 16.0, w: 4.0, u: 0.2 };
        let p0 = health.probability(0.0, 4, 2.5e8);
        assert!((p0 - 0.6829).abs() < 1e-4);
        assert!((p0 - (0.29 + 0.4 / (1.0 + (-4f64).exp()))).abs() < 1e-15);
        assert!((health.probability(1e12, 4, 2.5e8) - 0.69).abs() < 1e-12);
        let edu = Improvement { q: 0.39, r: 0.4, v_per_region: 16.0, w: 4.0, u: 0.2 };
        assert!((edu.probability(0.0, 9, 2.5e7) - 0.7829).abs() < 1e-4);
    }

    #[test]
    fn improvement_partition() {
        let imp = Improvement { q: 0.29, r: 0.4, v_per_region: 16.0, w: 4.0, u: 0.2 };
        assert_eq!(imp.outcome(0.6, 0.59), 1);
        assert_eq!(imp.outcome(0.6, 0.6), 0);
        assert_eq!(imp.outcome(0.6, 0.79), 0);
        assert_eq!(imp.outcome(0.6, 0.81), -1);
        assert_eq!(imp.outcome(0.9, 0.95), 0);
    }

    #[test]
    fn unit_purchase() {
        assert_eq!(buy_units(3.1e7, 3e7, 1e6), (1, 3.1e7));
        assert_eq!(buy_units(3.05e7, 3e7, 1e6), (0, 0.0));
        assert_eq!(buy_units(0.0, 3e7, 1e6), (0, 0.0));
        assert_eq!(buy_units(3.55e7, 3e7, 1e6), (5, 3.5e7));
        assert_eq!(build_time(0.5, 2.0, 1), 3);
        assert_eq!(build_time(0.5, 2.0, 5), 11);
    }

    #[test]
    fn env_names_parse() {
        for k in EnvKind::ALL {
            assert_eq!(k.as_str().parse::<EnvKind>().unwrap(), k);
        }
        assert!("bank".parse::<EnvKind>().is_err());
    }

    #[test]
    fn scaler_falls_back_on_constant_columns() {
        let s = Scaler::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]], &[(0.0, 1.0), (0.0, 10.0)]);
        assert_eq!(s.apply(0, 3.0), 1.0);
        assert_eq!(s.apply(1, 5.0), 0.5);
    }
}
