//! Synthetic populations, proxy scoring models and CSV ingestion.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{MafeError, Result};
use crate::policy::logistic;
use crate::rng;

const TAG_POPULATION: u64 = 0x90b;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: usize,
    pub group: usize,
    pub region: usize,
    /// Constant features first, then variable features.
    pub features: Vec<f64>,
    pub n_const: usize,
}

impl Individual {
    pub fn const_features(&self) -> &[f64] {
        &self.features[..self.n_const]
    }

    pub fn var_features(&self) -> &[f64] {
        &self.features[self.n_const..]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureDist {
    /// Normal truncated to `[lo, hi]`, optionally rounded to an integer.
    Normal {
        mean: f64,
        std: f64,
        lo: f64,
        hi: f64,
        #[serde(default)]
        round: bool,
    },
    Bernoulli { p: f64 },
    Constant { value: f64 },
}

impl FeatureDist {
    pub fn normal(mean: f64, std: f64, lo: f64, hi: f64) -> Self {
        FeatureDist::Normal { mean, std, lo, hi, round: false }
    }

    pub fn integer(mean: f64, std: f64, lo: f64, hi: f64) -> Self {
        FeatureDist::Normal { mean, std, lo, hi, round: true }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            FeatureDist::Constant { value } => value,
            FeatureDist::Bernoulli { p } => f64::from(u8::from(rng.random::<f64>() < p)),
            FeatureDist::Normal { mean, std, lo, hi, round } => {
                let mut x = mean.clamp(lo, hi);
                if std > 0.0 {
                    let n = Normal::new(mean, std).expect("std checked positive");
                    // Rejection sampling with a bounded number of tries, then clamp.
                    x = n.sample(rng);
                    for _ in 0..64 {
                        if (lo..=hi).contains(&x) {
                            break;
                        }
                        x = n.sample(rng);
                    }
                    x = x.clamp(lo, hi);
                }
                if round {
                    x.round().clamp(lo.ceil(), hi.floor())
                } else {
                    x
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            FeatureDist::Normal { std, lo, hi, .. } if !(std >= 0.0 && lo <= hi) => {
                Err(MafeError::Config(format!("bad truncated normal (std {std}, [{lo}, {hi}])")))
            }
            FeatureDist::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                Err(MafeError::Config(format!("Bernoulli p={p} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupProfile {
    pub features: Vec<FeatureDist>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RegionRule {
    /// Region label equals the group label (healthcare: the region is the
    /// sensitive attribute).
    SameAsGroup,
    Uniform { n_regions: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub size: usize,
    pub group_proportions: Vec<f64>,
    pub feature_names: Vec<String>,
    pub n_const: usize,
    /// One profile per group.
    pub profiles: Vec<GroupProfile>,
    pub region_rule: RegionRule,
    pub seed: u64,
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(MafeError::Config("population size must be at least 1".into()));
        }
        let total: f64 = self.group_proportions.iter().sum();
        if self.group_proportions.is_empty()
            || self.group_proportions.iter().any(|p| !(*p >= 0.0))
            || (total - 1.0).abs() > 1e-9
        {
            return Err(MafeError::Config(format!(
                "group proportions {:?} are not a simplex",
                self.group_proportions
            )));
        }
        if self.profiles.len() != self.group_proportions.len() {
            return Err(MafeError::Config(format!(
                "{} profiles for {} groups",
                self.profiles.len(),
                self.group_proportions.len()
            )));
        }
        if self.n_const > self.feature_names.len() {
            return Err(MafeError::Config("more constant features than features".into()));
        }
        for p in &self.profiles {
            if p.features.len() != self.feature_names.len() {
                return Err(MafeError::Config(format!(
                    "profile has {} features, expected {}",
                    p.features.len(),
                    self.feature_names.len()
                )));
            }
            for f in &p.features {
                f.validate()?;
            }
        }
        if let RegionRule::Uniform { n_regions: 0 } = self.region_rule {
            return Err(MafeError::Config("need at least one region".into()));
        }
        Ok(())
    }

    pub fn n_groups(&self) -> usize {
        self.group_proportions.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }
}

/// Largest-remainder apportionment of `n` over `proportions`; ties go to the
/// lower group index.
pub fn group_counts(n: usize, proportions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut rest = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &g in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[g] += 1;
        rest -= 1;
    }
    counts
}

pub fn generate_population(cfg: &PopulationConfig) -> Result<Vec<Individual>> {
    cfg.validate()?;
    let counts = group_counts(cfg.size, &cfg.group_proportions);
    let mut out = Vec::with_capacity(cfg.size);
    for (group, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            let id = out.len();
            let mut r = rng::stream(cfg.seed, TAG_POPULATION, id as u64);
            let region = match cfg.region_rule {
                RegionRule::SameAsGroup => group,
                RegionRule::Uniform { n_regions } => r.random_range(0..n_regions),
            };
            out.push(draw(cfg, id, group, region, &mut r));
        }
    }
    Ok(out)
}

/// A fresh individual from the given group's distribution, keeping `region`.
pub fn resample_replacement<R: Rng + ?Sized>(
    cfg: &PopulationConfig,
    id: usize,
    group: usize,
    region: usize,
    rng: &mut R,
) -> Individual {
    draw(cfg, id, group, region, rng)
}

fn draw<R: Rng + ?Sized>(
    cfg: &PopulationConfig,
    id: usize,
    group: usize,
    region: usize,
    rng: &mut R,
) -> Individual {
    let features = cfg.profiles[group].features.iter().map(|f| f.sample(rng)).collect();
    Individual { id, group, region, features, n_const: cfg.n_const }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Logistic,
    Clip { lo: f64, hi: f64 },
    Identity,
}

/// `transform(w . v + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineScorer {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub transform: Transform,
}

impl AffineScorer {
    /// Builds a scorer from weights applied to centered features:
    /// `w . (v - center) + offset`.
    pub fn centered(weights: &[f64], centers: &[f64], offset: f64, transform: Transform) -> Self {
        let bias = offset - weights.iter().zip(centers).map(|(w, c)| w * c).sum::<f64>();
        AffineScorer { weights: weights.to_vec(), bias, transform }
    }

    pub fn score(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.weights.len() {
            return Err(MafeError::Shape { expected: self.weights.len(), got: v.len() });
        }
        Ok(self.score_unchecked(v))
    }

    pub(crate) fn score_unchecked(&self, v: &[f64]) -> f64 {
        let z = self.weights.iter().zip(v).map(|(w, x)| w * x).sum::<f64>() + self.bias;
        match self.transform {
            Transform::Logistic => logistic(z),
            Transform::Clip { lo, hi } => z.clamp(lo, hi),
            Transform::Identity => z,
        }
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub feature_names: Vec<String>,
    pub n_const: usize,
    pub group_column: String,
    pub region_column: Option<String>,
}

fn is_missing(s: &str) -> bool {
    matches!(s.trim(), "" | "NA" | "N/A" | "NaN" | "nan" | "." | "null")
}

/// Reads one individual per row. Rows with missing values are dropped; extra
/// columns are ignored.
pub fn load_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Vec<Individual>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header_err = |e: csv::Error| MafeError::Parse { line: 1, detail: e.to_string() };
    let headers = rdr.headers().map_err(header_err)?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| MafeError::Parse {
            line: 1,
            detail: format!("missing column {name}"),
        })
    };
    let feature_cols: Vec<usize> =
        schema.feature_names.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let group_col = col(&schema.group_column)?;
    let region_col = schema.region_column.as_deref().map(col).transpose()?;

    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| MafeError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let cells: Vec<usize> = feature_cols
            .iter()
            .copied()
            .chain(std::iter::once(group_col))
            .chain(region_col)
            .collect();
        if cells.iter().any(|&c| record.get(c).is_none_or(is_missing)) {
            continue;
        }
        let num = |c: usize| -> Result<f64> {
            let s = record.get(c).unwrap_or("").trim();
            s.parse::<f64>().map_err(|_| MafeError::Parse {
                line,
                detail: format!("column {} value {s:?} is not numeric", &headers[c]),
            })
        };
        let label = |c: usize| -> Result<usize> {
            let v = num(c)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(MafeError::Parse {
                    line,
                    detail: format!("column {} must hold a non-negative integer", &headers[c]),
                });
            }
            Ok(v as usize)
        };
        let features = feature_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
        let group = label(group_col)?;
        let region = match region_col {
            Some(c) => label(c)?,
            None => group,
        };
        out.push(Individual { id: out.len(), group, region, features, n_const: schema.n_const });
    }
    Ok(out)
}

pub fn load_csv_path(path: &Path, schema: &CsvSchema) -> Result<Vec<Individual>> {
    load_csv(std::fs::File::open(path)?, schema)
}
