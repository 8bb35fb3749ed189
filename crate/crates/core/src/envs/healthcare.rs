//! Healthcare system: premiums and insurance uptake, regional hospital queues,
//! a central planner splitting its budget over subsidies, public health,
//! hospital beds and rollover, and illness / recovery / mortality dynamics.
//!
//! Agents: `insurer` (per-person premium, every 6 steps), `hospital` (queue
//! scores, every step), `planner` (budget tree `[4, G, G, G]`, every 6 steps).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::loan::rank_by_score;
use super::{build_time, buy_units, uniforms, Improvement, Scaler};
use crate::error::{MafeError, Result};
use crate::framework::{
    check_step_actions, Action, ActionKind, AgentSpec, ComponentSchema, Environment,
    ObservationMatrix, StepOutcome, Termination,
};
use crate::population::{
    generate_population, load_csv_path, resample_replacement, AffineScorer, CsvSchema,
    FeatureDist, GroupProfile, Individual, PopulationConfig, RegionRule, Transform,
};
use crate::rng;

pub const FEATURES: [&str; 18] = [
    "AGE",
    "SEX",
    "REGION",
    "FAMSIZE",
    "RACE",
    "USBORN",
    "EDUC",
    "CHOLHIGHEV",
    "SMOKENOW",
    "INCTOT",
    "FTOTVAL",
    "POVLEV",
    "AEFFORT",
    "ANERVOUS",
    "ARESTLESS",
    "AHOPELESS",
    "ASAD",
    "AWORTHLESS",
];
const ENV_FEATURES: [&str; 11] = [
    "HICOV",
    "HEALTH",
    "NEEDBED",
    "INHOSP",
    "ILLNESS",
    "ILLTIME",
    "WAITBED",
    "NGEOBED",
    "HIPCOST",
    "HIPFULLCOST",
    "PLANBUDGET",
];
const N_CONST: usize = 9;
const F_FAMSIZE: usize = 3;
const F_FTOTVAL: usize = 10;
/// The mental-health items moved by public health spending.
const HEALTH_ITEMS: std::ops::Range<usize> = 12..18;

const TAG_POPULATION: u64 = 0x20a0;
const TAG_INSURANCE: u64 = 0x20a1;
const TAG_TERMINATE: u64 = 0x20a2;
const TAG_SICK: u64 = 0x20a4;
const TAG_PUBLIC: u64 = 0x20a5;
const TAG_REPLACE: u64 = 0x20a6;

pub const INSURER: usize = 0;
pub const HOSPITAL: usize = 1;
pub const PLANNER: usize = 2;

/// How a negative base `D` is read in `C + D^x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeBase {
    /// `C - |D|^x`
    SignedMagnitude,
    /// `|D|^x - C`
    Reflected,
}

/// `clip(C + D^(E*ILLTIME + F*WAITBED + G*HEALTH + H), 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFamily {
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
}

impl ExpFamily {
    pub fn probability(&self, illtime: f64, waitbed: f64, health: f64, rule: NegativeBase) -> f64 {
        let x = self.e * illtime + self.f * waitbed + self.g * health + self.h;
        let p = if self.d >= 0.0 {
            self.c + self.d.powf(x)
        } else {
            let m = self.d.abs().powf(x);
            match rule {
                NegativeBase::SignedMagnitude => self.c - m,
                NegativeBase::Reflected => m - self.c,
            }
        };
        if p.is_nan() {
            0.0
        } else {
            p.clamp(0.0, 1.0)
        }
    }
}

/// Probability of accepting a premium: `clip(1 - exp(-FTOTVAL / (premium * FAMSIZE)))`.
pub fn accept_probability(ftotval: f64, premium: f64, famsize: f64) -> f64 {
    if premium <= 0.0 {
        return 1.0;
    }
    let p = 1.0 - (-ftotval.max(0.0) / (premium * famsize.max(1.0))).exp();
    p.clamp(0.0, 1.0)
}

/// Outcome probabilities for one ill individual in one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub death: f64,
    pub cured: f64,
    pub terminate: f64,
}

impl Transition {
    /// `death = P_term * P_mort`, `cured = P_term - death`, with `death + cured`
    /// equal to `P_term` in floating point.
    pub fn new(terminate: f64, mortality: f64) -> Self {
        let mut death = terminate * mortality;
        let cured = terminate - death;
        // Subtracting a part that is at least half of `terminate` is exact
        // (Sterbenz), so the two parts then add back to `terminate` exactly.
        if death < terminate / 2.0 {
            death = terminate - cured;
        }
        Transition { death, cured, terminate }
    }
}

pub fn illness_transition(cfg: &HealthConfig, illtime: f64, waitbed: f64, health: f64) -> Transition {
    let rule = cfg.negative_base;
    Transition::new(
        cfg.terminate.probability(illtime, waitbed, health, rule),
        cfg.mortality.probability(illtime, waitbed, health, rule),
    )
}

pub fn sick_probability(a: f64, b: f64, insured: bool, health: f64) -> f64 {
    (a * (1.0 - f64::from(u8::from(insured))) + b / 5.0 * health).clamp(0.0, 1.0)
}

/// Subsidy weights within a region, proportional to 1 / income (floored at 1).
pub fn subsidy_weights(incomes: &[f64]) -> Vec<f64> {
    let inv: Vec<f64> = incomes.iter().map(|x| 1.0 / x.max(1.0)).collect();
    let z: f64 = inv.iter().sum();
    inv.iter().map(|v| v / z).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HealthConfig {
    pub population_size: usize,
    pub horizon: usize,
    pub n_regions: usize,
    pub region_proportions: Vec<f64>,
    /// Periods of the insurer, hospital and planner agents.
    pub action_periods: [usize; 3],
    pub planner_budget: f64,
    pub max_premium: f64,
    /// Insurer cost per insured bed-step.
    pub hosp_cost: f64,
    pub sick_a: f64,
    pub sick_b: f64,
    pub terminate: ExpFamily,
    pub mortality: ExpFamily,
    pub negative_base: NegativeBase,
    pub bed_base_cost: f64,
    pub bed_unit_cost: f64,
    pub bed_build_base: f64,
    pub bed_build_per_bed: f64,
    /// Initial beds as a fraction of each region's population.
    pub initial_bed_fraction: f64,
    pub improvement: Improvement,
    /// Change of each mental-health item per improvement / deterioration.
    pub health_item_step: f64,
    pub profit_norm: f64,
    /// HEALTH in [1, 5] (higher is worse) from [`FEATURES`].
    pub health_scorer: AffineScorer,
    /// One profile per region.
    pub profiles: Vec<GroupProfile>,
    pub force_insured: bool,
    /// Beds equal to each region's population, never built or lost.
    pub beds_unlimited: bool,
    /// Public health spend per region, replacing the planner's choice.
    pub public_health_override: Option<f64>,
    pub population_csv: Option<PathBuf>,
    pub discount: f64,
}

impl Default for HealthConfig {
    fn default() -> Self {
        let profile = |region: f64, smoke: f64, chol: f64, income: f64, k6: f64, edu: f64| {
            let item = FeatureDist::normal(k6, 0.8, 0.0, 4.0);
            GroupProfile {
                features: vec![
                    FeatureDist::integer(45.0, 15.0, 18.0, 85.0),
                    FeatureDist::Bernoulli { p: 0.5 },
                    FeatureDist::Constant { value: region },
                    FeatureDist::integer(3.0, 1.5, 1.0, 8.0),
                    FeatureDist::integer(1.5 + region / 2.0, 1.0, 1.0, 6.0),
                    FeatureDist::Bernoulli { p: 0.85 },
                    FeatureDist::integer(edu, 2.0, 1.0, 16.0),
                    FeatureDist::Bernoulli { p: chol },
                    FeatureDist::Bernoulli { p: smoke },
                    FeatureDist::normal(income * 0.6, income * 0.3, 0.0, 500_000.0),
                    FeatureDist::normal(income, income * 0.6, 500.0, 800_000.0),
                    FeatureDist::normal(income / 260.0, income / 520.0, 0.0, 1_000.0),
                    item.clone(),
                    item.clone(),
                    item.clone(),
                    item.clone(),
                    item.clone(),
                    item,
                ],
            }
        };
        let mut w = vec![0.0; FEATURES.len()];
        let mut centers = vec![0.0; FEATURES.len()];
        w[0] = 0.02;
        centers[0] = 45.0;
        w[7] = 0.3;
        w[8] = 0.4;
        w[10] = -1.5e-5;
        centers[10] = 40_000.0;
        for j in HEALTH_ITEMS {
            w[j] = 0.12;
            centers[j] = 1.0;
        }
        HealthConfig {
            population_size: 1000,
            horizon: 100,
            n_regions: 4,
            region_proportions: vec![0.25; 4],
            action_periods: [6, 1, 6],
            planner_budget: 2.5e8,
            max_premium: 1000.0,
            hosp_cost: 2000.0,
            sick_a: 0.4,
            sick_b: 0.4,
            terminate: ExpFamily { c: 0.0, d: 1.03, e: -7.0, f: 0.0, g: 0.0, h: 0.0 },
            mortality: ExpFamily { c: 1.96, d: -1.02, e: 3.0, f: 3.0, g: 3.0, h: -7.0 },
            negative_base: NegativeBase::Reflected,
            bed_base_cost: 3e7,
            bed_unit_cost: 1e6,
            bed_build_base: 0.5,
            bed_build_per_bed: 2.0,
            initial_bed_fraction: 0.1,
            improvement: Improvement { q: 0.29, r: 0.4, v_per_region: 16.0, w: 4.0, u: 0.2 },
            health_item_step: 0.02,
            profit_norm: 7.2e8,
            health_scorer: AffineScorer::centered(
                &w,
                &centers,
                2.5,
                Transform::Clip { lo: 1.0, hi: 5.0 },
            ),
            profiles: vec![
                profile(0.0, 0.12, 0.20, 70_000.0, 0.6, 14.0),
                profile(1.0, 0.18, 0.25, 50_000.0, 0.9, 13.0),
                profile(2.0, 0.25, 0.30, 32_000.0, 1.2, 12.0),
                profile(3.0, 0.35, 0.35, 12_000.0, 1.6, 11.0),
            ],
            force_insured: false,
            beds_unlimited: false,
            public_health_override: None,
            population_csv: None,
            discount: 1.0,
        }
    }
}

impl HealthConfig {
    pub fn reward_norms(&self) -> Vec<f64> {
        vec![self.profit_norm, 1.0, 1.0, 1.0]
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MafeError::Config(format!("[healthcare] {m}")));
        if self.n_regions < 2 {
            return bad("need at least two regions".into());
        }
        if self.region_proportions.len() != self.n_regions || self.profiles.len() != self.n_regions {
            return bad(format!("need {} region proportions and profiles", self.n_regions));
        }
        if self.action_periods.contains(&0) {
            return bad("action periods must be at least 1".into());
        }
        if self.planner_budget <= 0.0 || self.max_premium < 0.0 || self.hosp_cost < 0.0 {
            return bad("budget must be positive, premium and hospital cost non-negative".into());
        }
        if self.health_scorer.weights.len() != FEATURES.len() {
            return bad("health scorer needs one weight per feature".into());
        }
        Ok(())
    }

    fn population_config(&self, seed: u64) -> PopulationConfig {
        PopulationConfig {
            size: self.population_size,
            group_proportions: self.region_proportions.clone(),
            feature_names: FEATURES.iter().map(|s| s.to_string()).collect(),
            n_const: N_CONST,
            profiles: self.profiles.clone(),
            region_rule: RegionRule::SameAsGroup,
            seed: rng::mix(&[seed, TAG_POPULATION]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Healthy,
    Ill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthState {
    pub status: Status,
    pub illtime: usize,
    pub waitbed: usize,
    pub in_hosp: bool,
    pub insured: bool,
    pub premium: f64,
    pub health: f64,
}

impl HealthState {
    fn healthy(health: f64) -> Self {
        HealthState {
            status: Status::Healthy,
            illtime: 0,
            waitbed: 0,
            in_hosp: false,
            insured: false,
            premium: 0.0,
            health,
        }
    }
}

/// One planner action: where the budget went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerRecord {
    pub t: usize,
    pub budget: f64,
    pub subsidies: f64,
    pub public_health: f64,
    pub infrastructure: f64,
    pub rollover: f64,
}

impl PlannerRecord {
    pub fn spent(&self) -> f64 {
        self.subsidies + self.public_health + self.infrastructure
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Project {
    region: usize,
    beds: usize,
    due: usize,
}

pub struct HealthEnv {
    cfg: HealthConfig,
    specs: Vec<AgentSpec>,
    schema: ComponentSchema,
    file_population: Option<Vec<Individual>>,
    pop_cfg: PopulationConfig,
    agent_cols: Vec<Vec<usize>>,
    scaler: Scaler,
    seed: u64,
    t: usize,
    people: Vec<Individual>,
    states: Vec<HealthState>,
    beds: Vec<usize>,
    projects: Vec<Project>,
    budget: f64,
    subsidy_pool: Vec<f64>,
    public_spend: Vec<f64>,
    ledger: Vec<PlannerRecord>,
    cum_profit: f64,
    cum_deaths: f64,
    cum_terminations: f64,
    cum_sick: f64,
    cum_healthy: f64,
    region_counts: Vec<[f64; 4]>,
    finished: bool,
}

impl HealthEnv {
    pub fn new(cfg: HealthConfig) -> Result<Self> {
        cfg.validate()?;
        let file_population = match &cfg.population_csv {
            Some(path) => {
                let schema = CsvSchema {
                    feature_names: FEATURES.iter().map(|s| s.to_string()).collect(),
                    n_const: N_CONST,
                    group_column: "REGION".into(),
                    region_column: Some("REGION".into()),
                };
                let pop = load_csv_path(path, &schema)?;
                if pop.is_empty() || pop.iter().any(|i| i.group >= cfg.n_regions) {
                    return Err(MafeError::Config(format!(
                        "[healthcare] population file needs rows with REGION < {}",
                        cfg.n_regions
                    )));
                }
                Some(pop)
            }
            None => None,
        };
        let g = cfg.n_regions;
        let owned = |list: &[&str]| -> Vec<String> { list.iter().map(|s| s.to_string()).collect() };
        let specs = vec![
            AgentSpec {
                agent_id: INSURER,
                name: "insurer".into(),
                obs_features: owned(&[
                    "AGE", "SEX", "REGION", "FAMSIZE", "RACE", "USBORN", "EDUC", "CHOLHIGHEV",
                    "SMOKENOW", "INCTOT", "FTOTVAL", "POVLEV", "HEALTH", "HICOV", "ILLNESS",
                ]),
                action_kind: ActionKind::IndividualScores,
                action_period: cfg.action_periods[0],
            },
            AgentSpec {
                agent_id: HOSPITAL,
                name: "hospital".into(),
                obs_features: owned(&[
                    "AGE", "SEX", "REGION", "CHOLHIGHEV", "SMOKENOW", "HEALTH", "HICOV", "ILLTIME",
                    "WAITBED", "NGEOBED",
                ]),
                action_kind: ActionKind::IndividualScores,
                action_period: cfg.action_periods[1],
            },
            AgentSpec {
                agent_id: PLANNER,
                name: "planner".into(),
                obs_features: owned(&[
                    "REGION", "FTOTVAL", "POVLEV", "AEFFORT", "ANERVOUS", "ARESTLESS", "AHOPELESS",
                    "ASAD", "AWORTHLESS", "HEALTH", "HICOV", "ILLNESS", "NEEDBED", "INHOSP",
                    "NGEOBED", "HIPFULLCOST", "PLANBUDGET",
                ]),
                action_kind: ActionKind::BudgetTree { blocks: vec![4, g, g, g] },
                action_period: cfg.action_periods[2],
            },
        ];
        for s in &specs {
            s.validate()?;
        }
        let all: Vec<&str> = FEATURES.iter().copied().chain(ENV_FEATURES).collect();
        let agent_cols = specs
            .iter()
            .map(|s| {
                s.obs_features.iter().map(|f| all.iter().position(|a| a == f).unwrap()).collect()
            })
            .collect();
        let schema = ComponentSchema::new(
            &["insurer_profit"],
            &[("insured_rate", 1.0), ("incidence_rate", -1.0), ("mortality_rate", -1.0)],
            &[("insured", false), ("incidence", false), ("mortality", false)],
            g,
        );
        let pop_cfg = cfg.population_config(0);
        let mut env = HealthEnv {
            cfg,
            specs,
            schema,
            file_population,
            pop_cfg,
            agent_cols,
            scaler: Scaler::default(),
            seed: 0,
            t: 0,
            people: Vec::new(),
            states: Vec::new(),
            beds: Vec::new(),
            projects: Vec::new(),
            budget: 0.0,
            subsidy_pool: Vec::new(),
            public_spend: Vec::new(),
            ledger: Vec::new(),
            cum_profit: 0.0,
            cum_deaths: 0.0,
            cum_terminations: 0.0,
            cum_sick: 0.0,
            cum_healthy: 0.0,
            region_counts: Vec::new(),
            finished: false,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &HealthConfig {
        &self.cfg
    }

    pub fn states(&self) -> &[HealthState] {
        &self.states
    }

    pub fn people(&self) -> &[Individual] {
        &self.people
    }

    pub fn beds(&self) -> &[usize] {
        &self.beds
    }

    pub fn planner_ledger(&self) -> &[PlannerRecord] {
        &self.ledger
    }

    pub fn occupancy(&self) -> Vec<usize> {
        let mut occ = vec![0; self.cfg.n_regions];
        for (p, s) in self.people.iter().zip(&self.states) {
            if s.in_hosp {
                occ[p.region] += 1;
            }
        }
        occ
    }

    fn queue(&self) -> Vec<usize> {
        (0..self.people.len())
            .filter(|&i| self.states[i].status == Status::Ill && !self.states[i].in_hosp)
            .collect()
    }

    fn health_of(&self, ind: &Individual) -> f64 {
        self.cfg.health_scorer.score_unchecked(&ind.features)
    }

    fn region_sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.cfg.n_regions];
        for p in &self.people {
            n[p.region] += 1;
        }
        n
    }

    fn raw_feature(&self, id: usize, j: usize) -> f64 {
        let s = &self.states[id];
        let p = &self.people[id];
        let flag = |b: bool| f64::from(u8::from(b));
        match j.checked_sub(FEATURES.len()) {
            None => p.features[j],
            Some(0) => flag(s.insured),
            Some(1) => s.health,
            Some(2) => flag(s.status == Status::Ill && !s.in_hosp),
            Some(3) => flag(s.in_hosp),
            Some(4) => flag(s.status == Status::Ill),
            Some(5) => s.illtime as f64,
            Some(6) => s.waitbed as f64,
            Some(7) => self.beds[p.region] as f64,
            Some(8) => s.premium,
            Some(9) => self
                .people
                .iter()
                .zip(&self.states)
                .filter(|(q, st)| q.region == p.region && st.insured)
                .map(|(_, st)| st.premium)
                .sum(),
            Some(10) => self.budget,
            Some(k) => unreachable!("feature {k}"),
        }
    }

    /// Applies a planner action; returns nothing, records the split in the ledger.
    fn planner_allocate(&mut self, a: &[f64]) {
        let g = self.cfg.n_regions;
        let budget = self.budget + self.cfg.planner_budget;
        let root = &a[..4];
        let leaf = |k: usize, r: usize| a[4 + k * g + r];
        let mut subsidies = 0.0;
        let mut public = 0.0;
        let mut infra_cost = 0.0;
        let mut rollover = budget * root[3];
        let cycle = self.cfg.action_periods[PLANNER] as f64;
        for r in 0..g {
            let s = budget * root[0] * leaf(0, r);
            self.subsidy_pool[r] = s / cycle;
            subsidies += s;
            let x = budget * root[1] * leaf(1, r);
            self.public_spend[r] = x;
            public += x;
            let spend = budget * root[2] * leaf(2, r);
            let (n, cost) = buy_units(spend, self.cfg.bed_base_cost, self.cfg.bed_unit_cost);
            if n > 0 {
                let due = self.t + build_time(self.cfg.bed_build_base, self.cfg.bed_build_per_bed, n);
                self.projects.push(Project { region: r, beds: n, due });
            }
            infra_cost += cost;
            rollover += spend - cost;
        }
        self.ledger.push(PlannerRecord {
            t: self.t,
            budget,
            subsidies,
            public_health: public,
            infrastructure: infra_cost,
            rollover,
        });
        self.budget = rollover;
    }

    fn replace(&mut self, id: usize) {
        let region = self.people[id].region;
        let mut r = rng::stream(self.seed, TAG_REPLACE, rng::mix(&[self.t as u64, id as u64]));
        let fresh = resample_replacement(&self.pop_cfg, id, region, region, &mut r);
        let h = self.health_of(&fresh);
        self.people[id] = fresh;
        self.states[id] = HealthState::healthy(h);
    }

    fn cumulative_rate(num: f64, den: f64) -> f64 {
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

impl Environment for HealthEnv {
    fn name(&self) -> &str {
        "healthcare"
    }

    fn agent_specs(&self) -> &[AgentSpec] {
        &self.specs
    }

    fn schema(&self) -> &ComponentSchema {
        &self.schema
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn discount(&self) -> f64 {
        self.cfg.discount
    }

    fn reset(&mut self, seed: u64) {
        self.seed = seed;
        self.t = 0;
        self.pop_cfg = self.cfg.population_config(seed);
        self.people = match &self.file_population {
            Some(p) => p.clone(),
            None => generate_population(&self.pop_cfg)
                .expect("healthcare population config validated at construction"),
        };
        self.states = self.people.iter().map(|p| HealthState::healthy(self.health_of(p))).collect();
        let sizes = self.region_sizes();
        self.beds = sizes
            .iter()
            .map(|&n| {
                if self.cfg.beds_unlimited {
                    n
                } else {
                    (self.cfg.initial_bed_fraction * n as f64).round() as usize
                }
            })
            .collect();
        let g = self.cfg.n_regions;
        self.projects.clear();
        self.budget = 0.0;
        self.subsidy_pool = vec![0.0; g];
        self.public_spend = vec![0.0; g];
        self.ledger.clear();
        self.cum_profit = 0.0;
        self.cum_deaths = 0.0;
        self.cum_terminations = 0.0;
        self.cum_sick = 0.0;
        self.cum_healthy = 0.0;
        self.region_counts = vec![[0.0; 4]; g];
        self.finished = self.cfg.horizon == 0;
        let rows: Vec<Vec<f64>> = (0..self.people.len())
            .map(|i| (0..FEATURES.len() + ENV_FEATURES.len()).map(|j| self.raw_feature(i, j)).collect())
            .collect();
        let mut fallback = vec![(0.0, 1.0); FEATURES.len()];
        fallback.extend([
            (0.5, 0.5),
            (3.0, 1.0),
            (0.5, 0.5),
            (0.5, 0.5),
            (0.5, 0.5),
            (1.0, 1.0),
            (1.0, 1.0),
            (self.people.len() as f64 / g as f64 * 0.1, self.people.len() as f64 / g as f64 * 0.1),
            (self.cfg.max_premium / 2.0, self.cfg.max_premium / 2.0 + 1.0),
            (0.0, self.cfg.max_premium * self.people.len() as f64 / g as f64 + 1.0),
            (0.0, self.cfg.planner_budget),
        ]);
        let data = Scaler::fit(&rows, &fallback);
        // Environment-state columns use fixed scales so that they do not depend on
        // the all-healthy initial state.
        self.scaler = Scaler {
            center: data.center[..FEATURES.len()]
                .iter()
                .copied()
                .chain(fallback[FEATURES.len()..].iter().map(|f| f.0))
                .collect(),
            scale: data.scale[..FEATURES.len()]
                .iter()
                .copied()
                .chain(fallback[FEATURES.len()..].iter().map(|f| f.1))
                .collect(),
        };
    }

    fn time(&self) -> usize {
        self.t
    }

    fn observe(&self, agent: usize) -> ObservationMatrix {
        let cols = &self.agent_cols[agent];
        let ids: Vec<usize> = match agent {
            HOSPITAL => self.queue(),
            _ => (0..self.people.len()).collect(),
        };
        let region_premiums: Vec<f64> = (0..self.cfg.n_regions)
            .map(|r| {
                self.people
                    .iter()
                    .zip(&self.states)
                    .filter(|(q, st)| q.region == r && st.insured)
                    .map(|(_, st)| st.premium)
                    .sum()
            })
            .collect();
        let hipfull = FEATURES.len() + 9;
        let mut obs = ObservationMatrix::new(cols.len());
        let mut row = Vec::with_capacity(cols.len());
        for id in ids {
            row.clear();
            row.extend(cols.iter().map(|&j| {
                let raw = if j == hipfull {
                    region_premiums[self.people[id].region]
                } else {
                    self.raw_feature(id, j)
                };
                self.scaler.apply(j, raw)
            }));
            obs.push_row(id, &row);
        }
        obs
    }

    fn step(&mut self, actions: &[Option<Action>]) -> Result<StepOutcome> {
        if self.finished {
            return Err(MafeError::Schema("step called on a finished episode".into()));
        }
        let t = self.t;
        let n = self.people.len();
        let g = self.cfg.n_regions;
        let queue = self.queue();
        check_step_actions(&self.specs, t, actions, |a| if a == HOSPITAL { queue.len() } else { n })?;

        // Planner.
        if let Some(a) = &actions[PLANNER] {
            let v = a.vector(&self.specs[PLANNER])?.to_vec();
            self.planner_allocate(&v);
        }
        if let Some(x) = self.cfg.public_health_override {
            self.public_spend = vec![x; g];
        }
        // Completed bed projects.
        if !self.cfg.beds_unlimited {
            let due: Vec<Project> = self.projects.iter().filter(|p| p.due <= t).cloned().collect();
            self.projects.retain(|p| p.due > t);
            for p in due {
                self.beds[p.region] += p.beds;
            }
        }

        // Premium offers and insurance decisions.
        if let Some(a) = &actions[INSURER] {
            let all: Vec<usize> = (0..n).collect();
            let scores = a.scores_by_id(&self.specs[INSURER], &all, n)?;
            let draws = uniforms(self.seed, TAG_INSURANCE, t, n);
            let mut weights = vec![0.0; n];
            for r in 0..g {
                let members: Vec<usize> = (0..n).filter(|&i| self.people[i].region == r).collect();
                let incomes: Vec<f64> = members.iter().map(|&i| self.people[i].features[F_FTOTVAL]).collect();
                for (&i, w) in members.iter().zip(subsidy_weights(&incomes)) {
                    weights[i] = w;
                }
            }
            for i in 0..n {
                let premium = scores[i] * self.cfg.max_premium;
                let subsidy = weights[i] * self.subsidy_pool[self.people[i].region];
                let effective = (premium - subsidy).max(0.0);
                let f = &self.people[i].features;
                let p = accept_probability(f[F_FTOTVAL], effective, f[F_FAMSIZE]);
                self.states[i].premium = premium;
                self.states[i].insured = draws[i] < p;
            }
        }
        if self.cfg.force_insured {
            for s in &mut self.states {
                s.insured = true;
            }
        }

        // Hospital allocation from the queue as it stood at the start of the step.
        let mut free: Vec<usize> = {
            let occ = self.occupancy();
            self.beds.iter().zip(&occ).map(|(b, o)| b.saturating_sub(*o)).collect()
        };
        if let Some(a) = &actions[HOSPITAL] {
            let scores = a.scores_by_id(&self.specs[HOSPITAL], &queue, n)?;
            for id in rank_by_score(&queue, |i| scores[i]) {
                let r = self.people[id].region;
                if free[r] > 0 {
                    free[r] -= 1;
                    self.states[id].in_hosp = true;
                } else {
                    self.states[id].waitbed += 1;
                }
            }
        } else {
            for &id in &queue {
                self.states[id].waitbed += 1;
            }
        }
        let hospital_costs = self.cfg.hosp_cost
            * self.states.iter().filter(|s| s.in_hosp && s.insured).count() as f64;

        let mut c = self.schema.empty_step(t);
        let mut n_h = vec![0.0; g];
        let mut n_s = vec![0.0; g];
        let mut n_t = vec![0.0; g];
        let mut n_m = vec![0.0; g];

        // Illness resolution and new illness, both from start-of-step status.
        let u_term = uniforms(self.seed, TAG_TERMINATE, t, n);
        let u_sick = uniforms(self.seed, TAG_SICK, t, n);
        let was_ill: Vec<bool> = self.states.iter().map(|s| s.status == Status::Ill).collect();
        let mut deaths = Vec::new();
        for i in 0..n {
            let r = self.people[i].region;
            if was_ill[i] {
                let s = &mut self.states[i];
                s.illtime += 1;
                let tr = illness_transition(&self.cfg, s.illtime as f64, s.waitbed as f64, s.health);
                let u = u_term[i];
                if u < tr.death {
                    n_t[r] += 1.0;
                    n_m[r] += 1.0;
                    deaths.push(i);
                } else if u < tr.terminate {
                    n_t[r] += 1.0;
                    s.status = Status::Healthy;
                    s.illtime = 0;
                    s.waitbed = 0;
                    s.in_hosp = false;
                }
            } else {
                n_h[r] += 1.0;
                let s = &mut self.states[i];
                if u_sick[i] < sick_probability(self.cfg.sick_a, self.cfg.sick_b, s.insured, s.health) {
                    n_s[r] += 1.0;
                    s.status = Status::Ill;
                    s.illtime = 0;
                    s.waitbed = 0;
                }
            }
        }
        for id in deaths {
            self.replace(id);
        }
        if self.cfg.force_insured {
            for s in &mut self.states {
                s.insured = true;
            }
        }

        // Public health drift of the mental-health items, then HEALTH.
        let u_pub = uniforms(self.seed, TAG_PUBLIC, t, n);
        let p_imp: Vec<f64> = (0..g)
            .map(|r| self.cfg.improvement.probability(self.public_spend[r], g, self.cfg.planner_budget))
            .collect();
        let step = self.cfg.health_item_step;
        for i in 0..n {
            let dir = self.cfg.improvement.outcome(p_imp[self.people[i].region], u_pub[i]);
            if dir != 0 {
                let f = &mut self.people[i].features;
                for j in HEALTH_ITEMS {
                    f[j] = (f[j] - f64::from(dir) * step).clamp(0.0, 4.0);
                }
            }
            self.states[i].health = self.cfg.health_scorer.score_unchecked(&self.people[i].features);
        }

        let income: f64 = self.states.iter().filter(|s| s.insured).map(|s| s.premium).sum();
        let profit = income - hospital_costs;
        self.cum_profit += profit;

        let mut n_i = vec![0.0; g];
        let mut n_g = vec![0.0; g];
        for (p, s) in self.people.iter().zip(&self.states) {
            n_g[p.region] += 1.0;
            if s.insured {
                n_i[p.region] += 1.0;
            }
        }
        let total = |v: &[f64]| v.iter().sum::<f64>();
        c.reward = vec![
            profit,
            total(&n_i),
            total(&n_s),
            total(&n_m),
            total(&n_g),
            total(&n_h),
            total(&n_t),
        ];
        for r in 0..g {
            c.add_fair(&self.schema, 0, r, n_i[r], n_g[r]);
            c.add_fair(&self.schema, 1, r, n_s[r], n_h[r]);
            c.add_fair(&self.schema, 2, r, n_m[r], n_t[r]);
            let rc = &mut self.region_counts[r];
            rc[0] += n_s[r];
            rc[1] += n_h[r];
            rc[2] += n_m[r];
            rc[3] += n_t[r];
        }
        self.cum_deaths += total(&n_m);
        self.cum_terminations += total(&n_t);
        self.cum_sick += total(&n_s);
        self.cum_healthy += total(&n_h);

        self.t += 1;
        let termination = if self.cum_profit < 0.0 {
            Some(Termination::FinancialFailure)
        } else if self.people.is_empty() {
            Some(Termination::PopulationDepleted)
        } else if self.t >= self.cfg.horizon {
            Some(Termination::Horizon)
        } else {
            None
        };
        self.finished = termination.is_some();
        Ok(StepOutcome { components: c, termination })
    }

    fn indicators(&self) -> Vec<(String, f64)> {
        let n = self.people.len().max(1) as f64;
        let insured = self.states.iter().filter(|s| s.insured).count() as f64;
        let mut out = vec![
            ("mortality_rate".to_string(), Self::cumulative_rate(self.cum_deaths, self.cum_terminations)),
            ("incidence_rate".to_string(), Self::cumulative_rate(self.cum_sick, self.cum_healthy)),
            ("insured_rate".to_string(), insured / n),
            ("ill".to_string(), self.states.iter().filter(|s| s.status == Status::Ill).count() as f64),
            ("queue".to_string(), self.queue().len() as f64),
            ("beds".to_string(), self.beds.iter().sum::<usize>() as f64),
            ("mean_health".to_string(), self.states.iter().map(|s| s.health).sum::<f64>() / n),
            ("planner_budget".to_string(), self.budget),
            ("cumulative_profit".to_string(), self.cum_profit),
        ];
        let sizes = self.region_sizes();
        for r in 0..self.cfg.n_regions {
            let ins = self
                .people
                .iter()
                .zip(&self.states)
                .filter(|(p, s)| p.region == r && s.insured)
                .count() as f64;
            let rc = self.region_counts[r];
            out.push((format!("insured_rate_r{r}"), ins / sizes[r].max(1) as f64));
            out.push((format!("incidence_rate_r{r}"), Self::cumulative_rate(rc[0], rc[1])));
            out.push((format!("mortality_rate_r{r}"), Self::cumulative_rate(rc[2], rc[3])));
        }
        out
    }
}
