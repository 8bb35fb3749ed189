//! Education to employment pipeline: capacity-limited admissions, a university
//! budget split five ways, GPA and dropout dynamics, an employer setting
//! salaries, and a planner funding tertiary education, the university and
//! diversity incentives.
//!
//! Agents (all act every step): `admissions` (scores over applicants),
//! `university` (simplex of 5), `employer` (scores over workers), `planner`
//! (tree `[3, G]`).

use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loan::rank_by_score;
use super::{build_time, buy_units, uniforms, Improvement, Scaler};
use crate::error::{MafeError, Result};
use crate::framework::{
    check_step_actions, Action, ActionKind, AgentSpec, ComponentSchema, Environment,
    ObservationMatrix, StepOutcome, Termination,
};
use crate::policy::logistic;
use crate::population::{
    generate_population, load_csv_path, AffineScorer, CsvSchema, FeatureDist, GroupProfile,
    Individual, PopulationConfig, RegionRule, Transform,
};
use crate::rng;

pub const FEATURES: [&str; 15] = [
    "SEX", "MINRTY", "RACE", "NBAMEMG", "NDGMEMG", "REGION", "NOCPRMG", "SALARY", "HRSWK",
    "EMSEC", "EMSIZE", "UGLOAN", "GRLOAN", "DGRDG", "GPA",
];
const ENV_FEATURES: [&str; 17] = [
    "INENV",
    "INWORKF",
    "INUNIV",
    "INMINTYPGRM",
    "CURRENTGPA",
    "PLANBUDGET",
    "UNIVBUDGET",
    "ANNUALTUIT",
    "N_UNIV_UNITS",
    "N_FACULTY",
    "N_STUDENTS_CURR",
    "TIMEINUNIV",
    "TIMEINWORKF",
    "TIMEINENV",
    "DIVINVEST",
    "AGE",
    "AVE_SALARY",
];
const N_CONST: usize = 7;
const F_REGION: usize = 5;
const F_SALARY: usize = 7;
const F_DGRDG: usize = 13;
const F_GPA: usize = 14;

const TAG_POPULATION: u64 = 0x30e0;
const TAG_APPLICANTS: u64 = 0x30e1;
const TAG_GPA0: u64 = 0x30e2;
const TAG_GPA_NOISE: u64 = 0x30e3;
const TAG_LEAVE: u64 = 0x30e4;
const TAG_TERTIARY: u64 = 0x30e5;

pub const ADMISSIONS: usize = 0;
pub const UNIVERSITY: usize = 1;
pub const EMPLOYER: usize = 2;
pub const PLANNER: usize = 3;

/// Minority group index.
pub const MINORITY: usize = 1;

/// `sigma(a0 + a1 GPA + a2 TUIT + a3 T + a4 T^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaveCoefficients(pub [f64; 5]);

impl LeaveCoefficients {
    pub fn probability(&self, gpa: f64, tuition: f64, t: f64) -> f64 {
        let a = self.0;
        logistic(a[0] + a[1] * gpa + a[2] * tuition + a[3] * t + a[4] * t * t)
    }
}

/// Cumulative GPA after semester `t >= 1`.
pub fn cumulative_gpa(prev: f64, semester: f64, t: usize) -> f64 {
    ((t as f64 - 1.0) * prev + semester) / t as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmployerUtility {
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta: [f64; 4],
    /// Lower bound keeping the quadratic inverted.
    pub alpha2_floor: f64,
}

impl EmployerUtility {
    /// All inputs on unit scales: `gpa` in [0,1], `years` in [0,1], `exp` in [0,1].
    pub fn alpha2(&self, gpa: f64, years: f64, exp: f64) -> f64 {
        let b = self.beta;
        (b[0] + b[1] * gpa + b[2] * years + b[3] * (exp - exp * exp)).max(self.alpha2_floor)
    }

    pub fn utility(&self, salary: f64, div: f64, alpha2: f64) -> f64 {
        self.alpha0 + self.alpha1 * (salary + div) - alpha2 * salary * salary
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EduConfig {
    pub population_size: usize,
    pub horizon: usize,
    pub group_proportions: Vec<f64>,
    pub n_regions: usize,
    pub planner_budget: f64,
    pub applicants_per_step: usize,
    pub career_length: usize,
    /// Steps in university for undergraduate, master's and doctoral degrees.
    pub degree_steps: [usize; 3],
    pub max_stay: usize,
    pub full_tuition: f64,
    pub faculty_salary: f64,
    pub faculty_per_unit: usize,
    pub students_per_unit: usize,
    pub initial_units: usize,
    pub initial_univ_budget: f64,
    pub unit_base_cost: f64,
    pub unit_cost: f64,
    pub unit_build_base: f64,
    pub unit_build_per_unit: f64,
    pub mentorship_cost: f64,
    pub max_salary: f64,
    pub gpa_step_noise: f64,
    pub gpa_init_noise: f64,
    pub gamma_tuition: f64,
    pub gamma_mentor: f64,
    /// Centre shift of the initial GPA noise when supported.
    pub support_shift: f64,
    /// Tuition fraction at or below which a scholarship counts as significant.
    pub significant_tuition: f64,
    pub leave: LeaveCoefficients,
    /// Optional coefficients for master's and doctoral students.
    pub leave_masters: Option<LeaveCoefficients>,
    pub leave_doctoral: Option<LeaveCoefficients>,
    pub employer: EmployerUtility,
    pub improvement: Improvement,
    /// GPA change of a tertiary-pool member per improvement / deterioration.
    pub tertiary_step: f64,
    pub profit_norm: f64,
    /// Baseline academic merit in [0, 4] from [`FEATURES`].
    pub merit_scorer: AffineScorer,
    pub profiles: Vec<GroupProfile>,
    pub full_scholarship: bool,
    pub mentorship_all: bool,
    /// Tertiary spend per region, replacing the planner's choice.
    pub tertiary_override: Option<f64>,
    /// Diversity spend per step, replacing the planner's choice.
    pub diversity_override: Option<f64>,
    pub population_csv: Option<PathBuf>,
    pub discount: f64,
}

impl Default for EduConfig {
    fn default() -> Self {
        let profile = |minority: f64, gpa: f64, loan: f64| GroupProfile {
            features: vec![
                FeatureDist::Bernoulli { p: 0.5 },
                FeatureDist::Constant { value: minority },
                FeatureDist::integer(1.0 + 2.0 * minority, 0.8, 1.0, 5.0),
                FeatureDist::integer(4.0, 2.0, 1.0, 7.0),
                FeatureDist::integer(4.0, 2.0, 1.0, 7.0),
                FeatureDist::Constant { value: 0.0 },
                FeatureDist::integer(4.0, 2.0, 1.0, 8.0),
                FeatureDist::Constant { value: 0.0 },
                FeatureDist::integer(40.0, 6.0, 10.0, 80.0),
                FeatureDist::integer(2.0, 1.0, 1.0, 4.0),
                FeatureDist::integer(4.0, 2.0, 1.0, 8.0),
                FeatureDist::normal(loan, loan / 2.0, 0.0, 200_000.0),
                FeatureDist::normal(loan / 2.0, loan / 2.0, 0.0, 200_000.0),
                FeatureDist::Constant { value: 0.0 },
                FeatureDist::normal(gpa, 0.45, 0.0, 4.0),
            ],
        };
        let mut w = vec![0.0; FEATURES.len()];
        let mut centers = vec![0.0; FEATURES.len()];
        w[F_GPA] = 0.8;
        centers[F_GPA] = 3.0;
        w[0] = 0.05;
        EduConfig {
            population_size: 1000,
            horizon: 100,
            group_proportions: vec![0.7, 0.3],
            n_regions: 9,
            planner_budget: 2.5e7,
            applicants_per_step: 30,
            career_length: 20,
            degree_steps: [4, 6, 10],
            max_stay: 12,
            full_tuition: 2e4,
            faculty_salary: 1e5,
            faculty_per_unit: 5,
            students_per_unit: 75,
            initial_units: 2,
            initial_univ_budget: 0.0,
            unit_base_cost: 1e6,
            unit_cost: 1e6,
            unit_build_base: 0.5,
            unit_build_per_unit: 0.5,
            mentorship_cost: 2000.0,
            max_salary: 1e5,
            gpa_step_noise: 0.25,
            gpa_init_noise: 0.4,
            gamma_tuition: 0.1,
            gamma_mentor: 0.3,
            support_shift: 0.1,
            significant_tuition: 0.5,
            leave: LeaveCoefficients([0.0, -1.0, 0.5, -0.05, 0.001]),
            leave_masters: None,
            leave_doctoral: None,
            employer: EmployerUtility {
                alpha0: 0.1,
                alpha1: 1.2,
                beta: [3.0, -1.1, -1.1, -1.1],
                alpha2_floor: 0.05,
            },
            improvement: Improvement { q: 0.39, r: 0.4, v_per_region: 16.0, w: 4.0, u: 0.2 },
            tertiary_step: 0.05,
            profit_norm: 6.0e5,
            merit_scorer: AffineScorer::centered(
                &w,
                &centers,
                2.9,
                Transform::Clip { lo: 0.0, hi: 4.0 },
            ),
            profiles: vec![profile(0.0, 3.1, 25_000.0), profile(1.0, 2.6, 32_000.0)],
            full_scholarship: false,
            mentorship_all: false,
            tertiary_override: None,
            diversity_override: None,
            population_csv: None,
            discount: 1.0,
        }
    }
}

impl EduConfig {
    pub fn reward_norms(&self) -> Vec<f64> {
        vec![self.profit_norm, 1.0, 1.0, 1.0, 1.0, 1.0]
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MafeError::Config(format!("[education] {m}")));
        if self.group_proportions.len() != 2 || self.profiles.len() != 2 {
            return bad("need two groups and two profiles");
        }
        if self.n_regions == 0 || self.career_length == 0 || self.max_stay == 0 {
            return bad("regions, career length and max stay must be at least 1");
        }
        let [u, m, d] = self.degree_steps;
        if !(0 < u && u <= m && m <= d) {
            return bad("degree steps must be positive and non-decreasing");
        }
        if self.planner_budget <= 0.0 || self.max_salary <= 0.0 || self.full_tuition < 0.0 {
            return bad("budget and max salary must be positive, tuition non-negative");
        }
        if self.merit_scorer.weights.len() != FEATURES.len() {
            return bad("merit scorer needs one weight per feature");
        }
        Ok(())
    }

    fn population_config(&self, seed: u64) -> PopulationConfig {
        PopulationConfig {
            size: self.population_size,
            group_proportions: self.group_proportions.clone(),
            feature_names: FEATURES.iter().map(|s| s.to_string()).collect(),
            n_const: N_CONST,
            profiles: self.profiles.clone(),
            region_rule: RegionRule::Uniform { n_regions: self.n_regions },
            seed: rng::mix(&[seed, TAG_POPULATION]),
        }
    }

    fn leave_for(&self, degree: u8) -> LeaveCoefficients {
        match degree {
            1 => self.leave_masters.unwrap_or(self.leave),
            d if d >= 2 => self.leave_doctoral.unwrap_or(self.leave),
            _ => self.leave,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Pool,
    Applicant,
    Student,
    Worker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonState {
    pub stage: Stage,
    pub time_in_env: usize,
    pub time_in_univ: usize,
    pub time_in_workf: usize,
    /// Latest semester GPA.
    pub semester_gpa: f64,
    /// Cumulative GPA.
    pub gpa: f64,
    pub tuition: f64,
    pub mentored: bool,
    /// 0 none, 1 undergraduate, 2 master's, 3 doctoral.
    pub degree: u8,
    pub salary: f64,
    pub ave_salary: f64,
    pub base_age: f64,
}

impl PersonState {
    fn pool(base_age: f64) -> Self {
        PersonState {
            stage: Stage::Pool,
            time_in_env: 0,
            time_in_univ: 0,
            time_in_workf: 0,
            semester_gpa: 0.0,
            gpa: 0.0,
            tuition: 1.0,
            mentored: false,
            degree: 0,
            salary: 0.0,
            ave_salary: 0.0,
            base_age,
        }
    }
}

/// One university budget action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversityRecord {
    pub t: usize,
    pub budget: f64,
    pub infrastructure: f64,
    pub salaries: f64,
    pub scholarships: f64,
    pub mentorship: f64,
    pub rollover: f64,
}

impl UniversityRecord {
    pub fn spent(&self) -> f64 {
        self.infrastructure + self.salaries + self.scholarships + self.mentorship
    }
}

/// One planner action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerRecord {
    pub t: usize,
    pub budget: f64,
    pub tertiary: f64,
    pub university: f64,
    pub diversity: f64,
}

impl PlannerRecord {
    pub fn spent(&self) -> f64 {
        self.tertiary + self.university + self.diversity
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct GroupTotals {
    utility: f64,
    worker_steps: f64,
    graduated: [f64; 3],
    cohort: [f64; 3],
    admitted: f64,
    applied: f64,
}

pub struct EduEnv {
    cfg: EduConfig,
    specs: Vec<AgentSpec>,
    schema: ComponentSchema,
    file_population: Option<Vec<Individual>>,
    agent_cols: Vec<Vec<usize>>,
    scaler: Scaler,
    seed: u64,
    t: usize,
    people: Vec<Individual>,
    states: Vec<PersonState>,
    applicants: Vec<usize>,
    units: usize,
    pending: Vec<(usize, usize)>,
    univ_budget: f64,
    coverage: f64,
    divinvest: f64,
    tertiary: Vec<f64>,
    /// Entrants per step and group.
    cohorts: Vec<[f64; 2]>,
    univ_ledger: Vec<UniversityRecord>,
    planner_ledger: Vec<PlannerRecord>,
    cum_profit: f64,
    totals: [GroupTotals; 2],
    finished: bool,
}

impl EduEnv {
    pub fn new(cfg: EduConfig) -> Result<Self> {
        cfg.validate()?;
        let file_population = match &cfg.population_csv {
            Some(path) => {
                let schema = CsvSchema {
                    feature_names: FEATURES.iter().map(|s| s.to_string()).collect(),
                    n_const: N_CONST,
                    group_column: "MINRTY".into(),
                    region_column: Some("REGION".into()),
                };
                let pop = load_csv_path(path, &schema)?;
                if pop.is_empty() || pop.iter().any(|i| i.group > 1 || i.region >= cfg.n_regions) {
                    return Err(MafeError::Config(format!(
                        "[education] population file needs MINRTY in {{0, 1}} and REGION < {}",
                        cfg.n_regions
                    )));
                }
                Some(pop)
            }
            None => None,
        };
        let owned = |list: &[&str]| -> Vec<String> { list.iter().map(|s| s.to_string()).collect() };
        let specs = vec![
            AgentSpec {
                agent_id: ADMISSIONS,
                name: "admissions".into(),
                obs_features: owned(&[
                    "SEX", "MINRTY", "RACE", "REGION", "NBAMEMG", "GPA", "AGE", "N_STUDENTS_CURR",
                ]),
                action_kind: ActionKind::IndividualScores,
                action_period: 1,
            },
            AgentSpec {
                agent_id: UNIVERSITY,
                name: "university".into(),
                obs_features: owned(&[
                    "MINRTY", "GPA", "CURRENTGPA", "ANNUALTUIT", "INMINTYPGRM", "TIMEINUNIV",
                    "UNIVBUDGET", "N_UNIV_UNITS", "N_FACULTY", "N_STUDENTS_CURR",
                ]),
                action_kind: ActionKind::BudgetTree { blocks: vec![5] },
                action_period: 1,
            },
            AgentSpec {
                agent_id: EMPLOYER,
                name: "employer".into(),
                obs_features: owned(&[
                    "SEX", "MINRTY", "RACE", "REGION", "NOCPRMG", "HRSWK", "EMSEC", "EMSIZE",
                    "DGRDG", "GPA", "TIMEINUNIV", "TIMEINWORKF", "SALARY", "AVE_SALARY", "DIVINVEST",
                ]),
                action_kind: ActionKind::IndividualScores,
                action_period: 1,
            },
            AgentSpec {
                agent_id: PLANNER,
                name: "planner".into(),
                obs_features: owned(&[
                    "MINRTY", "REGION", "GPA", "UGLOAN", "GRLOAN", "INENV", "INUNIV", "INWORKF",
                    "SALARY", "PLANBUDGET", "UNIVBUDGET", "DIVINVEST",
                ]),
                action_kind: ActionKind::BudgetTree { blocks: vec![3, cfg.n_regions] },
                action_period: 1,
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
            &["employer_profit"],
            &[
                ("admission_rate", 1.0),
                ("undergraduate_rate", 1.0),
                ("masters_rate", 1.0),
                ("doctoral_rate", 1.0),
                ("average_salary", 1.0),
            ],
            &[
                ("admission", false),
                ("undergraduate", false),
                ("masters", false),
                ("doctoral", false),
                ("salary", true),
            ],
            2,
        );
        let mut env = EduEnv {
            tertiary: vec![0.0; cfg.n_regions],
            cfg,
            specs,
            schema,
            file_population,
            agent_cols,
            scaler: Scaler::default(),
            seed: 0,
            t: 0,
            people: Vec::new(),
            states: Vec::new(),
            applicants: Vec::new(),
            units: 0,
            pending: Vec::new(),
            univ_budget: 0.0,
            coverage: 0.0,
            divinvest: 0.0,
            cohorts: Vec::new(),
            univ_ledger: Vec::new(),
            planner_ledger: Vec::new(),
            cum_profit: 0.0,
            totals: [GroupTotals::default(); 2],
            finished: false,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &EduConfig {
        &self.cfg
    }

    pub fn people(&self) -> &[Individual] {
        &self.people
    }

    pub fn states(&self) -> &[PersonState] {
        &self.states
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn capacity(&self) -> usize {
        self.units * self.cfg.students_per_unit
    }

    pub fn faculty(&self) -> usize {
        self.units * self.cfg.faculty_per_unit
    }

    pub fn university_ledger(&self) -> &[UniversityRecord] {
        &self.univ_ledger
    }

    pub fn planner_ledger(&self) -> &[PlannerRecord] {
        &self.planner_ledger
    }

    pub fn applicants(&self) -> &[usize] {
        &self.applicants
    }

    fn ids_in(&self, stage: Stage) -> Vec<usize> {
        (0..self.states.len()).filter(|&i| self.states[i].stage == stage).collect()
    }

    fn merit(&self, id: usize) -> f64 {
        self.cfg.merit_scorer.score_unchecked(&self.people[id].features)
    }

    fn raw_feature(&self, id: usize, j: usize, n_students: usize) -> f64 {
        let s = &self.states[id];
        let flag = |b: bool| f64::from(u8::from(b));
        match j.checked_sub(FEATURES.len()) {
            None => self.people[id].features[j],
            Some(0) => flag(s.stage != Stage::Pool),
            Some(1) => flag(s.stage == Stage::Worker),
            Some(2) => flag(s.stage == Stage::Student),
            Some(3) => flag(s.mentored),
            Some(4) => s.semester_gpa,
            Some(5) => self.cfg.planner_budget,
            Some(6) => self.univ_budget,
            Some(7) => s.tuition,
            Some(8) => self.units as f64,
            Some(9) => self.faculty() as f64,
            Some(10) => n_students as f64,
            Some(11) => s.time_in_univ as f64,
            Some(12) => s.time_in_workf as f64,
            Some(13) => s.time_in_env as f64,
            Some(14) => self.divinvest,
            Some(15) => s.base_age + s.time_in_env as f64,
            Some(16) => s.ave_salary,
            Some(k) => unreachable!("feature {k}"),
        }
    }

    fn draw_applicants(&mut self) {
        let mut pool = self.ids_in(Stage::Pool);
        let k = self.cfg.applicants_per_step.min(pool.len());
        let mut r = rng::stream(self.seed, TAG_APPLICANTS, self.t as u64);
        let (chosen, _) = pool.partial_shuffle(&mut r, k);
        let mut chosen = chosen.to_vec();
        chosen.sort_unstable();
        for &i in &chosen {
            self.states[i].stage = Stage::Applicant;
        }
        self.applicants = chosen;
    }

    fn planner_allocate(&mut self, a: &[f64]) {
        let b = self.cfg.planner_budget;
        let g = self.cfg.n_regions;
        let mut tertiary = 0.0;
        for r in 0..g {
            let x = b * a[0] * a[3 + r];
            self.tertiary[r] = x;
            tertiary += x;
        }
        let university = b * a[1];
        let diversity = b * a[2];
        self.univ_budget += university;
        self.divinvest = diversity;
        self.planner_ledger.push(PlannerRecord { t: self.t, budget: b, tertiary, university, diversity });
    }

    /// Returns false on a payroll shortfall.
    fn university_allocate(&mut self, a: &[f64], students: &[usize]) -> bool {
        let budget = self.univ_budget;
        let payroll = self.faculty() as f64 * self.cfg.faculty_salary;
        let share = |k: usize| budget * a[k];
        if share(1) + 1e-9 < payroll {
            self.univ_ledger.push(UniversityRecord {
                t: self.t,
                budget,
                infrastructure: 0.0,
                salaries: 0.0,
                scholarships: 0.0,
                mentorship: 0.0,
                rollover: budget,
            });
            return false;
        }
        let (n_units, infra) = buy_units(share(0), self.cfg.unit_base_cost, self.cfg.unit_cost);
        if n_units > 0 {
            let due = self.t + build_time(self.cfg.unit_build_base, self.cfg.unit_build_per_unit, n_units);
            self.pending.push((due, n_units));
        }
        let bills = self.cfg.full_tuition * students.len() as f64;
        self.coverage = if bills > 0.0 { (share(2) / bills).min(1.0) } else { 0.0 };
        let scholarships = self.coverage * bills;
        let minority: Vec<usize> =
            students.iter().copied().filter(|&i| self.people[i].group == MINORITY).collect();
        let n_mentored = if self.cfg.mentorship_cost > 0.0 {
            ((share(3) / self.cfg.mentorship_cost).floor() as usize).min(minority.len())
        } else {
            minority.len()
        };
        for &i in students {
            self.states[i].mentored = false;
        }
        for &i in &minority[..n_mentored] {
            self.states[i].mentored = true;
        }
        let mentorship = n_mentored as f64 * self.cfg.mentorship_cost;
        let spent = infra + payroll + scholarships + mentorship;
        let rec = UniversityRecord {
            t: self.t,
            budget,
            infrastructure: infra,
            salaries: payroll,
            scholarships,
            mentorship,
            rollover: budget - spent,
        };
        self.univ_budget = rec.rollover;
        self.univ_ledger.push(rec);
        true
    }

    fn retire(&mut self, id: usize) {
        let s = &self.states[id];
        let (ave, degree, gpa) = (s.ave_salary, s.degree, s.gpa);
        let f = &mut self.people[id].features;
        f[F_SALARY] = ave;
        f[F_DGRDG] = f64::from(degree);
        if degree > 0 || gpa > 0.0 {
            f[F_GPA] = gpa;
        }
        let age = self.states[id].base_age + self.states[id].time_in_env as f64;
        self.states[id] = PersonState::pool(age);
    }

    fn rate(num: f64, den: f64) -> f64 {
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

impl Environment for EduEnv {
    fn name(&self) -> &str {
        "education"
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
        self.people = match &self.file_population {
            Some(p) => p.clone(),
            None => {
                let mut p = generate_population(&self.cfg.population_config(seed))
                    .expect("education population config validated at construction");
                for ind in &mut p {
                    ind.features[F_REGION] = ind.region as f64;
                }
                p
            }
        };
        let mut r = rng::stream(seed, TAG_POPULATION, 1);
        self.states = self
            .people
            .iter()
            .map(|_| PersonState::pool(rand::Rng::random_range(&mut r, 18.0..24.0_f64).floor()))
            .collect();
        self.units = self.cfg.initial_units;
        self.pending.clear();
        self.univ_budget = self.cfg.initial_univ_budget;
        self.coverage = 0.0;
        self.divinvest = 0.0;
        self.tertiary = vec![0.0; self.cfg.n_regions];
        self.cohorts.clear();
        self.univ_ledger.clear();
        self.planner_ledger.clear();
        self.cum_profit = 0.0;
        self.totals = [GroupTotals::default(); 2];
        self.finished = self.cfg.horizon == 0;

        let rows: Vec<Vec<f64>> = (0..self.people.len())
            .map(|i| self.people[i].features.clone())
            .collect();
        let fallback = vec![(0.0, 1.0); FEATURES.len()];
        let data = Scaler::fit(&rows, &fallback);
        let n = self.people.len() as f64;
        let cap = (self.cfg.initial_units * self.cfg.students_per_unit) as f64;
        let env_scales: [(f64, f64); 17] = [
            (0.5, 0.5),
            (0.5, 0.5),
            (0.5, 0.5),
            (0.5, 0.5),
            (2.0, 2.0),
            (0.0, self.cfg.planner_budget),
            (0.0, self.cfg.planner_budget),
            (0.5, 0.5),
            (0.0, self.cfg.initial_units.max(1) as f64),
            (0.0, (self.cfg.initial_units.max(1) * self.cfg.faculty_per_unit) as f64),
            (0.0, cap.max(n / 10.0).max(1.0)),
            (0.0, self.cfg.max_stay as f64),
            (0.0, self.cfg.career_length as f64),
            (0.0, (self.cfg.max_stay + self.cfg.career_length) as f64),
            (0.0, self.cfg.planner_budget),
            (30.0, 10.0),
            (0.0, self.cfg.max_salary),
        ];
        self.scaler = Scaler {
            center: data.center.iter().copied().chain(env_scales.iter().map(|s| s.0)).collect(),
            scale: data.scale.iter().copied().chain(env_scales.iter().map(|s| s.1)).collect(),
        };
        self.draw_applicants();
    }

    fn time(&self) -> usize {
        self.t
    }

    fn observe(&self, agent: usize) -> ObservationMatrix {
        let ids = match agent {
            ADMISSIONS => self.applicants.clone(),
            UNIVERSITY => self.ids_in(Stage::Student),
            EMPLOYER => self.ids_in(Stage::Worker),
            _ => (0..self.people.len()).collect(),
        };
        let n_students = self.states.iter().filter(|s| s.stage == Stage::Student).count();
        let cols = &self.agent_cols[agent];
        let mut obs = ObservationMatrix::new(cols.len());
        let mut row = Vec::with_capacity(cols.len());
        for id in ids {
            row.clear();
            row.extend(cols.iter().map(|&j| self.scaler.apply(j, self.raw_feature(id, j, n_students))));
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
        let students = self.ids_in(Stage::Student);
        let workers = self.ids_in(Stage::Worker);
        let applicants = self.applicants.clone();
        check_step_actions(&self.specs, t, actions, |a| match a {
            ADMISSIONS => applicants.len(),
            UNIVERSITY => students.len(),
            EMPLOYER => workers.len(),
            _ => n,
        })?;
        let mut c = self.schema.empty_step(t);
        let mut failed = false;

        // Planner, then the university budget.
        if let Some(a) = &actions[PLANNER] {
            let v = a.vector(&self.specs[PLANNER])?.to_vec();
            self.planner_allocate(&v);
        }
        if let Some(x) = self.cfg.tertiary_override {
            self.tertiary = vec![x; self.cfg.n_regions];
        }
        if let Some(x) = self.cfg.diversity_override {
            self.divinvest = x;
        }
        let done: usize = self.pending.iter().filter(|p| p.0 <= t).map(|p| p.1).sum();
        self.pending.retain(|p| p.0 > t);
        self.units += done;
        if let Some(a) = &actions[UNIVERSITY] {
            let v = a.vector(&self.specs[UNIVERSITY])?.to_vec();
            failed = !self.university_allocate(&v, &students);
        }
        let tuition = if self.cfg.full_scholarship { 0.0 } else { 1.0 - self.coverage };
        for &i in &students {
            self.states[i].tuition = tuition;
            if self.cfg.mentorship_all && self.people[i].group == MINORITY {
                self.states[i].mentored = true;
            }
        }

        // Admissions.
        let mut entered = [0.0; 2];
        let mut applied = [0.0; 2];
        let slack = self.capacity().saturating_sub(students.len());
        let mut admitted = Vec::new();
        if let Some(a) = &actions[ADMISSIONS] {
            let scores = a.scores_by_id(&self.specs[ADMISSIONS], &applicants, n)?;
            let ranked = rank_by_score(&applicants, |i| scores[i]);
            admitted = ranked[..slack.min(ranked.len())].to_vec();
        }
        for &i in &applicants {
            applied[self.people[i].group] += 1.0;
            let s = &mut self.states[i];
            s.time_in_univ = 0;
            s.time_in_workf = 0;
            s.stage = Stage::Worker;
        }
        for &i in &admitted {
            entered[self.people[i].group] += 1.0;
            let s = &mut self.states[i];
            s.stage = Stage::Student;
            s.tuition = tuition;
            s.mentored = self.cfg.mentorship_all && self.people[i].group == MINORITY;
            s.gpa = 0.0;
            s.semester_gpa = 0.0;
            s.degree = 0;
        }
        self.cohorts.push(entered);
        let mut enrolled: Vec<usize> = students.iter().chain(&admitted).copied().collect();
        enrolled.sort_unstable();

        // Semester GPAs.
        let u0 = uniforms(self.seed, TAG_GPA0, t, n);
        let ue = uniforms(self.seed, TAG_GPA_NOISE, t, n);
        let cfg = &self.cfg;
        for &i in &enrolled {
            let merit = cfg.merit_scorer.score_unchecked(&self.people[i].features);
            let s = &mut self.states[i];
            s.time_in_univ += 1;
            let eps = cfg.gpa_step_noise * (2.0 * ue[i] - 1.0);
            let semester = if s.time_in_univ == 1 {
                let supported = s.tuition <= cfg.significant_tuition || s.mentored;
                let centre = if supported { cfg.support_shift } else { 0.0 };
                let gamma0 = centre + cfg.gpa_init_noise * (2.0 * u0[i] - 1.0);
                let g0 = (merit
                    + gamma0
                    + cfg.gamma_tuition * (1.0 - s.tuition)
                    + cfg.gamma_mentor * f64::from(u8::from(s.mentored)))
                .clamp(0.0, 4.0);
                g0 + eps
            } else {
                s.semester_gpa + eps
            };
            s.semester_gpa = semester.clamp(0.0, 4.0);
            s.gpa = cumulative_gpa(s.gpa, s.semester_gpa, s.time_in_univ);
        }

        // Graduations against the entering cohort of the matching step.
        let mut grad = [[0.0; 2]; 3];
        let mut cohort = [[0.0; 2]; 3];
        for (k, &steps) in self.cfg.degree_steps.iter().enumerate() {
            if let Some(start) = (t + 1).checked_sub(steps) {
                cohort[k] = self.cohorts[start];
            }
            for &i in &enrolled {
                if self.states[i].time_in_univ == steps {
                    grad[k][self.people[i].group] += 1.0;
                    self.states[i].degree = self.states[i].degree.max(k as u8 + 1);
                }
            }
        }

        // Leaving university.
        let ul = uniforms(self.seed, TAG_LEAVE, t, n);
        for &i in &enrolled {
            let s = &self.states[i];
            let p = self.cfg.leave_for(s.degree).probability(s.gpa, s.tuition, s.time_in_univ as f64);
            if ul[i] < p || s.time_in_univ >= self.cfg.max_stay {
                let s = &mut self.states[i];
                s.stage = Stage::Worker;
                s.time_in_workf = 0;
                s.mentored = false;
                let (deg, gpa) = (s.degree, s.gpa);
                self.people[i].features[F_DGRDG] = f64::from(deg);
                self.people[i].features[F_GPA] = gpa;
            }
        }

        // Employer: salaries for the workers present at the start of the step.
        let mut profit = 0.0;
        let mut salary_sum = [0.0; 2];
        let mut worker_count = [0.0; 2];
        if let Some(a) = &actions[EMPLOYER] {
            let scores = a.scores_by_id(&self.specs[EMPLOYER], &workers, n)?;
            let n_minority = workers.iter().filter(|&&i| self.people[i].group == MINORITY).count();
            let top_up = if n_minority > 0 { self.divinvest / n_minority as f64 } else { 0.0 };
            let career = self.cfg.career_length as f64;
            for &i in &workers {
                let g = self.people[i].group;
                let s = scores[i];
                let extra = if g == MINORITY { top_up } else { 0.0 };
                let st = &self.states[i];
                let gpa = (self.people[i].features[F_GPA] / 4.0).clamp(0.0, 1.0);
                let years = (st.time_in_univ as f64 / 10.0).min(1.0);
                let exp = (st.time_in_workf as f64 / career).min(1.0);
                let emp = &self.cfg.employer;
                let u = emp.utility(s, extra / self.cfg.max_salary, emp.alpha2(gpa, years, exp));
                profit += u;
                let salary = s * self.cfg.max_salary + extra;
                salary_sum[g] += salary;
                worker_count[g] += 1.0;
                self.totals[g].utility += u;
                self.totals[g].worker_steps += 1.0;
                let st = &mut self.states[i];
                st.salary = salary;
                st.ave_salary = (st.ave_salary * st.time_in_workf as f64 + salary)
                    / (st.time_in_workf as f64 + 1.0);
                st.time_in_workf += 1;
                self.people[i].features[F_SALARY] = salary;
            }
        }
        for &i in &workers {
            if self.states[i].time_in_workf >= self.cfg.career_length {
                self.retire(i);
            }
        }
        self.cum_profit += profit;

        // Tertiary investment acts on the pool.
        let ut = uniforms(self.seed, TAG_TERTIARY, t, n);
        let g = self.cfg.n_regions;
        let p_imp: Vec<f64> = (0..g)
            .map(|r| self.cfg.improvement.probability(self.tertiary[r], g, self.cfg.planner_budget))
            .collect();
        for i in 0..n {
            if self.states[i].stage == Stage::Pool {
                let dir = self.cfg.improvement.outcome(p_imp[self.people[i].region], ut[i]);
                let f = &mut self.people[i].features[F_GPA];
                *f = (*f + f64::from(dir) * self.cfg.tertiary_step).clamp(0.0, 4.0);
            }
        }
        for s in &mut self.states {
            if s.stage != Stage::Pool {
                s.time_in_env += 1;
            }
        }

        // Tuition income for the coming step.
        let n_enrolled = self.states.iter().filter(|s| s.stage == Stage::Student).count();
        let fee = self.cfg.full_tuition * if self.cfg.full_scholarship { 1.0 } else { 1.0 - self.coverage };
        self.univ_budget += fee * n_enrolled as f64;

        c.reward = vec![
            profit,
            entered[0] + entered[1],
            grad[0][0] + grad[0][1],
            grad[1][0] + grad[1][1],
            grad[2][0] + grad[2][1],
            salary_sum[0] + salary_sum[1],
            applied[0] + applied[1],
            cohort[0][0] + cohort[0][1],
            cohort[1][0] + cohort[1][1],
            cohort[2][0] + cohort[2][1],
            worker_count[0] + worker_count[1],
        ];
        for d in 0..2 {
            c.add_fair(&self.schema, 0, d, entered[d], applied[d]);
            for k in 0..3 {
                c.add_fair(&self.schema, 1 + k, d, grad[k][d], cohort[k][d]);
                self.totals[d].graduated[k] += grad[k][d];
                self.totals[d].cohort[k] += cohort[k][d];
            }
            c.add_fair(&self.schema, 4, d, salary_sum[d], worker_count[d]);
            self.totals[d].admitted += entered[d];
            self.totals[d].applied += applied[d];
        }

        self.t += 1;
        self.draw_applicants();
        let termination = if failed || self.cum_profit < 0.0 {
            Some(Termination::FinancialFailure)
        } else if self.t >= self.cfg.horizon {
            Some(Termination::Horizon)
        } else {
            None
        };
        self.finished = termination.is_some();
        Ok(StepOutcome { components: c, termination })
    }

    fn indicators(&self) -> Vec<(String, f64)> {
        let tot = &self.totals;
        let both = |f: &dyn Fn(&GroupTotals) -> f64| f(&tot[0]) + f(&tot[1]);
        let count = |st: Stage| self.states.iter().filter(|s| s.stage == st).count() as f64;
        let mut out = vec![
            ("graduation_rate".to_string(), Self::rate(both(&|g| g.graduated[0]), both(&|g| g.cohort[0]))),
            ("masters_rate".to_string(), Self::rate(both(&|g| g.graduated[1]), both(&|g| g.cohort[1]))),
            ("doctoral_rate".to_string(), Self::rate(both(&|g| g.graduated[2]), both(&|g| g.cohort[2]))),
            ("admission_rate".to_string(), Self::rate(both(&|g| g.admitted), both(&|g| g.applied))),
            ("mean_utility".to_string(), Self::rate(both(&|g| g.utility), both(&|g| g.worker_steps))),
            ("students".to_string(), count(Stage::Student)),
            ("workers".to_string(), count(Stage::Worker)),
            ("pool".to_string(), count(Stage::Pool)),
            ("units".to_string(), self.units as f64),
            ("university_budget".to_string(), self.univ_budget),
            ("cumulative_profit".to_string(), self.cum_profit),
            (
                "mean_merit".to_string(),
                (0..self.people.len()).map(|i| self.merit(i)).sum::<f64>() / self.people.len().max(1) as f64,
            ),
        ];
        for (d, g) in tot.iter().enumerate() {
            out.push((format!("graduation_rate_g{d}"), Self::rate(g.graduated[0], g.cohort[0])));
            out.push((format!("mean_utility_g{d}"), Self::rate(g.utility, g.worker_steps)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leave_examples() {
        let l = EduConfig::default().leave;
        let p = l.probability(4.0, 0.0, 4.0);
        assert!((p - logistic(-4.184)).abs() < 1e-15);
        assert!((p - 0.0150).abs() < 1e-4);
        assert!((l.probability(0.0, 1.0, 0.0) - 0.6225).abs() < 1e-4);
        assert_eq!(LeaveCoefficients([0.0; 5]).probability(3.0, 0.2, 7.0), 0.5);
    }

    #[test]
    fn gpa_recursion() {
        assert_eq!(cumulative_gpa(1.7, 3.0, 1), 3.0);
        assert_eq!(cumulative_gpa(3.0, 4.0, 2), 3.5);
    }

    #[test]
    fn employer_examples() {
        let e = EduConfig::default().employer;
        assert!((e.utility(0.0, 0.0, e.alpha2(0.0, 0.0, 0.0)) - 0.1).abs() < 1e-15);
        assert_eq!(e.alpha2(0.0, 0.0, 0.0), 3.0);
        assert!((e.utility(1.0, 0.0, 3.0) + 1.7).abs() < 1e-12);
        // Vertex at alpha1 / (2 alpha2).
        let peak = e.alpha1 / (2.0 * 1.9);
        assert!((peak - 0.3158).abs() < 1e-4);
        let u = |s: f64| e.utility(s, 0.0, 1.9);
        assert!(u(peak) > u(peak - 1e-3) && u(peak) > u(peak + 1e-3));
        // The default weights keep alpha2 >= 0.525; steeper ones hit the floor.
        assert!((e.alpha2(1.0, 1.0, 0.5) - 0.525).abs() < 1e-12);
        let steep = EmployerUtility { beta: [1.0, -1.1, -1.1, -1.1], ..e };
        assert_eq!(steep.alpha2(1.0, 1.0, 0.5), steep.alpha2_floor);
    }

    fn small() -> EduEnv {
        EduEnv::new(EduConfig { population_size: 120, horizon: 10, ..Default::default() }).unwrap()
    }

    #[test]
    fn admission_respects_slack_and_rank() {
        let mut env = small();
        env.units = 0;
        env.pending.push((0, 1));
        let apps = env.applicants.clone();
        // Units complete at t = 0 before admissions, so 75 seats for 30 applicants.
        let scores: Vec<f64> = apps.iter().map(|&i| (i % 7) as f64 / 7.0).collect();
        let actions = vec![
            Some(Action::Scores { row_ids: apps.clone(), values: scores }),
            Some(Action::Vector(vec![0.0, 1.0, 0.0, 0.0, 0.0])),
            Some(Action::Scores { row_ids: vec![], values: vec![] }),
            Some(Action::Vector({
                let mut v = vec![0.0, 1.0, 0.0];
                v.extend([1.0 / 9.0; 9]);
                v
            })),
        ];
        env.univ_budget = 1e7;
        env.step(&actions).unwrap();
        assert_eq!(env.units, 1);
        assert!(env.states.iter().filter(|s| s.stage == Stage::Student).count() <= 75);
    }

    #[test]
    fn slack_one_takes_top_score() {
        let mut env =
            EduEnv::new(EduConfig { population_size: 400, horizon: 10, ..Default::default() }).unwrap();
        let apps = env.applicants.clone();
        let cap = env.capacity();
        // Fill the university to one below capacity.
        let others: Vec<usize> = (0..env.people.len()).filter(|i| !apps.contains(i)).collect();
        for &i in &others[..cap - 1] {
            env.states[i].stage = Stage::Student;
        }
        let best = apps[3];
        let scores: Vec<f64> = apps.iter().map(|&i| if i == best { 0.8 } else { 0.4 }).collect();
        let students = env.ids_in(Stage::Student);
        let actions = vec![
            Some(Action::Scores { row_ids: apps.clone(), values: scores }),
            Some(Action::Vector(vec![0.0, 1.0, 0.0, 0.0, 0.0])),
            Some(Action::Scores { row_ids: vec![], values: vec![] }),
            Some(Action::Vector({
                let mut v = vec![0.0, 1.0, 0.0];
                v.extend([1.0 / 9.0; 9]);
                v
            })),
        ];
        env.univ_budget = 1e7;
        env.step(&actions).unwrap();
        assert_eq!(env.states[best].time_in_univ, 1);
        for &i in &apps {
            if i != best {
                assert_eq!(env.states[i].stage, Stage::Worker);
            }
        }
        assert_eq!(students.len(), cap - 1);
    }

    #[test]
    fn payroll_shortfall_fails() {
        let mut env = small();
        env.univ_budget = 0.0;
        let students = env.ids_in(Stage::Student);
        assert!(!env.university_allocate(&[0.0, 1.0, 0.0, 0.0, 0.0], &students));
        env.univ_budget = 1e6;
        assert!(env.university_allocate(&[0.0, 1.0, 0.0, 0.0, 0.0], &students));
        let rec = env.univ_ledger.last().unwrap();
        assert_eq!(rec.salaries, 1e6);
        assert!((rec.spent() + rec.rollover - rec.budget).abs() < 1e-9);
    }

    #[test]
    fn scholarship_saturates() {
        let mut env = small();
        let students: Vec<usize> = (0..4).collect();
        env.univ_budget = 1e6 + 4.0 * env.cfg.full_tuition;
        let share = 4.0 * env.cfg.full_tuition / env.univ_budget;
        assert!(env.university_allocate(&[0.0, 1.0 - share, share, 0.0, 0.0], &students));
        assert!((env.coverage - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diversity_top_up_split() {
        let mut env = small();
        env.cfg.diversity_override = Some(1000.0);
        let minority: Vec<usize> =
            (0..env.people.len()).filter(|&i| env.people[i].group == MINORITY).take(2).collect();
        for s in &mut env.states {
            s.stage = Stage::Pool;
        }
        for &i in &minority {
            env.states[i].stage = Stage::Worker;
        }
        env.applicants.clear();
        let actions = vec![
            Some(Action::Scores { row_ids: vec![], values: vec![] }),
            Some(Action::Vector(vec![0.0, 1.0, 0.0, 0.0, 0.0])),
            Some(Action::Scores { row_ids: minority.clone(), values: vec![0.0, 0.0] }),
            Some(Action::Vector({
                let mut v = vec![0.0, 1.0, 0.0];
                v.extend([1.0 / 9.0; 9]);
                v
            })),
        ];
        env.univ_budget = 1e7;
        let out = env.step(&actions).unwrap();
        for &i in &minority {
            assert_eq!(env.states[i].salary, 500.0);
        }
        assert_eq!(out.components.reward[5], 1000.0);
    }
}
