//! Loan pipeline: admissions thresholds, a capacity-limited disbursement queue
//! and amortized repayment with debt relief.
//!
//! Agents: `admissions` (per-group thresholds), `disbursement` (queue scores),
//! `debt` (per-group fraction of the installment waived from the request).

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Scaler;
use crate::error::{MafeError, Result};
use crate::framework::{
    check_step_actions, ActionKind, AgentSpec, ComponentSchema, Environment, ObservationMatrix,
    StepOutcome, Termination,
};
use crate::population::{
    generate_population, load_csv_path, AffineScorer, CsvSchema, FeatureDist, GroupProfile,
    Individual, PopulationConfig, RegionRule, Transform,
};
use crate::rng;

pub const FEATURES: [&str; 8] = [
    "RACE",
    "INTRATE",
    "BALANCE",
    "ANNUALINC",
    "DTI",
    "FICO_RANGE_LOW",
    "FICO_RANGE_HIGH",
    "MTHS_SINCE_LAST_DELINQ",
];
const ENV_FEATURES: [&str; 7] = [
    "TIMETOMATURITY",
    "WARNING",
    "TOTREQUEST",
    "TOTRECEIVE",
    "QUALSCORE",
    "TOTBANKPROF",
    "CURRINSTALL",
];
const N_CONST: usize = 2;
const F_INTRATE: usize = 1;
const F_BALANCE: usize = 2;
const F_FICO_LOW: usize = 5;
const F_FICO_HIGH: usize = 6;
const F_MTHS: usize = 7;
const E_TTM: usize = 8;
const E_WARNING: usize = 9;
const E_TOTREQUEST: usize = 10;
const E_TOTRECEIVE: usize = 11;
const E_QUALSCORE: usize = 12;
const E_TOTBANKPROF: usize = 13;
const E_CURRINSTALL: usize = 14;

const TAG_POPULATION: u64 = 0x10a0;
const TAG_APPLICANTS: u64 = 0x10a1;
const TAG_PAYMENT: u64 = 0x10a2;

pub const ADMISSIONS: usize = 0;
pub const DISBURSEMENT: usize = 1;
pub const DEBT: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoanConfig {
    pub population_size: usize,
    pub horizon: usize,
    pub group_proportions: Vec<f64>,
    pub applicants_per_step: usize,
    pub disbursement_cap: usize,
    /// Loan term in steps.
    pub loan_term: usize,
    /// Cost of funds as a fraction of the mean per-step customer rate.
    pub deposit_rate_fraction: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    pub delta_fico_low: f64,
    pub delta_fico_high: f64,
    pub delta_mths_since_last_delinq: f64,
    pub threshold_arity: usize,
    pub debt_arity: usize,
    /// A loan is behind while received < behind_fraction * requested.
    pub behind_fraction: f64,
    pub behind_steps: usize,
    pub payoff_tolerance: f64,
    pub profit_norm: f64,
    pub qualification: AffineScorer,
    pub propensity: AffineScorer,
    /// One profile per group over [`FEATURES`].
    pub profiles: Vec<GroupProfile>,
    /// Optional population file (columns named as in [`FEATURES`]).
    pub population_csv: Option<PathBuf>,
    pub discount: f64,
}

const CENTERS: [f64; 8] = [0.0, 0.13, 12_500.0, 70_000.0, 18.0, 680.0, 684.0, 30.0];

impl Default for LoanConfig {
    fn default() -> Self {
        let profile = |race: f64, rate: f64, bal: f64, inc: f64, dti: f64, fico: f64, mths: f64| {
            GroupProfile {
                features: vec![
                    FeatureDist::Constant { value: race },
                    FeatureDist::normal(rate, 0.035, 0.05, 0.30),
                    FeatureDist::normal(bal, 7_000.0, 1_000.0, 40_000.0),
                    FeatureDist::normal(inc, 25_000.0, 15_000.0, 300_000.0),
                    FeatureDist::normal(dti, 7.0, 0.0, 45.0),
                    FeatureDist::integer(fico, 35.0, 600.0, 845.0),
                    FeatureDist::integer(fico + 4.0, 35.0, 604.0, 850.0),
                    FeatureDist::integer(mths, 15.0, 0.0, 120.0),
                ],
            }
        };
        LoanConfig {
            population_size: 1000,
            horizon: 400,
            group_proportions: vec![0.5, 0.5],
            applicants_per_step: 20,
            disbursement_cap: 10,
            loan_term: 36,
            deposit_rate_fraction: 0.5,
            noise_mean: 0.0,
            noise_std: 0.025,
            delta_fico_low: 100.0,
            delta_fico_high: 100.0,
            delta_mths_since_last_delinq: 5.0,
            threshold_arity: 2,
            debt_arity: 2,
            behind_fraction: 0.9,
            behind_steps: 2,
            payoff_tolerance: 0.01,
            profit_norm: 8.9e4,
            qualification: AffineScorer::centered(
                &[0.0, -8.0, -1e-5, 5e-6, -0.04, 0.015, 0.015, 0.01],
                &CENTERS,
                0.0,
                Transform::Logistic,
            ),
            propensity: AffineScorer::centered(
                &[0.0, -0.5, -2e-6, 1e-6, -0.004, 0.002, 0.0, 0.001],
                &CENTERS,
                0.9,
                Transform::Clip { lo: 0.0, hi: 1.0 },
            ),
            profiles: vec![
                profile(0.0, 0.11, 14_000.0, 85_000.0, 16.0, 705.0, 40.0),
                profile(1.0, 0.15, 11_000.0, 55_000.0, 22.0, 655.0, 25.0),
            ],
            population_csv: None,
            discount: 1.0,
        }
    }
}

impl LoanConfig {
    pub fn reward_norms(&self) -> Vec<f64> {
        vec![self.profit_norm, 1.0, 1.0]
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MafeError::Config(format!("[loan] {m}")));
        if self.disbursement_cap == 0 {
            return bad("disbursement_cap must be at least 1");
        }
        if self.noise_std < 0.0 {
            return bad("noise_std must be non-negative");
        }
        if !(1..=2).contains(&self.threshold_arity) || !(1..=2).contains(&self.debt_arity) {
            return bad("threshold_arity and debt_arity must be 1 or 2");
        }
        if self.group_proportions.len() != 2 {
            return bad("the loan environment has exactly two groups");
        }
        if self.loan_term == 0 || self.behind_steps == 0 {
            return bad("loan_term and behind_steps must be positive");
        }
        if self.qualification.weights.len() != FEATURES.len()
            || self.propensity.weights.len() != FEATURES.len()
        {
            return bad("scorers need one weight per feature");
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
            region_rule: RegionRule::SameAsGroup,
            seed: rng::mix(&[seed, TAG_POPULATION]),
        }
    }
}

/// `Y = r / (1 - (1 + r)^(t - m)) * B`: the level payment that retires `b`
/// over the `m - t` remaining steps.
pub fn installment_request(b: f64, r: f64, t: usize, m: usize) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    if t >= m {
        return (1.0 + r) * b;
    }
    let n = (m - t) as i32;
    if r == 0.0 {
        return b / f64::from(n);
    }
    r / (1.0 - (1.0 + r).powi(-n)) * b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Applicant,
    Waiting { since: usize },
    Repaying,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoanAccount {
    pub phase: Phase,
    pub balance: f64,
    /// Per-step rate.
    pub rate: f64,
    pub maturity: usize,
    pub installment: f64,
    pub consecutive_behind: usize,
    pub tot_requested: f64,
    pub tot_received: f64,
}

impl LoanAccount {
    fn idle() -> Self {
        LoanAccount {
            phase: Phase::Applicant,
            balance: 0.0,
            rate: 0.0,
            maturity: 0,
            installment: 0.0,
            consecutive_behind: 0,
            tot_requested: 0.0,
            tot_received: 0.0,
        }
    }

    pub fn warning(&self) -> bool {
        self.consecutive_behind >= 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaymentStatus {
    Current,
    Repaid,
    Defaulted,
}

/// One repayment step. The borrower is willing to pay `clip(p + noise)` of the
/// full installment; the bank requests `(1 - d)` of it; the payment is the
/// smaller of the two (never more than the payoff amount).
pub fn collect_payment(
    acc: &mut LoanAccount,
    t: usize,
    willingness: f64,
    debt_factor: f64,
    behind_fraction: f64,
    behind_steps: usize,
    tolerance: f64,
) -> (f64, PaymentStatus) {
    let full = installment_request(acc.balance, acc.rate, t.saturating_sub(1), acc.maturity);
    let payoff = (1.0 + acc.rate) * acc.balance;
    let requested = (1.0 - debt_factor) * full;
    let x = (willingness.clamp(0.0, 1.0) * full).min(requested).min(payoff);
    acc.balance = payoff - x;
    acc.installment = requested;
    acc.tot_requested += requested;
    acc.tot_received += x;
    if acc.tot_received < behind_fraction * acc.tot_requested {
        acc.consecutive_behind += 1;
    } else {
        acc.consecutive_behind = 0;
    }
    let status = if acc.balance <= tolerance {
        PaymentStatus::Repaid
    } else if acc.consecutive_behind >= behind_steps {
        PaymentStatus::Defaulted
    } else {
        PaymentStatus::Current
    };
    (x, status)
}

/// Sorts ids by score (descending), ties by id.
pub(crate) fn rank_by_score(ids: &[usize], score_of: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut v = ids.to_vec();
    v.sort_by(|&a, &b| score_of(b).total_cmp(&score_of(a)).then(a.cmp(&b)));
    v
}

pub struct LoanEnv {
    cfg: LoanConfig,
    specs: Vec<AgentSpec>,
    schema: ComponentSchema,
    file_population: Option<Vec<Individual>>,
    agent_cols: Vec<Vec<usize>>,
    scaler: Scaler,
    seed: u64,
    t: usize,
    people: Vec<Individual>,
    accounts: Vec<LoanAccount>,
    applicants: Vec<usize>,
    thresholds: Vec<f64>,
    debt: Vec<f64>,
    deposit_rate: f64,
    written_off: f64,
    cum_receipts: f64,
    cum_costs: f64,
    finished: bool,
}

impl LoanEnv {
    pub fn new(cfg: LoanConfig) -> Result<Self> {
        cfg.validate()?;
        let file_population = match &cfg.population_csv {
            Some(path) => {
                let schema = CsvSchema {
                    feature_names: FEATURES.iter().map(|s| s.to_string()).collect(),
                    n_const: N_CONST,
                    group_column: "RACE".into(),
                    region_column: None,
                };
                let pop = load_csv_path(path, &schema)?;
                if pop.is_empty() || pop.iter().any(|i| i.group > 1) {
                    return Err(MafeError::Config(
                        "[loan] population file must hold rows with RACE in {0, 1}".into(),
                    ));
                }
                Some(pop)
            }
            None => None,
        };
        let names = |list: &[&str]| -> Vec<String> { list.iter().map(|s| s.to_string()).collect() };
        let data_and_qual: Vec<&str> =
            FEATURES.iter().copied().chain(std::iter::once("QUALSCORE")).collect();
        let debt_obs: Vec<&str> = FEATURES.iter().copied().chain(ENV_FEATURES).collect();
        let specs = vec![
            AgentSpec {
                agent_id: ADMISSIONS,
                name: "admissions".into(),
                obs_features: names(&data_and_qual),
                action_kind: ActionKind::GroupVector { dims: cfg.threshold_arity },
                action_period: 1,
            },
            AgentSpec {
                agent_id: DISBURSEMENT,
                name: "disbursement".into(),
                obs_features: names(&data_and_qual),
                action_kind: ActionKind::IndividualScores,
                action_period: 1,
            },
            AgentSpec {
                agent_id: DEBT,
                name: "debt".into(),
                obs_features: names(&debt_obs),
                action_kind: ActionKind::GroupVector { dims: cfg.debt_arity },
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
            &["bank_profit"],
            &[("admission_rate", 1.0), ("default_rate", -1.0)],
            &[("admission", false), ("wait_time", true), ("default", false)],
            2,
        );
        let mut env = LoanEnv {
            thresholds: vec![0.0; cfg.threshold_arity],
            debt: vec![0.0; cfg.debt_arity],
            cfg,
            specs,
            schema,
            file_population,
            agent_cols,
            scaler: Scaler::default(),
            seed: 0,
            t: 0,
            people: Vec::new(),
            accounts: Vec::new(),
            applicants: Vec::new(),
            deposit_rate: 0.0,
            written_off: 0.0,
            cum_receipts: 0.0,
            cum_costs: 0.0,
            finished: false,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &LoanConfig {
        &self.cfg
    }

    pub fn people(&self) -> &[Individual] {
        &self.people
    }

    pub fn accounts(&self) -> &[LoanAccount] {
        &self.accounts
    }

    pub fn qualification(&self, id: usize) -> f64 {
        self.cfg.qualification.score_unchecked(&self.people[id].features)
    }

    fn ids_in(&self, pred: impl Fn(&Phase) -> bool) -> Vec<usize> {
        (0..self.people.len()).filter(|&i| pred(&self.accounts[i].phase)).collect()
    }

    pub fn waiting(&self) -> Vec<usize> {
        self.ids_in(|p| matches!(p, Phase::Waiting { .. }))
    }

    pub fn repaying(&self) -> Vec<usize> {
        self.ids_in(|p| matches!(p, Phase::Repaying))
    }

    pub fn applicants(&self) -> &[usize] {
        &self.applicants
    }

    pub fn pool_size(&self) -> usize {
        self.ids_in(|p| matches!(p, Phase::Applicant)).len()
    }

    fn rows_for(&self, agent: usize) -> Vec<usize> {
        match agent {
            ADMISSIONS => self.applicants.clone(),
            DISBURSEMENT => self.waiting(),
            _ => self.repaying(),
        }
    }

    fn raw_feature(&self, id: usize, j: usize) -> f64 {
        let a = &self.accounts[id];
        match j {
            F_BALANCE if a.phase == Phase::Repaying => a.balance,
            j if j < FEATURES.len() => self.people[id].features[j],
            E_TTM => a.maturity.saturating_sub(self.t) as f64,
            E_WARNING => f64::from(u8::from(a.warning())),
            E_TOTREQUEST => a.tot_requested,
            E_TOTRECEIVE => a.tot_received,
            E_QUALSCORE => self.qualification(id),
            E_TOTBANKPROF => self.cum_receipts - self.cum_costs,
            E_CURRINSTALL => a.installment,
            _ => unreachable!("feature index {j}"),
        }
    }

    fn group_value(v: &[f64], group: usize) -> f64 {
        if v.len() == 1 {
            v[0]
        } else {
            v[group]
        }
    }

    fn sample_applicants(&mut self) {
        let mut pool = self.ids_in(|p| matches!(p, Phase::Applicant));
        let mut r = rng::stream(self.seed, TAG_APPLICANTS, self.t as u64);
        let k = self.cfg.applicants_per_step.min(pool.len());
        pool.partial_shuffle(&mut r, k);
        let mut chosen = pool[..k].to_vec();
        chosen.sort_unstable();
        self.applicants = chosen;
    }

    fn terminate(&mut self, id: usize, repaid: bool) {
        let sign = if repaid { 1.0 } else { -1.0 };
        let f = &mut self.people[id].features;
        f[F_FICO_LOW] = (f[F_FICO_LOW] + sign * self.cfg.delta_fico_low).clamp(300.0, 850.0);
        f[F_FICO_HIGH] = (f[F_FICO_HIGH] + sign * self.cfg.delta_fico_high).clamp(300.0, 850.0);
        f[F_MTHS] = (f[F_MTHS] + sign * self.cfg.delta_mths_since_last_delinq).max(0.0);
        self.accounts[id] = LoanAccount::idle();
    }

    fn mean_qualification(&self, group: Option<usize>) -> f64 {
        let ids: Vec<usize> = (0..self.people.len())
            .filter(|&i| group.is_none_or(|g| self.people[i].group == g))
            .collect();
        if ids.is_empty() {
            return 0.0;
        }
        ids.iter().map(|&i| self.qualification(i)).sum::<f64>() / ids.len() as f64
    }
}

impl Environment for LoanEnv {
    fn name(&self) -> &str {
        "loan"
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
            None => generate_population(&self.cfg.population_config(seed))
                .expect("loan population config validated at construction"),
        };
        self.accounts = vec![LoanAccount::idle(); self.people.len()];
        let n = self.people.len() as f64;
        let mean_rate = self.people.iter().map(|p| p.features[F_INTRATE]).sum::<f64>() / n / 12.0;
        self.deposit_rate = self.cfg.deposit_rate_fraction * mean_rate;
        let mean_balance = self.people.iter().map(|p| p.features[F_BALANCE]).sum::<f64>() / n;
        let rows: Vec<Vec<f64>> = self.people.iter().map(|p| p.features.clone()).collect();
        let mut fallback: Vec<(f64, f64)> = vec![(0.0, 1.0); FEATURES.len()];
        let term = self.cfg.loan_term as f64;
        fallback.extend([
            (term / 2.0, term / 2.0),
            (0.5, 0.5),
            (0.0, mean_balance),
            (0.0, mean_balance),
            (0.5, 0.25),
            (0.0, 1e6),
            (0.0, mean_balance / term),
        ]);
        let data = Scaler::fit(&rows, &fallback[..FEATURES.len()]);
        self.scaler = Scaler {
            center: data.center.into_iter().chain(fallback[FEATURES.len()..].iter().map(|f| f.0)).collect(),
            scale: data.scale.into_iter().chain(fallback[FEATURES.len()..].iter().map(|f| f.1)).collect(),
        };
        self.thresholds = vec![0.0; self.cfg.threshold_arity];
        self.debt = vec![0.0; self.cfg.debt_arity];
        self.written_off = 0.0;
        self.cum_receipts = 0.0;
        self.cum_costs = 0.0;
        self.finished = self.cfg.horizon == 0;
        self.sample_applicants();
    }

    fn time(&self) -> usize {
        self.t
    }

    fn observe(&self, agent: usize) -> ObservationMatrix {
        let cols = &self.agent_cols[agent];
        let mut obs = ObservationMatrix::new(cols.len());
        let mut row = Vec::with_capacity(cols.len());
        for id in self.rows_for(agent) {
            row.clear();
            row.extend(cols.iter().map(|&j| self.scaler.apply(j, self.raw_feature(id, j))));
            obs.push_row(id, &row);
        }
        obs
    }

    fn step(&mut self, actions: &[Option<crate::framework::Action>]) -> Result<StepOutcome> {
        if self.finished {
            return Err(MafeError::Schema("step called on a finished episode".into()));
        }
        let t = self.t;
        let waiting = self.waiting();
        let repaying = self.repaying();
        let n = self.people.len();
        check_step_actions(&self.specs, t, actions, |a| match a {
            ADMISSIONS => self.applicants.len(),
            DISBURSEMENT => waiting.len(),
            _ => repaying.len(),
        })?;
        if let Some(a) = &actions[ADMISSIONS] {
            self.thresholds = a.vector(&self.specs[ADMISSIONS])?.to_vec();
        }
        if let Some(a) = &actions[DEBT] {
            self.debt = a.vector(&self.specs[DEBT])?.to_vec();
        }
        let scores = match &actions[DISBURSEMENT] {
            Some(a) => a.scores_by_id(&self.specs[DISBURSEMENT], &waiting, n)?,
            None => vec![0.0; n],
        };

        let mut c = self.schema.empty_step(t);
        let mut n_l = [0.0; 2];
        let mut n_a = [0.0; 2];
        let mut n_d = [0.0; 2];
        let mut n_t = [0.0; 2];
        let mut n_r = [0.0; 2];
        let mut n_f = [0.0; 2];

        // Repayments on loans disbursed in earlier steps.
        let noise = Normal::new(self.cfg.noise_mean, self.cfg.noise_std)
            .map_err(|e| MafeError::Config(format!("[loan] noise: {e}")))?;
        let mut r = rng::stream(self.seed, TAG_PAYMENT, t as u64);
        let draws: Vec<f64> = (0..n).map(|_| noise.sample(&mut r)).collect();
        let funded: f64 = repaying.iter().map(|&i| self.accounts[i].balance).sum::<f64>() + self.written_off;
        let mut receipts = 0.0;
        for &id in &repaying {
            let g = self.people[id].group;
            let p = self.cfg.propensity.score_unchecked(&self.people[id].features);
            let d = Self::group_value(&self.debt, g);
            let (x, status) = collect_payment(
                &mut self.accounts[id],
                t,
                p + draws[id],
                d,
                self.cfg.behind_fraction,
                self.cfg.behind_steps,
                self.cfg.payoff_tolerance,
            );
            receipts += x;
            match status {
                PaymentStatus::Current => {}
                PaymentStatus::Repaid => {
                    n_r[g] += 1.0;
                    self.terminate(id, true);
                }
                PaymentStatus::Defaulted => {
                    n_r[g] += 1.0;
                    n_f[g] += 1.0;
                    self.written_off += self.accounts[id].balance;
                    self.terminate(id, false);
                }
            }
        }

        // Disbursement from the queue as it stood at the start of the step.
        let order = rank_by_score(&waiting, |i| scores[i]);
        for &id in order.iter().take(self.cfg.disbursement_cap) {
            let g = self.people[id].group;
            let Phase::Waiting { since } = self.accounts[id].phase else { unreachable!() };
            n_d[g] += 1.0;
            n_t[g] += (t - since) as f64;
            let f = &self.people[id].features;
            self.accounts[id] = LoanAccount {
                phase: Phase::Repaying,
                balance: f[F_BALANCE],
                rate: f[F_INTRATE] / 12.0,
                maturity: t + self.cfg.loan_term,
                ..LoanAccount::idle()
            };
        }

        // Admissions.
        for &id in &self.applicants.clone() {
            let g = self.people[id].group;
            n_l[g] += 1.0;
            if self.qualification(id) >= Self::group_value(&self.thresholds, g) {
                n_a[g] += 1.0;
                self.accounts[id].phase = Phase::Waiting { since: t };
            }
        }

        let cost = self.deposit_rate * funded;
        let profit = receipts - cost;
        self.cum_receipts += receipts;
        self.cum_costs += cost;

        let sum = |a: [f64; 2]| a[0] + a[1];
        c.reward = vec![profit, sum(n_a), sum(n_f), sum(n_l), sum(n_r)];
        for g in 0..2 {
            c.add_fair(&self.schema, 0, g, n_a[g], n_l[g]);
            c.add_fair(&self.schema, 1, g, n_t[g], n_d[g]);
            c.add_fair(&self.schema, 2, g, n_f[g], n_r[g]);
        }

        self.t += 1;
        let termination = if self.cum_costs > self.cum_receipts {
            Some(Termination::FinancialFailure)
        } else if self.t >= self.cfg.horizon {
            Some(Termination::Horizon)
        } else {
            None
        };
        if termination.is_some() {
            self.finished = true;
            self.applicants.clear();
        } else {
            self.sample_applicants();
        }
        Ok(StepOutcome { components: c, termination })
    }

    fn indicators(&self) -> Vec<(String, f64)> {
        let mean_fico = self.people.iter().map(|p| p.features[F_FICO_LOW]).sum::<f64>()
            / self.people.len().max(1) as f64;
        vec![
            ("mean_qualification".into(), self.mean_qualification(None)),
            ("mean_qualification_g0".into(), self.mean_qualification(Some(0))),
            ("mean_qualification_g1".into(), self.mean_qualification(Some(1))),
            ("mean_fico_low".into(), mean_fico),
            ("waiting".into(), self.waiting().len() as f64),
            ("repaying".into(), self.repaying().len() as f64),
            ("cumulative_profit".into(), self.cum_receipts - self.cum_costs),
        ]
    }
}
