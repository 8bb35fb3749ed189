use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{MafeError, Result};

/// Layout of the per-step reward and fairness component vectors.
///
/// Reward components hold `n_direct` direct values, then `n_rate` numerators,
/// then `n_rate` denominators. Fairness components hold, for each measure, one
/// `(numerator, denominator)` pair per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSchema {
    pub n_direct: usize,
    pub n_rate: usize,
    pub n_fair_measures: usize,
    pub n_groups: usize,
    /// One label per aggregated reward (`n_direct + n_rate`).
    pub reward_labels: Vec<String>,
    /// One label per fairness measure.
    pub fairness_labels: Vec<String>,
    /// +1 for rates that are good when high, -1 for rates to be minimized
    /// (default, incidence, mortality). Applied when computing totals.
    pub rate_signs: Vec<f64>,
    /// Measures whose group rates are divided by the sum of group rates before
    /// the disparity is taken (wait time and salary disparities).
    pub normalize_by_rate_sum: Vec<bool>,
}

impl ComponentSchema {
    pub fn new(
        direct: &[&str],
        rates: &[(&str, f64)],
        measures: &[(&str, bool)],
        n_groups: usize,
    ) -> Self {
        let mut reward_labels: Vec<String> = direct.iter().map(|s| s.to_string()).collect();
        reward_labels.extend(rates.iter().map(|(s, _)| s.to_string()));
        ComponentSchema {
            n_direct: direct.len(),
            n_rate: rates.len(),
            n_fair_measures: measures.len(),
            n_groups,
            reward_labels,
            fairness_labels: measures.iter().map(|(s, _)| s.to_string()).collect(),
            rate_signs: rates.iter().map(|(_, s)| *s).collect(),
            normalize_by_rate_sum: measures.iter().map(|(_, n)| *n).collect(),
        }
    }

    pub fn reward_len(&self) -> usize {
        self.n_direct + 2 * self.n_rate
    }

    pub fn fairness_len(&self) -> usize {
        2 * self.n_groups * self.n_fair_measures
    }

    /// Number of aggregated rewards K.
    pub fn n_rewards(&self) -> usize {
        self.n_direct + self.n_rate
    }

    /// Offset of the (numerator, denominator) pair for measure `m`, group `d`.
    pub fn fair_index(&self, m: usize, d: usize) -> usize {
        2 * self.n_groups * m + 2 * d
    }

    pub fn empty_step(&self, t: usize) -> StepComponents {
        StepComponents {
            t,
            reward: vec![0.0; self.reward_len()],
            fairness: vec![0.0; self.fairness_len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepComponents {
    pub t: usize,
    pub reward: Vec<f64>,
    pub fairness: Vec<f64>,
}

impl StepComponents {
    pub fn add_fair(&mut self, schema: &ComponentSchema, m: usize, d: usize, num: f64, den: f64) {
        let i = schema.fair_index(m, d);
        self.fairness[i] += num;
        self.fairness[i + 1] += den;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentAccumulator {
    pub reward_sums: Vec<f64>,
    pub fairness_sums: Vec<f64>,
    pub steps: usize,
}

impl ComponentAccumulator {
    pub fn new(schema: &ComponentSchema) -> Self {
        ComponentAccumulator {
            reward_sums: vec![0.0; schema.reward_len()],
            fairness_sums: vec![0.0; schema.fairness_len()],
            steps: 0,
        }
    }

    pub fn accumulate(&mut self, step: &StepComponents) -> Result<()> {
        if step.reward.len() != self.reward_sums.len()
            || step.fairness.len() != self.fairness_sums.len()
        {
            return Err(MafeError::Schema(format!(
                "step {} has {}+{} components, accumulator expects {}+{}",
                step.t,
                step.reward.len(),
                step.fairness.len(),
                self.reward_sums.len(),
                self.fairness_sums.len()
            )));
        }
        for (s, v) in self.reward_sums.iter_mut().zip(&step.reward) {
            *s += v;
        }
        for (s, v) in self.fairness_sums.iter_mut().zip(&step.fairness) {
            *s += v;
        }
        self.steps += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub value: f64,
    /// False when the denominator was zero and the value defaulted to 0.
    pub defined: bool,
}

pub fn ratio(num: f64, den: f64) -> Ratio {
    if den == 0.0 {
        Ratio { value: 0.0, defined: false }
    } else {
        Ratio { value: num / den, defined: true }
    }
}

/// Aggregated rewards plus the labels of rates whose denominators summed to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub values: Vec<f64>,
    pub undefined: BTreeSet<String>,
}

/// Direct sums followed by aggregated rates (sign applied).
pub fn total_rewards(acc: &ComponentAccumulator, schema: &ComponentSchema) -> Result<Aggregate> {
    if acc.reward_sums.len() != schema.reward_len() {
        return Err(MafeError::Schema(format!(
            "accumulator has {} reward sums, schema expects {}",
            acc.reward_sums.len(),
            schema.reward_len()
        )));
    }
    let (j, l) = (schema.n_direct, schema.n_rate);
    let mut values = acc.reward_sums[..j].to_vec();
    let mut undefined = BTreeSet::new();
    for i in 0..l {
        let r = ratio(acc.reward_sums[j + i], acc.reward_sums[j + l + i]);
        if !r.defined {
            undefined.insert(schema.reward_labels[j + i].clone());
        }
        let sign = schema.rate_signs.get(i).copied().unwrap_or(1.0);
        values.push(sign * r.value);
    }
    Ok(Aggregate { values, undefined })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub value: f64,
    pub group_rates: Vec<f64>,
    /// Groups whose denominator summed to zero.
    pub undefined_groups: Vec<usize>,
}

fn group_rates(sums: &[f64], m: usize, d: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    let base = 2 * d * m;
    if sums.len() < base + 2 * d {
        return Err(MafeError::Schema(format!(
            "fairness sums of length {} cannot hold measure {m} for {d} groups",
            sums.len()
        )));
    }
    let mut rates = Vec::with_capacity(d);
    let mut undefined = Vec::new();
    for g in 0..d {
        let r = ratio(sums[base + 2 * g], sums[base + 2 * g + 1]);
        if !r.defined {
            undefined.push(g);
        }
        rates.push(r.value);
    }
    Ok((rates, undefined))
}

/// Negated absolute difference of the two group rates of measure `m`.
pub fn two_group_violation(sums: &[f64], m: usize) -> Result<Violation> {
    let (group_rates, undefined_groups) = group_rates(sums, m, 2)?;
    Ok(Violation {
        value: -(group_rates[0] - group_rates[1]).abs(),
        group_rates,
        undefined_groups,
    })
}

/// Negated population standard deviation (divisor D) of the D group rates.
pub fn d_group_violation(sums: &[f64], m: usize, d: usize) -> Result<Violation> {
    if d < 2 {
        return Err(MafeError::Schema(format!("need at least two groups, got {d}")));
    }
    let (group_rates, undefined_groups) = group_rates(sums, m, d)?;
    Ok(Violation {
        value: -population_std(&group_rates),
        group_rates,
        undefined_groups,
    })
}

pub(crate) fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    var.sqrt()
}

/// Rescales group rates so they sum to one (used for wait-time and salary
/// disparities, whose raw units are arbitrary). All-zero rates are left as is.
pub(crate) fn normalize_rates(sums: &[f64], m: usize, d: usize) -> Vec<f64> {
    let base = 2 * d * m;
    let rates: Vec<f64> = (0..d)
        .map(|g| ratio(sums[base + 2 * g], sums[base + 2 * g + 1]).value)
        .collect();
    let total: f64 = rates.iter().sum();
    let mut out = sums.to_vec();
    if total > 0.0 {
        for g in 0..d {
            // Keep the denominator, scale the numerator so num/den = rate/total.
            let den = sums[base + 2 * g + 1];
            out[base + 2 * g] = if den > 0.0 { rates[g] / total * den } else { 0.0 };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(j: usize, l: usize) -> ComponentSchema {
        let direct: Vec<String> = (0..j).map(|i| format!("d{i}")).collect();
        let rates: Vec<(String, f64)> = (0..l).map(|i| (format!("r{i}"), 1.0)).collect();
        let d: Vec<&str> = direct.iter().map(|s| s.as_str()).collect();
        let r: Vec<(&str, f64)> = rates.iter().map(|(s, v)| (s.as_str(), *v)).collect();
        ComponentSchema::new(&d, &r, &[], 2)
    }

    fn acc_with(sums: &[f64]) -> ComponentAccumulator {
        ComponentAccumulator { reward_sums: sums.to_vec(), fairness_sums: vec![], steps: 1 }
    }

    fn step(reward: &[f64]) -> StepComponents {
        StepComponents { t: 0, reward: reward.to_vec(), fairness: vec![] }
    }

    #[test]
    fn accumulate_examples() {
        let s = schema(2, 0);
        let mut acc = ComponentAccumulator::new(&s);
        acc.accumulate(&step(&[1.0, 2.0])).unwrap();
        assert_eq!(acc.reward_sums, vec![1.0, 2.0]);
        acc.accumulate(&step(&[0.0, 0.0])).unwrap();
        assert_eq!(acc.reward_sums, vec![1.0, 2.0]);

        let mut acc = ComponentAccumulator::new(&s);
        for r in [[1.0, 1.0], [2.0, 0.0], [0.0, 3.0]] {
            acc.accumulate(&step(&r)).unwrap();
        }
        assert_eq!(acc.reward_sums, vec![3.0, 4.0]);
        assert_eq!(acc.steps, 3);
    }

    #[test]
    fn accumulate_rejects_length_mismatch() {
        let mut acc = ComponentAccumulator::new(&schema(2, 0));
        assert!(matches!(acc.accumulate(&step(&[1.0])), Err(MafeError::Schema(_))));
    }

    #[test]
    fn total_rewards_examples() {
        let t = total_rewards(&acc_with(&[5.0]), &schema(1, 0)).unwrap();
        assert_eq!(t.values, vec![5.0]);
        let t = total_rewards(&acc_with(&[3.0, 4.0]), &schema(0, 1)).unwrap();
        assert_eq!(t.values, vec![0.75]);
        let t = total_rewards(&acc_with(&[2.0, 1.0, 2.0]), &schema(1, 1)).unwrap();
        assert_eq!(t.values, vec![2.0, 0.5]);
        assert!(t.undefined.is_empty());
    }

    #[test]
    fn zero_denominator_is_flagged() {
        let t = total_rewards(&acc_with(&[0.0, 0.0]), &schema(0, 1)).unwrap();
        assert_eq!(t.values, vec![0.0]);
        assert!(t.undefined.contains("r0"));
    }

    #[test]
    fn negative_sign_applies_to_rates() {
        let mut s = schema(0, 1);
        s.rate_signs = vec![-1.0];
        let t = total_rewards(&acc_with(&[1.0, 4.0]), &s).unwrap();
        assert_eq!(t.values, vec![-0.25]);
    }

    #[test]
    fn two_group_examples() {
        assert_eq!(two_group_violation(&[1.0, 2.0, 1.0, 2.0], 0).unwrap().value, 0.0);
        assert_eq!(two_group_violation(&[1.0, 2.0, 0.0, 2.0], 0).unwrap().value, -0.5);
        assert_eq!(two_group_violation(&[3.0, 4.0, 1.0, 4.0], 0).unwrap().value, -0.5);
        let v = two_group_violation(&[1.0, 2.0, 0.0, 0.0], 0).unwrap();
        assert_eq!(v.undefined_groups, vec![1]);
        assert_eq!(v.value, -0.5);
    }

    #[test]
    fn d_group_examples() {
        let all = [0.3, 1.0, 0.3, 1.0, 0.3, 1.0, 0.3, 1.0];
        assert_eq!(d_group_violation(&all, 0, 4).unwrap().value, 0.0);
        let v = d_group_violation(&[0.2, 1.0, 0.4, 1.0], 0, 2).unwrap().value;
        assert!((v + 0.1).abs() < 1e-15);
        let v = d_group_violation(&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0], 0, 4)
            .unwrap()
            .value;
        assert!((v + 3f64.sqrt() / 4.0).abs() < 1e-15);
        assert!((v + 0.4330).abs() < 1e-4);
    }

    #[test]
    fn second_measure_uses_its_own_block() {
        let sums = [1.0, 1.0, 1.0, 1.0, 3.0, 4.0, 1.0, 4.0];
        assert_eq!(two_group_violation(&sums, 1).unwrap().value, -0.5);
        assert!(two_group_violation(&sums, 2).is_err());
    }

    #[test]
    fn normalized_rates_sum_to_one() {
        let sums = [6.0, 2.0, 2.0, 2.0];
        let out = normalize_rates(&sums, 0, 2);
        let v = two_group_violation(&out, 0).unwrap();
        assert!((v.group_rates[0] - 0.75).abs() < 1e-12);
        assert!((v.group_rates[1] - 0.25).abs() < 1e-12);
    }
}
