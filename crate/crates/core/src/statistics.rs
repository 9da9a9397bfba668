//! Test statistics, outcome imputation under `H0^tau`, and imputability checks.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Cell, Error, Result};
use crate::trial::{Arm, Trial};

/// Which comparison counts as "at least as extreme" in the randomization p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `T(z*) <= T(z)`.
    #[default]
    Less,
    /// `T(z*) >= T(z)`.
    Greater,
}

impl Direction {
    #[inline]
    pub fn extreme(self, candidate: f64, observed: f64) -> bool {
        match self {
            Direction::Less => candidate <= observed,
            Direction::Greater => candidate >= observed,
        }
    }
}

/// How the unit subset `I` of the selected null is formed from the final selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullScope {
    /// Every recruited unit (sharp null).
    #[default]
    AllRecruited,
    /// Units in the group(s) chosen by the final selection (partially sharp null).
    SelectedGroups,
}

/// Registered test statistics, addressable by string identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticId {
    /// Standardized ATE over the selected group(s), pooled across stages.
    #[default]
    StandardizedAteSelectedGroups,
    /// Ratio of mean outcomes (relative risk for 0/1 outcomes) over the selected group(s).
    RelativeRisk,
}

impl StatisticId {
    pub fn name(self) -> &'static str {
        match self {
            StatisticId::StandardizedAteSelectedGroups => "standardized_ate_selected_groups",
            StatisticId::RelativeRisk => "relative_risk",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [
            StatisticId::StandardizedAteSelectedGroups,
            StatisticId::RelativeRisk,
        ]
        .into_iter()
        .find(|s| s.name() == name)
    }
}

/// Scaling of the standardized ATE denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AteScale {
    /// `sqrt(s1^2 + s0^2)` with `s^2` the mean squared deviation.
    #[default]
    Unit,
    /// `sqrt(s1^2/n1 + s0^2/n0)`.
    StandardError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitSubset {
    All,
    Groups(BTreeSet<String>),
    Units(BTreeSet<u64>),
}

impl UnitSubset {
    pub fn contains(&self, unit_id: u64, group: &str) -> bool {
        match self {
            UnitSubset::All => true,
            UnitSubset::Groups(g) => g.contains(group),
            UnitSubset::Units(u) => u.contains(&unit_id),
        }
    }
}

/// `H0^tau: Y_i(l) - Y_i(l') = tau` for all `i` in `I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSpec {
    pub units: UnitSubset,
    pub arms: (Arm, Arm),
    pub tau: f64,
}

impl NullSpec {
    pub fn new(units: UnitSubset, arms: (Arm, Arm), tau: f64) -> Result<Self> {
        if arms.0 == arms.1 {
            return Err(Error::InvalidArgument(
                "null arm pair must be two distinct arms".into(),
            ));
        }
        if !tau.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "tau must be finite, got {tau}"
            )));
        }
        Ok(NullSpec { units, arms, tau })
    }

    pub fn sharp(tau: f64) -> Self {
        NullSpec {
            units: UnitSubset::All,
            arms: (1, 0),
            tau,
        }
    }
}

/// Potential outcomes of recruited entries; `None` marks cells the null does not pin.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedOutcomes {
    num_arms: usize,
    entry_unit: Vec<u64>,
    values: Vec<Option<f64>>,
}

impl ImputedOutcomes {
    #[inline]
    pub fn entry(&self, entry: usize, arm: Arm) -> Option<f64> {
        self.values[entry * self.num_arms + arm as usize]
    }

    pub fn get(&self, unit_id: u64, arm: Arm) -> Option<f64> {
        let e = self.entry_unit.iter().position(|&u| u == unit_id)?;
        self.entry(e, arm)
    }

    pub fn is_known(&self, unit_id: u64, arm: Arm) -> bool {
        self.get(unit_id, arm).is_some()
    }

    pub fn num_entries(&self) -> usize {
        self.entry_unit.len()
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    /// Outcomes under assignment `z`; unknown cells come back as NaN.
    pub fn outcomes_under(&self, z: &[Arm]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(e, &a)| self.entry(e, a).unwrap_or(f64::NAN))
            .collect()
    }

    pub fn cell(&self, entry: usize, arm: Arm) -> Cell {
        (self.entry_unit[entry], arm)
    }
}

/// Fills in the potential outcomes `H0^tau` pins down. Observed cells are always known;
/// for `i` in `I` with observed arm `l` (or `l'`) the other arm of the pair follows from
/// `Y_i(l) - Y_i(l') = tau`.
pub fn impute(trial: &Trial, null: &NullSpec) -> ImputedOutcomes {
    let num_arms = trial.spec().num_arms;
    let n = trial.num_entries();
    let (l, lp) = null.arms;
    let mut values = vec![None; n * num_arms];
    for e in 0..n {
        let z = trial.observed()[e];
        let y = trial.observed_outcomes()[e];
        values[e * num_arms + z as usize] = Some(y);
        if null
            .units
            .contains(trial.entry_unit(e), trial.entry_group_name(e))
        {
            if z == l {
                values[e * num_arms + lp as usize] = Some(y - null.tau);
            } else if z == lp {
                values[e * num_arms + l as usize] = Some(y + null.tau);
            }
        }
    }
    ImputedOutcomes {
        num_arms,
        entry_unit: (0..n).map(|e| trial.entry_unit(e)).collect(),
        values,
    }
}

/// Count, mean, and sum of squared deviations of one group-arm cell.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub ssd: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Moments::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ssd = values.iter().map(|y| (y - mean) * (y - mean)).sum();
        Moments { n, mean, ssd }
    }

    /// Mean squared deviation (divides by the cell count).
    pub fn mle_variance(&self) -> f64 {
        self.ssd / self.n as f64
    }
}

/// Two-pass moments of `values[e]` over `entries`, split by whether `arms[e]` is the
/// treated or the control arm. Entries in other arms are skipped.
pub(crate) fn arm_moments(
    entries: &[usize],
    arms: &[Arm],
    values: &[f64],
    treated: Arm,
    control: Arm,
) -> (Moments, Moments) {
    let (mut n1, mut s1, mut n0, mut s0) = (0usize, 0.0, 0usize, 0.0);
    for &e in entries {
        let a = arms[e];
        if a == treated {
            n1 += 1;
            s1 += values[e];
        } else if a == control {
            n0 += 1;
            s0 += values[e];
        }
    }
    let m1 = if n1 > 0 { s1 / n1 as f64 } else { 0.0 };
    let m0 = if n0 > 0 { s0 / n0 as f64 } else { 0.0 };
    let (mut d1, mut d0) = (0.0, 0.0);
    for &e in entries {
        let a = arms[e];
        if a == treated {
            d1 += (values[e] - m1) * (values[e] - m1);
        } else if a == control {
            d0 += (values[e] - m0) * (values[e] - m0);
        }
    }
    (
        Moments {
            n: n1,
            mean: m1,
            ssd: d1,
        },
        Moments {
            n: n0,
            mean: m0,
            ssd: d0,
        },
    )
}

/// `(mean_1 - mean_0) / sqrt(s1^2 + s0^2)`, with the denominator scaled per `scale`.
pub fn standardized_effect(treated: &Moments, control: &Moments, scale: AteScale) -> Result<f64> {
    if treated.n == 0 {
        return Err(Error::EmptyArm { arm: 1 });
    }
    if control.n == 0 {
        return Err(Error::EmptyArm { arm: 0 });
    }
    let (v1, v0) = (treated.mle_variance(), control.mle_variance());
    let denom = match scale {
        AteScale::Unit => v1 + v0,
        AteScale::StandardError => v1 / treated.n as f64 + v0 / control.n as f64,
    };
    if denom <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok((treated.mean - control.mean) / denom.sqrt())
}

/// Standardized ATE on raw treated/control samples (unit scale).
pub fn standardized_ate_values(treated: &[f64], control: &[f64]) -> Result<f64> {
    standardized_effect(&Moments::of(treated), &Moments::of(control), AteScale::Unit)
}

/// `Delta_r` for covariate group `group` under assignment `z`, using imputed outcomes.
/// Arms are the null's `(treated, control)` pair.
pub fn standardized_ate(
    trial: &Trial,
    imputed: &ImputedOutcomes,
    group: &str,
    z: &[Arm],
    arms: (Arm, Arm),
) -> Result<f64> {
    let gi = trial
        .spec()
        .group_index(group)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown group '{group}'")))?;
    let entries: Vec<usize> = (0..trial.num_entries())
        .filter(|&e| trial.entry_group(e) == gi)
        .collect();
    let values = outcomes_for(imputed, z, &entries, arms)?;
    let (t, c) = arm_moments(&entries, z, &values, arms.0, arms.1);
    standardized_effect(&t, &c, AteScale::Unit)
}

/// `(delta_high - delta_low) / sqrt(2)`.
pub fn scaled_delta(delta_high: f64, delta_low: f64) -> f64 {
    (delta_high - delta_low) / std::f64::consts::SQRT_2
}

/// `(events_t / total_t) / (events_c / total_c)`.
pub fn relative_risk(
    events_treated: u64,
    total_treated: u64,
    events_control: u64,
    total_control: u64,
) -> Result<f64> {
    if total_treated == 0 || total_control == 0 || events_control == 0 {
        return Err(Error::ZeroDenominator);
    }
    Ok((events_treated as f64 / total_treated as f64)
        / (events_control as f64 / total_control as f64))
}

/// Ratio of arm means; the relative risk when outcomes are 0/1.
pub(crate) fn mean_ratio(treated: &Moments, control: &Moments) -> Result<f64> {
    if treated.n == 0 {
        return Err(Error::EmptyArm { arm: 1 });
    }
    if control.n == 0 || control.mean == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(treated.mean / control.mean)
}

/// Outcomes of `entries` under `z` (dense vector indexed by entry, NaN elsewhere).
/// Entries assigned outside the arm pair are not read.
pub(crate) fn outcomes_for(
    imputed: &ImputedOutcomes,
    z: &[Arm],
    entries: &[usize],
    arms: (Arm, Arm),
) -> Result<Vec<f64>> {
    let mut out = vec![f64::NAN; z.len()];
    let mut missing = Vec::new();
    for &e in entries {
        let a = z[e];
        if a != arms.0 && a != arms.1 {
            continue;
        }
        match imputed.entry(e, a) {
            Some(y) => out[e] = y,
            None => missing.push(imputed.cell(e, a)),
        }
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(Error::NotImputable { cells: missing })
    }
}

/// A registered statistic bound to the entries it reads.
#[derive(Debug, Clone)]
pub struct TestStatistic {
    pub id: StatisticId,
    entries: Vec<usize>,
    arms: (Arm, Arm),
}

impl TestStatistic {
    /// Reads entries whose group is in `groups` and whose stage is in `stages`.
    pub fn new(
        trial: &Trial,
        id: StatisticId,
        groups: &[usize],
        stages: std::ops::Range<usize>,
        arms: (Arm, Arm),
    ) -> Self {
        let entries = stages
            .flat_map(|k| trial.stage_range(k))
            .filter(|&e| groups.contains(&trial.entry_group(e)))
            .collect();
        TestStatistic { id, entries, arms }
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    pub fn eval(&self, z: &[Arm], imputed: &ImputedOutcomes) -> Result<f64> {
        let values = outcomes_for(imputed, z, &self.entries, self.arms)?;
        self.eval_values(z, &values)
    }

    /// Same as `eval` with outcomes already looked up (NaN cells are reported as unknown).
    pub(crate) fn eval_values(&self, z: &[Arm], values: &[f64]) -> Result<f64> {
        let (t, c) = arm_moments(&self.entries, z, values, self.arms.0, self.arms.1);
        if t.mean.is_nan() || c.mean.is_nan() {
            return Err(Error::NotImputable { cells: Vec::new() });
        }
        match self.id {
            StatisticId::StandardizedAteSelectedGroups => {
                standardized_effect(&t, &c, AteScale::Unit)
            }
            StatisticId::RelativeRisk => mean_ratio(&t, &c),
        }
    }
}

/// Evaluates a registered statistic on `z` over the group(s) selected by the trial's
/// observed final selection, pooled across all stages.
pub fn eval_test_statistic(
    id: StatisticId,
    z: &[Arm],
    trial: &Trial,
    imputed: &ImputedOutcomes,
    null: &NullSpec,
) -> Result<f64> {
    let groups = trial.selected_groups();
    TestStatistic::new(trial, id, &groups, 0..trial.num_stages(), null.arms).eval(z, imputed)
}
