//! Selection statistics `S`, conditioning statistics `G`, and the matching predicate
//! that defines the selective reference set `Z_{s,g}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::statistics::{
    arm_moments, mean_ratio, scaled_delta, standardized_effect, AteScale, ImputedOutcomes, Moments,
    NullSpec,
};
use crate::trial::{Arm, Trial, TrialSpec, INITIAL_SELECTION};

/// Label index standing for `S_0`, before any data has been seen.
pub const INIT_LABEL: u16 = u16::MAX;

/// Per-stage selection labels `(S_1, ..., S_K)` as indices into the rule's label set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SelectionValue(pub Vec<u16>);

impl SelectionValue {
    pub fn last(&self) -> u16 {
        *self.0.last().expect("non-empty selection path")
    }

    pub fn names(&self, rule: &SelectionRule) -> Vec<String> {
        self.0.iter().map(|&l| rule.label_name(l)).collect()
    }
}

/// Marks an entry whose assignment `G` does not pin.
pub const FREE: u16 = u16::MAX;

/// Canonical encoding of `G(z)`: the arm of every entry `G` pins, `FREE` elsewhere.
/// Two encodings are equal iff the underlying values of `G` agree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditioningValue(pub Vec<u16>);

impl ConditioningValue {
    /// `Some(arm)` for pinned entries.
    pub fn pins(&self) -> Vec<Option<Arm>> {
        self.0
            .iter()
            .map(|&v| (v != FREE).then_some(v as Arm))
            .collect()
    }

    pub fn free_entries(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == FREE)
            .map(|(e, _)| e)
            .collect()
    }

    pub fn is_constant_over(&self) -> bool {
        self.0.iter().all(|&v| v == FREE)
    }
}

/// What the enrichment rule compares between the two groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectSummary {
    /// Standardized ATE with each variance divided by its cell count.
    #[default]
    StandardizedSe,
    /// Standardized ATE exactly as `standardized_ate` (per-unit variances).
    StandardizedUnit,
    /// Plain difference in means.
    MeanDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnrichmentChoice {
    OnlyLow,
    OnlyHigh,
    Both,
}

impl EnrichmentChoice {
    pub const ALL: [EnrichmentChoice; 3] = [
        EnrichmentChoice::OnlyLow,
        EnrichmentChoice::OnlyHigh,
        EnrichmentChoice::Both,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnrichmentChoice::OnlyLow => "only_low",
            EnrichmentChoice::OnlyHigh => "only_high",
            EnrichmentChoice::Both => "both",
        }
    }

    pub fn label(self) -> u16 {
        self as u16
    }
}

/// Stage-2 recruitment sizes chosen by the enrichment rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecruitmentSizes {
    pub low: usize,
    pub high: usize,
}

/// The enrichment threshold rule on the scaled effect difference. `total` units are
/// recruited from the chosen group, split evenly when both are kept.
pub fn enrichment_select(
    delta: f64,
    lower: f64,
    upper: f64,
    total: usize,
) -> (EnrichmentChoice, RecruitmentSizes) {
    if delta < lower {
        (
            EnrichmentChoice::OnlyLow,
            RecruitmentSizes {
                low: total,
                high: 0,
            },
        )
    } else if delta > upper {
        (
            EnrichmentChoice::OnlyHigh,
            RecruitmentSizes {
                low: 0,
                high: total,
            },
        )
    } else {
        (
            EnrichmentChoice::Both,
            RecruitmentSizes {
                low: total / 2,
                high: total - total / 2,
            },
        )
    }
}

/// Default enrichment thresholds `(Phi^{-1}(0.2), Phi^{-1}(0.8))`.
pub fn default_thresholds() -> (f64, f64) {
    (normal::quantile(0.2), normal::quantile(0.8))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SelectionRule {
    /// No adaptivity: a single label.
    Constant,
    /// Keep the low group, the high group, or both depending on the scaled difference of
    /// their effects.
    EnrichmentDeltaThreshold {
        low_group: String,
        high_group: String,
        lower_threshold: f64,
        upper_threshold: f64,
        #[serde(default)]
        effect: EffectSummary,
    },
    /// Keep the candidate group with the smallest relative risk (first one on ties).
    MinRelativeRiskAgeGroup { candidates: Vec<String> },
}

impl SelectionRule {
    /// Enrichment rule with thresholds cached from the normal quantile.
    pub fn enrichment(low_group: &str, high_group: &str, effect: EffectSummary) -> Self {
        let (lower, upper) = default_thresholds();
        SelectionRule::EnrichmentDeltaThreshold {
            low_group: low_group.into(),
            high_group: high_group.into(),
            lower_threshold: lower,
            upper_threshold: upper,
            effect,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SelectionRule::Constant => "constant",
            SelectionRule::EnrichmentDeltaThreshold { .. } => "enrichment_delta_threshold",
            SelectionRule::MinRelativeRiskAgeGroup { .. } => "min_relative_risk_age_group",
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            SelectionRule::Constant => vec!["all".into()],
            SelectionRule::EnrichmentDeltaThreshold { .. } => EnrichmentChoice::ALL
                .iter()
                .map(|c| c.name().to_string())
                .collect(),
            SelectionRule::MinRelativeRiskAgeGroup { candidates } => candidates.clone(),
        }
    }

    pub fn label_name(&self, label: u16) -> String {
        if label == INIT_LABEL {
            return INITIAL_SELECTION.to_string();
        }
        self.labels()
            .get(label as usize)
            .cloned()
            .unwrap_or_else(|| format!("#{label}"))
    }

    pub fn label_index(&self, name: &str) -> Option<u16> {
        if name == INITIAL_SELECTION {
            return Some(INIT_LABEL);
        }
        self.labels()
            .iter()
            .position(|l| l == name)
            .map(|i| i as u16)
    }

    pub(crate) fn check(&self, spec: &TrialSpec) -> Result<()> {
        let known = |g: &str| {
            spec.group_index(g)
                .map(|_| ())
                .ok_or_else(|| Error::Spec(format!("selection rule names unknown group '{g}'")))
        };
        match self {
            SelectionRule::Constant => Ok(()),
            SelectionRule::EnrichmentDeltaThreshold {
                low_group,
                high_group,
                lower_threshold,
                upper_threshold,
                ..
            } => {
                known(low_group)?;
                known(high_group)?;
                if low_group == high_group {
                    return Err(Error::Spec(
                        "enrichment rule needs two distinct groups".into(),
                    ));
                }
                if lower_threshold.partial_cmp(upper_threshold) != Some(std::cmp::Ordering::Less) {
                    return Err(Error::Spec(
                        "enrichment thresholds must satisfy lower < upper".into(),
                    ));
                }
                Ok(())
            }
            SelectionRule::MinRelativeRiskAgeGroup { candidates } => {
                if candidates.is_empty() {
                    return Err(Error::Spec(
                        "relative-risk rule needs at least one candidate group".into(),
                    ));
                }
                candidates.iter().try_for_each(|g| known(g))
            }
        }
    }

    /// Groups the final label keeps in the analysis.
    pub fn selected_groups(&self, spec: &TrialSpec, label: u16) -> Vec<usize> {
        let idx = |g: &str| spec.group_index(g).expect("validated group");
        match self {
            SelectionRule::Constant => (0..spec.groups.len()).collect(),
            SelectionRule::EnrichmentDeltaThreshold {
                low_group,
                high_group,
                ..
            } => match label {
                0 => vec![idx(low_group)],
                1 => vec![idx(high_group)],
                2 => vec![idx(low_group), idx(high_group)],
                _ => (0..spec.groups.len()).collect(),
            },
            SelectionRule::MinRelativeRiskAgeGroup { candidates } => {
                match candidates.get(label as usize) {
                    Some(g) => vec![idx(g)],
                    None => (0..spec.groups.len()).collect(),
                }
            }
        }
    }

    /// Label from the cumulative per-group entry lists of the selecting stages.
    fn evaluate(
        &self,
        spec: &TrialSpec,
        by_group: &[Vec<usize>],
        z: &[Arm],
        y: &[f64],
    ) -> Result<u16> {
        let (treated, control) = spec.arm_pair;
        match self {
            SelectionRule::Constant => Ok(0),
            SelectionRule::EnrichmentDeltaThreshold {
                low_group,
                high_group,
                lower_threshold,
                upper_threshold,
                effect,
            } => {
                let group_effect = |g: &str| -> Result<f64> {
                    let entries = &by_group[spec.group_index(g).expect("validated group")];
                    let (t, c) = arm_moments(entries, z, y, treated, control);
                    summarize(&t, &c, *effect)
                };
                let delta = scaled_delta(group_effect(high_group)?, group_effect(low_group)?);
                if delta.is_nan() {
                    return Err(Error::NotImputable { cells: Vec::new() });
                }
                Ok(
                    enrichment_select(delta, *lower_threshold, *upper_threshold, 0)
                        .0
                        .label(),
                )
            }
            SelectionRule::MinRelativeRiskAgeGroup { candidates } => {
                let mut cells = Vec::with_capacity(candidates.len());
                for g in candidates {
                    let entries = &by_group[spec.group_index(g).expect("validated group")];
                    let (t, c) = arm_moments(entries, z, y, treated, control);
                    if t.mean.is_nan() || c.mean.is_nan() {
                        return Err(Error::NotImputable { cells: Vec::new() });
                    }
                    cells.push((t, c));
                }
                Ok(argmin_ratio(&cells))
            }
        }
    }
}

/// Index of the smallest treated/control mean ratio; undefined ratios count as infinite
/// and the first index wins ties.
pub(crate) fn argmin_ratio(cells: &[(Moments, Moments)]) -> u16 {
    let mut best = (f64::INFINITY, 0u16);
    for (i, (t, c)) in cells.iter().enumerate() {
        let rr = mean_ratio(t, c).unwrap_or(f64::INFINITY);
        if rr < best.0 {
            best = (rr, i as u16);
        }
    }
    best.1
}

pub(crate) fn summarize(t: &Moments, c: &Moments, effect: EffectSummary) -> Result<f64> {
    match effect {
        EffectSummary::StandardizedSe => standardized_effect(t, c, AteScale::StandardError),
        EffectSummary::StandardizedUnit => standardized_effect(t, c, AteScale::Unit),
        EffectSummary::MeanDifference => {
            if t.n == 0 {
                return Err(Error::EmptyArm { arm: 1 });
            }
            if c.n == 0 {
                return Err(Error::EmptyArm { arm: 0 });
            }
            Ok(t.mean - c.mean)
        }
    }
}

/// `S(z)` given outcomes `y` under `z` (one value per entry; NaN where unknown).
/// `S_k` is recomputed at every stage whose data enters the rule and carried over
/// unchanged through hold-out stages.
pub(crate) fn selection_path(trial: &Trial, z: &[Arm], y: &[f64]) -> Result<SelectionValue> {
    let spec = trial.spec();
    let mut current = INIT_LABEL;
    let mut path = Vec::with_capacity(trial.num_stages());
    for k in 0..trial.num_stages() {
        if let Some(by_group) = trial.selection_entries(k) {
            current = spec.selection_rule.evaluate(spec, by_group, z, y)?;
        }
        path.push(current);
    }
    Ok(SelectionValue(path))
}

/// `S(z)` recomputed on a counterfactual assignment using imputed outcomes.
pub fn selection_statistic(
    trial: &Trial,
    z: &[Arm],
    imputed: &ImputedOutcomes,
) -> Result<SelectionValue> {
    let (treated, control) = trial.spec().arm_pair;
    let mut y = vec![f64::NAN; z.len()];
    let mut missing = Vec::new();
    for k in 0..trial.num_stages() {
        if trial.selection_entries(k).is_none() {
            continue;
        }
        for e in trial.stage_range(k) {
            let a = z[e];
            if a != treated && a != control {
                continue;
            }
            match imputed.entry(e, a) {
                Some(v) => y[e] = v,
                None => missing.push(imputed.cell(e, a)),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::NotImputable { cells: missing });
    }
    selection_path(trial, z, &y)
}

/// `G(z)` for `null`: entries of units outside `I`, and entries of units in `I` assigned
/// outside the arm pair, are pinned to their arm; everything else is free.
pub fn conditioning_statistic(trial: &Trial, z: &[Arm], null: &NullSpec) -> ConditioningValue {
    let (l, lp) = null.arms;
    ConditioningValue(
        z.iter()
            .enumerate()
            .map(|(e, &a)| {
                let in_null = null
                    .units
                    .contains(trial.entry_unit(e), trial.entry_group_name(e));
                if in_null && (a == l || a == lp) {
                    FREE
                } else {
                    a as u16
                }
            })
            .collect(),
    )
}

/// The conditioning target `(s, g)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Target {
    pub s: SelectionValue,
    pub g: ConditioningValue,
}

/// `S(z) = s` and `G(z) = g`. `G` is checked first, so assignments moving pinned entries
/// are rejected without touching unknown outcomes.
pub fn matches(
    trial: &Trial,
    z: &[Arm],
    target: &Target,
    imputed: &ImputedOutcomes,
    null: &NullSpec,
) -> Result<bool> {
    if conditioning_statistic(trial, z, null) != target.g {
        return Ok(false);
    }
    Ok(selection_statistic(trial, z, imputed)? == target.s)
}
