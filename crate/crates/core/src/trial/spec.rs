use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::SelectionRule;
use crate::statistics::{Direction, NullScope, StatisticId};

/// Arm index. Arms are dense integers `0..num_arms`; arm 0 is control by convention.
pub type Arm = u8;

/// Recruitment key used for the first stage, before any selection has happened.
pub const INITIAL_SELECTION: &str = "init";

/// Declarative description of an adaptive K-stage experiment.
///
/// Every stage-k mechanism sees prior data only through the previous selection
/// label and the stage's own recruitment and covariate groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub num_arms: usize,
    /// Covariate group labels. Units carry exactly one of them.
    pub groups: Vec<String>,
    pub stages: Vec<StageSpec>,
    pub selection_rule: SelectionRule,
    #[serde(default)]
    pub statistic: StatisticId,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default)]
    pub null_scope: NullScope,
    /// `(l, l')` for the contrast `Y(l) - Y(l') = tau`.
    #[serde(default = "default_arm_pair")]
    pub arm_pair: (Arm, Arm),
}

fn default_arm_pair() -> (Arm, Arm) {
    (1, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub mechanism: Mechanism,
    /// Hold-out stages never enter the selection rule.
    #[serde(default)]
    pub holdout: bool,
    /// Previous selection label -> group -> number of units recruited.
    pub recruitment: BTreeMap<String, BTreeMap<String, usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blocking {
    /// One completely randomized block per stage.
    #[default]
    Stage,
    /// One block per covariate group within the stage.
    Group,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Mechanism {
    /// Uniform over assignments with fixed per-arm counts in each block. Counts are
    /// `block_size * arm_ratio[l] / sum(arm_ratio)` and must be integral.
    CompletelyRandomized {
        arm_ratio: Vec<u32>,
        #[serde(default)]
        blocking: Blocking,
    },
    /// Independent binary assignment; `P(Z = 1)` looked up by previous selection and
    /// group, falling back to `by_group` and then `default`.
    Bernoulli {
        #[serde(default = "half")]
        default: f64,
        #[serde(default)]
        by_group: BTreeMap<String, f64>,
        #[serde(default)]
        by_selection: BTreeMap<String, BTreeMap<String, f64>>,
    },
}

fn half() -> f64 {
    0.5
}

impl Mechanism {
    pub fn crd(arm_ratio: Vec<u32>, blocking: Blocking) -> Self {
        Mechanism::CompletelyRandomized {
            arm_ratio,
            blocking,
        }
    }

    pub fn bernoulli(p: f64) -> Self {
        Mechanism::Bernoulli {
            default: p,
            by_group: BTreeMap::new(),
            by_selection: BTreeMap::new(),
        }
    }

    /// Treatment probability for a unit of `group` given the previous selection label.
    pub fn treat_probability(&self, group: &str, prev_selection: &str) -> Option<f64> {
        match self {
            Mechanism::CompletelyRandomized { .. } => None,
            Mechanism::Bernoulli {
                default,
                by_group,
                by_selection,
            } => Some(
                by_selection
                    .get(prev_selection)
                    .and_then(|m| m.get(group))
                    .or_else(|| by_group.get(group))
                    .copied()
                    .unwrap_or(*default),
            ),
        }
    }

    /// Per-arm counts for a CRD block, or `None` if the ratio does not divide the block.
    pub fn crd_counts(arm_ratio: &[u32], block_size: usize) -> Option<Vec<usize>> {
        let total: u64 = arm_ratio.iter().map(|&r| r as u64).sum();
        if total == 0 {
            return None;
        }
        let mut counts = Vec::with_capacity(arm_ratio.len());
        for &r in arm_ratio {
            let num = block_size as u64 * r as u64;
            if !num.is_multiple_of(total) {
                return None;
            }
            counts.push((num / total) as usize);
        }
        Some(counts)
    }
}

impl TrialSpec {
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g == name)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: TrialSpec = serde_json::from_str(text).map_err(|e| Error::Spec(e.to_string()))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trial spec serializes")
    }

    /// Structural checks that do not need data.
    pub fn check(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Spec("at least one stage is required".into()));
        }
        if self.num_arms < 2 || self.num_arms > Arm::MAX as usize {
            return Err(Error::Spec(format!(
                "num_arms must be in 2..=255, got {}",
                self.num_arms
            )));
        }
        if self.groups.is_empty() {
            return Err(Error::Spec(
                "at least one covariate group is required".into(),
            ));
        }
        let (l, lp) = self.arm_pair;
        if l == lp || l as usize >= self.num_arms || lp as usize >= self.num_arms {
            return Err(Error::Spec(format!("invalid arm pair ({l}, {lp})")));
        }
        self.selection_rule.check(self)?;
        let labels = self.selection_rule.labels();
        for (k, stage) in self.stages.iter().enumerate() {
            match &stage.mechanism {
                Mechanism::CompletelyRandomized { arm_ratio, .. } => {
                    if arm_ratio.len() != self.num_arms {
                        return Err(Error::Spec(format!(
                            "stage {}: arm_ratio has {} entries for {} arms",
                            k + 1,
                            arm_ratio.len(),
                            self.num_arms
                        )));
                    }
                }
                Mechanism::Bernoulli {
                    default,
                    by_group,
                    by_selection,
                } => {
                    if self.num_arms != 2 {
                        return Err(Error::Spec(format!(
                            "stage {}: Bernoulli mechanism needs exactly 2 arms",
                            k + 1
                        )));
                    }
                    let probs = std::iter::once(default)
                        .chain(by_group.values())
                        .chain(by_selection.values().flat_map(|m| m.values()));
                    for p in probs {
                        if !(0.0..=1.0).contains(p) {
                            return Err(Error::Spec(format!(
                                "stage {}: probability {p} outside [0, 1]",
                                k + 1
                            )));
                        }
                    }
                }
            }
            // every selection value reachable at this point needs a recruitment entry
            let reachable: Vec<String> = if self.first_selecting_stage().is_some_and(|j| j < k) {
                labels.clone()
            } else {
                vec![INITIAL_SELECTION.to_string()]
            };
            for label in &reachable {
                let plan = stage.recruitment.get(label).ok_or_else(|| {
                    Error::Spec(format!(
                        "stage {}: no recruitment plan for selection '{label}'",
                        k + 1
                    ))
                })?;
                for group in plan.keys() {
                    if self.group_index(group).is_none() {
                        return Err(Error::Spec(format!(
                            "stage {}: recruitment names unknown group '{group}'",
                            k + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Index of the first stage whose data enters the selection rule.
    pub fn first_selecting_stage(&self) -> Option<usize> {
        self.stages.iter().position(|s| !s.holdout)
    }
}
