use crate::error::{Error, Result};
use crate::selection::{
    conditioning_statistic, selection_statistic, ConditioningValue, Target, FREE,
};
use crate::statistics::{
    impute, Direction, ImputedOutcomes, NullScope, NullSpec, StatisticId, TestStatistic, UnitSubset,
};
use crate::trial::{Arm, Trial};

/// Everything needed to evaluate `S`, `G`, and `T` on counterfactual assignments for
/// one selected null `H0^tau`.
#[derive(Debug, Clone)]
pub struct NullContext<'t> {
    pub trial: &'t Trial,
    pub null: NullSpec,
    pub imputed: ImputedOutcomes,
    pub target: Target,
    pub direction: Direction,
    /// `T` over the selected group(s), all stages.
    pub statistic: TestStatistic,
    /// `T` over the selected group(s), stages 2..K (the data-splitting statistic).
    pub later_statistic: Option<TestStatistic>,
    pub observed_t: f64,
    pub observed_later_t: Option<f64>,
    in_null: Vec<bool>,
}

impl<'t> NullContext<'t> {
    /// Null selected by the observed final selection, per the trial's `null_scope`.
    pub fn new(trial: &'t Trial, tau: f64) -> Result<Self> {
        let spec = trial.spec();
        let units = match spec.null_scope {
            NullScope::AllRecruited => UnitSubset::All,
            NullScope::SelectedGroups => UnitSubset::Groups(
                trial
                    .selected_groups()
                    .into_iter()
                    .map(|g| spec.groups[g].clone())
                    .collect(),
            ),
        };
        let null = NullSpec::new(units, spec.arm_pair, tau)?;
        Self::with_null(trial, null, spec.statistic, spec.direction)
    }

    pub fn with_null(
        trial: &'t Trial,
        null: NullSpec,
        statistic: StatisticId,
        direction: Direction,
    ) -> Result<Self> {
        let imputed = impute(trial, &null);
        let z = trial.observed();
        let target = Target {
            s: trial.observed_selection().clone(),
            g: conditioning_statistic(trial, z, &null),
        };
        let groups = trial.selected_groups();
        let k = trial.num_stages();
        let stat = TestStatistic::new(trial, statistic, &groups, 0..k, null.arms);
        let observed_t = stat.eval(z, &imputed)?;
        let (later_statistic, observed_later_t) = if k > 1 {
            let later = TestStatistic::new(trial, statistic, &groups, 1..k, null.arms);
            let t = later.eval(z, &imputed)?;
            (Some(later), Some(t))
        } else {
            (None, None)
        };
        // S(z) on imputed outcomes must reproduce the recorded selection
        let s_check = selection_statistic(trial, z, &imputed)?;
        if s_check != target.s {
            return Err(Error::Data(
                "selection on imputed outcomes differs from observed selection".into(),
            ));
        }
        let in_null = (0..trial.num_entries())
            .map(|e| {
                null.units
                    .contains(trial.entry_unit(e), trial.entry_group_name(e))
            })
            .collect();
        Ok(NullContext {
            in_null,
            trial,
            null,
            imputed,
            target,
            direction,
            statistic: stat,
            later_statistic,
            observed_t,
            observed_later_t,
        })
    }

    /// `S(z) = s` and `G(z) = g`. Assignments on which the selection rule is undefined
    /// (an empty arm or zero variance in a group) cannot reproduce `s`.
    pub fn matches(&self, z: &[Arm]) -> Result<bool> {
        let (l, lp) = self.null.arms;
        let g_same =
            z.iter()
                .zip(&self.target.g.0)
                .zip(&self.in_null)
                .all(|((&a, &g), &inside)| {
                    if inside && (a == l || a == lp) {
                        g == FREE
                    } else {
                        g == a as u16
                    }
                });
        if !g_same {
            return Ok(false);
        }
        match selection_statistic(self.trial, z, &self.imputed).map(|s| s == self.target.s) {
            Err(Error::EmptyArm { .. } | Error::DegenerateVariance | Error::ZeroDenominator) => {
                Ok(false)
            }
            other => other,
        }
    }

    pub fn conditioning(&self, z: &[Arm]) -> ConditioningValue {
        conditioning_statistic(self.trial, z, &self.null)
    }

    /// Entries `G` leaves free under the target.
    pub fn free_mask(&self) -> Vec<bool> {
        self.target.g.0.iter().map(|&v| v == FREE).collect()
    }

    pub fn stat(&self, z: &[Arm]) -> Result<f64> {
        self.statistic.eval(z, &self.imputed)
    }

    pub fn is_extreme(&self, t: f64) -> bool {
        self.direction.extreme(t, self.observed_t)
    }
}
