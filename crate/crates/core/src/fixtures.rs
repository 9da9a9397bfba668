//! Small reference trials whose assignment spaces can be listed by hand.

use std::collections::BTreeMap;

use crate::selection::{EffectSummary, SelectionRule};
use crate::statistics::{Direction, NullScope, StatisticId};
use crate::trial::{
    Blocking, Mechanism, StageData, StageSpec, Trial, TrialRecord, TrialSpec, Unit,
    INITIAL_SELECTION,
};

fn plan(entries: &[(&str, &[(&str, usize)])]) -> BTreeMap<String, BTreeMap<String, usize>> {
    entries
        .iter()
        .map(|(label, groups)| {
            (
                label.to_string(),
                groups.iter().map(|(g, n)| (g.to_string(), *n)).collect(),
            )
        })
        .collect()
}

fn unit(id: u64, group: &str) -> Unit {
    Unit {
        id,
        group: group.into(),
        covariates: BTreeMap::new(),
    }
}

/// Two-stage enrichment trial with four units per stage.
///
/// Stage 1 treats one of two units in each group; stage 2 is a hold-out CRD of four
/// units treating two. The observed data select `only_high`, and under the sharp null
/// two of the four stage-1 assignments reproduce that choice.
pub fn enrichment_toy_spec() -> TrialSpec {
    TrialSpec {
        num_arms: 2,
        groups: vec!["low".into(), "high".into()],
        stages: vec![
            StageSpec {
                mechanism: Mechanism::crd(vec![1, 1], Blocking::Group),
                holdout: false,
                recruitment: plan(&[(INITIAL_SELECTION, &[("low", 2), ("high", 2)])]),
            },
            StageSpec {
                mechanism: Mechanism::crd(vec![1, 1], Blocking::Stage),
                holdout: true,
                recruitment: plan(&[
                    ("only_low", &[("low", 4)]),
                    ("only_high", &[("high", 4)]),
                    ("both", &[("low", 2), ("high", 2)]),
                ]),
            },
        ],
        selection_rule: SelectionRule::enrichment("low", "high", EffectSummary::MeanDifference),
        statistic: StatisticId::StandardizedAteSelectedGroups,
        direction: Direction::Greater,
        null_scope: NullScope::AllRecruited,
        arm_pair: (1, 0),
    }
}

pub fn enrichment_toy_record() -> TrialRecord {
    let mut units: Vec<Unit> = vec![
        unit(1, "low"),
        unit(2, "low"),
        unit(3, "high"),
        unit(4, "high"),
    ];
    units.extend((5..=10).map(|id| unit(id, "high")));
    TrialRecord {
        units,
        stages: vec![
            StageData {
                units: vec![1, 2, 3, 4],
                treatments: vec![1, 0, 1, 0],
                outcomes: vec![0.2, 0.0, 2.0, 0.0],
            },
            StageData {
                units: vec![5, 6, 7, 8],
                treatments: vec![1, 1, 0, 0],
                outcomes: vec![1.5, 0.7, 0.3, -0.4],
            },
        ],
        potential_outcomes: None,
        selections: None,
    }
}

pub fn enrichment_toy() -> Trial {
    Trial::new(enrichment_toy_spec(), enrichment_toy_record()).expect("toy trial is well formed")
}

/// One completely randomized stage treating two of four units, no adaptivity.
pub fn crd_toy() -> Trial {
    let spec = TrialSpec {
        num_arms: 2,
        groups: vec!["all".into()],
        stages: vec![StageSpec {
            mechanism: Mechanism::crd(vec![1, 1], Blocking::Stage),
            holdout: false,
            recruitment: plan(&[(INITIAL_SELECTION, &[("all", 4)])]),
        }],
        selection_rule: SelectionRule::Constant,
        statistic: StatisticId::StandardizedAteSelectedGroups,
        direction: Direction::Greater,
        null_scope: NullScope::AllRecruited,
        arm_pair: (1, 0),
    };
    let record = TrialRecord {
        units: (1..=4).map(|id| unit(id, "all")).collect(),
        stages: vec![StageData {
            units: vec![1, 2, 3, 4],
            treatments: vec![1, 0, 1, 0],
            outcomes: vec![1.0, 0.5, 2.0, -1.0],
        }],
        potential_outcomes: None,
        selections: None,
    };
    Trial::new(spec, record).expect("toy trial is well formed")
}
