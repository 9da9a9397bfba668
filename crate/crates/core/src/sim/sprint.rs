use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{timed, Rate, StudyRow};
use crate::context::NullContext;
use crate::error::{Error, Result};
use crate::inference::{randomization_pvalue, Diagnostics, Sampler, TestKind};
use crate::rng::{derive_seed, stream};
use crate::selection::{argmin_ratio, SelectionRule};
use crate::statistics::{Direction, Moments, NullScope, StatisticId};
use crate::trial::{
    Arm, Mechanism, StageData, StageSpec, Trial, TrialRecord, TrialSpec, Unit, INITIAL_SELECTION,
};

const POPULATION: u64 = 5;
const SUBSAMPLE: u64 = 6;
const TEST: u64 = 7;
/// Replications drawn per parallel round while searching for target-selection trials.
const ROUND: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationUnit {
    pub unit_id: u64,
    pub group: String,
    pub treatment: Arm,
    pub outcome: f64,
}

/// A single-stage randomized experiment with 0/1 outcomes, the source for subsampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryPopulation {
    pub groups: Vec<String>,
    pub units: Vec<PopulationUnit>,
}

impl BinaryPopulation {
    /// Reads `unit_id,group,treatment,outcome` rows. Groups keep first-seen order.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut units = Vec::new();
        let mut groups: Vec<String> = Vec::new();
        for (i, row) in rdr.deserialize::<PopulationUnit>().enumerate() {
            let u = row.map_err(|e| Error::DataSchema {
                row: i + 1,
                column: "record".into(),
                message: e.to_string(),
            })?;
            if u.outcome != 0.0 && u.outcome != 1.0 {
                return Err(Error::DataSchema {
                    row: i + 1,
                    column: "outcome".into(),
                    message: format!("expected 0 or 1, got {}", u.outcome),
                });
            }
            if !groups.contains(&u.group) {
                groups.push(u.group.clone());
            }
            units.push(u);
        }
        if units.is_empty() {
            return Err(Error::DataSchema {
                row: 0,
                column: "header".into(),
                message: "no rows".into(),
            });
        }
        Ok(BinaryPopulation { groups, units })
    }

    /// Units with `treatment == 0`.
    pub fn controls(&self) -> BinaryPopulation {
        BinaryPopulation {
            groups: self.groups.clone(),
            units: self
                .units
                .iter()
                .filter(|u| u.treatment == 0)
                .cloned()
                .collect(),
        }
    }
}

/// Age groups, stage-1 counts (control + treated), and per-arm event rates (control,
/// treated) of the hypothetical SPRINT-based trial, with stage 2 pooled into the oldest group.
const SURROGATE_GROUPS: [(&str, usize, f64, f64); 4] = [
    ("<=59", 408, 8.0 / 195.0, 12.0 / 213.0),
    ("60-69", 710, 17.0 / 366.0, 13.0 / 344.0),
    ("70-79", 608, 22.0 / 297.0, 22.0 / 311.0),
    (">=80", 274, 36.0 / 246.0, 20.0 / 228.0),
];
const SURROGATE_SIZE: usize = 9361;

/// Synthetic stand-in for the SPRINT data: 9361 units split over four age groups in the
/// stage-1 proportions, half of each group treated, events drawn at the per-arm rates.
pub fn surrogate_population(seed: u64) -> BinaryPopulation {
    let mut rng = stream(seed, &[POPULATION]);
    let total: usize = SURROGATE_GROUPS.iter().map(|g| g.1).sum();
    let mut units = Vec::with_capacity(SURROGATE_SIZE);
    let mut assigned = 0;
    for (i, &(name, count, p_control, p_treated)) in SURROGATE_GROUPS.iter().enumerate() {
        let size = if i + 1 == SURROGATE_GROUPS.len() {
            SURROGATE_SIZE - assigned
        } else {
            (SURROGATE_SIZE * count + total / 2) / total
        };
        assigned += size;
        let mut arms: Vec<Arm> = (0..size).map(|j| Arm::from(j < size / 2)).collect();
        arms.shuffle(&mut rng);
        for a in arms {
            let p = if a == 1 { p_treated } else { p_control };
            units.push(PopulationUnit {
                unit_id: units.len() as u64,
                group: name.into(),
                treatment: a,
                outcome: f64::from(u8::from(rng.gen::<f64>() < p)),
            });
        }
    }
    BinaryPopulation {
        groups: SURROGATE_GROUPS.iter().map(|g| g.0.to_string()).collect(),
        units,
    }
}

/// How treatments of subsampled units are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Keep the recorded treatments.
    Treated,
    /// Control units only, with fabricated Bernoulli(1/2) treatments.
    Placebo,
}

/// Two-stage min-relative-risk spec with realized stage-1 group counts.
pub fn min_rr_spec(
    groups: &[String],
    stage1_counts: &BTreeMap<String, usize>,
    n2: usize,
) -> TrialSpec {
    let mut plans = BTreeMap::new();
    plans.insert(INITIAL_SELECTION.to_string(), stage1_counts.clone());
    let mut later = BTreeMap::new();
    for g in groups {
        later.insert(g.clone(), BTreeMap::from([(g.clone(), n2)]));
    }
    TrialSpec {
        num_arms: 2,
        groups: groups.to_vec(),
        stages: vec![
            StageSpec {
                mechanism: Mechanism::bernoulli(0.5),
                holdout: false,
                recruitment: plans,
            },
            StageSpec {
                mechanism: Mechanism::bernoulli(0.5),
                holdout: true,
                recruitment: later,
            },
        ],
        selection_rule: SelectionRule::MinRelativeRiskAgeGroup {
            candidates: groups.to_vec(),
        },
        statistic: StatisticId::RelativeRisk,
        direction: Direction::Less,
        null_scope: NullScope::AllRecruited,
        arm_pair: (1, 0),
    }
}

/// Samples `n1` units, keeps the group with the smallest stage-1 relative risk, then samples
/// `n2` more units of that group from those not yet recruited.
pub fn subsample_two_stage<R: Rng>(
    pop: &BinaryPopulation,
    n1: usize,
    n2: usize,
    protocol: Protocol,
    rng: &mut R,
) -> Result<(TrialSpec, TrialRecord)> {
    if pop.units.len() < n1 {
        return Err(Error::InsufficientUnits {
            needed: n1,
            available: pop.units.len(),
        });
    }
    let mut order: Vec<usize> = (0..pop.units.len()).collect();
    order.shuffle(rng);
    let (first, rest) = order.split_at(n1);
    let draw_arm = |u: &PopulationUnit, rng: &mut R| match protocol {
        Protocol::Treated => u.treatment,
        Protocol::Placebo => Arm::from(rng.gen::<f64>() < 0.5),
    };
    let mut stage1 = StageData::default();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for &i in first {
        let u = &pop.units[i];
        stage1.units.push(u.unit_id);
        stage1.treatments.push(draw_arm(u, rng));
        stage1.outcomes.push(u.outcome);
        *counts.entry(u.group.clone()).or_default() += 1;
    }
    let cells: Vec<(Moments, Moments)> = pop
        .groups
        .iter()
        .map(|g| {
            let (mut t, mut c) = (Vec::new(), Vec::new());
            for (k, &i) in first.iter().enumerate() {
                if &pop.units[i].group == g {
                    if stage1.treatments[k] == 1 {
                        t.push(stage1.outcomes[k]);
                    } else {
                        c.push(stage1.outcomes[k]);
                    }
                }
            }
            (Moments::of(&t), Moments::of(&c))
        })
        .collect();
    let chosen = &pop.groups[argmin_ratio(&cells) as usize];
    let pool: Vec<usize> = rest
        .iter()
        .copied()
        .filter(|&i| &pop.units[i].group == chosen)
        .collect();
    if pool.len() < n2 {
        return Err(Error::InsufficientUnits {
            needed: n2,
            available: pool.len(),
        });
    }
    let mut stage2 = StageData::default();
    for &i in &pool[..n2] {
        let u = &pop.units[i];
        stage2.units.push(u.unit_id);
        stage2.treatments.push(draw_arm(u, rng));
        stage2.outcomes.push(u.outcome);
    }
    let recruited: BTreeSet<u64> = stage1.units.iter().chain(&stage2.units).copied().collect();
    let units = pop
        .units
        .iter()
        .filter(|u| recruited.contains(&u.unit_id))
        .map(|u| Unit {
            id: u.unit_id,
            group: u.group.clone(),
            covariates: BTreeMap::new(),
        })
        .collect();
    let record = TrialRecord {
        units,
        stages: vec![stage1, stage2],
        potential_outcomes: None,
        selections: None,
    };
    Ok((min_rr_spec(&pop.groups, &counts, n2), record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlaceboConfig {
    pub protocol: Protocol,
    pub n1: usize,
    pub n2: usize,
    /// Trials to analyze. With a target group, only trials selecting it count.
    pub trials: usize,
    pub target_group: Option<String>,
    /// Upper limit on subsampled trials while searching for target selections.
    pub max_replications: usize,
    pub samples: usize,
    pub alphas: Vec<f64>,
    pub seed: u64,
    pub timing: bool,
}

impl Default for PlaceboConfig {
    fn default() -> Self {
        PlaceboConfig {
            protocol: Protocol::Placebo,
            n1: 2000,
            n2: 200,
            trials: 200,
            target_group: Some(">=80".into()),
            max_replications: 20_000,
            samples: 1000,
            alphas: vec![0.05, 0.1],
            seed: 1,
            timing: false,
        }
    }
}

/// Empirical p-value CDF `F(alpha)` of one method with its binomial standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub method: String,
    pub alpha: f64,
    pub value: f64,
    pub n: usize,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboReport {
    pub protocol: Protocol,
    pub replications_run: usize,
    pub trials: usize,
    pub selections: BTreeMap<String, usize>,
    pub cdf: Vec<CdfPoint>,
    pub failed_rows: usize,
}

const METHODS: [(&str, TestKind); 3] = [
    ("naive", TestKind::Naive),
    ("split", TestKind::Split),
    ("selective_rejection", TestKind::Selective),
];

/// `None` when the trial does not select the target group.
fn replicate(
    pop: &BinaryPopulation,
    cfg: &PlaceboConfig,
    rep: usize,
) -> (String, Option<Vec<StudyRow>>) {
    let mut rng = stream(cfg.seed, &[SUBSAMPLE, rep as u64]);
    let built = subsample_two_stage(pop, cfg.n1, cfg.n2, cfg.protocol, &mut rng)
        .and_then(|(spec, rec)| Trial::new(spec, rec));
    let trial = match built {
        Ok(t) => t,
        Err(e) => {
            let mut row = StudyRow::new(rep, "", "subsample", Some(0.0));
            row.error = Some(e.code().to_string());
            return (String::new(), Some(vec![row]));
        }
    };
    let label = trial
        .spec()
        .selection_rule
        .label_name(trial.observed_selection().last());
    if cfg.target_group.as_ref().is_some_and(|g| g != &label) {
        return (label, None);
    }
    let seed = derive_seed(cfg.seed, &[TEST, rep as u64]);
    let ctx = NullContext::new(&trial, 0.0);
    let sampler = Sampler::rejection(cfg.samples);
    let rows = METHODS
        .iter()
        .map(|&(name, kind)| {
            let mut row = StudyRow::new(rep, &label, name, Some(0.0));
            let (res, secs) = timed(cfg.timing, || match &ctx {
                Ok(ctx) => randomization_pvalue(ctx, kind, &sampler, seed),
                Err(e) => Err(e.clone()),
            });
            row.seconds = secs;
            match res {
                Ok(r) => {
                    row.value = Some(r.estimate);
                    row.se = r.mc_standard_error;
                    if let Diagnostics::Rejection(d) = r.diagnostics {
                        row.proposals = Some(d.proposals_attempted);
                        row.accepted = Some(d.accepted);
                    }
                }
                Err(e) => row.error = Some(e.code().to_string()),
            }
            row
        })
        .collect();
    (label, Some(rows))
}

/// Repeated subsampled two-stage trials tested at the sharp null of no effect.
pub fn run_placebo_study(
    pop: &BinaryPopulation,
    cfg: &PlaceboConfig,
) -> Result<(Vec<StudyRow>, PlaceboReport)> {
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let pop = match cfg.protocol {
        Protocol::Treated => pop.clone(),
        Protocol::Placebo => pop.controls(),
    };
    let mut rows = Vec::new();
    let mut selections: BTreeMap<String, usize> = BTreeMap::new();
    let (mut kept, mut run) = (0usize, 0usize);
    while kept < cfg.trials && run < cfg.max_replications {
        let end = (run + ROUND).min(cfg.max_replications);
        let round: Vec<(String, Option<Vec<StudyRow>>)> = (run..end)
            .into_par_iter()
            .map(|r| replicate(&pop, cfg, r))
            .collect();
        for (label, analyzed) in round {
            if kept == cfg.trials {
                break;
            }
            run += 1;
            *selections.entry(label).or_default() += 1;
            if let Some(r) = analyzed {
                rows.extend(r);
                kept += 1;
            }
        }
    }
    let failed = rows.iter().filter(|r| r.value.is_none()).count();
    let mut cdf = Vec::new();
    for &(name, _) in &METHODS {
        let ps: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == name)
            .filter_map(|r| r.value)
            .collect();
        for &alpha in &cfg.alphas {
            let hits = ps.iter().filter(|&&p| p <= alpha).count();
            let r = Rate::of(name, "", Some(alpha), hits, ps.len());
            cdf.push(CdfPoint {
                method: r.method,
                alpha,
                value: r.rate,
                n: r.n,
                se: r.se,
            });
        }
    }
    Ok((
        rows,
        PlaceboReport {
            protocol: cfg.protocol,
            replications_run: run,
            trials: kept,
            selections,
            cdf,
            failed_rows: failed,
        },
    ))
}
