//! Data model of an adaptive K-stage experiment and the factorized assignment
//! probabilities.

pub(crate) mod enumerate;
mod record;
mod spec;

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use enumerate::{enumerate_assignments, space_size, AssignmentIter};
pub use record::{StageData, TrialRecord, Unit};
pub use spec::{Arm, Blocking, Mechanism, StageSpec, TrialSpec, INITIAL_SELECTION};

use crate::error::{Error, Result};
use crate::selection::{selection_path, SelectionValue, INIT_LABEL};

/// Treatment assignment for every recruited entry, stages concatenated in order.
pub type Assignment = Vec<Arm>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Observed,
    Rejection,
    Rwm,
    Enumeration,
}

/// One candidate assignment with its selection value, conditioning value, and `log q`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentSample {
    pub z: Assignment,
    pub s_value: SelectionValue,
    pub g_value: crate::selection::ConditioningValue,
    pub log_weight: f64,
    pub source: SampleSource,
}

/// A randomization block: entries of one stage sharing a mechanism draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub stage: usize,
    pub entries: Vec<usize>,
    pub kind: BlockKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockKind {
    /// Fixed per-arm counts, uniform over arrangements.
    Crd { counts: Vec<usize>, log_prob: f64 },
    /// `P(Z = 1)` per entry, aligned with `Block::entries`.
    Bernoulli { probs: Vec<f64> },
}

/// Immutable compiled view of a spec plus a well-formed record.
///
/// Recruited units are flattened into "entries" (stage 1 first); every per-entry vector
/// and every assignment is indexed the same way.
#[derive(Debug, Clone)]
pub struct Trial {
    spec: TrialSpec,
    record: TrialRecord,
    stage_ranges: Vec<Range<usize>>,
    entry_unit: Vec<u64>,
    entry_group: Vec<usize>,
    observed_z: Assignment,
    observed_y: Vec<f64>,
    observed_s: SelectionValue,
    blocks: Vec<Block>,
    /// For each stage whose data enters the selection rule: cumulative entries per group.
    selection_entries: Vec<Option<Vec<Vec<usize>>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, msg: String) {
        self.violations.push(msg);
    }
}

/// Lists every violated invariant of `rec` against `spec`; empty iff well-formed.
pub fn validate_record(spec: &TrialSpec, rec: &TrialRecord) -> ValidationReport {
    let mut report = ValidationReport::default();
    if let Err(e) = spec.check() {
        report.push(format!("spec: {e}"));
        return report;
    }
    structural_checks(spec, rec, &mut report);
    if !report.is_ok() {
        return report;
    }
    let trial = Trial::build(spec.clone(), rec.clone());
    design_checks(&trial, &mut report);
    report
}

fn structural_checks(spec: &TrialSpec, rec: &TrialRecord, report: &mut ValidationReport) {
    if rec.stages.len() != spec.num_stages() {
        report.push(format!(
            "stage count mismatch: record has {}, spec has {}",
            rec.stages.len(),
            spec.num_stages()
        ));
    }
    let mut ids = BTreeSet::new();
    for u in &rec.units {
        if !ids.insert(u.id) {
            report.push(format!("duplicate unit: {}", u.id));
        }
        if spec.group_index(&u.group).is_none() {
            report.push(format!("unknown group '{}' for unit {}", u.group, u.id));
        }
    }
    let mut recruited = BTreeSet::new();
    for (k, s) in rec.stages.iter().enumerate() {
        if s.treatments.len() != s.units.len() {
            report.push(format!(
                "length mismatch in stage {}: |Z| = {} but |R| = {}",
                k + 1,
                s.treatments.len(),
                s.units.len()
            ));
        }
        if s.outcomes.len() != s.units.len() {
            report.push(format!(
                "length mismatch in stage {}: |Y| = {} but |R| = {}",
                k + 1,
                s.outcomes.len(),
                s.units.len()
            ));
        }
        for &id in &s.units {
            if !recruited.insert(id) {
                report.push(format!("overlapping recruitment: unit {id}"));
            }
            if !ids.contains(&id) {
                report.push(format!("stage {} recruits unknown unit {id}", k + 1));
            }
        }
        for &z in &s.treatments {
            if z as usize >= spec.num_arms {
                report.push(format!("arm {z} out of range in stage {}", k + 1));
            }
        }
        if s.outcomes.iter().any(|y| !y.is_finite()) {
            report.push(format!("non-finite outcome in stage {}", k + 1));
        }
    }
}

fn design_checks(trial: &Trial, report: &mut ValidationReport) {
    let spec = &trial.spec;
    let rule = &spec.selection_rule;
    for k in 0..spec.num_stages() {
        let prev = trial.previous_label_name(k);
        let Some(plan) = spec.stages[k].recruitment.get(&prev) else {
            report.push(format!(
                "stage {}: no recruitment plan for selection '{prev}'",
                k + 1
            ));
            continue;
        };
        for (gi, g) in spec.groups.iter().enumerate() {
            let want = plan.get(g).copied().unwrap_or(0);
            let got = trial
                .stage_range(k)
                .filter(|&e| trial.entry_group[e] == gi)
                .count();
            if want != got {
                report.push(format!(
                    "stage {}: recruited {got} units from group '{g}', plan for '{prev}' says {want}",
                    k + 1
                ));
            }
        }
    }
    for (bi, block) in trial.blocks.iter().enumerate() {
        match &block.kind {
            BlockKind::Crd { counts, .. } => {
                if counts.is_empty() {
                    report.push(format!(
                        "stage {}: block {bi} of size {} is not divisible by the arm ratio",
                        block.stage + 1,
                        block.entries.len()
                    ));
                    continue;
                }
                let mut seen = vec![0usize; spec.num_arms];
                for &e in &block.entries {
                    seen[trial.observed_z[e] as usize] += 1;
                }
                if &seen != counts {
                    report.push(format!(
                        "stage {}: arm counts {seen:?} do not match the design {counts:?}",
                        block.stage + 1
                    ));
                }
            }
            BlockKind::Bernoulli { probs } => {
                for (&e, &p) in block.entries.iter().zip(probs) {
                    let z = trial.observed_z[e];
                    if (z == 1 && p == 0.0) || (z == 0 && p == 1.0) {
                        report.push(format!(
                            "stage {}: unit {} has probability zero under the mechanism",
                            block.stage + 1,
                            trial.entry_unit[e]
                        ));
                    }
                }
            }
        }
    }
    if let Some(po) = &trial.record.potential_outcomes {
        for e in 0..trial.num_entries() {
            let id = trial.entry_unit[e];
            match po.get(&id) {
                Some(row) if row.len() == spec.num_arms => {
                    let z = trial.observed_z[e] as usize;
                    if row[z] != trial.observed_y[e] {
                        report.push(format!(
                            "consistency violated for unit {id}: Y = {} but Y({z}) = {}",
                            trial.observed_y[e], row[z]
                        ));
                    }
                }
                _ => report.push(format!(
                    "potential outcomes missing or malformed for unit {id}"
                )),
            }
        }
    }
    if let Some(recorded) = &trial.record.selections {
        let computed: Vec<String> = trial
            .observed_s
            .0
            .iter()
            .map(|&l| rule.label_name(l))
            .collect();
        if recorded != &computed {
            report.push(format!(
                "recorded selections {recorded:?} differ from recomputed {computed:?}"
            ));
        }
    }
    if let Err(e) = &trial.observed_selection_result() {
        report.push(format!("selection rule fails on observed data: {e}"));
    }
}

impl Trial {
    /// Compiles a spec and record; fails with the validation report if malformed.
    pub fn new(spec: TrialSpec, record: TrialRecord) -> Result<Self> {
        let report = validate_record(&spec, &record);
        if !report.is_ok() {
            return Err(Error::Data(report.violations.join("; ")));
        }
        Ok(Trial::build(spec, record))
    }

    /// Layout without validation. Callers must have run the structural checks.
    fn build(spec: TrialSpec, record: TrialRecord) -> Self {
        let mut stage_ranges = Vec::new();
        let mut entry_unit = Vec::new();
        let mut entry_group = Vec::new();
        let mut observed_z = Vec::new();
        let mut observed_y = Vec::new();
        let group_of: std::collections::HashMap<u64, usize> = record
            .units
            .iter()
            .map(|u| (u.id, spec.group_index(&u.group).unwrap_or(0)))
            .collect();
        for s in &record.stages {
            let start = entry_unit.len();
            for i in 0..s.units.len() {
                entry_unit.push(s.units[i]);
                entry_group.push(group_of.get(&s.units[i]).copied().unwrap_or(0));
                observed_z.push(s.treatments[i]);
                observed_y.push(s.outcomes[i]);
            }
            stage_ranges.push(start..entry_unit.len());
        }
        let num_groups = spec.groups.len();
        let mut selection_entries = Vec::with_capacity(stage_ranges.len());
        let mut acc: Vec<Vec<usize>> = vec![Vec::new(); num_groups];
        for (k, range) in stage_ranges.iter().enumerate() {
            if spec.stages[k].holdout {
                selection_entries.push(None);
                continue;
            }
            for e in range.clone() {
                acc[entry_group[e]].push(e);
            }
            selection_entries.push(Some(acc.clone()));
        }
        let mut trial = Trial {
            spec,
            record,
            stage_ranges,
            entry_unit,
            entry_group,
            observed_z,
            observed_y,
            observed_s: SelectionValue(Vec::new()),
            blocks: Vec::new(),
            selection_entries,
        };
        trial.observed_s = trial
            .observed_selection_result()
            .unwrap_or_else(|_| SelectionValue(vec![INIT_LABEL; trial.num_stages()]));
        trial.blocks = trial.make_blocks();
        trial
    }

    fn observed_selection_result(&self) -> Result<SelectionValue> {
        selection_path(self, &self.observed_z, &self.observed_y)
    }

    fn make_blocks(&self) -> Vec<Block> {
        let mut blocks = Vec::new();
        for k in 0..self.num_stages() {
            let prev = self.previous_label_name(k);
            match &self.spec.stages[k].mechanism {
                Mechanism::CompletelyRandomized {
                    arm_ratio,
                    blocking,
                } => {
                    let parts: Vec<Vec<usize>> = match blocking {
                        Blocking::Stage => vec![self.stage_range(k).collect()],
                        Blocking::Group => (0..self.spec.groups.len())
                            .map(|g| {
                                self.stage_range(k)
                                    .filter(|&e| self.entry_group[e] == g)
                                    .collect::<Vec<_>>()
                            })
                            .filter(|v| !v.is_empty())
                            .collect(),
                    };
                    for entries in parts {
                        let counts =
                            Mechanism::crd_counts(arm_ratio, entries.len()).unwrap_or_default();
                        let log_prob = if counts.is_empty() {
                            f64::NEG_INFINITY
                        } else {
                            -ln_multinomial(&counts)
                        };
                        blocks.push(Block {
                            stage: k,
                            entries,
                            kind: BlockKind::Crd { counts, log_prob },
                        });
                    }
                }
                mech @ Mechanism::Bernoulli { .. } => {
                    let entries: Vec<usize> = self.stage_range(k).collect();
                    let probs = entries
                        .iter()
                        .map(|&e| {
                            mech.treat_probability(&self.spec.groups[self.entry_group[e]], &prev)
                                .unwrap_or(0.5)
                        })
                        .collect();
                    blocks.push(Block {
                        stage: k,
                        entries,
                        kind: BlockKind::Bernoulli { probs },
                    });
                }
            }
        }
        blocks
    }

    /// Name of `S_{k-1}` on the observed data (`"init"` before any selection).
    fn previous_label_name(&self, k: usize) -> String {
        if k == 0 {
            return INITIAL_SELECTION.to_string();
        }
        self.spec
            .selection_rule
            .label_name(self.observed_s.0[k - 1])
    }

    pub fn spec(&self) -> &TrialSpec {
        &self.spec
    }

    pub fn record(&self) -> &TrialRecord {
        &self.record
    }

    pub fn num_stages(&self) -> usize {
        self.stage_ranges.len()
    }

    pub fn num_entries(&self) -> usize {
        self.entry_unit.len()
    }

    pub fn stage_range(&self, k: usize) -> Range<usize> {
        self.stage_ranges[k].clone()
    }

    pub fn stage_of(&self, entry: usize) -> usize {
        self.stage_ranges
            .iter()
            .position(|r| r.contains(&entry))
            .expect("entry in range")
    }

    #[inline]
    pub fn entry_unit(&self, e: usize) -> u64 {
        self.entry_unit[e]
    }

    #[inline]
    pub fn entry_group(&self, e: usize) -> usize {
        self.entry_group[e]
    }

    pub fn entry_group_name(&self, e: usize) -> &str {
        &self.spec.groups[self.entry_group[e]]
    }

    pub fn observed(&self) -> &Assignment {
        &self.observed_z
    }

    pub fn observed_outcomes(&self) -> &[f64] {
        &self.observed_y
    }

    /// `S(z)` on the observed data.
    pub fn observed_selection(&self) -> &SelectionValue {
        &self.observed_s
    }

    /// Groups picked by the final observed selection.
    pub fn selected_groups(&self) -> Vec<usize> {
        let last = *self.observed_s.0.last().expect("at least one stage");
        self.spec.selection_rule.selected_groups(&self.spec, last)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub(crate) fn selection_entries(&self, k: usize) -> Option<&Vec<Vec<usize>>> {
        self.selection_entries[k].as_ref()
    }

    /// `sum_k log P(Z_k = z_k | R_k, X_{R_k}, S_{k-1})` with `S_{k-1}` fixed at the observed
    /// selection path (the conditioning value for every `z` in the selective reference set).
    /// The `1{S = s, G = g}` indicator is not applied.
    pub fn assignment_log_weight(&self, z: &[Arm]) -> Result<f64> {
        if z.len() != self.num_entries() {
            return Err(Error::InfeasibleAssignment(format!(
                "assignment has {} entries, trial has {}",
                z.len(),
                self.num_entries()
            )));
        }
        let mut total = 0.0;
        for block in &self.blocks {
            match &block.kind {
                BlockKind::Crd { counts, log_prob } => {
                    let mut seen = vec![0usize; counts.len()];
                    for &e in &block.entries {
                        let a = z[e] as usize;
                        if a >= seen.len() {
                            return Err(Error::InfeasibleAssignment(format!(
                                "arm {a} out of range"
                            )));
                        }
                        seen[a] += 1;
                    }
                    if &seen != counts {
                        return Err(Error::InfeasibleAssignment(format!(
                            "stage {} block counts {seen:?} differ from design {counts:?}",
                            block.stage + 1
                        )));
                    }
                    total += log_prob;
                }
                BlockKind::Bernoulli { probs } => {
                    for (&e, &p) in block.entries.iter().zip(probs) {
                        let pr = match z[e] {
                            1 => p,
                            0 => 1.0 - p,
                            a => {
                                return Err(Error::InfeasibleAssignment(format!(
                                    "arm {a} in a Bernoulli stage"
                                )))
                            }
                        };
                        if pr <= 0.0 {
                            return Err(Error::InfeasibleAssignment(format!(
                                "unit {} has probability zero",
                                self.entry_unit[e]
                            )));
                        }
                        total += pr.ln();
                    }
                }
            }
        }
        Ok(total)
    }
}

/// `ln( n! / prod c_l! )`.
pub(crate) fn ln_multinomial(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    ln_factorial(n) - counts.iter().map(|&c| ln_factorial(c)).sum::<f64>()
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}
