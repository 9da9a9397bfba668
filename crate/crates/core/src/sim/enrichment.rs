use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{timed, Rate, StudyRow};
use crate::context::NullContext;
use crate::error::{Error, Result};
use crate::inference::{
    lower_bound_bisect, randomization_pvalue, Diagnostics, Grid, PValueResult, Sampler, TestKind,
};
use crate::rng::{derive_seed, stream};
use crate::samplers::RwmConfig;
use crate::selection::{
    default_thresholds, enrichment_select, summarize, EffectSummary, SelectionRule,
};
use crate::statistics::{scaled_delta, Direction, Moments, NullScope, StatisticId};
use crate::trial::{
    Arm, Blocking, Mechanism, StageData, StageSpec, Trial, TrialRecord, TrialSpec, Unit,
    INITIAL_SELECTION,
};

const GENERATE: u64 = 1;
const TEST: u64 = 2;
const COVER: u64 = 3;

/// Two-stage low/high enrichment design with group-blocked CRDs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnrichmentDesign {
    pub n1_low: usize,
    pub n1_high: usize,
    /// Stage-2 recruits: all from one group, or split evenly when both are kept.
    pub n2: usize,
    /// Whether stage 2 is excluded from the selection rule.
    pub holdout: bool,
    pub effect: EffectSummary,
}

impl Default for EnrichmentDesign {
    fn default() -> Self {
        EnrichmentDesign {
            n1_low: 50,
            n1_high: 50,
            n2: 40,
            holdout: true,
            effect: EffectSummary::StandardizedSe,
        }
    }
}

fn plan(entries: &[(&str, usize, usize)]) -> BTreeMap<String, BTreeMap<String, usize>> {
    entries
        .iter()
        .map(|&(label, low, high)| {
            let mut m = BTreeMap::new();
            if low > 0 {
                m.insert("low".to_string(), low);
            }
            if high > 0 {
                m.insert("high".to_string(), high);
            }
            (label.to_string(), m)
        })
        .collect()
}

/// Spec for `design`: null on the selected group(s), larger statistic means stronger effect.
pub fn enrichment_spec(design: &EnrichmentDesign) -> TrialSpec {
    let half = design.n2 / 2;
    TrialSpec {
        num_arms: 2,
        groups: vec!["low".into(), "high".into()],
        stages: vec![
            StageSpec {
                mechanism: Mechanism::crd(vec![1, 1], Blocking::Group),
                holdout: false,
                recruitment: plan(&[(INITIAL_SELECTION, design.n1_low, design.n1_high)]),
            },
            StageSpec {
                mechanism: Mechanism::crd(vec![1, 1], Blocking::Group),
                holdout: design.holdout,
                recruitment: plan(&[
                    ("only_low", design.n2, 0),
                    ("only_high", 0, design.n2),
                    ("both", half, design.n2 - half),
                ]),
            },
        ],
        selection_rule: SelectionRule::enrichment("low", "high", design.effect),
        statistic: StatisticId::StandardizedAteSelectedGroups,
        direction: Direction::Greater,
        null_scope: NullScope::SelectedGroups,
        arm_pair: (1, 0),
    }
}

struct Person {
    id: u64,
    y0: f64,
    y1: f64,
}

fn draw_people<R: Rng>(first_id: u64, n: usize, tau: f64, rng: &mut R) -> Vec<Person> {
    (0..n)
        .map(|i| {
            let y0: f64 = rng.sample(StandardNormal);
            Person {
                id: first_id + i as u64,
                y0,
                y1: y0 + tau,
            }
        })
        .collect()
}

/// Half of `n` treated, uniformly arranged.
fn crd_arms<R: Rng>(n: usize, rng: &mut R) -> Vec<Arm> {
    let mut z: Vec<Arm> = (0..n).map(|i| Arm::from(i < n / 2)).collect();
    z.shuffle(rng);
    z
}

/// Simulates one trial: standard-normal control outcomes, additive effects `tau_true`
/// (low, high), stage-1 CRD within group, enrichment selection, stage-2 recruitment and CRD.
pub fn gen_enrichment_trial<R: Rng>(
    design: &EnrichmentDesign,
    tau_true: (f64, f64),
    rng: &mut R,
) -> TrialRecord {
    let (n_low, n_high, n2) = (design.n1_low, design.n1_high, design.n2);
    let low1 = draw_people(0, n_low, tau_true.0, rng);
    let high1 = draw_people(n_low as u64, n_high, tau_true.1, rng);
    let base = (n_low + n_high) as u64;
    let low_pool = draw_people(base, n2, tau_true.0, rng);
    let high_pool = draw_people(base + n2 as u64, n2, tau_true.1, rng);

    let mut stage1 = StageData::default();
    let mut moments = Vec::new();
    for people in [&low1, &high1] {
        let z = crd_arms(people.len(), rng);
        let (mut t, mut c) = (Vec::new(), Vec::new());
        for (p, &a) in people.iter().zip(&z) {
            let y = if a == 1 { p.y1 } else { p.y0 };
            stage1.units.push(p.id);
            stage1.treatments.push(a);
            stage1.outcomes.push(y);
            if a == 1 {
                t.push(y)
            } else {
                c.push(y)
            }
        }
        moments.push((Moments::of(&t), Moments::of(&c)));
    }
    let effect = |(t, c): &(Moments, Moments)| summarize(t, c, design.effect).unwrap_or(0.0);
    let delta = scaled_delta(effect(&moments[1]), effect(&moments[0]));
    let (lower, upper) = default_thresholds();
    let (_, sizes) = enrichment_select(delta, lower, upper, n2);

    let mut stage2 = StageData::default();
    for (pool, take) in [(&low_pool, sizes.low), (&high_pool, sizes.high)] {
        let z = crd_arms(take, rng);
        for (p, &a) in pool.iter().take(take).zip(&z) {
            stage2.units.push(p.id);
            stage2.treatments.push(a);
            stage2.outcomes.push(if a == 1 { p.y1 } else { p.y0 });
        }
    }

    let mut units = Vec::new();
    let mut potential = BTreeMap::new();
    for (people, group) in [
        (&low1, "low"),
        (&high1, "high"),
        (&low_pool, "low"),
        (&high_pool, "high"),
    ] {
        for p in people.iter() {
            units.push(Unit {
                id: p.id,
                group: group.into(),
                covariates: BTreeMap::new(),
            });
            potential.insert(p.id, vec![p.y0, p.y1]);
        }
    }
    TrialRecord {
        units,
        stages: vec![stage1, stage2],
        potential_outcomes: Some(potential),
        selections: None,
    }
}

/// Where rejection sampling is run in the rejection-probability study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionPlan {
    Off,
    /// Only at `tau = 0`.
    NullOnly,
    /// At `tau = 0`, and at every `tau` when both groups are selected.
    NullAndBoth,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub replications: usize,
    pub design: EnrichmentDesign,
    /// Additive effect in the (low, high) group.
    pub tau_true: (f64, f64),
    pub tau_grid: Grid,
    pub alpha: f64,
    pub samples: usize,
    pub window: usize,
    pub burn_in: Option<usize>,
    pub rejection: RejectionPlan,
    pub max_attempts: Option<usize>,
    /// Bisection bracket and tolerance for lower bounds.
    pub bracket: (f64, f64),
    pub tol: f64,
    /// Also compute selective lower bounds with rejection sampling.
    pub coverage_rejection: bool,
    pub seed: u64,
    pub timing: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            replications: 400,
            design: EnrichmentDesign::default(),
            tau_true: (0.0, 0.0),
            tau_grid: Grid {
                lo: -1.0,
                hi: 1.0,
                step: 0.2,
            },
            alpha: 0.1,
            samples: 1000,
            window: 5,
            burn_in: None,
            rejection: RejectionPlan::NullAndBoth,
            max_attempts: None,
            bracket: (-2.0, 2.0),
            tol: 0.01,
            coverage_rejection: false,
            seed: 1,
            timing: false,
        }
    }
}

impl StudyConfig {
    pub fn check(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidArgument(
                "replications must be at least 1".into(),
            ));
        }
        if self.samples == 0 {
            return Err(Error::InvalidArgument("samples must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!(
                "alpha {} outside [0, 1)",
                self.alpha
            )));
        }
        Ok(())
    }

    fn rwm(&self) -> Sampler {
        let cfg = RwmConfig::new(self.samples, self.window);
        Sampler::Rwm(match self.burn_in {
            Some(b) => cfg.with_burn_in(b),
            None => cfg,
        })
    }

    fn rejection_sampler(&self) -> Sampler {
        Sampler::Rejection {
            samples: self.samples,
            max_attempts: self.max_attempts,
        }
    }

    fn methods(&self, with_rejection: bool) -> Vec<(&'static str, TestKind, Sampler)> {
        let mut out = vec![
            ("naive", TestKind::Naive, Sampler::rejection(self.samples)),
            ("split", TestKind::Split, Sampler::rejection(self.samples)),
            ("selective_rwm", TestKind::Selective, self.rwm()),
        ];
        if with_rejection {
            out.push((
                "selective_rejection",
                TestKind::Selective,
                self.rejection_sampler(),
            ));
        }
        out
    }
}

/// Replication `rep`'s trial and its final selection label.
fn replicate(cfg: &StudyConfig, spec: &TrialSpec, rep: usize) -> Result<(Trial, String)> {
    let mut rng = stream(cfg.seed, &[GENERATE, rep as u64]);
    let rec = gen_enrichment_trial(&cfg.design, cfg.tau_true, &mut rng);
    let trial = Trial::new(spec.clone(), rec)?;
    let label = trial
        .spec()
        .selection_rule
        .label_name(trial.observed_selection().last());
    Ok((trial, label))
}

fn fill(row: &mut StudyRow, res: Result<PValueResult>, seconds: Option<f64>) {
    row.seconds = seconds;
    match res {
        Ok(r) => {
            row.value = Some(r.estimate);
            row.se = r.mc_standard_error;
            if let Diagnostics::Rejection(d) = r.diagnostics {
                row.proposals = Some(d.proposals_attempted);
                row.accepted = Some(d.accepted);
            }
        }
        Err(e) => {
            if let Error::BudgetExhausted(n) = e {
                row.accepted = Some(n);
            }
            row.error = Some(e.code().to_string());
        }
    }
}

fn rejection_rows(cfg: &StudyConfig, spec: &TrialSpec, rep: usize) -> Vec<StudyRow> {
    let (trial, label) = match replicate(cfg, spec, rep) {
        Ok(v) => v,
        Err(e) => {
            let mut row = StudyRow::new(rep, "", "generate", None);
            row.error = Some(e.code().to_string());
            return vec![row];
        }
    };
    let seed = derive_seed(cfg.seed, &[TEST, rep as u64]);
    let mut rows = Vec::new();
    for tau in cfg.tau_grid.points() {
        let with_rs = match cfg.rejection {
            RejectionPlan::Off => false,
            RejectionPlan::NullOnly => tau == 0.0,
            RejectionPlan::NullAndBoth => tau == 0.0 || label == "both",
            RejectionPlan::All => true,
        };
        let ctx = NullContext::new(&trial, tau);
        for (name, kind, sampler) in cfg.methods(with_rs) {
            let mut row = StudyRow::new(rep, &label, name, Some(tau));
            let (res, secs) = timed(cfg.timing, || match &ctx {
                Ok(ctx) => randomization_pvalue(ctx, kind, &sampler, seed),
                Err(e) => Err(e.clone()),
            });
            fill(&mut row, res, secs);
            if row.error.as_deref() == Some("BudgetExhausted") {
                row.proposals = Some(cfg.max_attempts.unwrap_or(cfg.samples * 1000));
            }
            rows.push(row);
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub stratum: String,
    pub accepted: usize,
    pub proposals: usize,
    pub rate: f64,
    pub budget_exhausted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub method: String,
    pub stratum: String,
    pub mean_seconds: f64,
    pub total_seconds: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionSummary {
    pub replications: usize,
    pub alpha: f64,
    pub strata: BTreeMap<String, usize>,
    pub failed_rows: usize,
    pub rejection: Vec<Rate>,
    pub acceptance: Vec<Acceptance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Vec<Timing>>,
}

/// `one_subgroup` pools the `only_low` and `only_high` strata.
fn stratum_keys(label: &str) -> Vec<&'static str> {
    match label {
        "only_low" => vec!["all", "only_low", "one_subgroup"],
        "only_high" => vec!["all", "only_high", "one_subgroup"],
        "both" => vec!["all", "both"],
        _ => vec!["all"],
    }
}

fn strata_counts(rows: &[StudyRow]) -> BTreeMap<String, usize> {
    let mut seen = BTreeMap::new();
    for r in rows {
        seen.entry(r.rep).or_insert_with(|| r.selection.clone());
    }
    let mut counts = BTreeMap::new();
    for label in seen.values() {
        *counts.entry(label.clone()).or_insert(0) += 1;
    }
    counts
}

/// Rejection probabilities of naive, split, and selective tests over a grid of nulls.
pub fn run_rejection_study(cfg: &StudyConfig) -> Result<(Vec<StudyRow>, RejectionSummary)> {
    cfg.check()?;
    let spec = enrichment_spec(&cfg.design);
    let rows: Vec<StudyRow> = (0..cfg.replications)
        .into_par_iter()
        .flat_map_iter(|rep| rejection_rows(cfg, &spec, rep))
        .collect();

    // (method, stratum, tau bits) -> (hits, n)
    let mut tally: BTreeMap<(String, &str, i64), (usize, usize)> = BTreeMap::new();
    let mut acceptance: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    let mut timing: BTreeMap<(String, &str), (f64, usize)> = BTreeMap::new();
    let mut failed = 0;
    for r in &rows {
        let Some(tau) = r.tau else {
            failed += 1;
            continue;
        };
        let key_tau = (tau * 1e6).round() as i64;
        if r.method == "selective_rejection" {
            for s in stratum_keys(&r.selection) {
                let a = acceptance.entry(s).or_default();
                if let (Some(p), Some(n)) = (r.proposals, r.accepted) {
                    a.0 += n;
                    a.1 += p;
                    a.2 += usize::from(r.error.is_some());
                }
            }
        }
        if let Some(secs) = r.seconds {
            for s in stratum_keys(&r.selection) {
                let e = timing.entry((r.method.clone(), s)).or_default();
                e.0 += secs;
                e.1 += 1;
            }
        }
        let Some(p) = r.value else {
            failed += 1;
            continue;
        };
        for s in stratum_keys(&r.selection) {
            let t = tally.entry((r.method.clone(), s, key_tau)).or_default();
            t.0 += usize::from(p <= cfg.alpha);
            t.1 += 1;
        }
    }
    let rejection = tally
        .into_iter()
        .map(|((m, s, t), (hits, n))| Rate::of(&m, s, Some(t as f64 / 1e6), hits, n))
        .collect();
    let acceptance = acceptance
        .into_iter()
        .map(|(s, (acc, prop, exhausted))| Acceptance {
            stratum: s.into(),
            accepted: acc,
            proposals: prop,
            rate: acc as f64 / prop.max(1) as f64,
            budget_exhausted: exhausted,
        })
        .collect();
    let timing = cfg.timing.then(|| {
        timing
            .into_iter()
            .map(|((m, s), (total, n))| Timing {
                method: m,
                stratum: s.into(),
                mean_seconds: total / n as f64,
                total_seconds: total,
                n,
            })
            .collect()
    });
    let summary = RejectionSummary {
        replications: cfg.replications,
        alpha: cfg.alpha,
        strata: strata_counts(&rows),
        failed_rows: failed,
        rejection,
        acceptance,
        timing,
    };
    Ok((rows, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub method: String,
    pub stratum: String,
    pub coverage: f64,
    pub n: usize,
    pub se: f64,
    pub mean_lower_bound: f64,
    pub lower_bound_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub replications: usize,
    pub alpha: f64,
    pub strata: BTreeMap<String, usize>,
    pub failed_rows: usize,
    /// Bounds clipped to the bisection bracket because the p-value did not cross there.
    pub clipped: usize,
    pub coverage: Vec<Coverage>,
}

fn coverage_rows(cfg: &StudyConfig, spec: &TrialSpec, rep: usize) -> Vec<StudyRow> {
    let (trial, label) = match replicate(cfg, spec, rep) {
        Ok(v) => v,
        Err(e) => {
            let mut row = StudyRow::new(rep, "", "generate", None);
            row.error = Some(e.code().to_string());
            return vec![row];
        }
    };
    let seed = derive_seed(cfg.seed, &[COVER, rep as u64]);
    let mut rows = Vec::new();
    for (name, kind, sampler) in cfg.methods(cfg.coverage_rejection) {
        let mut row = StudyRow::new(rep, &label, name, None);
        let p = |tau: f64| -> Result<f64> {
            let ctx = NullContext::new(&trial, tau)?;
            Ok(randomization_pvalue(&ctx, kind, &sampler, seed)?.estimate)
        };
        let (res, secs) = timed(cfg.timing, || {
            lower_bound_bisect(p, cfg.alpha, cfg.bracket, cfg.tol)
        });
        row.seconds = secs;
        match res {
            Ok(lb) => row.value = Some(lb),
            Err(Error::NoBracket { lo_p, hi_p }) => {
                // no crossing inside the bracket: the bound lies beyond one of its ends
                row.value = Some(if lo_p > cfg.alpha {
                    cfg.bracket.0
                } else {
                    cfg.bracket.1
                });
                row.error = Some(
                    if hi_p <= cfg.alpha {
                        "AboveBracket"
                    } else {
                        "BelowBracket"
                    }
                    .into(),
                );
            }
            Err(e) => row.error = Some(e.code().to_string()),
        }
        rows.push(row);
    }
    rows
}

/// Coverage of one-sided lower confidence bounds for the selected group's effect.
pub fn run_coverage_study(cfg: &StudyConfig) -> Result<(Vec<StudyRow>, CoverageSummary)> {
    cfg.check()?;
    let spec = enrichment_spec(&cfg.design);
    let rows: Vec<StudyRow> = (0..cfg.replications)
        .into_par_iter()
        .flat_map_iter(|rep| coverage_rows(cfg, &spec, rep))
        .collect();
    let truth = |label: &str| match label {
        "only_low" => cfg.tau_true.0,
        "only_high" => cfg.tau_true.1,
        _ => cfg.tau_true.0.min(cfg.tau_true.1),
    };
    let mut tally: BTreeMap<(String, &str), Vec<(bool, f64)>> = BTreeMap::new();
    let (mut failed, mut clipped) = (0, 0);
    for r in &rows {
        let Some(lb) = r.value else {
            failed += 1;
            continue;
        };
        if r.error.is_some() {
            clipped += 1;
        }
        for s in stratum_keys(&r.selection) {
            tally
                .entry((r.method.clone(), s))
                .or_default()
                .push((truth(&r.selection) >= lb, lb));
        }
    }
    let coverage = tally
        .into_iter()
        .map(|((m, s), v)| {
            let n = v.len();
            let hits = v.iter().filter(|x| x.0).count();
            let rate = Rate::of(&m, s, None, hits, n);
            let mean = v.iter().map(|x| x.1).sum::<f64>() / n as f64;
            let var = v.iter().map(|x| (x.1 - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
            Coverage {
                method: m,
                stratum: s.into(),
                coverage: rate.rate,
                n,
                se: rate.se,
                mean_lower_bound: mean,
                lower_bound_se: (var / n as f64).sqrt(),
            }
        })
        .collect();
    let summary = CoverageSummary {
        replications: cfg.replications,
        alpha: cfg.alpha,
        strata: strata_counts(&rows),
        failed_rows: failed,
        clipped,
        coverage,
    };
    Ok((rows, summary))
}
