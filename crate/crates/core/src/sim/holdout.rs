use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::enrichment::{enrichment_spec, gen_enrichment_trial, EnrichmentDesign};
use crate::error::{Error, Result};
use crate::inference::{
    crossings, curve_pairs, hl_estimate, p_curve, CurvePoint, Grid, Sampler, TestKind,
};
use crate::rng::stream;
use crate::trial::Trial;

const GENERATE: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoldoutConfig {
    /// Simulated datasets; only those where both rules keep the high group are compared.
    pub datasets: usize,
    pub design: EnrichmentDesign,
    pub tau_true: (f64, f64),
    pub grid: Grid,
    /// Enumeration cap per p-value.
    pub cap: u128,
    pub seed: u64,
}

impl Default for HoldoutConfig {
    fn default() -> Self {
        HoldoutConfig {
            datasets: 60,
            design: EnrichmentDesign {
                n1_low: 4,
                n1_high: 4,
                n2: 8,
                ..EnrichmentDesign::default()
            },
            tau_true: (0.0, 1.0),
            grid: Grid {
                lo: -2.0,
                hi: 3.0,
                step: 0.05,
            },
            cap: 1_000_000,
            seed: 1,
        }
    }
}

/// Exact p-curves of one matched dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutCurves {
    pub dataset: usize,
    /// Selection uses both stages.
    pub full: Vec<CurvePoint>,
    /// Selection uses stage 1 only.
    pub holdout: Vec<CurvePoint>,
    /// Stage-1 frozen, stage-2 statistic.
    pub split: Vec<CurvePoint>,
    pub crossings: [usize; 3],
    pub hl_holdout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub datasets: usize,
    pub matched: usize,
    /// Crossings of level 1/2, averaged over matched datasets (full, holdout, split).
    pub mean_crossings: [f64; 3],
    /// Share of matched datasets where the hold-out curve crosses no more often than the full one.
    pub holdout_not_worse: f64,
    /// Share where the split curve has the fewest crossings of the three.
    pub split_fewest: f64,
    pub mean_hl_holdout: Option<f64>,
    pub curves: Vec<HoldoutCurves>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutRow {
    pub dataset: usize,
    pub method: String,
    pub tau: f64,
    pub p: Option<f64>,
    pub error: Option<String>,
}

impl HoldoutReport {
    /// Long-format `dataset,method,tau,p,error` rows.
    pub fn rows(&self) -> Vec<HoldoutRow> {
        let mut out = Vec::new();
        for c in &self.curves {
            for (name, curve) in [
                ("full", &c.full),
                ("holdout", &c.holdout),
                ("split", &c.split),
            ] {
                out.extend(curve.iter().map(|pt| HoldoutRow {
                    dataset: c.dataset,
                    method: name.into(),
                    tau: pt.tau,
                    p: pt.p,
                    error: pt.error.clone(),
                }));
            }
        }
        out
    }
}

fn analyze(cfg: &HoldoutConfig, dataset: usize) -> Result<Option<HoldoutCurves>> {
    let mut rng = stream(cfg.seed, &[GENERATE, dataset as u64]);
    let rec = gen_enrichment_trial(&cfg.design, cfg.tau_true, &mut rng);
    let held = EnrichmentDesign {
        holdout: true,
        ..cfg.design.clone()
    };
    let full = EnrichmentDesign {
        holdout: false,
        ..cfg.design.clone()
    };
    let t_held = Trial::new(enrichment_spec(&held), rec.clone())?;
    let t_full = Trial::new(enrichment_spec(&full), rec)?;
    let label = |t: &Trial| {
        t.spec()
            .selection_rule
            .label_name(t.observed_selection().last())
    };
    if label(&t_held) != "only_high" || label(&t_full) != "only_high" {
        return Ok(None);
    }
    let taus = cfg.grid.points();
    let exact = Sampler::Exact { cap: cfg.cap };
    let full_curve = p_curve(&t_full, TestKind::Selective, &taus, &exact, 0);
    let held_curve = p_curve(&t_held, TestKind::Selective, &taus, &exact, 0);
    let split_curve = p_curve(&t_held, TestKind::Split, &taus, &exact, 0);
    for curve in [&full_curve, &held_curve, &split_curve] {
        if let Some(pt) = curve.iter().find(|pt| pt.error.is_some()) {
            return Err(Error::InvalidArgument(format!(
                "p-value failed at tau = {}: {}",
                pt.tau,
                pt.error.as_deref().unwrap_or_default()
            )));
        }
    }
    let count = |c: &[CurvePoint]| crossings(&curve_pairs(c), 0.5);
    Ok(Some(HoldoutCurves {
        dataset,
        crossings: [count(&full_curve), count(&held_curve), count(&split_curve)],
        hl_holdout: hl_estimate(&curve_pairs(&held_curve)).ok(),
        full: full_curve,
        holdout: held_curve,
        split: split_curve,
    }))
}

/// Exact p-curves with and without hold-out units on datasets where both selection
/// rules keep the high group.
pub fn run_holdout_study(cfg: &HoldoutConfig) -> Result<HoldoutReport> {
    if cfg.datasets == 0 {
        return Err(Error::InvalidArgument("datasets must be at least 1".into()));
    }
    let results: Vec<Result<Option<HoldoutCurves>>> = (0..cfg.datasets)
        .into_par_iter()
        .map(|d| analyze(cfg, d))
        .collect();
    let mut curves = Vec::new();
    for r in results {
        if let Some(c) = r? {
            curves.push(c);
        }
    }
    let n = curves.len();
    let share = |f: &dyn Fn(&HoldoutCurves) -> bool| {
        if n == 0 {
            f64::NAN
        } else {
            curves.iter().filter(|c| f(c)).count() as f64 / n as f64
        }
    };
    let mean_crossings: [f64; 3] = std::array::from_fn(|i| {
        curves.iter().map(|c| c.crossings[i]).sum::<usize>() as f64 / n.max(1) as f64
    });
    let hls: Vec<f64> = curves.iter().filter_map(|c| c.hl_holdout).collect();
    Ok(HoldoutReport {
        datasets: cfg.datasets,
        matched: n,
        mean_crossings,
        holdout_not_worse: share(&|c| c.crossings[1] <= c.crossings[0]),
        split_fewest: share(&|c| {
            c.crossings[2] <= c.crossings[0] && c.crossings[2] <= c.crossings[1]
        }),
        mean_hl_holdout: (!hls.is_empty()).then(|| hls.iter().sum::<f64>() / hls.len() as f64),
        curves,
    })
}
