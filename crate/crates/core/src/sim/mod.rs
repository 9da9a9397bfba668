//! Study drivers: the enrichment-trial simulation, the hold-out comparison, and
//! subsampled binary-outcome trials with placebo and power protocols.

mod enrichment;
mod holdout;
mod sprint;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use enrichment::{
    enrichment_spec, gen_enrichment_trial, run_coverage_study, run_rejection_study, Acceptance,
    Coverage, CoverageSummary, EnrichmentDesign, RejectionPlan, RejectionSummary, StudyConfig,
    Timing,
};
pub use holdout::{run_holdout_study, HoldoutConfig, HoldoutCurves, HoldoutReport, HoldoutRow};
pub use sprint::{
    min_rr_spec, run_placebo_study, subsample_two_stage, surrogate_population, BinaryPopulation,
    CdfPoint, PlaceboConfig, PlaceboReport, PopulationUnit, Protocol,
};

use crate::error::{Error, Result};

/// One p-value or lower bound from one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub rep: usize,
    pub selection: String,
    pub method: String,
    pub tau: Option<f64>,
    /// P-value, or the lower confidence bound in coverage studies.
    pub value: Option<f64>,
    pub se: Option<f64>,
    pub proposals: Option<usize>,
    pub accepted: Option<usize>,
    pub seconds: Option<f64>,
    pub error: Option<String>,
}

impl StudyRow {
    fn new(rep: usize, selection: &str, method: &str, tau: Option<f64>) -> Self {
        StudyRow {
            rep,
            selection: selection.to_string(),
            method: method.to_string(),
            tau,
            value: None,
            se: None,
            proposals: None,
            accepted: None,
            seconds: None,
            error: None,
        }
    }
}

/// A proportion with its binomial standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub method: String,
    pub stratum: String,
    pub tau: Option<f64>,
    pub rate: f64,
    pub n: usize,
    pub se: f64,
}

impl Rate {
    fn of(method: &str, stratum: &str, tau: Option<f64>, hits: usize, n: usize) -> Self {
        let rate = if n == 0 {
            f64::NAN
        } else {
            hits as f64 / n as f64
        };
        Rate {
            method: method.into(),
            stratum: stratum.into(),
            tau,
            rate,
            n,
            se: if n == 0 {
                f64::NAN
            } else {
                (rate * (1.0 - rate) / n as f64).sqrt()
            },
        }
    }
}

/// Writes rows as CSV with a header.
pub fn write_rows_csv<W: Write, T: Serialize>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<W: Write, T: Serialize>(value: &T, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn save_study<R: Serialize, S: Serialize>(
    dir: &Path,
    stem: &str,
    rows: &[R],
    summary: &S,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rows_csv(
        rows,
        std::fs::File::create(dir.join(format!("{stem}.csv")))?,
    )?;
    write_json(
        summary,
        std::fs::File::create(dir.join(format!("{stem}.json")))?,
    )
}

/// Seconds elapsed running `f`, when `enabled`.
fn timed<T>(enabled: bool, f: impl FnOnce() -> T) -> (T, Option<f64>) {
    if enabled {
        let start = std::time::Instant::now();
        let out = f();
        (out, Some(start.elapsed().as_secs_f64()))
    } else {
        (f(), None)
    }
}
