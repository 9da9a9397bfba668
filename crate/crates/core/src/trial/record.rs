use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial::spec::Arm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: u64,
    pub group: String,
    /// Extra CSV columns, kept verbatim.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub covariates: BTreeMap<String, String>,
}

/// Realized data of one stage: recruitment set, assignments, observed outcomes (aligned).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageData {
    pub units: Vec<u64>,
    pub treatments: Vec<Arm>,
    pub outcomes: Vec<f64>,
}

/// Realized data of an adaptive trial.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrialRecord {
    /// Every known unit, recruited or not.
    pub units: Vec<Unit>,
    pub stages: Vec<StageData>,
    /// Full potential-outcome table, simulation mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential_outcomes: Option<BTreeMap<u64, Vec<f64>>>,
    /// Recorded selection labels `S_1..S_K`, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selections: Option<Vec<String>>,
}

const HEADER: [&str; 5] = ["unit_id", "stage", "group", "treatment", "outcome"];

impl TrialRecord {
    pub fn unit(&self, id: u64) -> Option<&Unit> {
        self.units.iter().find(|u| u.id == id)
    }

    pub fn recruited(&self) -> BTreeSet<u64> {
        self.stages
            .iter()
            .flat_map(|s| s.units.iter().copied())
            .collect()
    }

    /// Parses the `unit_id,stage,group,treatment,outcome` layout. Stage 0 rows are the
    /// never-recruited pool (treatment and outcome blank). Extra columns become covariates.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| schema(0, "header", e.to_string()))?
            .clone();
        if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
            return Err(schema(0, "header", "empty file".into()));
        }
        let mut idx = [0usize; 5];
        for (slot, name) in idx.iter_mut().zip(HEADER) {
            *slot = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| schema(0, "header", format!("missing column '{name}'")))?;
        }
        let extra: Vec<(usize, String)> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !idx.contains(i))
            .map(|(i, h)| (i, h.to_string()))
            .collect();

        let mut rec = TrialRecord::default();
        let mut seen = BTreeSet::new();
        for (row0, result) in rdr.records().enumerate() {
            let row = row0 + 1;
            let r = result.map_err(|e| schema(row, "*", e.to_string()))?;
            let field = |i: usize| r.get(i).unwrap_or("");
            let id: u64 = field(idx[0]).parse().map_err(|_| {
                schema(
                    row,
                    "unit_id",
                    format!("not an integer: '{}'", field(idx[0])),
                )
            })?;
            let stage: usize = field(idx[1]).parse().map_err(|_| {
                schema(row, "stage", format!("not an integer: '{}'", field(idx[1])))
            })?;
            let group = field(idx[2]).to_string();
            if group.is_empty() {
                return Err(schema(row, "group", "empty group label".into()));
            }
            if !seen.insert(id) {
                return Err(schema(row, "unit_id", format!("duplicate unit {id}")));
            }
            let covariates = extra
                .iter()
                .map(|(i, h)| (h.clone(), field(*i).to_string()))
                .collect();
            rec.units.push(Unit {
                id,
                group,
                covariates,
            });
            if stage == 0 {
                continue;
            }
            let treatment: Arm = field(idx[3]).parse().map_err(|_| {
                schema(
                    row,
                    "treatment",
                    format!("not an arm index: '{}'", field(idx[3])),
                )
            })?;
            let outcome: f64 = field(idx[4])
                .parse()
                .ok()
                .filter(|y: &f64| y.is_finite())
                .ok_or_else(|| {
                    schema(
                        row,
                        "outcome",
                        format!("not a finite number: '{}'", field(idx[4])),
                    )
                })?;
            if rec.stages.len() < stage {
                rec.stages.resize_with(stage, StageData::default);
            }
            let s = &mut rec.stages[stage - 1];
            s.units.push(id);
            s.treatments.push(treatment);
            s.outcomes.push(outcome);
        }
        Ok(rec)
    }

    pub fn from_csv_path(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    /// Writes the same layout `from_csv_reader` reads. Covariate columns are the union
    /// over units, sorted by name.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut extra: BTreeSet<&str> = BTreeSet::new();
        for u in &self.units {
            extra.extend(u.covariates.keys().map(String::as_str));
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = HEADER.to_vec();
        header.extend(extra.iter().copied());
        w.write_record(&header).map_err(csv_err)?;

        let mut placed: BTreeMap<u64, (usize, Arm, f64)> = BTreeMap::new();
        for (k, s) in self.stages.iter().enumerate() {
            for ((&id, &z), &y) in s.units.iter().zip(&s.treatments).zip(&s.outcomes) {
                placed.insert(id, (k + 1, z, y));
            }
        }
        // recruited units stage by stage, then the pool
        let mut order: Vec<u64> = self
            .stages
            .iter()
            .flat_map(|s| s.units.iter().copied())
            .collect();
        order.extend(
            self.units
                .iter()
                .map(|u| u.id)
                .filter(|id| !placed.contains_key(id)),
        );
        for id in order {
            let unit = self.unit(id);
            let group = unit.map(|u| u.group.as_str()).unwrap_or("");
            let mut row: Vec<String> = match placed.get(&id) {
                Some(&(k, z, y)) => vec![
                    id.to_string(),
                    k.to_string(),
                    group.into(),
                    z.to_string(),
                    fmt_f64(y),
                ],
                None => vec![
                    id.to_string(),
                    "0".into(),
                    group.into(),
                    String::new(),
                    String::new(),
                ],
            };
            for name in &extra {
                row.push(
                    unit.and_then(|u| u.covariates.get(*name))
                        .cloned()
                        .unwrap_or_default(),
                );
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt_f64(y: f64) -> String {
    // shortest representation that round-trips
    format!("{y:?}")
}

fn schema(row: usize, column: &str, message: String) -> Error {
    Error::DataSchema {
        row,
        column: column.to_string(),
        message,
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}
