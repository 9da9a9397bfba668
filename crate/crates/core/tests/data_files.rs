use std::path::PathBuf;

use selrt::fixtures::{crd_toy, enrichment_toy};
use selrt::{Error, Trial, TrialRecord, TrialSpec};

fn data_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn load(name: &str) -> Trial {
    let dir = data_dir(name);
    let spec =
        TrialSpec::from_json(&std::fs::read_to_string(dir.join("spec.json")).unwrap()).unwrap();
    let rec = TrialRecord::from_csv_path(&dir.join("data.csv")).unwrap();
    Trial::new(spec, rec).unwrap()
}

#[test]
fn shipped_toys_match_fixtures() {
    for (name, fixture) in [("enrichment_toy", enrichment_toy()), ("crd_toy", crd_toy())] {
        let loaded = load(name);
        assert_eq!(loaded.spec(), fixture.spec(), "{name} spec");
        assert_eq!(loaded.observed(), fixture.observed(), "{name} assignment");
        assert_eq!(
            loaded.observed_outcomes(),
            fixture.observed_outcomes(),
            "{name} outcomes"
        );
        assert_eq!(
            loaded.observed_selection(),
            fixture.observed_selection(),
            "{name} selection"
        );
    }
}

#[test]
fn spec_json_round_trips() {
    let spec = enrichment_toy().spec().clone();
    assert_eq!(TrialSpec::from_json(&spec.to_json()).unwrap(), spec);
}

#[test]
fn record_csv_round_trips() {
    let rec = enrichment_toy().record().clone();
    let mut buf = Vec::new();
    rec.write_csv(&mut buf).unwrap();
    let back = TrialRecord::from_csv_reader(buf.as_slice()).unwrap();
    assert_eq!(back.stages, rec.stages);
    assert_eq!(back.units.len(), rec.units.len());
}

#[test]
fn non_numeric_outcome_names_row_and_column() {
    let csv = "unit_id,stage,group,treatment,outcome\n1,1,low,1,0.2\n2,1,low,0,abc\n";
    match TrialRecord::from_csv_reader(csv.as_bytes()) {
        Err(Error::DataSchema { row, column, .. }) => {
            assert_eq!(row, 2);
            assert_eq!(column, "outcome");
        }
        other => panic!("expected a schema error, got {other:?}"),
    }
}

#[test]
fn empty_file_is_a_header_error() {
    match TrialRecord::from_csv_reader("".as_bytes()) {
        Err(Error::DataSchema { row: 0, column, .. }) => assert_eq!(column, "header"),
        other => panic!("expected a header error, got {other:?}"),
    }
}

#[test]
fn missing_column_is_reported() {
    let csv = "unit_id,stage,group,outcome\n1,1,low,0.2\n";
    let err = TrialRecord::from_csv_reader(csv.as_bytes()).unwrap_err();
    assert!(err.to_string().contains("treatment"), "{err}");
}

#[test]
fn malformed_spec_is_a_spec_error() {
    assert!(matches!(
        TrialSpec::from_json("{\"num_arms\": 2}"),
        Err(Error::Spec(_))
    ));
}
