//! Output schema of the experiment harness, pinned against a golden file.
//! Set `ACX_UPDATE_GOLDEN=1` to rewrite the golden file after an intended
//! schema change.

use std::collections::BTreeSet;
use std::path::Path;

use acx::experiments::{self, ExperimentReport};
use serde_json::Value;

fn tiny_estimation() -> ExperimentReport {
    let mut cfg = experiments::builtin_scenario("s1_prime")
        .unwrap()
        .with_reps(2)
        .with_sample_sizes(vec![80])
        .with_seed(42);
    cfg.starts = 1;
    cfg.test.as_mut().unwrap().draws = 1000;
    experiments::run_estimation_study(&[cfg]).unwrap()
}

fn tiny_selection() -> ExperimentReport {
    let mut cfg = experiments::builtin_scenario("s1_star")
        .unwrap()
        .with_reps(2)
        .with_sample_sizes(vec![100])
        .with_seed(42);
    let sel = cfg.selection.as_mut().unwrap();
    sel.q_max = 2;
    sel.starts = 1;
    experiments::run_selection_study(&[cfg]).unwrap()
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// One line per key path with the JSON types seen there.
fn schema(v: &Value, path: &str, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let p = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                out.insert(format!("{p}: {}", type_name(child)));
                schema(child, &p, out);
            }
        }
        Value::Array(items) => {
            for item in items {
                out.insert(format!("{path}[]: {}", type_name(item)));
                schema(item, &format!("{path}[]"), out);
            }
        }
        _ => {}
    }
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn report_schema_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = BTreeSet::new();
    for (name, report) in [
        ("estimation", tiny_estimation()),
        ("selection", tiny_selection()),
    ] {
        let out = dir.path().join(name);
        experiments::write_outputs(&report, &out).unwrap();
        let json: Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap())
                .unwrap();
        let mut keys = BTreeSet::new();
        schema(&json, "", &mut keys);
        lines.extend(keys.into_iter().map(|k| format!("{name} report.json {k}")));
        let timing: Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("timing.json")).unwrap())
                .unwrap();
        let mut keys = BTreeSet::new();
        schema(&timing, "", &mut keys);
        lines.extend(keys.into_iter().map(|k| format!("{name} timing.json {k}")));
        for csv in ["table1.csv", "estimates.csv", "selection.csv"] {
            let p = out.join(csv);
            if p.is_file() {
                lines.insert(format!("{name} {csv} {}", header(&p)));
            }
        }
    }
    let actual: String = lines.into_iter().map(|l| l + "\n").collect();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report_schema.txt");
    if std::env::var_os("ACX_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden.parent().unwrap()).unwrap();
        std::fs::write(&golden, &actual).unwrap();
    }
    let expected = std::fs::read_to_string(&golden).expect("golden schema file");
    assert_eq!(actual, expected, "report schema changed");
}

#[test]
fn fixed_seed_outputs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    experiments::write_outputs(&tiny_estimation(), a.path()).unwrap();
    experiments::write_outputs(&tiny_estimation(), b.path()).unwrap();
    for f in ["report.json", "table1.csv", "estimates.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn table_has_one_row_per_cell() {
    let mut cfg = experiments::builtin_scenario("s0")
        .unwrap()
        .with_reps(1)
        .with_sample_sizes(vec![60, 90]);
    cfg.starts = 1;
    cfg.test.as_mut().unwrap().draws = 1000;
    let report = experiments::run_estimation_study(&[cfg]).unwrap();
    let mut buf = Vec::new();
    experiments::write_table1(&report.estimation, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().starts_with("s0,60,1,"));
    assert!(text.lines().nth(2).unwrap().starts_with("s0,90,1,"));
}
