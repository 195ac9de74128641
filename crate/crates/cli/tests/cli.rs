use std::path::PathBuf;
use std::process::Command;

use blockspin_cli::config::ExperimentConfig;
use blockspin_cli::{emit_report, parse_config, run_experiment, CliError, TaskVerdict};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("blockspin-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

const MINIMAL: &str = r#"{
  "lattice": {"base": 3, "dim": 1, "n0": 0, "n1": 1},
  "site": {"kind": "finite_spin", "values": [-1, 1]},
  "action": {"kind": "face_coupling", "weight": {"kind": "ising", "coupling": 0.5}},
  "block_spin": "decimation",
  "estimator": {"kind": "exact"},
  "seed": 3,
  "tasks": [{"task": "rp-check"}]
}"#;

#[test]
fn minimal_rp_check_is_psd() {
    let cfg = parse_config(MINIMAL).unwrap();
    let report = run_experiment(&cfg, false).unwrap();
    assert_eq!(report.tasks.len(), 1);
    assert_eq!(report.tasks[0].verdict, TaskVerdict::Pass);
    assert!(report.all_passed);
}

#[test]
fn empty_task_list_gives_valid_report() {
    let cfg = parse_config(&MINIMAL.replace(r#"[{"task": "rp-check"}]"#, "[]")).unwrap();
    let report = run_experiment(&cfg, false).unwrap();
    assert!(report.tasks.is_empty() && report.all_passed);
    let back: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(back["tasks"], serde_json::json!([]));
}

#[test]
fn schema_errors_name_the_field() {
    let bad = MINIMAL.replace(r#""coupling": 0.5"#, r#""coupling": 0.5, "beta": 1"#);
    match parse_config(&bad) {
        Err(CliError::Schema { path, message }) => {
            assert!(path.starts_with("action"), "{path}");
            assert!(message.contains("beta"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    let no_seed = MINIMAL.replace(r#""seed": 3,"#, "");
    assert!(matches!(parse_config(&no_seed), Err(CliError::Schema { .. })));
}

#[test]
fn renorm_check_with_affine_profile_certifies() {
    let text = r#"{
      "lattice": {"base": 3, "dim": 1, "n0": 0, "n1": 1},
      "site": {"kind": "unit_interval", "order": 8},
      "action": {"kind": "exp_coupling", "profile": {"kind": "affine", "offset": 1, "slope": 1}},
      "block_spin": "decimation",
      "k_range": {"max_fine": 3, "max_volume": 0},
      "estimator": {"kind": "exact"},
      "seed": 0,
      "tasks": [{"task": "renorm-check"}]
    }"#;
    let report = run_experiment(&parse_config(text).unwrap(), false).unwrap();
    let r = &report.tasks[0].result;
    assert_eq!(r["verdict"], "certified");
    for key in ["i", "s", "r"] {
        assert!(r["isr"][key].as_f64().unwrap() > 0.0);
    }
    let norm = r["seminorm"]["value"].as_f64().unwrap();
    assert!(norm >= 1.0 && norm <= r["bound"].as_f64().unwrap());
}

#[test]
fn unsupported_task_reports_task_context() {
    let cfg = parse_config(&MINIMAL.replace("rp-check", "duality-check")).unwrap();
    let err = run_experiment(&cfg, false).unwrap_err();
    assert!(matches!(err, CliError::Task { index: 0, task: "duality-check", .. }), "{err}");
}

#[test]
fn reports_are_byte_identical_and_csv_round_trips() {
    let cfg = ExperimentConfig::template();
    let (a, b) = (scratch("a"), scratch("b"));
    let ra = run_experiment(&cfg, false).unwrap();
    let rb = run_experiment(&cfg, true).unwrap();
    let fa = emit_report(&ra, &a, &cfg.output.formats).unwrap();
    let fb = emit_report(&rb, &b, &cfg.output.formats).unwrap();
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
    let csv = std::fs::read_to_string(a.join("rgflow.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k0,k1,observable_id,value,stderr"));
    let tower = ra.tasks.iter().find(|t| t.task == "rgflow").unwrap();
    let values: Vec<f64> = tower.result["tower"].as_array().unwrap().iter().map(|r| r["value"].as_f64().unwrap()).collect();
    for (line, v) in lines.zip(&values) {
        let field: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(field.to_bits(), v.to_bits());
    }
    let _ = std::fs::remove_dir_all(&a);
    let _ = std::fs::remove_dir_all(&b);
}

#[test]
fn binary_exit_codes() {
    let dir = scratch("bin");
    std::fs::create_dir_all(&dir).unwrap();
    let bin = env!("CARGO_BIN_EXE_blockspin");
    let run = |cfg: &str| {
        let path = dir.join("config.json");
        std::fs::write(&path, cfg).unwrap();
        Command::new(bin).arg("run").arg(&path).arg("--out").arg(dir.join("out")).status().unwrap().code()
    };
    assert_eq!(run(MINIMAL), Some(0));
    let indefinite = MINIMAL.replace(
        r#"{"kind": "ising", "coupling": 0.5}"#,
        r#"{"kind": "table", "table": [[1, 2], [2, 1]]}"#,
    );
    assert_eq!(run(&indefinite), Some(2));
    assert_eq!(run("{}"), Some(1));
    let _ = std::fs::remove_dir_all(&dir);
}
