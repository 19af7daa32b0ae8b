use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use mei_cli::config::ExperimentConfig;
use mei_cli::runner::{reproduce_paper, run_experiment};
use mei_cli::{ingest_csv, write_csv};
use mei_core::{simulate_m4, M4Spec, Seed};

const BIN: &str = env!("CARGO_BIN_EXE_mei");

fn mei(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("MEI_SEED").output().expect("spawn mei")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn schema() -> jsonschema::Validator {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/report.schema.json");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(root).unwrap()).unwrap();
    jsonschema::validator_for(&schema).expect("schema compiles")
}

fn assert_valid(report: &Value) {
    let v = schema();
    let errors: Vec<String> = v.iter_errors(report).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "schema violations: {errors:#?}");
}

const EX2_SMALL: &str = "seed = 3\n[model]\nkind = \"m4\"\npreset = \"example2\"\n[sample]\nn = 20000\nreplicates = 2\n\
[estimation]\nk_n = 200\ntau_grid = [[1, 1], [2, 1]]\nbootstrap = 50\n[tail]\nblock_size = 20\nmin_joint = 10\n";

#[test]
fn csv_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let series = simulate_m4(&M4Spec::example3(), 2000, Seed::new(11)).unwrap();
    let path = dir.path().join("s.csv");
    write_csv(&series, std::fs::File::create(&path).unwrap()).unwrap();
    let back = ingest_csv(&path).unwrap();
    assert_eq!((back.n(), back.d()), (series.n(), series.d()));
    for (a, b) in series.data().iter().zip(back.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn simulate_then_ingest_through_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\nkind = \"gauss_frechet\"\nrho = 0.5\n[sample]\nn = 500\n");
    let out = dir.path().join("out");
    let o = mei(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let series = ingest_csv(&out.join("series.csv")).unwrap();
    assert_eq!((series.n(), series.d()), (500, 2));

    let csv_cfg = format!(
        "[model]\nkind = \"csv\"\npath = {:?}\n[estimation]\nk_n = 20\nbootstrap = 20\n[tail]\nmin_joint = 5\n",
        out.join("series.csv")
    );
    let cfg2 = dir.path().join("csv.toml");
    std::fs::write(&cfg2, csv_cfg).unwrap();
    let o = mei(&["run", "--config", cfg2.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["model"]["kind"], "csv");
    assert_eq!(report["model"]["n"], 500);
    assert_valid(&report);
}

#[test]
fn identical_output_for_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), EX2_SMALL);
    let mut runs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("out{threads}"));
        let o = mei(&["run", "--config", cfg.to_str().unwrap(), "--threads", threads, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let files: Vec<Vec<u8>> = ["report.json", "theta_surface.csv", "tail_curves.csv"]
            .iter()
            .map(|f| std::fs::read(out.join(f)).unwrap())
            .collect();
        runs.push(files);
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn seed_flag_overrides_environment_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 5\n[model]\nkind = \"iid\"\n[sample]\nn = 1000\n");
    let c = cfg.to_str().unwrap();
    let seed_of = |o: Output| -> u64 {
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        serde_json::from_slice::<Value>(&o.stdout).unwrap()["seed"].as_u64().unwrap()
    };
    assert_eq!(seed_of(mei(&["decomp", "--config", c])), 5);
    let env = Command::new(BIN).args(["decomp", "--config", c]).env("MEI_SEED", "6").output().unwrap();
    assert_eq!(seed_of(env), 6);
    let flag = Command::new(BIN).args(["decomp", "--config", c, "--seed", "7"]).env("MEI_SEED", "6").output().unwrap();
    assert_eq!(seed_of(flag), 7);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\nkind = \"m4\"\n");
    let o = mei(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exactly one"));
    assert_eq!(mei(&["run"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_leave_no_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\nkind = \"iid\"\n[sample]\nn = 100\n[tail]\nblock_size = 1000\n");
    let out = dir.path().join("out");
    let o = mei(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    assert!(!out.join("report.json").exists());
    assert!(!out.join("theta_surface.csv").exists());

    let missing = write_config(dir.path(), "[model]\nkind = \"csv\"\npath = \"nope.csv\"\n");
    let o = mei(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.csv"));
}

#[test]
fn iid_report_has_unit_theta() {
    let cfg = ExperimentConfig::from_toml(
        "[model]\nkind = \"iid\"\n[sample]\nn = 200000\n[estimation]\nk_n = 4000\nbootstrap = 50\n",
    )
    .unwrap();
    let a = run_experiment(&cfg, 1).unwrap();
    let theta = a.report["sections"]["mei"][0]["theta_hat"]["value"].as_f64().unwrap();
    assert!((theta - 1.0).abs() < 0.05, "theta = {theta}");
    assert_valid(&a.report);
}

#[test]
fn example2_bounds_table_holds_printed_values() {
    let cfg = ExperimentConfig::from_toml(EX2_SMALL).unwrap();
    let a = run_experiment(&cfg, 3).unwrap();
    let p = &a.report["sections"]["bounds"]["printed_example2"];
    assert!((p["new_upper_theta_gamma"].as_f64().unwrap() - 1.1).abs() < 1e-12);
    assert!((p["es_upper_theta_gamma"].as_f64().unwrap() - 1.2).abs() < 1e-12);
    assert_eq!(p["inputs_discrepant"], true);
    assert_valid(&a.report);
}

#[test]
fn reports_match_schema() {
    let small = ExperimentConfig::from_toml(
        "[model]\nkind = \"m4\"\npreset = \"example3\"\n[sample]\nn = 20000\n[estimation]\nk_n = 200\nbootstrap = 20\n[tail]\nblock_size = 50\nmin_joint = 5\n",
    )
    .unwrap();
    let r = reproduce_paper(Some(&small), 0).unwrap();
    assert_valid(&r.report);
    assert_eq!(r.tables.len(), 6);

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), EX2_SMALL);
    for cmd in ["estimate", "bounds", "decomp", "tail"] {
        let o = mei(&[cmd, "--config", cfg.to_str().unwrap()]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let report: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(report["command"], cmd);
        assert_valid(&report);
    }
}

#[test]
fn schema_rejects_malformed_reports() {
    let cfg = ExperimentConfig::from_toml(EX2_SMALL).unwrap();
    let good = run_experiment(&cfg, 3).unwrap().report;
    let v = schema();
    assert!(v.is_valid(&good));
    let mut missing = good.clone();
    missing.as_object_mut().unwrap().remove("sections");
    assert!(!v.is_valid(&missing));
    let mut wrong = good.clone();
    wrong["sections"]["mei"][0]["theta_hat"]["value"] = Value::String("0.5".into());
    assert!(!v.is_valid(&wrong));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.model().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 4);
}
