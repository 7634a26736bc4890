use std::path::Path;
use std::process::{Command, Output};

use qsieve::npiv::predict_q;
use qsieve::SieveFit;

fn qsieve(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsieve"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn missing_config_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = qsieve(&["rate-study", "--config", "missing.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.cfg"));
}

#[test]
fn unknown_flags_print_usage_and_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = qsieve(&["fit", "--no-such-flag"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = qsieve(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    for sub in ["simulate", "oracle", "fit", "diagnose", "rate-study", "value"] {
        assert!(stdout(&o).contains(sub), "{sub}");
    }
}

#[test]
fn point_mass_value_is_the_fitted_q_at_that_pair() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = qsieve(
        &["simulate", "--n", "20", "--t", "50", "--seed", "3", "--out", "d.csv"],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    let o = qsieve(
        &["fit", "--data", "d.csv", "--target-action", "0.4", "--out", "f.json"],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    let o = qsieve(
        &[
            "value",
            "--fit",
            "f.json",
            "--target-action",
            "0.4",
            "--initial-state",
            "0.7",
        ],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    let printed: f64 = stdout(&o).trim().parse().unwrap();
    let fit = SieveFit::load(&d.join("f.json")).unwrap();
    let direct = predict_q(&fit, &[vec![0.7, 0.4]]).unwrap()[0];
    assert!((printed - direct).abs() <= 1e-9, "{printed} vs {direct}");
}

#[test]
fn value_reports_a_bootstrap_error_with_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(qsieve(
        &["simulate", "--n", "30", "--t", "40", "--seed", "5", "--out", "d.bin"],
        d
    )
    .status
    .success());
    assert!(qsieve(&["fit", "--data", "d.bin", "--out", "f.json"], d)
        .status
        .success());
    let o = qsieve(&["value", "--fit", "f.json", "--data", "d.bin", "--bootstrap", "40"], d);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("bootstrap se"));
}

#[test]
fn rate_study_writes_identical_csv_twice() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("study.toml"),
        "recipe = \"benchmark\"\nladder = [[10, 20]]\nseed = 9\nreplications = 2\nburn_in = 10\n\
         eval_grid_per_dim = 11\noutput_csv = \"a.csv\"\noutput_json = \"a.json\"\n",
    )
    .unwrap();
    let o = qsieve(&["rate-study", "--config", "study.toml"], d);
    assert!(o.status.success(), "{o:?}");
    let o = qsieve(
        &[
            "rate-study",
            "--config",
            "study.toml",
            "--csv",
            "b.csv",
            "--threads",
            "2",
        ],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    let a = std::fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.csv")).unwrap());
    assert!(d.join("a.json").exists());
}

#[test]
fn oracle_and_diagnose_write_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = qsieve(&["oracle", "--per-dim", "21", "--out", "q.json"], d);
    assert!(o.status.success(), "{o:?}");
    let o = qsieve(
        &[
            "diagnose",
            "--psi-counts",
            "4,4",
            "--mc-points",
            "500",
            "--out",
            "r.json",
        ],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("tau_J"));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("r.json")).unwrap()).unwrap();
    assert!(r["tau_j"].as_f64().unwrap() >= 1.0 - 1e-6);
}

#[test]
fn out_of_range_gamma_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = qsieve(
        &[
            "simulate", "--gamma", "1.5", "--n", "2", "--t", "2", "--seed", "1", "--out", "x.csv",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}
