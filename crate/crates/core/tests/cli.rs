use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ntk_lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntk-lab"))
        .args(args)
        .env("NTK_LAB_OUT", out)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn cookbook(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "specs", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_prints_a_table_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = ntk_lab(&["verify"], dir.path());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    for group in ["net", "solver", "optim", "lab"] {
        assert!(text.lines().any(|l| l.starts_with("PASS") && l.contains(group)), "no {group} rows in\n{text}");
    }
}

#[test]
fn missing_spec_file_is_a_config_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = ntk_lab(&["sigma-sweep", "--spec", "missing.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.cfg"), "{}", stderr(&o));
}

#[test]
fn unknown_override_key_is_rejected_before_any_compute() {
    let dir = tempfile::tempdir().unwrap();
    let o = ntk_lab(&["mc-norm", "--set", "sweep.mc_sample=10"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sweep.mc_sample"), "{}", stderr(&o));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn spec_for_another_experiment_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = ntk_lab(&["mc-norm", "--spec", &cookbook("batch_sweep.toml")], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("experiment"), "{}", stderr(&o));
}

#[test]
fn batch_sweep_cookbook_writes_one_row_per_grid_point_and_repetition() {
    let dir = tempfile::tempdir().unwrap();
    let o = ntk_lab(&["batch-sweep", "--spec", &cookbook("batch_sweep.toml"), "--jobs", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("batch_sweep.csv")).unwrap();
    // 2 optimizers × 3 ratios × 2 shuffle settings × 2 repetitions
    assert_eq!(text.lines().count(), 1 + 24);
    assert!(text.starts_with("spec_hash,experiment,seed,sweep_key,sweep_value,optimizer,"));
    assert!(dir.path().join("batch_sweep.metrics.csv").exists());
}

#[test]
fn seed_override_changes_only_seed_derived_columns() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, name: &str| {
        let file = format!("output={name}");
        let o = ntk_lab(
            &["mc-norm", "--seed", seed, "--set", "sweep.mc_samples=200", "--set", "network.width=16", "--set", &file],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let mut r = csv::Reader::from_path(dir.path().join(name)).unwrap();
        let header = r.headers().unwrap().clone();
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        (header, rows)
    };
    let (ha, a) = run("1", "a.csv");
    let (hb, b) = run("2", "b.csv");
    assert_eq!(ha, hb);
    assert_eq!(a.len(), b.len());
    for (ra, rb) in a.iter().zip(&b) {
        for (i, col) in ha.iter().enumerate() {
            match col {
                "seed" => assert_ne!(&ra[i], &rb[i]),
                "wall_time_s" => {}
                _ => assert_eq!(&ra[i], &rb[i], "column {col}"),
            }
        }
    }
}

#[test]
fn output_lands_in_the_out_directory() {
    let dir = tempfile::tempdir().unwrap();
    let elsewhere = tempfile::tempdir().unwrap();
    let out = elsewhere.path().to_string_lossy().into_owned();
    let o = ntk_lab(
        &["underparam", "--spec", &cookbook("underparam_demo.toml"), "--out", &out, "--set", "repetitions=1"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(elsewhere.path().join("underparam_demo.csv").exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}
