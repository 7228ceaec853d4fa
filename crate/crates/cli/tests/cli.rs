use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use connfp::fingerprint::Method;
use connfp_cli::commands::{AblationCsvRow, GridRow, IdentificationRow};
use connfp_cli::container::MatrixContainer;
use connfp_cli::output::{csv_bytes, read_csv, sha256_hex, Manifest};
use tempfile::TempDir;

const BASE: &str = r#"
seed = 11
n_perm = 50
k_atoms = 3
sparsity = 2

[cohort]
n_subjects = 5
p_rois = 8
n_timepoints = 50
sessions = ["rest", "motor", "wm"]

[ae.architecture]
conv = [{ out_channels = 2, kernel = 3, stride = 2 }]
latent = 4

[ae.training]
epochs = 5
batch_size = 4

[grid]
k_range = [2, 4]
l_range = [2, 3]

[ablation]
n_networks = 2
"#;

fn connfp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_connfp"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = connfp(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Writes a config whose output goes to `<tmp>/<name>` and returns both paths.
fn setup(tmp: &TempDir, name: &str, extra: &str) -> (PathBuf, PathBuf) {
    let out = tmp.path().join(name);
    let cfg = tmp.path().join(format!("{name}.toml"));
    std::fs::write(&cfg, format!("output_dir = {out:?}\n{extra}\n{BASE}")).unwrap();
    (cfg, out)
}

fn edit(cfg: &Path, from: &str, to: &str) {
    let text = std::fs::read_to_string(cfg).unwrap();
    assert!(text.contains(from), "{from}");
    std::fs::write(cfg, text.replace(from, to)).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_writes_one_container_per_scan_and_checksums_hold() {
    let tmp = TempDir::new().unwrap();
    let (cfg, out) = setup(&tmp, "synth", "");
    ok(&["synth", s(&cfg)]);
    let manifest = Manifest::read(&out).unwrap();
    assert_eq!(manifest.command, "synth");
    assert_eq!(manifest.files.len(), 5 * 3);
    for f in &manifest.files {
        let bytes = std::fs::read(out.join(&f.path)).unwrap();
        assert_eq!(sha256_hex(&bytes), f.sha256);
        assert_eq!(bytes.len() as u64, f.bytes);
        let c = MatrixContainer::read(&out.join(&f.path)).unwrap();
        assert_eq!(c.data.dim(), (8, 50));
    }

    ok(&["synth", s(&cfg)]);
    assert_eq!(Manifest::read(&out).unwrap(), manifest);
}

#[test]
fn run_reports_every_pair_and_method() {
    let tmp = TempDir::new().unwrap();
    let (cfg, out) = setup(&tmp, "run", "both_directions = true");
    ok(&["run", s(&cfg)]);

    let rows: Vec<IdentificationRow> = read_csv(&out.join("identification.csv")).unwrap();
    assert_eq!(rows.len(), 2 * Method::ALL.len());
    for r in &rows {
        assert_eq!(r.train_session, "rest");
        assert_eq!(r.n_subjects, 5);
        assert_eq!(r.accuracy, r.n_correct as f64 / 5.0);
        let p = r.p_value.unwrap();
        assert!(p > 0.0 && p <= 1.0);
        let mean = r.mean_accuracy.unwrap();
        assert_eq!(mean, 0.5 * (r.accuracy + r.reverse_accuracy.unwrap()));
        let sim = out.join(format!("similarity/{}_rest_{}.cfm", r.method, r.test_session));
        assert_eq!(MatrixContainer::read(&sim).unwrap().data.dim(), (5, 5));
        assert!(out.join(format!("permutation/{}_rest_{}.json", r.method, r.test_session)).exists());
    }

    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    let records = summary["records"].as_array().unwrap();
    assert_eq!(records.len(), 2);
    for rec in records {
        let acc = rec["accuracy"].as_object().unwrap();
        assert_eq!(acc.len(), 3);
        for m in Method::ALL {
            assert!(acc.contains_key(m.as_str()));
        }
    }
}

#[test]
fn run_reads_a_synthesized_cohort() {
    let tmp = TempDir::new().unwrap();
    let (synth_cfg, synth_out) = setup(&tmp, "synth", "");
    ok(&["synth", s(&synth_cfg)]);
    let (gen_cfg, gen_out) = setup(&tmp, "generated", "methods = [\"finn_raw\"]");
    let (disk_cfg, disk_out) =
        setup(&tmp, "disk", &format!("methods = [\"finn_raw\"]\ncohort_dir = {synth_out:?}"));
    ok(&["run", s(&gen_cfg)]);
    ok(&["run", s(&disk_cfg)]);
    // Same seed and cohort settings, so reading back the containers must
    // reproduce the in-memory result.
    let a = std::fs::read(gen_out.join("identification.csv")).unwrap();
    let b = std::fs::read(disk_out.join("identification.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn grid_rows_are_the_feasible_cells() {
    let tmp = TempDir::new().unwrap();
    let (cfg, out) = setup(&tmp, "grid", "test_sessions = [\"motor\"]");
    ok(&["grid", s(&cfg)]);
    let rows: Vec<GridRow> = read_csv(&out.join("grid/convae_sdl_rest_motor.csv")).unwrap();
    // K in 2..=4, L in 2..=3, L <= K.
    let expected = [(2, 2), (3, 2), (3, 3), (4, 2), (4, 3)];
    assert_eq!(rows.iter().map(|r| (r.k, r.l)).collect::<Vec<_>>(), expected);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
}

#[test]
fn ablation_has_a_baseline_row_and_one_per_network() {
    let tmp = TempDir::new().unwrap();
    let (cfg, out) = setup(&tmp, "ablate", "test_sessions = [\"wm\"]");
    edit(&cfg, "n_networks = 2", "n_networks = 2\nmethod = \"finn_raw\"");
    ok(&["ablate", s(&cfg)]);
    let rows: Vec<AblationCsvRow> = read_csv(&out.join("ablation/finn_raw_rest_wm.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].network, None);
    assert_eq!(rows[1].network, Some(0));
    assert_eq!(rows[2].network, Some(1));
    assert_eq!(rows[1].excluded_rois + rows[2].excluded_rois, 8);
    for r in &rows[1..] {
        let delta = r.delta.unwrap();
        assert!((delta - (r.accuracy.unwrap() - rows[0].accuracy.unwrap())).abs() < 1e-12);
    }
}

#[test]
fn invalid_field_exits_with_config_error_naming_it() {
    let tmp = TempDir::new().unwrap();
    let (cfg, _) = setup(&tmp, "bad", "");
    edit(&cfg, "n_timepoints = 50", "n_timepoints = 1");
    let out = connfp(&["run", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_timepoints"));

    let (cfg, _) = setup(&tmp, "bad_kl", "");
    edit(&cfg, "sparsity = 2", "sparsity = 9");
    let out = connfp(&["run", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sparsity"));

    let out = connfp(&["run", s(&tmp.path().join("missing.toml"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = connfp(&["inspect", s(&tmp.path().join("missing.cfm"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn command_line_overrides_reach_the_manifest() {
    let tmp = TempDir::new().unwrap();
    let (cfg, out) = setup(&tmp, "ovr", "methods = [\"baseline_groupavg\"]");
    edit(&cfg, "n_perm = 50", "n_perm = 0");
    let alt = tmp.path().join("alt");
    ok(&["run", s(&cfg), "--seed", "99", "--out", s(&alt), "--refine-target", "original", "--fisher-z"]);
    assert!(!out.exists());
    let m = Manifest::read(&alt).unwrap();
    assert_eq!(m.seed, 99);
    assert_eq!(m.config["refine_target"], "original");
    assert_eq!(m.config["fisher_z"], true);
    assert_eq!(m.config["cohort"]["seed"], 99);
}

#[test]
fn inspect_prints_the_header() {
    let tmp = TempDir::new().unwrap();
    let (cfg, out) = setup(&tmp, "synth", "");
    ok(&["synth", s(&cfg)]);
    let first = &Manifest::read(&out).unwrap().files[0].path;
    let text = String::from_utf8(ok(&["inspect", s(&out.join(first))]).stdout).unwrap();
    let header: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(header["shape"], serde_json::json!([8, 50]));
    assert_eq!(header["dtype"], "f64");
}

#[test]
fn csv_round_trip_matches_rows() {
    let rows = vec![
        IdentificationRow {
            train_session: "rest".into(),
            test_session: "motor".into(),
            method: Method::ConvaeSdl,
            n_subjects: 3,
            n_correct: 2,
            accuracy: 2.0 / 3.0,
            p_value: Some(0.001),
            reverse_accuracy: None,
            mean_accuracy: None,
        },
        IdentificationRow {
            train_session: "rest".into(),
            test_session: "wm".into(),
            method: Method::FinnRaw,
            n_subjects: 3,
            n_correct: 0,
            accuracy: 0.0,
            p_value: None,
            reverse_accuracy: Some(1.0 / 3.0),
            mean_accuracy: Some(1.0 / 6.0),
        },
    ];
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("rows.csv");
    std::fs::write(&path, csv_bytes(&rows).unwrap()).unwrap();
    let back: Vec<IdentificationRow> = read_csv(&path).unwrap();
    assert_eq!(back, rows);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(connfp(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(connfp(&["--help"]).status.code(), Some(0));
}
