//! End-to-end behavior of the `crowd-nas` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "data.num_train=16",
    "data.num_test=4",
    "search.epochs=2",
    "search.warmup_epochs=1",
    "retrain.m=2",
    "retrain.c=16",
    "retrain.iterations=10",
];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_crowd-nas"));
    c.env_remove("CROWD_NAS_OUT");
    c
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().expect("spawn crowd-nas")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "command failed: {}", stderr(o));
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

/// Relative path -> file bytes for every file under `dir`.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, acc);
            } else {
                acc.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(dir, dir, &mut acc);
    acc
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        assert_ok(&run(&["gen-data", "--seed", "7", "data.num_train=12", "data.num_test=3"], out));
    }
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa.len(), 1 + 3 * 15);
    assert!(sa == sb, "datasets differ");
    let c = tmp.path().join("c");
    assert_ok(&run(&["gen-data", "--seed", "8", "data.num_train=12", "data.num_test=3"], &c));
    assert!(snapshot(&c) != sa, "different seeds gave identical datasets");
}

#[test]
fn derive_reproduces_the_reference_genotype() {
    let tmp = tempfile::tempdir().unwrap();
    let arch = fixture("reference_arch_params.json");
    let o = run(&["derive", "--arch", arch.to_str().unwrap()], tmp.path());
    assert_ok(&o);
    let got = std::fs::read(tmp.path().join("genotype.json")).unwrap();
    let want = std::fs::read(fixture("reference_genotype.json")).unwrap();
    assert!(got == want, "derived genotype differs from the reference fixture");
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run(&["gen-data", "--dry-run", "search.epochs=13"], &out);
    assert_ok(&o);
    let plan: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(plan["command"], "gen-data");
    assert_eq!(plan["config"]["search"]["epochs"], 13);
    assert!(!out.exists());
}

#[test]
fn failures_map_to_documented_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: &[(&[&str], i32, &str)] = &[
        (&["frobnicate"], 2, "E_USAGE"),
        (&["gen-data", "search.epochz=1"], 3, "E_CONFIG"),
        (&["gen-data", "search.c=12"], 3, "E_CONFIG"),
        (&["search"], 4, "E_INPUT"),
        (&["derive", "--arch", "/nonexistent/arch.json"], 4, "E_INPUT"),
    ];
    for (args, code, tag) in cases {
        let o = run(args, tmp.path());
        assert_eq!(o.status.code(), Some(*code), "{args:?}: {}", stderr(&o));
        let err = stderr(&o);
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with(&format!("error[{tag}]: ")), "{args:?}: {err}");
    }
}

#[test]
fn malformed_genotype_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_ok(&run(&["gen-data", "data.num_train=2", "data.num_test=1"], tmp.path()));
    std::fs::write(tmp.path().join("genotype.json"), "{\"version\": 1}").unwrap();
    let o = run(&["retrain"], tmp.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let o = run(&["gen-data", "--dataset", blocker.join("ds").to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(6), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[E_IO]: "));
}

#[test]
fn divergence_aborts_with_its_own_code() {
    let tmp = tempfile::tempdir().unwrap();
    assert_ok(&run(&["gen-data", "data.num_train=8", "data.num_test=1"], tmp.path()));
    let o = run(
        &["search", "search.epochs=1", "search.warmup_epochs=0", "search.density_scale=1e9"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[E_DIVERGED]: "));
}

#[test]
fn help_documents_exit_codes() {
    let o = bin().arg("--help").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for tag in ["E_USAGE", "E_CONFIG", "E_INPUT", "E_DIVERGED", "E_IO", "E_INTERNAL"] {
        assert!(text.contains(tag), "help lacks {tag}");
    }
}

#[test]
fn config_file_and_env_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "seed = 5\n[data]\nnum_train = 30\n").unwrap();
    let out = tmp.path().join("from-env");
    let o = bin()
        .args(["gen-data", "--dry-run", "--config", cfg.to_str().unwrap(), "data.num_train=4"])
        .env("CROWD_NAS_OUT", &out)
        .output()
        .unwrap();
    assert_ok(&o);
    let plan: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(plan["config"]["seed"], 5);
    assert_eq!(plan["config"]["data"]["num_train"], 4);
    assert!(plan["outputs"][0].as_str().unwrap().starts_with(out.to_str().unwrap()));
}

#[test]
fn full_pipeline_populates_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in ["gen-data", "search", "derive", "retrain", "eval", "report"] {
        let mut args = vec![cmd];
        args.extend_from_slice(SMALL);
        assert_ok(&run(&args, tmp.path()));
    }
    let metrics = std::fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("mae,mse,psnr,ssim,params"));
    let values: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(values.len(), 5);
    assert!(values.iter().all(|v| v.is_finite()));
    for log in ["search_log.csv", "retrain_log.csv", "eval_log.csv"] {
        let text = std::fs::read_to_string(tmp.path().join(log)).unwrap();
        assert!(text.lines().next().unwrap().ends_with(",wall_clock_s"), "{log}");
    }
    let report = tmp.path().join("report");
    let summary = std::fs::read_to_string(report.join("summary.md")).unwrap();
    assert!(summary.contains("## Test metrics"));
    assert!(report.join("genotype.dot").exists());
    assert!(report.join("scene_0000_pred.png").exists());
}
