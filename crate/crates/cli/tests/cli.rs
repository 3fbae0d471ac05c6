//! End-to-end runs of the `cycledm` binary on a tiny synthetic config.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cycledm_cli::pipeline::LOCK_FILE;

const TINY: &[&str] = &[
    "data.resolution=8",
    "data.per_class=4",
    "ddpm.steps=30",
    "conversion.steps=6",
    "conversion.t_star=10",
    "eval.extractor_steps=40",
];

fn cycledm(out: &Path, extra: &[&str], args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cycledm"));
    cmd.args(args).arg("--set").arg(format!("output_dir={}", out.display()));
    for s in TINY.iter().chain(extra) {
        cmd.arg("--set").arg(s);
    }
    cmd.env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn pngs(dir: &Path) -> Vec<PathBuf> {
    let mut v = Vec::new();
    for class in std::fs::read_dir(dir).unwrap() {
        let class = class.unwrap().path();
        if class.is_dir() {
            for f in std::fs::read_dir(&class).unwrap() {
                v.push(f.unwrap().path().strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    v.sort();
    v
}

/// synth-data, train-ddpm and train-converter on the tiny config.
fn trained(root: &Path) -> (PathBuf, PathBuf) {
    ok(&cycledm(root, &[], &["synth-data"]));
    let ddpm = PathBuf::from(ok(&cycledm(root, &[], &["train-ddpm"])).trim());
    let d = ddpm.to_str().unwrap();
    let pair = PathBuf::from(ok(&cycledm(root, &[], &["train-converter", "--ddpm", d])).trim());
    (ddpm, pair)
}

#[test]
fn validation_errors_exit_two_and_name_every_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = cycledm(dir.path(), &["schedule.beta_end=1.5", "eval.k=0"], &["train-ddpm"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("schedule.beta_end") && e.contains("eval.k"), "{e}");

    let o = cycledm(dir.path(), &["ddpm.colour=red"], &["train-ddpm"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ddpm.colour"));
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = cycledm(dir.path(), &[], &["train-converter", "--ddpm", "/nonexistent/ddpm.ckpt"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn schema_lists_every_key_with_a_default() {
    let o = Command::new(env!("CARGO_BIN_EXE_cycledm")).arg("schema").output().unwrap();
    let text = ok(&o);
    for key in ["seed =", "schedule.steps = 100", "conversion.t_star = 60", "eval.t_stars = 40,50,60"] {
        assert!(text.contains(key), "missing {key}");
    }
    assert!(text.lines().filter(|l| l.starts_with('#')).count() >= 40);
}

#[test]
fn pipeline_chain_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("run");
    let (ddpm, pair) = trained(&root);
    assert!(ddpm.exists() && pair.exists());
    let (d, p) = (ddpm.to_str().unwrap(), pair.to_str().unwrap());

    // The DDPM manifest carries config hash, seed and code version.
    let m = manifest(&root.join("train-ddpm.manifest.json"));
    assert_eq!(m["seed"], 0);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert!(m["code_version"].is_string());
    assert!(m["outputs"]["ddpm.ckpt"].is_string());

    // The converter manifest records both checkpoint hashes.
    let m = manifest(&root.join("train-converter-t10.manifest.json"));
    let sha = |p: &Path| cycledm_cli::pipeline::file_sha256(p).unwrap();
    assert_eq!(m["inputs"]["ddpm"], sha(&ddpm));
    assert_eq!(m["outputs"]["pair_t10.ckpt"], sha(&pair));

    // t_star beyond T is rejected before any work.
    let o = cycledm(&root, &[], &["train-converter", "--ddpm", d, "--t", "150"]);
    assert_eq!(o.status.code(), Some(2));

    // N inputs give N outputs with the same names, for both methods.
    let input = root.join("data/hw/test");
    let i = input.to_str().unwrap();
    let conv = dir.path().join("conv");
    ok(&cycledm(&root, &[], &["convert", "--ddpm", d, "--pair", p, "--input", i, "--out", conv.to_str().unwrap(), "--direction", "hw2mp"]));
    assert_eq!(pngs(&conv), pngs(&input));
    assert!(conv.join("grid.png").exists());
    let sd = dir.path().join("sdedit");
    let sd_s = sd.to_str().unwrap();
    ok(&cycledm(&root, &[], &["convert", "--ddpm", d, "--input", i, "--out", sd_s, "--direction", "hw2mp", "--method", "sdedit"]));
    assert_eq!(pngs(&sd), pngs(&input));
    assert!(manifest(&sd.join("convert.manifest.json"))["inputs"].get("pair").is_none());

    // Same seed, same bytes.
    let again = dir.path().join("conv2");
    ok(&cycledm(&root, &[], &["convert", "--ddpm", d, "--pair", p, "--input", i, "--out", again.to_str().unwrap(), "--direction", "hw2mp"]));
    assert_eq!(
        manifest(&conv.join("convert.manifest.json"))["outputs"],
        manifest(&again.join("convert.manifest.json"))["outputs"]
    );

    // A pair trained for one step refuses another.
    let o = cycledm(&root, &[], &["convert", "--ddpm", d, "--pair", p, "--input", i, "--out", sd_s, "--direction", "hw2mp", "--t", "20"]);
    assert_eq!(o.status.code(), Some(2));

    // A DDPM from another schedule is refused.
    let o = cycledm(&root, &["schedule.steps=50", "eval.t_stars=10"], &["train-converter", "--ddpm", d, "--t", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schedule"));

    // Evaluation prints the table with the metric columns in order.
    let table = ok(&cycledm(
        &root,
        &[],
        &["evaluate", "--generated", conv.to_str().unwrap(), "--direction", "hw2mp", "--out", dir.path().join("eval").to_str().unwrap()],
    ));
    let header = table.lines().next().unwrap();
    let at = |c: &str| header.find(c).unwrap_or_else(|| panic!("{c} missing from {header}"));
    assert!(at("Accuracy") < at("Precision") && at("Precision") < at("Recall") && at("Recall") < at("FID"));
}

#[test]
fn reference_split_scored_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("run");
    let extra = ["data.resolution=16", "data.per_class=6"];
    ok(&cycledm(&root, &extra, &["synth-data"]));
    let reference = root.join("data/mp/test");
    let eval = dir.path().join("eval");
    ok(&cycledm(
        &root,
        &extra,
        &["evaluate", "--generated", reference.to_str().unwrap(), "--direction", "hw2mp", "--out", eval.to_str().unwrap()],
    ));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    let r = &r[0];
    assert!(r["fid"].as_f64().unwrap().abs() < 1e-4, "{r}");
    assert_eq!(r["precision"].as_f64(), Some(1.0));
    assert_eq!(r["recall"].as_f64(), Some(1.0));
    assert_eq!(r["accuracy"].as_f64(), Some(1.0));
}

#[test]
fn evaluate_without_extractor_and_no_train_fails() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("run");
    ok(&cycledm(&root, &[], &["synth-data"]));
    let g = root.join("data/mp/test");
    let o = cycledm(
        &root,
        &[],
        &["evaluate", "--no-train", "--generated", g.to_str().unwrap(), "--direction", "hw2mp", "--out", dir.path().join("e").to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--no-train"));
}

#[test]
fn locked_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(LOCK_FILE), b"").unwrap();
    let o = cycledm(dir.path(), &[], &["synth-data"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("in use"));
    std::fs::remove_file(dir.path().join(LOCK_FILE)).unwrap();
    ok(&cycledm(dir.path(), &[], &["synth-data"]));
    assert!(!dir.path().join(LOCK_FILE).exists());
}

#[test]
fn replay_reproduces_training_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("run");
    ok(&cycledm(&root, &[], &["synth-data"]));
    ok(&cycledm(&root, &[], &["train-ddpm"]));
    let m = root.join("train-ddpm.manifest.json");
    let out = dir.path().join("replay");
    let o = Command::new(env!("CARGO_BIN_EXE_cycledm"))
        .args(["replay", "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    let replayed = PathBuf::from(ok(&o).trim());
    assert_eq!(manifest(&m)["outputs"], manifest(&replayed)["outputs"]);
}
