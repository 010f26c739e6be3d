use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
seed = 3
[data]
source_utts = 60
target_pool = 60
target_utts = 40
heldout_utts = 60
[corrupt]
p = 0.3
[model]
hidden = 16
unet_depth = 2
[train]
steps = 30
log_every = 10
[eval]
n_utts = 20
";

fn mhtts(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhtts"))
        .current_dir(dir)
        .env_remove("MHTTS_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn run_ok(dir: &Path, args: &[&str]) {
    let mut full = vec!["--config", "small.toml"];
    full.extend_from_slice(args);
    let o = mhtts(dir, &full);
    assert!(o.status.success(), "{args:?}: {}", stderr(&o));
}

#[test]
fn pipeline_writes_expected_layout() {
    let dir = setup();
    for c in ["gen-data", "corrupt", "train", "synth", "eval-cer", "probe", "report"] {
        run_ok(dir.path(), &[c]);
    }
    let cell = dir.path().join("runs/cells/multi-head_s60_t40_p0.30_seed3");
    for f in ["target.tsv", "checkpoint.bin", "metrics.tsv", "cer.json", "probe.json", "config.toml"] {
        assert!(cell.join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(cell.join("metrics.tsv")).unwrap();
    assert!(metrics.starts_with("step\tloss_s0\tloss_s1\tlr\n"));
    assert_eq!(metrics.lines().count(), 4);
    let report = std::fs::read_to_string(dir.path().join("runs/report.tsv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("#Source\t#Target\tP\tvariant\tCER"));
    assert!(lines.next().unwrap().starts_with("60\t40\t0.30\tmulti-head\t"));
}

#[test]
fn single_corpus_cell_trains_without_source() {
    let dir = setup();
    let v = "train.variant=single-corpus";
    run_ok(dir.path(), &["gen-data"]);
    std::fs::remove_file(dir.path().join("runs/data/source.tsv")).unwrap();
    run_ok(dir.path(), &["--set", v, "corrupt"]);
    run_ok(dir.path(), &["--set", v, "train"]);
    run_ok(dir.path(), &["--set", v, "eval-cer"]);
    let o = mhtts(dir.path(), &["--config", "small.toml", "--set", v, "--set", "synth.speaker=0", "synth"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error[unknown-speaker]:"), "{}", stderr(&o));
}

#[test]
fn unknown_key_suggests_nearest() {
    let dir = setup();
    let o = mhtts(dir.path(), &["--set", "trian.steps=5", "show-config"]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(e.starts_with("error[config]:") && e.contains("`train.steps`"), "{e}");
    assert_eq!(e.lines().count(), 1);
}

#[test]
fn type_mismatch_names_key() {
    let dir = setup();
    std::fs::write(dir.path().join("bad.toml"), "[model]\nhidden = \"wide\"\n").unwrap();
    let o = mhtts(dir.path(), &["--config", "bad.toml", "show-config"]);
    let e = stderr(&o);
    assert!(!o.status.success() && e.contains("model.hidden"), "{e}");
}

#[test]
fn missing_upstream_names_the_file() {
    let dir = setup();
    let o = mhtts(dir.path(), &["--config", "small.toml", "train"]);
    let e = stderr(&o);
    assert!(e.starts_with("error[dependency]:") && e.contains("target.tsv"), "{e}");
    let o = mhtts(dir.path(), &["--config", "small.toml", "report"]);
    assert!(stderr(&o).starts_with("error[dependency]:"));
}

#[test]
fn thread_request_is_refused() {
    let dir = setup();
    let o = Command::new(env!("CARGO_BIN_EXE_mhtts"))
        .current_dir(dir.path())
        .env("MHTTS_THREADS", "2")
        .arg("bench")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error[parallelism]:"), "{}", stderr(&o));
}

#[test]
fn seed_flag_overrides_file() {
    let dir = setup();
    let o = mhtts(dir.path(), &["--config", "small.toml", "--seed", "11", "show-config"]);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("seed = 11\n"));
}
