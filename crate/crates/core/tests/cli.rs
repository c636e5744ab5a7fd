use std::path::Path;
use std::process::{Command, Output};

fn mote(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mote")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn successful_run_exits_zero_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write(
        dir.path(),
        "run.cfg",
        "experiment.kind=temporal-effect\nexperiment.metrics=f1_macro\ndrift.docs_per_domain=150\n",
    );
    let o = mote(&["run", &cfg, "--out", out.to_str().unwrap(), "--seed-override", "7", "--threads", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("metrics.csv").exists());
    assert!(out.join("temporal_matrix.csv").exists());
    let echo = std::fs::read_to_string(out.join("config_echo")).unwrap();
    assert!(echo.contains("experiment.seeds=7"), "{echo}");
}

#[test]
fn unknown_key_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "experiment.kind=adapt-compare\nbogus.key=3\n");
    let o = mote(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus.key"));
}

#[test]
fn missing_config_and_bad_usage_exit_one() {
    assert_eq!(mote(&["run", "/nonexistent/mote.cfg"]).status.code(), Some(1));
    assert_eq!(mote(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mote(&[]).status.code(), Some(1));
    assert_eq!(mote(&["--help"]).status.code(), Some(0));
}

#[test]
fn zero_threads_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.cfg", "experiment.kind=temporal-effect\n");
    assert_eq!(mote(&["run", &cfg, "--threads", "0"]).status.code(), Some(1));
}

#[test]
fn runtime_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "corpus.tsv", "# id\ttimestamp\tlabel\tgroup\tlanguage\ttokens\nd1\t5\t0\ta\ten\tx y\nbroken line\n");
    let cfg = write(
        dir.path(),
        "run.cfg",
        &format!("experiment.kind=adapt-compare\ncorpus.source=load\ncorpus.path={corpus}\ncorpus.boundaries=0,10,20\n"),
    );
    let o = mote(&["run", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
