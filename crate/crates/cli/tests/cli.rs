use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn idpas(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idpas")).args(args).current_dir(dir).output().expect("binary runs")
}

const TINY: &str = r#"
u_p = 3
pool_restarts = 0
out_dir = "out"
[splits]
train = 2
validation = 2
test = 2
[budgets]
collect = 0.2
tune = 0.2
test = 0.2
reference = 0.4
"#;

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files.into_iter().map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())).collect()
}

#[test]
fn gen_twice_writes_identical_instances() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.toml"), TINY).unwrap();
    assert_eq!(idpas(&["gen", "--config", "run.toml"], tmp.path()).status.code(), Some(0));
    let first = snapshot(&tmp.path().join("out/instances/test"));
    assert_eq!(idpas(&["gen", "--config", "run.toml"], tmp.path()).status.code(), Some(0));
    assert_eq!(first, snapshot(&tmp.path().join("out/instances/test")));
    assert_eq!(first.len(), 3);
}

#[test]
fn seed_flag_changes_instances() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.toml"), TINY).unwrap();
    idpas(&["gen", "--config", "run.toml", "--out", "a"], tmp.path());
    idpas(&["gen", "--config", "run.toml", "--out", "b", "--seed", "5"], tmp.path());
    assert_ne!(snapshot(&tmp.path().join("a/instances/test")), snapshot(&tmp.path().join("b/instances/test")));
}

#[test]
fn eval_without_checkpoint_names_the_missing_path() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.toml"), TINY).unwrap();
    idpas(&["gen", "--config", "run.toml"], tmp.path());
    let out = idpas(&["eval", "--config", "run.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("pas.ckpt"), "{err}");
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(idpas(&["gen", "--bogus"], tmp.path()).status.code(), Some(2));
    assert_eq!(idpas(&["frobnicate"], tmp.path()).status.code(), Some(2));
    fs::write(tmp.path().join("bad.toml"), "u_p = 0\n").unwrap();
    assert_eq!(idpas(&["gen", "--config", "bad.toml"], tmp.path()).status.code(), Some(2));
    assert_eq!(idpas(&["gen", "--config", "nope.toml"], tmp.path()).status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = idpas(&["selftest"], tmp.path());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(0), "{err}");
    assert_eq!(err.matches("PASS").count(), 3, "{err}");
}

#[test]
fn pipeline_and_run_pas_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!("{TINY}[train]\nepochs = 2\n[grid]\ndeltas = [2]\nk0_fractions = [0.5]\n");
    fs::write(tmp.path().join("run.toml"), cfg).unwrap();
    for phase in ["gen", "collect", "train", "tune", "eval", "report"] {
        let out = idpas(&[phase, "--config", "run.toml", "--jobs", "1"], tmp.path());
        assert_eq!(out.status.code(), Some(0), "{phase}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["metrics.csv", "summary.csv", "summary.md", "curves.csv", "grid.csv", "COLUMNS.txt"] {
        assert!(tmp.path().join("out/report").join(f).exists(), "{f}");
    }
    let curves = fs::read_to_string(tmp.path().join("out/report/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 65);
    assert!(curves.starts_with("time,Plain,PaS,ID-PaS"));

    let index: Vec<String> = serde_json::from_str(&fs::read_to_string(tmp.path().join("out/instances/test/index.json")).unwrap()).unwrap();
    let inst = format!("out/instances/test/{}", index[0]);
    let out = idpas(
        &["run-pas", "--instance", &inst, "--checkpoint", "out/models/idpas.ckpt", "--k0", "50%", "--delta", "3", "--time-limit", "0.3", "--trace", "trace.csv"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(tmp.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("time,objective\n"));

    let out = idpas(
        &["run-pas", "--instance", &inst, "--checkpoint", "missing.ckpt", "--k0", "5", "--delta", "1", "--trace", "t.csv"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ckpt"));
}
