//! Command-line behaviour: exit codes, validation, output layout and
//! byte-identical reruns.

use std::path::{Path, PathBuf};
use std::process::Command;

use hyplab::cli::{emit, Experiment, ExperimentConfig, Outcome, Table};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hyplab"))
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn shipped_configs_validate() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let out = bin().arg("validate").arg(&path).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
        n += 1;
    }
    assert!(n >= 11);
}

#[test]
fn unknown_modulus_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "experiment = \"solve\"\n[problem]\nfamilies = [\"coeff:constant:c=1\"]\nmodulus = \"mu:nonsense\"\n",
    );
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("modulus"), "{err}");
    assert!(!dir.path().join("o").exists());
}

#[test]
fn unknown_key_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "experiment = \"solve\"\n[grids]\nxi_max = 3\n");
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("xi_max"));
}

#[test]
fn lipschitz_solve_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "experiment = \"solve\"\n[problem]\nfamilies = [\"coeff:sawtooth:mu=lipschitz,c=0.1,h=0.25\"]\n\
         [grids]\nxi_min_exp = 4\nxi_max_exp = 6\nt_points = 5\n",
    );
    let out_dir = dir.path().join("o");
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("xi,t,logE,steps"));
    assert_eq!(lines.count(), 3 * 5);
    assert!(out_dir.join("metadata.toml").exists());
    assert!(out_dir.join("summary.md").exists());
}

#[test]
fn empty_table_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_str("experiment = \"classify\"\n").unwrap();
    let outcome = Outcome {
        experiment: Experiment::Classify,
        pass: true,
        summary: String::new(),
        tables: vec![Table::new("empty.csv", &["id", "class", "valid"])],
        markdown: String::new(),
    };
    emit(&cfg, &outcome, dir.path()).unwrap();
    assert_eq!(std::fs::read_to_string(dir.path().join("empty.csv")).unwrap(), "id,class,valid\n");
}

#[test]
fn list_catalog_prints_every_section() {
    let out = bin().arg("list-catalog").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let s = String::from_utf8_lossy(&out.stdout);
    for head in ["moduli", "weight functions", "weight sequences", "coefficient families"] {
        assert!(s.contains(head), "{head}");
    }
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn golden_run_is_byte_identical() {
    let cfg = configs().join("c11_golden.toml");
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, threads) in [(&a, "1"), (&b, "0")] {
        let st = bin().env("HYPLAB_THREADS", threads).arg("run").arg(&cfg).arg("--out").arg(out).status().unwrap();
        assert_eq!(st.code(), Some(0));
    }
    assert_eq!(read_all(&a), read_all(&b));
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/c11_trace.csv");
    assert_eq!(std::fs::read(a.join("trace.csv")).unwrap(), std::fs::read(golden).unwrap());
}
