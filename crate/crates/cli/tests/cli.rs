use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nsf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsf-thinpipe"))
        .args(args)
        .env_remove("NSF_THREADS")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const TINY_GRID: &str = "[grid]\nn1 = 4\nn2 = 4\nn3 = 16\n";

#[test]
fn sweep_verdict_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write(
        dir.path(),
        "flat.toml",
        &format!("[sweep]\nepsilons = [0.5, 0.25]\nt_final = 0.01\noutputs = 2\n[perturbation]\ndelta = 0.0\n{TINY_GRID}"),
    );
    let o = nsf(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        "1",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("verdict: PASS"));
    assert!(out.join("sweep.csv").exists() && out.join("metadata.json").exists());

    let single = write(
        dir.path(),
        "single.toml",
        &format!("[sweep]\nepsilons = [0.5]\nt_final = 0.01\noutputs = 1\nsnapshots = false\n{TINY_GRID}"),
    );
    let o = nsf(&["sweep", "--config", &single, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = nsf(&[
        "sweep",
        "--config",
        &single,
        "--out",
        out.to_str().unwrap(),
        "--allow-undetermined",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("sweep.csv.bak").exists());
}

#[test]
fn bad_config_is_an_error_with_a_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        "[sweep]\nt_final = 0.1\nepsilons = \"0.5,0.5\"\n",
    );
    let o = nsf(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn solve1d_writes_snapshots_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "[run]\nn = 32\nt_final = 0.05\noutputs = 2\n",
    );
    let out = dir.path().join("1d");
    let o = nsf(&["solve1d", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let snap = fs::read_to_string(out.join("snapshot_0002.csv")).unwrap();
    assert_eq!(snap.lines().next(), Some("y,rho,u,theta"));
    assert_eq!(snap.lines().count(), 33);
    let diag = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert_eq!(
        diag.lines().next(),
        Some("t,mass,energy,entropy_production_min")
    );
    assert_eq!(diag.lines().count(), 4);
}

#[test]
fn solve3d_csv_and_binary() {
    let dir = tempfile::tempdir().unwrap();
    for (format, ext) in [("csv", "csv"), ("binary", "nsf3")] {
        let cfg = write(
            dir.path(),
            "run.toml",
            &format!("[run]\nepsilon = 0.5\nt_final = 0.01\noutputs = 1\nformat = \"{format}\"\n{TINY_GRID}"),
        );
        let out = dir.path().join(format);
        let o = nsf(&["solve3d", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        let snap = out.join(format!("snapshot_0001.{ext}"));
        assert!(snap.exists());
        if ext == "csv" {
            let text = fs::read_to_string(snap).unwrap();
            assert_eq!(
                text.lines().next(),
                Some("i,j,k,x1,x2,y,rho,u1,u2,u3,theta")
            );
            assert_eq!(text.lines().count(), 1 + 4 * 4 * 16);
        } else {
            let bytes = fs::read(snap).unwrap();
            assert_eq!(&bytes[..4], b"NSF3");
            assert_eq!(bytes.len(), 4 + 4 + 24 + 16 + 5 * 8 * 4 * 4 * 16);
        }
    }
}

#[test]
fn check_subcommands() {
    let o = nsf(&["check-inequalities", "--n", "8", "--count", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("field_id,grad_sq,sym_sq,dev_sq,mixed,sym_pass,dev_pass,mixed_pass")
    );
    assert_eq!(lines.count(), 3);

    let o = nsf(&["check-thermo", "--samples", "500"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout)
        .trim_end()
        .ends_with("PASS"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.toml", "[thermo]\nkappa0 = -1.0\n");
    assert_eq!(
        nsf(&["check-thermo", "--config", &cfg]).status.code(),
        Some(2)
    );
}
