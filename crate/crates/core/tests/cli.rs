use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn dskg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dskg")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn hash_of(o: &Output) -> String {
    let s = stdout(o);
    let first = s.lines().next().unwrap();
    first
        .split_whitespace()
        .find_map(|w| w.strip_prefix("config_hash="))
        .unwrap()
        .to_string()
}

// (comment, header, rows)
fn read_csv(path: &Path) -> (String, String, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let comment = lines.next().unwrap().to_string();
    let header = lines.next().unwrap().to_string();
    let rows = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    (comment, header, rows)
}

#[test]
fn kernel_eval_half_mass_prints_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("kernel_eval.json");
    let o = dskg(&[
        "kernel",
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    // E(r, 1; 0, 0; 1/2) = e^{1/2} / 2
    assert!(stdout(&o).contains("= 8.24360635350064"), "{}", stdout(&o));
    let (comment, header, rows) = read_csv(&dir.path().join("kernel.csv"));
    assert!(comment.starts_with(&format!("# config_hash={} run=kernel_eval tolerances=", hash_of(&o))));
    assert!(header.starts_with("r,t,t0,"));
    assert_eq!(rows.len(), 3);
}

#[test]
fn solve_linear_both_writes_small_discrepancy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("solve_linear.json");
    let o = dskg(&[
        "solve",
        "linear",
        "--method",
        "both",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, header, rows) = read_csv(&dir.path().join("discrepancy.csv"));
    assert_eq!(header, "t,rel_err");
    assert!(rows.iter().all(|r| r[1] <= 1e-3), "{rows:?}");
    for name in ["trajectory_transform.csv", "trajectory_direct.csv"] {
        let (comment, header, rows) = read_csv(&dir.path().join(name));
        assert!(comment.starts_with("# config_hash="));
        assert_eq!(header, "t,hs_norm,linf");
        assert_eq!(rows.len(), 9);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["run"], "solve_linear");
    assert_eq!(summary["checks"][0]["passed"], true);
}

#[test]
fn seeded_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"model": {"n": 3, "M": 0.8}, "grid": {"npts": 32}, "quad": {"nb": 24, "nr": 24, "ns": 24}, "run": "solve_linear",
            "solve": {"t_final": 2.0, "n_times": 5, "data": {"psi0": {"kind": "random", "amp": 1.0, "kmax": 6}}}}"#,
    );
    let run = |seed: &str, out: &str| {
        let out = dir.path().join(out);
        let o = dskg(&[
            "solve",
            "linear",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        (hash_of(&o), fs::read(out.join("trajectory_direct.csv")).unwrap())
    };
    let (h1, a) = run("5", "a");
    let (h2, b) = run("5", "b");
    let (h3, c) = run("6", "c");
    assert_eq!(h1, h2, "output directory must not enter the hash");
    assert_eq!(a, b);
    assert_ne!(h1, h3);
    assert_ne!(a, c);
}

#[test]
fn config_errors_exit_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let cases = [
        (
            r#"{"model": {"n": 3, "M": 0.5}, "run": "kernel_eval", "kernel": {"wich": "E"}}"#,
            "kernel.wich",
        ),
        (
            r#"{"model": {"n": 3, "m2": 2.0, "M": 0.3}, "run": "kernel_eval"}"#,
            "model.M",
        ),
        (
            r#"{"model": {"n": 3, "M": 0.5}, "run": "kernel_eval", "grid": {"npts": -4}}"#,
            "grid.npts",
        ),
        (r#"{"model": {"n": 3, "M": 0.5}, "run": "verify_decay"}"#, "run"),
        (r#"{"model": {"n": 3, "M": 0.5}, "run": "kernel_eval""#, "EOF"),
    ];
    for (text, needle) in cases {
        let cfg = write_config(dir.path(), text);
        let o = dskg(&["kernel", "eval", "--config", &cfg, "--out", out]);
        assert_eq!(o.status.code(), Some(2), "{text}: {}", stderr(&o));
        assert!(stderr(&o).contains(needle), "{text}: {}", stderr(&o));
    }
    let o = dskg(&["kernel", "eval", "--config", "/nonexistent/x.json"]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = configs().join("kernel_eval.json");
    let o = Command::new(env!("CARGO_BIN_EXE_dskg"))
        .args(["kernel", "eval", "--config", cfg.to_str().unwrap(), "--out", out])
        .env("DSKG_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("DSKG_THREADS"));
}

#[test]
fn non_convergence_exits_4_and_keeps_history() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"model": {"n": 3, "M": 0.25}, "grid": {"npts": 32}, "nonlinearity": {"kind": "cubic", "lambda": 1.0},
            "run": "solve_semilinear",
            "picard": {"eps": 10.0, "gamma": 1.0, "T": 6.0, "quad": {"nb": 32, "nr": 32, "ns": 32}, "n_time_samples": 48}}"#,
    );
    let out = dir.path().join("out");
    let o = dskg(&["solve", "semilinear", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let (_, header, rows) = read_csv(&out.join("picard.csv"));
    assert_eq!(header, "iteration,distance,ratio");
    assert!(!rows.is_empty());
}

#[test]
fn failed_check_exits_1() {
    // the default appendix run includes the slowly converging Re M < 1/2 limit
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("verify_appendix.json");
    let o = dskg(&[
        "verify",
        "appendix",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("FAIL")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("PASS")), "{text}");
    let (_, header, _) = read_csv(&dir.path().join("bounds.csv"));
    assert!(header.ends_with("ratio,ratio_refined,rel_change"));
}

#[test]
fn lifespan_sweep_writes_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("lifespan_sweep.json");
    let o = dskg(&[
        "lifespan",
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (comment, header, rows) = read_csv(&dir.path().join("lifespan.csv"));
    assert!(comment.contains("run=lifespan_sweep") && comment.contains("tolerances="));
    assert_eq!(header, "eps,T_blowup,censored");
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r[1].is_finite()));
    let text = fs::read_to_string(dir.path().join("lifespan.csv")).unwrap();
    assert!(text.lines().skip(2).all(|l| l.ends_with(",false")));
}
