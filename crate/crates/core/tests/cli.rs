use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fisher-influence"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const EXACT_MARKET: &str = r#"
n = 2
m = 2
family = "cobb-douglas"
budgets = [4.0, 4.0]
valuations = [[0.75, 0.25], [0.25, 0.75]]
edges = [[0, 1]]
"#;

#[test]
fn generate_then_solve_then_check() {
    let dir = tempfile::tempdir().unwrap();
    let market = dir.path().join("market.toml");
    let out = run(&[
        "generate",
        "--family",
        "cobb-douglas",
        "--seed",
        "3",
        "--out",
        path(&market),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let solved = dir.path().join("solved");
    let out = run(&["solve", "--market", path(&market), "--out", path(&solved)]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["trajectory.csv", "solution.toml", "certificate.toml"] {
        assert!(solved.join(f).exists(), "{f} missing");
    }
    let header = std::fs::read_to_string(solved.join("trajectory.csv")).unwrap();
    assert!(header.starts_with("t,obj_sum,"));

    let solution = solved.join("solution.toml");
    let out = run(&[
        "check",
        "--market",
        path(&market),
        "--allocation",
        path(&solution),
        "--prices",
        path(&solution),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("feasibility_violation"));
}

#[test]
fn vi_method_solves() {
    let dir = tempfile::tempdir().unwrap();
    let market = dir.path().join("market.toml");
    std::fs::write(&market, EXACT_MARKET).unwrap();
    let solved = dir.path().join("vi");
    let out = run(&[
        "solve",
        "--market",
        path(&market),
        "--method",
        "vi",
        "--outer",
        "5000",
        "--out",
        path(&solved),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
}

#[test]
fn check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let market = dir.path().join("market.toml");
    std::fs::write(&market, EXACT_MARKET).unwrap();
    let good = dir.path().join("good.toml");
    std::fs::write(
        &good,
        "prices = [4.0, 4.0]\nallocation = [[0.75, 0.25], [0.25, 0.75]]\n",
    )
    .unwrap();
    let over = dir.path().join("over.toml");
    std::fs::write(
        &over,
        "prices = [4.0, 4.0]\nallocation = [[0.9, 0.25], [0.25, 0.75]]\n",
    )
    .unwrap();

    let check = |sol: &Path, extra: &[&str]| {
        let mut args = vec![
            "check",
            "--market",
            path(&market),
            "--allocation",
            path(sol),
            "--prices",
            path(sol),
        ];
        args.extend_from_slice(extra);
        run(&args).status.code()
    };
    assert_eq!(check(&good, &[]), Some(0));
    assert_eq!(check(&good, &["--gne"]), Some(0));
    assert_eq!(check(&over, &[]), Some(1));

    let wrong_shape = dir.path().join("shape.toml");
    std::fs::write(&wrong_shape, "prices = [4.0]\nallocation = [[1.0]]\n").unwrap();
    assert_eq!(check(&wrong_shape, &[]), Some(2));
    assert_eq!(check(&dir.path().join("missing.toml"), &[]), Some(2));
}

#[test]
fn invalid_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        "n = 1\nm = 1\nfamily = \"cobb-douglas\"\nbudgets = [-1.0]\nvaluations = [[1.0]]\n",
    )
    .unwrap();
    let out = run(&[
        "solve",
        "--market",
        path(&bad),
        "--out",
        path(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let out = run(&[
        "generate",
        "--family",
        "leontief",
        "--edge-prob",
        "1.5",
        "--out",
        path(&bad),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["generate", "--family", "quadratic", "--out", path(&bad)]);
    assert!(!out.status.success());
}

#[test]
fn experiment_writes_batch_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("exp");
    let out = run(&[
        "experiment",
        "--family",
        "cobb-douglas",
        "--num-markets",
        "2",
        "--outer",
        "20",
        "--out",
        path(&out_dir),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "market_000.toml",
        "market_001.toml",
        "trajectory_000.csv",
        "trajectory_001.csv",
        "aggregate.csv",
        "summary.toml",
    ] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    assert!(String::from_utf8_lossy(&out.stdout).contains("pass_rate"));

    let out = run(&[
        "experiment",
        "--family",
        "linear",
        "--paper-defaults",
        "--outer",
        "5",
        "--out",
        path(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
