use std::path::Path;
use std::process::{Command, Output};

fn qb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbacktrack"))
        .args(args)
        .env_remove("QBACKTRACK_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn version_reports_build_metadata() {
    let o = qb(&["--version"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("qbacktrack "));
    let long = stdout(&qb(&["--help"]));
    assert!(long.contains("verify-all"));
}

#[test]
fn generated_tree_round_trips_through_resistance() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("tree.json");
    let f = file.to_str().unwrap();
    let o = qb(&["gen-tree", "--tree", "star:8:2", "--output", f]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(Path::new(f).exists());

    let from_file = qb(&["resistance", "--tree", f]);
    let direct = qb(&["resistance", "--tree", "star:8:2"]);
    assert!(from_file.status.success());
    let a: serde_json::Value = serde_json::from_slice(&from_file.stdout).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&direct.stdout).unwrap();
    assert_eq!(a, b);
}

#[test]
fn csv_output_has_header_and_one_row_per_trial() {
    let o = qb(&[
        "find-marked",
        "--tree",
        "star:16:3",
        "--trials",
        "3",
        "--out",
        "csv",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("trial,outcome,walk_queries"));
    for line in &lines[1..] {
        let outcome: usize = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((1..=3).contains(&outcome));
    }
}

#[test]
fn injected_fault_fails_verification() {
    let clean = qb(&["verify-all", "--random-trees", "3", "--max-size", "20"]);
    assert_eq!(clean.status.code(), Some(0), "{}", stdout(&clean));

    let o = qb(&[
        "verify-all",
        "--random-trees",
        "3",
        "--max-size",
        "20",
        "--fault",
        "kappa-perturbation",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("flow_conservation"));
}

#[test]
fn empty_corpus_is_an_error() {
    let o = qb(&["verify-all", "--random-trees", "0", "--no-fixtures"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no trees"));
}

#[test]
fn environment_overrides_match_flags() {
    let flag = qb(&["detect", "--tree", "path:4", "--seed", "7", "--trials", "2"]);
    let env = Command::new(env!("CARGO_BIN_EXE_qbacktrack"))
        .args(["detect", "--tree", "path:4"])
        .env("QBACKTRACK_SEED", "7")
        .env("QBACKTRACK_TRIALS", "2")
        .output()
        .unwrap();
    assert!(flag.status.success() && env.status.success());
    assert_eq!(flag.stdout, env.stdout);
}

#[test]
fn replayed_spec_reproduces_output() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let s = spec.to_str().unwrap();
    let args = [
        "estimate-res",
        "--tree",
        "star:16:2",
        "--seed",
        "11",
        "--trials",
        "4",
    ];
    let mut emit = args.to_vec();
    emit.push("--emit-spec");
    let emitted = qb(&emit);
    assert!(emitted.status.success());
    std::fs::write(&spec, &emitted.stdout).unwrap();

    let direct = qb(&args);
    let replay = qb(&["run", s]);
    assert!(replay.status.success());
    assert_eq!(direct.stdout, replay.stdout);
}

#[test]
fn bad_arguments_exit_nonzero() {
    assert_ne!(
        qb(&["find-marked", "--tree", "star:0:9"]).status.code(),
        Some(0)
    );
    assert_eq!(
        qb(&["estimate-res", "--tree", "star:4:1", "--vertex", "99"])
            .status
            .code(),
        Some(2)
    );
}
