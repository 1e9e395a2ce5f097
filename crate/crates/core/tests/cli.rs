use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = "[experiment]\ndays = 2\n\n[attack]\nseeds = 2\nrounds = 3\n";

fn fedtte(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedtte")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn generate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = fedtte(&["generate", "--seed", "7", "--out", d.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let fa = files(&a);
    assert!(fa.iter().any(|(n, _)| n == "trajectories.csv"));
    assert_eq!(fa, files(&b));
}

#[test]
fn train_attack_export_metrics_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = tmp.path().join("run");
    let common = ["--config", cfg.to_str().unwrap(), "--seed", "5", "--out", out.to_str().unwrap()];
    let run = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd];
        args.extend_from_slice(&common);
        args.extend_from_slice(extra);
        fedtte(&args)
    };

    let o = run("train", &["--epsilon", "inf"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("personalized mae"));

    let o = run("attack", &["--epsilon", "inf"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("attack.csv").is_file());

    let o = run("attack", &["--epsilon", "1"]);
    assert_eq!(code(&o), 1);

    let o = run("export-state", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("state.csv").is_file());

    let o = run("metrics", &[]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let saved: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report["global"]["mae"], saved["global"]["mae"]);
}

#[test]
fn metrics_of_perfect_predictions_are_zero() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("predictions.csv"),
        "client_id,route_seq,y_true_s,y_hat_s,y_final_s\nd0,0,100,100,100\nd1,0,50.5,50.5,50.5\n",
    )
    .unwrap();
    let o = fedtte(&["metrics", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for split in ["global", "personalized"] {
        for m in ["mae", "rmse", "mape"] {
            assert_eq!(r[split][m], 0.0, "{split} {m}");
        }
    }
}

#[test]
fn exit_codes() {
    let o = fedtte(&["train", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    assert_eq!(code(&fedtte(&["--help"])), 0);

    let o = fedtte(&["train", "--epsilon", "-3", "--out", "/nonexistent/x"]);
    assert_eq!(code(&o), 1);

    let tmp = tempfile::tempdir().unwrap();
    let o = fedtte(&["train", "--config", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 1);

    fs::write(tmp.path().join("predictions.csv"), "a,b\n1,2\n").unwrap();
    let o = fedtte(&["metrics", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}
