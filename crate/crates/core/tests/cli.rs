use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use featurevo::experiment::{read_manifest, RunLog};
use featurevo::stats::{mann_whitney_u, SampleSet};

const SMALL: &[&str] = &[
    "--env",
    "echo",
    "--budget",
    "400",
    "--set",
    "max_steps=10",
    "--set",
    "population=4",
    "--set",
    "post_eval_episodes=1",
    "--set",
    "policy_hidden=4",
    "--set",
    "dataset_episodes=2",
    "--set",
    "pretrain_epochs=1",
    "--set",
    "epochs_per_generation=1",
    "--set",
    "latent=3",
    "--set",
    "hidden=3",
    "--set",
    "window=2",
    "--set",
    "probe_episodes=1",
];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_featurevo"));
    c.env_remove("FEATUREVO_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn every_command_documents_its_flags() {
    let cases: &[(&str, &[&str])] = &[
        ("collect", &["--config", "--condition", "--seed", "--env", "--budget", "--set", "--episodes", "--out"]),
        ("pretrain", &["--config", "--dataset", "--epochs", "--out"]),
        ("train", &["--config", "--condition", "--seed", "--out", "--workers", "--resume", "--checkpoint-every", "--quiet"]),
        ("suite", &["--conditions", "--replications", "--out", "--workers"]),
        ("eval", &["--run", "--episodes", "--seed"]),
        ("mse-report", &["--logs"]),
        ("compare", &["--a", "--b", "--json"]),
        ("export-curves", &["--logs", "--marks", "--level", "--resamples", "--seed", "--out"]),
        ("bridge-serve", &["--env", "--max-steps", "--tcp", "--ledger"]),
    ];
    for (cmd, flags) in cases {
        let help = ok(&[cmd, "--help"]);
        for f in *flags {
            assert!(help.contains(f), "{cmd} --help lacks {f}");
        }
    }
    assert!(ok(&["--help"]).contains("export-curves"));
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let bad = run(&["train", "--condition", "EtE*", "--out", p(&out)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("error"));
    assert!(!out.exists(), "config is validated before anything is written");
    assert_eq!(run(&["eval", "--run", p(&dir.path().join("missing"))]).status.code(), Some(1));
}

#[test]
fn train_is_byte_identical_across_fresh_directories() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (d, workers) in [(&a, "1"), (&b, "3")] {
        let args = with_small(&["train", "--condition", "StS*", "--seed", "7", "--quiet", "--workers", workers, "--out", p(d)]);
        let stdout = ok(&args);
        assert!(stdout.contains("StS* seed 7"), "{stdout}");
    }
    for f in ["runlog.csv", "checkpoint.bin", "config.cfg"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let log = RunLog::from_csv(&std::fs::read_to_string(a.join("runlog.csv")).unwrap()).unwrap();
    assert_eq!(log.seed, 7);
    log.check_invariants().unwrap();

    let cfg = dir.path().join("c.cfg");
    std::fs::copy(a.join("config.cfg"), &cfg).unwrap();
    let c = dir.path().join("c");
    ok(&["train", "--config", p(&cfg), "--quiet", "--out", p(&c)]);
    assert_eq!(std::fs::read(a.join("runlog.csv")).unwrap(), std::fs::read(c.join("runlog.csv")).unwrap());

    let eval = ok(&["eval", "--run", p(&a), "--episodes", "2"]);
    assert!(eval.contains("mean score") && eval.contains("2 episodes"), "{eval}");
}

#[test]
fn train_prints_progress_per_generation() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(with_small(&["train", "--condition", "AE"])).env("FEATUREVO_OUT", dir.path()).output().unwrap();
    assert!(out.status.success());
    let log = RunLog::from_csv(&std::fs::read_to_string(dir.path().join("ae-seed0").join("runlog.csv")).unwrap()).unwrap();
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().filter(|l| l.starts_with("[AE] gen ")).count(), log.rows.len());
}

#[test]
fn collect_then_pretrain() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.bin");
    let s = ok(&with_small(&["collect", "--episodes", "3", "--out", p(&ds)]));
    assert!(s.starts_with("3 episodes, 30 steps"), "{s}");
    let fx = dir.path().join("fx.bin");
    let s = ok(&with_small(&["pretrain", "--condition", "AE-FM", "--dataset", p(&ds), "--epochs", "3", "--out", p(&fx)]));
    assert!(s.starts_with("ae-fm: mse"), "{s}");
    assert!(fx.exists());
    assert_eq!(run(&with_small(&["pretrain", "--condition", "EtE", "--dataset", p(&ds)])).status.code(), Some(1));
    let wrong = run(&["pretrain", "--condition", "AE", "--env", "racecar", "--dataset", p(&ds), "--out", p(&fx)]);
    assert_eq!(wrong.status.code(), Some(1));
}

#[test]
fn suite_compare_curves_and_drift_report() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite");
    ok(&with_small(&["suite", "--conditions", "EtE,AE*", "--replications", "3", "--quiet", "--out", p(&suite)]));
    let entries = read_manifest(&suite.join("manifest.jsonl")).unwrap();
    assert_eq!(entries.len(), 6);

    let json_path = dir.path().join("cmp.json");
    let text = ok(&["compare", "--a", p(&suite.join("ete")), "--b", p(&suite.join("ae-star")), "--json", p(&json_path)]);
    let json: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    let finals = |c: &str| entries.iter().filter(|e| e.condition == c).map(|e| e.final_best.unwrap()).collect::<Vec<_>>();
    let direct = mann_whitney_u(&SampleSet::new("a", finals("EtE")).unwrap(), &SampleSet::new("b", finals("AE*")).unwrap()).unwrap();
    assert_eq!(json["p"].as_f64().unwrap(), direct.p);
    assert_eq!(json["u_a"].as_f64().unwrap(), direct.u_a);
    assert_eq!(json["a"]["n"], 3);
    assert!(text.contains("U_a = "));
    assert_eq!(std::fs::read_to_string(&json_path).unwrap().trim(), text.lines().last().unwrap());

    let curves = ok(&["export-curves", "--logs", p(&suite), "--marks", "4", "--resamples", "200"]);
    let lines: Vec<&str> = curves.lines().collect();
    assert_eq!(lines[0], "steps,mean,lo,hi");
    assert_eq!(lines.len(), 5);
    for l in &lines[1..] {
        let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[2] <= v[1] && v[1] <= v[3], "{l}");
    }

    let report = ok(&["mse-report", "--logs", p(&suite)]);
    let rows: Vec<&str> = report.lines().skip(1).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.contains(",AE*,")), "{report}");
    assert_eq!(run(&["mse-report", "--logs", p(dir.path().join("nothing").as_path())]).status.code(), Some(1));
}

#[test]
fn bridge_serve_speaks_the_protocol_on_stdio() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("ledger.json");
    let mut child = bin()
        .args(["bridge-serve", "--env", "echo", "--max-steps", "2", "--ledger", p(&ledger)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    let action = format!("[{}]", ["0.5"; 6].join(","));
    writeln!(stdin, r#"{{"type":"spec"}}"#).unwrap();
    writeln!(stdin, r#"{{"type":"reset","seed":1}}"#).unwrap();
    writeln!(stdin, r#"{{"type":"step","action":{action}}}"#).unwrap();
    writeln!(stdin, "not json").unwrap();
    writeln!(stdin, r#"{{"type":"close"}}"#).unwrap();
    drop(stdin);
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0]["type"], "spec");
    assert_eq!(lines[0]["obs_dim"], 22);
    assert_eq!(lines[2]["reward"], 0.5);
    assert_eq!(lines[3]["code"], "malformed");
    let l: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&ledger).unwrap()).unwrap();
    assert_eq!(l["episode_rewards"][0], 0.5);
    assert_eq!(run(&["bridge-serve", "--env", "cmd:cat"]).status.code(), Some(1));
}
