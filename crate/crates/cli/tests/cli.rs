use std::process::{Command, Output};

const HEADER: &str = "n,probability,std_error,trials,seed,cost_gwei,cost_usd";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beacon-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(HEADER));
    lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn finality_table_has_exact_probabilities() {
    let rows = csv_rows(&stdout(&["finality-prob", "--from", "1", "--to", "10"]));
    assert_eq!(rows.len(), 10);
    assert_eq!(rows[0][1], "1");
    let p3: f64 = rows[2][1].parse().unwrap();
    assert!((p3 - 0.097371).abs() < 1e-12);
    for r in &rows[1..] {
        let usd: f64 = r[6].parse().unwrap();
        assert!((100.0..=1200.0).contains(&usd), "{r:?}");
    }
}

#[test]
fn zero_stake_reorg_column_is_all_zero() {
    let rows = csv_rows(&stdout(&[
        "reorg-prob",
        "--stake",
        "0",
        "--trials",
        "500",
        "--to",
        "4",
    ]));
    assert_eq!(rows.len(), 4);
    for r in rows {
        assert_eq!(r[1], "0");
        assert_eq!(r[3], "500");
        assert_eq!(r[5], "", "no cost without successes");
    }
}

#[test]
fn reorg_json_mirrors_csv() {
    let args = ["reorg-prob", "--trials", "2000", "--to", "3", "--seed", "5"];
    let csv = csv_rows(&stdout(&args));
    let mut json_args = args.to_vec();
    json_args.extend(["--format", "json"]);
    let json: serde_json::Value = serde_json::from_str(&stdout(&json_args)).unwrap();
    let rows = json["rows"].as_array().unwrap();
    assert_eq!(rows.len(), csv.len());
    for (j, c) in rows.iter().zip(&csv) {
        assert_eq!(j["probability"].as_f64().unwrap().to_string(), c[1]);
        assert_eq!(j["seed"], 5);
    }
    assert_eq!(json["config"]["trials"], 2000);
}

#[test]
fn rewards_table_at_defaults() {
    let text = stdout(&["rewards"]);
    assert!(text.contains("base_reward,44721,"));
    assert!(text.contains("inclusion_reward_1,39131,"));
    assert!(text.contains("max_attestation_value,173294,"));
    assert!(text.contains("inactivity_leak_per_epoch,1907.35,"));
}

#[test]
fn usage_errors_exit_nonzero() {
    for args in [
        &["reorg-prob", "--from", "0"][..],
        &["reorg-prob", "--from", "5", "--to", "2"],
        &["finality-prob", "--stake", "1.5"],
        &["rewards", "--committee-size", "0"],
        &["reorg-prob", "--trials", "0"],
        &["simulate-finality", "--attack-epoch", "0"],
        &["no-such-command"],
    ] {
        let out = run(args);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(!out.stderr.is_empty());
        assert!(out.stdout.is_empty());
    }
}

#[test]
fn infeasible_scenario_names_the_precondition() {
    let out = run(&[
        "simulate-finality",
        "--stake",
        "0.01",
        "--max-draws",
        "3",
        "--quiet",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("precondition"), "{err}");
    assert!(err.contains("propose"), "{err}");
}

#[test]
fn toy_reorg_trace() {
    let out = run(&["simulate-reorg", "--toy"]);
    assert!(out.status.success());
    let log = String::from_utf8_lossy(&out.stderr);
    assert!(log.contains("fork weight 3 vs honest weight 2"), "{log}");
    let trace: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["config", "events", "final", "blocks", "scenario"] {
        assert!(trace.get(key).is_some(), "missing {key}");
    }
    let fin = &trace["final"];
    for key in ["head", "canonical", "justified", "finalized", "slashable"] {
        assert!(fin.get(key).is_some(), "missing final.{key}");
    }
    assert_eq!(fin["slashable"], serde_json::json!([]));
    assert_eq!(
        trace["scenario"]["orphaned"],
        trace["scenario"]["honest_blocks"]
    );
    assert_eq!(fin["head"], trace["scenario"]["fork_blocks"][0]);
    let first = &trace["events"][0];
    for key in ["slot", "phase", "actor", "action"] {
        assert!(first.get(key).is_some(), "missing events[0].{key}");
    }
}

#[test]
fn finality_traces_attacked_and_honest() {
    let attacked: serde_json::Value =
        serde_json::from_str(&stdout(&["simulate-finality", "--quiet"])).unwrap();
    let justified = attacked["scenario"]["justified_epochs"].as_array().unwrap();
    assert!(!justified.contains(&serde_json::json!(1)));
    let link = &attacked["scenario"]["links"][0];
    assert!(link["withheld_ebb_votes"].as_u64().unwrap() < 2731);
    assert!(link["borrowed_ebb_votes"].as_u64().unwrap() < 2731);

    let honest: serde_json::Value =
        serde_json::from_str(&stdout(&["simulate-finality", "--honest", "--quiet"])).unwrap();
    assert_eq!(
        honest["scenario"]["justified_epochs"],
        serde_json::json!([0, 1, 2, 3])
    );
}

#[test]
fn out_plot_and_config_files() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("f.csv");
    let svg = dir.path().join("f.svg");
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "usd_per_eth = 1000.0\nformat = \"csv\"\n[rewards]\nbase_reward_factor = 64\n",
    )
    .unwrap();
    let out = run(&[
        "finality-prob",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
        "--plot",
        svg.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty());
    let rows = csv_rows(&std::fs::read_to_string(&csv).unwrap());
    // doubled price doubles the USD column
    let usd: f64 = rows[1][6].parse().unwrap();
    assert!((usd - 2.0 * 106.40243925).abs() < 1e-6, "{usd}");
    let plot = std::fs::read_to_string(&svg).unwrap();
    assert!(plot.starts_with("<svg") && plot.trim_end().ends_with("</svg>"));
    for guide in ["hourly", "daily", "yearly"] {
        assert!(plot.contains(guide));
    }

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "stakes = 0.2\n").unwrap();
    assert!(!run(&["rewards", "--config", bad.to_str().unwrap()])
        .status
        .success());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "stake = 0.0\n").unwrap();
    let rows = csv_rows(&stdout(&[
        "reorg-prob",
        "--config",
        cfg.to_str().unwrap(),
        "--stake",
        "0.3",
        "--trials",
        "300",
        "--to",
        "1",
    ]));
    let p: f64 = rows[0][1].parse().unwrap();
    assert!(p > 0.5);
}
