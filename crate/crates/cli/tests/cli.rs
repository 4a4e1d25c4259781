//! End-to-end tests of the `stopclock` binary: artifact shapes, exit-code
//! contract, and byte-level determinism of `report.json`.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stopclock(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stopclock"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = stopclock(args);
    assert!(
        out.status.success(),
        "expected success for {args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    stopclock(args).status.code().expect("no signal")
}

fn simulate(dir: &Path, extra: &[&str]) {
    let dir = dir.to_str().unwrap();
    let mut args = vec!["simulate", "--out-dir", dir, "--games", "20", "--seed", "11"];
    args.extend_from_slice(extra);
    run_ok(&args);
}

#[test]
fn simulate_then_ingest_reproduces_the_instants_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &["--delta", "0.3", "--lambda", "4", "--official-marks", "360,540"]);

    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sim.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["delta"], 0.3);
    assert_eq!(truth["lambda"], 4);
    assert_eq!(truth["n_games"], 20);

    let ing = tmp.path().join("ing");
    run_ok(&["ingest", sim.join("pbp.csv").to_str().unwrap(), "--out-dir", ing.to_str().unwrap()]);
    assert_eq!(
        fs::read(sim.join("instants.csv")).unwrap(),
        fs::read(ing.join("instants.csv")).unwrap(),
        "segmenting simulator events must reproduce its own instants"
    );
}

#[test]
fn analyze_writes_report_balance_units_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &["--delta", "0.4", "--lambda", "4"]);

    let an = tmp.path().join("an");
    let units = tmp.path().join("units.csv");
    run_ok(&[
        "analyze",
        sim.join("pbp.csv").to_str().unwrap(),
        "--out-dir",
        an.to_str().unwrap(),
        "--lambda",
        "4",
        "--method",
        "propensity",
        "--permutations",
        "499",
        "--seed",
        "3",
        "--units-out",
        units.to_str().unwrap(),
    ]);

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(an.join("report.json")).unwrap()).unwrap();
    let entries = report.as_array().unwrap();
    assert_eq!(entries.len(), 1);
    let r = &entries[0];
    assert_eq!(r["method"], "propensity");
    assert_eq!(r["algorithm"], "optimal");
    assert_eq!(r["lambda"], 4);
    assert_eq!(r["side"], "home");
    assert_eq!(r["subgroup"], "all");
    assert_eq!(r["n_permutations"], 499);
    assert!(r["n_pairs"].as_u64().unwrap() > 0);
    assert!(r["te"].is_f64());
    let p = r["p_value"].as_f64().unwrap();
    assert!(p > 0.0 && p <= 1.0);
    assert!(r["ci"]["lo"].as_f64().unwrap() <= r["ci"]["hi"].as_f64().unwrap());
    assert_eq!(r["ci"]["level"], 0.99);

    let balance = fs::read_to_string(an.join("balance.csv")).unwrap();
    assert!(balance.starts_with("lambda,method,stage,covariate,"));
    for stage in ["bm", "am"] {
        for cov in ["seconds", "quarter", "margin", "dpre"] {
            assert!(
                balance.contains(&format!("4,propensity,{stage},{cov},")),
                "missing {stage}/{cov} row"
            );
        }
    }
    // Exact matching on the pre-window run: its matched SMD is exactly 0.
    let am_dpre = balance
        .lines()
        .find(|l| l.contains(",am,dpre,"))
        .expect("matched dpre row");
    assert!(am_dpre.ends_with(",0"), "expected exact zero, got: {am_dpre}");

    let units_text = fs::read_to_string(&units).unwrap();
    assert!(units_text.starts_with("game_id,t,side,a,quarter,seconds,p_margin,dpre_num,y\n"));
    assert!(units_text.lines().count() > 1);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(an.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "analyze");
    assert_eq!(manifest["args"]["method"], "propensity");
    assert_eq!(manifest["seed"], 3);
    assert!(manifest["duration_ms"].is_u64());
    assert_eq!(manifest["outputs"][0], "report.json");
}

#[test]
fn reports_are_byte_identical_across_threads_and_input_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &["--delta", "0.2", "--lambda", "2"]);
    let pbp = sim.join("pbp.csv");
    let instants = sim.join("instants.csv");

    let run = |input: &Path, dir: &Path, threads: &str| {
        run_ok(&[
            "analyze",
            input.to_str().unwrap(),
            "--out-dir",
            dir.to_str().unwrap(),
            "--lambda",
            "2",
            "--method",
            "propensity",
            "--algorithm",
            "greedy",
            "--permutations",
            "800",
            "--seed",
            "9",
            "--threads",
            threads,
        ]);
        fs::read(dir.join("report.json")).unwrap()
    };
    let a = run(&pbp, &tmp.path().join("t1"), "1");
    let b = run(&pbp, &tmp.path().join("t3"), "3");
    let c = run(&instants, &tmp.path().join("fmt"), "2");
    assert_eq!(a, b, "thread count changed the report");
    assert_eq!(a, c, "input format changed the report");
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &[]);
    let pbp = sim.join("pbp.csv");
    let pbp = pbp.to_str().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();

    // Odd lambda.
    assert_eq!(exit_code(&["analyze", pbp, "--out-dir", out, "--lambda", "3"]), 2);
    // Non-standard lambda without the override.
    assert_eq!(exit_code(&["analyze", pbp, "--out-dir", out, "--lambda", "8"]), 2);
    assert_eq!(
        exit_code(&["analyze", pbp, "--out-dir", out, "--lambda", "8", "--allow-any-lambda"]),
        0
    );
    // Alpha outside (0, 1).
    assert_eq!(exit_code(&["analyze", pbp, "--out-dir", out, "--alpha", "1.5"]), 2);
    // Unknown method (rejected by the parser).
    assert_eq!(exit_code(&["analyze", pbp, "--out-dir", out, "--method", "exact"]), 2);
    // Bad simulate config.
    assert_eq!(exit_code(&["simulate", "--out-dir", out, "--delta", "1.5"]), 2);
    // Unrecognized input header.
    let junk = tmp.path().join("junk.csv");
    fs::write(&junk, "a,b,c\n1,2,3\n").unwrap();
    assert_eq!(exit_code(&["analyze", junk.to_str().unwrap(), "--out-dir", out]), 2);
}

#[test]
fn schema_errors_exit_two_and_integrity_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();

    let bad_row = tmp.path().join("bad_row.csv");
    fs::write(
        &bad_row,
        "game_id,period,clock_remaining_s,event_kind,points,team,official,raw_text\n\
         g1,1,700,shot_made,7,home,,seven points\n",
    )
    .unwrap();
    let res = stopclock(&["ingest", bad_row.to_str().unwrap(), "--out-dir", out]);
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("line 2"), "row errors carry line numbers: {stderr}");

    // Free-throw points still in flight at a timeout.
    let pending = tmp.path().join("pending.csv");
    fs::write(
        &pending,
        "game_id,period,clock_remaining_s,event_kind,points,team,official,raw_text\n\
         g1,1,700,free_throw_made,1,home,,made ft 1 of 2\n\
         g1,1,690,timeout,,home,0,timeout\n\
         g1,1,0,period_end,,,,\n",
    )
    .unwrap();
    assert_eq!(exit_code(&["ingest", pending.to_str().unwrap(), "--out-dir", out]), 1);
}

#[test]
fn naive_reports_both_groups_and_fails_without_timeouts() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &["--delta", "0.5", "--lambda", "4"]);

    let nv = tmp.path().join("nv");
    run_ok(&[
        "naive",
        sim.join("instants.csv").to_str().unwrap(),
        "--out-dir",
        nv.to_str().unwrap(),
        "--lambda",
        "4",
        "--bootstrap",
        "499",
    ]);
    let naive: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(nv.join("naive.json")).unwrap()).unwrap();
    assert_eq!(naive["lambda"], 4);
    assert!(naive["timeouts"]["n"].as_u64().unwrap() > 0);
    assert!(naive["possessions"]["n"].as_u64().unwrap() > 0);
    // Momentum-triggered selection plus a positive injected effect make the
    // unadjusted timeout mean clearly positive.
    assert!(naive["timeouts"]["mean"].as_f64().unwrap() > 0.0);
    let density = fs::read_to_string(nv.join("density.csv")).unwrap();
    assert!(density.starts_with("group,bin_lo,bin_hi,count"));
    assert!(density.contains("\ntimeout,"));
    assert!(density.contains("\npossession,"));

    // A season whose policy never calls timeouts has no treated units.
    let none = tmp.path().join("none");
    simulate(&none, &["--pi0", "0", "--pi1", "0"]);
    let code = exit_code(&[
        "naive",
        none.join("pbp.csv").to_str().unwrap(),
        "--out-dir",
        tmp.path().join("nv2").to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn empty_matched_sample_warns_but_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let none = tmp.path().join("none");
    simulate(&none, &["--pi0", "0", "--pi1", "0"]);

    let an = tmp.path().join("an");
    let res = stopclock(&[
        "analyze",
        none.join("pbp.csv").to_str().unwrap(),
        "--out-dir",
        an.to_str().unwrap(),
        "--lambda",
        "4",
        "--method",
        "nb",
    ]);
    assert_eq!(res.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&res.stderr).contains("warning"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(an.join("report.json")).unwrap()).unwrap();
    let r = &report.as_array().unwrap()[0];
    assert_eq!(r["n_pairs"], 0);
    assert!(r["te"].is_null());
    assert!(r["p_value"].is_null());
    assert!(r["ci"].is_null());
}
