use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pwl-canard")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn connect_reports_connection_and_series() {
    let v = json(&run(&["connect", "--k", "1", "--eps", "0.01", "--sign", "minus"]));
    assert!(v["valid"].as_bool().unwrap());
    assert!(v["residual_norm"].as_f64().unwrap() <= 1e-12);
    let a = v["a_tilde"].as_f64().unwrap();
    let gap = v["series"]["a_tilde_gap"].as_f64().unwrap();
    assert!((a - v["series"]["a_tilde"].as_f64().unwrap() - gap).abs() < 1e-15);
    assert!(gap.abs() < 1e-3);
    assert_eq!(v["inputs"]["m_sign"], "minus");
}

#[test]
fn m_flag_with_unit_modulus_is_the_same_as_the_sign() {
    let by_sign = run(&["connect", "--k", "1", "--eps", "0.01", "--sign", "plus"]);
    let by_m = run(&["connect", "--k", "1", "--eps", "0.01", "--m", "0.1"]);
    assert_eq!(json(&by_sign), json(&by_m));
}

#[test]
fn simulate_emits_a_twenty_event_orbit() {
    let o = run(&[
        "simulate", "--x0", "0.5", "--y0", "2.0", "--a", "0", "--k", "1", "--m", "-0.1", "--eps", "0.01",
        "--crossings", "20", "--dt", "0.5",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,x,y,zone");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.len() > 20);
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.5);
    // Zone runs along the samples never outnumber the events.
    let runs = 1 + rows.windows(2).filter(|w| w[0][3] != w[1][3]).count();
    assert!(runs <= 20, "{runs}");
    // 17 significant digits.
    assert_eq!(rows[1][1].split('e').next().unwrap().len(), 18);
}

#[test]
fn usage_errors_exit_with_2() {
    for args in [
        vec!["connect", "--k", "1", "--eps", "0.01"],
        vec!["connect", "--k", "1", "--eps", "0.01", "--sign", "minus", "--m", "-0.1"],
        vec!["connect", "--k", "1", "--eps", "0.01", "--m", "-0.3"],
        vec!["connect", "--k", "-1", "--eps", "0.01", "--sign", "minus"],
        vec!["connect", "--k", "1", "--eps", "0.9", "--sign", "minus"],
        vec!["connect", "--k", "1", "--eps", "0.01", "--sign", "sideways"],
        vec!["figures", "--id", "fig9"],
        vec!["bogus"],
    ] {
        assert_eq!(run(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn numerical_failure_exits_with_3_and_json_diagnostics() {
    let o = run(&["snk", "--x0", "-0.5", "--eps", "0.01", "--sign", "minus", "--k-hi", "1.0"]);
    assert_eq!(o.status.code(), Some(3));
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(v["error"], "numerical");
    assert_eq!(v["context"]["k_hi"], 1.0);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let args = ["branch", "--k", "2.5", "--eps", "0.1", "--sign", "minus", "--points", "60"];
    let one = run(&args);
    assert!(one.status.success());
    assert_eq!(one.stdout, run(&args).stdout);
    let args = ["rzero", "--k", "2.5", "--eps", "0.01", "--sign", "minus"];
    assert_eq!(run(&args).stdout, run(&args).stdout);
}

#[test]
fn config_round_trips_and_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let printed = run(&["connect", "--k", "1", "--eps", "0.01", "--sign", "minus", "--print-config"]);
    assert!(printed.status.success());
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, &printed.stdout).unwrap();
    let cfg = cfg.to_str().unwrap();
    let again = run(&["connect", "--config", cfg, "--print-config"]);
    assert_eq!(printed.stdout, again.stdout);
    // Config keys win over flags.
    let over = json(&run(&["connect", "--k", "3", "--eps", "0.05", "--sign", "plus", "--config", cfg]));
    assert_eq!(over["inputs"]["k"], 1.0);
    assert_eq!(over["inputs"]["m_sign"], "minus");
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"kk": 1}"#).unwrap();
    assert_eq!(run(&["connect", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let other = dir.path().join("other.json");
    std::fs::write(&other, r#"{"command": "hopf"}"#).unwrap();
    assert_eq!(run(&["connect", "--config", other.to_str().unwrap()]).status.code(), Some(2));
}

fn cycles_csv(dir: &Path, stem: &str) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(dir.join(format!("{stem}_cycles.csv"))).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn three_cycle_dataset_is_regenerated() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(run(&["figures", "--id", "fig6a", "--out-dir", d]).status.success());
    let rows = cycles_csv(dir.path(), "fig6a");
    assert_eq!(rows.len(), 3);
    let st: Vec<&str> = rows.iter().map(|r| r[5].as_str()).collect();
    assert_eq!(st, ["stable", "unstable", "stable"]);
    let mut widths: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    widths.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for (w, want) in widths.iter().zip([-0.4462, -0.46449, -1.8878]) {
        assert!((w - want).abs() < 2e-3, "{widths:?}");
    }
    let orbits = std::fs::read_to_string(dir.path().join("fig6a_orbits.csv")).unwrap();
    assert!(orbits.starts_with("cycle,t,x,y,zone\n"));
    // No temp files left behind by the atomic writes.
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 2, "{names:?}");
}

#[test]
fn files_match_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("hopf.json");
    let args = ["hopf", "--k", "1", "--eps", "0.01", "--sign", "minus"];
    let o = run(&[&args[..], &["--out", out.to_str().unwrap()]].concat());
    assert!(o.status.success() && o.stdout.is_empty());
    assert_eq!(std::fs::read(&out).unwrap(), run(&args).stdout);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let mut outs = Vec::new();
    for n in ["1", "4"] {
        let sub = format!("{d}/{n}");
        let o = Command::new(env!("CARGO_BIN_EXE_pwl-canard"))
            .args(["figures", "--id", "fig7", "--eps", "0.01", "--out-dir", &sub])
            .env("CANARD_THREADS", n)
            .output()
            .unwrap();
        assert!(o.status.success());
        outs.push(std::fs::read(format!("{sub}/fig7_hstar.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    let o = Command::new(env!("CARGO_BIN_EXE_pwl-canard"))
        .args(["verify", "--criterion", "1"])
        .env("CANARD_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_single_criterion_passes() {
    let o = run(&["verify", "--criterion", "1"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("[PASS]"));
}
