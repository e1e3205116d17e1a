use std::path::Path;
use std::process::{Command, Output};

fn otsieve(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otsieve"))
        .args(args)
        .current_dir(dir)
        .env_remove("OTSIEVE_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn noiseless_sample_is_recovered_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = otsieve(d, &["simulate", "--preset", "gaussian-noiseless", "--n", "300", "--seed", "3", "--out", "s.csv"]);
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    let e = otsieve(d, &["estimate", "--input", "s.csv", "--estimator", "sls", "--degree", "2", "--out", "r.json"]);
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    // the Gaussian wage is quadratic, so a degree-2 sieve contains it
    let got = [&r["alpha_cc"], &r["alpha_mm"], &r["theta"]["beta_c"], &r["theta"]["beta_m"]];
    for (g, want) in got.iter().zip([0.5, 0.2, 1.7, -0.4]) {
        assert!((g.as_f64().unwrap() - want).abs() < 1e-6, "{g} vs {want}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("r.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "estimate");
    assert!(manifest["wall_time_secs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn malformed_csv_names_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "wage,x_C,x_M,y_C,y_M\n1,2,3,4,5\n1,2,3,oops,5\n").unwrap();
    let out = otsieve(dir.path(), &["diagnose", "summary", "--input", "bad.csv", "--out", "o.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let j = stderr_json(&out);
    assert_eq!(j["error"], "data");
    assert_eq!(j["row"], 2);
    assert_eq!(j["column"], "y_C");
    assert_eq!(j["exit_code"], 2);
    assert!(!dir.path().join("o.csv").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = otsieve(dir.path(), &["estimate", "--estimator", "nope", "--input", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let out = otsieve(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let out = otsieve(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn config_file_merges_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), r#"{"preset": "mixture", "n": 40, "seed": 9, "out": "from_config.csv"}"#).unwrap();
    let out = otsieve(d, &["--config", "cfg.json", "simulate", "--n", "25"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(d.join("from_config.csv")).unwrap();
    assert_eq!(text.lines().count(), 26);

    std::fs::write(d.join("typo.json"), r#"{"sead": 9}"#).unwrap();
    let out = otsieve(d, &["--config", "typo.json", "simulate", "--out", "t.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "config");
}

#[test]
fn underidentified_sample_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    // six rows cannot identify a cubic sieve
    let mut text = String::from("wage,x_C,x_M,y_C,y_M\n");
    for i in 0..6 {
        let v = i as f64;
        text.push_str(&format!("{},{},{},{},{}\n", 30.0 + v, v, -v * 0.5, v * 0.3, v));
    }
    std::fs::write(dir.path().join("tiny.csv"), text).unwrap();
    let out = otsieve(dir.path(), &["estimate", "--input", "tiny.csv", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("cannot identify"));
}

#[test]
fn solve_ot_and_decompose_write_expected_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (preset, seed, out) in [("gaussian", "1", "a.csv"), ("gumbel-joint", "2", "b.csv")] {
        assert!(otsieve(d, &["simulate", "--preset", preset, "--n", "120", "--seed", seed, "--out", out]).status.success());
    }
    let ot = otsieve(d, &["solve-ot", "--input", "a.csv", "--tech", "0.5,0.2,1.7,-0.4", "--normalization", "anchor:0", "--out", "ot.csv"]);
    assert!(ot.status.success(), "{}", String::from_utf8_lossy(&ot.stderr));
    let text = std::fs::read_to_string(d.join("ot.csv")).unwrap();
    assert_eq!(text.lines().count(), 121);
    for (input, out) in [("a.csv", "ra.json"), ("b.csv", "rb.json")] {
        let e = otsieve(d, &["estimate", "--input", input, "--estimator", "sls", "--no-se", "--out", out]);
        assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    }
    let dec = otsieve(
        d,
        &["decompose", "--sample-t0", "a.csv", "--sample-t1", "b.csv", "--report-t0", "ra.json", "--report-t1", "rb.json", "--out", "dec.csv"],
    );
    assert!(dec.status.success(), "{}", String::from_utf8_lossy(&dec.stderr));
    let text = std::fs::read_to_string(d.join("dec.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "percentile,actual,model,task_biased_only,skill_biased_only,distribution_only");
    assert_eq!(text.lines().count(), 100);
    let median = text.lines().find(|l| l.starts_with("50,")).unwrap();
    assert!(median.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0));
}
