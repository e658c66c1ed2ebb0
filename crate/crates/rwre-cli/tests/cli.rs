use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rwre"));
    // The suite must not inherit ambient overrides from the caller.
    for var in ["RWRE_CONFIG", "RWRE_SEED", "RWRE_THREADS", "RWRE_OUT"] {
        cmd.env_remove(var);
    }
    cmd
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path
}

fn assert_code(output: &Output, want: i32) {
    assert_eq!(
        output.status.code(),
        Some(want),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn env_sample_matches_the_law_moments() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "law": {"dirichlet": {"beta": [1.0, 2.0, 3.0, 4.0]}},
            "seed": 7,
            "env_sample": {"n_samples": 200000, "csv_rows": 1000}
        }"#,
    );
    let out = dir.path().join("run");
    let res = bin().args(["--config"]).arg(&cfg).arg("--out").arg(&out).arg("env-sample").output().unwrap();
    assert_code(&res, 0);

    let moments = read_json(&out.join("moments.json"));
    let means = moments["means"].as_array().unwrap();
    for (i, want) in [0.1, 0.2, 0.3, 0.4].iter().enumerate() {
        let got = means[i].as_f64().unwrap();
        assert!((got - want).abs() < 0.005, "mean[{i}] = {got}, want ~{want}");
    }
    let drift = moments["mean_drift"].as_array().unwrap();
    assert!((drift[0].as_f64().unwrap() - (0.1 - 0.3)).abs() < 0.01);

    let lines = csv_lines(&out.join("samples.csv"));
    assert_eq!(lines.len(), 1001);
    assert_eq!(lines[0], "index,w_e1,w_e2,w_-e1,w_-e2");

    let schema = read_json(&out.join("samples.schema.json"));
    assert_eq!(schema["file"], "samples.csv");
    assert_eq!(schema["columns"][0]["name"], "index");
    assert_eq!(schema["columns"].as_array().unwrap().len(), 5);

    assert_eq!(read_json(&out.join("resolved_config.json"))["seed"], 7);
}

#[test]
fn cr_example_rows_keep_the_exact_ratio() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "law": {"cr_example": {"phi": "squared_uniform_quarter"}},
            "env_sample": {"n_samples": 100, "csv_rows": 50}
        }"#,
    );
    let out = dir.path().join("run");
    let res = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).arg("env-sample").output().unwrap();
    assert_code(&res, 0);

    let lines = csv_lines(&out.join("samples.csv"));
    assert_eq!(lines.len(), 51);
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        let w_e1: f64 = fields[1].parse().unwrap();
        let w_neg_e1: f64 = fields[3].parse().unwrap();
        // The law sets omega(e_1) = 2 omega(-e_1) bitwise; the shortest
        // round-trip rendering must preserve that through the CSV.
        assert_eq!(w_e1, 2.0 * w_neg_e1, "row: {line}");
    }
}

#[test]
fn unknown_config_keys_and_missing_sections_are_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), r#"{"walkz": 3}"#);
    let out = dir.path().join("run");
    let res = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).arg("env-sample").output().unwrap();
    assert_code(&res, 2);
    assert!(stderr_of(&res).contains("walkz"), "{}", stderr_of(&res));

    let cfg = write_config(dir.path(), r#"{"law": {"uniform": {"d": 2}}}"#);
    let res = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).arg("env-sample").output().unwrap();
    assert_code(&res, 2);
    assert!(stderr_of(&res).contains("env_sample"), "{}", stderr_of(&res));
}

#[test]
fn pm_sweep_reports_fail_for_the_uniform_law() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "law": {"uniform": {"d": 2}},
            "seed": 5,
            "pm": {"l": [1.0, 0.0], "ls": [4, 6], "m": 35.0, "l_tilde": 30,
                   "n_walks": 300, "exact_envs": 0}
        }"#,
    );
    let out = dir.path().join("run");
    let res = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).arg("pm-check").output().unwrap();
    // A failed decay test is a result, not an error.
    assert_code(&res, 0);

    let report = read_json(&out.join("pm_report.json"));
    let sweep = report["sweep"].as_array().unwrap();
    assert_eq!(sweep.len(), 2);
    for row in sweep {
        assert_eq!(row["verdict"], "fail");
        assert!(row["p_hat"].as_f64().unwrap() > 0.3);
    }
    let lines = csv_lines(&out.join("pm_sweep.csv"));
    assert_eq!(lines.len(), 3);
    assert!(lines[1].contains(",fail,"), "{}", lines[1]);
}

#[test]
fn pm_depth_below_the_minimum_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "law": {"uniform": {"d": 2}},
            "pm": {"l": [1.0, 0.0], "ls": [1], "m": 2.0, "n_walks": 100}
        }"#,
    );
    let out = dir.path().join("run");
    let res = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).arg("pm-check").output().unwrap();
    assert_code(&res, 2);
    assert!(stderr_of(&res).to_lowercase().contains("depth"), "{}", stderr_of(&res));
}

#[test]
fn regen_reports_positive_velocity_with_interval() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "law": {"dirichlet": {"beta": [1.5, 0.4, 0.2, 0.4]}},
            "seed": 3,
            "regen": {"l": [1.0, 0.0], "horizon": 20000, "n_walks": 50}
        }"#,
    );
    let out = dir.path().join("run");
    let res = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).arg("regen").output().unwrap();
    assert_code(&res, 0);

    let report = read_json(&out.join("regen.json"));
    let v0 = report["stats"]["velocity"][0].as_f64().unwrap();
    let ci_lo = report["velocity_ci"][0][0].as_f64().unwrap();
    assert!(v0 > 0.0 && ci_lo > 0.0, "velocity {v0}, ci lower {ci_lo}");
    assert!(report["stats"]["gaps_used"].as_u64().unwrap() > 1000);

    let lines = csv_lines(&out.join("records.csv"));
    assert_eq!(lines.len(), 51);
}

#[test]
fn regen_without_usable_gaps_exits_with_insufficient_data() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "law": {"uniform": {"d": 2}},
            "regen": {"l": [1.0, 0.0], "horizon": 3000, "n_walks": 30}
        }"#,
    );
    let out = dir.path().join("run");
    let res = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).arg("regen").output().unwrap();
    assert_code(&res, 3);
    let err = stderr_of(&res);
    assert!(err.contains("insufficient data"), "{err}");
    assert!(err.contains("30"), "{err}");
}

#[test]
fn tail_self_test_recovers_the_pareto_exponent() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "tail": {"pareto_self_test": {"alpha": 2.0, "n": 100000}}
        }"#,
    );
    let out = dir.path().join("run");
    let res = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).arg("tail").output().unwrap();
    assert_code(&res, 0);

    let report = read_json(&out.join("tail.json"));
    assert_eq!(report["true_alpha"], 2.0);
    assert_eq!(report["source"], "pareto_self_test");
    let exponent = report["estimate"]["exponent"].as_f64().unwrap();
    assert!((exponent - 2.0).abs() < 0.15, "exponent {exponent}");
    assert_eq!(report["estimate"]["censored_count"], 0);
}

#[test]
fn trap_tail_tracks_the_exact_curve() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "law": {"dirichlet": {"beta": [0.3, 0.3, 0.3, 0.3]}},
            "seed": 2,
            "trap_tail": {"e0": 0, "grid": [100, 316, 1000], "n_envs": 200000}
        }"#,
    );
    let out = dir.path().join("run");
    let res = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).arg("trap-tail").output().unwrap();
    assert_code(&res, 0);

    let report = read_json(&out.join("trap_tail.json"));
    let predicted = report["predicted_exponent"].as_f64().unwrap();
    assert!((predicted - 1.8).abs() < 1e-12);
    let fitted = report["report"]["estimate"]["exponent"].as_f64().unwrap();
    assert!((1.2..2.4).contains(&fitted), "fitted exponent {fitted}");

    let lines = csv_lines(&out.join("trap_survival.csv"));
    assert_eq!(lines.len(), 4);
    // The exact column is populated for Dirichlet laws.
    assert!(!lines[1].ends_with(','), "{}", lines[1]);
}

#[test]
fn flow_certificates_survive_a_round_trip_and_fail_when_tampered() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "flow": {"xa": [0, 0], "xb": [40, 0], "alpha": [1.0, 1.0, 1.0, 1.0], "radius": 6}
        }"#,
    );
    let built = dir.path().join("built");
    let res = bin().arg("--config").arg(&cfg).arg("--out").arg(&built).arg("flow-build").output().unwrap();
    assert_code(&res, 0);
    let cert = read_json(&built.join("certificate.json"));
    assert_eq!(cert["all_pass"], true);
    assert_eq!(cert["kappa"], 6.0);

    let verified = dir.path().join("verified");
    let res = bin()
        .arg("--config").arg(&cfg)
        .arg("--out").arg(&verified)
        .arg("flow-verify").arg("--flow").arg(built.join("flow.json"))
        .output().unwrap();
    assert_code(&res, 0);
    assert_eq!(read_json(&verified.join("verify.json"))["all_pass"], true);

    // Inflate the largest interior edge: both endpoints keep nonzero
    // divergence afterwards, which the conservation check must catch.
    let mut file = read_json(&built.join("flow.json"));
    let source = file["source"].as_u64().unwrap();
    let sink = file["sink"].as_u64().unwrap();
    let edges = file["edges"].as_array().unwrap();
    let (target, _) = edges
        .iter()
        .enumerate()
        .filter(|(_, e)| {
            let t = e["tail"].as_u64().unwrap();
            let h = e["head"].as_u64().unwrap();
            t != source && t != sink && h != source && h != sink
        })
        .max_by(|a, b| {
            let ta = a.1["theta"].as_f64().unwrap();
            let tb = b.1["theta"].as_f64().unwrap();
            ta.total_cmp(&tb)
        })
        .unwrap();
    let theta = file["edges"][target]["theta"].as_f64().unwrap();
    assert!(theta > 0.0);
    file["edges"][target]["theta"] = serde_json::json!(3.0 * theta);
    let tampered = dir.path().join("tampered.json");
    fs::write(&tampered, serde_json::to_string(&file).unwrap()).unwrap();

    let res = bin()
        .arg("--config").arg(&cfg)
        .arg("--out").arg(dir.path().join("verify2"))
        .arg("flow-verify").arg("--flow").arg(&tampered)
        .output().unwrap();
    assert_code(&res, 4);
    assert!(stderr_of(&res).contains("divergence_support"), "{}", stderr_of(&res));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "law": {"dirichlet": {"beta": [1.0, 1.0, 1.0, 1.0]}},
            "seed": 42,
            "env_sample": {"n_samples": 50000, "csv_rows": 2000}
        }"#,
    );
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let res = bin().arg("--config").arg(&cfg).arg("--out").arg(out).arg("env-sample").output().unwrap();
        assert_code(&res, 0);
    }
    for name in ["samples.csv", "moments.json", "resolved_config.json"] {
        let a = fs::read(out_a.join(name)).unwrap();
        let b = fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn seed_precedence_is_flag_env_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "law": {"dirichlet": {"beta": [1.0, 1.0, 1.0, 1.0]}},
            "seed": 5,
            "env_sample": {"n_samples": 20000, "csv_rows": 100}
        }"#,
    );
    let base = dir.path().join("base");
    let res = bin().arg("--config").arg(&cfg).arg("--out").arg(&base).arg("env-sample").output().unwrap();
    assert_code(&res, 0);
    assert_eq!(read_json(&base.join("resolved_config.json"))["seed"], 5);

    // Environment beats the config file.
    let env_run = dir.path().join("env");
    let res = bin()
        .env("RWRE_SEED", "9")
        .arg("--config").arg(&cfg).arg("--out").arg(&env_run).arg("env-sample")
        .output().unwrap();
    assert_code(&res, 0);
    assert_eq!(read_json(&env_run.join("resolved_config.json"))["seed"], 9);

    // The flag beats the environment and restores the config seed.
    let flag_run = dir.path().join("flag");
    let res = bin()
        .env("RWRE_SEED", "9")
        .arg("--config").arg(&cfg).arg("--seed").arg("5").arg("--out").arg(&flag_run).arg("env-sample")
        .output().unwrap();
    assert_code(&res, 0);
    assert_eq!(read_json(&flag_run.join("resolved_config.json"))["seed"], 5);

    let base_csv = fs::read(base.join("samples.csv")).unwrap();
    let env_csv = fs::read(env_run.join("samples.csv")).unwrap();
    let flag_csv = fs::read(flag_run.join("samples.csv")).unwrap();
    assert_eq!(base_csv, flag_csv, "flag override must reproduce the config seed");
    assert_ne!(base_csv, env_csv, "different seeds must produce different draws");
}

#[test]
fn solver_self_test_agrees_with_the_cut_oracle() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let res = bin()
        .arg("--out").arg(&out)
        .arg("flow-verify").arg("--self-test").arg("1000")
        .output().unwrap();
    assert_code(&res, 0);

    let report = read_json(&out.join("selftest.json"));
    assert_eq!(report["cases"], 1000);
    assert_eq!(report["disagreements"].as_array().unwrap().len(), 0);
    let feasible = report["feasible"].as_u64().unwrap();
    assert!(feasible > 100 && feasible < 900, "feasible = {feasible}");
}

#[test]
fn flow_verify_without_a_mode_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let res = bin().arg("--out").arg(dir.path().join("run")).arg("flow-verify").output().unwrap();
    assert_code(&res, 2);
    assert!(stderr_of(&res).contains("--flow"), "{}", stderr_of(&res));
}

#[test]
fn report_summarizes_hypotheses() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "seed": 4,
            "report": {
                "beta": [1.5, 0.4, 0.2, 0.4],
                "theorem5_epsilon": 0.05,
                "eta": {"alpha": 0.5, "directions": [0], "n_samples": 50000}
            }
        }"#,
    );
    let out = dir.path().join("run");
    let res = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).arg("report").output().unwrap();
    assert_code(&res, 0);

    let report = read_json(&out.join("hypothesis.json"));
    assert!((report["kappa"].as_f64().unwrap() - 3.3).abs() < 1e-12);
    assert_eq!(report["lln"], true);
    assert_eq!(report["annealed_clt"], true);
    assert_eq!(report["quenched_clt"], false);
    // The smallest weight 0.2 is above epsilon, so the perturbative
    // ballisticity region does not apply.
    assert_eq!(report["theorem5"]["in_region"], false);

    // E[omega^-1/2] for the weight-1.5 direction: Gamma(1) Gamma(2.5)
    // over Gamma(1.5) Gamma(2) = 3/2.
    let eta = &report["eta_alpha"];
    let exact = eta["exact"]["finite"].as_f64().unwrap();
    assert!((exact - 1.5).abs() < 1e-9, "exact {exact}");
    let estimate = eta["estimate"].as_f64().unwrap();
    assert!((estimate - 1.5).abs() < 0.2, "estimate {estimate}");
    assert_eq!(eta["diverging"], false);
}
