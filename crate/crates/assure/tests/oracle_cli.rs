//! Command-line contract: every subcommand is a thin composition of library
//! calls, stdout carries exactly one JSON document rendered with 17
//! significant digits, errors are single machine-parsable stderr lines, and
//! outputs are byte-identical across thread counts.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use assure::classes::DecisionFamily;
use assure::model::{Dataset, Mode};
use assure::optimize::{grid_argmax, implied_cost_sweep, welfare_curve, Method};
use common::si_oracle;
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_assure"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is utf-8")
}

fn stderr_str(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is utf-8")
}

fn parse_stdout(out: &Output) -> Value {
    let s = stdout_str(out);
    serde_json::from_str(&s).unwrap_or_else(|e| panic!("stdout not JSON ({e}): {s}"))
}

/// Raw text of a scalar field in rendered JSON, for checking the exact
/// number format the CLI promises.
fn raw_field(rendered: &str, key: &str) -> String {
    let pat = format!("\"{key}\":");
    let start = rendered.find(&pat).unwrap_or_else(|| panic!("no {key} in {rendered}")) + pat.len();
    let rest = &rendered[start..];
    let end = rest
        .char_indices()
        .find(|(_, c)| *c == ',' || *c == '}')
        .map(|(i, _)| i)
        .expect("field terminator");
    rest[..end].to_string()
}

fn write_gaussian_fixture(dir: &Path) -> (String, String) {
    let data = dir.join("data.csv");
    fs::write(
        &data,
        "y,sigma,k\n1.2,1.0,0.5\n-0.4,0.8,0.0\n2.0,1.5,1.0\n",
    )
    .unwrap();
    let family = dir.join("threshold.json");
    fs::write(&family, serde_json::to_string(&json!({"kind": "threshold"})).unwrap()).unwrap();
    (data.to_str().unwrap().into(), family.to_str().unwrap().into())
}

#[test]
fn estimate_matches_a_hand_loop_and_prints_seventeen_digits() {
    let dir = tempfile::tempdir().unwrap();
    let (data, family) = write_gaussian_fixture(dir.path());
    let out = run(&["estimate", "--data", &data, "--family", &family, "--beta", "0"]);
    assert!(out.status.success(), "stderr: {}", stderr_str(&out));
    let v = parse_stdout(&out);

    // Hand loop of the smoothed summand with the independent sine-integral
    // oracle: w = (y-k) Csinc((y-delta)/(sigma h)) - (sigma/h) sinc(...),
    // where the plain threshold family cuts at delta = k + beta.
    let h = 1.0 / (2.0 * 3.0f64.ln()).sqrt();
    let rows = [(1.2, 1.0, 0.5), (-0.4, 0.8, 0.0), (2.0, 1.5, 1.0)];
    let csinc = |x: f64| 0.5 + si_oracle(x) / std::f64::consts::PI;
    let sinc = |x: f64| {
        if x == 0.0 {
            1.0 / std::f64::consts::PI
        } else {
            x.sin() / (std::f64::consts::PI * x)
        }
    };
    let mut acc = 0.0;
    for (y, sigma, k) in rows {
        let u = (y - k) / (sigma * h);
        acc += (y - k) * csinc(u) - sigma / h * sinc(u);
    }
    let hand = acc / 3.0;

    assert_eq!(v["n"].as_u64(), Some(3));
    assert!((v["h"].as_f64().unwrap() - h).abs() < 1e-15);
    assert!(
        (v["value"].as_f64().unwrap() - hand).abs() < 1e-12,
        "value {} vs hand loop {hand}",
        v["value"]
    );
    assert!(v["stderr"].as_f64().unwrap() > 0.0);

    // 17 significant digits: every float field is exactly the {:.16e}
    // rendering of the f64 it parses back to.
    let text = stdout_str(&out);
    for key in ["value", "stderr", "h"] {
        let raw = raw_field(&text, key);
        let parsed: f64 = raw.parse().unwrap();
        assert_eq!(raw, format!("{parsed:.16e}"), "field {key}");
    }
    assert_eq!(raw_field(&text, "n"), "3");
    assert!(text.ends_with('\n'));
    assert_eq!(stderr_str(&out), "");
}

#[test]
fn estimate_covers_the_other_estimators() {
    let dir = tempfile::tempdir().unwrap();
    let (data, family) = write_gaussian_fixture(dir.path());

    let out = run(&[
        "estimate", "--data", &data, "--family", &family, "--beta", "0.25", "--method", "cb",
        "--eps", "0.5",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_str(&out));
    let v = parse_stdout(&out);
    let ds = Dataset::from_csv_path(Path::new(&data), Mode::Gaussian).unwrap();
    let fam = DecisionFamily::threshold();
    let direct = assure::estimators::cb_estimate(&ds, &fam, &[0.25], Some(0.5)).unwrap();
    assert_eq!(v["value"].as_f64().unwrap(), direct.value);
    assert_eq!(v["h"].as_f64().unwrap(), direct.h);

    let counts = dir.path().join("counts.csv");
    fs::write(&counts, "y,sigma,k\n3,1,1.0\n0,1,0.5\n7,1,2.0\n").unwrap();
    let out = run(&[
        "estimate", "--data", counts.to_str().unwrap(), "--family", &family, "--beta", "1.5",
        "--method", "poisson",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_str(&out));
    let v = parse_stdout(&out);
    let ds = Dataset::from_csv_path(&counts, Mode::Poisson).unwrap();
    let direct = assure::estimators::poisson_assure(&ds, &fam, &[1.5]).unwrap();
    assert_eq!(v["value"].as_f64().unwrap(), direct.value);
    assert_eq!(v["h"].as_f64().unwrap(), 0.0);
}

#[test]
fn domain_errors_are_one_stderr_line_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let (data, family) = write_gaussian_fixture(dir.path());

    // Parameter outside the family's box.
    let out = run(&["estimate", "--data", &data, "--family", &family, "--beta", "0,1"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout_str(&out), "");
    let err = stderr_str(&out);
    assert!(err.starts_with("ERROR precondition: "), "stderr: {err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    // Bad cell in the data file.
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "y,sigma,k\n1.0,-2.0,0.0\n0.5,1.0,0.0\n0.2,1.0,0.0\n").unwrap();
    let out = run(&[
        "estimate", "--data", bad.to_str().unwrap(), "--family", &family, "--beta", "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_str(&out).starts_with("ERROR domain: "), "stderr: {}", stderr_str(&out));

    // Missing file is an io error.
    let out = run(&[
        "estimate", "--data", "no_such_file.csv", "--family", &family, "--beta", "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_str(&out).starts_with("ERROR io: "), "stderr: {}", stderr_str(&out));
}

#[test]
fn usage_errors_exit_2() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["estimate", "--data", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn optimize_reproduces_grid_argmax_and_writes_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let (data, family) = write_gaussian_fixture(dir.path());
    let decisions = dir.path().join("decisions.csv");

    let args = [
        "optimize",
        "--data",
        &data,
        "--family",
        &family,
        "--grid",
        "201",
        "--decisions-out",
        decisions.to_str().unwrap(),
    ];
    let out = run(&args);
    assert!(out.status.success(), "stderr: {}", stderr_str(&out));
    let v = parse_stdout(&out);

    let ds = Dataset::from_csv_path(Path::new(&data), Mode::Gaussian).unwrap();
    let fam = DecisionFamily::threshold();
    let direct = grid_argmax(&ds, &fam, Method::Assure { h: None }, 201).unwrap();
    assert_eq!(v["beta_hat"][0].as_f64().unwrap(), direct.beta_hat[0]);
    assert_eq!(v["value"].as_f64().unwrap(), direct.value);
    assert_eq!(v["evaluations"].as_u64(), Some(201));
    assert_eq!(v["stalled"].as_bool(), Some(false));
    assert_eq!(v["method"].as_str(), Some("assure"));

    // Decision column: 0/1 per unit, matching decide() at beta_hat.
    let text = fs::read_to_string(&decisions).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("unit,decision"));
    let got: Vec<&str> = lines.collect();
    assert_eq!(got.len(), 3);
    for (i, line) in got.iter().enumerate() {
        let ctx = assure::classes::Context::of(&ds.units()[i]);
        let want = fam.decide(i, &ctx, &direct.beta_hat, ds.units()[i].y).unwrap();
        assert_eq!(*line, format!("{i},{}", u8::from(want)));
    }

    // Determinism: the same invocation is byte-identical.
    let again = run(&args);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn optimize_multistart_is_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = String::from("y,sigma,k\n");
    let mut x = 42u64;
    for _ in 0..40 {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let u = (x >> 11) as f64 / (1u64 << 53) as f64;
        rows.push_str(&format!("{},1.0,0.2\n", 2.0 * u - 0.5));
    }
    let data = dir.path().join("panel.csv");
    fs::write(&data, rows).unwrap();
    let family = dir.path().join("close_gauss.json");
    fs::write(&family, serde_json::to_string(&json!({"kind": "close_gauss"})).unwrap()).unwrap();

    let base = [
        "optimize",
        "--data",
        data.to_str().unwrap(),
        "--family",
        family.to_str().unwrap(),
        "--starts",
        "6",
        "--seed",
        "3",
    ];
    let one = bin().args(base).args(["--threads", "1"]).output().unwrap();
    let eight = bin().args(base).args(["--threads", "8"]).output().unwrap();
    assert!(one.status.success(), "stderr: {}", stderr_str(&one));
    assert_eq!(one.stdout, eight.stdout);
    let v = parse_stdout(&one);
    assert_eq!(v["beta_hat"].as_array().unwrap().len(), 4);
    assert!(v["trace"].is_array());
}

#[test]
fn curve_writes_csv_and_json_mirrors() {
    let dir = tempfile::tempdir().unwrap();
    let (data, family) = write_gaussian_fixture(dir.path());
    let out_csv = dir.path().join("curve.csv");

    let out = run(&[
        "curve", "--data", &data, "--family", &family, "--coordinate", "0", "--grid", "21",
        "--out", out_csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_str(&out));

    let ds = Dataset::from_csv_path(Path::new(&data), Mode::Gaussian).unwrap();
    let fam = DecisionFamily::threshold();
    let direct =
        welfare_curve(&ds, &fam, Method::Assure { h: None }, 0, 21, &[0.0]).unwrap();
    assert_eq!(fs::read_to_string(&out_csv).unwrap(), direct.to_csv());

    let sibling = dir.path().join("curve.json");
    let file_json: Value =
        serde_json::from_str(&fs::read_to_string(&sibling).unwrap()).unwrap();
    let stdout_json = parse_stdout(&out);
    assert_eq!(file_json, stdout_json);
    assert_eq!(stdout_json["betas"].as_array().unwrap().len(), 21);
    assert_eq!(
        stdout_json["estimates"][0]["value"].as_f64().unwrap(),
        direct.estimates[0].value
    );
    assert_eq!(stdout_json["seed"], Value::Null);
}

#[test]
fn sweep_costs_reproduces_the_library_table() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = write_gaussian_fixture(dir.path());
    let family = dir.path().join("tstat.json");
    fs::write(&family, serde_json::to_string(&json!({"kind": "tstat"})).unwrap()).unwrap();

    let out = run(&[
        "sweep-costs",
        "--data",
        &data,
        "--family",
        family.to_str().unwrap(),
        "--costs",
        "0,0.5,1",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_str(&out));
    let v = parse_stdout(&out);
    let rows = v.as_array().expect("array of sweep rows");
    assert_eq!(rows.len(), 3);

    let ds = Dataset::from_csv_path(Path::new(&data), Mode::Gaussian).unwrap();
    let fam = DecisionFamily::tstat();
    let direct =
        implied_cost_sweep(&ds, &fam, Method::Assure { h: None }, &[0.0, 0.5, 1.0]).unwrap();
    for (row, (k, res)) in rows.iter().zip(&direct) {
        assert_eq!(row["cost"].as_f64().unwrap(), *k);
        assert_eq!(row["result"]["beta_hat"][0].as_f64().unwrap(), res.beta_hat[0]);
        assert_eq!(row["result"]["value"].as_f64().unwrap(), res.value);
    }
}

fn scenario_file(dir: &Path) -> String {
    let spec = json!({
        "generator": {"kind": "gaussian_prior", "m": 0.4, "s": 1.0},
        "sigma_source": {"kind": "constant", "s": 1.0},
        "cost_source": {"kind": "constant", "k": 0.2},
        "n": 60,
        "reps": 3,
        "seed": 11,
        "mode": "gaussian"
    });
    let path = dir.join("scenario.json");
    fs::write(&path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    path.to_str().unwrap().into()
}

#[test]
fn simulate_writes_report_files_and_is_thread_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_file(dir.path());
    let report_path = dir.path().join("report.json");

    let base = [
        "simulate",
        "--scenario",
        &scenario,
        "--methods",
        "assure:threshold,success_rule",
        "--out",
        report_path.to_str().unwrap(),
    ];
    let one = bin().args(base).args(["--threads", "1"]).output().unwrap();
    assert!(one.status.success(), "stderr: {}", stderr_str(&one));
    let eight = bin().args(base).args(["--threads", "8"]).output().unwrap();
    assert_eq!(one.stdout, eight.stdout);

    // The JSON file holds exactly what stdout carried.
    assert_eq!(fs::read(&report_path).unwrap(), one.stdout);

    let v = parse_stdout(&one);
    assert_eq!(v["n"].as_u64(), Some(60));
    assert_eq!(v["reps"].as_u64(), Some(3));
    assert_eq!(v["mode"].as_str(), Some("gaussian"));
    let methods = v["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 2);
    assert_eq!(methods[0]["method"].as_str(), Some("assure:threshold"));
    assert_eq!(methods[0]["per_rep"].as_array().unwrap().len(), 3);

    // Flat per-rep CSV lands next to the JSON.
    let csv_path = dir.path().join("report.csv");
    let text = fs::read_to_string(&csv_path).unwrap();
    assert!(text.starts_with("method,rep,beta_hat,estimate,oracle_welfare,realized_utility,regret\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 3);

    // Environment fallback for the thread count.
    let env_run = bin().args(base).env("ASSURE_THREADS", "2").output().unwrap();
    assert_eq!(env_run.stdout, one.stdout);

    let bad = bin().args(["simulate", "--scenario", &scenario, "--methods", "warp_drive"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr_str(&bad).starts_with("ERROR config: "), "stderr: {}", stderr_str(&bad));
}

#[test]
fn check_passes_on_a_clean_build() {
    let out = run(&["check"]);
    assert!(out.status.success(), "stderr: {}", stderr_str(&out));
    let v = parse_stdout(&out);
    assert_eq!(v["pass"].as_bool(), Some(true));
    assert_eq!(v["bias_envelope"]["failures"].as_u64(), Some(0));
    assert!(v["bias_envelope"]["cells"].as_u64().unwrap() >= 150);
    assert_eq!(v["specfun"]["failures"].as_u64(), Some(0));
    assert!(v["specfun"]["checks"].as_u64().unwrap() > 0);
}
