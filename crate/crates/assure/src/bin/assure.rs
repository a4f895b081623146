//! Command-line surface over the library: estimate, optimize, curve,
//! sweep-costs, simulate, check.
//!
//! Exactly one JSON document goes to stdout; diagnostics and errors go to
//! stderr. Every float is rendered with 17 significant digits so golden
//! files round-trip bit for bit. Failures exit 1 with a single
//! `ERROR <code>: <detail>` line; usage mistakes exit 2 (clap's default).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use assure::classes::{Context, DecisionFamily};
use assure::error::{Error, Result};
use assure::model::{Bandwidth, Dataset, Mode};
use assure::optimize::{
    grid_argmax, implied_cost_sweep, multistart_argmax, welfare_curve, Method,
    OptimizationResult,
};
use assure::sim::{bias_envelope_check, run_scenario, ScenarioSpec};
use assure::specfun;

#[derive(Parser)]
#[command(name = "assure", version, about = "Welfare estimation for compound selection")]
struct Cli {
    /// Worker threads (falls back to ASSURE_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate one welfare estimate at a fixed parameter point.
    Estimate(EstimateArgs),
    /// Search the family's box for the estimated-welfare argmax.
    Optimize(OptimizeArgs),
    /// Sweep one coordinate and tabulate the welfare curve.
    Curve(CurveArgs),
    /// Re-optimize under a list of alternative costs.
    SweepCosts(SweepArgs),
    /// Run a Monte Carlo scenario and score methods against oracles.
    Simulate(SimulateArgs),
    /// Run the bias-envelope and special-function self-tests.
    Check,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodName {
    Assure,
    Cb,
    Poisson,
}

#[derive(Args)]
struct EstimatorOpts {
    /// Which estimator drives the evaluation.
    #[arg(long, value_enum, default_value = "assure")]
    method: MethodName,
    /// Smoothing bandwidth for the smoothed estimator (default 1/sqrt(2 ln n)).
    #[arg(long)]
    h: Option<f64>,
    /// Coupling scale for the coupled bootstrap (default its data-driven rule).
    #[arg(long)]
    eps: Option<f64>,
}

impl EstimatorOpts {
    fn mode(&self) -> Mode {
        match self.method {
            MethodName::Poisson => Mode::Poisson,
            _ => Mode::Gaussian,
        }
    }

    fn build(&self) -> Result<Method> {
        match self.method {
            MethodName::Assure => {
                if self.eps.is_some() {
                    return Err(Error::config("--eps applies to the cb estimator"));
                }
                Ok(Method::Assure { h: self.h.map(Bandwidth::new).transpose()? })
            }
            MethodName::Cb => {
                if self.h.is_some() {
                    return Err(Error::config("--h applies to the assure estimator"));
                }
                Ok(Method::Cb { eps: self.eps })
            }
            MethodName::Poisson => {
                if self.h.is_some() || self.eps.is_some() {
                    return Err(Error::config(
                        "the poisson estimator takes no smoothing parameter",
                    ));
                }
                Ok(Method::Poisson)
            }
        }
    }
}

#[derive(Args)]
struct EstimateArgs {
    /// CSV with columns y, sigma, k and optional covariates x1..xp.
    #[arg(long)]
    data: PathBuf,
    /// Decision-family config JSON.
    #[arg(long)]
    family: PathBuf,
    /// Comma-separated parameter point.
    #[arg(long)]
    beta: String,
    #[command(flatten)]
    opts: EstimatorOpts,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    family: PathBuf,
    /// Grid points per coordinate (families of up to 2 parameters).
    #[arg(long, conflicts_with = "starts")]
    grid: Option<usize>,
    /// Multistart count for wider families.
    #[arg(long)]
    starts: Option<usize>,
    /// Seed for the multistart initial points.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the fitted 0/1 decision per unit as CSV.
    #[arg(long)]
    decisions_out: Option<PathBuf>,
    #[command(flatten)]
    opts: EstimatorOpts,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    family: PathBuf,
    /// Which coordinate to sweep.
    #[arg(long)]
    coordinate: usize,
    #[arg(long, default_value_t = 201)]
    grid: usize,
    /// Values held fixed on the other coordinates (defaults to box midpoints).
    #[arg(long)]
    fixed: Option<String>,
    /// CSV destination; a .json mirror lands next to it.
    #[arg(long)]
    out: PathBuf,
    /// Provenance seed recorded in the JSON (for simulated inputs).
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    opts: EstimatorOpts,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    family: PathBuf,
    /// Comma-separated costs to re-optimize under.
    #[arg(long)]
    costs: String,
    #[command(flatten)]
    opts: EstimatorOpts,
}

#[derive(Args)]
struct SimulateArgs {
    /// ScenarioSpec JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated method ids to compare.
    #[arg(long)]
    methods: String,
    /// Report JSON destination; a .csv of per-rep rows lands next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("ERROR {}: {e}", e.code());
        return ExitCode::from(1);
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR {}: {e}", e.code());
            ExitCode::from(1)
        }
    }
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let requested = match flag {
        Some(t) => Some(t),
        None => match std::env::var("ASSURE_THREADS") {
            Ok(s) => Some(s.parse::<usize>().map_err(|_| {
                Error::config(format!("ASSURE_THREADS must be a thread count, got {s:?}"))
            })?),
            Err(_) => None,
        },
    };
    let Some(t) = requested else { return Ok(()) };
    if t == 0 {
        return Err(Error::config("thread count must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(t)
        .build_global()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Estimate(a) => cmd_estimate(a),
        Cmd::Optimize(a) => cmd_optimize(a),
        Cmd::Curve(a) => cmd_curve(a),
        Cmd::SweepCosts(a) => cmd_sweep(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Check => cmd_check(),
    }
}

fn parse_list(what: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("{what}: {t:?} is not a number")))
        })
        .collect()
}

fn load_family(path: &Path, data: &Dataset) -> Result<DecisionFamily> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let config: Value = serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    DecisionFamily::from_json(&config, data)
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let method = a.opts.build()?;
    let data = Dataset::from_csv_path(&a.data, a.opts.mode())?;
    let family = load_family(&a.family, &data)?;
    let beta = parse_list("--beta", &a.beta)?;
    let est = method.estimate(&data, &family, &beta)?;
    emit(&json!({
        "value": est.value,
        "stderr": est.stderr,
        "n": est.n,
        "h": est.h,
    }));
    Ok(())
}

fn optimization_json(method: Method, r: &OptimizationResult) -> Value {
    let trace: Value = match &r.trace {
        None => Value::Null,
        Some(t) => json!(t),
    };
    json!({
        "method": method.as_str(),
        "beta_hat": r.beta_hat,
        "value": r.value,
        "evaluations": r.evaluations,
        "stalled": r.stalled,
        "trace": trace,
    })
}

fn cmd_optimize(a: OptimizeArgs) -> Result<()> {
    let method = a.opts.build()?;
    let data = Dataset::from_csv_path(&a.data, a.opts.mode())?;
    let family = load_family(&a.family, &data)?;
    let result = match (a.grid, a.starts) {
        (_, Some(s)) => multistart_argmax(&data, &family, method, s, a.seed)?,
        (g, None) => {
            if family.dim() <= 2 {
                grid_argmax(&data, &family, method, g.unwrap_or(201))?
            } else {
                multistart_argmax(&data, &family, method, 8, a.seed)?
            }
        }
    };
    if let Some(path) = &a.decisions_out {
        let mut csv = String::from("unit,decision\n");
        for (i, u) in data.units().iter().enumerate() {
            let d = family.decide(i, &Context::of(u), &result.beta_hat, u.y)?;
            writeln!(csv, "{i},{}", u8::from(d)).expect("write to string");
        }
        std::fs::write(path, csv)?;
    }
    emit(&optimization_json(method, &result));
    Ok(())
}

fn cmd_curve(a: CurveArgs) -> Result<()> {
    let method = a.opts.build()?;
    let data = Dataset::from_csv_path(&a.data, a.opts.mode())?;
    let family = load_family(&a.family, &data)?;
    let fixed = match &a.fixed {
        Some(s) => parse_list("--fixed", s)?,
        None => box_midpoints(&family),
    };
    let curve = welfare_curve(&data, &family, method, a.coordinate, a.grid, &fixed)?;
    std::fs::write(&a.out, curve.to_csv())?;
    let rendered = render(&curve.to_json(a.seed));
    std::fs::write(a.out.with_extension("json"), &rendered)?;
    print!("{rendered}");
    Ok(())
}

/// Default anchor point for curve sweeps: the midpoint of each coordinate's
/// box, geometric on log-scale coordinates.
fn box_midpoints(family: &DecisionFamily) -> Vec<f64> {
    family
        .bounds()
        .iter()
        .zip(family.log_scale())
        .map(|(b, &log)| {
            if log {
                (0.5 * (b[0].ln() + b[1].ln())).exp().clamp(b[0], b[1])
            } else {
                0.5 * (b[0] + b[1])
            }
        })
        .collect()
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let method = a.opts.build()?;
    let data = Dataset::from_csv_path(&a.data, a.opts.mode())?;
    let family = load_family(&a.family, &data)?;
    let costs = parse_list("--costs", &a.costs)?;
    let table = implied_cost_sweep(&data, &family, method, &costs)?;
    let rows: Vec<Value> = table
        .iter()
        .map(|(k, r)| json!({"cost": k, "result": optimization_json(method, r)}))
        .collect();
    emit(&Value::Array(rows));
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.scenario).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", a.scenario.display())))
    })?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("{}: {e}", a.scenario.display())))?;
    let spec = ScenarioSpec::from_json(&value)?;
    let methods: Vec<&str> = a.methods.split(',').map(str::trim).collect();
    let report = run_scenario(&spec, &methods)?;
    let rendered = render(&report.to_json());
    if let Some(out) = &a.out {
        std::fs::write(out, &rendered)?;
        std::fs::write(out.with_extension("csv"), report.per_rep_csv())?;
    }
    print!("{rendered}");
    Ok(())
}

fn cmd_check() -> Result<()> {
    let h_list = [1.0, 0.5, 0.25];
    let mu_grid = [-2.0, -1.0, -0.3, 0.0, 0.3, 1.0, 2.0];
    let delta_grid = [-1.0, 0.0, 1.0];
    let sigma_grid = [0.5, 1.0, 2.0];
    let cells = bias_envelope_check(&h_list, &mu_grid, &delta_grid, &sigma_grid, 0.0)?;
    let bias_failures: Vec<&assure::sim::BiasCell> = cells.iter().filter(|c| !c.pass).collect();

    let (specfun_checks, specfun_failures) = specfun_self_test();

    let pass = bias_failures.is_empty() && specfun_failures.is_empty();
    emit(&json!({
        "bias_envelope": {
            "cells": cells.len(),
            "failures": bias_failures.len(),
            "failing_cells": bias_failures
                .iter()
                .map(|c| json!({"h": c.h, "mu": c.mu, "delta": c.delta, "sigma": c.sigma,
                                 "bias": c.bias, "bound": c.bound}))
                .collect::<Vec<_>>(),
        },
        "specfun": {
            "checks": specfun_checks,
            "failures": specfun_failures.len(),
            "failing_checks": specfun_failures,
        },
        "pass": pass,
    }));
    if !pass {
        return Err(Error::domain(format!(
            "self-test failed: {} bias cells, {} special-function checks",
            bias_failures.len(),
            specfun_failures.len()
        )));
    }
    Ok(())
}

/// Identity- and reference-based checks of the special functions. Reference
/// values carry 16+ correct digits; identity checks run on dense grids.
fn specfun_self_test() -> (usize, Vec<String>) {
    let mut checks = 0usize;
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        checks += 1;
        if !ok {
            failures.push(name.to_string());
        }
    };

    // Reference values of Si(x).
    let si_refs = [
        (1.0, 0.9460830703671830),
        (std::f64::consts::PI, 1.8519370519824662),
        (10.0, 1.6583475942188740),
        (50.0, 1.5516170724859358),
    ];
    for (x, want) in si_refs {
        let got = specfun::sine_integral(x);
        check(&format!("Si({x})"), (got - want).abs() <= 1e-12);
    }

    // Csinc symmetry: Csinc(x) + Csinc(-x) = 1 across the oscillation range.
    let mut sym_ok = true;
    for i in 0..=2000 {
        let x = -100.0 + 0.1 * i as f64;
        let s = specfun::cumulative_sinc(x) + specfun::cumulative_sinc(-x);
        if (s - 1.0).abs() > 1e-14 {
            sym_ok = false;
            break;
        }
    }
    check("Csinc symmetry", sym_ok);

    // Si is odd and sinc(0) carries the 1/pi normalization.
    check("Si odd", {
        let mut ok = true;
        for i in 1..=500 {
            let x = 0.2 * i as f64;
            if (specfun::sine_integral(x) + specfun::sine_integral(-x)).abs() > 1e-15 {
                ok = false;
                break;
            }
        }
        ok
    });
    check("sinc(0)", specfun::sinc(0.0) == 1.0 / std::f64::consts::PI);

    // Normal cdf complement identity and reference values.
    check("Phi complement", {
        let mut ok = true;
        for i in 0..=160 {
            let x = -8.0 + 0.1 * i as f64;
            if (specfun::normal_cdf(x) + specfun::normal_cdf(-x) - 1.0).abs() > 1e-15 {
                ok = false;
                break;
            }
        }
        ok
    });
    check("Phi(1.96)", (specfun::normal_cdf(1.96) - 0.9750021048517795).abs() <= 1e-15);
    check(
        "Phi(-3)",
        (specfun::normal_cdf(-3.0) - 1.3498980316300946e-3).abs() <= 1e-15,
    );

    // Inverse cdf round-trips through the cdf well inside the 1e-9 contract.
    check("inverse cdf roundtrip", {
        let mut ok = true;
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            let x = specfun::inverse_normal_cdf(p);
            if (specfun::normal_cdf(x) - p).abs() > 1e-12 {
                ok = false;
                break;
            }
        }
        ok
    });

    (checks, failures)
}

// ------------------------------------------------------------ JSON rendering

fn emit(v: &Value) {
    print!("{}", render(v));
}

/// Compact JSON with every float printed as `{:.16e}` (17 significant
/// digits, round-trip exact) and integers left plain. Object keys come out
/// in serde_json's sorted order, so renders are deterministic.
fn render(v: &Value) -> String {
    let mut s = String::new();
    render_into(v, &mut s);
    s.push('\n');
    s
}

fn render_into(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                write!(out, "{i}").expect("write to string");
            } else if let Some(u) = n.as_u64() {
                write!(out, "{u}").expect("write to string");
            } else {
                let x = n.as_f64().expect("JSON number fits f64");
                write!(out, "{x:.16e}").expect("write to string");
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string serializes"));
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                render_into(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            for (i, (k, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("string serializes"));
                out.push(':');
                render_into(item, out);
            }
            out.push('}');
        }
    }
}
