//! `lve` — command-line front end for the expansion laboratory.
//!
//! Every subcommand writes exactly one structured document (JSON, or CSV
//! for tabular results) to stdout or `--output`; progress notes go to
//! stderr. Identical invocations with identical seeds produce
//! byte-identical documents regardless of the worker-thread count.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde_json::{json, Value};

use lve::engine::{
    borel_remainder_check, pressure_series, taylor_coefficients, two_point_function, EngineOptions,
};
use lve::interp::{build_covariance, replica_identity_check, QuadratureSpec};
use lve::loopvertex::resolvent_loop_bound_check;
use lve::model::{verify_propagator_bound, ModelKind, ModelSpec, SliceSpec};
use lve::oracle;
use lve::trees::{count_trees_with_degrees, enumerate_trees, tree_by_index, tree_count};

#[derive(Parser)]
#[command(name = "lve", version, about = "Loop vertex expansion laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Model kind: zero-d or lattice
    #[arg(long)]
    model: Option<String>,
    /// Coupling as re,im
    #[arg(long)]
    lambda: Option<String>,
    /// Slicing base M
    #[arg(long = "M")]
    m_base: Option<f64>,
    /// Slice index
    #[arg(long)]
    j: Option<u32>,
    /// Mass
    #[arg(long = "m")]
    mass: Option<f64>,
    /// Embedding dimension
    #[arg(long)]
    dim: Option<usize>,
    /// Per-axis site counts, comma separated
    #[arg(long)]
    sites: Option<String>,
    /// Lattice spacing in units of M^-j
    #[arg(long)]
    spacing: Option<f64>,
    /// Truncation order of the expansion
    #[arg(long)]
    nmax: Option<usize>,
    /// QMC samples per shift
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output format: json or csv
    #[arg(long)]
    format: Option<String>,
    /// Output path (stdout when absent)
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker thread cap (env LVE_THREADS as fallback)
    #[arg(long)]
    threads: Option<usize>,
    /// Flat key=value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Truncated pressure with per-order terms and oracle comparison
    Pressure {
        #[command(flatten)]
        common: Common,
    },
    /// Taylor coefficients of the pressure in the coupling
    Taylor {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kmax: Option<usize>,
    },
    /// Borel-style remainder fit at the configured coupling
    Borel {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rmax: Option<usize>,
    },
    /// Connected two-point function between two lattice sites
    TwoPoint {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        x: Option<usize>,
        #[arg(long)]
        y: Option<usize>,
        /// Monte Carlo samples for the reference value (0 disables)
        #[arg(long)]
        oracle_samples: Option<usize>,
    },
    /// Property verifications with a pass/fail verdict
    Verify {
        #[command(subcommand)]
        what: VerifyCmd,
    },
    /// Reference computation only
    Oracle {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum VerifyCmd {
    /// Sliced-propagator bound sweep over separations
    PropagatorBound {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        c_trial: Option<f64>,
    },
    /// Scaled resolvent-power diagonal over random sigma draws
    LoopBound {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kmax: Option<usize>,
        #[arg(long)]
        sigma_scale: Option<f64>,
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Tree counts and degree histogram
    Trees {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
    },
    /// PSD factorization of random tree covariances
    Covariance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Replica identity for reference integrand families
    Replica {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Flat key=value configuration, merged under the command-line flags.
struct Config(HashMap<String, String>);

impl Config {
    fn load(path: Option<&PathBuf>) -> Result<Self, String> {
        let mut map = HashMap::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| format!("config line {} is not key=value", lineno + 1))?;
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Self(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Option<T> {
        self.0.get(key).and_then(|v| v.parse().ok())
    }
}

/// Fully resolved run parameters (flags over config over defaults).
struct Resolved {
    model: ModelSpec,
    nmax: usize,
    opts: EngineOptions,
    format: String,
    output: Option<PathBuf>,
}

fn parse_lambda(text: &str) -> Result<Complex64, String> {
    let (re, im) = text
        .split_once(',')
        .ok_or_else(|| format!("lambda must be re,im, got {text}"))?;
    Ok(Complex64::new(
        re.trim().parse().map_err(|e| format!("lambda: {e}"))?,
        im.trim().parse().map_err(|e| format!("lambda: {e}"))?,
    ))
}

fn resolve(common: &Common) -> Result<Resolved, String> {
    let cfg = Config::load(common.config.as_ref())?;
    let model_kind = common
        .model
        .clone()
        .or_else(|| cfg.get("model"))
        .unwrap_or_else(|| "zero-d".into());
    let lambda = parse_lambda(
        &common
            .lambda
            .clone()
            .or_else(|| cfg.get("lambda"))
            .unwrap_or_else(|| "0.05,0".into()),
    )?;
    let kind = match model_kind.as_str() {
        "zero-d" | "zero-dim" | "0d" => ModelKind::ZeroDim,
        "lattice" => {
            let sites_text: String = common
                .sites
                .clone()
                .or_else(|| cfg.get("sites"))
                .unwrap_or_else(|| "4,1,1,1".into());
            let sites: Vec<usize> = sites_text
                .split(',')
                .map(|s| s.trim().parse().map_err(|e| format!("sites: {e}")))
                .collect::<Result<_, _>>()?;
            let dim = common.dim.or_else(|| cfg.get("dim")).unwrap_or(sites.len());
            let mut padded = sites;
            padded.resize(dim, 1);
            ModelKind::LatticeSlice(SliceSpec {
                m_base: common.m_base.or_else(|| cfg.get("M")).unwrap_or(2.0),
                j: common.j.or_else(|| cfg.get("j")).unwrap_or(0),
                mass: common.mass.or_else(|| cfg.get("m")).unwrap_or(0.0),
                dim,
                sites: padded,
                spacing: common.spacing.or_else(|| cfg.get("spacing")).unwrap_or(1.0),
            })
        }
        other => return Err(format!("unknown model kind {other}")),
    };
    let model = ModelSpec {
        kind,
        lambda,
        colors: 1,
    };
    model.validate().map_err(|e| e.to_string())?;
    let threads = common
        .threads
        .or_else(|| cfg.get("threads"))
        .or_else(|| std::env::var("LVE_THREADS").ok().and_then(|v| v.parse().ok()));
    init_threads(threads);
    let opts = EngineOptions {
        qmc_points: common.samples.or_else(|| cfg.get("samples")).unwrap_or(4096),
        seed: common.seed.or_else(|| cfg.get("seed")).unwrap_or(0x11c3_55ed),
        ..EngineOptions::default()
    };
    Ok(Resolved {
        model,
        nmax: common.nmax.or_else(|| cfg.get("nmax")).unwrap_or(7),
        opts,
        format: common
            .format
            .clone()
            .or_else(|| cfg.get("format"))
            .unwrap_or_else(|| "json".into()),
        output: common.output.clone(),
    })
}

#[cfg(feature = "parallel")]
fn init_threads(threads: Option<usize>) {
    if let Some(t) = threads {
        // ignore the error if a global pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn init_threads(_threads: Option<usize>) {}

fn complex_json(z: Complex64) -> Value {
    json!({ "re": z.re, "im": z.im })
}

fn model_json(model: &ModelSpec) -> Value {
    match &model.kind {
        ModelKind::ZeroDim => json!({
            "kind": "zero-d",
            "lambda": complex_json(model.lambda),
        }),
        ModelKind::LatticeSlice(s) => json!({
            "kind": "lattice",
            "lambda": complex_json(model.lambda),
            "M": s.m_base,
            "j": s.j,
            "m": s.mass,
            "dim": s.dim,
            "sites": s.sites,
            "spacing": s.spacing,
        }),
    }
}

fn emit(resolved: &Resolved, doc: &Value, csv: Option<String>) -> Result<(), String> {
    let text = match resolved.format.as_str() {
        "json" => serde_json::to_string_pretty(doc).map_err(|e| e.to_string())? + "\n",
        "csv" => csv.ok_or_else(|| "this subcommand has no CSV form".to_string())?,
        other => return Err(format!("unknown format {other}")),
    };
    match &resolved.output {
        Some(path) => std::fs::write(path, text).map_err(|e| e.to_string())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cmd: Cmd) -> Result<ExitCode, String> {
    match cmd {
        Cmd::Pressure { common } => cmd_pressure(&common),
        Cmd::Taylor { common, kmax } => cmd_taylor(&common, kmax),
        Cmd::Borel { common, rmax } => cmd_borel(&common, rmax),
        Cmd::TwoPoint {
            common,
            x,
            y,
            oracle_samples,
        } => cmd_two_point(&common, x, y, oracle_samples),
        Cmd::Oracle { common } => cmd_oracle(&common),
        Cmd::Verify { what } => match what {
            VerifyCmd::PropagatorBound { common, c_trial } => {
                cmd_verify_propagator(&common, c_trial)
            }
            VerifyCmd::LoopBound {
                common,
                kmax,
                sigma_scale,
                draws,
            } => cmd_verify_loop(&common, kmax, sigma_scale, draws),
            VerifyCmd::Trees { common, n } => cmd_verify_trees(&common, n),
            VerifyCmd::Covariance { common, n, draws } => cmd_verify_covariance(&common, n, draws),
            VerifyCmd::Replica { common, n } => cmd_verify_replica(&common, n),
        },
    }
}

fn verdict(resolved: &Resolved, doc: Value, csv: Option<String>) -> Result<ExitCode, String> {
    let pass = doc
        .get("pass")
        .and_then(Value::as_bool)
        .unwrap_or(true);
    emit(resolved, &doc, csv)?;
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_pressure(common: &Common) -> Result<ExitCode, String> {
    let resolved = resolve(common)?;
    eprintln!("pressure: expanding to order {}", resolved.nmax);
    let series =
        pressure_series(&resolved.model, resolved.nmax, &resolved.opts).map_err(|e| e.to_string())?;
    let reference = match &resolved.model.kind {
        ModelKind::ZeroDim => Some(
            oracle::quadrature_log_z_scalar(resolved.model.lambda).map_err(|e| e.to_string())?,
        ),
        ModelKind::LatticeSlice(s) if s.total_sites() <= 16 => Some(
            oracle::lattice_log_z(s, resolved.model.lambda, 200_000, resolved.opts.seed)
                .map_err(|e| e.to_string())?,
        ),
        _ => None,
    };
    let per_n: Vec<Value> = series
        .terms
        .iter()
        .map(|t| json!({ "n": t.n, "value": complex_json(t.value), "error": t.error }))
        .collect();
    let mut doc = json!({
        "subcommand": "pressure",
        "model": model_json(&resolved.model),
        "nmax": resolved.nmax,
        "seed": resolved.opts.seed,
        "samples": resolved.opts.qmc_points,
        "logZ": complex_json(series.total),
        "per_n_terms": per_n,
        "ratios": series.ratios,
        "tail_estimate": series.tail_estimate,
        "integration_error": series.integration_error,
    });
    if let Some(r) = reference {
        let diff = (series.total - r.value).norm();
        doc["oracle_logZ"] = complex_json(r.value);
        doc["oracle_error"] = json!(r.error);
        doc["oracle_method"] = json!(r.method);
        doc["abs_diff"] = json!(diff);
    }
    let mut csv = String::from("n,value_re,value_im,error\n");
    for t in &series.terms {
        let _ = writeln!(csv, "{},{:e},{:e},{:e}", t.n, t.value.re, t.value.im, t.error);
    }
    emit(&resolved, &doc, Some(csv))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_taylor(common: &Common, kmax: Option<usize>) -> Result<ExitCode, String> {
    let resolved = resolve(common)?;
    let cfg = Config::load(common.config.as_ref())?;
    let kmax = kmax.or_else(|| cfg.get("kmax")).unwrap_or(3);
    eprintln!("taylor: extrapolating {kmax} coefficients");
    let report =
        taylor_coefficients(&resolved.model, kmax, &resolved.opts).map_err(|e| e.to_string())?;
    let mut doc = json!({
        "subcommand": "taylor",
        "model": model_json(&resolved.model),
        "kmax": kmax,
        "seed": resolved.opts.seed,
        "coefficients": report.coefficients,
        "errors": report.errors,
    });
    if matches!(resolved.model.kind, ModelKind::ZeroDim) {
        let exact = oracle::wick_log_coefficients(kmax);
        let diffs: Vec<f64> = report
            .coefficients
            .iter()
            .zip(exact.iter())
            .map(|(a, b)| (a - b).abs())
            .collect();
        doc["oracle_coefficients"] = json!(exact);
        doc["abs_diff"] = json!(diffs);
    }
    let mut csv = String::from("k,coefficient,error\n");
    for k in 0..report.coefficients.len() {
        let _ = writeln!(csv, "{},{:e},{:e}", k, report.coefficients[k], report.errors[k]);
    }
    emit(&resolved, &doc, Some(csv))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_borel(common: &Common, rmax: Option<usize>) -> Result<ExitCode, String> {
    let resolved = resolve(common)?;
    let cfg = Config::load(common.config.as_ref())?;
    let is_lattice = !matches!(resolved.model.kind, ModelKind::ZeroDim);
    let rmax = rmax
        .or_else(|| cfg.get("rmax"))
        .unwrap_or(if is_lattice { 3 } else { 6 });
    let coefficients = if is_lattice {
        let k = rmax.min(3).max(1);
        let mut c = taylor_coefficients(&resolved.model, k, &resolved.opts)
            .map_err(|e| e.to_string())?
            .coefficients;
        c.resize(rmax + 1, 0.0);
        c
    } else {
        oracle::wick_log_coefficients(rmax)
    };
    eprintln!("borel: remainders to r = {rmax}");
    let report = borel_remainder_check(
        &resolved.model,
        &coefficients,
        rmax,
        resolved.nmax,
        &resolved.opts,
    )
    .map_err(|e| e.to_string())?;
    let remainders: Vec<Value> = report
        .remainders
        .iter()
        .map(|(r, v)| json!({ "r": r, "abs_remainder": v }))
        .collect();
    let doc = json!({
        "subcommand": "borel",
        "model": model_json(&resolved.model),
        "rmax": rmax,
        "nmax": resolved.nmax,
        "seed": resolved.opts.seed,
        "coefficients": coefficients,
        "pressure": complex_json(report.pressure),
        "integration_error": report.integration_error,
        "remainders": remainders,
        "amplitude": report.amplitude,
        "rho": report.rho,
    });
    let mut csv = String::from("r,abs_remainder\n");
    for (r, v) in &report.remainders {
        let _ = writeln!(csv, "{},{:e}", r, v);
    }
    emit(&resolved, &doc, Some(csv))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_two_point(
    common: &Common,
    x: Option<usize>,
    y: Option<usize>,
    oracle_samples: Option<usize>,
) -> Result<ExitCode, String> {
    let resolved = resolve(common)?;
    let cfg = Config::load(common.config.as_ref())?;
    let x = x.or_else(|| cfg.get("x")).unwrap_or(0);
    let y = y.or_else(|| cfg.get("y")).unwrap_or(0);
    let oracle_samples = oracle_samples
        .or_else(|| cfg.get("oracle-samples"))
        .unwrap_or(200_000);
    let nmax = common.nmax.or_else(|| cfg.get("nmax")).unwrap_or(2);
    eprintln!("two-point: sites {x} and {y}, internal order {nmax}");
    let tp = two_point_function(&resolved.model, x, y, nmax, &resolved.opts)
        .map_err(|e| e.to_string())?;
    let orders: Vec<Value> = tp
        .orders
        .iter()
        .map(|t| json!({ "n": t.n, "value": complex_json(t.value), "error": t.error }))
        .collect();
    let mut doc = json!({
        "subcommand": "two-point",
        "model": model_json(&resolved.model),
        "x": x,
        "y": y,
        "nmax": nmax,
        "seed": resolved.opts.seed,
        "value": complex_json(tp.value),
        "error": tp.error,
        "orders": orders,
    });
    if oracle_samples > 0 {
        if let ModelKind::LatticeSlice(s) = &resolved.model.kind {
            if s.total_sites() <= 16 {
                let r = oracle::connected_two_point(
                    s,
                    resolved.model.lambda,
                    x,
                    y,
                    oracle_samples,
                    resolved.opts.seed,
                )
                .map_err(|e| e.to_string())?;
                doc["oracle_value"] = complex_json(r.value);
                doc["oracle_error"] = json!(r.error);
                doc["abs_diff"] = json!((tp.value - r.value).norm());
            }
        }
    }
    let mut csv = String::from("n,value_re,value_im,error\n");
    for t in &tp.orders {
        let _ = writeln!(csv, "{},{:e},{:e},{:e}", t.n, t.value.re, t.value.im, t.error);
    }
    emit(&resolved, &doc, Some(csv))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle(common: &Common) -> Result<ExitCode, String> {
    let resolved = resolve(common)?;
    let r = match &resolved.model.kind {
        ModelKind::ZeroDim => {
            oracle::quadrature_log_z_scalar(resolved.model.lambda).map_err(|e| e.to_string())?
        }
        ModelKind::LatticeSlice(s) => oracle::lattice_log_z(
            s,
            resolved.model.lambda,
            resolved.opts.qmc_points.max(100_000),
            resolved.opts.seed,
        )
        .map_err(|e| e.to_string())?,
    };
    let doc = json!({
        "subcommand": "oracle",
        "model": model_json(&resolved.model),
        "seed": resolved.opts.seed,
        "logZ": complex_json(r.value),
        "error": r.error,
        "method": r.method,
    });
    emit(&resolved, &doc, None)?;
    Ok(ExitCode::SUCCESS)
}

fn require_slice(model: &ModelSpec) -> Result<&SliceSpec, String> {
    model
        .slice()
        .ok_or_else(|| "this verification needs --model lattice".to_string())
}

fn cmd_verify_propagator(common: &Common, c_trial: Option<f64>) -> Result<ExitCode, String> {
    let resolved = resolve(common)?;
    let cfg = Config::load(common.config.as_ref())?;
    let c_trial = c_trial.or_else(|| cfg.get("c-trial")).unwrap_or(0.25);
    let slice = require_slice(&resolved.model)?;
    let report = verify_propagator_bound(slice, c_trial).map_err(|e| e.to_string())?;
    let doc = json!({
        "subcommand": "verify propagator-bound",
        "model": model_json(&resolved.model),
        "c_trial": c_trial,
        "sup_ratio": report.sup_ratio,
        "argmax_separation": report.argmax_separation,
        "failure_separation": report.failure_separation,
        "pass": report.certified,
    });
    let csv = format!(
        "c_trial,sup_ratio,argmax_separation,pass\n{:e},{:e},{:e},{}\n",
        c_trial, report.sup_ratio, report.argmax_separation, report.certified
    );
    verdict(&resolved, doc, Some(csv))
}

fn cmd_verify_loop(
    common: &Common,
    kmax: Option<usize>,
    sigma_scale: Option<f64>,
    draws: Option<usize>,
) -> Result<ExitCode, String> {
    let resolved = resolve(common)?;
    let cfg = Config::load(common.config.as_ref())?;
    let kmax = kmax.or_else(|| cfg.get("kmax")).unwrap_or(4);
    let scale = sigma_scale.or_else(|| cfg.get("sigma-scale")).unwrap_or(1.0);
    let draws = draws.or_else(|| cfg.get("draws")).unwrap_or(32);
    let slice = require_slice(&resolved.model)?;
    let n = slice.total_sites();
    let std = scale / slice.cell_measure().sqrt();
    let sigmas: Vec<Vec<f64>> = (0..draws)
        .map(|i| {
            use rand::Rng;
            let mut rng = lve::quad::counter_rng(resolved.opts.seed, i as u64);
            (0..n)
                .map(|_| std * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect()
        })
        .collect();
    let report = resolvent_loop_bound_check(slice, kmax, &sigmas).map_err(|e| e.to_string())?;
    let pass = report.scaled_sup.iter().all(|s| s.is_finite() && *s > 0.0);
    let doc = json!({
        "subcommand": "verify loop-bound",
        "model": model_json(&resolved.model),
        "kmax": kmax,
        "sigma_scale": scale,
        "draws": draws,
        "seed": resolved.opts.seed,
        "scaled_sup": report.scaled_sup,
        "k_hat": report.k_hat,
        "pass": pass,
    });
    let mut csv = String::from("k,scaled_sup,k_hat\n");
    for (i, (s, kh)) in report.scaled_sup.iter().zip(report.k_hat.iter()).enumerate() {
        let _ = writeln!(csv, "{},{:e},{:e}", i + 1, s, kh);
    }
    verdict(&resolved, doc, Some(csv))
}

fn cmd_verify_trees(common: &Common, n: Option<usize>) -> Result<ExitCode, String> {
    let resolved = resolve(common)?;
    let cfg = Config::load(common.config.as_ref())?;
    let n = n.or_else(|| cfg.get("n")).unwrap_or(6);
    let expected = tree_count(n);
    let mut count = 0usize;
    let mut histogram: HashMap<Vec<usize>, usize> = HashMap::new();
    for tree in enumerate_trees(n).map_err(|e| e.to_string())? {
        count += 1;
        if n <= 7 {
            *histogram.entry(tree.degrees()).or_insert(0) += 1;
        }
    }
    let mut histogram_ok = true;
    if n <= 7 && n >= 2 {
        for (degrees, &got) in &histogram {
            let want = count_trees_with_degrees(n, degrees).map_err(|e| e.to_string())?;
            if got as u128 != want {
                histogram_ok = false;
            }
        }
    }
    let pass = count == expected && histogram_ok;
    let doc = json!({
        "subcommand": "verify trees",
        "n": n,
        "count": count,
        "expected": expected,
        "degree_histogram_exact": histogram_ok,
        "pass": pass,
    });
    verdict(&resolved, doc, None)
}

fn cmd_verify_covariance(
    common: &Common,
    n: Option<usize>,
    draws: Option<usize>,
) -> Result<ExitCode, String> {
    let resolved = resolve(common)?;
    let cfg = Config::load(common.config.as_ref())?;
    let n_cap = n.or_else(|| cfg.get("n")).unwrap_or(8);
    let draws = draws.or_else(|| cfg.get("draws")).unwrap_or(100_000);
    use rand::Rng;
    let mut failures = 0usize;
    let mut rng = lve::quad::counter_rng(resolved.opts.seed, 0);
    for _ in 0..draws {
        let n = rng.gen_range(2..=n_cap.max(2));
        let idx = rng.gen_range(0..tree_count(n));
        let tree = tree_by_index(n, idx);
        let w: Vec<f64> = (0..n - 1).map(|_| rng.gen::<f64>()).collect();
        if build_covariance(&tree, &w).is_err() {
            failures += 1;
        }
    }
    let doc = json!({
        "subcommand": "verify covariance",
        "n_cap": n_cap,
        "draws": draws,
        "seed": resolved.opts.seed,
        "failures": failures,
        "pass": failures == 0,
    });
    verdict(&resolved, doc, None)
}

fn cmd_verify_replica(common: &Common, n: Option<usize>) -> Result<ExitCode, String> {
    let resolved = resolve(common)?;
    let cfg = Config::load(common.config.as_ref())?;
    let n = n.or_else(|| cfg.get("n")).unwrap_or(3);
    let quad = QuadratureSpec::tensor(20);
    let families: Vec<(&str, Box<dyn Fn(&[f64]) -> Complex64 + Sync + Send>)> = vec![
        (
            "product",
            Box::new(|s: &[f64]| Complex64::new(s.iter().product(), 0.0)),
        ),
        (
            "characteristic",
            Box::new(|s: &[f64]| Complex64::new(0.0, s.iter().sum()).exp()),
        ),
        (
            "rational",
            Box::new(|s: &[f64]| {
                Complex64::new(s.iter().map(|x| 1.0 / (1.0 + x * x)).product(), 0.0)
            }),
        ),
    ];
    let mut rows = Vec::new();
    let mut pass = true;
    for (name, f) in &families {
        let rep = replica_identity_check(f.as_ref(), n, &quad).map_err(|e| e.to_string())?;
        let ok = rep.deviation <= rep.combined_error.max(1e-9);
        pass &= ok;
        rows.push(json!({
            "family": name,
            "single": complex_json(rep.single.value),
            "replicated": complex_json(rep.replicated.value),
            "deviation": rep.deviation,
            "combined_error": rep.combined_error,
            "ok": ok,
        }));
    }
    let doc = json!({
        "subcommand": "verify replica",
        "n": n,
        "families": rows,
        "pass": pass,
    });
    verdict(&resolved, doc, None)
}
