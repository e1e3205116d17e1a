//! Command-line front end.
//!
//! Every option can also come from a flat JSON object passed with
//! `--config`; flags given on the command line win. Each command writes its
//! outputs atomically plus `<out>.manifest.json`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dgp::{self, DgpConfig, McEstimator, McOptions};
use crate::diagnostics::{self, Counterfactual, CurveMode};
use crate::error::{Error, Result};
use crate::estimators::{sgls_fit, sls_fit, sml_fit, EstimateReport, FitOptions};
use crate::gaussian::ml_fit;
use crate::io;
use crate::ot::{self, DualNormalization, ProductionTech};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "OTSIEVE_THREADS";

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateArgs {
    /// Named design (gaussian, gumbel-gamma, gumbel-joint, mixture, sweep-gaussian, ...).
    #[arg(long)]
    preset: Option<String>,
    /// Full design as JSON; overrides --preset.
    #[arg(long)]
    dgp: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noiseless equilibrium in the same CSV layout.
    #[arg(long)]
    equilibrium_out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveOtArgs {
    /// Matched-sample CSV; its x rows are the workers and its y rows the jobs.
    #[arg(long)]
    input: Option<PathBuf>,
    /// alpha_CC,alpha_MM,beta_C,beta_M
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    tech: Option<Vec<f64>>,
    /// zero-mean or anchor:<worker index>
    #[arg(long)]
    normalization: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// sml, sls, sgls, ml or ml*
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    degree_c: Option<usize>,
    #[arg(long)]
    degree_m: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    convexity: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    no_se: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fitted sieve coefficients as CSV.
    #[arg(long)]
    sieve_out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct McArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    dgp: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of ML,ML*,SML,SLS,SGLS.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    convexity: Option<bool>,
    /// Keep per-replication standard errors.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    se: Option<bool>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-replication estimates (long CSV).
    #[arg(long)]
    reps_out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagnoseArgs {
    /// mardia, summary, rank-transform or polarization
    #[arg(skip)]
    #[serde(skip)]
    what: String,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Later-period sample (polarization only).
    #[arg(long)]
    input_t1: Option<PathBuf>,
    /// Rank-Gaussianise before the Mardia test.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    transform: Option<bool>,
    /// log or level
    #[arg(long)]
    curve_mode: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    dgp: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// lo,hi,steps for both complementarities.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecomposeArgs {
    #[arg(long)]
    sample_t0: Option<PathBuf>,
    #[arg(long)]
    sample_t1: Option<PathBuf>,
    /// Estimate reports (JSON from `estimate`).
    #[arg(long)]
    report_t0: Option<PathBuf>,
    #[arg(long)]
    report_t1: Option<PathBuf>,
    /// level (default) or log
    #[arg(long)]
    curve_mode: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

// clap needs the positional for `diagnose`; keep it out of the serde view.
#[derive(Args, Debug)]
struct DiagnoseCli {
    what: String,
    #[command(flatten)]
    rest: DiagnoseArgs,
}

fn required<T: Clone>(v: &Option<T>, name: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| Error::Config(format!("missing required option --{}", name.replace('_', "-"))))
}

fn merge<T: Serialize + DeserializeOwned>(cli: &T, config: Option<&Value>) -> Result<T> {
    let mut v = serde_json::to_value(cli)?;
    if let Some(cfg) = config {
        let Value::Object(cfg) = cfg else {
            return Err(Error::Config("config file must hold a JSON object".into()));
        };
        let obj = v.as_object_mut().expect("args serialize to an object");
        for (k, val) in cfg {
            match obj.get(k) {
                Some(Value::Null) => {
                    obj.insert(k.clone(), val.clone());
                }
                Some(_) => {}
                None => return Err(Error::Config(format!("unknown config key '{k}'"))),
            }
        }
    }
    serde_json::from_value(v).map_err(|e| Error::Config(format!("config: {e}")))
}

fn default_threads(flag: Option<usize>) -> Result<usize> {
    if let Some(t) = flag {
        return Ok(t);
    }
    match std::env::var(THREADS_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a nonnegative integer, got '{s}'"))),
        Err(_) => Ok(0),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    config: Value,
    outputs: Vec<String>,
    wall_time_secs: f64,
}

fn write_manifest(
    out: &Path,
    command: &str,
    seed: Option<u64>,
    config: Value,
    outputs: &[&Path],
    started: Instant,
) -> Result<()> {
    let mut p = out.as_os_str().to_owned();
    p.push(".manifest.json");
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    io::write_json(PathBuf::from(p), &m)
}

fn load_dgp(preset: &Option<String>, dgp_path: &Option<PathBuf>, default_preset: &str, n: usize, seed: u64) -> Result<DgpConfig> {
    match dgp_path {
        Some(p) => {
            let mut cfg: DgpConfig = io::read_json(p)?;
            cfg.seed = seed;
            cfg.n = n;
            cfg.validate()?;
            Ok(cfg)
        }
        None => DgpConfig::preset(preset.as_deref().unwrap_or(default_preset), n, seed),
    }
}

fn cmd_simulate(a: SimulateArgs, started: Instant) -> Result<()> {
    let seed = required(&a.seed, "seed")?;
    let out = required(&a.out, "out")?;
    let n = a.n.unwrap_or(1000);
    let cfg = load_dgp(&a.preset, &a.dgp, "gaussian", n, seed)?;
    let (eq, sample) = dgp::draw_sample(&cfg)?;
    io::atomic_write(&out, |w| io::write_matched_csv(&sample, w))?;
    let mut outputs = vec![out.as_path()];
    if let Some(eq_out) = &a.equilibrium_out {
        let clean = crate::sample::MatchedSample::new(eq.w_star.clone(), eq.x.clone(), eq.y_star.clone())?;
        io::atomic_write(eq_out, |w| io::write_matched_csv(&clean, w))?;
        outputs.push(eq_out.as_path());
    }
    let config = json!({ "args": serde_json::to_value(&a)?, "dgp": cfg });
    write_manifest(&out, "simulate", Some(seed), config, &outputs, started)
}

fn parse_normalization(s: &str) -> Result<DualNormalization> {
    if s == "zero-mean" || s == "zero_mean" {
        return Ok(DualNormalization::ZeroMean);
    }
    if let Some(idx) = s.strip_prefix("anchor:") {
        let i = idx
            .parse()
            .map_err(|_| Error::Config(format!("bad anchor index '{idx}'")))?;
        return Ok(DualNormalization::AnchorAtIndex(i));
    }
    Err(Error::Config(format!("unknown normalization '{s}'")))
}

fn tech_from(v: &[f64]) -> Result<ProductionTech> {
    if v.len() != 4 {
        return Err(Error::Config(format!(
            "--tech needs alpha_CC,alpha_MM,beta_C,beta_M (4 values), got {}",
            v.len()
        )));
    }
    ProductionTech::diagonal(v[0], v[1], v[2], v[3])
}

fn cmd_solve_ot(a: SolveOtArgs, started: Instant) -> Result<()> {
    let input = required(&a.input, "input")?;
    let out = required(&a.out, "out")?;
    let tech = tech_from(&required(&a.tech, "tech")?)?;
    let norm = parse_normalization(a.normalization.as_deref().unwrap_or("zero-mean"))?;
    let sample = io::parse_matched_csv(&input)?;
    let s = ot::build_surplus_matrix(&sample.x, &sample.y, &tech)?;
    let coupling = ot::solve_assignment(&s)?.normalized(norm)?;
    io::atomic_write(&out, |w| coupling.write_csv(w))?;
    let check = coupling.check(&s);
    let config = json!({
        "args": serde_json::to_value(&a)?,
        "total_surplus": coupling.total_surplus,
        "duality_gap": check.duality_gap,
        "max_stability_violation": check.max_stability_violation,
    });
    write_manifest(&out, "solve-ot", None, config, &[out.as_path()], started)
}

fn cmd_estimate(a: EstimateArgs, started: Instant) -> Result<()> {
    let input = required(&a.input, "input")?;
    let out = required(&a.out, "out")?;
    let sample = io::parse_matched_csv(&input)?;
    let est = McEstimator::parse(a.estimator.as_deref().unwrap_or("sgls"))?;
    let k = a.degree.unwrap_or(3);
    let opts = FitOptions {
        k_c: a.degree_c.unwrap_or(k),
        k_m: a.degree_m.unwrap_or(k),
        convexity: a.convexity.unwrap_or(false),
        compute_se: !a.no_se.unwrap_or(false),
        ..FitOptions::default()
    };
    let mut outputs = vec![out.as_path()];
    let report: Option<EstimateReport> = match est {
        McEstimator::Ml | McEstimator::MlStar => {
            let fit = ml_fit(&sample, est == McEstimator::MlStar)?;
            io::write_json(&out, &fit)?;
            None
        }
        McEstimator::Sml => Some(sml_fit(&sample, &opts)?),
        McEstimator::Sls => Some(sls_fit(&sample, &opts)?),
        McEstimator::Sgls => Some(sgls_fit(&sample, &opts)?),
    };
    if let Some(r) = &report {
        io::write_json(&out, r)?;
        if let Some(p) = &a.sieve_out {
            io::atomic_write(p, |w| r.sieve.write_csv(w))?;
            outputs.push(p.as_path());
        }
    }
    let config = json!({ "args": serde_json::to_value(&a)?, "fit_options": opts });
    write_manifest(&out, "estimate", None, config, &outputs, started)
}

fn cmd_mc(a: McArgs, started: Instant) -> Result<()> {
    let seed = required(&a.seed, "seed")?;
    let out = required(&a.out, "out")?;
    let n = a.n.unwrap_or(500);
    let cfg = load_dgp(&a.preset, &a.dgp, "gaussian", n, seed)?;
    let estimators = match &a.estimators {
        Some(list) => list.iter().map(|s| McEstimator::parse(s)).collect::<Result<Vec<_>>>()?,
        None => McEstimator::ALL.to_vec(),
    };
    let mut opts = McOptions::new(a.reps.unwrap_or(50));
    opts.estimators = estimators;
    opts.threads = default_threads(a.threads)?;
    let k = a.degree.unwrap_or(3);
    opts.fit.k_c = k;
    opts.fit.k_m = k;
    opts.fit.convexity = a.convexity.unwrap_or(false);
    opts.fit.compute_se = a.se.unwrap_or(false);
    let result = dgp::run_monte_carlo(&cfg, &opts)?;
    io::atomic_write(&out, |w| result.write_csv(w))?;
    let mut outputs = vec![out.as_path()];
    if let Some(p) = &a.reps_out {
        io::atomic_write(p, |w| result.write_replications_csv(w))?;
        outputs.push(p.as_path());
    }
    let mut echo = serde_json::to_value(&a)?;
    // the thread count does not affect results; keep it out of the manifest
    echo["threads"] = Value::Null;
    let config = json!({ "args": echo, "dgp": cfg, "fit_options": opts.fit, "summaries": result.summaries });
    write_manifest(&out, "mc", Some(seed), config, &outputs, started)
}

fn cmd_diagnose(a: DiagnoseArgs, started: Instant) -> Result<()> {
    let out = required(&a.out, "out")?;
    let input = required(&a.input, "input")?;
    let sample = io::parse_matched_csv(&input)?;
    let mut extra = Value::Null;
    match a.what.as_str() {
        "mardia" => {
            let s = if a.transform.unwrap_or(false) {
                diagnostics::gaussianize_sample(&sample)?
            } else {
                sample
            };
            let rx = diagnostics::mardia_test(&s.x)?;
            let ry = diagnostics::mardia_test(&s.y)?;
            io::atomic_write(&out, |w| {
                let mut wtr = csv::Writer::from_writer(w);
                wtr.write_record(["variable", "statistic", "value", "p_value"])?;
                for (label, r) in [("x", &rx), ("y", &ry)] {
                    wtr.write_record([label, "skewness", &r.skew_stat.to_string(), &format!("{:.4}", r.skew_p)])?;
                    wtr.write_record([label, "kurtosis", &r.kurt_stat.to_string(), &format!("{:.4}", r.kurt_p)])?;
                }
                wtr.flush()?;
                Ok(())
            })?;
            extra = json!({ "x": rx, "y": ry });
        }
        "summary" => {
            let t = diagnostics::summary_stats(&sample);
            io::atomic_write(&out, |w| t.write_csv(w))?;
        }
        "rank-transform" => {
            let s = diagnostics::gaussianize_sample(&sample)?;
            io::atomic_write(&out, |w| io::write_matched_csv(&s, w))?;
        }
        "polarization" => {
            let t1 = io::parse_matched_csv(required(&a.input_t1, "input_t1")?)?;
            let mode = CurveMode::parse(a.curve_mode.as_deref().unwrap_or("log"))?;
            let c = diagnostics::polarization_curve(&sample.wage, &t1.wage, mode)?;
            io::atomic_write(&out, |w| diagnostics::write_curves_csv(&[c], w))?;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown diagnostic '{other}' (mardia, summary, rank-transform, polarization)"
            )))
        }
    }
    let mut echo = serde_json::to_value(&a)?;
    echo["what"] = Value::String(a.what.clone());
    let config = json!({ "args": echo, "result": extra });
    write_manifest(&out, "diagnose", None, config, &[out.as_path()], started)
}

fn cmd_sweep(a: SweepArgs, started: Instant) -> Result<()> {
    let seed = required(&a.seed, "seed")?;
    let out = required(&a.out, "out")?;
    let n = a.n.unwrap_or(1000);
    let cfg = load_dgp(&a.preset, &a.dgp, "sweep-gaussian", n, seed)?;
    let g = a.grid.clone().unwrap_or_else(|| vec![0.25, 2.0, 7.0]);
    if g.len() != 3 || g[2] < 0.0 || g[2].fract() != 0.0 {
        return Err(Error::Config("--grid needs lo,hi,steps with integer steps".into()));
    }
    let grid = dgp::sweep_grid(g[0], g[1], g[2] as usize);
    let rows = dgp::technology_sweep(&cfg, &grid, default_threads(a.threads)?)?;
    io::atomic_write(&out, |w| dgp::write_sweep_csv(&rows, w))?;
    let mut echo = serde_json::to_value(&a)?;
    echo["threads"] = Value::Null;
    let config = json!({ "args": echo, "dgp": cfg });
    write_manifest(&out, "sweep", Some(seed), config, &[out.as_path()], started)
}

fn cmd_decompose(a: DecomposeArgs, started: Instant) -> Result<()> {
    let out = required(&a.out, "out")?;
    let s0 = io::parse_matched_csv(required(&a.sample_t0, "sample_t0")?)?;
    let s1 = io::parse_matched_csv(required(&a.sample_t1, "sample_t1")?)?;
    let r0: EstimateReport = io::read_json(required(&a.report_t0, "report_t0")?)?;
    let r1: EstimateReport = io::read_json(required(&a.report_t1, "report_t1")?)?;
    let mode = CurveMode::parse(a.curve_mode.as_deref().unwrap_or("level"))?;
    let mut curves = vec![diagnostics::polarization_curve(&s0.wage, &s1.wage, mode)?];
    curves.push(diagnostics::model_curve(&r0, &r1, &s0, &s1, mode)?);
    for cf in Counterfactual::ALL {
        curves.push(diagnostics::decompose_counterfactual(&r0, &r1, &s0, &s1, cf, mode)?);
    }
    io::atomic_write(&out, |w| diagnostics::write_curves_csv(&curves, w))?;
    let config = json!({ "args": serde_json::to_value(&a)? });
    write_manifest(&out, "decompose", None, config, &[out.as_path()], started)
}

#[derive(Parser, Debug)]
#[command(name = "otsieve", version, about = "Matching equilibria and sieve estimation of production technology")]
struct Cli {
    /// JSON file with option values (flag names in snake_case).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a matched sample from a simulation design.
    Simulate(SimulateArgs),
    /// Solve the assignment problem for a sample's skills and requirements.
    SolveOt(SolveOtArgs),
    /// Fit a sieve or parametric estimator.
    Estimate(EstimateArgs),
    /// Monte-Carlo bias / RMSE table.
    Mc(McArgs),
    /// Normality tests, summaries, rank transforms and polarization curves.
    Diagnose(DiagnoseCli),
    /// Wage skewness and variance over a grid of complementarities.
    Sweep(SweepArgs),
    /// Counterfactual polarization curves between two periods.
    Decompose(DecomposeArgs),
}

fn dispatch(cli: Cli) -> Result<()> {
    let started = Instant::now();
    let config: Option<Value> = match &cli.config {
        Some(p) => Some(io::read_json(p)?),
        None => None,
    };
    let c = config.as_ref();
    match cli.command {
        Command::Simulate(a) => cmd_simulate(merge(&a, c)?, started),
        Command::SolveOt(a) => cmd_solve_ot(merge(&a, c)?, started),
        Command::Estimate(a) => cmd_estimate(merge(&a, c)?, started),
        Command::Mc(a) => cmd_mc(merge(&a, c)?, started),
        Command::Diagnose(d) => {
            let mut a: DiagnoseArgs = merge(&d.rest, c)?;
            a.what = d.what;
            cmd_diagnose(a, started)
        }
        Command::Sweep(a) => cmd_sweep(merge(&a, c)?, started),
        Command::Decompose(a) => cmd_decompose(merge(&a, c)?, started),
    }
}

/// Machine-readable error line written to stderr.
pub fn error_json(e: &Error) -> String {
    let mut v = json!({
        "error": e.kind_name(),
        "message": e.to_string(),
        "exit_code": e.exit_code(),
    });
    if let Error::Data { row, column, .. } = e {
        v["row"] = json!(row);
        v["column"] = json!(column);
    }
    v.to_string()
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            if code != 0 {
                eprintln!("{}", json!({ "error": "usage", "message": e.kind().to_string(), "exit_code": 1 }));
            }
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            e.exit_code()
        }
    }
}
