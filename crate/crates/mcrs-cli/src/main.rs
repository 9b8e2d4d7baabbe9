//! Command-line interface: transform, simulate, fit, infer, scan.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use clap::{Args, Parser, Subcommand};
use mcrs::error::Error;
use mcrs::estimate::{self, FitOptions};
use mcrs::fbinfer::{self, UpdateConfig};
use mcrs::io;
use mcrs::likelihood::RegimeSequence;
use mcrs::simulate;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mcrs", version, about = "Margin-closed regime-switching time series models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Transform a series file (first difference of natural logs).
    Transform(TransformArgs),
    /// Simulate a series from a model file.
    Simulate(SimulateArgs),
    /// Fit a model to a series.
    Fit(FitArgs),
    /// Infer run probabilities and date the regime sequence.
    Infer(InferArgs),
    /// AIC scan over Markov orders and regime counts.
    Scan(ScanArgs),
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Transformation to apply.
    #[arg(long, default_value = "diff-log")]
    mode: String,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Number of time points to draw.
    #[arg(long)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output series file (includes a regime column).
    #[arg(long)]
    output: PathBuf,
    /// Optional standalone regimes file.
    #[arg(long)]
    regimes: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Regime sequence file (external mode); a `regime` column in the input
    /// is accepted instead.
    #[arg(long)]
    regimes: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    num_regimes: usize,
    /// Uniform within-regime Markov order for every variable and regime.
    #[arg(long, default_value_t = 1)]
    order: usize,
    /// One of: external, multistage, iterative.
    #[arg(long, default_value = "multistage")]
    mode: String,
    #[arg(long, default_value_t = 0)]
    tau: usize,
    #[arg(long, default_value_t = 3)]
    nu: usize,
    #[arg(long, default_value_t = 0.8)]
    xi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    max_iter: usize,
    /// Output model file; a fit report is written next to it.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    tau: usize,
    #[arg(long, default_value_t = 3)]
    nu: usize,
    #[arg(long, default_value_t = 0.8)]
    xi: f64,
    /// Output run-probability table; the dated sequence is written to
    /// `--regimes` (default: alongside the output).
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    regimes: Option<PathBuf>,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    input: PathBuf,
    /// Regime sequence file: when given, cells use the complete likelihood.
    #[arg(long)]
    regimes: Option<PathBuf>,
    /// Comma-separated regime counts, e.g. `2,3`.
    #[arg(long, default_value = "2")]
    num_regimes: String,
    /// Comma-separated Markov orders, e.g. `0,1,2`.
    #[arg(long, default_value = "0,1")]
    order: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version requests are not errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Transform(a) => cmd_transform(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Scan(a) => cmd_scan(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Data(_) | Error::InsufficientData(_) | Error::InsufficientVariation(_) => 2,
        Error::ParamDomain(_) | Error::Shape(_) => 1,
        Error::NotPositiveDefinite(_)
        | Error::InfeasibleWindow { .. }
        | Error::DegeneratePair { .. }
        | Error::NonConvergence { .. } => 3,
    }
}

fn cmd_transform(a: TransformArgs) -> Result<(), CliError> {
    if a.mode != "diff-log" {
        return Err(CliError::Usage(format!("unknown transform mode '{}'", a.mode)));
    }
    let series = io::read_series(&a.input)?;
    let data = io::diff_log(&series.data)?;
    let regimes = series.regimes.map(|r| r[1..].to_vec());
    io::write_series(&a.output, &io::Series { names: series.names, data, regimes })?;
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    if a.length == 0 {
        return Err(CliError::Usage("--length must be positive".into()));
    }
    let (model, names) = io::read_model(&a.model)?;
    let out = simulate::sample_series(&model, a.length, a.seed)?;
    io::write_series(
        &a.output,
        &io::Series {
            names,
            data: out.observations,
            regimes: Some(out.regimes.as_slice().to_vec()),
        },
    )?;
    if let Some(path) = a.regimes {
        write_regime_file(&path, out.regimes.as_slice())?;
    }
    Ok(())
}

fn write_regime_file(path: &Path, labels: &[usize]) -> Result<(), CliError> {
    let mut text = String::from("regime\n");
    for &g in labels {
        text.push_str(&format!("{g}\n"));
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Lib(Error::Data(format!("writing {}: {e}", path.display()))))
}

fn read_regime_file(path: &Path, t_len: usize, g: usize) -> Result<RegimeSequence, CliError> {
    let series = io::read_series(path)?;
    let labels = series
        .regimes
        .ok_or_else(|| CliError::Usage(format!("{} has no regime column", path.display())))?;
    if labels.len() != t_len {
        return Err(CliError::Lib(Error::Data(format!(
            "regime sequence length {} does not match series length {t_len}",
            labels.len()
        ))));
    }
    Ok(RegimeSequence::new(labels, g)?)
}

#[derive(Serialize)]
struct ReportDoc {
    mode: String,
    loglik: f64,
    param_count: usize,
    aic: f64,
    iterations: usize,
    converged: bool,
    clamped_transforms: usize,
    stages: Vec<StageDoc>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct StageDoc {
    name: String,
    initial_loglik: f64,
    final_loglik: f64,
    iters: usize,
    converged: bool,
}

fn write_report(path: &Path, mode: &str, rep: &estimate::FitReport) -> Result<(), CliError> {
    let doc = ReportDoc {
        mode: mode.to_string(),
        loglik: rep.loglik,
        param_count: rep.param_count,
        aic: rep.aic,
        iterations: rep.iterations,
        converged: rep.converged,
        clamped_transforms: rep.clamps,
        stages: rep
            .stages
            .iter()
            .map(|s| StageDoc {
                name: s.name.clone(),
                initial_loglik: s.initial_loglik,
                final_loglik: s.final_loglik,
                iters: s.iters,
                converged: s.converged,
            })
            .collect(),
        warnings: rep.warnings.clone(),
    };
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| CliError::Lib(Error::Data(format!("report serialization: {e}"))))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::Lib(Error::Data(format!("writing {}: {e}", path.display()))))
}

fn report_path(model_path: &Path) -> PathBuf {
    let mut name = model_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "model".into());
    name.push_str(".report.json");
    model_path.with_file_name(name)
}

fn cmd_fit(a: FitArgs) -> Result<(), CliError> {
    let series = io::read_series(&a.input)?;
    if a.num_regimes == 0 {
        return Err(CliError::Usage("--num-regimes must be positive".into()));
    }
    let opts = FitOptions::default();
    let orders = estimate::uniform_orders(a.num_regimes, series.data.ncols(), a.order);
    let (rep, mode) = match a.mode.as_str() {
        "external" => {
            let v = match (&a.regimes, &series.regimes) {
                (Some(path), _) => read_regime_file(path, series.data.nrows(), a.num_regimes)?,
                (None, Some(labels)) => RegimeSequence::new(labels.clone(), a.num_regimes)?,
                (None, None) => {
                    return Err(CliError::Usage(
                        "mode 'external' needs --regimes or a regime column in the input".into(),
                    ))
                }
            };
            let mut o = opts;
            if a.order == 0 {
                o.estimate_switch = false;
            }
            (estimate::fit_with_regimes(&series.data, &v, &orders, &o)?, "external")
        }
        "multistage" => {
            let mut o = opts;
            if a.order == 0 || a.num_regimes == 1 {
                o.estimate_switch = false;
            }
            (estimate::fit_multistage(&series.data, a.num_regimes, &orders, &o)?, "multistage")
        }
        "iterative" => {
            let cfg = UpdateConfig::new(a.tau, a.nu, a.xi)?;
            let mut o = opts;
            if a.order == 0 || a.num_regimes == 1 {
                o.estimate_switch = false;
            }
            let (rep, v) = estimate::fit_iterative(
                &series.data,
                a.num_regimes,
                &orders,
                &cfg,
                a.max_iter,
                &o,
            )?;
            // the inferred sequence is part of the artifacts
            let mut path = a.output.clone();
            path.set_extension("regimes.csv");
            write_regime_file(&path, v.as_slice())?;
            (rep, "iterative")
        }
        other => return Err(CliError::Usage(format!("unknown mode '{other}'"))),
    };
    io::write_model(&a.output, &rep.model, Some(series.names.clone()))?;
    write_report(&report_path(&a.output), mode, &rep)?;
    println!(
        "fitted: loglik {:.4}, {} parameters, AIC {:.4}",
        rep.loglik, rep.param_count, rep.aic
    );
    Ok(())
}

fn cmd_infer(a: InferArgs) -> Result<(), CliError> {
    let series = io::read_series(&a.input)?;
    let (model, _) = io::read_model(&a.model)?;
    let cfg = UpdateConfig::new(a.tau, a.nu, a.xi)?;
    let probs = fbinfer::run_prob(&series.data, &model, a.tau)?;
    let dated = fbinfer::date_regimes(&probs, &cfg);
    let header: Vec<String> =
        (1..=model.num_regimes()).map(|g| format!("regime_{g}")).collect();
    io::write_table(&a.output, &header, &probs.probs)?;
    let regimes_path = a.regimes.unwrap_or_else(|| {
        let mut p = a.output.clone();
        p.set_extension("regimes.csv");
        p
    });
    write_regime_file(&regimes_path, dated.as_slice())?;
    Ok(())
}

fn parse_list(text: &str, what: &str) -> Result<Vec<usize>, CliError> {
    let vals: Result<Vec<usize>, _> =
        text.split(',').map(|c| c.trim().parse::<usize>()).collect();
    match vals {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(CliError::Usage(format!("cannot parse {what} list '{text}'"))),
    }
}

fn cmd_scan(a: ScanArgs) -> Result<(), CliError> {
    let series = io::read_series(&a.input)?;
    let gs = parse_list(&a.num_regimes, "--num-regimes")?;
    let orders = parse_list(&a.order, "--order")?;
    let v = match (&a.regimes, &series.regimes) {
        (Some(path), _) => {
            let max_g = *gs.iter().max().expect("nonempty");
            Some(read_regime_file(path, series.data.nrows(), max_g)?)
        }
        (None, Some(labels)) => {
            let max_g = *gs.iter().max().expect("nonempty");
            Some(RegimeSequence::new(labels.clone(), max_g)?)
        }
        (None, None) => None,
    };
    let table = estimate::aic_scan(&series.data, &gs, &orders, v.as_ref(), &FitOptions::default());
    let mut text = String::from("num_regimes,order,aic,loglik,params,status\n");
    for row in &table.rows {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.num_regimes,
            row.order,
            row.aic.map(|v| format!("{v:.6}")).unwrap_or_default(),
            row.loglik.map(|v| format!("{v:.6}")).unwrap_or_default(),
            row.param_count.map(|v| v.to_string()).unwrap_or_default(),
            row.status
        ));
    }
    std::fs::write(&a.output, text)
        .map_err(|e| CliError::Lib(Error::Data(format!("writing {}: {e}", a.output.display()))))?;
    Ok(())
}
