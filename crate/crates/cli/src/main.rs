//! `gsmgp`: simulate, fit, predict, spectrogram export, kernel checks and
//! held-out benchmarks for GSM kernel Gaussian processes.

mod config;
mod gridspec;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use gsmgp::checks::{run_suite, Suite};
use gsmgp::data::{
    border_mask, cross_mask, linspace, load_grid, load_series, simulate_chirp, simulate_texture,
    sweep_frequency, write_axis, write_grid_values, write_series, TexturePattern,
    SWEEP_CROSS_FREQUENCY,
};
use gsmgp::experiments::{holdout_benchmark, rmse};
use gsmgp::gp::{grid_points, predict_points};
use gsmgp::modelfile::{load_model, save_model};
use gsmgp::spectral::{empirical_spectrogram, equispaced_step, model_spectrogram, Spectrogram};
use gsmgp::train::{fit, init_window};
use gsmgp::{GridDataset, InitMethod, KernelKind, TrainConfig};

use manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(
    name = "gsmgp",
    version,
    about = "GSM kernel Gaussian process experiments"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    /// TOML file of flag values (`key = value`, optionally under `[command]`).
    /// Flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset and its ground-truth sidecar.
    Simulate(SimulateArgs),
    /// Fit kernel hyperparameters and write a model file.
    Fit(FitArgs),
    /// Predictive mean and variance at new inputs.
    Predict(PredictArgs),
    /// Model-implied or empirical spectrogram as long-form CSV.
    Spectrogram(SpectrogramArgs),
    /// Run kernel verification suites.
    Check(CheckArgs),
    /// Held-out comparison of kernels on a grid dataset.
    Benchmark(BenchmarkArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SimKind {
    Chirp,
    Texture,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PatternArg {
    FreqSweep,
    StationaryWeave,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum KernelArg {
    Gsm,
    Sm,
    Ss,
    Se,
}

impl From<KernelArg> for KernelKind {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Gsm => KernelKind::Gsm,
            KernelArg::Sm => KernelKind::Sm,
            KernelArg::Ss => KernelKind::Ss,
            KernelArg::Se => KernelKind::Se,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum InitArg {
    Prior,
    Spectrogram,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SuiteArg {
    All,
    Psd,
    Fourier,
    Gradient,
    Kronecker,
    Reduction,
    Whitening,
    Roundtrip,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum HoldoutArg {
    Cross,
    Border,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct SimulateArgs {
    #[arg(long, value_enum)]
    kind: SimKind,
    /// Samples (chirp, default 200) or rows (texture, default 32).
    #[arg(long)]
    n: Option<usize>,
    /// Texture columns (default: same as --n).
    #[arg(long)]
    n2: Option<usize>,
    /// Noise variance (default 0.1 for chirp, 0.01 for texture).
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, value_enum, default_value = "freq-sweep")]
    pattern: PatternArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct FitArgs {
    /// Series CSV (`x,y` header) or grid values CSV.
    #[arg(long)]
    data: PathBuf,
    /// 0/1 grid mask; masked cells are mean-imputed.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Axis CSV per grid dimension (repeat in dimension order).
    #[arg(long)]
    axis: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "gsm")]
    kernel: KernelArg,
    /// Mixture components per dimension (ignored by se).
    #[arg(long = "Q", visible_alias = "q")]
    #[serde(rename = "Q")]
    q: Option<usize>,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Candidates screened per restart.
    #[arg(long, default_value_t = 100)]
    candidates: usize,
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "prior")]
    init: InitArg,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// `lin(start,stop,count)` per dimension, comma-separated, or a CSV of
    /// inputs with a header row and one column per dimension.
    #[arg(long)]
    at: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct SpectrogramArgs {
    /// Model file (exactly one of --model and --data).
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    model: Option<PathBuf>,
    /// Series CSV with an `x,y` header.
    #[arg(long)]
    data: Option<PathBuf>,
    /// `low,high` frequency range (default: 0 to the Nyquist frequency).
    #[arg(long)]
    freq_range: Option<String>,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    bins: u64,
    /// Input dimension of a model spectrogram.
    #[arg(long, default_value_t = 0)]
    dim: usize,
    /// Frame length of the empirical spectrogram.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct CheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    suite: SuiteArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the results as CSV (the run manifest goes beside it).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct BenchmarkArgs {
    /// Grid values CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    axis: Vec<PathBuf>,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "gsm,sm,ss,se"
    )]
    kernels: Vec<KernelArg>,
    #[arg(long = "Q", visible_alias = "q", default_value_t = 2)]
    #[serde(rename = "Q")]
    q: usize,
    #[arg(long, value_enum, default_value = "cross")]
    holdout: HoldoutArg,
    /// Rows and columns removed by the holdout.
    #[arg(long, default_value_t = 4)]
    width: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 100)]
    candidates: usize,
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Result table CSV.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<gsmgp::Error> for Failure {
    fn from(e: gsmgp::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match parse_args(std::env::args().collect()) {
        Ok(c) => c,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Spectrogram(a) => spectrogram(a),
        Command::Check(a) => check(a),
        Command::Benchmark(a) => benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

/// Parses the command line after splicing in `--config` values. Clap's own
/// errors (and help/version output) exit here with clap's codes.
fn parse_args(mut args: Vec<String>) -> Result<Cli, Failure> {
    let config = config::take_config_flag(&mut args).map_err(Failure::Usage)?;
    if let Some(path) = &config {
        let text = config::read_config(Path::new(path)).map_err(Failure::Runtime)?;
        let root = Cli::command();
        let position = args
            .iter()
            .enumerate()
            .skip(1)
            .find(|(_, a)| root.find_subcommand(a.as_str()).is_some())
            .map(|(i, _)| i);
        if let Some(i) = position {
            let sub = root.find_subcommand(&args[i]).expect("subcommand exists");
            let accepted: Vec<String> = sub
                .get_arguments()
                .filter_map(|a| a.get_long().map(str::to_string))
                .collect();
            let extra = config::config_args(&text, &args[i], &accepted, &args[i + 1..])
                .map_err(Failure::Usage)?;
            args.splice(i + 1..i + 1, extra);
        }
    }
    match Cli::try_parse_from(&args) {
        Ok(mut cli) => {
            cli.config = config.map(PathBuf::from);
            Ok(cli)
        }
        Err(e) => {
            let _ = e.print();
            std::process::exit(e.exit_code());
        }
    }
}

fn is_series_file(path: &Path) -> Result<bool, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    Ok(first.trim().replace(' ', "") == "x,y")
}

fn load_dataset(
    data: &Path,
    mask: Option<&Path>,
    axes: &[PathBuf],
    manifest: &mut RunManifest,
) -> Result<GridDataset, Failure> {
    manifest.input(data);
    if is_series_file(data)? {
        if mask.is_some() || !axes.is_empty() {
            return Err(Failure::Usage(
                "--mask and --axis apply to grid data only".into(),
            ));
        }
        return Ok(load_series(data)?);
    }
    if let Some(m) = mask {
        manifest.input(m);
    }
    for a in axes {
        manifest.input(a);
    }
    let axis_refs: Vec<&Path> = axes.iter().map(PathBuf::as_path).collect();
    let axes_opt = if axis_refs.is_empty() {
        None
    } else {
        Some(axis_refs.as_slice())
    };
    Ok(load_grid(data, mask, axes_opt)?)
}

/// `data.csv` → `data.<suffix>`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn simulate(a: SimulateArgs) -> CmdResult {
    let started = Instant::now();
    let mut manifest = RunManifest::new("simulate", &a, Some(a.seed));
    match a.kind {
        SimKind::Chirp => {
            if a.n2.is_some() {
                warn!("--n2 applies to textures only; ignored");
            }
            let n = a.n.unwrap_or(200);
            let (data, truth) = simulate_chirp(n, a.noise.unwrap_or(0.1), a.seed)?;
            write_series(&a.out, &data)?;
            manifest.output(&a.out);
            let truth_path = sidecar(&a.out, "truth.csv");
            let mut w = csv::Writer::from_path(&truth_path)?;
            w.write_record(["x", "mu", "ell", "w"])?;
            for i in 0..truth.x.len() {
                w.write_record([truth.x[i], truth.mu[i], truth.ell[i], truth.w[i]].map(num))?;
            }
            w.flush()?;
            manifest.output(&truth_path);
        }
        SimKind::Texture => {
            let n1 = a.n.unwrap_or(32);
            let n2 = a.n2.unwrap_or(n1);
            let pattern = match a.pattern {
                PatternArg::FreqSweep => TexturePattern::FreqSweep,
                PatternArg::StationaryWeave => TexturePattern::StationaryWeave,
            };
            let data = simulate_texture(n1, n2, pattern, a.noise.unwrap_or(0.01), a.seed)?;
            write_grid_values(&a.out, &data.shape(), &data.y)?;
            manifest.output(&a.out);
            for (d, axis) in data.axes.iter().enumerate() {
                let p = sidecar(&a.out, &format!("axis{d}.csv"));
                write_axis(&p, axis)?;
                manifest.output(&p);
            }
            let truth_path = sidecar(&a.out, "truth.csv");
            let mut w = csv::Writer::from_path(&truth_path)?;
            w.write_record(["dim", "x", "frequency"])?;
            for (d, axis) in data.axes.iter().enumerate() {
                let step = axis[1] - axis[0];
                for &x in axis {
                    let f = match (pattern, d) {
                        (TexturePattern::FreqSweep, 0) => sweep_frequency(x),
                        (TexturePattern::FreqSweep, _) => SWEEP_CROSS_FREQUENCY,
                        (TexturePattern::StationaryWeave, 0) => 1.0 / (8.0 * step),
                        (TexturePattern::StationaryWeave, _) => 1.0 / (4.0 * step),
                    };
                    w.write_record([d.to_string(), num(x), num(f)])?;
                }
            }
            w.flush()?;
            manifest.output(&truth_path);
        }
    }
    manifest.write(&a.out, started)?;
    Ok(())
}

fn fit_cmd(a: FitArgs) -> CmdResult {
    let started = Instant::now();
    let mut manifest = RunManifest::new("fit", &a, Some(a.seed));
    let kernel = KernelKind::from(a.kernel);
    if kernel == KernelKind::Se && a.q.is_some() {
        warn!("--Q is ignored by the se kernel");
    }
    let config = TrainConfig {
        kernel,
        q: if kernel == KernelKind::Se {
            1
        } else {
            a.q.unwrap_or(1)
        },
        restarts: a.restarts,
        candidates_per_restart: a.candidates,
        max_iterations: a.max_iterations,
        seed: a.seed,
        init: match a.init {
            InitArg::Prior => InitMethod::Prior,
            InitArg::Spectrogram => InitMethod::Spectrogram,
        },
        ..TrainConfig::default()
    };
    config
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let data = load_dataset(&a.data, a.mask.as_deref(), &a.axis, &mut manifest)?;
    info!(
        "fitting {} to {} cells ({} observed)",
        kernel.name(),
        data.len(),
        data.observed()
    );
    let model = fit(&config, &data)?;
    let objective = model
        .summary
        .as_ref()
        .map_or(f64::NAN, |s| s.final_objective);
    if !objective.is_finite() {
        return Err(Failure::Runtime(format!(
            "fit ended with a non-finite objective ({objective})"
        )));
    }
    let cells: Vec<usize> = (0..data.len()).filter(|&i| data.mask[i]).collect();
    let all = grid_points(&data.axes);
    let points: Vec<Vec<f64>> = cells.iter().map(|&i| all[i].clone()).collect();
    let pred = predict_points(&model, &points)?;
    let observed: Vec<f64> = cells.iter().map(|&i| data.y[i]).collect();
    let training_rmse = rmse(&pred.mean, &observed);
    save_model(&model, &a.out)?;
    manifest.output(&a.out);
    manifest.final_objective = Some(objective);
    println!("final objective: {objective:.6}");
    println!("training RMSE: {training_rmse:.6}");
    manifest.write(&a.out, started)?;
    Ok(())
}

fn read_inputs(path: &Path, dims: usize) -> Result<Vec<Vec<f64>>, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let width = reader.headers()?.len();
    if width != dims {
        return Err(Failure::Runtime(format!(
            "{}: {width} input column(s), the model has {dims} dimension(s)",
            path.display()
        )));
    }
    let mut points = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let point = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Failure::Runtime(format!(
                            "{}: row {}: bad value '{f}'",
                            path.display(),
                            row + 2
                        ))
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        points.push(point);
    }
    Ok(points)
}

/// Shortest round-trip decimal, switching to exponent form for very small
/// or very large magnitudes.
fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn input_names(dims: usize) -> Vec<String> {
    if dims == 1 {
        vec!["x".into()]
    } else {
        (0..dims).map(|d| format!("x{d}")).collect()
    }
}

fn predict(a: PredictArgs) -> CmdResult {
    let started = Instant::now();
    let mut manifest = RunManifest::new("predict", &a, None);
    let model = load_model(&a.model)?;
    manifest.input(&a.model);
    let dims = model.axes().len();
    let points = if a.at.trim_start().starts_with("lin(") {
        let axes = gridspec::parse_grid_spec(&a.at).map_err(Failure::Usage)?;
        if axes.len() != dims {
            return Err(Failure::Usage(format!(
                "grid spec has {} dimension(s), the model has {dims}",
                axes.len()
            )));
        }
        if axes.iter().any(Vec::is_empty) {
            Vec::new()
        } else {
            grid_points(&axes)
        }
    } else {
        let path = Path::new(&a.at);
        manifest.input(path);
        read_inputs(path, dims)?
    };
    let mut w = csv::Writer::from_path(&a.out)?;
    let mut header = input_names(dims);
    header.extend(["mean".to_string(), "variance".to_string()]);
    w.write_record(&header)?;
    if !points.is_empty() {
        let pred = predict_points(&model, &points)?;
        for (i, p) in points.iter().enumerate() {
            let mut row: Vec<String> = p.iter().map(|&v| num(v)).collect();
            row.push(num(pred.mean[i]));
            row.push(num(pred.variance[i]));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    manifest.output(&a.out);
    manifest.write(&a.out, started)?;
    Ok(())
}

fn parse_range(s: &str) -> Result<(f64, f64), Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let parsed: Vec<f64> = parts.iter().filter_map(|p| p.parse::<f64>().ok()).collect();
    match parsed.as_slice() {
        [lo, hi]
            if parts.len() == 2 && lo.is_finite() && hi.is_finite() && lo >= &0.0 && lo < hi =>
        {
            Ok((*lo, *hi))
        }
        _ => Err(Failure::Usage(format!(
            "--freq-range expects 'low,high' with 0 <= low < high, got '{s}'"
        ))),
    }
}

/// Linear interpolation of each row onto `freqs`; zero outside the source range.
fn resample(s: &Spectrogram, freqs: &[f64]) -> Vec<Vec<f64>> {
    let src = &s.frequency_axis;
    (0..s.amplitude.nrows())
        .map(|r| {
            freqs
                .iter()
                .map(|&f| {
                    if src.is_empty() || f < src[0] || f > src[src.len() - 1] {
                        return 0.0;
                    }
                    let j = src
                        .partition_point(|&v| v <= f)
                        .clamp(1, src.len().max(2) - 1);
                    if src.len() == 1 {
                        return s.amplitude[(r, 0)];
                    }
                    let (f0, f1) = (src[j - 1], src[j]);
                    let t = (f - f0) / (f1 - f0);
                    (1.0 - t) * s.amplitude[(r, j - 1)] + t * s.amplitude[(r, j)]
                })
                .collect()
        })
        .collect()
}

fn nyquist(axis: &[f64]) -> f64 {
    match equispaced_step(axis) {
        Ok(h) => 0.5 / h,
        Err(_) => {
            let gap = axis
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::INFINITY, f64::min);
            0.5 / gap
        }
    }
}

fn spectrogram(a: SpectrogramArgs) -> CmdResult {
    let started = Instant::now();
    let mut manifest = RunManifest::new("spectrogram", &a, None);
    let bins = a.bins as usize;
    let range = a.freq_range.as_deref().map(parse_range).transpose()?;
    let (inputs, freqs, rows) = if let Some(path) = &a.model {
        manifest.input(path);
        let model = load_model(path)?;
        let dims = model
            .gsm_dims()
            .ok_or_else(|| Failure::Runtime("model spectrograms need a GSM model".into()))?;
        let dim = *dims.get(a.dim).ok_or_else(|| {
            Failure::Usage(format!(
                "--dim {} but the model has {} dimension(s)",
                a.dim,
                dims.len()
            ))
        })?;
        let axis = &model.axes()[a.dim];
        let (lo, hi) = range.unwrap_or((0.0, nyquist(axis)));
        let freqs = linspace(lo, hi, bins);
        let s = model_spectrogram(dim, axis, &freqs)?;
        let rows = (0..s.amplitude.nrows())
            .map(|r| s.amplitude.row(r).iter().copied().collect())
            .collect();
        (s.input_axis, freqs, rows)
    } else {
        let path = a.data.as_ref().expect("clap requires --model or --data");
        manifest.input(path);
        if !is_series_file(path)? {
            return Err(Failure::Runtime(
                "empirical spectrograms need a series CSV with an x,y header".into(),
            ));
        }
        let data = load_series(path)?;
        if !(0.0..1.0).contains(&a.overlap) {
            return Err(Failure::Usage(format!(
                "--overlap must be in [0, 1), got {}",
                a.overlap
            )));
        }
        let window = a.window.unwrap_or_else(|| init_window(data.len()));
        let s = empirical_spectrogram(&data.axes[0], &data.y, window, a.overlap)?;
        let (lo, hi) = range.unwrap_or((0.0, nyquist(&data.axes[0])));
        let freqs = linspace(lo, hi, bins);
        let rows = resample(&s, &freqs);
        (s.input_axis, freqs, rows)
    };
    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record(["x", "frequency", "amplitude"])?;
    for (x, row) in inputs.iter().zip(&rows) {
        for (f, v) in freqs.iter().zip(row) {
            w.write_record([num(*x), num(*f), num(*v)])?;
        }
    }
    w.flush()?;
    manifest.output(&a.out);
    manifest.write(&a.out, started)?;
    Ok(())
}

fn check(a: CheckArgs) -> CmdResult {
    let started = Instant::now();
    let mut manifest = RunManifest::new("check", &a, Some(a.seed));
    let suites: Vec<Suite> = match a.suite {
        SuiteArg::All => Suite::ALL.to_vec(),
        SuiteArg::Psd => vec![Suite::Psd],
        SuiteArg::Fourier => vec![Suite::Fourier],
        SuiteArg::Gradient => vec![Suite::Gradient],
        SuiteArg::Kronecker => vec![Suite::Kronecker],
        SuiteArg::Reduction => vec![Suite::Reduction],
        SuiteArg::Whitening => vec![Suite::Whitening],
        SuiteArg::Roundtrip => vec![Suite::RoundTrip],
    };
    let mut rows = Vec::new();
    let mut failed = 0;
    for suite in suites {
        let results = run_suite(suite, a.seed)?;
        for r in results {
            println!("[{}] {r}", suite.name());
            if !r.passed() {
                failed += 1;
            }
            rows.push((suite.name(), r));
        }
    }
    match &a.out {
        Some(out) => {
            let mut w = csv::Writer::from_path(out)?;
            w.write_record(["suite", "property", "measured", "threshold", "passed"])?;
            for (suite, r) in &rows {
                w.write_record([
                    suite.to_string(),
                    r.name.clone(),
                    num(r.measured),
                    num(r.threshold),
                    r.passed().to_string(),
                ])?;
            }
            w.flush()?;
            manifest.output(out);
            manifest.write(out, started)?;
        }
        None => {
            manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
            let text = toml::to_string(&manifest).map_err(|e| Failure::Runtime(e.to_string()))?;
            eprint!("{text}");
        }
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} check(s) failed")));
    }
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> CmdResult {
    let started = Instant::now();
    let mut manifest = RunManifest::new("benchmark", &a, Some(a.seed));
    if a.kernels.is_empty() {
        return Err(Failure::Usage("--kernels is empty".into()));
    }
    let data = load_dataset(&a.data, a.mask.as_deref(), &a.axis, &mut manifest)?;
    let shape = data.shape();
    if shape.len() != 2 {
        return Err(Failure::Runtime(format!(
            "benchmark needs a 2-D grid, got shape {shape:?}"
        )));
    }
    let keep = match a.holdout {
        HoldoutArg::Cross => cross_mask(shape[0], shape[1], a.width),
        HoldoutArg::Border => border_mask(shape[0], shape[1], a.width),
    };
    let kernels: Vec<KernelKind> = a.kernels.iter().map(|&k| k.into()).collect();
    let config = TrainConfig {
        q: a.q,
        restarts: a.restarts,
        candidates_per_restart: a.candidates,
        max_iterations: a.max_iterations,
        seed: a.seed,
        ..TrainConfig::default()
    };
    config
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let rows = holdout_benchmark(&data, &keep, &kernels, &config)?;
    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record([
        "kernel",
        "q",
        "held_out",
        "rmse",
        "log_likelihood",
        "final_objective",
    ])?;
    println!(
        "{:<6} {:>3} {:>8} {:>12} {:>16}",
        "kernel", "q", "held_out", "rmse", "log_likelihood"
    );
    for r in &rows {
        println!(
            "{:<6} {:>3} {:>8} {:>12.6} {:>16.4}",
            r.kernel.name(),
            r.q,
            r.held_out,
            r.rmse,
            r.log_likelihood
        );
        w.write_record([
            r.kernel.name().to_string(),
            r.q.to_string(),
            r.held_out.to_string(),
            num(r.rmse),
            num(r.log_likelihood),
            num(r.final_objective),
        ])?;
    }
    w.flush()?;
    manifest.output(&a.out);
    manifest.write(&a.out, started)?;
    Ok(())
}
