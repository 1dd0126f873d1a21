//! MAP training: candidate screening, multi-restart L-BFGS ascent and
//! spectrogram initialisation.

use log::{debug, info, warn};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::GridDataset;
use crate::error::{Error, Result};
use crate::gp::{log_posterior, objective};
use crate::kernels::{GsmComponent, GsmDimension, LatentClass};
use crate::latent::{nyquist_for_axis, HyperPrior, LatentFunction, Transform};
use crate::model::{DimKernel, GpModel, KernelKind, RestartSummary, TrainingSummary};
use crate::spectral::{empirical_spectrogram, equispaced_step};

/// Fraction of the output variance assigned to the initial noise level.
pub const INITIAL_NOISE_FRACTION: f64 = 0.1;

/// Observation noise, relative to the latent prior variance, when fitting
/// per-frame spectrogram estimates.
pub const SEED_NUGGET: f64 = 0.1;

/// Standard deviation of the whitened perturbations around a spectrogram seed.
pub const SEED_PERTURBATION: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMethod {
    Prior,
    Spectrogram,
}

impl std::str::FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prior" => Ok(InitMethod::Prior),
            "spectrogram" => Ok(InitMethod::Spectrogram),
            other => Err(Error::InvalidParameter(format!(
                "unknown init '{other}' (expected prior or spectrogram)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub kernel: KernelKind,
    pub q: usize,
    pub restarts: usize,
    pub candidates_per_restart: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub objective_tolerance: f64,
    pub seed: u64,
    pub init: InitMethod,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kernel: KernelKind::Gsm,
            q: 1,
            restarts: 10,
            candidates_per_restart: 100,
            max_iterations: 500,
            gradient_tolerance: 1e-5,
            objective_tolerance: 1e-9,
            seed: 0,
            init: InitMethod::Prior,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || self.restarts == 0 || self.candidates_per_restart == 0 || self.max_iterations == 0 {
            return Err(Error::InvalidParameter(
                "q, restarts, candidates and max_iterations must be positive".into(),
            ));
        }
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.gradient_tolerance) || !ok(self.objective_tolerance) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        Ok(())
    }

    /// Number of mixture components actually used by the kernel.
    pub fn effective_q(&self) -> usize {
        if self.kernel == KernelKind::Se {
            1
        } else {
            self.q
        }
    }

    fn rng(&self, restart: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(restart as u64);
        rng
    }
}

// ---------------------------------------------------------------------------
// L-BFGS

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub objective_tolerance: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iterations: 500,
            gradient_tolerance: 1e-5,
            objective_tolerance: 1e-9,
            max_line_search: 30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    ObjectiveTolerance,
    IterationLimit,
    LineSearchFailed,
}

impl StopReason {
    pub fn describe(&self) -> &'static str {
        match self {
            StopReason::GradientTolerance => "gradient tolerance",
            StopReason::ObjectiveTolerance => "objective tolerance",
            StopReason::IterationLimit => "iteration limit",
            StopReason::LineSearchFailed => "line search failed",
        }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    /// Minimised value at `x`.
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: StopReason,
    /// Accepted values, starting with the initial point.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + a * di).collect()
}

struct Probe {
    alpha: f64,
    value: f64,
    slope: f64,
    grad: Vec<f64>,
}

struct LineSearch<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    slope0: f64,
    evaluations: usize,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

impl<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>> LineSearch<'_, F> {
    fn probe(&mut self, alpha: f64) -> Probe {
        self.evaluations += 1;
        let x = axpy(self.x, alpha, self.d);
        match (self.f)(&x) {
            Some((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => Probe {
                alpha,
                value: v,
                slope: dot(&g, self.d),
                grad: g,
            },
            _ => Probe {
                alpha,
                value: f64::INFINITY,
                slope: f64::NAN,
                grad: Vec::new(),
            },
        }
    }

    fn armijo(&self, p: &Probe) -> bool {
        p.value <= self.f0 + C1 * p.alpha * self.slope0
    }

    fn curvature(&self, p: &Probe) -> bool {
        p.slope.abs() <= -C2 * self.slope0
    }

    /// Strong-Wolfe search. Returns the accepted probe, or the best probe
    /// with sufficient decrease if the budget runs out.
    fn run(&mut self, alpha0: f64, budget: usize) -> Option<Probe> {
        let mut prev = Probe {
            alpha: 0.0,
            value: self.f0,
            slope: self.slope0,
            grad: Vec::new(),
        };
        let mut alpha = alpha0;
        for i in 0..budget {
            let p = self.probe(alpha);
            if !self.armijo(&p) || (i > 0 && p.value >= prev.value) {
                return self.zoom(prev, p, budget - i - 1);
            }
            if self.curvature(&p) {
                return Some(p);
            }
            if p.slope >= 0.0 {
                return self.zoom(p, prev, budget - i - 1);
            }
            alpha = 2.0 * p.alpha;
            prev = p;
        }
        (prev.alpha > 0.0).then_some(prev)
    }

    fn zoom(&mut self, mut lo: Probe, mut hi: Probe, budget: usize) -> Option<Probe> {
        for _ in 0..budget {
            let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
            let width = b - a;
            if width <= 1e-14 * b.max(1.0) {
                break;
            }
            let trial = cubic_minimiser(&lo, &hi)
                .filter(|t| *t > a + 0.1 * width && *t < b - 0.1 * width)
                .unwrap_or(0.5 * (a + b));
            let p = self.probe(trial);
            if !self.armijo(&p) || p.value >= lo.value {
                hi = p;
            } else {
                if self.curvature(&p) {
                    return Some(p);
                }
                if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
        (lo.alpha > 0.0).then_some(lo)
    }
}

fn cubic_minimiser(p: &Probe, q: &Probe) -> Option<f64> {
    if !(p.value.is_finite() && q.value.is_finite() && p.slope.is_finite() && q.slope.is_finite()) {
        return None;
    }
    let d1 = p.slope + q.slope - 3.0 * (p.value - q.value) / (p.alpha - q.alpha);
    let disc = d1 * d1 - p.slope * q.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = (q.alpha - p.alpha).signum() * disc.sqrt();
    let t = q.alpha - (q.alpha - p.alpha) * (q.slope + d2 - d1) / (q.slope - p.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Limited-memory BFGS minimisation of `f`, which returns the value and
/// gradient, or `None` where it cannot be evaluated.
pub fn minimize<F>(mut f: F, x0: &[f64], config: &LbfgsConfig) -> Result<LbfgsReport>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let (mut value, mut grad) = match f(x0) {
        Some((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => (v, g),
        _ => return Err(Error::Optimisation("objective is not finite at the initial point".into())),
    };
    let mut x = x0.to_vec();
    let mut evaluations = 1;
    let mut history = vec![value];
    let mut pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    let mut iterations = 0;
    let reason = loop {
        if inf_norm(&grad) <= config.gradient_tolerance {
            break StopReason::GradientTolerance;
        }
        if iterations >= config.max_iterations {
            break StopReason::IterationLimit;
        }
        let mut d = two_loop(&grad, &pairs);
        let mut slope = dot(&grad, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d = grad.iter().map(|g| -g).collect();
            slope = dot(&grad, &d);
        }
        let alpha0 = if pairs.is_empty() {
            (1.0 / inf_norm(&grad)).min(1.0)
        } else {
            1.0
        };
        let mut search = LineSearch {
            f: &mut f,
            x: &x,
            d: &d,
            f0: value,
            slope0: slope,
            evaluations: 0,
        };
        let accepted = search.run(alpha0, config.max_line_search);
        evaluations += search.evaluations;
        let Some(p) = accepted else {
            if pairs.is_empty() {
                break StopReason::LineSearchFailed;
            }
            // stale curvature pairs: retry once along the steepest descent
            pairs.clear();
            continue;
        };
        iterations += 1;
        let s: Vec<f64> = d.iter().map(|di| p.alpha * di).collect();
        let yv: Vec<f64> = p.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&yv, &yv).sqrt() * dot(&s, &s).sqrt() {
            if pairs.len() == config.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, yv, 1.0 / sy));
        }
        let previous = value;
        x = axpy(&x, p.alpha, &d);
        value = p.value;
        grad = p.grad;
        history.push(value);
        debug!(
            "iteration {iterations}: objective {:.10e}, gradient norm {:.3e}",
            -value,
            inf_norm(&grad)
        );
        if (previous - value).abs() <= config.objective_tolerance * previous.abs().max(value.abs()).max(1.0) {
            break StopReason::ObjectiveTolerance;
        }
    };
    Ok(LbfgsReport {
        gradient_norm: inf_norm(&grad),
        x,
        value,
        iterations,
        evaluations,
        reason,
        history,
    })
}

fn two_loop(grad: &[f64], pairs: &std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

// ---------------------------------------------------------------------------
// Candidates

fn initial_noise_log(data: &GridDataset) -> f64 {
    let var = data.observed_variance().max(1e-12);
    0.5 * (INITIAL_NOISE_FRACTION * var).ln()
}

/// Per-dimension share of the signal variance.
fn signal_scale(data: &GridDataset) -> f64 {
    let var = data.observed_variance().max(1e-12);
    ((1.0 - INITIAL_NOISE_FRACTION) * var).powf(1.0 / data.dims() as f64)
}

/// Model with the requested kernel and its initial parameters (prior means
/// for GSM latents, data-scaled values for the baselines).
pub fn template_model(config: &TrainConfig, data: &GridDataset) -> Result<GpModel> {
    let q = config.effective_q();
    let scale = signal_scale(data);
    let kernels = data
        .axes
        .iter()
        .map(|axis| {
            let nyq = nyquist_for_axis(axis)?;
            Ok(match config.kernel {
                KernelKind::Gsm => {
                    let prior = HyperPrior::for_axis(axis);
                    DimKernel::Gsm(GsmDimension::constant(axis.clone(), nyq, prior, &vec![(1.0, 1.0, 0.5 * nyq); q])?)
                }
                KernelKind::Se => DimKernel::Se {
                    log_variance: scale.ln(),
                    log_lengthscale: (axis_range(axis) / 4.0).ln(),
                },
                KernelKind::Sm => DimKernel::Sm {
                    nyquist: nyq,
                    log_weights: vec![0.5 * (scale / q as f64).ln(); q],
                    logit_means: vec![0.0; q],
                    log_stddevs: vec![(nyq / 10.0).ln(); q],
                },
                KernelKind::Ss => DimKernel::Ss {
                    log_variance: scale.ln(),
                    frequencies: (0..q).map(|i| (i as f64 + 0.5) * nyq / q as f64).collect(),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GpModel::new(data.axes.clone(), data.y_vector(), kernels, initial_noise_log(data))
}

fn axis_range(axis: &[f64]) -> f64 {
    let r = axis[axis.len() - 1] - axis[0];
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

fn smallest_gap(axis: &[f64]) -> f64 {
    axis.windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
        .min(axis_range(axis))
}

/// Draws a candidate in place. GSM latents take whitened draws from the
/// prior; baseline parameters are sampled around data-derived scales.
fn sample_into<R: Rng>(model: &mut GpModel, scale: f64, rng: &mut R) -> Result<()> {
    let axes = model.axes().to_vec();
    for (k, axis) in model.kernels_mut().iter_mut().zip(&axes) {
        let gap = smallest_gap(axis).ln();
        let range = axis_range(axis).ln();
        let log_length = |rng: &mut R| gap + (range - gap) * rng.random::<f64>();
        let normal = |rng: &mut R| rng.sample::<f64, _>(StandardNormal);
        match k {
            DimKernel::Gsm(_) => {
                let v: Vec<f64> = (0..k.num_params()).map(|_| normal(rng)).collect();
                k.set_params(&v)?;
            }
            DimKernel::Se {
                log_variance,
                log_lengthscale,
            } => {
                *log_variance = scale.ln() + 0.5 * normal(rng);
                *log_lengthscale = log_length(rng);
            }
            DimKernel::Sm {
                nyquist,
                log_weights,
                logit_means,
                log_stddevs,
            } => {
                let q = log_weights.len() as f64;
                let t = Transform::Logit { nyquist: *nyquist };
                for i in 0..log_weights.len() {
                    log_weights[i] = 0.5 * (scale / q).ln() + 0.5 * normal(rng);
                    let mean = *nyquist * rng.random_range(0.01..0.99);
                    logit_means[i] = t.forward(mean)?;
                    // σ = 1 / (2πℓ) for a log-uniform lengthscale ℓ
                    log_stddevs[i] = -(2.0 * std::f64::consts::PI).ln() - log_length(rng);
                }
            }
            DimKernel::Ss {
                log_variance,
                frequencies,
            } => {
                let nyq = nyquist_for_axis(axis)?;
                *log_variance = scale.ln() + 0.5 * normal(rng);
                for f in frequencies.iter_mut() {
                    *f = nyq * rng.random::<f64>();
                }
            }
        }
    }
    Ok(())
}

/// Adds independent `N(0, sd²)` perturbations to the whitened kernel
/// parameters, leaving the noise level unchanged.
fn perturb<R: Rng>(model: &mut GpModel, sd: f64, rng: &mut R) -> Result<()> {
    let mut p = model.params();
    let n = p.len() - 1;
    for v in &mut p[..n] {
        *v += sd * rng.sample::<f64, _>(StandardNormal);
    }
    model.set_params(&p)
}

fn candidate_value(model: &GpModel) -> f64 {
    match log_posterior(model) {
        Ok(v) if v.is_finite() => v,
        _ => f64::NEG_INFINITY,
    }
}

/// Candidate pool of one restart, with the log posterior of each member
/// (`-inf` where it cannot be evaluated).
pub fn candidate_pool(
    config: &TrainConfig,
    data: &GridDataset,
    seed_model: Option<&GpModel>,
    restart: usize,
) -> Result<Vec<(GpModel, f64)>> {
    let template = match seed_model {
        Some(m) => m.clone(),
        None => template_model(config, data)?,
    };
    let scale = signal_scale(data);
    let mut rng = config.rng(restart);
    (0..config.candidates_per_restart)
        .map(|j| {
            let mut m = template.clone();
            match seed_model {
                Some(_) if restart == 0 && j == 0 => {}
                Some(_) => perturb(&mut m, SEED_PERTURBATION, &mut rng)?,
                None => sample_into(&mut m, scale, &mut rng)?,
            }
            let v = candidate_value(&m);
            Ok((m, v))
        })
        .collect()
}

fn best_of(pool: Vec<(GpModel, f64)>) -> Option<(GpModel, f64)> {
    let mut best: Option<(GpModel, f64)> = None;
    for (m, v) in pool {
        if v.is_finite() && best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((m, v));
        }
    }
    best
}

/// Seed model for spectrogram initialisation, if the configuration asks for
/// it and the data supports it.
fn seed_model(config: &TrainConfig, data: &GridDataset) -> Result<Option<GpModel>> {
    if config.init != InitMethod::Spectrogram {
        return Ok(None);
    }
    if config.kernel != KernelKind::Gsm || data.dims() != 1 {
        warn!("spectrogram initialisation applies to 1-D GSM models only; sampling from the prior");
        return Ok(None);
    }
    match init_from_spectrogram(&data.axes[0], &data.y, config.q, HyperPrior::for_axis(&data.axes[0]))? {
        Some(dim) => Ok(Some(GpModel::from_gsm(
            data.axes.clone(),
            data.y_vector(),
            crate::kernels::GsmParams { dims: vec![dim] },
            initial_noise_log(data),
        )?)),
        None => {
            warn!("spectrogram carries no signal; sampling from the prior");
            Ok(None)
        }
    }
}

/// Best candidate of every restart, with its log posterior.
pub fn screen_candidates(config: &TrainConfig, data: &GridDataset) -> Result<Vec<(GpModel, f64)>> {
    config.validate()?;
    let seed = seed_model(config, data)?;
    (0..config.restarts)
        .into_par_iter()
        .map(|r| screen_restart(config, data, seed.as_ref(), r))
        .collect()
}

fn screen_restart(
    config: &TrainConfig,
    data: &GridDataset,
    seed: Option<&GpModel>,
    restart: usize,
) -> Result<(GpModel, f64)> {
    best_of(candidate_pool(config, data, seed, restart)?).ok_or_else(|| {
        Error::Optimisation(format!(
            "restart {restart}: every candidate has a non-finite log posterior (check data scaling)"
        ))
    })
}

// ---------------------------------------------------------------------------
// Fitting

/// One optimised restart.
#[derive(Clone, Debug)]
pub struct RestartOutcome {
    pub model: GpModel,
    pub summary: RestartSummary,
    pub gradient_norm: f64,
    /// Accepted log-posterior values in ascent order.
    pub history: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: GpModel,
    pub restarts: Vec<Option<RestartOutcome>>,
}

/// Maximises the log posterior from `start`.
pub fn optimise(start: &GpModel, config: &TrainConfig, restart: usize) -> Result<RestartOutcome> {
    let initial = candidate_value(start);
    let mut work = start.clone();
    let lbfgs = LbfgsConfig {
        max_iterations: config.max_iterations,
        gradient_tolerance: config.gradient_tolerance,
        objective_tolerance: config.objective_tolerance,
        ..LbfgsConfig::default()
    };
    let report = minimize(
        |x| {
            work.set_params(x).ok()?;
            let o = objective(&work).ok()?;
            Some((-o.value, o.grad.iter().map(|g| -g).collect()))
        },
        &start.params(),
        &lbfgs,
    )?;
    let mut model = start.clone();
    model.set_params(&report.x)?;
    let final_objective = -report.value;
    info!(
        "restart {restart}: {:.6} -> {:.6} after {} iterations ({})",
        initial,
        final_objective,
        report.iterations,
        report.reason.describe()
    );
    Ok(RestartOutcome {
        model,
        summary: RestartSummary {
            restart,
            initial_objective: initial,
            final_objective,
            iterations: report.iterations,
            evaluations: report.evaluations,
            reason: report.reason.describe().into(),
        },
        gradient_norm: report.gradient_norm,
        history: report.history.iter().map(|v| -v).collect(),
    })
}

/// Screens candidates and optimises every restart; keeps the restart with
/// the highest final log posterior (lowest index on ties).
pub fn fit_detailed(config: &TrainConfig, data: &GridDataset) -> Result<FitOutcome> {
    config.validate()?;
    if config.kernel == KernelKind::Se && config.q != 1 {
        warn!("the SE kernel has no components; Q = {} is ignored", config.q);
    }
    let seed = seed_model(config, data)?;
    let restarts: Vec<Option<RestartOutcome>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let run = screen_restart(config, data, seed.as_ref(), r).and_then(|(m, _)| optimise(&m, config, r));
            match run {
                Ok(o) if o.summary.final_objective.is_finite() => Some(o),
                Ok(_) => None,
                Err(e) => {
                    warn!("restart {r} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let mut best: Option<&RestartOutcome> = None;
    for o in restarts.iter().flatten() {
        if best.is_none_or(|b| o.summary.final_objective > b.summary.final_objective) {
            best = Some(o);
        }
    }
    let best = best.ok_or_else(|| Error::Optimisation("no restart produced a finite objective".into()))?;
    let mut model = best.model.clone();
    model.summary = Some(TrainingSummary {
        kernel: config.kernel,
        q: config.effective_q(),
        seed: config.seed,
        selected_restart: best.summary.restart,
        final_objective: best.summary.final_objective,
        restarts: restarts.iter().flatten().map(|o| o.summary.clone()).collect(),
    });
    Ok(FitOutcome { model, restarts })
}

pub fn fit(config: &TrainConfig, data: &GridDataset) -> Result<GpModel> {
    Ok(fit_detailed(config, data)?.model)
}

// ---------------------------------------------------------------------------
// Spectrogram initialisation

/// Window length used for initialisation: the largest power of two not
/// exceeding a third of the series, between 8 and 256 samples.
pub fn init_window(n: usize) -> usize {
    let mut w = 8;
    while w * 2 <= (n / 3).min(256) {
        w *= 2;
    }
    w
}

/// Per-frame peaks: for each frame, the `q` strongest local maxima above DC
/// as `(frequency, amplitude)` with parabolic interpolation on log magnitude.
fn frame_peaks(freqs: &[f64], row: &[f64], q: usize) -> Vec<(f64, f64)> {
    let m = row.len();
    let mut peaks: Vec<(usize, f64)> = (1..m)
        .filter(|&k| (k == 1 || row[k] >= row[k - 1]) && (k + 1 == m || row[k] > row[k + 1]))
        .map(|k| (k, row[k]))
        .collect();
    if peaks.is_empty() {
        let k = (1..m).max_by(|a, b| row[*a].total_cmp(&row[*b])).unwrap_or(0);
        peaks.push((k, row[k]));
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let df = freqs[1] - freqs[0];
    let picked: Vec<(f64, f64)> = peaks
        .iter()
        .take(q)
        .map(|&(k, a)| {
            let mut f = freqs[k];
            if k + 1 < m {
                let (l, c, r) = (row[k - 1].max(1e-300).ln(), a.max(1e-300).ln(), row[k + 1].max(1e-300).ln());
                let den = l - 2.0 * c + r;
                if den < 0.0 {
                    f += df * (0.5 * (l - r) / den).clamp(-0.5, 0.5);
                }
            }
            (f, a)
        })
        .collect();
    let mut out = picked.clone();
    while out.len() < q {
        out.push(picked[out.len() % picked.len()]);
    }
    out
}

/// Piecewise-linear interpolation with constant extrapolation.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let i = xs.partition_point(|v| *v <= x) - 1;
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}

/// `(1/x)∫₀ˣ f` for the piecewise-linear `f`, which is the GSM frequency
/// whose phase `μ(x)·x` has instantaneous frequency `f`.
fn phase_average(xs: &[f64], fs: &[f64], x: f64) -> f64 {
    if x.abs() < 1e-9 {
        return interp(xs, fs, 0.0);
    }
    // breakpoints between 0 and x, integrated exactly by the trapezoid rule
    let (a, b) = if x > 0.0 { (0.0, x) } else { (x, 0.0) };
    let mut knots = vec![a];
    knots.extend(xs.iter().copied().filter(|v| *v > a && *v < b));
    knots.push(b);
    let integral: f64 = knots
        .windows(2)
        .map(|w| 0.5 * (w[1] - w[0]) * (interp(xs, fs, w[0]) + interp(xs, fs, w[1])))
        .sum();
    integral / (b - a)
}

/// Values on `axis` from observations at `at`, by the prior conditional mean
/// around the observations' average.
fn conditional_fit(prior: &HyperPrior, at: &[f64], values: &[f64], axis: &[f64]) -> Result<Vec<f64>> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut k = prior.gram(at);
    for i in 0..at.len() {
        k[(i, i)] += SEED_NUGGET * prior.variance;
    }
    let chol = k
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("spectrogram seed covariance".into()))?;
    let r = DVector::from_iterator(values.len(), values.iter().map(|v| v - mean));
    let alpha = chol.solve(&r);
    let cross = prior.cross(axis, at);
    Ok((cross * alpha).iter().map(|v| v + mean).collect())
}

/// Seeds a one-dimensional GSM kernel from the empirical spectrogram.
/// Returns `None` when the series carries no spectral energy.
pub fn init_from_spectrogram(x: &[f64], y: &[f64], q: usize, prior: HyperPrior) -> Result<Option<GsmDimension>> {
    if q == 0 {
        return Err(Error::InvalidParameter("Q must be at least 1".into()));
    }
    equispaced_step(x)?;
    let window = init_window(x.len());
    if x.len() < window {
        return Err(Error::Data(format!(
            "series of {} samples is shorter than one window ({window})",
            x.len()
        )));
    }
    let spec = empirical_spectrogram(x, y, window, 0.75)?;
    let peak = spec.amplitude.iter().fold(0.0f64, |m, v| m.max(*v));
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(peak > 1e-12 * scale.max(1e-300)) || peak == 0.0 {
        return Ok(None);
    }
    let nyq = nyquist_for_axis(x)?;
    let frames = spec.input_axis.len();
    let peaks: Vec<Vec<(f64, f64)>> = (0..frames)
        .map(|r| {
            let row: Vec<f64> = spec.amplitude.row(r).iter().copied().collect();
            frame_peaks(&spec.frequency_axis, &row, q)
        })
        .collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64;
    let signal = (1.0 - INITIAL_NOISE_FRACTION) * var.max(1e-12);
    let logit = Transform::logit(nyq)?;
    let (lo, hi) = (0.01 * nyq, 0.99 * nyq);
    let mut components = Vec::with_capacity(q);
    for i in 0..q {
        let inst: Vec<f64> = peaks.iter().map(|p| p[i].0).collect();
        let mu_frames: Vec<f64> = spec
            .input_axis
            .iter()
            .map(|&c| logit.forward(phase_average(&spec.input_axis, &inst, c).clamp(lo, hi)))
            .collect::<Result<_>>()?;
        let log_w: Vec<f64> = peaks
            .iter()
            .map(|p| {
                let total: f64 = p.iter().map(|(_, a)| a * a).sum::<f64>().max(1e-300);
                0.5 * (signal * p[i].1 * p[i].1 / total).max(1e-12).ln()
            })
            .collect();
        let mu = conditional_fit(&prior, &spec.input_axis, &mu_frames, x)?;
        let w = conditional_fit(&prior, &spec.input_axis, &log_w, x)?;
        components.push(GsmComponent {
            w: LatentFunction::from_transformed(x.to_vec(), prior, Transform::Log, &w)?,
            ell: LatentFunction::constant(x.to_vec(), prior, Transform::Log, 1.0)?,
            mu: LatentFunction::from_transformed(x.to_vec(), prior, logit, &mu)?,
        });
    }
    debug!("spectrogram seed from {frames} frames of {window} samples");
    Ok(Some(GsmDimension::new(x.to_vec(), nyq, components)?))
}

/// Seeded frequency function of component `i`, in constrained units.
pub fn seeded_frequency(dim: &GsmDimension, i: usize) -> Vec<f64> {
    dim.components()[i].latent(LatentClass::Frequency).constrained()
}
