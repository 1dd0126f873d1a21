//! Executable property suites: kernel validity, spectral oracles, gradients,
//! Kronecker equivalence and round-trips.

use std::fmt;
use std::time::Instant;

use nalgebra::{DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gp::{dense_gradient_unwhitened, dense_log_posterior, dense_objective, dense_predict};
use crate::kernels::{gsm_eval, sm_eval, BsmComponent, BsmParams, GsmDimension, GsmParams, GsmPoint, SmParams};
use crate::kronecker::{kron_model_log_posterior, kron_objective, kron_predict};
use crate::latent::{nyquist_for_axis, unwhiten, whiten, HyperPrior, Transform};
use crate::model::GpModel;
use crate::modelfile::{model_from_str, model_to_string};
use crate::spectral::{SpectralSurface, SurfaceGrid, QuadratureSpec, BSM_TRANSFORM_SCALE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Comparison {
    AtMost,
    AtLeast,
}

/// One measured property against its threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub comparison: Comparison,
}

impl CheckResult {
    pub fn at_most(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        CheckResult {
            name: name.into(),
            measured,
            threshold,
            comparison: Comparison::AtMost,
        }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        CheckResult {
            name: name.into(),
            measured,
            threshold,
            comparison: Comparison::AtLeast,
        }
    }

    pub fn passed(&self) -> bool {
        match self.comparison {
            Comparison::AtMost => self.measured <= self.threshold,
            Comparison::AtLeast => self.measured >= self.threshold,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.comparison {
            Comparison::AtMost => "<=",
            Comparison::AtLeast => ">=",
        };
        write!(
            f,
            "{} {}: {:.3e} (required {op} {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Psd,
    Fourier,
    Gradient,
    Kronecker,
    Reduction,
    Whitening,
    RoundTrip,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Psd,
        Suite::Fourier,
        Suite::Gradient,
        Suite::Kronecker,
        Suite::Reduction,
        Suite::Whitening,
        Suite::RoundTrip,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Psd => "psd",
            Suite::Fourier => "fourier",
            Suite::Gradient => "gradient",
            Suite::Kronecker => "kronecker",
            Suite::Reduction => "reduction",
            Suite::Whitening => "whitening",
            Suite::RoundTrip => "roundtrip",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown check suite '{s}'")))
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckResult>> {
    match suite {
        Suite::Psd => psd_suite(seed),
        Suite::Fourier => fourier_suite(seed),
        Suite::Gradient => gradient_suite(seed),
        Suite::Kronecker => kronecker_suite(seed, true),
        Suite::Reduction => reduction_suite(seed),
        Suite::Whitening => whitening_suite(seed),
        Suite::RoundTrip => round_trip_suite(seed),
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    crate::data::linspace(a, b, n)
}

/// `max|a − b| / max|b|`.
pub fn normalised_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Largest `|a − b| / max(|a|, 1e-8)`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(1e-8))
        .fold(0.0, f64::max)
}

/// GSM model with prior-sampled latents and uniform outputs on `[-1, 1]` grids.
pub fn random_gsm_model(shape: &[usize], q: usize, seed: u64) -> Result<GpModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axes: Vec<Vec<f64>> = shape.iter().map(|&n| linspace(-1.0, 1.0, n)).collect();
    let dims = axes
        .iter()
        .map(|a| GsmDimension::sample_prior(a.clone(), nyquist_for_axis(a)?, q, HyperPrior::for_axis(a), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    GpModel::from_gsm(axes, y, GsmParams { dims }, -1.0)
}

// ---------------------------------------------------------------------------

pub const PSD_DRAWS: usize = 50;
pub const PSD_INPUTS: usize = 50;

/// Smallest eigenvalue relative to the largest over random GSM draws.
fn psd_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..PSD_DRAWS {
        let q = rng.random_range(1..=3);
        let lo = rng.random_range(-5.0..0.0);
        let axis = linspace(lo, lo + rng.random_range(1.0..10.0), PSD_INPUTS);
        let dim = GsmDimension::sample_prior(axis.clone(), nyquist_for_axis(&axis)?, q, HyperPrior::for_axis(&axis), &mut rng)?;
        let eig = SymmetricEigen::new(dim.gram());
        worst = worst.min(eig.eigenvalues.min() / eig.eigenvalues.max());
    }
    Ok(vec![CheckResult::at_least(
        format!("min eigenvalue / max eigenvalue over {PSD_DRAWS} GSM Grams (N = {PSD_INPUTS})"),
        worst,
        -1e-8,
    )])
}

// ---------------------------------------------------------------------------

/// Quadrature nodes per axis for the BSM accuracy comparison.
pub const FOURIER_POINTS: usize = 401;

/// Coarse node count for the convergence check, where the trapezoid error
/// still dominates round-off; the fine rule halves its spacing.
pub const CONVERGENCE_POINTS: usize = 31;

pub fn random_bsm(q: usize, rng: &mut ChaCha8Rng) -> Result<BsmParams> {
    BsmParams::new(
        (0..q)
            .map(|_| BsmComponent {
                weight: rng.random_range(0.5..1.5),
                mu: rng.random_range(-2.0..2.0),
                mu_prime: rng.random_range(-2.0..2.0),
                sigma: rng.random_range(0.3..1.0),
                sigma_prime: rng.random_range(0.3..1.0),
                rho: rng.random_range(-0.6..0.6),
            })
            .collect(),
    )
}

/// Normalised residual between the closed form and the trapezoid transform
/// on a 5×5 grid in `[-1, 1]²`.
pub fn bsm_quadrature_residual(params: &BsmParams, points: usize) -> Result<f64> {
    let surface = SpectralSurface::new(params.clone());
    let grid = SurfaceGrid::new(&surface, QuadratureSpec::with_points(points))?;
    let xs = linspace(-1.0, 1.0, 5);
    let mut numeric = Vec::new();
    let mut exact = Vec::new();
    for &x in &xs {
        for &xp in &xs {
            numeric.push(BSM_TRANSFORM_SCALE * grid.transform(x, xp).re);
            exact.push(crate::kernels::bsm_eval(params, x, xp));
        }
    }
    Ok(normalised_error(&numeric, &exact))
}

fn fourier_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for q in [1, 3] {
        let params = random_bsm(q, &mut rng)?;
        out.push(CheckResult::at_most(
            format!("BSM vs quadrature, Q = {q}, {FOURIER_POINTS} nodes"),
            bsm_quadrature_residual(&params, FOURIER_POINTS)?,
            1e-3,
        ));
        let coarse = bsm_quadrature_residual(&params, CONVERGENCE_POINTS)?;
        let fine = bsm_quadrature_residual(&params, 2 * CONVERGENCE_POINTS - 1)?;
        out.push(CheckResult::at_least(
            format!("BSM residual reduction from {CONVERGENCE_POINTS} to {} nodes, Q = {q}", 2 * CONVERGENCE_POINTS - 1),
            coarse / fine.max(f64::MIN_POSITIVE),
            2.0,
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

/// Central differences of the dense log posterior in whitened coordinates.
pub fn finite_difference_gradient(model: &GpModel, step: f64) -> Result<Vec<f64>> {
    let base = model.params();
    let mut m = model.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + step;
        m.set_params(&p)?;
        let up = dense_log_posterior(&m)?;
        p[i] = base[i] - step;
        m.set_params(&p)?;
        let down = dense_log_posterior(&m)?;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

fn gradient_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (shape, q, label) in [(vec![20], 2, "Q = 2, N = 20, P = 1"), (vec![5, 5], 1, "Q = 1, 5x5, P = 2")] {
        let model = random_gsm_model(&shape, q, seed)?;
        let analytic = dense_objective(&model)?.grad;
        let numeric = finite_difference_gradient(&model, 1e-5)?;
        out.push(CheckResult::at_most(
            format!("whitened gradient vs central differences, {label}"),
            max_relative_error(&analytic, &numeric),
            1e-4,
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

/// Relative agreement of the Kronecker and dense paths on small grids, and
/// optionally the 64×64 timing comparison.
pub fn kronecker_suite(seed: u64, timing: bool) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for shape in [vec![8, 8], vec![4, 4, 4]] {
        let label = shape.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("x");
        let model = random_gsm_model(&shape, 1, seed)?;
        let kl = kron_model_log_posterior(&model)?;
        let dl = dense_log_posterior(&model)?;
        out.push(CheckResult::at_most(
            format!("log posterior, Kronecker vs dense, {label}"),
            (kl - dl).abs() / dl.abs().max(1e-300),
            1e-6,
        ));
        let kg = kron_objective(&model)?.grad;
        let dg = dense_objective(&model)?.grad;
        out.push(CheckResult::at_most(
            format!("gradient, Kronecker vs dense, {label}"),
            normalised_error(&kg, &dg),
            1e-6,
        ));
        let test: Vec<Vec<f64>> = shape.iter().map(|_| linspace(-1.2, 1.2, 5)).collect();
        let kp = kron_predict(&model, &test)?;
        let dp = dense_predict(&model, &test)?;
        out.push(CheckResult::at_most(
            format!("predictive mean, Kronecker vs dense, {label}"),
            normalised_error(&kp.mean, &dp.mean),
            1e-6,
        ));
        out.push(CheckResult::at_most(
            format!("predictive variance, Kronecker vs dense, {label}"),
            normalised_error(&kp.variance, &dp.variance),
            1e-6,
        ));
    }
    if timing {
        let (kron, dense) = kronecker_timing(64, seed)?;
        out.push(CheckResult::at_least(
            "dense / Kronecker log-posterior wall-clock at 64x64",
            dense / kron,
            1.0,
        ));
    }
    Ok(out)
}

/// Seconds for one Kronecker and one dense log-posterior evaluation on an
/// `n × n` grid.
pub fn kronecker_timing(n: usize, seed: u64) -> Result<(f64, f64)> {
    let model = random_gsm_model(&[n, n], 1, seed)?;
    let t = Instant::now();
    let k = kron_model_log_posterior(&model)?;
    let kron = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let d = dense_log_posterior(&model)?;
    let dense = t.elapsed().as_secs_f64();
    if !(k.is_finite() && d.is_finite()) {
        return Err(Error::Optimisation("non-finite log posterior in timing run".into()));
    }
    Ok((kron, dense))
}

// ---------------------------------------------------------------------------

pub const REDUCTION_PAIRS: usize = 100;

fn reduction_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mu, sigma) = (0.5, 0.2);
    let point = GsmPoint {
        w: 1.0,
        ell: 1.0 / (2.0 * std::f64::consts::PI * sigma),
        mu,
    };
    let sm = SmParams::new(vec![1.0], vec![mu], vec![sigma])?;
    let mut worst: f64 = 0.0;
    for _ in 0..REDUCTION_PAIRS {
        let x = rng.random_range(-5.0..5.0);
        let xp = rng.random_range(-5.0..5.0);
        let g = gsm_eval(&[point], &[point], x, xp);
        worst = worst.max((g - sm_eval(&sm, x - xp)).abs());
    }
    Ok(vec![CheckResult::at_most(
        format!("constant-latent GSM vs SM over {REDUCTION_PAIRS} input pairs"),
        worst,
        1e-10,
    )])
}

// ---------------------------------------------------------------------------

fn whitening_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut worst: f64 = 0.0;
    for (i, shape) in [vec![12], vec![9], vec![4, 5]].iter().enumerate() {
        let model = random_gsm_model(shape, 1 + i % 2, seed + i as u64)?;
        let direct = dense_objective(&model)?.grad;
        let mapped = model.whiten_gradient(&dense_gradient_unwhitened(&model)?);
        worst = worst.max(normalised_error(&mapped, &direct));
    }
    Ok(vec![CheckResult::at_most(
        "L^T (unwhitened gradient) vs whitened gradient",
        worst,
        1e-8,
    )])
}

// ---------------------------------------------------------------------------

fn round_trip_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transform_err: f64 = 0.0;
    for _ in 0..200 {
        let nyq = rng.random_range(0.5..100.0);
        let cases = [
            (Transform::Log, 10f64.powf(rng.random_range(-3.0..3.0))),
            (Transform::Logit { nyquist: nyq }, nyq * rng.random_range(0.001..0.999)),
        ];
        for (t, v) in cases {
            let back = t.inverse(t.forward(v)?);
            transform_err = transform_err.max((back - v).abs() / v.abs());
        }
    }
    let axis = linspace(-1.0, 1.0, 30);
    let chol = HyperPrior::for_axis(&axis).cholesky(&axis)?;
    let mut whiten_err: f64 = 0.0;
    for _ in 0..20 {
        let v = DVector::from_fn(30, |_, _| rng.random_range(-2.0..2.0));
        let back = unwhiten(&whiten(&v, &chol)?, &chol)?;
        whiten_err = whiten_err.max((back - &v).amax());
    }
    let model = random_gsm_model(&[6, 5], 2, seed)?;
    let text = model_to_string(&model)?;
    let loaded = model_from_str(&text)?;
    let identical = model_to_string(&loaded)? == text;
    let test = vec![linspace(-1.3, 1.3, 4), linspace(-0.5, 1.5, 3)];
    let a = crate::gp::predict(&model, &test)?;
    let b = crate::gp::predict(&loaded, &test)?;
    let predict_err = a
        .mean
        .iter()
        .chain(&a.variance)
        .zip(b.mean.iter().chain(&b.variance))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    Ok(vec![
        CheckResult::at_most("transform inverse(forward(v)) relative error", transform_err, 1e-12),
        CheckResult::at_most("unwhiten(whiten(v)) error", whiten_err, 1e-10),
        CheckResult::at_least(
            "model file save-load-save byte identical (1 = yes)",
            if identical { 1.0 } else { 0.0 },
            1.0,
        ),
        CheckResult::at_most("prediction change after model file round trip", predict_err, 1e-12),
    ])
}
