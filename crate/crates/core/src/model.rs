//! The fit artifact: per-dimension kernels, noise level and training data.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{GsmDimension, GsmParams, LatentClass, SeParams, SmParams, SsParams};
use crate::latent::Transform;

/// Kernel family selectable for fitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gsm,
    Sm,
    Ss,
    Se,
}

impl KernelKind {
    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::Gsm => "gsm",
            KernelKind::Sm => "sm",
            KernelKind::Ss => "ss",
            KernelKind::Se => "se",
        }
    }

    pub fn uses_components(&self) -> bool {
        !matches!(self, KernelKind::Se)
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gsm" => Ok(KernelKind::Gsm),
            "sm" => Ok(KernelKind::Sm),
            "ss" => Ok(KernelKind::Ss),
            "se" => Ok(KernelKind::Se),
            other => Err(Error::InvalidParameter(format!("unknown kernel '{other}'"))),
        }
    }
}

/// Kernel of one input dimension. Baseline parameters are stored in the
/// unconstrained coordinates the optimiser works in.
#[derive(Clone, Debug)]
pub enum DimKernel {
    Gsm(GsmDimension),
    Se {
        log_variance: f64,
        log_lengthscale: f64,
    },
    Sm {
        nyquist: f64,
        log_weights: Vec<f64>,
        logit_means: Vec<f64>,
        log_stddevs: Vec<f64>,
    },
    Ss {
        log_variance: f64,
        frequencies: Vec<f64>,
    },
}

impl DimKernel {
    pub fn kind(&self) -> KernelKind {
        match self {
            DimKernel::Gsm(_) => KernelKind::Gsm,
            DimKernel::Se { .. } => KernelKind::Se,
            DimKernel::Sm { .. } => KernelKind::Sm,
            DimKernel::Ss { .. } => KernelKind::Ss,
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            DimKernel::Gsm(d) => 3 * d.q() * d.len(),
            DimKernel::Se { .. } => 2,
            DimKernel::Sm { log_weights, .. } => 3 * log_weights.len(),
            DimKernel::Ss { frequencies, .. } => 1 + frequencies.len(),
        }
    }

    /// Optimisation coordinates (whitened latents for GSM).
    pub fn params(&self) -> Vec<f64> {
        match self {
            DimKernel::Gsm(d) => {
                let mut v = Vec::with_capacity(self.num_params());
                for c in d.components() {
                    for class in LatentClass::ALL {
                        v.extend(c.latent(class).whitened().iter());
                    }
                }
                v
            }
            DimKernel::Se {
                log_variance,
                log_lengthscale,
            } => vec![*log_variance, *log_lengthscale],
            DimKernel::Sm {
                log_weights,
                logit_means,
                log_stddevs,
                ..
            } => {
                let mut v = Vec::with_capacity(self.num_params());
                for q in 0..log_weights.len() {
                    v.extend([log_weights[q], logit_means[q], log_stddevs[q]]);
                }
                v
            }
            DimKernel::Ss {
                log_variance,
                frequencies,
            } => std::iter::once(*log_variance).chain(frequencies.iter().copied()).collect(),
        }
    }

    pub fn set_params(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters supplied, kernel has {}",
                v.len(),
                self.num_params()
            )));
        }
        match self {
            DimKernel::Gsm(d) => {
                let n = d.len();
                let mut chunks = v.chunks(n);
                for c in d.components_mut() {
                    for class in LatentClass::ALL {
                        c.latent_mut(class)
                            .set_whitened(chunks.next().expect("length checked"))?;
                    }
                }
            }
            DimKernel::Se {
                log_variance,
                log_lengthscale,
            } => {
                *log_variance = v[0];
                *log_lengthscale = v[1];
            }
            DimKernel::Sm {
                log_weights,
                logit_means,
                log_stddevs,
                ..
            } => {
                for (q, chunk) in v.chunks(3).enumerate() {
                    log_weights[q] = chunk[0];
                    logit_means[q] = chunk[1];
                    log_stddevs[q] = chunk[2];
                }
            }
            DimKernel::Ss {
                log_variance,
                frequencies,
            } => {
                *log_variance = v[0];
                frequencies.copy_from_slice(&v[1..]);
            }
        }
        Ok(())
    }

    pub fn se_params(&self) -> Option<SeParams> {
        match self {
            DimKernel::Se {
                log_variance,
                log_lengthscale,
            } => Some(SeParams {
                signal_variance: log_variance.exp(),
                lengthscale: log_lengthscale.exp(),
            }),
            _ => None,
        }
    }

    pub fn sm_params(&self) -> Option<SmParams> {
        match self {
            DimKernel::Sm {
                nyquist,
                log_weights,
                logit_means,
                log_stddevs,
            } => {
                let t = Transform::Logit { nyquist: *nyquist };
                Some(SmParams {
                    weights: log_weights.iter().map(|v| v.exp()).collect(),
                    mean_frequencies: logit_means.iter().map(|v| t.inverse(*v)).collect(),
                    frequency_stddevs: log_stddevs.iter().map(|v| v.exp()).collect(),
                })
            }
            _ => None,
        }
    }

    pub fn ss_params(&self) -> Option<(f64, SsParams)> {
        match self {
            DimKernel::Ss {
                log_variance,
                frequencies,
            } => Some((
                log_variance.exp(),
                SsParams {
                    frequencies: frequencies.clone(),
                },
            )),
            _ => None,
        }
    }

    /// Stationary baseline value at lag `tau`.
    fn stationary(&self, tau: f64) -> f64 {
        match self {
            DimKernel::Se { .. } => {
                let p = self.se_params().expect("se");
                let d = tau / p.lengthscale;
                p.signal_variance * (-0.5 * d * d).exp()
            }
            DimKernel::Sm { .. } => crate::kernels::sm_eval(&self.sm_params().expect("sm"), tau),
            DimKernel::Ss { log_variance, .. } => {
                log_variance.exp() * crate::kernels::ss_eval(&self.ss_params().expect("ss").1, tau)
            }
            DimKernel::Gsm(_) => unreachable!("GSM is not stationary"),
        }
    }

    pub fn gram(&self, axis: &[f64]) -> DMatrix<f64> {
        match self {
            DimKernel::Gsm(d) => d.gram(),
            _ => DMatrix::from_fn(axis.len(), axis.len(), |a, b| self.stationary(axis[a] - axis[b])),
        }
    }

    /// `K(test, axis)`.
    pub fn cross(&self, test: &[f64], axis: &[f64]) -> DMatrix<f64> {
        match self {
            DimKernel::Gsm(d) => d.cross(test),
            _ => DMatrix::from_fn(test.len(), axis.len(), |a, b| self.stationary(test[a] - axis[b])),
        }
    }

    /// Prior variance `k(x, x)` at each test input.
    pub fn diag_at(&self, test: &[f64]) -> Vec<f64> {
        match self {
            DimKernel::Gsm(d) => d.diag_at(test),
            _ => vec![self.stationary(0.0); test.len()],
        }
    }

    /// Log prior density of the kernel parameters (zero for baselines).
    pub fn log_prior(&self) -> f64 {
        match self {
            DimKernel::Gsm(d) => d
                .components()
                .iter()
                .flat_map(|c| LatentClass::ALL.map(|class| c.latent(class).log_prior()))
                .sum(),
            _ => 0.0,
        }
    }

    /// Gradient of the likelihood with respect to the *unwhitened* kernel
    /// parameters, given the sensitivity matrix `G` with
    /// `∂ log p(y) / ∂K_ab = G_ab` for this dimension's factor.
    pub fn likelihood_grad_unwhitened(&self, axis: &[f64], sens: &DMatrix<f64>) -> Vec<f64> {
        let contract = |d: &DMatrix<f64>| d.component_mul(sens).sum();
        match self {
            DimKernel::Gsm(d) => {
                let mut out = Vec::with_capacity(self.num_params());
                for i in 0..d.q() {
                    let terms = d.component_terms(i);
                    for rows in &terms.rows {
                        let g = crate::kernels::LatentGradient { rows: rows.clone() };
                        out.extend(g.contract(sens).iter());
                    }
                }
                out
            }
            DimKernel::Se { .. } => {
                let p = self.se_params().expect("se");
                let k = self.gram(axis);
                let dl = DMatrix::from_fn(axis.len(), axis.len(), |a, b| {
                    let d = axis[a] - axis[b];
                    k[(a, b)] * d * d / (p.lengthscale * p.lengthscale)
                });
                vec![contract(&k), contract(&dl)]
            }
            DimKernel::Sm { nyquist, .. } => {
                let p = self.sm_params().expect("sm");
                let t = Transform::Logit { nyquist: *nyquist };
                let logits = match self {
                    DimKernel::Sm { logit_means, .. } => logit_means,
                    _ => unreachable!(),
                };
                let n = axis.len();
                let mut out = Vec::with_capacity(self.num_params());
                for q in 0..p.len() {
                    let (w, mu, s) = (p.weights[q], p.mean_frequencies[q], p.frequency_stddevs[q]);
                    let dmu = t.inverse_derivative(logits[q]);
                    let mut dw = DMatrix::zeros(n, n);
                    let mut dm = DMatrix::zeros(n, n);
                    let mut ds = DMatrix::zeros(n, n);
                    for a in 0..n {
                        for b in 0..n {
                            let tau = axis[a] - axis[b];
                            let env = w * w * (-2.0 * PI * PI * s * s * tau * tau).exp();
                            let arg = 2.0 * PI * mu * tau;
                            let kq = env * arg.cos();
                            dw[(a, b)] = 2.0 * kq;
                            dm[(a, b)] = -env * arg.sin() * 2.0 * PI * tau * dmu;
                            ds[(a, b)] = -4.0 * PI * PI * s * s * tau * tau * kq;
                        }
                    }
                    out.extend([contract(&dw), contract(&dm), contract(&ds)]);
                }
                out
            }
            DimKernel::Ss {
                log_variance,
                frequencies,
            } => {
                let n = axis.len();
                let scale = log_variance.exp() / frequencies.len() as f64;
                let k = self.gram(axis);
                let mut out = vec![contract(&k)];
                for s in frequencies {
                    let d = DMatrix::from_fn(n, n, |a, b| {
                        let tau = axis[a] - axis[b];
                        -scale * (2.0 * PI * s * tau).sin() * 2.0 * PI * tau
                    });
                    out.push(contract(&d));
                }
                out
            }
        }
    }

    /// Likelihood gradient in optimisation coordinates: `Lᵀ ∂/∂θ` for GSM
    /// latents, unchanged for baselines.
    pub fn likelihood_grad(&self, axis: &[f64], sens: &DMatrix<f64>) -> Vec<f64> {
        self.whiten_gradient(&self.likelihood_grad_unwhitened(axis, sens))
    }

    /// Gradient of [`DimKernel::log_prior`] in optimisation coordinates.
    pub fn prior_grad(&self) -> Vec<f64> {
        match self {
            DimKernel::Gsm(_) => self.params().iter().map(|v| -v).collect(),
            _ => vec![0.0; self.num_params()],
        }
    }

    /// Gradient of [`DimKernel::log_prior`] with respect to the unwhitened
    /// latents, `−K⁻¹θ`.
    pub fn prior_grad_unwhitened(&self) -> Vec<f64> {
        match self {
            DimKernel::Gsm(d) => {
                let mut out = Vec::with_capacity(self.num_params());
                for c in d.components() {
                    for class in LatentClass::ALL {
                        let f = c.latent(class);
                        let v = f
                            .chol()
                            .transpose()
                            .solve_upper_triangular(f.whitened())
                            .expect("positive diagonal");
                        out.extend(v.iter().map(|x| -x));
                    }
                }
                out
            }
            _ => vec![0.0; self.num_params()],
        }
    }

    /// Maps an unwhitened gradient to whitened coordinates (`Lᵀ g`).
    pub fn whiten_gradient(&self, g: &[f64]) -> Vec<f64> {
        match self {
            DimKernel::Gsm(d) => {
                let n = d.len();
                let mut out = Vec::with_capacity(g.len());
                let mut chunks = g.chunks(n);
                for c in d.components() {
                    for class in LatentClass::ALL {
                        let v = DVector::from_column_slice(chunks.next().expect("sized"));
                        out.extend(c.latent(class).chol().tr_mul(&v).iter());
                    }
                }
                out
            }
            _ => g.to_vec(),
        }
    }
}

/// Per-restart optimisation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: String,
}

/// Outcome of a training run, embedded in the model file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub kernel: KernelKind,
    pub q: usize,
    pub seed: u64,
    pub selected_restart: usize,
    pub final_objective: f64,
    pub restarts: Vec<RestartSummary>,
}

/// Objective value and gradient in optimisation coordinates (kernel
/// parameters in dimension order, then `log σ_n`).
#[derive(Clone, Debug)]
pub struct Objective {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// GP regression model on a (possibly one-dimensional) complete grid.
#[derive(Clone, Debug)]
pub struct GpModel {
    axes: Vec<Vec<f64>>,
    y: DVector<f64>,
    kernels: Vec<DimKernel>,
    noise_log: f64,
    pub summary: Option<TrainingSummary>,
}

impl GpModel {
    pub fn new(
        axes: Vec<Vec<f64>>,
        y: DVector<f64>,
        kernels: Vec<DimKernel>,
        noise_log: f64,
    ) -> Result<Self> {
        if axes.is_empty() || axes.len() != kernels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} axes for {} kernels",
                axes.len(),
                kernels.len()
            )));
        }
        let total: usize = axes.iter().map(Vec::len).product();
        if total != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "grid has {total} cells but y has {} entries",
                y.len()
            )));
        }
        for (axis, k) in axes.iter().zip(&kernels) {
            if let DimKernel::Gsm(d) = k {
                if d.axis() != axis.as_slice() {
                    return Err(Error::DimensionMismatch(
                        "GSM latents are defined on a different axis".into(),
                    ));
                }
            }
        }
        if !noise_log.is_finite() {
            return Err(Error::InvalidParameter("noise level must be finite".into()));
        }
        let kind = kernels[0].kind();
        if kernels.iter().any(|k| k.kind() != kind) {
            return Err(Error::InvalidParameter(
                "all dimensions must use the same kernel family".into(),
            ));
        }
        Ok(GpModel {
            axes,
            y,
            kernels,
            noise_log,
            summary: None,
        })
    }

    pub fn from_gsm(axes: Vec<Vec<f64>>, y: DVector<f64>, params: GsmParams, noise_log: f64) -> Result<Self> {
        GpModel::new(axes, y, params.dims.into_iter().map(DimKernel::Gsm).collect(), noise_log)
    }

    pub fn kind(&self) -> KernelKind {
        self.kernels[0].kind()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn kernels(&self) -> &[DimKernel] {
        &self.kernels
    }

    pub fn kernels_mut(&mut self) -> &mut [DimKernel] {
        &mut self.kernels
    }

    pub fn noise_log(&self) -> f64 {
        self.noise_log
    }

    pub fn set_noise_log(&mut self, v: f64) {
        self.noise_log = v;
    }

    /// `σ_n²`.
    pub fn noise_var(&self) -> f64 {
        (2.0 * self.noise_log).exp()
    }

    pub fn num_params(&self) -> usize {
        self.kernels.iter().map(DimKernel::num_params).sum::<usize>() + 1
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.kernels.iter().flat_map(DimKernel::params).collect();
        v.push(self.noise_log);
        v
    }

    pub fn set_params(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters supplied, model has {}",
                v.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for k in &mut self.kernels {
            let n = k.num_params();
            k.set_params(&v[offset..offset + n])?;
            offset += n;
        }
        self.noise_log = v[offset];
        Ok(())
    }

    /// GSM parameters, when the model uses the GSM kernel.
    pub fn gsm_dims(&self) -> Option<Vec<&GsmDimension>> {
        self.kernels
            .iter()
            .map(|k| match k {
                DimKernel::Gsm(d) => Some(d),
                _ => None,
            })
            .collect()
    }

    pub fn grams(&self) -> Vec<DMatrix<f64>> {
        self.kernels
            .iter()
            .zip(&self.axes)
            .map(|(k, a)| k.gram(a))
            .collect()
    }

    pub fn log_prior(&self) -> f64 {
        self.kernels.iter().map(DimKernel::log_prior).sum()
    }

    /// Assembles the full objective gradient from per-dimension sensitivity
    /// matrices and the noise derivative.
    pub(crate) fn assemble_gradient(&self, sens: &[DMatrix<f64>], noise_grad: f64) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.num_params());
        for ((k, axis), s) in self.kernels.iter().zip(&self.axes).zip(sens) {
            let lik = k.likelihood_grad(axis, s);
            let prior = k.prior_grad();
            g.extend(lik.iter().zip(&prior).map(|(a, b)| a + b));
        }
        g.push(noise_grad);
        g
    }

    pub(crate) fn assemble_gradient_unwhitened(&self, sens: &[DMatrix<f64>], noise_grad: f64) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.num_params());
        for ((k, axis), s) in self.kernels.iter().zip(&self.axes).zip(sens) {
            let lik = k.likelihood_grad_unwhitened(axis, s);
            let prior = k.prior_grad_unwhitened();
            g.extend(lik.iter().zip(&prior).map(|(a, b)| a + b));
        }
        g.push(noise_grad);
        g
    }

    /// Applies `Lᵀ` blockwise to an unwhitened gradient.
    pub fn whiten_gradient(&self, g: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(g.len());
        let mut offset = 0;
        for k in &self.kernels {
            let n = k.num_params();
            out.extend(k.whiten_gradient(&g[offset..offset + n]));
            offset += n;
        }
        out.extend_from_slice(&g[offset..]);
        out
    }
}
