//! GP-distributed hyperfunctions.
//!
//! Every input-dependent kernel parameter (a weight, lengthscale or frequency
//! function of one input dimension) is a [`LatentFunction`]: a zero-mean GP
//! over the transformed values, stored in whitened coordinates
//! `θ̃ = L⁻¹θ` where `L` is the Cholesky factor of the prior Gram matrix.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Output transform mapping an unconstrained latent value onto the range of
/// the kernel parameter it represents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Transform {
    /// Positive parameters (weights, lengthscales).
    Log,
    /// Frequencies restricted to `(0, nyquist)`.
    Logit { nyquist: f64 },
    Identity,
}

impl Transform {
    pub fn logit(nyquist: f64) -> Result<Self> {
        if !(nyquist > 0.0 && nyquist.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "logit transform needs a positive Nyquist frequency, got {nyquist}"
            )));
        }
        Ok(Transform::Logit { nyquist })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Transform::Log => "log",
            Transform::Logit { .. } => "logit",
            Transform::Identity => "identity",
        }
    }

    /// Constrained value to unconstrained value.
    pub fn forward(&self, constrained: f64) -> Result<f64> {
        let domain_err = || Error::TransformDomain {
            transform: self.name(),
            value: constrained,
        };
        match *self {
            Transform::Log => {
                if constrained > 0.0 && constrained.is_finite() {
                    Ok(constrained.ln())
                } else {
                    Err(domain_err())
                }
            }
            Transform::Logit { nyquist } => {
                if constrained > 0.0 && constrained < nyquist {
                    Ok((constrained / (nyquist - constrained)).ln())
                } else {
                    Err(domain_err())
                }
            }
            Transform::Identity => {
                if constrained.is_finite() {
                    Ok(constrained)
                } else {
                    Err(domain_err())
                }
            }
        }
    }

    /// Unconstrained value to constrained value.
    pub fn inverse(&self, unconstrained: f64) -> f64 {
        match *self {
            Transform::Log => unconstrained.exp(),
            Transform::Logit { nyquist } => nyquist / (1.0 + (-unconstrained).exp()),
            Transform::Identity => unconstrained,
        }
    }

    /// Derivative of [`Transform::inverse`] at `unconstrained`.
    pub fn inverse_derivative(&self, unconstrained: f64) -> f64 {
        match *self {
            Transform::Log => unconstrained.exp(),
            Transform::Logit { nyquist } => {
                let mu = self.inverse(unconstrained);
                mu * (1.0 - mu / nyquist)
            }
            Transform::Identity => 1.0,
        }
    }
}

/// Squared-exponential prior kernel of a latent function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperPrior {
    pub lengthscale: f64,
    pub variance: f64,
    pub jitter: f64,
}

impl HyperPrior {
    pub fn new(lengthscale: f64, variance: f64, jitter: f64) -> Result<Self> {
        let prior = HyperPrior {
            lengthscale,
            variance,
            jitter,
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(self.lengthscale) && ok(self.variance) && ok(self.jitter)) {
            return Err(Error::InvalidParameter(format!(
                "latent prior fields must be positive: {self:?}"
            )));
        }
        if self.jitter > 1e-4 * self.variance {
            return Err(Error::InvalidParameter(format!(
                "latent prior jitter {} exceeds 1e-4 x variance {}",
                self.jitter, self.variance
            )));
        }
        Ok(())
    }

    /// Unit variance, a quarter of the axis range as lengthscale, jitter 1e-6.
    pub fn for_axis(axis: &[f64]) -> Self {
        let range = match (axis.first(), axis.last()) {
            (Some(a), Some(b)) if b > a => b - a,
            _ => 4.0,
        };
        HyperPrior {
            lengthscale: range / 4.0,
            variance: 1.0,
            jitter: 1e-6,
        }
    }

    pub fn cov(&self, x: f64, y: f64) -> f64 {
        let d = (x - y) / self.lengthscale;
        self.variance * (-0.5 * d * d).exp()
    }

    /// Prior covariance between two input sets. Exactly coincident inputs
    /// also receive the jitter, so the jitter acts as a nugget everywhere.
    pub fn cross(&self, a: &[f64], b: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| {
            let mut k = self.cov(a[i], b[j]);
            if a[i] == b[j] {
                k += self.jitter;
            }
            k
        })
    }

    pub fn gram(&self, axis: &[f64]) -> DMatrix<f64> {
        self.cross(axis, axis)
    }

    /// Lower Cholesky factor of the prior Gram matrix on `axis`.
    pub fn cholesky(&self, axis: &[f64]) -> Result<DMatrix<f64>> {
        Cholesky::new(self.gram(axis))
            .map(|c| c.l())
            .ok_or_else(|| {
                Error::NotPositiveDefinite(format!(
                    "latent prior Gram on {} inputs with {self:?}",
                    axis.len()
                ))
            })
    }
}

/// Nyquist frequency of an axis: half the inverse of the smallest gap
/// between consecutive inputs (the sampling rate halved when equispaced).
pub fn nyquist_for_axis(axis: &[f64]) -> Result<f64> {
    let min_gap = axis
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if axis.len() < 2 || !(min_gap > 0.0) || !min_gap.is_finite() {
        return Err(Error::InvalidParameter(
            "Nyquist frequency needs at least two strictly increasing inputs".into(),
        ));
    }
    Ok(1.0 / (2.0 * min_gap))
}

/// `θ̃ = L⁻¹ v` for a lower-triangular factor `L`.
pub fn whiten(values: &DVector<f64>, chol: &DMatrix<f64>) -> Result<DVector<f64>> {
    if chol.nrows() != values.len() || !chol.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "factor is {}x{}, vector has {} entries",
            chol.nrows(),
            chol.ncols(),
            values.len()
        )));
    }
    if chol.diagonal().iter().any(|d| *d == 0.0 || !d.is_finite()) {
        return Err(Error::SingularFactor);
    }
    chol.solve_lower_triangular(values)
        .ok_or(Error::SingularFactor)
}

/// `θ = L θ̃`.
pub fn unwhiten(whitened: &DVector<f64>, chol: &DMatrix<f64>) -> Result<DVector<f64>> {
    if chol.ncols() != whitened.len() {
        return Err(Error::DimensionMismatch(format!(
            "factor is {}x{}, vector has {} entries",
            chol.nrows(),
            chol.ncols(),
            whitened.len()
        )));
    }
    Ok(chol * whitened)
}

/// One GP-distributed hyperfunction realised on a fixed input axis.
#[derive(Clone, Debug)]
pub struct LatentFunction {
    whitened: DVector<f64>,
    prior: HyperPrior,
    transform: Transform,
    axis: Vec<f64>,
    chol: DMatrix<f64>,
    transformed: DVector<f64>,
}

impl LatentFunction {
    pub fn new(
        axis: Vec<f64>,
        prior: HyperPrior,
        transform: Transform,
        whitened: DVector<f64>,
    ) -> Result<Self> {
        prior.validate()?;
        if axis.is_empty() {
            return Err(Error::InvalidParameter("latent axis is empty".into()));
        }
        if whitened.len() != axis.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} whitened values for {} inputs",
                whitened.len(),
                axis.len()
            )));
        }
        let chol = prior.cholesky(&axis)?;
        let transformed = &chol * &whitened;
        Ok(LatentFunction {
            whitened,
            prior,
            transform,
            axis,
            chol,
            transformed,
        })
    }

    /// Builds the function from values in the transformed (unconstrained) domain.
    pub fn from_transformed(
        axis: Vec<f64>,
        prior: HyperPrior,
        transform: Transform,
        values: &[f64],
    ) -> Result<Self> {
        let chol = prior.cholesky(&axis)?;
        let whitened = whiten(&DVector::from_column_slice(values), &chol)?;
        let mut f = LatentFunction::new(axis, prior, transform, whitened)?;
        // keep the requested values rather than L·L⁻¹v round-off
        f.transformed = DVector::from_column_slice(values);
        Ok(f)
    }

    /// Builds the function from constrained values (e.g. frequencies).
    pub fn from_constrained(
        axis: Vec<f64>,
        prior: HyperPrior,
        transform: Transform,
        values: &[f64],
    ) -> Result<Self> {
        let t = values
            .iter()
            .map(|v| transform.forward(*v))
            .collect::<Result<Vec<_>>>()?;
        LatentFunction::from_transformed(axis, prior, transform, &t)
    }

    /// A constant function in the constrained domain.
    pub fn constant(axis: Vec<f64>, prior: HyperPrior, transform: Transform, value: f64) -> Result<Self> {
        let values = vec![value; axis.len()];
        LatentFunction::from_constrained(axis, prior, transform, &values)
    }

    /// Draws the whitened vector i.i.d. standard normal.
    pub fn sample_prior(
        prior: HyperPrior,
        transform: Transform,
        axis: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LatentFunction::sample_prior_with(prior, transform, axis, &mut rng)
    }

    pub fn sample_prior_with<R: Rng + ?Sized>(
        prior: HyperPrior,
        transform: Transform,
        axis: Vec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let whitened = DVector::from_fn(axis.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        LatentFunction::new(axis, prior, transform, whitened)
    }

    pub fn len(&self) -> usize {
        self.axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis.is_empty()
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn prior(&self) -> &HyperPrior {
        &self.prior
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn whitened(&self) -> &DVector<f64> {
        &self.whitened
    }

    pub fn set_whitened(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.whitened.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} whitened values for {} inputs",
                values.len(),
                self.whitened.len()
            )));
        }
        self.whitened.copy_from_slice(values);
        self.transformed = &self.chol * &self.whitened;
        Ok(())
    }

    /// Values in the transformed domain, `L θ̃`.
    pub fn transformed(&self) -> &DVector<f64> {
        &self.transformed
    }

    pub fn constrained(&self) -> Vec<f64> {
        self.transformed
            .iter()
            .map(|t| self.transform.inverse(*t))
            .collect()
    }

    /// `d constrained / d transformed` at every axis input.
    pub fn constrained_derivative(&self) -> Vec<f64> {
        self.transformed
            .iter()
            .map(|t| self.transform.inverse_derivative(*t))
            .collect()
    }

    /// Log density of the transformed values under the prior,
    /// `log N(θ | 0, K)`, evaluated in whitened coordinates.
    pub fn log_prior(&self) -> f64 {
        let n = self.len() as f64;
        let log_det_half: f64 = self.chol.diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * self.whitened.norm_squared() - log_det_half - 0.5 * n * LN_2PI
    }

    /// GP conditional mean of the transformed function at `inputs`.
    pub fn extend_transformed(&self, inputs: &[f64]) -> Vec<f64> {
        // m(x*) = k(x*, X) (K + jI)⁻¹ θ = k(x*, X) L⁻ᵀ θ̃
        let v = self
            .chol
            .transpose()
            .solve_upper_triangular(&self.whitened)
            .expect("prior factor has a positive diagonal");
        let cross = self.prior.cross(inputs, &self.axis);
        (cross * v).iter().copied().collect()
    }

    /// Constrained values at arbitrary inputs via the conditional mean.
    pub fn extend(&self, inputs: &[f64]) -> Vec<f64> {
        self.extend_transformed(inputs)
            .into_iter()
            .map(|t| self.transform.inverse(t))
            .collect()
    }
}
