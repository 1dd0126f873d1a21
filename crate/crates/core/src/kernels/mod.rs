//! Closed-form kernel functions.
//!
//! Stationary baselines (squared exponential, sparse spectrum, spectral
//! mixture), the Gibbs kernel, the bivariate spectral mixture (BSM) kernel and
//! the generalised spectral mixture (GSM) kernel with its analytic gradients.

mod gsm;
mod product;

pub use gsm::{
    gsm_cross, gsm_eval, gsm_gram, gsm_gram_grad, gsm_gram_values, GsmComponent,
    GsmComponentValues, GsmDimension, GsmParams, GsmPoint, LatentClass, LatentGradient,
    LatentSelector,
};
pub use product::KroneckerGram;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// Squared exponential (Gaussian) kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeParams {
    pub signal_variance: f64,
    pub lengthscale: f64,
}

impl SeParams {
    pub fn new(signal_variance: f64, lengthscale: f64) -> Result<Self> {
        positive("signal variance", signal_variance)?;
        positive("lengthscale", lengthscale)?;
        Ok(SeParams {
            signal_variance,
            lengthscale,
        })
    }
}

pub fn se_eval(params: &SeParams, x: f64, x_prime: f64) -> f64 {
    let d = (x - x_prime) / params.lengthscale;
    params.signal_variance * (-0.5 * d * d).exp()
}

/// Sparse spectrum kernel: an equal-weight mixture of cosines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsParams {
    pub frequencies: Vec<f64>,
}

impl SsParams {
    pub fn new(frequencies: Vec<f64>) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::InvalidParameter("sparse spectrum needs Q >= 1".into()));
        }
        Ok(SsParams { frequencies })
    }
}

pub fn ss_eval(params: &SsParams, tau: f64) -> f64 {
    let q = params.frequencies.len() as f64;
    params
        .frequencies
        .iter()
        .map(|s| (2.0 * PI * s * tau).cos())
        .sum::<f64>()
        / q
}

/// Stationary spectral mixture kernel. Weights enter squared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmParams {
    pub weights: Vec<f64>,
    pub mean_frequencies: Vec<f64>,
    pub frequency_stddevs: Vec<f64>,
}

impl SmParams {
    pub fn new(
        weights: Vec<f64>,
        mean_frequencies: Vec<f64>,
        frequency_stddevs: Vec<f64>,
    ) -> Result<Self> {
        let q = weights.len();
        if q == 0 || mean_frequencies.len() != q || frequency_stddevs.len() != q {
            return Err(Error::InvalidParameter(format!(
                "spectral mixture lists must share a length >= 1: {} / {} / {}",
                q,
                mean_frequencies.len(),
                frequency_stddevs.len()
            )));
        }
        for (w, s) in weights.iter().zip(&frequency_stddevs) {
            positive("mixture weight", *w)?;
            positive("frequency stddev", *s)?;
        }
        Ok(SmParams {
            weights,
            mean_frequencies,
            frequency_stddevs,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `Σ w² exp(−2π²σ²τ²) cos(2πμτ)`.
pub fn sm_eval(params: &SmParams, tau: f64) -> f64 {
    params
        .weights
        .iter()
        .zip(&params.mean_frequencies)
        .zip(&params.frequency_stddevs)
        .map(|((w, mu), sigma)| {
            w * w * (-2.0 * PI * PI * sigma * sigma * tau * tau).exp() * (2.0 * PI * mu * tau).cos()
        })
        .sum()
}

/// Gibbs kernel with input-dependent lengthscales, unit variance.
pub fn gibbs_eval(ell_x: f64, ell_xp: f64, x: f64, x_prime: f64) -> f64 {
    let s = ell_x * ell_x + ell_xp * ell_xp;
    let d = x - x_prime;
    (2.0 * ell_x * ell_xp / s).sqrt() * (-d * d / s).exp()
}

/// One component of the bivariate spectral mixture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BsmComponent {
    pub weight: f64,
    pub mu: f64,
    pub mu_prime: f64,
    pub sigma: f64,
    pub sigma_prime: f64,
    pub rho: f64,
}

impl BsmComponent {
    pub fn validate(&self) -> Result<()> {
        positive("weight", self.weight)?;
        positive("sigma", self.sigma)?;
        positive("sigma_prime", self.sigma_prime)?;
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "correlation must lie in (-1, 1), got {}",
                self.rho
            )));
        }
        if !(self.mu.is_finite() && self.mu_prime.is_finite()) {
            return Err(Error::InvalidParameter("frequencies must be finite".into()));
        }
        Ok(())
    }

    /// Frequency covariance `Σ` as `[[a, b], [b, c]]`.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let off = self.rho * self.sigma * self.sigma_prime;
        [
            [self.sigma * self.sigma, off],
            [off, self.sigma_prime * self.sigma_prime],
        ]
    }

    /// Unconstrained coordinates `(log w, μ, μ', log σ, log σ', atanh ρ)`.
    pub fn to_unconstrained(&self) -> [f64; 6] {
        [
            self.weight.ln(),
            self.mu,
            self.mu_prime,
            self.sigma.ln(),
            self.sigma_prime.ln(),
            self.rho.atanh(),
        ]
    }

    pub fn from_unconstrained(u: [f64; 6]) -> Self {
        BsmComponent {
            weight: u[0].exp(),
            mu: u[1],
            mu_prime: u[2],
            sigma: u[3].exp(),
            sigma_prime: u[4].exp(),
            rho: u[5].tanh(),
        }
    }

    fn psi(&self, x: f64) -> [f64; 2] {
        let (a, b) = (2.0 * PI * self.mu * x, 2.0 * PI * self.mu_prime * x);
        [a.cos() + b.cos(), a.sin() + b.sin()]
    }
}

/// Bivariate spectral mixture parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BsmParams {
    pub components: Vec<BsmComponent>,
}

impl BsmParams {
    pub fn new(components: Vec<BsmComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("BSM needs Q >= 1".into()));
        }
        for c in &components {
            c.validate()?;
        }
        Ok(BsmParams { components })
    }
}

/// `Σ w² exp(−2π² x̃ᵀΣx̃) Ψ(x)ᵀΨ(x′)` with `x̃ = (x, −x′)`.
///
/// The exponential factor is symmetric in its arguments only for
/// components with `σ = σ′`.
pub fn bsm_eval(params: &BsmParams, x: f64, x_prime: f64) -> f64 {
    params
        .components
        .iter()
        .map(|c| {
            let [[a, b], [_, d]] = c.covariance();
            let quad = (a * x * x + d * x_prime * x_prime) - 2.0 * b * (x * x_prime);
            let (p, q) = (c.psi(x), c.psi(x_prime));
            c.weight * c.weight * (-2.0 * PI * PI * quad).exp() * (p[0] * q[0] + p[1] * q[1])
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn se_examples() {
        let unit = SeParams::new(1.0, 1.0).unwrap();
        assert_eq!(se_eval(&unit, 0.7, 0.7), 1.0);
        assert_eq!(se_eval(&SeParams::new(2.0, 1.0).unwrap(), 0.0, 0.0), 2.0);
        assert!((se_eval(&unit, 0.0, 1.0) - (-0.5f64).exp()).abs() < 1e-15);
        assert!(SeParams::new(0.0, 1.0).is_err());
    }

    #[test]
    fn ss_examples() {
        assert_eq!(ss_eval(&SsParams::new(vec![1.0]).unwrap(), 0.0), 1.0);
        assert!((ss_eval(&SsParams::new(vec![0.5]).unwrap(), 1.0) + 1.0).abs() < 1e-15);
        assert_eq!(ss_eval(&SsParams::new(vec![1.0, 2.0]).unwrap(), 0.0), 1.0);
        assert!(SsParams::new(vec![]).is_err());
    }

    #[test]
    fn sm_examples() {
        let p = SmParams::new(vec![1.0], vec![1.0], vec![0.1]).unwrap();
        assert_eq!(sm_eval(&p, 0.0), 1.0);
        let flat = SmParams::new(vec![1.0], vec![0.0], vec![1e-12]).unwrap();
        assert!((sm_eval(&flat, 3.7) - 1.0).abs() < 1e-12);
        let p = SmParams::new(vec![1.0], vec![0.5], vec![0.2]).unwrap();
        let expected = (-2.0 * PI * PI * 0.04 * 0.09).exp() * (0.3 * PI).cos();
        assert!((sm_eval(&p, 0.3) - expected).abs() < 1e-15);
        assert!(SmParams::new(vec![1.0, 2.0], vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn gibbs_examples() {
        assert_eq!(gibbs_eval(0.3, 0.3, 1.2, 1.2), 1.0);
        let c: f64 = 0.7;
        let (x, xp) = (0.2, -0.5);
        let se = (-(x - xp) * (x - xp) / (2.0 * c * c)).exp();
        assert!((gibbs_eval(c, c, x, xp) - se).abs() < 1e-15);
        assert!((gibbs_eval(1.0, 2.0, 0.4, 0.4) - (0.8f64).sqrt()).abs() < 1e-15);
    }

    fn unit_bsm(mu: f64, mu_prime: f64) -> BsmComponent {
        BsmComponent {
            weight: 1.0,
            mu,
            mu_prime,
            sigma: 0.5,
            sigma_prime: 0.5,
            rho: 0.0,
        }
    }

    #[test]
    fn bsm_at_origin() {
        let one = BsmParams::new(vec![unit_bsm(1.3, -0.4)]).unwrap();
        assert!((bsm_eval(&one, 0.0, 0.0) - 4.0).abs() < 1e-15);
        let two = BsmParams::new(vec![unit_bsm(1.0, 2.0), unit_bsm(0.3, 0.9)]).unwrap();
        assert!((bsm_eval(&two, 0.0, 0.0) - 8.0).abs() < 1e-15);
    }

    #[test]
    fn bsm_validation() {
        let mut c = unit_bsm(1.0, 2.0);
        c.rho = 1.0;
        assert!(BsmParams::new(vec![c]).is_err());
        assert!(BsmParams::new(vec![]).is_err());
    }

    #[test]
    fn bsm_unconstrained_round_trip() {
        let c = BsmComponent {
            weight: 0.8,
            mu: 1.1,
            mu_prime: -0.3,
            sigma: 0.4,
            sigma_prime: 0.2,
            rho: -0.6,
        };
        let back = BsmComponent::from_unconstrained(c.to_unconstrained());
        assert!((back.rho - c.rho).abs() < 1e-14);
        assert!((back.weight - c.weight).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn stationary_kernels_are_symmetric(x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let se = SeParams::new(1.3, 0.4).unwrap();
            prop_assert_eq!(se_eval(&se, x, y), se_eval(&se, y, x));
            let sm = SmParams::new(vec![0.5, 1.2], vec![0.7, 2.0], vec![0.3, 0.1]).unwrap();
            prop_assert_eq!(sm_eval(&sm, x - y), sm_eval(&sm, y - x));
        }

        #[test]
        fn gibbs_swap_symmetry(x in -3.0f64..3.0, y in -3.0f64..3.0, l1 in 0.05f64..3.0, l2 in 0.05f64..3.0) {
            let a = gibbs_eval(l1, l2, x, y);
            prop_assert_eq!(a, gibbs_eval(l2, l1, y, x));
            prop_assert!(a > 0.0 && a <= 1.0 + 1e-15);
        }

        #[test]
        fn bsm_symmetric_with_equal_stddevs(
            x in -1.0f64..1.0, y in -1.0f64..1.0,
            mu in -3.0f64..3.0, mup in -3.0f64..3.0,
            sigma in 0.05f64..1.0, rho in -0.95f64..0.95,
        ) {
            let p = BsmParams::new(vec![BsmComponent {
                weight: 1.1, mu, mu_prime: mup, sigma, sigma_prime: sigma, rho,
            }]).unwrap();
            prop_assert_eq!(bsm_eval(&p, x, y), bsm_eval(&p, y, x));
        }
    }
}
