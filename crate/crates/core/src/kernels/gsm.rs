use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{HyperPrior, LatentFunction, Transform};

/// Values of one mixture component at a single input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GsmPoint {
    pub w: f64,
    pub ell: f64,
    pub mu: f64,
}

/// `Σ_i w_i(x) w_i(x′) k_gibbs,i(x, x′) cos(2π(μ_i(x)x − μ_i(x′)x′))`.
pub fn gsm_eval(at_x: &[GsmPoint], at_x_prime: &[GsmPoint], x: f64, x_prime: f64) -> f64 {
    debug_assert_eq!(at_x.len(), at_x_prime.len());
    at_x.iter()
        .zip(at_x_prime)
        .map(|(a, b)| {
            let s = a.ell * a.ell + b.ell * b.ell;
            let d = x - x_prime;
            let gibbs = (2.0 * a.ell * b.ell / s).sqrt() * (-d * d / s).exp();
            a.w * b.w * gibbs * (2.0 * PI * (a.mu * x - b.mu * x_prime)).cos()
        })
        .sum()
}

/// One component's weight, lengthscale and frequency at a set of inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct GsmComponentValues {
    pub w: Vec<f64>,
    pub ell: Vec<f64>,
    pub mu: Vec<f64>,
}

impl GsmComponentValues {
    pub fn constant(n: usize, w: f64, ell: f64, mu: f64) -> Self {
        GsmComponentValues {
            w: vec![w; n],
            ell: vec![ell; n],
            mu: vec![mu; n],
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn point(&self, i: usize) -> GsmPoint {
        GsmPoint {
            w: self.w[i],
            ell: self.ell[i],
            mu: self.mu[i],
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.w.len() != n || self.ell.len() != n || self.mu.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "component values have lengths {}/{}/{}, expected {n}",
                self.w.len(),
                self.ell.len(),
                self.mu.len()
            )));
        }
        let bad = self
            .w
            .iter()
            .chain(&self.ell)
            .any(|v| !(*v > 0.0 && v.is_finite()))
            || self.mu.iter().any(|m| !m.is_finite());
        if bad {
            return Err(Error::InvalidParameter(
                "component weights and lengthscales must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Gram matrix of the GSM kernel from explicit component values.
pub fn gsm_gram_values(axis: &[f64], comps: &[GsmComponentValues]) -> Result<DMatrix<f64>> {
    gsm_cross(axis, comps, axis, comps)
}

/// Cross-covariance between inputs `xa` and `xb` with their component values.
pub fn gsm_cross(
    xa: &[f64],
    comps_a: &[GsmComponentValues],
    xb: &[f64],
    comps_b: &[GsmComponentValues],
) -> Result<DMatrix<f64>> {
    if comps_a.len() != comps_b.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} mixture components",
            comps_a.len(),
            comps_b.len()
        )));
    }
    for c in comps_a {
        c.validate(xa.len())?;
    }
    for c in comps_b {
        c.validate(xb.len())?;
    }
    let mut k = DMatrix::zeros(xa.len(), xb.len());
    let mut pa = vec![GsmPoint { w: 0.0, ell: 0.0, mu: 0.0 }; comps_a.len()];
    let mut pb = pa.clone();
    for i in 0..xa.len() {
        for (slot, c) in pa.iter_mut().zip(comps_a) {
            *slot = c.point(i);
        }
        for j in 0..xb.len() {
            for (slot, c) in pb.iter_mut().zip(comps_b) {
                *slot = c.point(j);
            }
            k[(i, j)] = gsm_eval(&pa, &pb, xa[i], xb[j]);
        }
    }
    Ok(k)
}

/// Which hyperfunction of a component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentClass {
    #[serde(rename = "w")]
    Weight,
    #[serde(rename = "ell")]
    Lengthscale,
    #[serde(rename = "mu")]
    Frequency,
}

impl LatentClass {
    pub const ALL: [LatentClass; 3] = [
        LatentClass::Weight,
        LatentClass::Lengthscale,
        LatentClass::Frequency,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LatentClass::Weight => "w",
            LatentClass::Lengthscale => "ell",
            LatentClass::Frequency => "mu",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentSelector {
    pub component: usize,
    pub class: LatentClass,
}

/// The three hyperfunctions of one mixture component.
#[derive(Clone, Debug)]
pub struct GsmComponent {
    pub w: LatentFunction,
    pub ell: LatentFunction,
    pub mu: LatentFunction,
}

impl GsmComponent {
    pub fn latent(&self, class: LatentClass) -> &LatentFunction {
        match class {
            LatentClass::Weight => &self.w,
            LatentClass::Lengthscale => &self.ell,
            LatentClass::Frequency => &self.mu,
        }
    }

    pub fn latent_mut(&mut self, class: LatentClass) -> &mut LatentFunction {
        match class {
            LatentClass::Weight => &mut self.w,
            LatentClass::Lengthscale => &mut self.ell,
            LatentClass::Frequency => &mut self.mu,
        }
    }

    pub fn values(&self) -> GsmComponentValues {
        GsmComponentValues {
            w: self.w.constrained(),
            ell: self.ell.constrained(),
            mu: self.mu.constrained(),
        }
    }

    /// Component values at arbitrary inputs via latent extension.
    pub fn extend(&self, inputs: &[f64]) -> GsmComponentValues {
        GsmComponentValues {
            w: self.w.extend(inputs),
            ell: self.ell.extend(inputs),
            mu: self.mu.extend(inputs),
        }
    }
}

/// GSM kernel parameters of one input dimension.
#[derive(Clone, Debug)]
pub struct GsmDimension {
    axis: Vec<f64>,
    nyquist: f64,
    components: Vec<GsmComponent>,
}

impl GsmDimension {
    pub fn new(axis: Vec<f64>, nyquist: f64, components: Vec<GsmComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("GSM needs Q >= 1".into()));
        }
        for c in &components {
            for class in LatentClass::ALL {
                let f = c.latent(class);
                if f.axis() != axis.as_slice() {
                    return Err(Error::DimensionMismatch(format!(
                        "latent {} is defined on a different axis",
                        class.name()
                    )));
                }
                let expected = match class {
                    LatentClass::Frequency => Transform::logit(nyquist)?,
                    _ => Transform::Log,
                };
                if f.transform() != expected {
                    return Err(Error::InvalidParameter(format!(
                        "latent {} must use the {:?} transform",
                        class.name(),
                        expected
                    )));
                }
            }
        }
        Ok(GsmDimension {
            axis,
            nyquist,
            components,
        })
    }

    /// Draws every latent from its prior.
    pub fn sample_prior<R: Rng + ?Sized>(
        axis: Vec<f64>,
        nyquist: f64,
        q: usize,
        prior: HyperPrior,
        rng: &mut R,
    ) -> Result<Self> {
        let logit = Transform::logit(nyquist)?;
        let components = (0..q)
            .map(|_| {
                Ok(GsmComponent {
                    w: LatentFunction::sample_prior_with(prior, Transform::Log, axis.clone(), rng)?,
                    ell: LatentFunction::sample_prior_with(prior, Transform::Log, axis.clone(), rng)?,
                    mu: LatentFunction::sample_prior_with(prior, logit, axis.clone(), rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        GsmDimension::new(axis, nyquist, components)
    }

    /// Constant hyperfunctions `(w, ell, mu)` per component.
    pub fn constant(
        axis: Vec<f64>,
        nyquist: f64,
        prior: HyperPrior,
        values: &[(f64, f64, f64)],
    ) -> Result<Self> {
        let logit = Transform::logit(nyquist)?;
        let components = values
            .iter()
            .map(|&(w, ell, mu)| {
                Ok(GsmComponent {
                    w: LatentFunction::constant(axis.clone(), prior, Transform::Log, w)?,
                    ell: LatentFunction::constant(axis.clone(), prior, Transform::Log, ell)?,
                    mu: LatentFunction::constant(axis.clone(), prior, logit, mu)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        GsmDimension::new(axis, nyquist, components)
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn nyquist(&self) -> f64 {
        self.nyquist
    }

    pub fn components(&self) -> &[GsmComponent] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [GsmComponent] {
        &mut self.components
    }

    pub fn len(&self) -> usize {
        self.axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis.is_empty()
    }

    pub fn q(&self) -> usize {
        self.components.len()
    }

    pub fn values(&self) -> Vec<GsmComponentValues> {
        self.components.iter().map(GsmComponent::values).collect()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        gsm_gram_values(&self.axis, &self.values()).expect("latent values are valid by construction")
    }

    /// Cross-covariance `K(test, axis)`, extending the latents to `test`.
    pub fn cross(&self, test: &[f64]) -> DMatrix<f64> {
        let ext: Vec<_> = self.components.iter().map(|c| c.extend(test)).collect();
        gsm_cross(test, &ext, &self.axis, &self.values()).expect("extended values are valid")
    }

    /// Prior variance `k(x, x) = Σ w_i(x)²` at arbitrary inputs.
    pub fn diag_at(&self, test: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; test.len()];
        for c in &self.components {
            for (acc, w) in d.iter_mut().zip(c.w.extend(test)) {
                *acc += w * w;
            }
        }
        d
    }

    /// One-sided derivative rows for every latent class of component `i`.
    pub(crate) fn component_terms(&self, i: usize) -> ComponentTerms {
        let c = &self.components[i];
        let x = &self.axis;
        let n = x.len();
        let (w, ell, mu) = (c.w.constrained(), c.ell.constrained(), c.mu.constrained());
        let dmu = c.mu.constrained_derivative();
        let mut e_w = DMatrix::zeros(n, n);
        let mut e_ell = DMatrix::zeros(n, n);
        let mut e_mu = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                let s = ell[a] * ell[a] + ell[b] * ell[b];
                let d = x[a] - x[b];
                let gibbs = (2.0 * ell[a] * ell[b] / s).sqrt() * (-d * d / s).exp();
                let phase = 2.0 * PI * (mu[a] * x[a] - mu[b] * x[b]);
                let amp = w[a] * w[b] * gibbs;
                let kab = amp * phase.cos();
                e_w[(a, b)] = kab;
                let la2 = ell[a] * ell[a];
                e_ell[(a, b)] = kab * (0.5 - la2 / s + 2.0 * d * d * la2 / (s * s));
                e_mu[(a, b)] = -amp * phase.sin() * 2.0 * PI * x[a] * dmu[a];
            }
        }
        ComponentTerms {
            rows: [e_w, e_ell, e_mu],
        }
    }
}

pub(crate) struct ComponentTerms {
    /// One-sided derivative rows in [`LatentClass::ALL`] order.
    pub rows: [DMatrix<f64>; 3],
}

/// Full GSM parameter set: one [`GsmDimension`] per input dimension.
#[derive(Clone, Debug)]
pub struct GsmParams {
    pub dims: Vec<GsmDimension>,
}

/// GSM Gram matrix of one dimension on `axis`.
pub fn gsm_gram(dim: &GsmDimension, axis: &[f64]) -> Result<DMatrix<f64>> {
    if axis.len() != dim.len() {
        return Err(Error::DimensionMismatch(format!(
            "axis has {} inputs, latents have {}",
            axis.len(),
            dim.len()
        )));
    }
    gsm_gram_values(axis, &dim.values())
}

/// Derivatives of a dimension's Gram matrix with respect to every entry of
/// one transformed latent vector.
///
/// A latent value at input `j` only touches row and column `j`, so all `N`
/// derivative matrices are stored as one matrix of one-sided rows `E`:
/// `∂K/∂θ_j = e_j E_jᵀ + E_j e_jᵀ`.
#[derive(Clone, Debug)]
pub struct LatentGradient {
    pub rows: DMatrix<f64>,
}

impl LatentGradient {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    /// Materialised `∂K/∂θ_j`.
    pub fn matrix(&self, j: usize) -> DMatrix<f64> {
        let n = self.rows.nrows();
        let mut m = DMatrix::zeros(n, n);
        for b in 0..n {
            m[(j, b)] += self.rows[(j, b)];
            m[(b, j)] += self.rows[(j, b)];
        }
        m
    }

    /// `Σ_ab (∂K/∂θ_j)_ab G_ab` for every `j`.
    pub fn contract(&self, g: &DMatrix<f64>) -> DVector<f64> {
        let n = self.rows.nrows();
        DVector::from_fn(n, |j, _| {
            (0..n)
                .map(|b| self.rows[(j, b)] * (g[(j, b)] + g[(b, j)]))
                .sum()
        })
    }
}

pub fn gsm_gram_grad(dim: &GsmDimension, selector: LatentSelector) -> Result<LatentGradient> {
    if selector.component >= dim.q() {
        return Err(Error::InvalidParameter(format!(
            "component {} out of range for Q = {}",
            selector.component,
            dim.q()
        )));
    }
    let terms = dim.component_terms(selector.component);
    let idx = LatentClass::ALL
        .iter()
        .position(|c| *c == selector.class)
        .expect("class is one of ALL");
    Ok(LatentGradient {
        rows: terms.rows[idx].clone(),
    })
}
