//! Exact inference on complete grids through per-dimension
//! eigendecompositions `K_p = U_p diag(v_p) U_pᵀ`.
//!
//! Vectors over the grid are stored row-major with the last axis varying
//! fastest, so `K = K₁ ⊗ … ⊗ K_P` in axis order.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::gp::Prediction;
use crate::model::{GpModel, Objective};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Multiplies `m` (rows × shape[mode]) into one mode of a row-major tensor.
fn apply_mode(data: &[f64], shape: &[usize], mode: usize, m: &DMatrix<f64>) -> (Vec<f64>, Vec<usize>) {
    let pre: usize = shape[..mode].iter().product();
    let n = shape[mode];
    let post: usize = shape[mode + 1..].iter().product();
    let rows = m.nrows();
    debug_assert_eq!(m.ncols(), n);
    let mut out = vec![0.0; pre * rows * post];
    for i in 0..pre {
        let src = &data[i * n * post..(i + 1) * n * post];
        let dst = &mut out[i * rows * post..(i + 1) * rows * post];
        for r in 0..rows {
            let drow = &mut dst[r * post..(r + 1) * post];
            for c in 0..n {
                let coef = m[(r, c)];
                if coef == 0.0 {
                    continue;
                }
                let srow = &src[c * post..(c + 1) * post];
                for (d, s) in drow.iter_mut().zip(srow) {
                    *d += coef * s;
                }
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[mode] = rows;
    (out, new_shape)
}

/// `(A₁ ⊗ … ⊗ A_P) v` without forming the product. Factors may be
/// rectangular.
pub fn kron_mvm(factors: &[DMatrix<f64>], v: &DVector<f64>) -> Result<DVector<f64>> {
    if factors.is_empty() {
        return Err(Error::InvalidParameter("no Kronecker factors".into()));
    }
    let cols: usize = factors.iter().map(|f| f.ncols()).product();
    if cols != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "Kronecker product has {cols} columns, vector has {} entries",
            v.len()
        )));
    }
    let mut shape: Vec<usize> = factors.iter().map(|f| f.ncols()).collect();
    let mut data = v.as_slice().to_vec();
    for (p, f) in factors.iter().enumerate() {
        let (d, s) = apply_mode(&data, &shape, p, f);
        data = d;
        shape = s;
    }
    Ok(DVector::from_vec(data))
}

/// Per-dimension symmetric eigendecompositions.
#[derive(Clone, Debug)]
pub struct KronEig {
    pub vectors: Vec<DMatrix<f64>>,
    pub values: Vec<DVector<f64>>,
}

impl KronEig {
    /// Negative eigenvalues (round-off on PSD factors) are clamped to zero.
    pub fn new(factors: &[DMatrix<f64>]) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidParameter("no Kronecker factors".into()));
        }
        let mut vectors = Vec::with_capacity(factors.len());
        let mut values = Vec::with_capacity(factors.len());
        for (p, f) in factors.iter().enumerate() {
            if !f.is_square() {
                return Err(Error::DimensionMismatch(format!("factor {p} is not square")));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("factor {p} has non-finite entries")));
            }
            let eig = SymmetricEigen::new(f.clone());
            vectors.push(eig.eigenvectors);
            values.push(eig.eigenvalues.map(|v| v.max(0.0)));
        }
        Ok(KronEig { vectors, values })
    }

    pub fn shape(&self) -> Vec<usize> {
        self.values.iter().map(|v| v.len()).collect()
    }

    /// Eigenvalues of the full product, `⊗_p v_p`.
    pub fn combined_values(&self) -> DVector<f64> {
        let mut d = DVector::from_element(1, 1.0);
        for v in &self.values {
            d = d.kronecker(v);
        }
        d
    }

    fn transposed(&self) -> Vec<DMatrix<f64>> {
        self.vectors.iter().map(|u| u.transpose()).collect()
    }

    fn shifted_inverse(&self, noise_var: f64) -> Result<DVector<f64>> {
        let lam = self.combined_values();
        if let Some(bad) = lam.iter().find(|l| !(*l + noise_var > 0.0)) {
            return Err(Error::NotPositiveDefinite(format!(
                "shifted eigenvalue {} is not positive",
                bad + noise_var
            )));
        }
        Ok(lam.map(|l| 1.0 / (l + noise_var)))
    }
}

/// `α = (K + σ²I)⁻¹ y = U (Λ + σ²I)⁻¹ Uᵀ y`.
pub fn kron_solve(eig: &KronEig, noise_var: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
    let inv = eig.shifted_inverse(noise_var)?;
    let rotated = kron_mvm(&eig.transposed(), y)?;
    kron_mvm(&eig.vectors, &rotated.component_mul(&inv))
}

/// `log N(y | 0, K + σ²I)` including the `2π` constant.
pub fn kron_log_likelihood(eig: &KronEig, noise_var: f64, y: &DVector<f64>) -> Result<f64> {
    let alpha = kron_solve(eig, noise_var, y)?;
    let log_det: f64 = eig
        .combined_values()
        .iter()
        .map(|l| (l + noise_var).ln())
        .sum();
    Ok(-0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * y.len() as f64 * LN_2PI)
}

/// Log likelihood plus the supplied log-prior terms.
pub fn kron_log_posterior(eig: &KronEig, noise_var: f64, y: &DVector<f64>, prior_terms: f64) -> Result<f64> {
    Ok(kron_log_likelihood(eig, noise_var, y)? + prior_terms)
}

/// Likelihood derivatives in factored form.
#[derive(Clone, Debug)]
pub struct Sensitivities {
    pub log_likelihood: f64,
    /// `G_p` with `∂ log p(y)/∂θ = Σ_ab (∂K_p/∂θ)_ab (G_p)_ab` for any
    /// parameter that only moves factor `p`.
    pub per_dim: Vec<DMatrix<f64>>,
    /// `∂ log p(y) / ∂ log σ_n`.
    pub noise: f64,
}

/// Computes the quadratic and trace terms of
/// `½(αᵀ ∂K α − tr((K+σ²I)⁻¹ ∂K))` for every dimension at once.
pub fn kron_sensitivities(
    eig: &KronEig,
    factors: &[DMatrix<f64>],
    noise_var: f64,
    y: &DVector<f64>,
) -> Result<Sensitivities> {
    let shape = eig.shape();
    if factors.len() != shape.len() {
        return Err(Error::DimensionMismatch("factor count differs from eigendecomposition".into()));
    }
    let inv = eig.shifted_inverse(noise_var)?;
    let alpha = kron_mvm(&eig.vectors, &kron_mvm(&eig.transposed(), y)?.component_mul(&inv))?;
    let log_det: f64 = inv.iter().map(|d| -d.ln()).sum();
    let log_likelihood = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * y.len() as f64 * LN_2PI;

    let mut per_dim = Vec::with_capacity(shape.len());
    for p in 0..shape.len() {
        // B = (⊗_{q≠p} K_q ⊗ I_p) α
        let mut b = alpha.as_slice().to_vec();
        for (q, f) in factors.iter().enumerate() {
            if q != p {
                b = apply_mode(&b, &shape, q, f).0;
            }
        }
        // trace weights: (λ + σ²)⁻¹ times the eigenvalues of the other factors
        let mut others = DVector::from_element(1, 1.0);
        for (q, v) in eig.values.iter().enumerate() {
            others = if q == p {
                others.kronecker(&DVector::from_element(v.len(), 1.0))
            } else {
                others.kronecker(v)
            };
        }
        let weights = inv.component_mul(&others);
        let pre: usize = shape[..p].iter().product();
        let n = shape[p];
        let post: usize = shape[p + 1..].iter().product();
        let mut c = DMatrix::<f64>::zeros(n, n);
        let mut h = DVector::<f64>::zeros(n);
        for i in 0..pre {
            for a in 0..n {
                let base_a = (i * n + a) * post;
                for k in 0..post {
                    h[a] += weights[base_a + k];
                }
                for bb in 0..n {
                    let base_b = (i * n + bb) * post;
                    let mut acc = 0.0;
                    for k in 0..post {
                        acc += b[base_a + k] * alpha[base_b + k];
                    }
                    c[(a, bb)] += acc;
                }
            }
        }
        let u = &eig.vectors[p];
        let w = u * DMatrix::from_diagonal(&h) * u.transpose();
        let g = ((&c + c.transpose()) * 0.5 - w) * 0.5;
        per_dim.push(g);
    }
    let noise = noise_var * (alpha.norm_squared() - inv.sum());
    Ok(Sensitivities {
        log_likelihood,
        per_dim,
        noise,
    })
}

/// Log posterior of a grid model through the Kronecker path.
pub fn kron_model_log_posterior(model: &GpModel) -> Result<f64> {
    let eig = KronEig::new(&model.grams())?;
    kron_log_posterior(&eig, model.noise_var(), model.y(), model.log_prior())
}

/// Log posterior and whitened gradient through the Kronecker path.
pub fn kron_objective(model: &GpModel) -> Result<Objective> {
    let grams = model.grams();
    let eig = KronEig::new(&grams)?;
    let sens = kron_sensitivities(&eig, &grams, model.noise_var(), model.y())?;
    let grad = model.assemble_gradient(&sens.per_dim, sens.noise);
    Ok(Objective {
        value: sens.log_likelihood + model.log_prior(),
        grad,
    })
}

/// Gradient with respect to the unwhitened (transformed) latents.
pub fn kron_gradient_unwhitened(model: &GpModel) -> Result<Vec<f64>> {
    let grams = model.grams();
    let eig = KronEig::new(&grams)?;
    let sens = kron_sensitivities(&eig, &grams, model.noise_var(), model.y())?;
    Ok(model.assemble_gradient_unwhitened(&sens.per_dim, sens.noise))
}

fn predict_with_factors(
    eig: &KronEig,
    alpha: &DVector<f64>,
    inv: &DVector<f64>,
    cross: &[DMatrix<f64>],
    prior_var: &DVector<f64>,
) -> Result<Prediction> {
    let mean = kron_mvm(cross, alpha)?;
    let sq: Vec<DMatrix<f64>> = cross
        .iter()
        .zip(&eig.vectors)
        .map(|(r, u)| {
            let ru = r * u;
            ru.component_mul(&ru)
        })
        .collect();
    let explained = kron_mvm(&sq, inv)?;
    let variance = prior_var
        .iter()
        .zip(explained.iter())
        .map(|(k, e)| (k - e).max(0.0))
        .collect();
    Ok(Prediction {
        mean: mean.iter().copied().collect(),
        variance,
    })
}

/// Prediction on the grid spanned by `test_axes` (row-major, last axis
/// fastest). Off-grid GSM latents use conditional-mean extension.
pub fn kron_predict(model: &GpModel, test_axes: &[Vec<f64>]) -> Result<Prediction> {
    if test_axes.len() != model.axes().len() {
        return Err(Error::DimensionMismatch(format!(
            "{} test axes for a {}-dimensional model",
            test_axes.len(),
            model.axes().len()
        )));
    }
    let eig = KronEig::new(&model.grams())?;
    let inv = eig.shifted_inverse(model.noise_var())?;
    let alpha = kron_solve(&eig, model.noise_var(), model.y())?;
    let cross: Vec<DMatrix<f64>> = model
        .kernels()
        .iter()
        .zip(model.axes())
        .zip(test_axes)
        .map(|((k, axis), t)| k.cross(t, axis))
        .collect();
    let mut prior_var = DVector::from_element(1, 1.0);
    for (k, t) in model.kernels().iter().zip(test_axes) {
        prior_var = prior_var.kronecker(&DVector::from_vec(k.diag_at(t)));
    }
    predict_with_factors(&eig, &alpha, &inv, &cross, &prior_var)
}

/// Prediction at scattered points (each of length P).
pub fn kron_predict_points(model: &GpModel, points: &[Vec<f64>]) -> Result<Prediction> {
    let p = model.axes().len();
    if let Some(bad) = points.iter().find(|x| x.len() != p) {
        return Err(Error::DimensionMismatch(format!(
            "test point has {} coordinates, model has {p} dimensions",
            bad.len()
        )));
    }
    let eig = KronEig::new(&model.grams())?;
    let inv = eig.shifted_inverse(model.noise_var())?;
    let alpha = kron_solve(&eig, model.noise_var(), model.y())?;
    // per-dimension cross rows for all points at once, then one point at a time
    let per_dim: Vec<(DMatrix<f64>, Vec<f64>)> = (0..p)
        .map(|d| {
            let coords: Vec<f64> = points.iter().map(|x| x[d]).collect();
            let k = &model.kernels()[d];
            (k.cross(&coords, &model.axes()[d]), k.diag_at(&coords))
        })
        .collect();
    let mut out = Prediction {
        mean: Vec::with_capacity(points.len()),
        variance: Vec::with_capacity(points.len()),
    };
    for m in 0..points.len() {
        let rows: Vec<DMatrix<f64>> = per_dim.iter().map(|(c, _)| c.rows(m, 1).into_owned()).collect();
        let prior = DVector::from_element(1, per_dim.iter().map(|(_, d)| d[m]).product());
        let one = predict_with_factors(&eig, &alpha, &inv, &rows, &prior)?;
        out.mean.push(one.mean[0]);
        out.variance.push(one.variance[0]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = random_matrix(n, n, rng);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    fn dense(factors: &[DMatrix<f64>]) -> DMatrix<f64> {
        factors
            .iter()
            .fold(DMatrix::from_element(1, 1, 1.0), |acc, f| acc.kronecker(f))
    }

    #[test]
    fn identity_factors_are_identity() {
        let f = vec![DMatrix::identity(2, 2), DMatrix::identity(3, 3)];
        let v = DVector::from_fn(6, |i, _| i as f64);
        assert_eq!(kron_mvm(&f, &v).unwrap(), v);
    }

    #[test]
    fn mvm_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = vec![random_matrix(2, 2, &mut rng), random_matrix(3, 3, &mut rng)];
        let v = DVector::from_fn(6, |_, _| rng.random::<f64>());
        let err = (kron_mvm(&f, &v).unwrap() - dense(&f) * &v).amax();
        assert!(err <= 1e-12);
    }

    #[test]
    fn mvm_handles_rectangular_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = vec![random_matrix(4, 2, &mut rng), random_matrix(1, 3, &mut rng), random_matrix(2, 2, &mut rng)];
        let v = DVector::from_fn(12, |_, _| rng.random::<f64>());
        let err = (kron_mvm(&f, &v).unwrap() - dense(&f) * &v).amax();
        assert!(err <= 1e-12);
        assert!(kron_mvm(&f, &DVector::zeros(5)).is_err());
    }

    #[test]
    fn mixed_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(3, 3, &mut rng);
        let b = random_matrix(4, 4, &mut rng);
        let u = DVector::from_fn(3, |_, _| rng.random::<f64>());
        let v = DVector::from_fn(4, |_, _| rng.random::<f64>());
        let lhs = kron_mvm(&[a.clone(), b.clone()], &u.kronecker(&v)).unwrap();
        let rhs = (a * u).kronecker(&(b * v));
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn eigendecomposition_reconstructs_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = vec![random_spd(5, &mut rng), random_spd(3, &mut rng)];
        let eig = KronEig::new(&f).unwrap();
        for (p, k) in f.iter().enumerate() {
            let u = &eig.vectors[p];
            let orth = (u.transpose() * u - DMatrix::identity(u.nrows(), u.nrows())).amax();
            assert!(orth <= 1e-8);
            let rec = u * DMatrix::from_diagonal(&eig.values[p]) * u.transpose();
            assert!((rec - k).amax() <= 1e-8);
        }
    }

    #[test]
    fn combined_eigenvalues_are_products() {
        let f = vec![
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])),
            DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 4.0])),
        ];
        let mut lam: Vec<f64> = KronEig::new(&f).unwrap().combined_values().iter().copied().collect();
        lam.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(lam, vec![3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn solve_with_identity_kernel_halves() {
        let f = vec![DMatrix::identity(3, 3), DMatrix::identity(2, 2)];
        let eig = KronEig::new(&f).unwrap();
        let y = DVector::from_fn(6, |i, _| i as f64 + 1.0);
        let alpha = kron_solve(&eig, 1.0, &y).unwrap();
        assert!((alpha - &y / 2.0).amax() < 1e-14);
    }

    #[test]
    fn solve_matches_dense_and_has_small_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = vec![random_spd(4, &mut rng), random_spd(3, &mut rng)];
        let eig = KronEig::new(&f).unwrap();
        let y = DVector::from_fn(12, |_, _| rng.random::<f64>());
        let alpha = kron_solve(&eig, 0.3, &y).unwrap();
        let k = dense(&f) + DMatrix::identity(12, 12) * 0.3;
        let direct = k.clone().cholesky().unwrap().solve(&y);
        assert!((&alpha - direct).amax() <= 1e-8 * alpha.amax());
        // residual via the factored product
        let resid = kron_mvm(&f, &alpha).unwrap() + &alpha * 0.3 - &y;
        assert!(resid.norm() <= 1e-8 * y.norm());
    }

    #[test]
    fn non_positive_shift_is_rejected() {
        let f = vec![DMatrix::zeros(2, 2)];
        let eig = KronEig::new(&f).unwrap();
        assert!(kron_solve(&eig, 0.0, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn sensitivities_match_dense_trace_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = vec![random_spd(3, &mut rng), random_spd(4, &mut rng), random_spd(2, &mut rng)];
        let noise = 0.2;
        let y = DVector::from_fn(24, |_, _| rng.random::<f64>() - 0.5);
        let eig = KronEig::new(&f).unwrap();
        let sens = kron_sensitivities(&eig, &f, noise, &y).unwrap();
        let k = dense(&f) + DMatrix::identity(24, 24) * noise;
        let a = k.clone().try_inverse().unwrap();
        let alpha = &a * &y;
        for p in 0..3 {
            let d = random_matrix(f[p].nrows(), f[p].nrows(), &mut rng);
            let d = &d + d.transpose();
            let mut parts = f.clone();
            parts[p] = d.clone();
            let dk = dense(&parts);
            let expected = 0.5 * (alpha.dot(&(&dk * &alpha)) - (&a * &dk).trace());
            let got = d.component_mul(&sens.per_dim[p]).sum();
            assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0), "{got} vs {expected}");
        }
        let expected_noise = noise * (alpha.norm_squared() - a.trace());
        assert!((sens.noise - expected_noise).abs() < 1e-9);
    }
}
