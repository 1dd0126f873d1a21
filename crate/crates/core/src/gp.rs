//! Dense exact GP regression and the backend-agnostic entry points.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kronecker;
use crate::model::{GpModel, Objective};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const JITTER_STEPS: [f64; 3] = [1e-8, 1e-6, 1e-4];

/// Predictive mean and variance of the latent function.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Cartesian product of the axes, last axis fastest.
pub fn grid_points(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = axes.iter().map(Vec::len).product();
    (0..total)
        .map(|flat| {
            unravel(flat, &axes.iter().map(Vec::len).collect::<Vec<_>>())
                .iter()
                .zip(axes)
                .map(|(&i, a)| a[i])
                .collect()
        })
        .collect()
}

/// Multi-index of a flat grid position, last axis fastest.
pub fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for p in (0..shape.len()).rev() {
        idx[p] = flat % shape[p];
        flat /= shape[p];
    }
    idx
}

/// Cholesky of `K + σ²I`, escalating diagonal jitter on failure.
pub fn factorize(k: &DMatrix<f64>, noise_var: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite("Gram matrix has non-finite entries".into()));
    }
    let mut shifted = k.clone();
    for i in 0..n {
        shifted[(i, i)] += noise_var;
    }
    if let Some(c) = Cholesky::new(shifted.clone()) {
        return Ok((c, 0.0));
    }
    let mean_diag = shifted.diagonal().mean().abs().max(f64::MIN_POSITIVE);
    for step in JITTER_STEPS {
        let jitter = step * mean_diag;
        let mut m = shifted.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            log::debug!("Cholesky needed jitter {jitter:e}");
            return Ok((c, jitter));
        }
    }
    Err(Error::NotPositiveDefinite(format!(
        "K + σ²I is not positive definite after jitter {:e}",
        JITTER_STEPS[2] * mean_diag
    )))
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Full Gram matrix of the model over the training grid.
pub fn dense_gram(model: &GpModel) -> DMatrix<f64> {
    model
        .grams()
        .iter()
        .fold(DMatrix::from_element(1, 1, 1.0), |acc, f| acc.kronecker(f))
}

/// `log N(y | 0, K + σ²I)`.
pub fn dense_log_likelihood(model: &GpModel) -> Result<f64> {
    let (chol, _) = factorize(&dense_gram(model), model.noise_var())?;
    let y = model.y();
    let alpha = chol.solve(y);
    Ok(-0.5 * y.dot(&alpha) - 0.5 * log_det(&chol) - 0.5 * y.len() as f64 * LN_2PI)
}

/// Log marginal likelihood plus the latent log-prior terms.
pub fn dense_log_posterior(model: &GpModel) -> Result<f64> {
    Ok(dense_log_likelihood(model)? + model.log_prior())
}

struct DenseTerms {
    log_likelihood: f64,
    sens: Vec<DMatrix<f64>>,
    noise: f64,
}

fn dense_terms(model: &GpModel) -> Result<DenseTerms> {
    let grams = model.grams();
    let k = grams
        .iter()
        .fold(DMatrix::from_element(1, 1, 1.0), |acc, f| acc.kronecker(f));
    let noise_var = model.noise_var();
    let (chol, _) = factorize(&k, noise_var)?;
    let y = model.y();
    let alpha = chol.solve(y);
    let log_likelihood = -0.5 * y.dot(&alpha) - 0.5 * log_det(&chol) - 0.5 * y.len() as f64 * LN_2PI;
    let inv = chol.inverse();
    // W = ∂ log p(y) / ∂K
    let w = (&alpha * alpha.transpose() - &inv) * 0.5;
    let shape = model.shape();
    let sens = if shape.len() == 1 {
        vec![w]
    } else {
        let n = y.len();
        let idx: Vec<Vec<usize>> = (0..n).map(|i| unravel(i, &shape)).collect();
        let mut sens: Vec<DMatrix<f64>> = shape.iter().map(|&s| DMatrix::zeros(s, s)).collect();
        for i in 0..n {
            for j in 0..n {
                let wij = w[(i, j)];
                for p in 0..shape.len() {
                    let mut prod = wij;
                    for (q, g) in grams.iter().enumerate() {
                        if q != p {
                            prod *= g[(idx[i][q], idx[j][q])];
                        }
                    }
                    sens[p][(idx[i][p], idx[j][p])] += prod;
                }
            }
        }
        sens
    };
    let noise = noise_var * (alpha.norm_squared() - inv.trace());
    Ok(DenseTerms {
        log_likelihood,
        sens,
        noise,
    })
}

/// Log posterior and its gradient in whitened coordinates.
pub fn dense_objective(model: &GpModel) -> Result<Objective> {
    let t = dense_terms(model)?;
    Ok(Objective {
        value: t.log_likelihood + model.log_prior(),
        grad: model.assemble_gradient(&t.sens, t.noise),
    })
}

/// Gradient with respect to the unwhitened (transformed) latents.
pub fn dense_gradient_unwhitened(model: &GpModel) -> Result<Vec<f64>> {
    let t = dense_terms(model)?;
    Ok(model.assemble_gradient_unwhitened(&t.sens, t.noise))
}

/// Cross-covariance rows `K(points, X)` and prior variances at `points`.
fn cross_rows(model: &GpModel, points: &[Vec<f64>]) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let p = model.axes().len();
    if let Some(bad) = points.iter().find(|x| x.len() != p) {
        return Err(Error::DimensionMismatch(format!(
            "test point has {} coordinates, model has {p} dimensions",
            bad.len()
        )));
    }
    let shape = model.shape();
    let per_dim: Vec<(DMatrix<f64>, Vec<f64>)> = (0..p)
        .map(|d| {
            let coords: Vec<f64> = points.iter().map(|x| x[d]).collect();
            let k = &model.kernels()[d];
            (k.cross(&coords, &model.axes()[d]), k.diag_at(&coords))
        })
        .collect();
    let n: usize = shape.iter().product();
    let idx: Vec<Vec<usize>> = (0..n).map(|i| unravel(i, &shape)).collect();
    let rows = DMatrix::from_fn(points.len(), n, |m, i| {
        per_dim
            .iter()
            .enumerate()
            .map(|(d, (c, _))| c[(m, idx[i][d])])
            .product()
    });
    let prior = (0..points.len())
        .map(|m| per_dim.iter().map(|(_, v)| v[m]).product())
        .collect();
    Ok((rows, prior))
}

fn condition(
    chol: &Cholesky<f64, Dyn>,
    y: &DVector<f64>,
    rows: &DMatrix<f64>,
    prior: &[f64],
) -> Prediction {
    let alpha = chol.solve(y);
    let mean = rows * alpha;
    let v = chol
        .l_dirty()
        .lower_triangle()
        .solve_lower_triangular(&rows.transpose())
        .expect("Cholesky factor has a positive diagonal");
    let variance = prior
        .iter()
        .enumerate()
        .map(|(m, k)| (k - v.column(m).norm_squared()).max(0.0))
        .collect();
    Prediction {
        mean: mean.iter().copied().collect(),
        variance,
    }
}

/// Dense prediction at scattered points.
pub fn dense_predict_points(model: &GpModel, points: &[Vec<f64>]) -> Result<Prediction> {
    let (chol, _) = factorize(&dense_gram(model), model.noise_var())?;
    let (rows, prior) = cross_rows(model, points)?;
    Ok(condition(&chol, model.y(), &rows, &prior))
}

/// Dense prediction on the grid spanned by `test_axes`.
pub fn dense_predict(model: &GpModel, test_axes: &[Vec<f64>]) -> Result<Prediction> {
    if test_axes.len() != model.axes().len() {
        return Err(Error::DimensionMismatch(format!(
            "{} test axes for a {}-dimensional model",
            test_axes.len(),
            model.axes().len()
        )));
    }
    dense_predict_points(model, &grid_points(test_axes))
}

/// Predicts grid cells `targets` from the observed cells only, ignoring the
/// values stored at unobserved cells.
pub fn predict_from_observed(model: &GpModel, observed: &[bool], targets: &[usize]) -> Result<Prediction> {
    let n = model.y().len();
    if observed.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} cells, grid has {n}",
            observed.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= n) {
        return Err(Error::DimensionMismatch(format!("target cell {t} outside grid of {n}")));
    }
    let obs: Vec<usize> = (0..n).filter(|&i| observed[i]).collect();
    if obs.is_empty() {
        return Err(Error::Data("no observed cells".into()));
    }
    let k = dense_gram(model);
    let k_oo = k.select_rows(&obs).select_columns(&obs);
    let (chol, _) = factorize(&k_oo, model.noise_var())?;
    let y_o = DVector::from_iterator(obs.len(), obs.iter().map(|&i| model.y()[i]));
    let rows = k.select_rows(targets).select_columns(&obs);
    let prior: Vec<f64> = targets.iter().map(|&t| k[(t, t)]).collect();
    Ok(condition(&chol, &y_o, &rows, &prior))
}

fn use_kronecker(model: &GpModel) -> bool {
    model.axes().len() > 1
}

/// Log posterior through the Kronecker path on multi-dimensional grids and
/// the dense path otherwise.
pub fn log_posterior(model: &GpModel) -> Result<f64> {
    if use_kronecker(model) {
        kronecker::kron_model_log_posterior(model)
    } else {
        dense_log_posterior(model)
    }
}

/// Log posterior and whitened gradient, backend chosen as in
/// [`log_posterior`].
pub fn objective(model: &GpModel) -> Result<Objective> {
    if use_kronecker(model) {
        kronecker::kron_objective(model)
    } else {
        dense_objective(model)
    }
}

/// Grid prediction, backend chosen as in [`log_posterior`].
pub fn predict(model: &GpModel, test_axes: &[Vec<f64>]) -> Result<Prediction> {
    if use_kronecker(model) {
        kronecker::kron_predict(model, test_axes)
    } else {
        dense_predict(model, test_axes)
    }
}

/// Point prediction, backend chosen as in [`log_posterior`].
pub fn predict_points(model: &GpModel, points: &[Vec<f64>]) -> Result<Prediction> {
    if use_kronecker(model) {
        kronecker::kron_predict_points(model, points)
    } else {
        dense_predict_points(model, points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{GsmDimension, GsmParams, LatentClass};
    use crate::latent::HyperPrior;
    use crate::model::DimKernel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    fn nyquist(axis: &[f64]) -> f64 {
        crate::latent::nyquist_for_axis(axis).unwrap()
    }

    fn random_model(shape: &[usize], q: usize, seed: u64) -> GpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axes: Vec<Vec<f64>> = shape.iter().map(|&n| linspace(-1.0, 1.0, n)).collect();
        let dims = axes
            .iter()
            .map(|a| GsmDimension::sample_prior(a.clone(), nyquist(a), q, HyperPrior::for_axis(a), &mut rng).unwrap())
            .collect();
        let n: usize = shape.iter().product();
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        GpModel::from_gsm(axes, y, GsmParams { dims }, -1.0).unwrap()
    }

    fn se_model(x: Vec<f64>, y: Vec<f64>, noise_log: f64) -> GpModel {
        let n = y.len();
        GpModel::new(
            vec![x],
            DVector::from_vec(y),
            vec![DimKernel::Se {
                log_variance: 0.0,
                log_lengthscale: 0.0,
            }],
            noise_log,
        )
        .unwrap_or_else(|e| panic!("{n}: {e}"))
    }

    fn finite_difference(model: &GpModel, h: f64) -> Vec<f64> {
        let base = model.params();
        (0..base.len())
            .map(|i| {
                let mut m = model.clone();
                let mut p = base.clone();
                p[i] = base[i] + h;
                m.set_params(&p).unwrap();
                let up = dense_log_posterior(&m).unwrap();
                p[i] = base[i] - h;
                m.set_params(&p).unwrap();
                let down = dense_log_posterior(&m).unwrap();
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(1e-8))
            .fold(0.0, f64::max)
    }

    #[test]
    fn scalar_gaussian_likelihood() {
        // k(x,x) = 1, σ² = 1, y = 0
        let m = se_model(vec![0.0], vec![0.0], 0.0);
        let ll = dense_log_likelihood(&m).unwrap();
        assert!((ll + 0.5 * (4.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn zero_whitened_latents_leave_only_normalisation() {
        let mut m = random_model(&[6], 1, 1);
        let zeros = vec![0.0; m.num_params() - 1];
        let mut p = zeros.clone();
        p.push(m.noise_log());
        m.set_params(&p).unwrap();
        let dims = m.gsm_dims().unwrap();
        let mut expected = 0.0;
        for c in dims[0].components() {
            for class in LatentClass::ALL {
                let f = c.latent(class);
                let log_det: f64 = f.chol().diagonal().iter().map(|d| d.ln()).sum();
                expected += -log_det - 0.5 * f.len() as f64 * LN_2PI;
            }
        }
        assert!((m.log_prior() - expected).abs() < 1e-12);
    }

    #[test]
    fn log_posterior_matches_independent_evaluation() {
        let m = random_model(&[7], 2, 2);
        let k = dense_gram(&m) + DMatrix::identity(7, 7) * m.noise_var();
        let inv = k.clone().try_inverse().unwrap();
        let y = m.y();
        let ll = -0.5 * (y.transpose() * &inv * y)[(0, 0)] - 0.5 * k.determinant().ln() - 3.5 * LN_2PI;
        let mut prior = 0.0;
        for c in m.gsm_dims().unwrap()[0].components() {
            for class in LatentClass::ALL {
                let f = c.latent(class);
                let g = f.prior().gram(f.axis());
                let theta = f.transformed();
                let quad = (theta.transpose() * g.clone().try_inverse().unwrap() * theta)[(0, 0)];
                prior += -0.5 * quad - 0.5 * g.determinant().ln() - 0.5 * 7.0 * LN_2PI;
            }
        }
        let got = dense_log_posterior(&m).unwrap();
        assert!((got - (ll + prior)).abs() <= 1e-8 * got.abs().max(1.0), "{got} vs {}", ll + prior);
    }

    #[test]
    fn log_posterior_is_permutation_invariant_for_likelihood() {
        // permuting points of a stationary kernel only permutes K
        let x = vec![0.3, -0.7, 0.1, 0.9, -0.2];
        let y = vec![1.0, -0.5, 0.2, 0.4, -1.1];
        let a = se_model(x.clone(), y.clone(), -1.0);
        let order = [3, 0, 4, 1, 2];
        let b = se_model(order.iter().map(|&i| x[i]).collect(), order.iter().map(|&i| y[i]).collect(), -1.0);
        let la = dense_log_likelihood(&a).unwrap();
        let lb = dense_log_likelihood(&b).unwrap();
        assert!((la - lb).abs() <= 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences_p1() {
        let m = random_model(&[20], 1, 3);
        let g = dense_objective(&m).unwrap().grad;
        let fd = finite_difference(&m, 1e-5);
        let err = max_rel(&g, &fd);
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn gradient_matches_finite_differences_p2() {
        let m = random_model(&[4, 3], 1, 4);
        let g = dense_objective(&m).unwrap().grad;
        let fd = finite_difference(&m, 1e-5);
        let err = max_rel(&g, &fd);
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn baseline_gradients_match_finite_differences() {
        let x = linspace(-1.0, 1.0, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = DVector::from_fn(12, |_, _| rng.random::<f64>() - 0.5);
        let kernels = [
            DimKernel::Se {
                log_variance: 0.2,
                log_lengthscale: -0.5,
            },
            DimKernel::Sm {
                nyquist: nyquist(&x),
                log_weights: vec![0.1, -0.3],
                logit_means: vec![-2.0, -1.0],
                log_stddevs: vec![0.0, 0.5],
            },
            DimKernel::Ss {
                log_variance: 0.1,
                frequencies: vec![0.7, 1.9],
            },
        ];
        for k in kernels {
            let m = GpModel::new(vec![x.clone()], y.clone(), vec![k], -1.0).unwrap();
            let g = dense_objective(&m).unwrap().grad;
            let fd = finite_difference(&m, 1e-5);
            let err = max_rel(&g, &fd);
            assert!(err <= 1e-4, "{:?}: {err}", m.kind());
        }
    }

    #[test]
    fn prior_part_of_gradient_is_negated_whitened_value() {
        let m = random_model(&[5], 1, 6);
        let total = dense_objective(&m).unwrap().grad;
        let lik = {
            let t = dense_terms(&m).unwrap();
            m.kernels()[0].likelihood_grad(&m.axes()[0], &t.sens[0])
        };
        let v = m.params();
        for i in 0..lik.len() {
            assert!((total[i] - lik[i] + v[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn whitened_and_unwhitened_gradients_agree_at_identity_prior() {
        // a prior with negligible lengthscale makes L ≈ √(1+jitter)·I
        let x = linspace(-1.0, 1.0, 6);
        let prior = HyperPrior::new(1e-4, 1.0, 1e-6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dim = GsmDimension::sample_prior(x.clone(), nyquist(&x), 1, prior, &mut rng).unwrap();
        let y = DVector::from_fn(6, |_, _| rng.random::<f64>());
        let m = GpModel::from_gsm(vec![x], y, GsmParams { dims: vec![dim] }, -1.0).unwrap();
        let w = dense_objective(&m).unwrap().grad;
        let u = dense_gradient_unwhitened(&m).unwrap();
        let s = (1.0f64 + 1e-6).sqrt();
        for (a, b) in w.iter().zip(&u).take(w.len() - 1) {
            assert!((a - s * b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn noiseless_prediction_interpolates() {
        let x = vec![-0.5, 0.0, 0.5];
        let m = se_model(x.clone(), vec![1.0, -2.0, 0.5], -12.0);
        let p = dense_predict(&m, &[x]).unwrap();
        for (a, b) in p.mean.iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(p.variance.iter().all(|v| *v < 1e-6));
    }

    #[test]
    fn far_prediction_reverts_to_prior() {
        let m = se_model(vec![0.0, 0.1], vec![1.0, 1.0], -1.0);
        let p = dense_predict_points(&m, &[vec![1e3]]).unwrap();
        assert!(p.mean[0].abs() < 1e-12);
        assert!((p.variance[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_prediction_matches_scalar_formula() {
        // k(0, 0.5) = e^{-1/8}, k = 1, σ² = e^{-2}
        let m = se_model(vec![0.0], vec![2.0], -1.0);
        let p = dense_predict_points(&m, &[vec![0.5]]).unwrap();
        let k = (-0.125f64).exp();
        let s = 1.0 + (-2.0f64).exp();
        assert!((p.mean[0] - k * 2.0 / s).abs() < 1e-14);
        assert!((p.variance[0] - (1.0 - k * k / s)).abs() < 1e-14);
    }

    #[test]
    fn predictive_variance_never_exceeds_prior() {
        let m = random_model(&[15], 2, 8);
        let test = linspace(-1.5, 1.5, 40);
        let p = dense_predict(&m, &[test.clone()]).unwrap();
        let prior = m.kernels()[0].diag_at(&test);
        for (v, k) in p.variance.iter().zip(prior) {
            assert!(*v <= k + 1e-10);
        }
    }

    #[test]
    fn observed_subset_conditioning_ignores_unobserved_values() {
        let mut m = random_model(&[4, 4], 1, 9);
        let mask: Vec<bool> = (0..16).map(|i| i % 5 != 0).collect();
        let targets: Vec<usize> = (0..16).filter(|&i| !mask[i]).collect();
        let a = predict_from_observed(&m, &mask, &targets).unwrap();
        let mut y = m.y().clone();
        for &t in &targets {
            y[t] = 100.0;
        }
        m = GpModel::new(m.axes().to_vec(), y, m.kernels().to_vec(), m.noise_log()).unwrap();
        let b = predict_from_observed(&m, &mask, &targets).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn jitter_escalation_rescues_singular_gram() {
        let k = DMatrix::from_element(3, 3, 1.0);
        let (_, jitter) = factorize(&k, 0.0).unwrap();
        assert!(jitter > 0.0);
        assert!(factorize(&DMatrix::from_element(2, 2, f64::NAN), 1.0).is_err());
    }

    #[test]
    fn unravel_is_last_axis_fastest() {
        assert_eq!(unravel(5, &[2, 3]), vec![1, 2]);
        let pts = grid_points(&[vec![0.0, 1.0], vec![10.0, 20.0]]);
        assert_eq!(pts, vec![vec![0.0, 10.0], vec![0.0, 20.0], vec![1.0, 10.0], vec![1.0, 20.0]]);
    }
}
