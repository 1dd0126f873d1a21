//! Spectral surfaces, numerical generalised Fourier transforms and
//! spectrograms.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::kernels::{gsm_gram_values, BsmParams, GsmDimension};

/// The closed-form BSM kernel equals this multiple of the transform of the
/// eight-component surface (each cosine term arises from two components).
pub const BSM_TRANSFORM_SCALE: f64 = 0.5;

const BOUNDARY_TOLERANCE: f64 = 1e-12;

/// Symmetrised bivariate Gaussian mixture density `S(s, s′)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralSurface {
    pub params: BsmParams,
}

impl SpectralSurface {
    pub fn new(params: BsmParams) -> Self {
        SpectralSurface { params }
    }

    /// Largest `|μ| + 8σ` over components and both axes.
    pub fn default_half_width(&self) -> f64 {
        self.params
            .components
            .iter()
            .map(|c| c.mu.abs().max(c.mu_prime.abs()) + 8.0 * c.sigma.max(c.sigma_prime))
            .fold(0.0, f64::max)
    }
}

/// `Σ_i w_i² Σ_m N((s, s′) | m, Σ_i)` over the eight means
/// `±{μ_i, μ_i′}²`.
pub fn surface_eval(surface: &SpectralSurface, s: f64, s_prime: f64) -> f64 {
    let mut total = 0.0;
    for c in &surface.params.components {
        let (sa, sb) = (c.sigma, c.sigma_prime);
        let det = sa * sa * sb * sb * (1.0 - c.rho * c.rho);
        let norm = 1.0 / (2.0 * PI * det.sqrt());
        let mut terms = [0.0; 8];
        let mut k = 0;
        for sign in [1.0, -1.0] {
            for a in [c.mu, c.mu_prime] {
                for b in [c.mu, c.mu_prime] {
                    let d1 = s - sign * a;
                    let d2 = s_prime - sign * b;
                    let quad = (sb * sb * (d1 * d1) + sa * sa * (d2 * d2)) - 2.0 * c.rho * sa * sb * (d1 * d2);
                    terms[k] = norm * (-0.5 * quad / det).exp();
                    k += 1;
                }
            }
        }
        // summing in sorted order makes the symmetries hold bit for bit
        terms.sort_by(f64::total_cmp);
        total += c.weight * c.weight * terms.iter().sum::<f64>();
    }
    total
}

/// Trapezoid rule settings: `points` nodes per axis over `[lo, hi]`, or an
/// automatic box when `bounds` is `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureSpec {
    pub points: usize,
    pub bounds: Option<(f64, f64)>,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            points: 401,
            bounds: None,
        }
    }
}

impl QuadratureSpec {
    pub fn with_points(points: usize) -> Self {
        QuadratureSpec { points, bounds: None }
    }

    fn nodes(&self, default: (f64, f64)) -> Result<(Vec<f64>, Vec<f64>)> {
        let (lo, hi) = self.bounds.unwrap_or(default);
        if self.points < 2 {
            return Err(Error::QuadratureBox(format!("{} quadrature points", self.points)));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::QuadratureBox(format!("invalid box [{lo}, {hi}]")));
        }
        let h = (hi - lo) / (self.points - 1) as f64;
        let nodes = (0..self.points).map(|i| lo + h * i as f64).collect();
        let mut weights = vec![h; self.points];
        weights[0] *= 0.5;
        weights[self.points - 1] *= 0.5;
        Ok((nodes, weights))
    }
}

/// Phase vectors `e^{±2πi t u}` scaled by the quadrature weights.
fn phases(t: f64, nodes: &[f64], weights: &[f64], sign: f64) -> Vec<Complex64> {
    nodes
        .iter()
        .zip(weights)
        .map(|(&u, &w)| Complex64::from_polar(w, sign * 2.0 * PI * t * u))
        .collect()
}

fn bilinear(a: &[Complex64], m: &DMatrix<f64>, b: &[Complex64]) -> Complex64 {
    let mut total = Complex64::new(0.0, 0.0);
    for (i, ai) in a.iter().enumerate() {
        let mut row = Complex64::new(0.0, 0.0);
        for (j, bj) in b.iter().enumerate() {
            row += bj * m[(i, j)];
        }
        total += ai * row;
    }
    total
}

/// The BSM surface sampled on the quadrature grid.
#[derive(Clone, Debug)]
pub struct SurfaceGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    values: DMatrix<f64>,
}

impl SurfaceGrid {
    /// Samples the surface and rejects boxes whose boundary density exceeds
    /// `1e-12` of the peak.
    pub fn new(surface: &SpectralSurface, quad: QuadratureSpec) -> Result<Self> {
        let r = surface.default_half_width();
        let (nodes, weights) = quad.nodes((-r, r))?;
        let n = nodes.len();
        let values = DMatrix::from_fn(n, n, |i, j| surface_eval(surface, nodes[i], nodes[j]));
        let peak = values.max();
        let mut edge: f64 = 0.0;
        for k in 0..n {
            edge = edge
                .max(values[(0, k)])
                .max(values[(n - 1, k)])
                .max(values[(k, 0)])
                .max(values[(k, n - 1)]);
        }
        if edge > BOUNDARY_TOLERANCE * peak {
            return Err(Error::QuadratureBox(format!(
                "boundary density {edge:e} exceeds {BOUNDARY_TOLERANCE:e} of peak {peak:e}"
            )));
        }
        Ok(SurfaceGrid { nodes, weights, values })
    }

    /// `∫∫ S(s, s′) e^{2πi(xs − x′s′)} ds ds′` (complex).
    pub fn transform(&self, x: f64, x_prime: f64) -> Complex64 {
        let a = phases(x, &self.nodes, &self.weights, 1.0);
        let b = phases(x_prime, &self.nodes, &self.weights, -1.0);
        bilinear(&a, &self.values, &b)
    }
}

/// Real part of the trapezoid approximation of the generalised Fourier
/// transform of `surface` at `(x, x′)`.
pub fn fourier_oracle_bsm(surface: &SpectralSurface, x: f64, x_prime: f64, quad: QuadratureSpec) -> Result<f64> {
    Ok(SurfaceGrid::new(surface, quad)?.transform(x, x_prime).re)
}

/// Tapered numerical transform of a GSM kernel,
/// `∫∫ k(x, x′) g(x) g(x′) e^{−2πi(xs − x′s′)} dx dx′`, for every pair in
/// `freqs × freqs_prime`.
///
/// The input box defaults to the training axis range. `g` is a Gaussian
/// centred in the box with standard deviation one eighth of its half-width,
/// which keeps edge truncation below `1e-12` of the peak. Latents are
/// extended to the quadrature nodes by their conditional mean.
pub fn fourier_oracle_gsm_grid(
    dim: &GsmDimension,
    freqs: &[f64],
    freqs_prime: &[f64],
    input_quad: QuadratureSpec,
) -> Result<DMatrix<f64>> {
    let axis = dim.axis();
    let default = (axis[0], axis[axis.len() - 1]);
    let (nodes, mut weights) = input_quad.nodes(default)?;
    let lo = nodes[0];
    let hi = nodes[nodes.len() - 1];
    let centre = 0.5 * (lo + hi);
    let taper_sd = (hi - lo) / 16.0;
    for (w, x) in weights.iter_mut().zip(&nodes) {
        let z = (x - centre) / taper_sd;
        *w *= (-0.5 * z * z).exp();
    }
    let comps: Vec<_> = dim.components().iter().map(|c| c.extend(&nodes)).collect();
    let k = gsm_gram_values(&nodes, &comps)?;
    let n = nodes.len();
    // F[a, i] = w_i e^{−2πi s_a x_i};  G[b, j] = w_j e^{2πi s′_b x_j}
    let f: Vec<Vec<Complex64>> = freqs.iter().map(|&s| phases(s, &nodes, &weights, -1.0)).collect();
    let g: Vec<Vec<Complex64>> = freqs_prime.iter().map(|&s| phases(s, &nodes, &weights, 1.0)).collect();
    let fk: Vec<Vec<Complex64>> = f
        .iter()
        .map(|row| {
            (0..n)
                .map(|j| row.iter().enumerate().map(|(i, a)| a * k[(i, j)]).sum())
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(freqs.len(), freqs_prime.len(), |a, b| {
        fk[a].iter().zip(&g[b]).map(|(x, y)| x * y).sum::<Complex64>().re
    }))
}

/// Single-pair form of [`fourier_oracle_gsm_grid`].
pub fn fourier_oracle_gsm(dim: &GsmDimension, s: f64, s_prime: f64, input_quad: QuadratureSpec) -> Result<f64> {
    Ok(fourier_oracle_gsm_grid(dim, &[s], &[s_prime], input_quad)?[(0, 0)])
}

/// Input-by-frequency amplitude map.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub input_axis: Vec<f64>,
    pub frequency_axis: Vec<f64>,
    /// `N × M`, rows indexed by input.
    pub amplitude: DMatrix<f64>,
}

impl Spectrogram {
    /// Frequency of the largest amplitude in every row.
    pub fn ridge(&self) -> Vec<f64> {
        (0..self.amplitude.nrows())
            .map(|r| {
                let row = self.amplitude.row(r);
                let (mut best, mut idx) = (f64::NEG_INFINITY, 0);
                for (j, &v) in row.iter().enumerate() {
                    if v > best {
                        best = v;
                        idx = j;
                    }
                }
                self.frequency_axis[idx]
            })
            .collect()
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// `A(x, s) = Σ_i w_i(x)² N(s | μ_i(x), (2πℓ_i(x))⁻²)`.
pub fn model_spectrogram(dim: &GsmDimension, input_axis: &[f64], frequency_axis: &[f64]) -> Result<Spectrogram> {
    if !strictly_increasing(input_axis) || !strictly_increasing(frequency_axis) {
        return Err(Error::InvalidParameter("spectrogram axes must be strictly increasing".into()));
    }
    let comps: Vec<_> = dim.components().iter().map(|c| c.extend(input_axis)).collect();
    let amplitude = DMatrix::from_fn(input_axis.len(), frequency_axis.len(), |r, j| {
        let s = frequency_axis[j];
        comps
            .iter()
            .map(|c| {
                let sd = 1.0 / (2.0 * PI * c.ell[r]);
                let z = (s - c.mu[r]) / sd;
                c.w[r] * c.w[r] * (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
            })
            .sum()
    });
    Ok(Spectrogram {
        input_axis: input_axis.to_vec(),
        frequency_axis: frequency_axis.to_vec(),
        amplitude,
    })
}

/// Sampling step of an equispaced axis.
pub fn equispaced_step(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::Data("need at least two samples".into()));
    }
    let h = (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64;
    if !(h > 0.0) || x.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-6 * h) {
        return Err(Error::NonEquispaced);
    }
    Ok(h)
}

/// Short-time Fourier magnitudes with a Hann window.
///
/// Each frame has its mean removed before windowing. Rows are frames
/// (input axis = frame centres); columns are the non-negative DFT
/// frequencies up to the Nyquist frequency. Magnitudes are scaled so that
/// a unit-amplitude cosine centred on a bin peaks near 1.
pub fn empirical_spectrogram(x: &[f64], y: &[f64], window: usize, overlap: f64) -> Result<Spectrogram> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} inputs, {} outputs", x.len(), y.len())));
    }
    let h = equispaced_step(x)?;
    if window < 2 || window > x.len() {
        return Err(Error::InvalidParameter(format!(
            "window {window} must lie in [2, {}]",
            x.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidParameter(format!("overlap {overlap} must lie in [0, 1)")));
    }
    let hop = ((window as f64 * (1.0 - overlap)).round() as usize).max(1);
    let hann: Vec<f64> = (0..window)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (window - 1) as f64).cos())
        .collect();
    let gain: f64 = hann.iter().sum::<f64>() / 2.0;
    let bins = window / 2 + 1;
    let fs = 1.0 / h;
    let frequency_axis: Vec<f64> = (0..bins).map(|k| k as f64 * fs / window as f64).collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let mut centres = Vec::new();
    let mut rows = Vec::new();
    let mut start = 0;
    while start + window <= x.len() {
        let frame = &y[start..start + window];
        let mean = frame.iter().sum::<f64>() / window as f64;
        let mut buf: Vec<Complex64> = frame
            .iter()
            .zip(&hann)
            .map(|(v, w)| Complex64::new((v - mean) * w, 0.0))
            .collect();
        fft.process(&mut buf);
        rows.push(buf[..bins].iter().map(|c| c.norm() / gain).collect::<Vec<_>>());
        centres.push(0.5 * (x[start] + x[start + window - 1]));
        start += hop;
    }
    let amplitude = DMatrix::from_fn(rows.len(), bins, |r, j| rows[r][j]);
    Ok(Spectrogram {
        input_axis: centres,
        frequency_axis,
        amplitude,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{bsm_eval, BsmComponent};
    use crate::latent::HyperPrior;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn component(mu: f64, mu_prime: f64, sigma: f64, sigma_prime: f64, rho: f64) -> BsmComponent {
        BsmComponent {
            weight: 1.0,
            mu,
            mu_prime,
            sigma,
            sigma_prime,
            rho,
        }
    }

    fn surface(c: Vec<BsmComponent>) -> SpectralSurface {
        SpectralSurface::new(BsmParams::new(c).unwrap())
    }

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn surface_symmetries_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = surface(vec![component(1.0, 2.0, 0.5, 0.5, 0.3), component(0.2, -0.7, 0.8, 0.8, -0.6)]);
        let neg = surface(vec![component(1.0, 2.0, 0.5, 0.9, 0.3)]);
        for _ in 0..1000 {
            let a = rng.random::<f64>() * 8.0 - 4.0;
            let b = rng.random::<f64>() * 8.0 - 4.0;
            assert_eq!(surface_eval(&s, a, b), surface_eval(&s, b, a));
            assert_eq!(surface_eval(&s, a, b), surface_eval(&s, -a, -b));
            assert_eq!(surface_eval(&neg, a, b), surface_eval(&neg, -a, -b));
            assert!(surface_eval(&s, a, b) >= 0.0);
        }
    }

    #[test]
    fn coincident_means_give_eight_copies() {
        let (sa, sb) = (0.7, 1.3);
        let s = surface(vec![component(0.0, 0.0, sa, sb, 0.0)]);
        let density = 1.0 / (2.0 * PI * sa * sb);
        assert!((surface_eval(&s, 0.0, 0.0) - 8.0 * density).abs() < 1e-14);
    }

    #[test]
    fn oracle_at_origin_is_total_mass() {
        let s = surface(vec![component(1.0, 2.0, 0.5, 0.5, 0.0)]);
        let v = fourier_oracle_bsm(&s, 0.0, 0.0, QuadratureSpec::default()).unwrap();
        assert!((v - 8.0).abs() < 1e-8);
        let p = BsmParams::new(vec![component(1.0, 2.0, 0.5, 0.5, 0.0)]).unwrap();
        assert!((BSM_TRANSFORM_SCALE * v - bsm_eval(&p, 0.0, 0.0)).abs() < 1e-8);
    }

    #[test]
    fn oracle_matches_closed_form_with_negligible_imaginary_part() {
        let c = component(1.0, 2.0, 0.5, 0.5, 0.0);
        let s = surface(vec![c]);
        let p = BsmParams::new(vec![c]).unwrap();
        let grid = SurfaceGrid::new(&s, QuadratureSpec::default()).unwrap();
        let v = grid.transform(0.1, 0.2);
        let exact = bsm_eval(&p, 0.1, 0.2);
        assert!((BSM_TRANSFORM_SCALE * v.re - exact).abs() <= 1e-3 * exact.abs());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let (x, xp) = (rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0);
            assert!(grid.transform(x, xp).im.abs() <= 1e-6);
        }
    }

    #[test]
    fn small_box_is_rejected() {
        let s = surface(vec![component(1.0, 2.0, 0.5, 0.5, 0.0)]);
        let quad = QuadratureSpec {
            points: 101,
            bounds: Some((-2.0, 2.0)),
        };
        assert!(matches!(fourier_oracle_bsm(&s, 0.0, 0.0, quad), Err(Error::QuadratureBox(_))));
    }

    fn stationary_dim() -> GsmDimension {
        let axis = linspace(-40.0, 40.0, 401);
        let prior = HyperPrior::for_axis(&axis);
        GsmDimension::constant(axis.clone(), crate::latent::nyquist_for_axis(&axis).unwrap(), prior, &[(1.0, 0.5, 1.0)])
            .unwrap()
    }

    #[test]
    fn stationary_gsm_surface_is_diagonal() {
        let dim = stationary_dim();
        let freqs = linspace(-4.0, 4.0, 41);
        let quad = QuadratureSpec::with_points(801);
        let s = fourier_oracle_gsm_grid(&dim, &freqs, &freqs, quad).unwrap();
        let mut diag: f64 = 0.0;
        let mut off: f64 = 0.0;
        for a in 0..41 {
            for b in 0..41 {
                if a == b {
                    diag = diag.max(s[(a, b)].abs());
                } else {
                    off = off.max(s[(a, b)].abs());
                }
            }
        }
        assert!(off <= 0.05 * diag, "{off} vs {diag}");
        // swap and negation symmetry
        for a in 0..41 {
            for b in 0..41 {
                assert!((s[(a, b)] - s[(b, a)]).abs() <= 1e-6 * diag);
                assert!((s[(a, b)] - s[(40 - a, 40 - b)]).abs() <= 1e-6 * diag);
            }
        }
    }

    #[test]
    fn nonstationary_gsm_surface_is_symmetric() {
        let axis = linspace(-1.0, 1.0, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nyq = crate::latent::nyquist_for_axis(&axis).unwrap();
        let dim = GsmDimension::sample_prior(axis.clone(), nyq, 2, HyperPrior::for_axis(&axis), &mut rng).unwrap();
        let freqs = linspace(-5.0, 5.0, 11);
        let s = fourier_oracle_gsm_grid(&dim, &freqs, &freqs, QuadratureSpec::with_points(201)).unwrap();
        let scale = s.amax();
        for a in 0..11 {
            for b in 0..11 {
                assert!((s[(a, b)] - s[(b, a)]).abs() <= 1e-6 * scale);
                assert!((s[(a, b)] - s[(10 - a, 10 - b)]).abs() <= 1e-6 * scale);
            }
        }
        let single = fourier_oracle_gsm(&dim, freqs[3], freqs[7], QuadratureSpec::with_points(201)).unwrap();
        assert!((single - s[(3, 7)]).abs() <= 1e-12 * scale);
    }

    #[test]
    fn constant_latents_give_identical_spectrogram_rows() {
        let axis = linspace(-1.0, 1.0, 20);
        let prior = HyperPrior::for_axis(&axis);
        let dim = GsmDimension::constant(axis.clone(), 9.5, prior, &[(1.0, 0.3, 2.0)]).unwrap();
        let sg = model_spectrogram(&dim, &axis, &linspace(0.0, 9.0, 50)).unwrap();
        for r in 1..20 {
            assert!((sg.amplitude.row(r) - sg.amplitude.row(0)).amax() < 1e-9);
        }
    }

    #[test]
    fn spectrogram_rows_integrate_to_squared_weight() {
        let axis = linspace(-1.0, 1.0, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dim = GsmDimension::sample_prior(axis.clone(), 9.5, 1, HyperPrior::for_axis(&axis), &mut rng).unwrap();
        let vals = dim.values();
        let freqs = linspace(-30.0, 40.0, 4001);
        let sg = model_spectrogram(&dim, &axis, &freqs).unwrap();
        let h = freqs[1] - freqs[0];
        for r in 0..20 {
            let row = sg.amplitude.row(r);
            let mass = h * (row.sum() - 0.5 * (row[0] + row[row.len() - 1]));
            let w2 = vals[0].w[r] * vals[0].w[r];
            assert!((mass - w2).abs() <= 0.01 * w2, "{mass} vs {w2}");
            // argmax sits at μ(x)
            let peak = sg.ridge()[r];
            assert!((peak - vals[0].mu[r]).abs() <= h);
        }
    }

    #[test]
    fn cosine_peak_is_within_one_bin() {
        let x = linspace(0.0, 1.99, 200);
        let f = 12.5;
        let y: Vec<f64> = x.iter().map(|t| (2.0 * PI * f * t).cos()).collect();
        let sg = empirical_spectrogram(&x, &y, 40, 0.5).unwrap();
        let bin = sg.frequency_axis[1];
        for peak in sg.ridge() {
            assert!((peak - f).abs() <= bin, "{peak}");
        }
        assert!(*sg.frequency_axis.last().unwrap() <= 50.0 + 1e-9);
    }

    #[test]
    fn zero_signal_has_zero_spectrogram() {
        let x = linspace(0.0, 1.0, 64);
        let sg = empirical_spectrogram(&x, &vec![0.0; 64], 16, 0.5).unwrap();
        assert!(sg.amplitude.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn chirp_ridge_decreases() {
        let x = linspace(-1.0, 1.0, 200);
        // phase of μ(x) = 1 + (1 − x)²
        let phase = |t: f64| t - (1.0 - t).powi(3) / 3.0;
        let y: Vec<f64> = x.iter().map(|&t| (2.0 * PI * phase(t)).cos()).collect();
        let sg = empirical_spectrogram(&x, &y, 64, 0.75).unwrap();
        let ridge = sg.ridge();
        assert!(ridge.windows(2).all(|w| w[1] <= w[0]), "{ridge:?}");
        assert!(ridge[0] > ridge[ridge.len() - 1]);
    }

    #[test]
    fn non_equispaced_input_is_rejected() {
        let x = vec![0.0, 0.1, 0.3, 0.4];
        assert!(matches!(
            empirical_spectrogram(&x, &[0.0; 4], 2, 0.5),
            Err(Error::NonEquispaced)
        ));
    }
}
