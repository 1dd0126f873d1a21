//! Desk-scale experiment drivers: the chirp recovery run and the held-out
//! texture benchmark.

use std::time::Instant;

use crate::data::{simulate_chirp, GridDataset};
use crate::error::{Error, Result};
use crate::gp::{predict_from_observed, predict_points};
use crate::kernels::LatentClass;
use crate::model::{GpModel, KernelKind};
use crate::train::{fit, InitMethod, TrainConfig};

/// Ranks with ties sharing their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct ChirpReport {
    pub model: GpModel,
    pub true_mu: Vec<f64>,
    pub learned_mu: Vec<f64>,
    pub spearman: f64,
    pub training_rmse: f64,
    pub seconds: f64,
}

/// Simulates the decreasing-frequency series and fits a one-component GSM
/// kernel with spectrogram initialisation.
pub fn chirp_experiment(n: usize, noise_var: f64, data_seed: u64, config: &TrainConfig) -> Result<ChirpReport> {
    let start = Instant::now();
    let (data, truth) = simulate_chirp(n, noise_var, data_seed)?;
    let config = TrainConfig {
        kernel: KernelKind::Gsm,
        q: 1,
        init: InitMethod::Spectrogram,
        ..config.clone()
    };
    let model = fit(&config, &data)?;
    let dims = model
        .gsm_dims()
        .ok_or_else(|| Error::Optimisation("fitted model is not a GSM model".into()))?;
    let learned_mu = dims[0].components()[0].latent(LatentClass::Frequency).constrained();
    let points: Vec<Vec<f64>> = data.axes[0].iter().map(|&x| vec![x]).collect();
    let pred = predict_points(&model, &points)?;
    Ok(ChirpReport {
        spearman: spearman(&learned_mu, &truth.mu),
        training_rmse: rmse(&pred.mean, &data.y),
        true_mu: truth.mu,
        learned_mu,
        model,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkRow {
    pub kernel: KernelKind,
    pub q: usize,
    pub held_out: usize,
    pub rmse: f64,
    /// Sum of held-out predictive log densities (noise included).
    pub log_likelihood: f64,
    pub final_objective: f64,
}

/// Fits every kernel on the cells kept by `keep` (the rest mean-imputed)
/// and scores predictions of the held-out cells from the observed ones.
pub fn holdout_benchmark(
    data: &GridDataset,
    keep: &[bool],
    kernels: &[KernelKind],
    config: &TrainConfig,
) -> Result<Vec<BenchmarkRow>> {
    let train = data.with_holdout(keep)?;
    let targets: Vec<usize> = (0..data.len()).filter(|&i| data.mask[i] && !keep[i]).collect();
    if targets.is_empty() {
        return Err(Error::Data("holdout leaves no observed cell to score".into()));
    }
    kernels
        .iter()
        .map(|&kernel| {
            let cfg = TrainConfig {
                kernel,
                ..config.clone()
            };
            let model = fit(&cfg, &train)?;
            let pred = predict_from_observed(&model, &train.mask, &targets)?;
            let truth: Vec<f64> = targets.iter().map(|&i| data.y[i]).collect();
            let noise = model.noise_var();
            let log_likelihood = pred
                .mean
                .iter()
                .zip(&pred.variance)
                .zip(&truth)
                .map(|((m, v), y)| {
                    let s = v + noise;
                    -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + (y - m) * (y - m) / s)
                })
                .sum();
            Ok(BenchmarkRow {
                kernel,
                q: cfg.effective_q(),
                held_out: targets.len(),
                rmse: rmse(&pred.mean, &truth),
                log_likelihood,
                final_objective: model.summary.as_ref().map_or(f64::NAN, |s| s.final_objective),
            })
        })
        .collect()
}
