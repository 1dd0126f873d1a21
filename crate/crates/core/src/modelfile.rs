//! Versioned TOML model files. See `docs/model-format.md`.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{GsmComponent, GsmDimension, LatentClass};
use crate::latent::{HyperPrior, LatentFunction, Transform};
use crate::model::{DimKernel, GpModel, KernelKind, TrainingSummary};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    kernel: KernelKind,
    q: usize,
    p: usize,
    noise_log: f64,
    /// Training outputs in grid order (last axis fastest).
    y: Vec<f64>,
    dims: Vec<DimFile>,
    summary: Option<TrainingSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum DimFile {
    Gsm {
        axis: Vec<f64>,
        nyquist: f64,
        components: Vec<ComponentFile>,
    },
    Se {
        axis: Vec<f64>,
        log_variance: f64,
        log_lengthscale: f64,
    },
    Sm {
        axis: Vec<f64>,
        nyquist: f64,
        log_weights: Vec<f64>,
        logit_means: Vec<f64>,
        log_stddevs: Vec<f64>,
    },
    Ss {
        axis: Vec<f64>,
        log_variance: f64,
        frequencies: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentFile {
    w: LatentFile,
    ell: LatentFile,
    mu: LatentFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatentFile {
    transform: Transform,
    prior: HyperPrior,
    whitened: Vec<f64>,
}

impl LatentFile {
    fn from_latent(f: &LatentFunction) -> Self {
        LatentFile {
            transform: f.transform(),
            prior: *f.prior(),
            whitened: f.whitened().iter().copied().collect(),
        }
    }

    fn into_latent(self, axis: &[f64]) -> Result<LatentFunction> {
        LatentFunction::new(axis.to_vec(), self.prior, self.transform, DVector::from_vec(self.whitened))
    }
}

fn to_file(model: &GpModel) -> ModelFile {
    let dims = model
        .kernels()
        .iter()
        .zip(model.axes())
        .map(|(k, axis)| match k {
            DimKernel::Gsm(d) => DimFile::Gsm {
                axis: axis.clone(),
                nyquist: d.nyquist(),
                components: d
                    .components()
                    .iter()
                    .map(|c| ComponentFile {
                        w: LatentFile::from_latent(c.latent(LatentClass::Weight)),
                        ell: LatentFile::from_latent(c.latent(LatentClass::Lengthscale)),
                        mu: LatentFile::from_latent(c.latent(LatentClass::Frequency)),
                    })
                    .collect(),
            },
            DimKernel::Se {
                log_variance,
                log_lengthscale,
            } => DimFile::Se {
                axis: axis.clone(),
                log_variance: *log_variance,
                log_lengthscale: *log_lengthscale,
            },
            DimKernel::Sm {
                nyquist,
                log_weights,
                logit_means,
                log_stddevs,
            } => DimFile::Sm {
                axis: axis.clone(),
                nyquist: *nyquist,
                log_weights: log_weights.clone(),
                logit_means: logit_means.clone(),
                log_stddevs: log_stddevs.clone(),
            },
            DimKernel::Ss {
                log_variance,
                frequencies,
            } => DimFile::Ss {
                axis: axis.clone(),
                log_variance: *log_variance,
                frequencies: frequencies.clone(),
            },
        })
        .collect();
    ModelFile {
        format_version: FORMAT_VERSION,
        kernel: model.kind(),
        q: model_q(model),
        p: model.axes().len(),
        noise_log: model.noise_log(),
        y: model.y().iter().copied().collect(),
        dims,
        summary: model.summary.clone(),
    }
}

fn model_q(model: &GpModel) -> usize {
    match &model.kernels()[0] {
        DimKernel::Gsm(d) => d.q(),
        DimKernel::Se { .. } => 1,
        DimKernel::Sm { log_weights, .. } => log_weights.len(),
        DimKernel::Ss { frequencies, .. } => frequencies.len(),
    }
}

fn from_file(file: ModelFile) -> Result<GpModel> {
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            expected: FORMAT_VERSION.to_string(),
            found: file.format_version.to_string(),
        });
    }
    if file.dims.len() != file.p {
        return Err(Error::ModelFile(format!("p = {} but {} dimensions stored", file.p, file.dims.len())));
    }
    let mut axes = Vec::with_capacity(file.p);
    let mut kernels = Vec::with_capacity(file.p);
    for dim in file.dims {
        let (axis, kernel) = match dim {
            DimFile::Gsm {
                axis,
                nyquist,
                components,
            } => {
                let comps = components
                    .into_iter()
                    .map(|c| {
                        Ok(GsmComponent {
                            w: c.w.into_latent(&axis)?,
                            ell: c.ell.into_latent(&axis)?,
                            mu: c.mu.into_latent(&axis)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let d = GsmDimension::new(axis.clone(), nyquist, comps)?;
                (axis, DimKernel::Gsm(d))
            }
            DimFile::Se {
                axis,
                log_variance,
                log_lengthscale,
            } => (
                axis,
                DimKernel::Se {
                    log_variance,
                    log_lengthscale,
                },
            ),
            DimFile::Sm {
                axis,
                nyquist,
                log_weights,
                logit_means,
                log_stddevs,
            } => {
                if logit_means.len() != log_weights.len() || log_stddevs.len() != log_weights.len() {
                    return Err(Error::ModelFile("SM parameter lists differ in length".into()));
                }
                (
                    axis,
                    DimKernel::Sm {
                        nyquist,
                        log_weights,
                        logit_means,
                        log_stddevs,
                    },
                )
            }
            DimFile::Ss {
                axis,
                log_variance,
                frequencies,
            } => (
                axis,
                DimKernel::Ss {
                    log_variance,
                    frequencies,
                },
            ),
        };
        axes.push(axis);
        kernels.push(kernel);
    }
    let mut model = GpModel::new(axes, DVector::from_vec(file.y), kernels, file.noise_log)?;
    if model.kind() != file.kernel {
        return Err(Error::ModelFile(format!(
            "kernel = '{}' but dimensions use '{}'",
            file.kernel.name(),
            model.kind().name()
        )));
    }
    if model_q(&model) != file.q {
        return Err(Error::ModelFile(format!("q = {} does not match the stored components", file.q)));
    }
    model.summary = file.summary;
    Ok(model)
}

/// Model as TOML text.
pub fn model_to_string(model: &GpModel) -> Result<String> {
    toml::to_string(&to_file(model)).map_err(|e| Error::ModelFile(e.to_string()))
}

/// Parses TOML text produced by [`model_to_string`].
pub fn model_from_str(text: &str) -> Result<GpModel> {
    #[derive(Deserialize)]
    struct Probe {
        format_version: Option<toml::Value>,
    }
    // report a version mismatch before any structural error
    if let Ok(Probe {
        format_version: Some(v),
    }) = toml::from_str::<Probe>(text)
    {
        if v.as_integer() != Some(FORMAT_VERSION as i64) {
            return Err(Error::Version {
                expected: FORMAT_VERSION.to_string(),
                found: v.to_string(),
            });
        }
    }
    let file: ModelFile = toml::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))?;
    from_file(file)
}

pub fn save_model(model: &GpModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<GpModel> {
    model_from_str(&std::fs::read_to_string(path)?)
}
