//! Grid datasets, CSV loaders, mask handling and synthetic data.
//!
//! Grid values are stored row-major with the last axis varying fastest.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gp::{factorize, unravel};
use crate::kernels::{gsm_gram_values, GsmComponentValues};

/// Observations on a complete grid; masked cells hold imputed values.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDataset {
    pub axes: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// `true` where the cell was observed.
    pub mask: Vec<bool>,
}

impl GridDataset {
    pub fn new(axes: Vec<Vec<f64>>, y: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Data("dataset needs at least one axis".into()));
        }
        for (p, a) in axes.iter().enumerate() {
            if a.is_empty() || a.windows(2).any(|w| !(w[0] < w[1])) || a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("axis {p} must be finite and strictly increasing")));
            }
        }
        let n: usize = axes.iter().map(Vec::len).product();
        if y.len() != n || mask.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "grid has {n} cells, got {} values and {} mask entries",
                y.len(),
                mask.len()
            )));
        }
        if !mask.iter().any(|m| *m) {
            return Err(Error::Data("no observed cells".into()));
        }
        if let Some(i) = (0..n).find(|&i| mask[i] && !y[i].is_finite()) {
            return Err(Error::Data(format!("observed cell {i} is not finite")));
        }
        Ok(GridDataset { axes, y, mask })
    }

    /// Fully observed dataset.
    pub fn complete(axes: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        GridDataset::new(axes, y, vec![true; n])
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn observed(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn y_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y)
    }

    /// Variance of the observed values.
    pub fn observed_variance(&self) -> f64 {
        let obs: Vec<f64> = (0..self.len()).filter(|&i| self.mask[i]).map(|i| self.y[i]).collect();
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        obs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / obs.len() as f64
    }

    /// Copy with the cells outside `keep` marked missing and re-imputed.
    pub fn with_holdout(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.len() {
            return Err(Error::DimensionMismatch("holdout mask has the wrong size".into()));
        }
        let mask: Vec<bool> = self.mask.iter().zip(keep).map(|(a, b)| *a && *b).collect();
        let y = impute_mean(&self.shape(), &self.y, &mask)?;
        GridDataset::new(self.axes.clone(), y, mask)
    }
}

/// Replaces masked cells by the mean of the observed cells, computed per
/// slice along the last axis when there are three or more dimensions.
pub fn impute_mean(shape: &[usize], y: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let n: usize = shape.iter().product();
    if y.len() != n || mask.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "grid has {n} cells, got {} values and {} mask entries",
            y.len(),
            mask.len()
        )));
    }
    let slices = if shape.len() >= 3 { shape[shape.len() - 1] } else { 1 };
    let slice_of = |i: usize| if slices > 1 { i % slices } else { 0 };
    let mut sum = vec![0.0; slices];
    let mut count = vec![0usize; slices];
    for i in 0..n {
        if mask[i] {
            sum[slice_of(i)] += y[i];
            count[slice_of(i)] += 1;
        }
    }
    if let Some(s) = count.iter().position(|c| *c == 0) {
        return Err(Error::Data(format!("slice {s} has no observed cells")));
    }
    Ok((0..n)
        .map(|i| {
            if mask[i] {
                y[i]
            } else {
                sum[slice_of(i)] / count[slice_of(i)] as f64
            }
        })
        .collect())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

fn parse_cell(cell: &str, line: usize) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("'{cell}' is not a number"),
    })
}

fn reader(path: &Path, headers: bool) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(headers)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)
}

/// Parses a `x,y` series from any reader.
pub fn parse_series<R: std::io::Read>(input: R) -> Result<GridDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_owned).collect();
    if header != ["x", "y"] {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header 'x,y', found '{}'", header.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        let x = parse_cell(&rec[0], line)?;
        let y = parse_cell(&rec[1], line)?;
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Parse {
                line,
                message: "values must be finite".into(),
            });
        }
        rows.push((x, y));
    }
    if rows.len() < 2 {
        return Err(Error::Data(format!("series needs at least 2 rows, found {}", rows.len())));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Data(format!("duplicate input x = {}", w[0].0)));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    GridDataset::complete(vec![x], y)
}

/// Loads a two-column `x,y` CSV with a header row.
pub fn load_series(path: &Path) -> Result<GridDataset> {
    parse_series(std::fs::File::open(path)?)
}

/// Numeric matrix read from a headerless CSV.
fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = reader(path, false)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push(rec.iter().map(|c| parse_cell(c, line)).collect::<Result<Vec<_>>>()?);
    }
    Ok(rows)
}

/// Values of a P = 2 matrix file or P = 3 slice file. Slice files start
/// with a header whose first field is `slice`; each row is
/// `k, v_1, …, v_N2` and slice `k` holds `N1` consecutive rows.
fn read_grid_values(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let first = std::fs::read_to_string(path)?;
    let is_slices = first
        .lines()
        .next()
        .map(|l| l.split(',').next().unwrap_or("").trim() == "slice")
        .unwrap_or(false);
    if !is_slices {
        let rows = read_matrix(path)?;
        if rows.is_empty() {
            return Err(Error::Data("grid file is empty".into()));
        }
        let n2 = rows[0].len();
        if let Some(i) = rows.iter().position(|r| r.len() != n2) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {n2} columns, found {}", rows[i].len()),
            });
        }
        let shape = vec![rows.len(), n2];
        return Ok((shape, rows.into_iter().flatten().collect()));
    }
    let mut rdr = reader(path, true)?;
    let mut slices: Vec<Vec<Vec<f64>>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let k = rec[0].trim().parse::<usize>().map_err(|_| Error::Parse {
            line,
            message: format!("slice index '{}' is not a non-negative integer", &rec[0]),
        })?;
        if k > slices.len() || (k + 1 < slices.len()) {
            return Err(Error::Parse {
                line,
                message: format!("slice {k} out of order"),
            });
        }
        if k == slices.len() {
            slices.push(Vec::new());
        }
        let row = rec.iter().skip(1).map(|c| parse_cell(c, line)).collect::<Result<Vec<_>>>()?;
        slices[k].push(row);
    }
    if slices.is_empty() {
        return Err(Error::Data("grid file is empty".into()));
    }
    let n1 = slices[0].len();
    let n2 = slices[0].first().map(Vec::len).unwrap_or(0);
    for (k, s) in slices.iter().enumerate() {
        if s.len() != n1 || s.iter().any(|r| r.len() != n2) {
            return Err(Error::DimensionMismatch(format!("slice {k} is not {n1}x{n2}")));
        }
    }
    let n3 = slices.len();
    let mut y = vec![0.0; n1 * n2 * n3];
    for (k, s) in slices.iter().enumerate() {
        for (i, row) in s.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                y[(i * n2 + j) * n3 + k] = *v;
            }
        }
    }
    Ok((vec![n1, n2, n3], y))
}

/// One value per line (or comma-separated on one line).
pub fn load_axis(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for cell in line.split(',').filter(|c| !c.trim().is_empty()) {
            out.push(parse_cell(cell, i + 1)?);
        }
    }
    Ok(out)
}

/// Equispaced points on `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Loads a grid, its optional 0/1 mask and optional per-dimension axes
/// (default: equispaced on `[-1, 1]`). Masked cells are mean-imputed.
pub fn load_grid(values: &Path, mask: Option<&Path>, axes: Option<&[&Path]>) -> Result<GridDataset> {
    let (shape, raw) = read_grid_values(values)?;
    let observed = match mask {
        None => vec![true; raw.len()],
        Some(m) => {
            let (mshape, mraw) = read_grid_values(m)?;
            if mshape != shape {
                return Err(Error::DimensionMismatch(format!(
                    "mask shape {mshape:?} differs from value shape {shape:?}"
                )));
            }
            mraw.iter()
                .enumerate()
                .map(|(i, v)| match *v {
                    v if v == 1.0 => Ok(true),
                    v if v == 0.0 => Ok(false),
                    v => Err(Error::Data(format!("mask cell {i} is {v}, expected 0 or 1"))),
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let axes: Vec<Vec<f64>> = match axes {
        None => shape.iter().map(|&n| linspace(-1.0, 1.0, n)).collect(),
        Some(paths) => {
            if paths.len() != shape.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} axis files for a {}-dimensional grid",
                    paths.len(),
                    shape.len()
                )));
            }
            let axes = paths.iter().map(|p| load_axis(p)).collect::<Result<Vec<_>>>()?;
            for (p, (a, n)) in axes.iter().zip(&shape).enumerate() {
                if a.len() != *n {
                    return Err(Error::DimensionMismatch(format!(
                        "axis {p} has {} values, grid has {n}",
                        a.len()
                    )));
                }
            }
            axes
        }
    };
    let y = impute_mean(&shape, &raw, &observed)?;
    GridDataset::new(axes, y, observed)
}

/// Writes a P = 1 dataset as `x,y`.
pub fn write_series(path: &Path, data: &GridDataset) -> Result<()> {
    if data.dims() != 1 {
        return Err(Error::Data("series output needs a one-dimensional dataset".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["x", "y"]).map_err(csv_error)?;
    for (x, y) in data.axes[0].iter().zip(&data.y) {
        w.write_record([x.to_string(), y.to_string()]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a P = 2 grid as a headerless matrix, or a P = 3 grid as slices.
pub fn write_grid_values(path: &Path, shape: &[usize], values: &[f64]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(path).map_err(csv_error)?;
    match shape {
        [n1, n2] => {
            for i in 0..*n1 {
                w.write_record(values[i * n2..(i + 1) * n2].iter().map(f64::to_string))
                    .map_err(csv_error)?;
            }
        }
        [n1, n2, n3] => {
            let mut header = vec!["slice".to_string()];
            header.extend((0..*n2).map(|j| format!("c{j}")));
            w.write_record(&header).map_err(csv_error)?;
            for k in 0..*n3 {
                for i in 0..*n1 {
                    let mut row = vec![k.to_string()];
                    row.extend((0..*n2).map(|j| values[(i * n2 + j) * n3 + k].to_string()));
                    w.write_record(&row).map_err(csv_error)?;
                }
            }
        }
        _ => return Err(Error::Data(format!("cannot write a grid of shape {shape:?}"))),
    }
    w.flush()?;
    Ok(())
}

/// Writes one axis value per line.
pub fn write_axis(path: &Path, axis: &[f64]) -> Result<()> {
    let text: String = axis.iter().map(|v| format!("{v}\n")).collect();
    std::fs::write(path, text)?;
    Ok(())
}

/// Generating functions of the chirp experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ChirpTruth {
    pub x: Vec<f64>,
    pub mu: Vec<f64>,
    pub ell: Vec<f64>,
    pub w: Vec<f64>,
}

/// `μ(x) = 1 + (1 − x)²`.
pub fn chirp_frequency(x: f64) -> f64 {
    1.0 + (1.0 - x) * (1.0 - x)
}

/// Draws `y ~ N(0, K + σ²I)` for a one-component GSM kernel with
/// `w = 1`, `ℓ = e⁻¹` and `μ(x) = 1 + (1 − x)²` on `n` equispaced inputs
/// in `[-1, 1]`.
pub fn simulate_chirp(n: usize, noise_var: f64, seed: u64) -> Result<(GridDataset, ChirpTruth)> {
    if n < 2 {
        return Err(Error::InvalidParameter("chirp needs n >= 2".into()));
    }
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise variance {noise_var}")));
    }
    let x = linspace(-1.0, 1.0, n);
    let truth = ChirpTruth {
        mu: x.iter().map(|&v| chirp_frequency(v)).collect(),
        ell: vec![(-1.0f64).exp(); n],
        w: vec![1.0; n],
        x: x.clone(),
    };
    let comp = GsmComponentValues {
        w: truth.w.clone(),
        ell: truth.ell.clone(),
        mu: truth.mu.clone(),
    };
    let k = gsm_gram_values(&x, &[comp])?;
    let (chol, _) = factorize(&k, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let f = chol.l() * z;
    let sd = noise_var.sqrt();
    let y: Vec<f64> = f.iter().map(|v| v + sd * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok((GridDataset::complete(vec![x], y)?, truth))
}

/// Synthetic texture families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TexturePattern {
    /// Chirped sinusoid along axis 1 times a fixed sinusoid along axis 2.
    FreqSweep,
    /// Product of two sinusoids with integer sample periods.
    StationaryWeave,
}

impl std::str::FromStr for TexturePattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "freq-sweep" => Ok(TexturePattern::FreqSweep),
            "stationary-weave" => Ok(TexturePattern::StationaryWeave),
            other => Err(Error::InvalidParameter(format!("unknown texture pattern '{other}'"))),
        }
    }
}

/// Instantaneous frequency along axis 1 of the freq-sweep texture.
pub fn sweep_frequency(x: f64) -> f64 {
    2.5 + 1.5 * x
}

/// Frequency along axis 2 of the freq-sweep texture.
pub const SWEEP_CROSS_FREQUENCY: f64 = 2.0;

/// Texture on `[-1, 1]²` with random phases drawn from `seed`.
pub fn simulate_texture(n1: usize, n2: usize, pattern: TexturePattern, noise_var: f64, seed: u64) -> Result<GridDataset> {
    if n1 < 8 || n2 < 8 {
        return Err(Error::InvalidParameter("texture dimensions must be at least 8".into()));
    }
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise variance {noise_var}")));
    }
    let (a1, a2) = (linspace(-1.0, 1.0, n1), linspace(-1.0, 1.0, n2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p1, p2): (f64, f64) = (rng.random::<f64>() * 2.0 * PI, rng.random::<f64>() * 2.0 * PI);
    let sd = noise_var.sqrt();
    let mut y = Vec::with_capacity(n1 * n2);
    for (i, &x1) in a1.iter().enumerate() {
        for (j, &x2) in a2.iter().enumerate() {
            let clean = match pattern {
                TexturePattern::FreqSweep => {
                    // phase of 2.5 + 1.5 x
                    let phase = 2.5 * x1 + 0.75 * x1 * x1;
                    (2.0 * PI * phase + p1).sin() * (2.0 * PI * SWEEP_CROSS_FREQUENCY * x2 + p2).sin()
                }
                TexturePattern::StationaryWeave => {
                    ((2.0 * PI * (i % 8) as f64 / 8.0) + p1).sin() * ((2.0 * PI * (j % 4) as f64 / 4.0) + p2).sin()
                }
            };
            let noise = if sd > 0.0 { sd * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
            y.push(clean + noise);
        }
    }
    GridDataset::complete(vec![a1, a2], y)
}

/// Keep-mask (true = kept) removing `width` central rows and columns.
pub fn cross_mask(n1: usize, n2: usize, width: usize) -> Vec<bool> {
    let r0 = n1.saturating_sub(width) / 2;
    let c0 = n2.saturating_sub(width) / 2;
    let mut keep = vec![true; n1 * n2];
    for i in 0..n1 {
        for j in 0..n2 {
            if (r0..r0 + width).contains(&i) || (c0..c0 + width).contains(&j) {
                keep[i * n2 + j] = false;
            }
        }
    }
    keep
}

/// Keep-mask removing the outer `width` rows and columns on every side.
pub fn border_mask(n1: usize, n2: usize, width: usize) -> Vec<bool> {
    let mut keep = vec![true; n1 * n2];
    for i in 0..n1 {
        for j in 0..n2 {
            if i < width || j < width || i + width >= n1 || j + width >= n2 {
                keep[i * n2 + j] = false;
            }
        }
    }
    keep
}

/// Flat indices of the `false` cells of a keep-mask.
pub fn held_out(keep: &[bool]) -> Vec<usize> {
    (0..keep.len()).filter(|&i| !keep[i]).collect()
}

/// Grid values as an `n1 × n2` matrix (P = 2 only).
pub fn as_matrix(data: &GridDataset) -> Result<DMatrix<f64>> {
    match data.shape()[..] {
        [n1, n2] => Ok(DMatrix::from_row_slice(n1, n2, &data.y)),
        _ => Err(Error::Data("matrix view needs a two-dimensional grid".into())),
    }
}

/// Multi-index helper re-exported for callers iterating over grids.
pub fn cell_index(flat: usize, shape: &[usize]) -> Vec<usize> {
    unravel(flat, shape)
}
