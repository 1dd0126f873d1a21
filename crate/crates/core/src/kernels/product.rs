use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Product kernel over input dimensions, `K = K₁ ⊗ … ⊗ K_P`, kept in
/// factored form. Factor order matches axis order; the last axis varies
/// fastest in the flattened grid.
#[derive(Clone, Debug)]
pub struct KroneckerGram {
    factors: Vec<DMatrix<f64>>,
}

impl KroneckerGram {
    pub fn new(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidParameter("product kernel needs at least one factor".into()));
        }
        if let Some(bad) = factors.iter().position(|f| !f.is_square()) {
            return Err(Error::DimensionMismatch(format!("factor {bad} is not square")));
        }
        Ok(KroneckerGram { factors })
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn size(&self) -> usize {
        self.factors.iter().map(|f| f.nrows()).product()
    }

    pub fn diag(&self) -> DVector<f64> {
        let mut d = DVector::from_element(1, 1.0);
        for f in &self.factors {
            d = d.kronecker(&f.diagonal());
        }
        d
    }

    pub fn materialise(&self) -> DMatrix<f64> {
        let mut k = DMatrix::from_element(1, 1, 1.0);
        for f in &self.factors {
            k = k.kronecker(f);
        }
        k
    }
}
