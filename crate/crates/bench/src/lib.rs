//! Fixtures shared by the criterion benches.

use gsmgp::checks::random_gsm_model;
use gsmgp::GpModel;

/// Random GSM model on an equispaced grid of the given shape.
pub fn grid_model(shape: &[usize], q: usize) -> GpModel {
    random_gsm_model(shape, q, 7).expect("fixture model")
}
