//! Exact reverse-mode differentiation for the two network shapes the model
//! needs: plain dense MLPs and affine coupling bijections. No graph or tape;
//! each structure knows its own forward trace and adjoint pass.

mod activation;
mod adam;
mod coupling;
mod dense;

pub use activation::Activation;
pub use adam::{AdamParams, AdamState};
pub use coupling::{AffineCoupling, CouplingGrads, CouplingTrace};
pub use dense::{DenseNetwork, NetworkTrace, ParamGrads};

use crate::error::{Error, Result};

/// Jacobian of a map evaluated at `point`; `data` is row-major with
/// `rows = output dim`, `cols = input dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub point: Vec<f64>,
}

impl Jacobian {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, point: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "Jacobian::new",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("Jacobian entries"));
        }
        Ok(Jacobian {
            rows,
            cols,
            data,
            point,
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
