//! Linear probes from latents to ground-truth quantities.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFit {
    /// `(d + 1) × outputs`; the last row is the bias.
    pub weights: Array2<f64>,
    pub r2_train: f64,
    pub r2_test: f64,
}

fn design(x: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols() + 1, |i, j| {
        if j == x.ncols() {
            1.0
        } else {
            x[[i, j]]
        }
    })
}

fn predict(x: ArrayView2<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    design(x) * w
}

/// Pooled coefficient of determination over all output columns.
pub fn r_squared(pred: &DMatrix<f64>, y: ArrayView2<f64>) -> f64 {
    let (n, m) = y.dim();
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for j in 0..m {
        let mean = (0..n).map(|i| y[[i, j]]).sum::<f64>() / n as f64;
        for i in 0..n {
            ss_res += (y[[i, j]] - pred[(i, j)]).powi(2);
            ss_tot += (y[[i, j]] - mean).powi(2);
        }
    }
    if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        0.0
    }
}

/// Least-squares affine probe fit on the training split, scored on both.
pub fn linear_probe(
    x_train: ArrayView2<f64>,
    y_train: ArrayView2<f64>,
    x_test: ArrayView2<f64>,
    y_test: ArrayView2<f64>,
) -> Result<ProbeFit> {
    if x_train.nrows() != y_train.nrows() || x_test.nrows() != y_test.nrows() {
        return Err(Error::Usage("probe inputs and targets differ in length".into()));
    }
    if x_train.nrows() <= x_train.ncols() || x_test.nrows() == 0 {
        return Err(Error::Usage("probe needs more training rows than features".into()));
    }
    let a = design(x_train);
    let b = DMatrix::from_fn(y_train.nrows(), y_train.ncols(), |i, j| y_train[[i, j]]);
    let w = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::Validation(format!("probe least squares failed: {e}")))?;
    let r2_train = r_squared(&predict(x_train, &w), y_train);
    let r2_test = r_squared(&predict(x_test, &w), y_test);
    Ok(ProbeFit {
        weights: Array2::from_shape_fn((w.nrows(), w.ncols()), |(i, j)| w[(i, j)]),
        r2_train,
        r2_test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_affine_map_is_recovered() {
        let x = Array2::from_shape_fn((30, 3), |(i, j)| ((i * 3 + j) as f64 * 0.71).sin());
        let y = Array2::from_shape_fn((30, 2), |(i, k)| {
            2.0 * x[[i, 0]] - x[[i, 2]] * (k as f64 + 1.0) + 0.5
        });
        let fit = linear_probe(x.view(), y.view(), x.view(), y.view()).unwrap();
        assert!((fit.r2_test - 1.0).abs() < 1e-10);
        assert!((fit.weights[[3, 0]] - 0.5).abs() < 1e-9);
    }
}
