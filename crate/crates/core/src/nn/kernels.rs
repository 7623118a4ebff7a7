//! Small dense kernels with a fixed accumulation order.
//!
//! Every output element is reduced in the same order regardless of how many
//! rows are processed together, so a batched evaluation is bit-identical to
//! evaluating each row on its own.

use ndarray::{Array1, Array2, ArrayView2};

const LANES: usize = 8;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let body = n - n % LANES;
    let mut acc = [0.0f64; LANES];
    let (a_body, a_tail) = a.split_at(body);
    let (b_body, b_tail) = b.split_at(body);
    for (ca, cb) in a_body.chunks_exact(LANES).zip(b_body.chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in a_tail.iter().zip(b_tail) {
        s += x * y;
    }
    s
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `x · wᵀ + b` for row-major `x` (batch × in) and `w` (out × in).
pub fn affine(x: ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let (rows, _) = x.dim();
    let outs = w.nrows();
    let w = w.as_standard_layout();
    let w_slice = w.as_slice().expect("standard layout");
    let inputs = w.ncols();
    let x = x.as_standard_layout();
    let x_slice = x.as_slice().expect("standard layout");
    let b = b.as_slice().expect("contiguous bias");
    let mut out = Array2::<f64>::zeros((rows, outs));
    {
        let out_slice = out.as_slice_mut().expect("fresh array");
        for r in 0..rows {
            let xr = &x_slice[r * inputs..(r + 1) * inputs];
            let or = &mut out_slice[r * outs..(r + 1) * outs];
            for (o, slot) in or.iter_mut().enumerate() {
                *slot = dot(xr, &w_slice[o * inputs..(o + 1) * inputs]) + b[o];
            }
        }
    }
    out
}

/// `delta · w` for `delta` (batch × out) and `w` (out × in).
pub fn backprop_input(delta: ArrayView2<f64>, w: &Array2<f64>) -> Array2<f64> {
    let (rows, outs) = delta.dim();
    let inputs = w.ncols();
    let w = w.as_standard_layout();
    let w_slice = w.as_slice().expect("standard layout");
    let mut out = Array2::<f64>::zeros((rows, inputs));
    let out_slice = out.as_slice_mut().expect("fresh array");
    for r in 0..rows {
        let or = &mut out_slice[r * inputs..(r + 1) * inputs];
        for o in 0..outs {
            let d = delta[[r, o]];
            if d != 0.0 {
                axpy(d, &w_slice[o * inputs..(o + 1) * inputs], or);
            }
        }
    }
    out
}

/// Accumulate `deltaᵀ · x` into `grad` (out × in), rows summed in order.
pub fn accumulate_outer(delta: ArrayView2<f64>, x: ArrayView2<f64>, grad: &mut Array2<f64>) {
    let (rows, outs) = delta.dim();
    let inputs = x.ncols();
    let x = x.as_standard_layout();
    let x_slice = x.as_slice().expect("standard layout");
    let g_slice = grad.as_slice_mut().expect("standard layout gradient");
    for r in 0..rows {
        let xr = &x_slice[r * inputs..(r + 1) * inputs];
        for o in 0..outs {
            let d = delta[[r, o]];
            if d != 0.0 {
                axpy(d, xr, &mut g_slice[o * inputs..(o + 1) * inputs]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dot_matches_naive_sum_on_short_and_long_inputs() {
        for n in [0usize, 1, 7, 8, 9, 31] {
            let a: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 - 1.0).collect();
            let b: Vec<f64> = (0..n).map(|i| 2.0 - i as f64 * 0.25).collect();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_is_row_independent() {
        let w = array![[1.0, -2.0, 0.5], [0.25, 3.0, -1.0]];
        let b = array![0.1, -0.2];
        let x = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 4.0]];
        let full = affine(x.view(), &w, &b);
        for r in 0..2 {
            let single = affine(x.slice(ndarray::s![r..r + 1, ..]), &w, &b);
            assert_eq!(single.row(0), full.row(r));
        }
    }
}
