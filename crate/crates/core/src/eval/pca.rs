//! Two-component PCA export for latent-space figures.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaExport {
    pub mean: Vec<f64>,
    /// Unit principal directions; a zero vector marks a missing component.
    pub components: [Vec<f64>; 2],
    /// Share of total variance captured by the two components.
    pub explained_ratio: f64,
    pub sets: Vec<String>,
    #[serde(skip)]
    pub coords: Vec<Array2<f64>>,
}

/// Fit PCA on the union of `sets` and project each set onto it.
///
/// Signs are fixed so the largest-magnitude loading of each component is
/// positive. Components with (numerically) zero variance are replaced by
/// zero vectors.
pub fn pca_export(sets: &[(&str, ArrayView2<f64>)]) -> Result<PcaExport> {
    let total: usize = sets.iter().map(|(_, s)| s.nrows()).sum();
    let Some(d) = sets.first().map(|(_, s)| s.ncols()) else {
        return Err(Error::Usage("pca needs at least one point set".into()));
    };
    if total < 3 || d < 2 {
        return Err(Error::Usage(format!(
            "pca needs at least 3 points of dimension 2 or more, got {total} of dimension {d}"
        )));
    }
    if let Some((name, s)) = sets.iter().find(|(_, s)| s.ncols() != d) {
        return Err(Error::shape(format!("pca set `{name}`"), d, s.ncols()));
    }
    let mut mean = vec![0.0; d];
    for (_, s) in sets {
        for row in s.rows() {
            for j in 0..d {
                mean[j] += row[j] / total as f64;
            }
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for (_, s) in sets {
        for row in s.rows() {
            let c: Vec<f64> = (0..d).map(|j| row[j] - mean[j]).collect();
            for a in 0..d {
                for b in a..d {
                    cov[(a, b)] += c[a] * c[b] / total as f64;
                }
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
    }
    let trace: f64 = (0..d).map(|a| cov[(a, a)]).sum();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let tol = 1e-12 * trace.max(f64::MIN_POSITIVE);
    let mut components = [vec![0.0; d], vec![0.0; d]];
    let mut captured = 0.0;
    for (c, &idx) in order.iter().take(2).enumerate() {
        let value = eig.eigenvalues[idx];
        if value <= tol {
            log::warn!("pca component {} has no variance; exporting zeros", c + 1);
            continue;
        }
        captured += value;
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let pivot = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("d >= 2");
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components[c] = v;
    }
    let explained_ratio = if trace > 0.0 { captured / trace } else { 0.0 };
    let coords = sets
        .iter()
        .map(|(_, s)| {
            Array2::from_shape_fn((s.nrows(), 2), |(i, c)| {
                (0..d).map(|j| (s[[i, j]] - mean[j]) * components[c][j]).sum()
            })
        })
        .collect();
    Ok(PcaExport {
        mean,
        components,
        explained_ratio,
        sets: sets.iter().map(|(n, _)| n.to_string()).collect(),
        coords,
    })
}

impl PcaExport {
    /// Map 2-D coordinates back into the latent space.
    pub fn reconstruct(&self, coords: ArrayView2<f64>) -> Array2<f64> {
        let d = self.mean.len();
        Array2::from_shape_fn((coords.nrows(), d), |(i, j)| {
            self.mean[j] + coords[[i, 0]] * self.components[0][j] + coords[[i, 1]] * self.components[1][j]
        })
    }

    /// `set,index,pc1,pc2` rows for every projected point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("set,index,pc1,pc2\n");
        for (name, c) in self.sets.iter().zip(&self.coords) {
            for (i, row) in c.rows().into_iter().enumerate() {
                out.push_str(&format!("{name},{i},{},{}\n", row[0], row[1]));
            }
        }
        out
    }
}
