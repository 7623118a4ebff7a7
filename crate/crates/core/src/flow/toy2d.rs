//! Two-dimensional rewiring experiment.
//!
//! Source and target are mixtures of two labelled Gaussian blobs ("red" and
//! "blue"). The layout is mirror-symmetric: swapping the source labels is
//! the reflection `y → −y`, under which the target mixture is invariant. A
//! flow trained on independent random pairs therefore commutes with that
//! reflection and sends each source subset to the two target subsets in
//! equal proportion, while a flow trained on label-respecting pseudo-pairs
//! can rewire red to red and blue to blue.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{train_flow, transport_batch_with, FlowConfig};
use crate::error::{Error, Result};
use crate::eval::emd::{emd, EmdConfig};
use crate::pairs::{ContactLabel, PseudoPair, Source};
use crate::seed;

pub const SOURCE_RED: [f64; 2] = [-3.0, 1.0];
pub const SOURCE_BLUE: [f64; 2] = [-3.0, -1.0];
pub const TARGET_RED: [f64; 2] = [2.0, 0.0];
pub const TARGET_BLUE: [f64; 2] = [4.0, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toy2dConfig {
    /// Training points per labelled subset on each side.
    pub train_per_subset: usize,
    /// Held-out points per labelled subset on each side.
    pub eval_per_subset: usize,
    pub cluster_std: f64,
    /// Fraction of pseudo-pairs whose target is drawn from the other subset.
    pub pair_noise: f64,
    pub flow: FlowConfig,
    pub seed: u64,
}

impl Default for Toy2dConfig {
    fn default() -> Self {
        Toy2dConfig {
            train_per_subset: 256,
            eval_per_subset: 200,
            cluster_std: 0.3,
            pair_noise: 0.0,
            flow: FlowConfig {
                width: 64,
                depth: 3,
                steps: 1500,
                batch_size: 256,
                learning_rate: 2e-3,
                ..FlowConfig::default()
            },
            seed: 0,
        }
    }
}

impl Toy2dConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_per_subset == 0 || self.eval_per_subset == 0 {
            return Err(Error::Validation("toy2d subsets must be nonempty".into()));
        }
        if !(self.cluster_std.is_finite() && self.cluster_std > 0.0) {
            return Err(Error::Validation("toy2d cluster_std must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.pair_noise) {
            return Err(Error::Validation("toy2d pair_noise must lie in [0, 1]".into()));
        }
        self.flow.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyMetrics {
    /// Mean Euclidean displacement of transported points.
    pub transport_cost: f64,
    /// Fraction of transported points whose nearest target point shares
    /// their label.
    pub correspondence_agreement: f64,
    pub emd_before: f64,
    pub emd_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Toy2dReport {
    pub seed: u64,
    pub pair_noise: f64,
    pub guided: ToyMetrics,
    pub random: ToyMetrics,
    #[serde(skip)]
    pub clouds: Option<Clouds>,
}

/// Held-out point clouds for plotting; labels are 0 = red, 1 = blue.
#[derive(Debug, Clone, PartialEq)]
pub struct Clouds {
    pub source: Array2<f64>,
    pub target: Array2<f64>,
    pub labels: Vec<u8>,
    pub guided: Array2<f64>,
    pub random: Array2<f64>,
}

fn blobs(
    centers: [[f64; 2]; 2],
    per_subset: usize,
    std: f64,
    rng: &mut impl Rng,
) -> (Array2<f64>, Vec<u8>) {
    let normal = Normal::new(0.0, std).expect("valid std");
    let mut pts = Array2::<f64>::zeros((2 * per_subset, 2));
    let mut labels = Vec::with_capacity(2 * per_subset);
    for (label, c) in centers.iter().enumerate() {
        for i in 0..per_subset {
            let row = label * per_subset + i;
            pts[[row, 0]] = c[0] + normal.sample(rng);
            pts[[row, 1]] = c[1] + normal.sample(rng);
            labels.push(label as u8);
        }
    }
    (pts, labels)
}

fn pair(i: usize, j: usize, h: &ArrayView2<f64>, r: &ArrayView2<f64>) -> PseudoPair {
    PseudoPair {
        human: Source {
            trajectory: 0,
            step: i,
        },
        robot: Source {
            trajectory: 1,
            step: j,
        },
        finger: 0,
        h_star: h.row(i).to_vec(),
        r_star: r.row(j).to_vec(),
        score: 0.0,
        contact: ContactLabel::Contact,
    }
}

/// Nearest-neighbour label agreement against a labelled target cloud.
pub fn label_agreement(
    points: ArrayView2<f64>,
    labels: &[u8],
    target: ArrayView2<f64>,
    target_labels: &[u8],
) -> f64 {
    let mut hits = 0usize;
    for (i, p) in points.rows().into_iter().enumerate() {
        let mut best = (f64::INFINITY, 0u8);
        for (j, q) in target.rows().into_iter().enumerate() {
            let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            if d < best.0 {
                best = (d, target_labels[j]);
            }
        }
        hits += usize::from(best.1 == labels[i]);
    }
    hits as f64 / points.nrows() as f64
}

fn metrics(
    source: &Array2<f64>,
    moved: &Array2<f64>,
    labels: &[u8],
    target: &Array2<f64>,
    target_labels: &[u8],
    emd_cfg: &EmdConfig,
) -> Result<ToyMetrics> {
    let cost = (moved - source)
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .sum::<f64>()
        / source.nrows() as f64;
    Ok(ToyMetrics {
        transport_cost: cost,
        correspondence_agreement: label_agreement(moved.view(), labels, target.view(), target_labels),
        emd_before: emd(source.view(), target.view(), emd_cfg)?,
        emd_after: emd(moved.view(), target.view(), emd_cfg)?,
    })
}

/// Train guided and random-pair flows and compare their transports.
pub fn toy2d_experiment(cfg: &Toy2dConfig) -> Result<Toy2dReport> {
    cfg.validate()?;
    let mut data_rng = seed::rng(cfg.seed, &[0x2D, 1]);
    let n = cfg.train_per_subset;
    let (src, src_labels) = blobs([SOURCE_RED, SOURCE_BLUE], n, cfg.cluster_std, &mut data_rng);
    let (tgt, _) = blobs([TARGET_RED, TARGET_BLUE], n, cfg.cluster_std, &mut data_rng);
    let m = cfg.eval_per_subset;
    let (eval_src, eval_labels) = blobs([SOURCE_RED, SOURCE_BLUE], m, cfg.cluster_std, &mut data_rng);
    let (eval_tgt, eval_tgt_labels) =
        blobs([TARGET_RED, TARGET_BLUE], m, cfg.cluster_std, &mut data_rng);

    let mut pair_rng = seed::rng(cfg.seed, &[0x2D, 2]);
    let (sv, tv) = (src.view(), tgt.view());
    let mut guided = Vec::with_capacity(2 * n);
    let mut random = Vec::with_capacity(2 * n);
    for (i, &label) in src_labels.iter().enumerate().take(2 * n) {
        let same = label as usize;
        let subset = if pair_rng.random_bool(cfg.pair_noise) {
            1 - same
        } else {
            same
        };
        guided.push(pair(i, subset * n + pair_rng.random_range(0..n), &sv, &tv));
        random.push(pair(i, pair_rng.random_range(0..2 * n), &sv, &tv));
    }

    let flow_cfg = |tag: u64| FlowConfig {
        seed: seed::derive(cfg.seed, &[0x2D, tag]),
        ..cfg.flow.clone()
    };
    let (guided_vf, _) = train_flow(&guided, &flow_cfg(3), String::new())?;
    let (random_vf, _) = train_flow(&random, &flow_cfg(4), String::new())?;
    let k = cfg.flow.transport_steps;
    let moved_guided = transport_batch_with(&guided_vf, eval_src.view(), k)?;
    let moved_random = transport_batch_with(&random_vf, eval_src.view(), k)?;

    let emd_cfg = EmdConfig {
        seed: cfg.seed,
        ..EmdConfig::default()
    };
    let guided_metrics = metrics(
        &eval_src,
        &moved_guided,
        &eval_labels,
        &eval_tgt,
        &eval_tgt_labels,
        &emd_cfg,
    )?;
    let random_metrics = metrics(
        &eval_src,
        &moved_random,
        &eval_labels,
        &eval_tgt,
        &eval_tgt_labels,
        &emd_cfg,
    )?;
    Ok(Toy2dReport {
        seed: cfg.seed,
        pair_noise: cfg.pair_noise,
        guided: guided_metrics,
        random: random_metrics,
        clouds: Some(Clouds {
            source: eval_src,
            target: eval_tgt,
            labels: eval_labels,
            guided: moved_guided,
            random: moved_random,
        }),
    })
}

impl Toy2dReport {
    /// `set,label,x,y` rows for every held-out cloud.
    pub fn points_csv(&self) -> Result<String> {
        let Some(c) = &self.clouds else {
            return Err(Error::Usage("report carries no point clouds".into()));
        };
        let mut out = String::from("set,label,x,y\n");
        let name = |l: u8| if l == 0 { "red" } else { "blue" };
        let target_labels: Vec<u8> = (0..c.target.nrows())
            .map(|i| u8::from(i >= c.target.nrows() / 2))
            .collect();
        for (set, pts, labels) in [
            ("source", &c.source, &c.labels),
            ("target", &c.target, &target_labels),
            ("guided", &c.guided, &c.labels),
            ("random", &c.random, &c.labels),
        ] {
            for (row, l) in pts.rows().into_iter().zip(labels.iter()) {
                out.push_str(&format!("{set},{},{},{}\n", name(*l), row[0], row[1]));
            }
        }
        Ok(out)
    }

    pub fn write_points_csv(&self, path: &Path) -> Result<()> {
        let text = self.points_csv()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_configs_are_rejected() {
        for cfg in [
            Toy2dConfig {
                train_per_subset: 0,
                ..Toy2dConfig::default()
            },
            Toy2dConfig {
                pair_noise: 1.5,
                ..Toy2dConfig::default()
            },
            Toy2dConfig {
                cluster_std: 0.0,
                ..Toy2dConfig::default()
            },
        ] {
            assert!(matches!(toy2d_experiment(&cfg), Err(Error::Validation(_))));
        }
    }

    #[test]
    fn agreement_of_untouched_target_is_one() {
        let mut rng = seed::rng(1, &[]);
        let (t, l) = blobs([TARGET_RED, TARGET_BLUE], 50, 0.3, &mut rng);
        assert_eq!(label_agreement(t.view(), &l, t.view(), &l), 1.0);
    }
}
