//! Alignment and force-transfer evaluation.
//!
//! Alignment quality is the EMD between human and robot latent clouds,
//! measured before and after transporting the human latents. Force transfer
//! trains a small decoder on robot latents and asks how well it reads forces
//! from raw, transported, and held-out robot latents.

pub mod emd;
pub mod force;
pub mod pca;
pub mod probe;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{transport_batch, VelocityField};

pub use emd::{emd, emd_exact, emd_sinkhorn, EmdConfig, EmdSolver};
pub use force::{
    eval_force_transfer, train_force_decoder, ForceConfig, ForceData, ForceReport, SettingErrors,
};
pub use pca::{pca_export, PcaExport};
pub use probe::{linear_probe, ProbeFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmdReport {
    pub emd_before: f64,
    pub emd_after: f64,
    pub reduction_pct: f64,
    pub human_size: usize,
    pub robot_size: usize,
    /// Points per side actually compared.
    pub sample_size: usize,
    pub solver: EmdSolver,
    pub seed: u64,
}

/// Percentage reduction from `before` to `after`; zero when `before` is zero.
pub fn reduction_pct(before: f64, after: f64) -> f64 {
    if before > 0.0 {
        100.0 * (1.0 - after / before)
    } else {
        0.0
    }
}

/// EMD between human and robot latents before and after transport.
///
/// Both sides are subsampled once with seeded sampling; the same human
/// subsample is measured raw and transported.
pub fn eval_alignment(
    human: ArrayView2<f64>,
    robot: ArrayView2<f64>,
    vf: &VelocityField,
    cfg: &EmdConfig,
) -> Result<EmdReport> {
    cfg.validate()?;
    if human.nrows() == 0 || robot.nrows() == 0 {
        return Err(Error::Usage("alignment needs nonempty latent sets".into()));
    }
    if human.ncols() != vf.latent_dim() {
        return Err(Error::shape("human latents", vf.latent_dim(), human.ncols()));
    }
    let (nh, nr) = emd::sample_sizes(human.nrows(), robot.nrows(), cfg)?;
    let h = human.select(Axis(0), &emd::subsample_indices(human.nrows(), nh, cfg.seed, 1));
    let r = robot.select(Axis(0), &emd::subsample_indices(robot.nrows(), nr, cfg.seed, 2));
    let moved = transport_batch(vf, h.view())?;
    // Subsets already have the final sizes; disable further subsampling.
    let inner = EmdConfig {
        sample_cap: usize::MAX,
        ..*cfg
    };
    let before = emd(h.view(), r.view(), &inner)?;
    let after = emd(moved.view(), r.view(), &inner)?;
    Ok(EmdReport {
        emd_before: before,
        emd_after: after,
        reduction_pct: reduction_pct(before, after),
        human_size: human.nrows(),
        robot_size: robot.nrows(),
        sample_size: nh,
        solver: cfg.solver,
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Lambda,
    Delta,
}

impl SweepParam {
    /// Grid used for the pair-mining sensitivity tables.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepParam::Lambda => vec![0.8, 0.9, 1.0, 1.1, 1.2],
            SweepParam::Delta => vec![1.5, 2.0, 2.5, 3.0, 3.5],
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepParam::Lambda),
            "delta" => Ok(SweepParam::Delta),
            other => Err(Error::Usage(format!(
                "unknown sweep parameter `{other}` (expected lambda or delta)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub pairs: usize,
    pub reduction_pct: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub param: SweepParam,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Max minus min reduction over successful rows.
    pub fn spread(&self) -> Option<f64> {
        let vals: Vec<f64> = self.rows.iter().filter_map(|r| r.reduction_pct).collect();
        if vals.is_empty() {
            return None;
        }
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        Some(max - min)
    }

    pub fn to_csv(&self) -> String {
        let name = match self.param {
            SweepParam::Lambda => "lambda",
            SweepParam::Delta => "delta",
        };
        let mut out = format!("{name},pairs,reduction_pct,error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.value,
                r.pairs,
                r.reduction_pct.map_or(String::new(), |v| format!("{v:.4}")),
                r.error.as_deref().unwrap_or("").replace(',', ";")
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseNet, Layer};
    use ndarray::{array, Array1, Array2};

    fn field(weight: Array2<f64>, bias: Array1<f64>) -> VelocityField {
        let net = DenseNet::from_layers(
            vec![Layer {
                weight,
                bias,
                activation: Activation::Identity,
            }],
            0,
        )
        .unwrap();
        VelocityField::from_net(net, 4).unwrap()
    }

    #[test]
    fn zero_field_gives_no_reduction() {
        let h = array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]];
        let r = array![[3.0, 0.0], [4.0, 1.0], [3.0, 2.0]];
        let vf = field(Array2::zeros((2, 3)), Array1::zeros(2));
        let rep = eval_alignment(h.view(), r.view(), &vf, &EmdConfig::default()).unwrap();
        assert_eq!(rep.reduction_pct, 0.0);
        assert!(rep.emd_before > 0.0);
    }

    #[test]
    fn exact_translation_gives_full_reduction() {
        let h = array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]];
        let r = &h + &array![[3.0, -1.0]];
        let vf = field(Array2::zeros((2, 3)), Array1::from_vec(vec![3.0, -1.0]));
        let rep = eval_alignment(h.view(), r.view(), &vf, &EmdConfig::default()).unwrap();
        assert!(rep.emd_after < 1e-12);
        assert!((rep.reduction_pct - 100.0).abs() < 1e-9);
    }

    #[test]
    fn sweep_spread_ignores_failed_rows() {
        let row = |v: f64, r: Option<f64>| SweepRow {
            value: v,
            pairs: 1,
            reduction_pct: r,
            error: r.is_none().then(|| "boom".to_string()),
        };
        let t = SweepTable {
            param: SweepParam::Delta,
            seed: 0,
            rows: vec![row(1.5, Some(70.0)), row(2.0, None), row(2.5, Some(75.5))],
        };
        assert_eq!(t.spread(), Some(5.5));
        assert!(t.to_csv().starts_with("delta,pairs,reduction_pct,error\n1.5,1,70.0000,\n"));
    }

    #[test]
    fn grids_match_the_sensitivity_tables() {
        assert_eq!(SweepParam::Lambda.default_grid(), vec![0.8, 0.9, 1.0, 1.1, 1.2]);
        assert_eq!(SweepParam::Delta.default_grid(), vec![1.5, 2.0, 2.5, 3.0, 3.5]);
    }
}
