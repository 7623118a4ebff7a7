//! Force-probe protocol.
//!
//! A decoder `D` from latents to 3-axis force is trained on robot data only.
//! Human force labels are reserved for testing: each run compares
//! `D(h)` (no alignment), `D(transport(h))` (aligned) and `D(r)` on a
//! held-out robot split, reporting per-axis mean absolute error.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{transport_batch, VelocityField};
use crate::nn::{cosine_lr, mse_loss, Activation, DenseNet, Optimizer, OptimizerConfig};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForceConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub runs: usize,
    /// Cosine-decay the learning rate to 1% over training.
    pub cosine_decay: bool,
    /// Robot samples are split `train_ratio : 1` into train and test.
    pub train_ratio: usize,
    pub seed: u64,
}

impl Default for ForceConfig {
    fn default() -> Self {
        ForceConfig {
            hidden: vec![64, 64],
            learning_rate: 1e-4,
            epochs: 100,
            batch_size: 32,
            runs: 5,
            cosine_decay: true,
            train_ratio: 24,
            seed: 0,
        }
    }
}

impl ForceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::Validation("force decoder widths must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Validation("force learning_rate must be positive".into()));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("runs", self.runs),
            ("train_ratio", self.train_ratio),
        ] {
            if v == 0 {
                return Err(Error::Validation(format!("force {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Latents with their 3-axis force labels, one row each.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceData {
    pub latents: Array2<f64>,
    pub forces: Array2<f64>,
}

impl ForceData {
    pub fn new(latents: Array2<f64>, forces: Array2<f64>) -> Result<Self> {
        if forces.ncols() != 3 {
            return Err(Error::shape("force labels", 3, forces.ncols()));
        }
        if latents.nrows() != forces.nrows() {
            return Err(Error::shape("force samples", latents.nrows(), forces.nrows()));
        }
        if forces.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("force labels must be finite".into()));
        }
        Ok(ForceData { latents, forces })
    }

    pub fn len(&self) -> usize {
        self.latents.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Train a latent → force regressor with an L2 loss.
///
/// The output layer starts at the mean-force predictor (zero weights, bias
/// equal to the label mean), so constant labels are fit from the outset.
///
/// Returns the decoder and its mean training loss per epoch.
pub fn train_force_decoder(
    latents: ArrayView2<f64>,
    forces: ArrayView2<f64>,
    cfg: &ForceConfig,
    seed: u64,
) -> Result<(DenseNet, Vec<f64>)> {
    cfg.validate()?;
    if latents.nrows() == 0 || latents.nrows() != forces.nrows() {
        return Err(Error::Usage(
            "force decoder needs matching, nonempty latents and labels".into(),
        ));
    }
    if forces.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("force labels must be finite".into()));
    }
    let mut sizes = vec![latents.ncols()];
    sizes.extend(&cfg.hidden);
    sizes.push(forces.ncols());
    let mut net = DenseNet::new(
        &sizes,
        Activation::Relu,
        Activation::Identity,
        seed::derive(seed, &[0xD5]),
    )?;
    // Start from the mean-force predictor: zero output weights, mean bias.
    let mean = forces.mean_axis(Axis(0)).expect("nonempty");
    let head = net.layers_mut().last_mut().expect("at least one layer");
    head.weight.fill(0.0);
    head.bias.assign(&mean);
    let mut opt = Optimizer::new(OptimizerConfig::adam(cfg.learning_rate))?;
    let mut rng = seed::rng(seed, &[0xD6]);
    let mut order: Vec<usize> = (0..latents.nrows()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.cosine_decay {
            opt.set_learning_rate(cosine_lr(cfg.learning_rate, epoch, cfg.epochs, 0.01))?;
        }
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = latents.select(Axis(0), chunk);
            let y = forces.select(Axis(0), chunk);
            let cache = net.forward_cached(x.view())?;
            let (loss, g) = mse_loss(cache.output(), &y);
            if !loss.is_finite() {
                return Err(Error::Training {
                    stage: "force decoder".into(),
                    index: epoch,
                    reason: "non-finite loss".into(),
                });
            }
            let back = net.backward(&cache, g.view())?;
            opt.step(&mut net, &back.grads)?;
            total += loss;
            batches += 1;
        }
        losses.push(total / batches as f64);
    }
    Ok((net, losses))
}

/// Per-axis mean absolute error of `net` on a labelled set.
pub fn axis_l1(net: &DenseNet, latents: ArrayView2<f64>, forces: ArrayView2<f64>) -> Result<[f64; 3]> {
    let pred = net.forward_batch(latents)?;
    let mut err = [0.0; 3];
    for (p, f) in pred.rows().into_iter().zip(forces.rows()) {
        for a in 0..3 {
            err[a] += (p[a] - f[a]).abs();
        }
    }
    let n = latents.nrows().max(1) as f64;
    Ok(err.map(|e| e / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingErrors {
    pub mean: [f64; 3],
    /// Sample standard deviation across runs (zero for a single run).
    pub std: [f64; 3],
    pub runs: Vec<[f64; 3]>,
}

impl SettingErrors {
    fn from_runs(runs: Vec<[f64; 3]>) -> Self {
        let n = runs.len() as f64;
        let mut mean = [0.0; 3];
        for r in &runs {
            for a in 0..3 {
                mean[a] += r[a] / n;
            }
        }
        let mut std = [0.0; 3];
        if runs.len() > 1 {
            for r in &runs {
                for a in 0..3 {
                    std[a] += (r[a] - mean[a]).powi(2) / (n - 1.0);
                }
            }
            std = std.map(f64::sqrt);
        }
        SettingErrors { mean, std, runs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceReport {
    /// Human latents decoded directly.
    pub unaligned: SettingErrors,
    /// Human latents decoded after transport.
    pub aligned: SettingErrors,
    /// Held-out robot latents.
    pub robot: SettingErrors,
    pub robot_train: usize,
    pub robot_test: usize,
    pub human_test: usize,
    pub seed: u64,
}

impl ForceReport {
    pub fn to_table(&self) -> String {
        let mut out = String::from("setting,fx_mean,fx_std,fy_mean,fy_std,fz_mean,fz_std\n");
        for (name, s) in [
            ("h2r_unaligned", &self.unaligned),
            ("h2r_aligned", &self.aligned),
            ("r2r", &self.robot),
        ] {
            out.push_str(name);
            for a in 0..3 {
                out.push_str(&format!(",{:.6},{:.6}", s.mean[a], s.std[a]));
            }
            out.push('\n');
        }
        out
    }
}

/// Run the force-probe protocol `cfg.runs` times.
pub fn eval_force_transfer(
    robot: &ForceData,
    human: &ForceData,
    vf: &VelocityField,
    cfg: &ForceConfig,
) -> Result<ForceReport> {
    cfg.validate()?;
    if robot.len() < cfg.train_ratio + 1 {
        return Err(Error::Validation(format!(
            "force protocol needs at least {} robot samples, got {}",
            cfg.train_ratio + 1,
            robot.len()
        )));
    }
    if human.is_empty() {
        return Err(Error::Validation("force protocol needs human test samples".into()));
    }
    let moved = transport_batch(vf, human.latents.view())?;
    let test_size = robot.len() / (cfg.train_ratio + 1);
    let (mut unaligned, mut aligned, mut robot_runs) = (Vec::new(), Vec::new(), Vec::new());
    for run in 0..cfg.runs {
        let run_seed = seed::derive(cfg.seed, &[0xF0, run as u64]);
        let mut idx: Vec<usize> = (0..robot.len()).collect();
        idx.shuffle(&mut seed::rng(run_seed, &[1]));
        let (test, train) = idx.split_at(test_size);
        let (net, _) = train_force_decoder(
            robot.latents.select(Axis(0), train).view(),
            robot.forces.select(Axis(0), train).view(),
            cfg,
            run_seed,
        )?;
        unaligned.push(axis_l1(&net, human.latents.view(), human.forces.view())?);
        aligned.push(axis_l1(&net, moved.view(), human.forces.view())?);
        robot_runs.push(axis_l1(
            &net,
            robot.latents.select(Axis(0), test).view(),
            robot.forces.select(Axis(0), test).view(),
        )?);
    }
    Ok(ForceReport {
        unaligned: SettingErrors::from_runs(unaligned),
        aligned: SettingErrors::from_runs(aligned),
        robot: SettingErrors::from_runs(robot_runs),
        robot_train: robot.len() - test_size,
        robot_test: test_size,
        human_test: human.len(),
        seed: cfg.seed,
    })
}
