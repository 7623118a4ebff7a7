//! Rectified flow between human and robot latent spaces.
//!
//! Pairs `(h*, r*)` define straight paths `x_t = (1 − t)·h* + t·r*` whose
//! velocity is the constant `r* − h*`. A dense network `v(x, t)` regresses
//! that velocity over a uniform time grid `t = k/T`, and a human latent is
//! transported by forward Euler integration from `t = 0` to `t = 1`.
//!
//! Training draws seeded minibatches from the (pair × grid time) product;
//! [`flow_loss`] evaluates the full-grid objective exactly.

pub mod toy2d;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    mse_loss, Activation, DenseNet, NetCheckpoint, Optimizer, OptimizerConfig, OptimizerKind,
};
use crate::pairs::PseudoPair;
use crate::seed;

pub const FLOW_FORMAT_VERSION: u32 = 1;

/// Tag stored with every velocity field: paths start at the human latent.
pub const CONVENTION: &str = "x_t=(1-t)h+t*r;v=r-h";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub width: usize,
    pub depth: usize,
    /// Uniform training grid size `T`.
    pub time_steps: usize,
    /// Optimizer steps.
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Euler steps used for transport.
    pub transport_steps: usize,
    /// Optimizer steps averaged into one loss-curve entry.
    pub log_every: usize,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            width: 128,
            depth: 3,
            time_steps: 100,
            steps: 2000,
            batch_size: 256,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            transport_steps: 100,
            log_every: 100,
            seed: 0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("width", self.width),
            ("depth", self.depth),
            ("time_steps", self.time_steps),
            ("steps", self.steps),
            ("batch_size", self.batch_size),
            ("transport_steps", self.transport_steps),
            ("log_every", self.log_every),
        ] {
            if v == 0 {
                return Err(Error::Validation(format!("flow {name} must be positive")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Validation("flow learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub net: DenseNet,
    pub time_steps: usize,
    pub transport_steps: usize,
    pub convention: String,
    /// Identifies the latent spaces the field was trained between.
    pub latent_fingerprint: String,
}

impl VelocityField {
    pub fn new(latent_dim: usize, cfg: &FlowConfig, latent_fingerprint: String) -> Result<Self> {
        cfg.validate()?;
        let mut sizes = vec![latent_dim + 1];
        sizes.extend(std::iter::repeat_n(cfg.width, cfg.depth));
        sizes.push(latent_dim);
        let net = DenseNet::new(
            &sizes,
            Activation::Relu,
            Activation::Identity,
            seed::derive(cfg.seed, &[0xF10]),
        )?;
        Ok(VelocityField {
            net,
            time_steps: cfg.time_steps,
            transport_steps: cfg.transport_steps,
            convention: CONVENTION.into(),
            latent_fingerprint,
        })
    }

    /// Wrap an existing network taking `(x, t)` and returning a velocity.
    pub fn from_net(net: DenseNet, transport_steps: usize) -> Result<Self> {
        if net.input_dim() != net.output_dim() + 1 {
            return Err(Error::shape(
                "velocity network input (latent + time)",
                net.output_dim() + 1,
                net.input_dim(),
            ));
        }
        Ok(VelocityField {
            net,
            time_steps: 100,
            transport_steps,
            convention: CONVENTION.into(),
            latent_fingerprint: String::new(),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Velocities at the rows of `x`, all at time `t`.
    pub fn velocity(&self, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        let d = self.latent_dim();
        if x.ncols() != d {
            return Err(Error::shape("transported latent", d, x.ncols()));
        }
        let mut input = Array2::<f64>::zeros((x.nrows(), d + 1));
        input.slice_mut(ndarray::s![.., ..d]).assign(&x);
        input.column_mut(d).fill(t);
        self.net.forward_batch(input.view())
    }

    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.to_checkpoint()).expect("field serializes"));
        hex::encode(&h.finalize()[..8])
    }

    pub fn to_checkpoint(&self) -> FlowCheckpoint {
        FlowCheckpoint {
            format_version: FLOW_FORMAT_VERSION,
            convention: self.convention.clone(),
            latent_fingerprint: self.latent_fingerprint.clone(),
            time_steps: self.time_steps,
            transport_steps: self.transport_steps,
            net: self.net.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(c: FlowCheckpoint) -> Result<Self> {
        if c.format_version != FLOW_FORMAT_VERSION {
            return Err(Error::Compatibility(format!(
                "velocity field format version {} is not supported",
                c.format_version
            )));
        }
        if c.convention != CONVENTION {
            return Err(Error::Compatibility(format!(
                "velocity field uses interpolation convention `{}`, expected `{CONVENTION}`",
                c.convention
            )));
        }
        let mut vf = VelocityField::from_net(DenseNet::from_checkpoint(c.net)?, c.transport_steps)?;
        vf.time_steps = c.time_steps;
        vf.latent_fingerprint = c.latent_fingerprint;
        Ok(vf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowCheckpoint {
    pub format_version: u32,
    pub convention: String,
    pub latent_fingerprint: String,
    pub time_steps: usize,
    pub transport_steps: usize,
    pub net: NetCheckpoint,
}

impl Serialize for VelocityField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_checkpoint().serialize(s)
    }
}

impl<'de> Deserialize<'de> for VelocityField {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        VelocityField::from_checkpoint(FlowCheckpoint::deserialize(d)?)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    /// Full-grid loss before training, on the evaluation pairs.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean minibatch loss per `log_every` optimizer steps.
    pub loss_curve: Vec<f64>,
    pub pairs: usize,
}

fn check_pairs(pairs: &[PseudoPair], d: usize) -> Result<()> {
    for (i, p) in pairs.iter().enumerate() {
        if p.h_star.len() != d || p.r_star.len() != d {
            return Err(Error::Training {
                stage: "flow".into(),
                index: i,
                reason: format!(
                    "pair latents have dims {}/{}, field expects {d}",
                    p.h_star.len(),
                    p.r_star.len()
                ),
            });
        }
    }
    Ok(())
}

/// Fill `input`/`target` row `row` with the grid point `k/T` of `pair`.
fn fill_row(pair: &PseudoPair, t: f64, input: &mut Array2<f64>, target: &mut Array2<f64>, row: usize) {
    let d = pair.h_star.len();
    let mut x = input.row_mut(row);
    for j in 0..d {
        x[j] = (1.0 - t) * pair.h_star[j] + t * pair.r_star[j];
    }
    x[d] = t;
    let mut y = target.row_mut(row);
    for j in 0..d {
        y[j] = pair.r_star[j] - pair.h_star[j];
    }
}

/// Full-grid flow objective: mean over pairs, grid times and latent dims.
pub fn flow_loss(vf: &VelocityField, pairs: &[PseudoPair]) -> Result<f64> {
    let d = vf.latent_dim();
    check_pairs(pairs, d)?;
    if pairs.is_empty() {
        return Err(Error::Usage("flow loss needs at least one pair".into()));
    }
    let t_steps = vf.time_steps;
    let mut total = 0.0;
    let mut input = Array2::<f64>::zeros((t_steps, d + 1));
    let mut target = Array2::<f64>::zeros((t_steps, d));
    for p in pairs {
        for k in 0..t_steps {
            fill_row(p, k as f64 / t_steps as f64, &mut input, &mut target, k);
        }
        let pred = vf.net.forward_batch(input.view())?;
        total += mse_loss(&pred, &target).0;
    }
    Ok(total / pairs.len() as f64)
}

/// Full-grid gradient of [`flow_loss`], accumulated pair by pair.
pub fn flow_loss_gradient(vf: &VelocityField, pairs: &[PseudoPair]) -> Result<crate::nn::Gradients> {
    let d = vf.latent_dim();
    check_pairs(pairs, d)?;
    let t_steps = vf.time_steps;
    let mut grads = crate::nn::Gradients::zeros_like(&vf.net);
    let mut input = Array2::<f64>::zeros((t_steps, d + 1));
    let mut target = Array2::<f64>::zeros((t_steps, d));
    for p in pairs {
        for k in 0..t_steps {
            fill_row(p, k as f64 / t_steps as f64, &mut input, &mut target, k);
        }
        let cache = vf.net.forward_cached(input.view())?;
        let (_, g) = mse_loss(cache.output(), &target);
        grads.add_assign(&vf.net.backward(&cache, g.view())?.grads);
    }
    grads.scale(1.0 / pairs.len() as f64);
    Ok(grads)
}

/// Pairs used to measure the full-grid loss before and after training.
const EVAL_PAIRS: usize = 512;

/// Train a velocity field on `pairs`.
pub fn train_flow(
    pairs: &[PseudoPair],
    cfg: &FlowConfig,
    latent_fingerprint: String,
) -> Result<(VelocityField, FlowReport)> {
    cfg.validate()?;
    let Some(first) = pairs.first() else {
        return Err(Error::Training {
            stage: "flow".into(),
            index: 0,
            reason: "no pseudo-pairs to train on".into(),
        });
    };
    let d = first.h_star.len();
    check_pairs(pairs, d)?;
    let mut vf = VelocityField::new(d, cfg, latent_fingerprint)?;
    let eval_idx = crate::eval::emd::subsample_indices(pairs.len(), EVAL_PAIRS, cfg.seed, 0xF1);
    let eval_pairs: Vec<PseudoPair> = eval_idx.iter().map(|&i| pairs[i].clone()).collect();
    let initial_loss = flow_loss(&vf, &eval_pairs)?;

    let opt_cfg = OptimizerConfig {
        kind: cfg.optimizer,
        ..OptimizerConfig::adam(cfg.learning_rate)
    };
    let mut opt = Optimizer::new(opt_cfg)?;
    let mut rng = seed::rng(cfg.seed, &[0xF11]);
    let mut input = Array2::<f64>::zeros((cfg.batch_size, d + 1));
    let mut target = Array2::<f64>::zeros((cfg.batch_size, d));
    let mut loss_curve = Vec::new();
    let mut window = 0.0;
    for step in 0..cfg.steps {
        for row in 0..cfg.batch_size {
            let p = &pairs[rng.random_range(0..pairs.len())];
            let k = rng.random_range(0..cfg.time_steps);
            fill_row(p, k as f64 / cfg.time_steps as f64, &mut input, &mut target, row);
        }
        let cache = vf.net.forward_cached(input.view())?;
        let (loss, g) = mse_loss(cache.output(), &target);
        if !loss.is_finite() {
            return Err(Error::Training {
                stage: "flow".into(),
                index: step,
                reason: "non-finite loss".into(),
            });
        }
        let back = vf.net.backward(&cache, g.view())?;
        opt.step(&mut vf.net, &back.grads)?;
        window += loss;
        if (step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps {
            let n = (step % cfg.log_every + 1) as f64;
            loss_curve.push(window / n);
            window = 0.0;
        }
    }
    let final_loss = flow_loss(&vf, &eval_pairs)?;
    Ok((
        vf,
        FlowReport {
            initial_loss,
            final_loss,
            loss_curve,
            pairs: pairs.len(),
        },
    ))
}

/// Forward Euler transport of the rows of `latents` with `steps` steps.
pub fn transport_batch_with(
    vf: &VelocityField,
    latents: ArrayView2<f64>,
    steps: usize,
) -> Result<Array2<f64>> {
    if steps == 0 {
        return Err(Error::Usage("transport needs at least one Euler step".into()));
    }
    let d = vf.latent_dim();
    if latents.ncols() != d {
        return Err(Error::shape("transported latent", d, latents.ncols()));
    }
    let mut x = latents.to_owned();
    if x.nrows() == 0 {
        return Ok(x);
    }
    let h = 1.0 / steps as f64;
    for m in 0..steps {
        let v = vf.velocity(x.view(), m as f64 / steps as f64)?;
        x.scaled_add(h, &v);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Transport { step: m });
        }
    }
    Ok(x)
}

/// Transport a batch using the field's configured step count.
pub fn transport_batch(vf: &VelocityField, latents: ArrayView2<f64>) -> Result<Array2<f64>> {
    transport_batch_with(vf, latents, vf.transport_steps)
}

/// Transport a single latent with `steps` Euler steps.
pub fn transport(vf: &VelocityField, h: &[f64], steps: usize) -> Result<Vec<f64>> {
    let view = ArrayView2::from_shape((1, h.len()), h).expect("row view");
    Ok(transport_batch_with(vf, view, steps)?.into_raw_vec_and_offset().0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use crate::pairs::{ContactLabel, Source};
    use ndarray::Array1;

    fn linear_field(weight: Array2<f64>, bias: Array1<f64>) -> VelocityField {
        let net = DenseNet::from_layers(
            vec![Layer {
                weight,
                bias,
                activation: Activation::Identity,
            }],
            0,
        )
        .unwrap();
        VelocityField::from_net(net, 10).unwrap()
    }

    fn pair(h: Vec<f64>, r: Vec<f64>) -> PseudoPair {
        PseudoPair {
            human: Source {
                trajectory: 0,
                step: 0,
            },
            robot: Source {
                trajectory: 1,
                step: 0,
            },
            finger: 0,
            h_star: h,
            r_star: r,
            score: 0.0,
            contact: ContactLabel::Contact,
        }
    }

    #[test]
    fn zero_field_is_identity_transport() {
        let vf = linear_field(Array2::zeros((2, 3)), Array1::zeros(2));
        assert_eq!(transport(&vf, &[0.3, -1.2], 7).unwrap(), vec![0.3, -1.2]);
    }

    #[test]
    fn constant_field_is_integrated_exactly() {
        let vf = linear_field(Array2::zeros((2, 3)), Array1::from_vec(vec![0.5, -2.0]));
        assert_eq!(transport(&vf, &[1.0, 1.0], 1).unwrap(), vec![1.5, -1.0]);
        let ten = transport(&vf, &[1.0, 1.0], 10).unwrap();
        assert!((ten[0] - 1.5).abs() < 1e-12 && (ten[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_singleton_batches() {
        let vf = linear_field(
            Array2::from_shape_fn((2, 3), |(i, j)| (i + j) as f64 * 0.1),
            Array1::zeros(2),
        );
        assert_eq!(transport_batch(&vf, Array2::zeros((0, 2)).view()).unwrap().nrows(), 0);
        let one = ndarray::array![[0.2, 0.4]];
        let batch = transport_batch(&vf, one.view()).unwrap();
        assert_eq!(batch.row(0).to_vec(), transport(&vf, &[0.2, 0.4], 10).unwrap());
    }

    #[test]
    fn divergent_field_reports_the_step() {
        let vf = linear_field(
            Array2::from_shape_fn((1, 2), |(_, j)| if j == 0 { 1e300 } else { 0.0 }),
            Array1::zeros(1),
        );
        assert!(matches!(
            transport(&vf, &[1e10], 4),
            Err(Error::Transport { step: 0 })
        ));
    }

    #[test]
    fn zero_displacement_pair_learns_a_still_field() {
        let cfg = FlowConfig {
            width: 16,
            depth: 2,
            steps: 2000,
            batch_size: 32,
            learning_rate: 1e-3,
            ..FlowConfig::default()
        };
        let pairs = vec![pair(vec![0.5, -0.3], vec![0.5, -0.3])];
        let (vf, report) = train_flow(&pairs, &cfg, String::new()).unwrap();
        assert!(report.final_loss <= report.initial_loss);
        for k in 0..10 {
            let v = vf
                .velocity(ndarray::array![[0.5, -0.3]].view(), k as f64 / 10.0)
                .unwrap();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm <= 1e-3, "velocity norm {norm} at t={k}/10");
        }
    }

    #[test]
    fn checkpoint_round_trip_and_convention_check() {
        let vf = VelocityField::new(3, &FlowConfig { width: 8, ..FlowConfig::default() }, "fp".into())
            .unwrap();
        let text = serde_json::to_string(&vf).unwrap();
        let back: VelocityField = serde_json::from_str(&text).unwrap();
        assert_eq!(back, vf);
        let mut c = vf.to_checkpoint();
        c.convention = "x_t=t*h+(1-t)*r".into();
        assert!(matches!(
            VelocityField::from_checkpoint(c),
            Err(Error::Compatibility(_))
        ));
    }

    #[test]
    fn training_needs_pairs_of_matching_dims() {
        let cfg = FlowConfig::default();
        assert!(matches!(
            train_flow(&[], &cfg, String::new()),
            Err(Error::Training { .. })
        ));
        let pairs = vec![pair(vec![0.0, 1.0], vec![0.0, 1.0]), pair(vec![0.0], vec![1.0])];
        assert!(matches!(
            train_flow(&pairs, &cfg, String::new()),
            Err(Error::Training { index: 1, .. })
        ));
    }
}
