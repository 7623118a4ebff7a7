//! Per-domain tactile encoders with a single-query attention pool.
//!
//! A raw window `(w, n, d)` is split into `w` time-slice tokens of `n·d`
//! values. Tokens go through a linear patch embedding and a per-token trunk;
//! one learnable query then attends over the tokens and the pooled value is
//! the latent. Because the pool is a softmax-weighted sum, every latent is a
//! convex combination of value tokens, whatever the window length.
//!
//! Encoders are trained self-supervised with a reconstruction decoder and an
//! MSE loss on the scaled raw window.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Domain, SensorSpec, TactileFrame, Trajectory};
use crate::error::{Error, Result};
use crate::nn::{
    Activation, DenseNet, ForwardCache, Gradients, NetCheckpoint, Optimizer, OptimizerConfig,
};
use crate::seed;

pub const ENCODER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub latent_dim: usize,
    pub embed_dim: usize,
    pub trunk_hidden: Vec<usize>,
    pub key_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            latent_dim: 32,
            embed_dim: 32,
            trunk_hidden: vec![64],
            key_dim: 16,
            decoder_hidden: vec![64],
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent_dim", self.latent_dim),
            ("embed_dim", self.embed_dim),
            ("key_dim", self.key_dim),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Validation(format!("encoder {name} must be positive")));
            }
        }
        if self.trunk_hidden.iter().chain(&self.decoder_hidden).any(|&h| h == 0) {
            return Err(Error::Validation("encoder hidden widths must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Validation("encoder learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TactileEncoder {
    pub domain: Domain,
    pub spec: SensorSpec,
    /// Raw values are divided by this before tokenization.
    pub input_scale: f64,
    pub tokenizer: DenseNet,
    pub trunk: DenseNet,
    /// `key_dim × embed_dim`, no bias (a key bias cannot change the softmax).
    pub key_proj: Array2<f64>,
    pub query: Array1<f64>,
    pub value: DenseNet,
    pub decoder: DenseNet,
}

/// Intermediate values of one batched encoder pass.
struct PoolCache {
    frames: usize,
    tokenizer: ForwardCache,
    trunk: ForwardCache,
    value: ForwardCache,
    keys: Array2<f64>,
    /// frames × window
    weights: Array2<f64>,
    latents: Array2<f64>,
}

/// Gradients of every encoder parameter, in optimizer tensor order.
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub tokenizer: Gradients,
    pub trunk: Gradients,
    pub key_proj: Array2<f64>,
    pub query: Array1<f64>,
    pub value: Gradients,
    pub decoder: Gradients,
}

impl EncoderGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = self.tokenizer.tensors();
        out.extend(self.trunk.tensors());
        out.push(self.key_proj.as_slice().expect("standard layout"));
        out.push(self.query.as_slice().expect("contiguous"));
        out.extend(self.value.tensors());
        out.extend(self.decoder.tensors());
        out
    }
}

/// Outcome of self-supervised training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslReport {
    pub initial_mse: f64,
    pub final_mse: f64,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

impl TactileEncoder {
    pub fn new(domain: Domain, spec: SensorSpec, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        let s = |tag: u64| seed::derive(cfg.seed, &[0xE0C, tag]);
        let tokenizer = DenseNet::new(
            &[spec.slice_len(), cfg.embed_dim],
            Activation::Identity,
            Activation::Identity,
            s(1),
        )?;
        let mut trunk_sizes = vec![cfg.embed_dim];
        trunk_sizes.extend(&cfg.trunk_hidden);
        trunk_sizes.push(cfg.embed_dim);
        let trunk = DenseNet::new(&trunk_sizes, Activation::Tanh, Activation::Identity, s(2))?;
        let mut rng = seed::rng(cfg.seed, &[0xE0C, 3]);
        let bound = (6.0 / (cfg.embed_dim + cfg.key_dim) as f64).sqrt();
        let key_proj = Array2::from_shape_fn((cfg.key_dim, cfg.embed_dim), |_| {
            rng.random_range(-bound..bound)
        });
        let query = Array1::from_shape_fn(cfg.key_dim, |_| rng.random_range(-1.0..1.0));
        let value = DenseNet::new(
            &[cfg.embed_dim, cfg.latent_dim],
            Activation::Identity,
            Activation::Identity,
            s(4),
        )?;
        let mut dec_sizes = vec![cfg.latent_dim];
        dec_sizes.extend(&cfg.decoder_hidden);
        dec_sizes.push(spec.len());
        let decoder = DenseNet::new(&dec_sizes, Activation::Tanh, Activation::Identity, s(5))?;
        Ok(TactileEncoder {
            domain,
            spec,
            input_scale: 1.0,
            tokenizer,
            trunk,
            key_proj,
            query,
            value,
            decoder,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.value.output_dim()
    }

    pub fn key_dim(&self) -> usize {
        self.query.len()
    }

    /// Refuse data recorded with a different sensor layout.
    pub fn check_spec(&self, spec: &SensorSpec) -> Result<()> {
        if spec != &self.spec {
            return Err(Error::Compatibility(format!(
                "{} encoder expects sensor spec {}, data has {}",
                self.domain,
                self.spec.fingerprint(),
                spec.fingerprint()
            )));
        }
        Ok(())
    }

    fn check_rows(&self, raws: &ArrayView2<f64>) -> Result<()> {
        if raws.ncols() != self.spec.len() {
            return Err(Error::shape(
                format!("{} encoder input ({})", self.domain, self.spec.fingerprint()),
                self.spec.len(),
                raws.ncols(),
            ));
        }
        Ok(())
    }

    fn tokens(&self, raws: &ArrayView2<f64>) -> Array2<f64> {
        let frames = raws.nrows();
        let w = self.spec.window;
        let scale = 1.0 / self.input_scale;
        let tokens = raws
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((frames * w, self.spec.slice_len()))
            .expect("window splits evenly into slices");
        tokens.mapv(|v| v * scale)
    }

    fn pool_forward(&self, raws: ArrayView2<f64>) -> Result<PoolCache> {
        self.check_rows(&raws)?;
        let frames = raws.nrows();
        let w = self.spec.window;
        let tokens = self.tokens(&raws);
        let tokenizer = self.tokenizer.forward_cached(tokens.view())?;
        let trunk = self.trunk.forward_cached(tokenizer.output().view())?;
        let z = trunk.output();
        let keys = crate::nn::kernels::affine(
            z.view(),
            &self.key_proj,
            &Array1::zeros(self.key_dim()),
        );
        let value = self.value.forward_cached(z.view())?;
        let inv_sqrt = 1.0 / (self.key_dim() as f64).sqrt();
        let q = self.query.as_slice().expect("contiguous");
        let d = self.latent_dim();
        let mut weights = Array2::<f64>::zeros((frames, w));
        let mut latents = Array2::<f64>::zeros((frames, d));
        let values = value.output();
        for b in 0..frames {
            let mut row = weights.row_mut(b);
            for j in 0..w {
                let k = keys.row(b * w + j);
                row[j] = crate::nn::kernels::dot(k.as_slice().expect("row"), q) * inv_sqrt;
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let total = row.sum();
            row.mapv_inplace(|v| v / total);
            let mut out = latents.row_mut(b);
            for j in 0..w {
                let a = row[j];
                out.scaled_add(a, &values.row(b * w + j));
            }
        }
        Ok(PoolCache {
            frames,
            tokenizer,
            trunk,
            value,
            keys,
            weights,
            latents,
        })
    }

    /// Latents for a batch of raw windows (frames × window length).
    pub fn encode_batch(&self, raws: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.pool_forward(raws)?.latents)
    }

    pub fn encode(&self, frame: &TactileFrame) -> Result<Vec<f64>> {
        let row = ArrayView2::from_shape((1, frame.raw.len()), &frame.raw).expect("row view");
        Ok(self.encode_batch(row)?.into_raw_vec_and_offset().0)
    }

    /// Attention weights of the pooling head over the window's tokens.
    pub fn attention_weights(&self, frame: &TactileFrame) -> Result<Vec<f64>> {
        let row = ArrayView2::from_shape((1, frame.raw.len()), &frame.raw).expect("row view");
        Ok(self.pool_forward(row)?.weights.row(0).to_vec())
    }

    /// Reconstruction in scaled raw units.
    pub fn reconstruct_batch(&self, raws: ArrayView2<f64>) -> Result<Array2<f64>> {
        let latents = self.encode_batch(raws)?;
        self.decoder.forward_batch(latents.view())
    }

    /// Mean squared reconstruction error of `raws` in scaled units.
    pub fn reconstruction_mse(&self, raws: ArrayView2<f64>) -> Result<f64> {
        let recon = self.reconstruct_batch(raws)?;
        let target = raws.mapv(|v| v / self.input_scale);
        Ok(crate::nn::mse_loss(&recon, &target).0)
    }

    /// Per-timestep, per-finger latents: `out[t][k]` has `latent_dim` values.
    pub fn encode_trajectory(&self, traj: &Trajectory) -> Result<Vec<Vec<Vec<f64>>>> {
        if traj.domain != self.domain {
            return Err(Error::Compatibility(format!(
                "{} encoder cannot encode {} trajectory {}",
                self.domain, traj.domain, traj.id
            )));
        }
        let fingers = traj.fingers();
        let frames: Vec<&TactileFrame> = traj.steps.iter().flat_map(|s| &s.frames).collect();
        let raws = stack_frames(&frames, self.spec.len())?;
        let latents = self.encode_batch(raws.view())?;
        let d = self.latent_dim();
        let mut out = Vec::with_capacity(traj.len());
        for t in 0..traj.len() {
            out.push(
                (0..fingers)
                    .map(|k| latents.row(t * fingers + k).to_vec())
                    .collect::<Vec<_>>(),
            );
        }
        debug_assert!(out.iter().all(|s| s.iter().all(|l| l.len() == d)));
        Ok(out)
    }

    /// Reconstruction loss and gradients for a batch of raw windows.
    pub fn loss_and_grads(&self, raws: ArrayView2<f64>) -> Result<(f64, EncoderGrads)> {
        let cache = self.pool_forward(raws)?;
        let dec = self.decoder.forward_cached(cache.latents.view())?;
        let target = raws.mapv(|v| v / self.input_scale);
        let (loss, dout) = crate::nn::mse_loss(dec.output(), &target);
        let dec_back = self.decoder.backward(&dec, dout.view())?;
        let grads = self.pool_backward(&cache, dec_back.input_grad.view(), dec_back.grads)?;
        Ok((loss, grads))
    }

    fn pool_backward(
        &self,
        cache: &PoolCache,
        dlatent: ArrayView2<f64>,
        decoder: Gradients,
    ) -> Result<EncoderGrads> {
        let w = self.spec.window;
        let frames = cache.frames;
        let kd = self.key_dim();
        let inv_sqrt = 1.0 / (kd as f64).sqrt();
        let values = cache.value.output();
        let mut dvalues = Array2::<f64>::zeros(values.raw_dim());
        let mut dkeys = Array2::<f64>::zeros((frames * w, kd));
        let mut dquery = Array1::<f64>::zeros(kd);
        let mut da = vec![0.0; w];
        for b in 0..frames {
            let a = cache.weights.row(b);
            let dl = dlatent.row(b);
            for j in 0..w {
                let r = b * w + j;
                dvalues.row_mut(r).scaled_add(a[j], &dl);
                da[j] = dl.dot(&values.row(r));
            }
            let mean: f64 = (0..w).map(|j| a[j] * da[j]).sum();
            for j in 0..w {
                let r = b * w + j;
                let ds = a[j] * (da[j] - mean) * inv_sqrt;
                dquery.scaled_add(ds, &cache.keys.row(r));
                dkeys.row_mut(r).scaled_add(ds, &self.query);
            }
        }
        let z = cache.trunk.output();
        let mut dkey_proj = Array2::<f64>::zeros(self.key_proj.raw_dim());
        crate::nn::kernels::accumulate_outer(dkeys.view(), z.view(), &mut dkey_proj);
        let value_back = self.value.backward(&cache.value, dvalues.view())?;
        let mut dz = crate::nn::kernels::backprop_input(dkeys.view(), &self.key_proj);
        dz += &value_back.input_grad;
        let trunk_back = self.trunk.backward(&cache.trunk, dz.view())?;
        let tok_back = self
            .tokenizer
            .backward(&cache.tokenizer, trunk_back.input_grad.view())?;
        Ok(EncoderGrads {
            tokenizer: tok_back.grads,
            trunk: trunk_back.grads,
            key_proj: dkey_proj,
            query: dquery,
            value: value_back.grads,
            decoder,
        })
    }

    /// Parameter tensors in the same order as [`EncoderGrads::tensors`].
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let TactileEncoder {
            tokenizer,
            trunk,
            key_proj,
            query,
            value,
            decoder,
            ..
        } = self;
        let mut out = tokenizer.params_mut();
        out.extend(trunk.params_mut());
        out.push(key_proj.as_slice_mut().expect("standard layout"));
        out.push(query.as_slice_mut().expect("contiguous"));
        out.extend(value.params_mut());
        out.extend(decoder.params_mut());
        out
    }

    pub fn to_checkpoint(&self) -> EncoderCheckpoint {
        EncoderCheckpoint {
            format_version: ENCODER_FORMAT_VERSION,
            domain: self.domain,
            spec: self.spec,
            spec_fingerprint: self.spec.fingerprint(),
            input_scale: self.input_scale,
            key_dim: self.key_dim(),
            key_proj: self.key_proj.iter().copied().collect(),
            query: self.query.to_vec(),
            tokenizer: self.tokenizer.to_checkpoint(),
            trunk: self.trunk.to_checkpoint(),
            value: self.value.to_checkpoint(),
            decoder: self.decoder.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(c: EncoderCheckpoint) -> Result<Self> {
        if c.format_version != ENCODER_FORMAT_VERSION {
            return Err(Error::Compatibility(format!(
                "encoder checkpoint version {} is not supported",
                c.format_version
            )));
        }
        if c.spec_fingerprint != c.spec.fingerprint() {
            return Err(Error::Compatibility(
                "encoder checkpoint spec fingerprint does not match its spec".into(),
            ));
        }
        let tokenizer = DenseNet::from_checkpoint(c.tokenizer)?;
        let trunk = DenseNet::from_checkpoint(c.trunk)?;
        let value = DenseNet::from_checkpoint(c.value)?;
        let decoder = DenseNet::from_checkpoint(c.decoder)?;
        let embed = trunk.output_dim();
        let key_proj = Array2::from_shape_vec((c.key_dim, embed), c.key_proj)
            .map_err(|_| Error::Validation("encoder key projection has the wrong size".into()))?;
        if c.query.len() != c.key_dim
            || tokenizer.input_dim() != c.spec.slice_len()
            || tokenizer.output_dim() != trunk.input_dim()
            || value.input_dim() != embed
            || decoder.input_dim() != value.output_dim()
            || decoder.output_dim() != c.spec.len()
        {
            return Err(Error::Validation(
                "encoder checkpoint components have inconsistent shapes".into(),
            ));
        }
        Ok(TactileEncoder {
            domain: c.domain,
            spec: c.spec,
            input_scale: c.input_scale,
            tokenizer,
            trunk,
            key_proj,
            query: Array1::from_vec(c.query),
            value,
            decoder,
        })
    }

    /// Hex digest identifying this exact encoder.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.to_checkpoint()).expect("encoder serializes"));
        hex::encode(&h.finalize()[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderCheckpoint {
    pub format_version: u32,
    pub domain: Domain,
    pub spec: SensorSpec,
    pub spec_fingerprint: String,
    pub input_scale: f64,
    pub key_dim: usize,
    pub key_proj: Vec<f64>,
    pub query: Vec<f64>,
    pub tokenizer: NetCheckpoint,
    pub trunk: NetCheckpoint,
    pub value: NetCheckpoint,
    pub decoder: NetCheckpoint,
}

impl Serialize for TactileEncoder {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_checkpoint().serialize(s)
    }
}

impl<'de> Deserialize<'de> for TactileEncoder {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        TactileEncoder::from_checkpoint(EncoderCheckpoint::deserialize(d)?)
            .map_err(serde::de::Error::custom)
    }
}

/// Stack raw windows into a frames × len matrix.
pub fn stack_frames(frames: &[&TactileFrame], len: usize) -> Result<Array2<f64>> {
    let mut out = Array2::<f64>::zeros((frames.len(), len));
    for (i, f) in frames.iter().enumerate() {
        if f.raw.len() != len {
            return Err(Error::shape(format!("frame {i} raw window"), len, f.raw.len()));
        }
        out.row_mut(i)
            .as_slice_mut()
            .expect("row")
            .copy_from_slice(&f.raw);
    }
    Ok(out)
}

/// Train `enc` on raw windows (rows of `raws`) with a reconstruction loss.
///
/// The input scale is fixed first from the RMS of the training data. Each
/// epoch visits the frames in a seeded random order.
pub fn train_ssl(
    mut enc: TactileEncoder,
    raws: ArrayView2<f64>,
    cfg: &EncoderConfig,
) -> Result<(TactileEncoder, SslReport)> {
    cfg.validate()?;
    if raws.nrows() == 0 {
        return Err(Error::Validation("ssl training needs at least one frame".into()));
    }
    enc.check_rows(&raws)?;
    let rms = (raws.iter().map(|v| v * v).sum::<f64>() / raws.len() as f64).sqrt();
    enc.input_scale = if rms > 0.0 && rms.is_finite() { rms } else { 1.0 };
    let initial_mse = enc.reconstruction_mse(raws)?;
    let mut opt = Optimizer::new(OptimizerConfig::adam(cfg.learning_rate))?;
    let mut rng = seed::rng(cfg.seed, &[0x551, enc.domain as u64]);
    let mut order: Vec<usize> = (0..raws.nrows()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch = Array2::<f64>::zeros((0, raws.ncols()));
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            batch = raws.select(Axis(0), chunk);
            let (loss, grads) = enc.loss_and_grads(batch.view())?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    stage: format!("{} encoder ssl", enc.domain),
                    index: epoch,
                    reason: "non-finite reconstruction loss".into(),
                });
            }
            let g = grads.tensors();
            let mut p = enc.params_mut();
            opt.update(&mut p, &g).map_err(|e| match e {
                Error::Training { reason, .. } => Error::Training {
                    stage: format!("{} encoder ssl", enc.domain),
                    index: epoch,
                    reason,
                },
                other => other,
            })?;
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    drop(batch);
    let final_mse = enc.reconstruction_mse(raws)?;
    Ok((
        enc,
        SslReport {
            initial_mse,
            final_mse,
            epoch_losses,
        },
    ))
}

/// View of the first `rows` rows; handy for evaluating on a subset.
pub fn head_rows(raws: &Array2<f64>, rows: usize) -> ArrayView2<'_, f64> {
    raws.slice(s![..rows.min(raws.nrows()), ..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Pose;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            latent_dim: 4,
            embed_dim: 5,
            trunk_hidden: vec![6],
            key_dim: 3,
            decoder_hidden: vec![5],
            epochs: 5,
            batch_size: 4,
            learning_rate: 1e-2,
            seed: 3,
        }
    }

    fn frame(raw: Vec<f64>) -> TactileFrame {
        TactileFrame {
            raw,
            pose: Pose::new([0.0; 3], [0.0; 3]),
            finger: 0,
        }
    }

    #[test]
    fn latent_has_shared_dimension_for_both_domains() {
        let cfg = small_cfg();
        let h = TactileEncoder::new(Domain::Human, SensorSpec::new(3, 1, 3), &cfg).unwrap();
        let r = TactileEncoder::new(Domain::Robot, SensorSpec::new(4, 5, 3), &cfg).unwrap();
        assert_eq!(h.encode(&frame(vec![0.3; 9])).unwrap().len(), 4);
        assert_eq!(r.encode(&frame(vec![0.3; 60])).unwrap().len(), 4);
    }

    #[test]
    fn wrong_domain_frame_is_a_shape_error() {
        let h = TactileEncoder::new(Domain::Human, SensorSpec::new(3, 1, 3), &small_cfg()).unwrap();
        assert!(matches!(
            h.encode(&frame(vec![0.0; 60])),
            Err(Error::Shape { expected: 9, actual: 60, .. })
        ));
    }

    #[test]
    fn zero_trunk_gives_input_independent_latent() {
        let mut enc =
            TactileEncoder::new(Domain::Robot, SensorSpec::new(4, 2, 3), &small_cfg()).unwrap();
        for l in enc.trunk.layers_mut() {
            l.weight.fill(0.0);
        }
        enc.trunk.layers_mut()[1].bias = Array1::from_vec(vec![0.1, -0.2, 0.3, 0.0, 0.5]);
        let a = enc.encode(&frame((0..24).map(|i| i as f64).collect())).unwrap();
        let b = enc.encode(&frame(vec![-3.0; 24])).unwrap();
        assert_eq!(a, b);
        let expected = enc.value.forward(&[0.1, -0.2, 0.3, 0.0, 0.5]).unwrap();
        for (x, y) in a.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn taxel_permutation_changes_the_latent() {
        let enc =
            TactileEncoder::new(Domain::Robot, SensorSpec::new(2, 3, 1), &small_cfg()).unwrap();
        let a = enc.encode(&frame(vec![1.0, 2.0, 3.0, 0.5, 0.0, -1.0])).unwrap();
        let b = enc.encode(&frame(vec![3.0, 2.0, 1.0, 0.5, 0.0, -1.0])).unwrap();
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-6);
    }

    #[test]
    fn attention_weights_are_a_distribution() {
        let enc =
            TactileEncoder::new(Domain::Robot, SensorSpec::new(6, 2, 3), &small_cfg()).unwrap();
        let w = enc
            .attention_weights(&frame((0..36).map(|i| (i as f64).sin() * 4.0).collect()))
            .unwrap();
        assert_eq!(w.len(), 6);
        assert!(w.iter().all(|v| *v >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_encode_is_bit_identical_to_single_encode() {
        let enc =
            TactileEncoder::new(Domain::Robot, SensorSpec::new(3, 2, 2), &small_cfg()).unwrap();
        let raws = Array2::from_shape_fn((7, 12), |(i, j)| ((i * 12 + j) as f64 * 0.37).cos());
        let batch = enc.encode_batch(raws.view()).unwrap();
        for i in 0..7 {
            let single = enc.encode(&frame(raws.row(i).to_vec())).unwrap();
            assert_eq!(batch.row(i).to_vec(), single);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let enc =
            TactileEncoder::new(Domain::Human, SensorSpec::new(3, 1, 3), &small_cfg()).unwrap();
        let text = serde_json::to_string(&enc).unwrap();
        let back: TactileEncoder = serde_json::from_str(&text).unwrap();
        assert_eq!(back, enc);
        assert_eq!(back.fingerprint(), enc.fingerprint());
    }

    #[test]
    fn mismatched_spec_is_refused() {
        let enc =
            TactileEncoder::new(Domain::Human, SensorSpec::new(3, 1, 3), &small_cfg()).unwrap();
        assert!(matches!(
            enc.check_spec(&SensorSpec::new(10, 30, 3)),
            Err(Error::Compatibility(_))
        ));
    }

    #[test]
    fn identical_frames_reconstruct_almost_exactly() {
        let cfg = EncoderConfig {
            epochs: 400,
            batch_size: 8,
            learning_rate: 3e-3,
            ..small_cfg()
        };
        let enc = TactileEncoder::new(Domain::Human, SensorSpec::new(3, 1, 3), &cfg).unwrap();
        let raw: Vec<f64> = vec![120.0, -40.0, 300.0, 80.0, 10.0, -250.0, 0.0, 60.0, 150.0];
        let raws = Array2::from_shape_fn((8, 9), |(_, j)| raw[j]);
        let (_, report) = train_ssl(enc, raws.view(), &cfg).unwrap();
        assert!(report.final_mse < 1e-6, "final mse {}", report.final_mse);
        assert!(report.final_mse <= report.initial_mse);
        assert_eq!(report.epoch_losses.len(), 400);
    }

    #[test]
    fn ssl_training_is_seed_deterministic() {
        let cfg = small_cfg();
        let raws = Array2::from_shape_fn((10, 9), |(i, j)| ((i * 9 + j) as f64).sin() * 50.0);
        let run = || {
            let enc = TactileEncoder::new(Domain::Human, SensorSpec::new(3, 1, 3), &cfg).unwrap();
            train_ssl(enc, raws.view(), &cfg).unwrap()
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let cfg = small_cfg();
        let enc = TactileEncoder::new(Domain::Human, SensorSpec::new(3, 1, 3), &cfg).unwrap();
        let raws = Array2::<f64>::zeros((0, 9));
        assert!(matches!(train_ssl(enc, raws.view(), &cfg), Err(Error::Validation(_))));
    }
}
