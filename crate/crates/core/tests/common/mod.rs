#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use tactile_align::data::{Domain, Pose, TactileFrame, Timestep, Trajectory, Vec3};
use tactile_align::nn::{Activation, DenseNet};
use tactile_align::pairs::{PairConfig, PseudoPair, TransitionObservation, Source};

pub const FD_EPS: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn smoke_config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// ‖a − b‖ / (‖a‖ + ‖b‖), with an absolute floor so that two numerically
/// zero tensors compare equal.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / (norm(a) + norm(b)).max(1e-7)
}

/// Which hidden ReLU units are active, for every layer and batch row.
pub fn relu_pattern(net: &DenseNet, x: ArrayView2<f64>) -> Vec<bool> {
    let mut h = x.to_owned();
    let mut pattern = Vec::new();
    for layer in net.layers() {
        let mut z = h.dot(&layer.weight.t());
        z += &layer.bias;
        if layer.activation == Activation::Relu {
            pattern.extend(z.iter().map(|v| *v > 0.0));
            z.mapv_inplace(|v| v.max(0.0));
        } else if layer.activation == Activation::Tanh {
            z.mapv_inplace(f64::tanh);
        }
        h = z;
    }
    pattern
}

/// Random weights and biases of moderate scale.
pub fn randomize(net: &mut DenseNet, rng: &mut impl Rng) {
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

/// Central-difference check of analytic gradients, tensor by tensor.
///
/// `params` gives mutable access to the parameter tensors, `loss` evaluates
/// the objective and `smooth` reports whether the current parameters lie in
/// the same differentiable region as the unperturbed ones. Coordinates whose
/// ±ε perturbation leaves that region are skipped. Returns the worst
/// per-tensor relative error and the number of skipped coordinates.
pub fn check_gradients<M>(
    model: &mut M,
    analytic: &[Vec<f64>],
    params: impl Fn(&mut M) -> Vec<&mut [f64]>,
    loss: impl Fn(&M) -> f64,
    smooth: impl Fn(&M) -> bool,
) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for (t, grad) in analytic.iter().enumerate() {
        let mut fd = vec![0.0; grad.len()];
        let mut kept = grad.clone();
        for i in 0..grad.len() {
            let orig = params(model)[t][i];
            params(model)[t][i] = orig + FD_EPS;
            let (plus, ok_plus) = (loss(model), smooth(model));
            params(model)[t][i] = orig - FD_EPS;
            let (minus, ok_minus) = (loss(model), smooth(model));
            params(model)[t][i] = orig;
            if ok_plus && ok_minus {
                fd[i] = (plus - minus) / (2.0 * FD_EPS);
            } else {
                skipped += 1;
                fd[i] = grad[i];
                kept[i] = grad[i];
            }
        }
        worst = worst.max(relative_error(&kept, &fd));
    }
    (worst, skipped)
}

fn pose(rng: &mut impl Rng, center: &Vec3, spread: f64) -> Pose {
    let mut p = [0.0; 3];
    for (a, c) in p.iter_mut().zip(center) {
        *a = c + rng.random_range(-spread..spread);
    }
    let rot = [
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ];
    Pose::new(p, rot)
}

/// Random object-annotated trajectories of one task, with task-specific
/// offsets and scales.
pub fn random_task_trajectories(
    task: &str,
    domain: Domain,
    count: usize,
    fingers: usize,
    rng: &mut impl Rng,
) -> Vec<Trajectory> {
    let center = [
        rng.random_range(-50.0..50.0),
        rng.random_range(-50.0..50.0),
        rng.random_range(-50.0..50.0),
    ];
    let spread = 10f64.powf(rng.random_range(-3.0..1.0));
    (0..count)
        .map(|id| {
            let len = rng.random_range(3..12);
            let steps = (0..len)
                .map(|_| {
                    let frames = (0..fingers)
                        .map(|k| TactileFrame {
                            raw: vec![rng.random_range(0.0..1.0); 3],
                            pose: pose(rng, &center, spread),
                            finger: k,
                        })
                        .collect();
                    Timestep {
                        frames,
                        wrist: pose(rng, &center, spread),
                        object: Some(pose(rng, &center, spread)),
                    }
                })
                .collect();
            Trajectory {
                id,
                domain,
                task_id: task.to_string(),
                script_id: None,
                steps,
                ground_truth: None,
            }
        })
        .collect()
}

/// Random transitions on a coarse lattice so that score ties occur.
pub fn random_transitions(
    domain: Domain,
    count: usize,
    fingers: usize,
    stats: &[&str],
    rng: &mut impl Rng,
) -> Vec<TransitionObservation> {
    let coord = |rng: &mut ChaCha8Rng| f64::from(rng.random_range(-4i32..=4)) * 0.25;
    let mut local = ChaCha8Rng::seed_from_u64(rng.random());
    (0..count)
        .map(|i| {
            let r = &mut local;
            TransitionObservation {
                domain,
                source: Source {
                    trajectory: i / 7,
                    step: i % 7,
                },
                finger: r.random_range(0..fingers),
                stats: stats[r.random_range(0..stats.len())].to_string(),
                p: [coord(r), coord(r), coord(r)],
                o: [coord(r), coord(r), coord(r), coord(r), coord(r), coord(r)],
                dp: [coord(r), coord(r), coord(r)],
                d_o: [coord(r), coord(r), coord(r), coord(r), coord(r), coord(r)],
                contact: r.random_bool(0.6),
                latent: vec![i as f64, -(i as f64)],
            }
        })
        .collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Exhaustive reference for pair mining: score every human/robot
/// combination, keep the N best robot transitions of the same task and
/// finger (ties to the lowest robot source), then apply the δ and contact
/// filters.
pub fn brute_force_pairs(
    human: &[TransitionObservation],
    robot: &[TransitionObservation],
    cfg: &PairConfig,
) -> Vec<PseudoPair> {
    let mut out = Vec::new();
    for h in human {
        let mut scored: Vec<(f64, &TransitionObservation)> = robot
            .iter()
            .filter(|r| r.stats == h.stats && r.finger == h.finger)
            .map(|r| {
                let s = euclid(&h.p, &r.p)
                    + euclid(&h.o, &r.o)
                    + cfg.lambda * euclid(&h.dp, &r.dp)
                    + cfg.lambda * euclid(&h.d_o, &r.d_o);
                (s, r)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.source.cmp(&b.1.source)));
        for (s, r) in scored.into_iter().take(cfg.neighbors) {
            if s < cfg.delta && r.contact == h.contact {
                out.push(PseudoPair {
                    human: h.source,
                    robot: r.source,
                    finger: h.finger,
                    h_star: h.latent.clone(),
                    r_star: r.latent.clone(),
                    score: s,
                    contact: h.contact.into(),
                });
            }
        }
    }
    out.sort_by_key(|p| (p.human, p.finger, p.robot));
    out
}
