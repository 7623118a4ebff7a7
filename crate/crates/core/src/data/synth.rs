//! Synthetic two-domain demonstrations with a known contact process.
//!
//! Each trajectory follows a scripted pivot-like or insertion-like motion.
//! Contact starts at a random onset step; from then on a contact progress
//! variable `u ∈ [0, 1]` drives the object pose, the fingertip poses and the
//! per-finger contact vector `g ∈ R^3`. Both embodiments observe the same
//! `g` through their own fixed linear map and tanh squashing:
//!
//! ```text
//! sample = scale · A · tanh(g / saturation) + noise
//! ```
//!
//! Within a window the contact vector is linearly interpolated between the
//! previous and the current timestep.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::pose::{add3, norm3, rotate, scale3, sub3, Pose, Vec3};
use super::{Dataset, Domain, SensorSpec, TactileFrame, Timestep, Trajectory};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Pivot,
    Insertion,
}

impl TaskKind {
    pub fn id(self) -> &'static str {
        match self {
            TaskKind::Pivot => "pivot",
            TaskKind::Insertion => "insertion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    /// Fixed random linear map followed by tanh squashing.
    Random,
    /// `g` copied (tiled) into every sample, no squashing.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub fingers: usize,
    pub tasks: Vec<TaskKind>,
    pub human_per_task: usize,
    pub robot_per_task: usize,
    /// Extra trajectories without object pose (encoder training only).
    pub human_play: usize,
    pub robot_play: usize,
    pub length_min: usize,
    pub length_max: usize,
    pub human_sensor: SensorSpec,
    pub robot_sensor: SensorSpec,
    /// Target fraction of timesteps in contact.
    pub contact_rate: f64,
    pub human_noise: f64,
    pub robot_noise: f64,
    pub human_scale: f64,
    pub robot_scale: f64,
    pub human_saturation: f64,
    pub robot_saturation: f64,
    pub observation: ObservationKind,
    /// Seed of the observation maps; shared across dataset seeds.
    pub map_seed: u64,
    /// Uniform half-width of the per-trajectory object offset, meters.
    pub start_jitter: f64,
    /// Uniform half-width of the fingertip approach start offset, meters.
    pub approach_jitter: f64,
    /// Relative half-width of the per-trajectory force scale.
    pub force_jitter: f64,
    /// Robot trajectory `j` of a task replays human script `j`.
    pub shared_scripts: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            fingers: 2,
            tasks: vec![TaskKind::Pivot, TaskKind::Insertion],
            human_per_task: 24,
            robot_per_task: 12,
            human_play: 2,
            robot_play: 2,
            length_min: 30,
            length_max: 40,
            human_sensor: SensorSpec::human_default(),
            robot_sensor: SensorSpec::robot_default(),
            contact_rate: 0.7,
            human_noise: 0.0,
            robot_noise: 0.0,
            human_scale: 4000.0,
            robot_scale: 100.0,
            human_saturation: 3.0,
            robot_saturation: 2.0,
            observation: ObservationKind::Random,
            map_seed: 7,
            start_jitter: 0.004,
            approach_jitter: 0.02,
            force_jitter: 0.05,
            shared_scripts: false,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("generator config: {m}")));
        if self.fingers == 0 {
            return bad("fingers must be at least 1");
        }
        if self.tasks.is_empty() {
            return bad("at least one task is required");
        }
        if self.human_per_task == 0 || self.robot_per_task == 0 {
            return bad("zero trajectories per task");
        }
        if self.length_min < 3 || self.length_max < self.length_min {
            return bad("trajectory lengths must satisfy 3 <= length_min <= length_max");
        }
        self.human_sensor.validate()?;
        self.robot_sensor.validate()?;
        if !(self.contact_rate > 0.0 && self.contact_rate < 1.0) {
            return bad("contact_rate must lie in (0, 1)");
        }
        for (name, v) in [
            ("human_noise", self.human_noise),
            ("robot_noise", self.robot_noise),
            ("start_jitter", self.start_jitter),
            ("approach_jitter", self.approach_jitter),
            ("force_jitter", self.force_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        for (name, v) in [
            ("human_scale", self.human_scale),
            ("robot_scale", self.robot_scale),
            ("human_saturation", self.human_saturation),
            ("robot_saturation", self.robot_saturation),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if self.force_jitter >= 1.0 {
            return bad("force_jitter must be below 1");
        }
        if self.shared_scripts && self.robot_per_task > self.human_per_task {
            return bad("shared_scripts needs robot_per_task <= human_per_task");
        }
        Ok(())
    }
}

/// Per-trajectory random draws that fix the motion and contact script.
#[derive(Debug, Clone)]
struct Script {
    task: TaskKind,
    length: usize,
    onset: usize,
    object_offset: Vec3,
    approach_offsets: Vec<Vec3>,
    force_factor: f64,
}

impl Script {
    fn draw(task: TaskKind, cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Script {
        let length = rng.random_range(cfg.length_min..=cfg.length_max);
        let rate = (cfg.contact_rate + rng.random_range(-0.1..=0.1)).clamp(0.0, 1.0);
        let onset = (length as i64 - (rate * length as f64).round() as i64)
            .clamp(1, length as i64 - 2) as usize;
        let mut uniform3 = |half: f64| -> Vec3 {
            if half == 0.0 {
                [0.0; 3]
            } else {
                [
                    rng.random_range(-half..=half),
                    rng.random_range(-half..=half),
                    rng.random_range(-half..=half),
                ]
            }
        };
        let object_offset = uniform3(cfg.start_jitter);
        let approach_offsets = (0..cfg.fingers)
            .map(|_| uniform3(cfg.approach_jitter))
            .collect();
        let force_factor = if cfg.force_jitter == 0.0 {
            1.0
        } else {
            1.0 + rng.random_range(-cfg.force_jitter..=cfg.force_jitter)
        };
        Script {
            task,
            length,
            onset,
            object_offset,
            approach_offsets,
            force_factor,
        }
    }

    /// Contact progress at timestep `t`, `None` before onset.
    fn progress(&self, t: usize) -> Option<f64> {
        (t >= self.onset).then(|| (t - self.onset) as f64 / (self.length - 1 - self.onset) as f64)
    }
}

fn object_pose(task: TaskKind, u: f64, offset: &Vec3) -> Pose {
    use std::f64::consts::PI;
    let (base, shift, rot) = match task {
        TaskKind::Pivot => (
            [0.40, 0.00, 0.05],
            [0.03 * u, 0.0, 0.015 * (PI * u).sin()],
            [0.0, 0.9 * u, 0.1 * (PI * u).sin()],
        ),
        TaskKind::Insertion => (
            [0.35, 0.10, 0.12],
            [0.004 * (3.0 * PI * u).sin(), 0.002 * u, -0.06 * u],
            [0.12 * (2.0 * PI * u).sin(), 0.05 * u, 0.0],
        ),
    };
    Pose::new(add3(&add3(&base, offset), &shift), rot)
}

fn contact_offset(task: TaskKind, finger: usize, fingers: usize) -> Vec3 {
    match task {
        TaskKind::Pivot => {
            let spread = if fingers > 1 {
                finger as f64 / (fingers - 1) as f64
            } else {
                0.5
            };
            [-0.02 + 0.04 * spread, 0.01 * finger as f64, 0.05]
        }
        TaskKind::Insertion => {
            let phi = 2.0 * std::f64::consts::PI * finger as f64 / fingers as f64;
            [0.03 * phi.cos(), 0.03 * phi.sin(), 0.02]
        }
    }
}

/// Noise-free contact vector for finger `k` at progress `u`.
fn contact_vector(task: TaskKind, finger: usize, u: f64, factor: f64) -> Vec3 {
    use std::f64::consts::PI;
    let k = finger as f64;
    let sign = if finger.is_multiple_of(2) { 1.0 } else { -1.0 };
    let g = match task {
        TaskKind::Pivot => [
            1.2 * (PI * u).sin() + 0.3 * k * u,
            0.6 * (u - 0.5) * sign,
            1.0 + 1.5 * u + 0.5 * (2.0 * PI * u).sin(),
        ],
        TaskKind::Insertion => [
            0.4 * (PI * u).cos() * (1.0 + 0.2 * k),
            0.8 * (PI * u).sin() - 0.2 * k,
            1.5 + (0.5 * PI * u).sin(),
        ],
    };
    scale3(&g, factor)
}

/// Fixed observation map of one domain.
struct ObservationMap {
    matrix: Array2<f64>,
    scale: f64,
    saturation: Option<f64>,
    noise: f64,
}

impl ObservationMap {
    fn new(kind: ObservationKind, rows: usize, scale: f64, saturation: f64, noise: f64, rng: &mut ChaCha8Rng) -> Self {
        let matrix = match kind {
            ObservationKind::Identity => Array2::from_shape_fn((rows, 3), |(i, j)| {
                if i % 3 == j {
                    1.0
                } else {
                    0.0
                }
            }),
            ObservationKind::Random if rows == 3 => {
                // A random rotation keeps the glove map norm-preserving.
                let axis: Vec3 = [
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                ];
                let angle = rng.random_range(0.5..2.5);
                let r = scale3(&axis, angle / norm3(&axis).max(1e-12));
                let cols = [
                    rotate(&r, &[1.0, 0.0, 0.0]),
                    rotate(&r, &[0.0, 1.0, 0.0]),
                    rotate(&r, &[0.0, 0.0, 1.0]),
                ];
                Array2::from_shape_fn((3, 3), |(i, j)| cols[j][i])
            }
            ObservationKind::Random => {
                let s = 1.0 / (rows as f64).sqrt();
                Array2::from_shape_fn((rows, 3), |_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * s
                })
            }
        };
        ObservationMap {
            matrix,
            scale,
            saturation: (kind == ObservationKind::Random).then_some(saturation),
            noise,
        }
    }

    fn sample(&self, g: &Vec3, out: &mut [f64], rng: &mut ChaCha8Rng) {
        let phi = match self.saturation {
            Some(c) => [(g[0] / c).tanh(), (g[1] / c).tanh(), (g[2] / c).tanh()],
            None => *g,
        };
        let normal = (self.noise > 0.0).then(|| Normal::new(0.0, self.noise).expect("valid std"));
        for (i, slot) in out.iter_mut().enumerate() {
            let row = self.matrix.row(i);
            let clean = self.scale * (row[0] * phi[0] + row[1] * phi[1] + row[2] * phi[2]);
            *slot = match &normal {
                Some(n) => clean + n.sample(rng),
                None => clean,
            };
        }
    }
}

const STREAM_SCRIPT: u64 = 0x5C41;
const STREAM_PLAY: u64 = 0x9_1A7;
const STREAM_NOISE: u64 = 0x0153;
const STREAM_MAP: u64 = 0x3A9;

fn domain_tag(d: Domain) -> u64 {
    match d {
        Domain::Human => 1,
        Domain::Robot => 2,
    }
}

#[allow(clippy::too_many_arguments)]
fn render(
    id: usize,
    domain: Domain,
    script: &Script,
    script_id: u64,
    task_id: &str,
    with_object: bool,
    cfg: &GenConfig,
    spec: &SensorSpec,
    map: &ObservationMap,
    noise_rng: &mut ChaCha8Rng,
) -> Trajectory {
    let fingers = cfg.fingers;
    let rest = object_pose(script.task, 0.0, &script.object_offset);
    let offsets: Vec<Vec3> = (0..fingers)
        .map(|k| contact_offset(script.task, k, fingers))
        .collect();
    let touch_at = |obj: &Pose, k: usize| add3(&obj.position, &rotate(&obj.rotation, &offsets[k]));
    let approach_start: Vec<Vec3> = (0..fingers)
        .map(|k| add3(&add3(&touch_at(&rest, k), &[0.0, 0.0, 0.06]), &script.approach_offsets[k]))
        .collect();

    let mut ground_truth = Vec::with_capacity(script.length);
    let mut steps = Vec::with_capacity(script.length);
    let mut previous_g: Option<Vec<Vec3>> = None;
    for t in 0..script.length {
        let progress = script.progress(t);
        let object = match progress {
            Some(u) => object_pose(script.task, u, &script.object_offset),
            None => rest,
        };
        let g_now: Vec<Vec3> = (0..fingers)
            .map(|k| match progress {
                Some(u) => contact_vector(script.task, k, u, script.force_factor),
                None => [0.0; 3],
            })
            .collect();
        let g_prev = previous_g.as_ref().unwrap_or(&g_now);
        let mut frames = Vec::with_capacity(fingers);
        for k in 0..fingers {
            let position = match progress {
                Some(_) => touch_at(&object, k),
                None => {
                    let a = t as f64 / script.onset as f64;
                    let start = &approach_start[k];
                    add3(start, &scale3(&sub3(&touch_at(&rest, k), start), a))
                }
            };
            let rotation = add3(&object.rotation, &[0.0, 0.4, 0.1 * k as f64]);
            let mut raw = vec![0.0; spec.len()];
            for (j, chunk) in raw.chunks_exact_mut(spec.slice_len()).enumerate() {
                let alpha = (j + 1) as f64 / spec.window as f64;
                let g = add3(&scale3(&g_prev[k], 1.0 - alpha), &scale3(&g_now[k], alpha));
                map.sample(&g, chunk, noise_rng);
            }
            frames.push(TactileFrame {
                raw,
                pose: Pose::new(position, rotation),
                finger: k,
            });
        }
        let centroid = frames
            .iter()
            .fold([0.0; 3], |acc, f| add3(&acc, &scale3(&f.pose.position, 1.0 / fingers as f64)));
        steps.push(Timestep {
            frames,
            wrist: Pose::new(add3(&centroid, &[-0.08, 0.0, 0.05]), [0.0, 0.3, 0.0]),
            object: with_object.then_some(object),
        });
        ground_truth.push(g_now.clone());
        previous_g = Some(g_now);
    }
    Trajectory {
        id,
        domain,
        task_id: task_id.to_string(),
        script_id: Some(script_id),
        steps,
        ground_truth: Some(ground_truth),
    }
}

/// Generate a reproducible synthetic dataset.
pub fn generate_synthetic(cfg: &GenConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut map_rng = seed::rng(cfg.map_seed, &[STREAM_MAP]);
    let human_map = ObservationMap::new(
        cfg.observation,
        cfg.human_sensor.slice_len(),
        cfg.human_scale,
        cfg.human_saturation,
        cfg.human_noise,
        &mut map_rng,
    );
    let robot_map = ObservationMap::new(
        cfg.observation,
        cfg.robot_sensor.slice_len(),
        cfg.robot_scale,
        cfg.robot_saturation,
        cfg.robot_noise,
        &mut map_rng,
    );

    let mut dataset = Dataset::empty(cfg.human_sensor, cfg.robot_sensor, cfg.fingers);
    dataset.seed = Some(seed);
    let mut next_id = 0usize;
    for domain in [Domain::Human, Domain::Robot] {
        let (per_task, play, spec, map) = match domain {
            Domain::Human => (cfg.human_per_task, cfg.human_play, &cfg.human_sensor, &human_map),
            Domain::Robot => (cfg.robot_per_task, cfg.robot_play, &cfg.robot_sensor, &robot_map),
        };
        for (task_index, &task) in cfg.tasks.iter().enumerate() {
            for j in 0..per_task {
                let script_index = match (domain, cfg.shared_scripts) {
                    (Domain::Robot, false) => (1u64 << 32) + j as u64,
                    _ => j as u64,
                };
                let script_id = ((task_index as u64) << 48) | script_index;
                let mut rng = seed::rng(seed, &[STREAM_SCRIPT, task_index as u64, script_index]);
                let script = Script::draw(task, cfg, &mut rng);
                let mut noise = seed::rng(seed, &[STREAM_NOISE, domain_tag(domain), next_id as u64]);
                dataset.trajectories.push(render(
                    next_id, domain, &script, script_id, task.id(), true, cfg, spec, map, &mut noise,
                ));
                next_id += 1;
            }
        }
        for j in 0..play {
            let mut rng = seed::rng(seed, &[STREAM_PLAY, domain_tag(domain), j as u64]);
            let task = cfg.tasks[rng.random_range(0..cfg.tasks.len())];
            let script = Script::draw(task, cfg, &mut rng);
            let script_id = (u64::MAX << 48) | (domain_tag(domain) << 32) | j as u64;
            let mut noise = seed::rng(seed, &[STREAM_NOISE, domain_tag(domain), next_id as u64]);
            dataset.trajectories.push(render(
                next_id, domain, &script, script_id, "play", false, cfg, spec, map, &mut noise,
            ));
            next_id += 1;
        }
    }
    dataset.validate()?;
    Ok(dataset)
}

/// Human/robot trajectory id pairs that replay the same script, and hence
/// correspond timestep by timestep.
pub fn script_correspondences(dataset: &Dataset) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for h in dataset.domain(Domain::Human) {
        for r in dataset.domain(Domain::Robot) {
            if h.script_id.is_some() && h.script_id == r.script_id {
                out.push((h.id, r.id));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            human_per_task: 4,
            robot_per_task: 3,
            human_play: 1,
            robot_play: 1,
            length_min: 12,
            length_max: 16,
            ..GenConfig::default()
        }
    }

    #[test]
    fn shapes_follow_sensor_specs() {
        let cfg = small();
        let ds = generate_synthetic(&cfg, 3).unwrap();
        for t in &ds.trajectories {
            let spec = ds.spec(t.domain);
            for s in &t.steps {
                assert_eq!(s.frames.len(), cfg.fingers);
                assert!(s.frames.iter().all(|f| f.raw.len() == spec.len()));
            }
        }
        assert_eq!(ds.domain(Domain::Human).count(), 4 * 2 + 1);
        assert_eq!(ds.domain(Domain::Robot).count(), 3 * 2 + 1);
        assert_eq!(ds.domain(Domain::Human).filter(|t| !t.has_object_pose()).count(), 1);
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let cfg = small();
        let a = serde_json::to_vec(&generate_synthetic(&cfg, 11).unwrap()).unwrap();
        let b = serde_json::to_vec(&generate_synthetic(&cfg, 11).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_vec(&generate_synthetic(&cfg, 12).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        let mut cfg = small();
        cfg.human_per_task = 0;
        assert!(matches!(generate_synthetic(&cfg, 0), Err(Error::Validation(_))));
        let mut cfg = small();
        cfg.length_min = 0;
        assert!(matches!(generate_synthetic(&cfg, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn identity_maps_expose_the_shared_contact_process() {
        let cfg = GenConfig {
            observation: ObservationKind::Identity,
            shared_scripts: true,
            human_noise: 0.0,
            robot_noise: 0.0,
            ..small()
        };
        let ds = generate_synthetic(&cfg, 5).unwrap();
        let pairs = script_correspondences(&ds);
        assert_eq!(pairs.len(), 3 * 2);
        for (h, r) in pairs {
            let h = &ds.trajectories[h];
            let r = &ds.trajectories[r];
            assert_eq!(h.len(), r.len());
            assert_eq!(h.ground_truth, r.ground_truth);
            for (sh, sr) in h.steps.iter().zip(&r.steps) {
                assert_eq!(sh.object, sr.object);
                for (fh, fr) in sh.frames.iter().zip(&sr.frames) {
                    assert_eq!(fh.pose, fr.pose);
                    // Last window sample of each domain is scale * g_t.
                    let last_h = &fh.raw[fh.raw.len() - 3..];
                    let last_r = &fr.raw[fr.raw.len() - cfg.robot_sensor.slice_len()..];
                    for c in 0..3 {
                        assert!((last_h[c] / cfg.human_scale - last_r[c] / cfg.robot_scale).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn noise_free_contact_frames_clear_contact_thresholds() {
        let ds = generate_synthetic(&small(), 2).unwrap();
        for t in &ds.trajectories {
            let thr = match t.domain {
                Domain::Human => 1200.0,
                Domain::Robot => 30.0,
            };
            let gt = t.ground_truth.as_ref().unwrap();
            for (s, g) in t.steps.iter().zip(gt) {
                for (f, gk) in s.frames.iter().zip(g) {
                    assert_eq!(f.contact_norm() >= thr, norm3(gk) > 0.0);
                }
            }
        }
    }

    #[test]
    fn rotations_stay_canonical() {
        let ds = generate_synthetic(&small(), 8).unwrap();
        for t in &ds.trajectories {
            for s in &t.steps {
                assert!(s.object.is_none_or(|o| o.is_canonical()));
                assert!(s.frames.iter().all(|f| f.pose.is_canonical()));
            }
        }
    }
}
