//! Trajectories, tactile frames and datasets for both embodiments.
//!
//! A [`Dataset`] holds human and robot demonstrations side by side. Frames
//! store the raw tactile window flattened in `(window, taxel, channel)`
//! row-major order. Synthetic datasets also carry the latent contact process
//! that generated them, which downstream tests use as ground truth.

mod io;
pub mod pose;
pub mod synth;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
pub use io::{load_dataset, save_dataset, save_dataset_stamped, DATASET_FORMAT_VERSION};
pub use pose::{Pose, Vec3};
pub use synth::{generate_synthetic, script_correspondences, GenConfig, ObservationKind, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Human,
    Robot,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Human => "human",
            Domain::Robot => "robot",
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tactile window shape: samples × taxels × channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorSpec {
    pub window: usize,
    pub taxels: usize,
    pub channels: usize,
}

impl SensorSpec {
    pub const fn new(window: usize, taxels: usize, channels: usize) -> Self {
        SensorSpec {
            window,
            taxels,
            channels,
        }
    }

    /// Glove default: three samples of a single three-axis taxel.
    pub const fn human_default() -> Self {
        SensorSpec::new(3, 1, 3)
    }

    /// Robot default: ten samples of a 30-taxel three-axis pad.
    pub const fn robot_default() -> Self {
        SensorSpec::new(10, 30, 3)
    }

    pub fn len(&self) -> usize {
        self.window * self.taxels * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values per time slice of the window.
    pub fn slice_len(&self) -> usize {
        self.taxels * self.channels
    }

    pub fn fingerprint(&self) -> String {
        format!("{}x{}x{}", self.window, self.taxels, self.channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Validation(format!(
                "sensor spec {} has a zero dimension",
                self.fingerprint()
            )));
        }
        Ok(())
    }
}

/// One fingertip's windowed tactile observation and pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TactileFrame {
    pub raw: Vec<f64>,
    pub pose: Pose,
    pub finger: usize,
}

impl TactileFrame {
    /// Euclidean norm of the flattened raw window.
    pub fn contact_norm(&self) -> f64 {
        contact_norm(self)
    }
}

pub fn contact_norm(frame: &TactileFrame) -> f64 {
    frame.raw.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestep {
    /// One frame per fingertip, indexed by finger.
    pub frames: Vec<TactileFrame>,
    pub wrist: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: usize,
    pub domain: Domain,
    pub task_id: String,
    /// Synthetic trajectories sharing a script id follow identical pose and
    /// contact scripts; `None` for recorded data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_id: Option<u64>,
    pub steps: Vec<Timestep>,
    /// Latent contact state per timestep and finger (synthetic data only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<Vec<Vec3>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Member of the object-annotated subset used for pseudo-pair mining.
    pub fn has_object_pose(&self) -> bool {
        self.steps.first().is_some_and(|s| s.object.is_some())
    }

    pub fn fingers(&self) -> usize {
        self.steps.first().map_or(0, |s| s.frames.len())
    }

    pub fn validate(&self, spec: &SensorSpec, fingers: usize) -> Result<()> {
        let ctx = |msg: String| {
            Error::Validation(format!("trajectory {} ({}): {msg}", self.id, self.domain))
        };
        if self.steps.is_empty() {
            return Err(ctx("has no timesteps".into()));
        }
        let with_object = self.has_object_pose();
        for (t, step) in self.steps.iter().enumerate() {
            if step.frames.len() != fingers {
                return Err(ctx(format!(
                    "timestep {t} has {} fingertip frames, expected {fingers}",
                    step.frames.len()
                )));
            }
            if step.object.is_some() != with_object {
                return Err(ctx(format!(
                    "timestep {t} breaks the all-or-none object pose rule"
                )));
            }
            for (k, frame) in step.frames.iter().enumerate() {
                if frame.raw.len() != spec.len() {
                    return Err(Error::shape(
                        format!(
                            "trajectory {} timestep {t} finger {k} raw window ({})",
                            self.id,
                            spec.fingerprint()
                        ),
                        spec.len(),
                        frame.raw.len(),
                    ));
                }
                if frame.finger != k {
                    return Err(ctx(format!(
                        "timestep {t} slot {k} holds finger {}",
                        frame.finger
                    )));
                }
                if !frame.pose.is_canonical() {
                    return Err(ctx(format!(
                        "timestep {t} finger {k} rotation vector exceeds pi"
                    )));
                }
            }
            if let Some(o) = &step.object {
                if !o.is_canonical() {
                    return Err(ctx(format!("timestep {t} object rotation exceeds pi")));
                }
            }
        }
        if let Some(gt) = &self.ground_truth {
            if gt.len() != self.steps.len() || gt.iter().any(|g| g.len() != fingers) {
                return Err(ctx("ground truth does not cover every timestep and finger".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub human_spec: SensorSpec,
    pub robot_spec: SensorSpec,
    /// Fingertips per timestep (K).
    pub fingers: usize,
    /// Generation seed for synthetic data.
    pub seed: Option<u64>,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn empty(human_spec: SensorSpec, robot_spec: SensorSpec, fingers: usize) -> Self {
        Dataset {
            human_spec,
            robot_spec,
            fingers,
            seed: None,
            trajectories: Vec::new(),
        }
    }

    pub fn spec(&self, domain: Domain) -> &SensorSpec {
        match domain {
            Domain::Human => &self.human_spec,
            Domain::Robot => &self.robot_spec,
        }
    }

    pub fn domain(&self, domain: Domain) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter().filter(move |t| t.domain == domain)
    }

    pub fn has_ground_truth(&self) -> bool {
        self.trajectories.iter().any(|t| t.ground_truth.is_some())
    }

    /// Task ids in first-seen order among object-annotated trajectories.
    pub fn tasks(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for t in self.trajectories.iter().filter(|t| t.has_object_pose()) {
            if !seen.contains(&t.task_id) {
                seen.push(t.task_id.clone());
            }
        }
        seen
    }

    pub fn validate(&self) -> Result<()> {
        self.human_spec.validate()?;
        self.robot_spec.validate()?;
        if self.fingers == 0 && !self.trajectories.is_empty() {
            return Err(Error::Validation("dataset declares zero fingertips".into()));
        }
        let mut ids = std::collections::HashSet::new();
        for t in &self.trajectories {
            if !ids.insert(t.id) {
                return Err(Error::Validation(format!("duplicate trajectory id {}", t.id)));
            }
            t.validate(self.spec(t.domain), self.fingers)?;
        }
        if self.has_ground_truth() && self.trajectories.iter().any(|t| t.ground_truth.is_none()) {
            return Err(Error::Validation(
                "ground truth must cover every trajectory when present".into(),
            ));
        }
        Ok(())
    }

    /// Both domains must be present before alignment.
    pub fn require_both_domains(&self) -> Result<()> {
        for d in [Domain::Human, Domain::Robot] {
            if self.domain(d).next().is_none() {
                return Err(Error::Validation(format!("dataset has no {d} trajectories")));
            }
        }
        Ok(())
    }

    /// Hex digest of the serialized dataset.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(self).expect("dataset serializes"));
        hex::encode(hasher.finalize())
    }
}
