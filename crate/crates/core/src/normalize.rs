//! Task-level pose normalization.
//!
//! Statistics come from robot demonstrations of a task and are then applied
//! unchanged to both embodiments: `ṽ = (v − μ) / σ_max`, where `σ_max` is the
//! largest per-axis population standard deviation. Fingertip positions,
//! object positions and object orientations (rotation vectors) each get their
//! own statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Domain, Trajectory, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseCategory {
    Fingertip,
    ObjectPosition,
    ObjectRotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisStats {
    pub mean: Vec3,
    pub sigma_max: f64,
}

impl AxisStats {
    /// Two-pass mean and max per-axis population standard deviation.
    pub fn from_points(points: &[Vec3]) -> Option<AxisStats> {
        if points.is_empty() {
            return None;
        }
        let n = points.len() as f64;
        let mut mean = [0.0; 3];
        for p in points {
            for a in 0..3 {
                mean[a] += p[a];
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = [0.0; 3];
        for p in points {
            for a in 0..3 {
                let d = p[a] - mean[a];
                var[a] += d * d;
            }
        }
        let sigma_max = var
            .iter()
            .map(|v| (v / n).sqrt())
            .fold(0.0f64, f64::max);
        Some(AxisStats { mean, sigma_max })
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        [
            (v[0] - self.mean[0]) / self.sigma_max,
            (v[1] - self.mean[1]) / self.sigma_max,
            (v[2] - self.mean[2]) / self.sigma_max,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStats {
    pub task_id: String,
    pub fingertip: AxisStats,
    pub object_position: AxisStats,
    pub object_rotation: AxisStats,
}

impl TaskStats {
    pub fn category(&self, category: PoseCategory) -> &AxisStats {
        match category {
            PoseCategory::Fingertip => &self.fingertip,
            PoseCategory::ObjectPosition => &self.object_position,
            PoseCategory::ObjectRotation => &self.object_rotation,
        }
    }

    pub fn normalize(&self, category: PoseCategory, v: &Vec3) -> Vec3 {
        self.category(category).apply(v)
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_of(self)
    }

    fn check(&self) -> Result<()> {
        for (name, s) in [
            ("fingertip position", &self.fingertip),
            ("object position", &self.object_position),
            ("object orientation", &self.object_rotation),
        ] {
            // Spread at rounding level of the mean counts as no spread.
            let scale = s.mean.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if !(s.sigma_max.is_finite() && s.sigma_max > 1e-12 * scale) {
                return Err(Error::DegenerateTask {
                    task: self.task_id.clone(),
                    reason: format!("{name} has zero spread on every axis"),
                });
            }
        }
        Ok(())
    }
}

fn fingerprint_of<T: Serialize>(value: &T) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(value).expect("stats serialize"));
    hex::encode(&h.finalize()[..8])
}

/// Pose samples collected from the object-annotated trajectories of a task.
#[derive(Debug, Default, Clone)]
pub struct PoseSamples {
    pub fingertips: Vec<Vec3>,
    pub object_positions: Vec<Vec3>,
    pub object_rotations: Vec<Vec3>,
}

impl PoseSamples {
    pub fn collect<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>) -> PoseSamples {
        let mut out = PoseSamples::default();
        for t in trajectories {
            for s in &t.steps {
                let Some(o) = &s.object else { continue };
                out.object_positions.push(o.position);
                out.object_rotations.push(o.rotation);
                out.fingertips.extend(s.frames.iter().map(|f| f.pose.position));
            }
        }
        out
    }
}

/// Statistics of task `task_id` from its robot trajectories.
///
/// Trajectories of other tasks and trajectories without object pose are
/// ignored; human trajectories are refused.
pub fn compute_stats<'a>(
    task_id: &str,
    robot: impl IntoIterator<Item = &'a Trajectory>,
) -> Result<TaskStats> {
    let mut selected = Vec::new();
    for t in robot {
        if t.domain != Domain::Robot {
            return Err(Error::Usage(format!(
                "normalization statistics come from robot data only; trajectory {} is {}",
                t.id, t.domain
            )));
        }
        if t.task_id == task_id && t.has_object_pose() {
            selected.push(t);
        }
    }
    let samples = PoseSamples::collect(selected);
    if samples.object_positions.len() < 2 {
        return Err(Error::DegenerateTask {
            task: task_id.to_string(),
            reason: format!(
                "needs at least 2 object-annotated robot timesteps, found {}",
                samples.object_positions.len()
            ),
        });
    }
    let stats = TaskStats {
        task_id: task_id.to_string(),
        fingertip: AxisStats::from_points(&samples.fingertips).expect("non-empty"),
        object_position: AxisStats::from_points(&samples.object_positions).expect("non-empty"),
        object_rotation: AxisStats::from_points(&samples.object_rotations).expect("non-empty"),
    };
    stats.check()?;
    Ok(stats)
}

/// Statistics for every task, keyed by task id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StatsTable {
    pub tasks: BTreeMap<String, TaskStats>,
}

impl StatsTable {
    /// Compute stats for each task id from the given robot trajectories.
    pub fn from_robot<'a>(
        tasks: &[String],
        robot: impl IntoIterator<Item = &'a Trajectory> + Clone,
    ) -> Result<StatsTable> {
        let mut table = StatsTable::default();
        for task in tasks {
            table
                .tasks
                .insert(task.clone(), compute_stats(task, robot.clone())?);
        }
        Ok(table)
    }

    pub fn get(&self, task_id: &str) -> Result<&TaskStats> {
        self.tasks.get(task_id).ok_or_else(|| {
            Error::Usage(format!("no normalization statistics for task `{task_id}`"))
        })
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_of(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Pose, TactileFrame, Timestep};

    fn traj(domain: Domain, positions: &[Vec3]) -> Trajectory {
        Trajectory {
            id: 0,
            domain,
            task_id: "t".into(),
            script_id: None,
            steps: positions
                .iter()
                .enumerate()
                .map(|(i, p)| Timestep {
                    frames: vec![TactileFrame {
                        raw: vec![],
                        pose: Pose::new(*p, [0.0; 3]),
                        finger: 0,
                    }],
                    wrist: Pose::new([0.0; 3], [0.0; 3]),
                    object: Some(Pose::new(
                        [i as f64, 0.0, 0.0],
                        [0.0, 0.1 * i as f64, 0.0],
                    )),
                })
                .collect(),
            ground_truth: None,
        }
    }

    #[test]
    fn two_point_statistics() {
        let s = AxisStats::from_points(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        assert_eq!(s.mean, [1.0, 0.0, 0.0]);
        assert_eq!(s.sigma_max, 1.0);
    }

    #[test]
    fn identical_fingertips_are_degenerate() {
        let t = traj(Domain::Robot, &[[1.0, 1.0, 1.0]; 4]);
        assert!(matches!(
            compute_stats("t", [&t]),
            Err(Error::DegenerateTask { .. })
        ));
    }

    #[test]
    fn human_data_is_refused() {
        let t = traj(Domain::Human, &[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(matches!(compute_stats("t", [&t]), Err(Error::Usage(_))));
    }

    #[test]
    fn single_timestep_is_not_enough() {
        let t = traj(Domain::Robot, &[[0.0; 3]]);
        assert!(matches!(
            compute_stats("t", [&t]),
            Err(Error::DegenerateTask { .. })
        ));
    }

    #[test]
    fn mean_maps_to_origin_and_unit_offset_to_axis() {
        let t = traj(
            Domain::Robot,
            &[[0.0, 0.0, 0.0], [2.0, 1.0, 0.0], [4.0, -1.0, 3.0]],
        );
        let s = compute_stats("t", [&t]).unwrap();
        let mu = s.fingertip.mean;
        assert_eq!(s.normalize(PoseCategory::Fingertip, &mu), [0.0; 3]);
        let shifted = [mu[0] + s.fingertip.sigma_max, mu[1], mu[2]];
        let n = s.normalize(PoseCategory::Fingertip, &shifted);
        assert!((n[0] - 1.0).abs() < 1e-15 && n[1] == 0.0 && n[2] == 0.0);
    }

    #[test]
    fn fingerprint_changes_with_stats() {
        let a = compute_stats("t", [&traj(Domain::Robot, &[[0.0; 3], [1.0, 0.0, 0.0]])]).unwrap();
        let b = compute_stats("t", [&traj(Domain::Robot, &[[0.0; 3], [2.0, 0.0, 0.0]])]).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
    }
}
