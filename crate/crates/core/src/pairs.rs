//! Pseudo-pair mining from normalized hand/object transitions.
//!
//! Every consecutive timestep pair of an object-annotated trajectory yields
//! one [`TransitionObservation`] per fingertip. For each human transition the
//! `N` nearest robot transitions of the same task and fingertip are found
//! under the similarity score
//!
//! ```text
//! S = ‖p_h − p_r‖ + ‖o_h − o_r‖ + λ‖Δp_h − Δp_r‖ + λ‖Δo_h − Δo_r‖
//! ```
//!
//! where `o` stacks the normalized object position and rotation vector.
//! Candidates scoring `S ≥ δ` or disagreeing on binary contact are dropped;
//! the survivors become [`PseudoPair`]s carrying the step-`i` latents.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{contact_norm, pose::sub3, Domain, TactileFrame, Trajectory, Vec3};
use crate::error::{Error, Result};
use crate::normalize::{PoseCategory, TaskStats};

pub const PAIRSET_FORMAT_VERSION: u32 = 1;

/// Glove contact threshold on the raw window norm.
pub const HUMAN_CONTACT_THRESHOLD: f64 = 1200.0;
/// Robot skin contact threshold on the raw window norm.
pub const ROBOT_CONTACT_THRESHOLD: f64 = 30.0;

/// Contact iff the raw window norm reaches the threshold.
pub fn is_contact(frame: &TactileFrame, threshold: f64) -> bool {
    contact_norm(frame) >= threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Source {
    pub trajectory: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionObservation {
    pub domain: Domain,
    pub source: Source,
    pub finger: usize,
    /// Fingerprint of the task statistics used to normalize the poses.
    pub stats: String,
    /// Normalized fingertip position at step `i`.
    pub p: Vec3,
    /// Normalized object position followed by normalized rotation vector.
    pub o: [f64; 6],
    pub dp: Vec3,
    pub d_o: [f64; 6],
    pub contact: bool,
    /// Encoder latent of the step-`i` frame (may be empty when unused).
    pub latent: Vec<f64>,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn object_vec(stats: &TaskStats, pos: &Vec3, rot: &Vec3) -> [f64; 6] {
    let s = stats.normalize(PoseCategory::ObjectPosition, pos);
    let q = stats.normalize(PoseCategory::ObjectRotation, rot);
    [s[0], s[1], s[2], q[0], q[1], q[2]]
}

/// Unchecked score; callers guarantee both sides share normalization stats.
fn score(h: &TransitionObservation, r: &TransitionObservation, lambda: f64) -> f64 {
    dist(&h.p, &r.p) + dist(&h.o, &r.o) + lambda * dist(&h.dp, &r.dp) + lambda * dist(&h.d_o, &r.d_o)
}

/// Similarity of two transitions normalized under the same task statistics.
pub fn similarity(
    h: &TransitionObservation,
    r: &TransitionObservation,
    lambda: f64,
) -> Result<f64> {
    if h.stats != r.stats {
        return Err(Error::Usage(format!(
            "transitions were normalized with different statistics ({} vs {})",
            h.stats, r.stats
        )));
    }
    Ok(score(h, r, lambda))
}

/// Transitions of one object-annotated trajectory, one per step and finger.
///
/// `latents[t][k]` supplies the latent for step `t`, finger `k`; pass `None`
/// to leave latents empty.
pub fn build_transitions(
    traj: &Trajectory,
    stats: &TaskStats,
    contact_threshold: f64,
    latents: Option<&[Vec<Vec<f64>>]>,
) -> Result<Vec<TransitionObservation>> {
    if !traj.has_object_pose() {
        return Err(Error::Usage(format!(
            "trajectory {} has no object pose and cannot form transitions",
            traj.id
        )));
    }
    if traj.task_id != stats.task_id {
        return Err(Error::Usage(format!(
            "trajectory {} belongs to task `{}`, statistics are for `{}`",
            traj.id, traj.task_id, stats.task_id
        )));
    }
    if let Some(l) = latents {
        if l.len() != traj.len() {
            return Err(Error::shape(
                format!("latents of trajectory {}", traj.id),
                traj.len(),
                l.len(),
            ));
        }
    }
    let fp = stats.fingerprint();
    let mut out = Vec::with_capacity(traj.len().saturating_sub(1) * traj.fingers());
    for (i, pair) in traj.steps.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        let oa = a.object.as_ref().expect("object-annotated");
        let ob = b.object.as_ref().expect("object-annotated");
        let o = object_vec(stats, &oa.position, &oa.rotation);
        let o_next = object_vec(stats, &ob.position, &ob.rotation);
        let mut d_o = [0.0; 6];
        for j in 0..6 {
            d_o[j] = o_next[j] - o[j];
        }
        for (k, frame) in a.frames.iter().enumerate() {
            let p = stats.normalize(PoseCategory::Fingertip, &frame.pose.position);
            let p_next = stats.normalize(PoseCategory::Fingertip, &b.frames[k].pose.position);
            out.push(TransitionObservation {
                domain: traj.domain,
                source: Source {
                    trajectory: traj.id,
                    step: i,
                },
                finger: k,
                stats: fp.clone(),
                p,
                o,
                dp: sub3(&p_next, &p),
                d_o,
                contact: is_contact(frame, contact_threshold),
                latent: latents.map_or_else(Vec::new, |l| l[i][k].clone()),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    pub lambda: f64,
    /// Nearest robot transitions considered per human transition.
    pub neighbors: usize,
    /// Candidates must score strictly below this.
    pub delta: f64,
    pub human_threshold: f64,
    pub robot_threshold: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            lambda: 1.0,
            neighbors: 3,
            delta: 2.0,
            human_threshold: HUMAN_CONTACT_THRESHOLD,
            robot_threshold: ROBOT_CONTACT_THRESHOLD,
        }
    }
}

impl PairConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Validation("pair lambda must be positive".into()));
        }
        if self.neighbors == 0 {
            return Err(Error::Validation("pair neighbors must be at least 1".into()));
        }
        // δ = ∞ is allowed and disables the score filter.
        if self.delta.is_nan() || self.delta <= 0.0 {
            return Err(Error::Validation("pair delta must be positive".into()));
        }
        for (name, t) in [
            ("human_threshold", self.human_threshold),
            ("robot_threshold", self.robot_threshold),
        ] {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Validation(format!("pair {name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn threshold(&self, domain: Domain) -> f64 {
        match domain {
            Domain::Human => self.human_threshold,
            Domain::Robot => self.robot_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactLabel {
    Contact,
    Noncontact,
}

impl From<bool> for ContactLabel {
    fn from(c: bool) -> Self {
        if c {
            ContactLabel::Contact
        } else {
            ContactLabel::Noncontact
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoPair {
    pub human: Source,
    pub robot: Source,
    pub finger: usize,
    pub h_star: Vec<f64>,
    pub r_star: Vec<f64>,
    pub score: f64,
    pub contact: ContactLabel,
}

impl PseudoPair {
    fn key(&self) -> (Source, usize, Source) {
        (self.human, self.finger, self.robot)
    }
}

fn by_score(a: &(f64, Source), b: &(f64, Source)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Mine pseudo-pairs from human transitions against robot transitions.
///
/// Robot candidates are restricted to the same normalization statistics
/// (i.e. the same task) and the same fingertip. Ties between equal scores go
/// to the lowest robot `(trajectory, step)`. The output is sorted by
/// `(human source, finger, robot source)`.
pub fn mine_pairs(
    human: &[TransitionObservation],
    robot: &[TransitionObservation],
    cfg: &PairConfig,
) -> Result<Vec<PseudoPair>> {
    cfg.validate()?;
    if robot.is_empty() {
        return Err(Error::Usage("no robot transitions to match against".into()));
    }
    // Group robot transitions by (stats, finger) once.
    let mut groups: std::collections::BTreeMap<(&str, usize), Vec<usize>> = Default::default();
    for (j, r) in robot.iter().enumerate() {
        groups.entry((r.stats.as_str(), r.finger)).or_default().push(j);
    }

    let mut pairs = Vec::new();
    let mut best: Vec<(f64, Source, usize)> = Vec::with_capacity(cfg.neighbors + 1);
    for h in human {
        let Some(candidates) = groups.get(&(h.stats.as_str(), h.finger)) else {
            if robot.iter().all(|r| r.stats != h.stats) {
                return Err(Error::Usage(format!(
                    "no robot transitions share the statistics {} of human trajectory {}",
                    h.stats, h.source.trajectory
                )));
            }
            continue;
        };
        best.clear();
        for &j in candidates {
            let r = &robot[j];
            let s = score(h, r, cfg.lambda);
            let entry = (s, r.source, j);
            let pos = best
                .iter()
                .position(|b| by_score(&(entry.0, entry.1), &(b.0, b.1)) == Ordering::Less)
                .unwrap_or(best.len());
            if pos < cfg.neighbors {
                best.insert(pos, entry);
                best.truncate(cfg.neighbors);
            }
        }
        for &(s, _, j) in &best {
            let r = &robot[j];
            if s < cfg.delta && r.contact == h.contact {
                pairs.push(PseudoPair {
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
    pairs.sort_by_key(PseudoPair::key);
    if pairs.is_empty() && !human.is_empty() {
        log::warn!("pseudo-pair mining produced no pairs; consider a larger delta");
    }
    Ok(pairs)
}

/// A serializable pair set with the fingerprints it was mined under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub format_version: u32,
    pub config: PairConfig,
    pub latent_dim: usize,
    pub human_encoder: String,
    pub robot_encoder: String,
    pub stats: String,
    pub pairs: Vec<PseudoPair>,
}

impl PairSet {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("pair set serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<PairSet> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: PairSet = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            reason: e.to_string(),
        })?;
        if set.format_version != PAIRSET_FORMAT_VERSION {
            return Err(Error::Compatibility(format!(
                "pair set format version {} is not supported",
                set.format_version
            )));
        }
        Ok(set)
    }
}
