//! Line-delimited JSON dataset files.
//!
//! The first line is a header carrying the format version, sensor specs and
//! the number of trajectory records that follow; each further line is one
//! trajectory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, SensorSpec, Trajectory};
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    human_spec: SensorSpec,
    robot_spec: SensorSpec,
    fingers: usize,
    seed: Option<u64>,
    trajectory_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    save_dataset_stamped(dataset, path, None)
}

/// Save with the hash of the configuration that produced the dataset.
pub fn save_dataset_stamped(dataset: &Dataset, path: &Path, config_hash: Option<&str>) -> Result<()> {
    dataset.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = Header {
        format_version: DATASET_FORMAT_VERSION,
        human_spec: dataset.human_spec,
        robot_spec: dataset.robot_spec,
        fingers: dataset.fingers,
        seed: dataset.seed,
        trajectory_count: dataset.trajectories.len(),
        config_hash: config_hash.map(str::to_string),
    };
    let write_err = |e: std::io::Error| Error::io(path, e);
    serde_json::to_writer(&mut out, &header).map_err(|e| write_err(e.into()))?;
    out.write_all(b"\n").map_err(write_err)?;
    for traj in &dataset.trajectories {
        serde_json::to_writer(&mut out, traj).map_err(|e| write_err(e.into()))?;
        out.write_all(b"\n").map_err(write_err)?;
    }
    out.flush().map_err(write_err)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => {
            return Err(Error::Parse {
                line: 1,
                reason: "missing header record".into(),
            })
        }
    };
    let header: Header = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        line: 1,
        reason: format!("bad header: {e}"),
    })?;
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Parse {
            line: 1,
            reason: format!(
                "unsupported dataset format version {} (expected {DATASET_FORMAT_VERSION})",
                header.format_version
            ),
        });
    }
    let mut trajectories = Vec::with_capacity(header.trajectory_count);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if trajectories.len() == header.trajectory_count {
            return Err(Error::Parse {
                line: line_no,
                reason: format!(
                    "unexpected record beyond the declared {} trajectories",
                    header.trajectory_count
                ),
            });
        }
        let traj: Trajectory = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        trajectories.push(traj);
    }
    if trajectories.len() != header.trajectory_count {
        return Err(Error::Parse {
            line: trajectories.len() + 2,
            reason: format!(
                "truncated file: header declares {} trajectories, found {}",
                header.trajectory_count,
                trajectories.len()
            ),
        });
    }
    let dataset = Dataset {
        human_spec: header.human_spec,
        robot_spec: header.robot_spec,
        fingers: header.fingers,
        seed: header.seed,
        trajectories,
    };
    dataset.validate()?;
    Ok(dataset)
}
