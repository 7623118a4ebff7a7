//! File-level pipeline stages.
//!
//! Every command reads its inputs from and writes its outputs to one
//! artifact directory. JSON artifacts are wrapped in a [`Stamped`] envelope
//! carrying the hash of the producing config; CSV artifacts start with a
//! `# config_hash=` comment line. Each command also writes a manifest with
//! the sha256 of every input and output.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    encode_dataset, evaluate, latent_space_fingerprint, robot_stats, run_sweep, train_encoders,
    PipelineConfig, Prepared, Split,
};
use crate::data::{generate_synthetic, load_dataset, save_dataset_stamped, Dataset, Domain};
use crate::encoder::{SslReport, TactileEncoder};
use crate::error::{Error, Result};
use crate::eval::{EmdReport, ForceReport, SweepParam};
use crate::flow::toy2d::{toy2d_experiment, Toy2dReport};
use crate::flow::{train_flow, transport_batch, VelocityField};
use crate::pairs::PairSet;

/// Environment variable naming the default artifact directory.
pub const OUT_DIR_ENV: &str = "TACTILE_ALIGN_OUT";

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const HUMAN_ENCODER_FILE: &str = "encoder_human.json";
pub const ROBOT_ENCODER_FILE: &str = "encoder_robot.json";
pub const SSL_REPORT_FILE: &str = "ssl_report.json";
pub const PAIRS_FILE: &str = "pairs.json";
pub const FLOW_FILE: &str = "flow.json";
pub const FLOW_REPORT_FILE: &str = "flow_report.json";
pub const TRANSPORTED_FILE: &str = "transported.json";

/// A JSON artifact tagged with the config that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub data: T,
}

/// Provenance record written next to the artifacts of one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    /// `(file name, sha256)` of every input read.
    pub inputs: Vec<(String, String)>,
    /// `(file name, sha256)` of every output written.
    pub outputs: Vec<(String, String)>,
    pub wall_time_secs: f64,
}

/// Artifact directory of one pipeline.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub dir: PathBuf,
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Workspace { dir })
    }

    /// The directory named by `TACTILE_ALIGN_OUT`, or `out`.
    pub fn from_env() -> Result<Self> {
        Workspace::new(std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("out"), PathBuf::from))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_stamped<T: Serialize>(path: &Path, config_hash: &str, data: &T) -> Result<()> {
    let env = Stamped {
        config_hash: config_hash.to_string(),
        data,
    };
    write_text(path, &(serde_json::to_string_pretty(&env).expect("artifact serializes") + "\n"))
}

pub fn read_stamped<T: DeserializeOwned>(path: &Path) -> Result<Stamped<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        reason: format!("{}: {e}", path.display()),
    })
}

pub fn write_stamped_csv(path: &Path, config_hash: &str, body: &str) -> Result<()> {
    write_text(path, &format!("# config_hash={config_hash}\n{body}"))
}

/// Tracks the files one command touches and writes its manifest.
struct Recorder<'a> {
    command: &'static str,
    cfg: &'a PipelineConfig,
    ws: &'a Workspace,
    start: Instant,
    inputs: Vec<(String, String)>,
    outputs: Vec<(String, String)>,
}

impl<'a> Recorder<'a> {
    fn new(command: &'static str, cfg: &'a PipelineConfig, ws: &'a Workspace) -> Self {
        Recorder {
            command,
            cfg,
            ws,
            start: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn input(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.ws.path(name);
        self.inputs.push((name.to_string(), file_sha256(&path)?));
        Ok(path)
    }

    fn output(&mut self, name: &str) -> Result<()> {
        let digest = file_sha256(&self.ws.path(name))?;
        self.outputs.push((name.to_string(), digest));
        Ok(())
    }

    fn finish(self) -> Result<Manifest> {
        let manifest = Manifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_secs: self.start.elapsed().as_secs_f64(),
        };
        let path = self.ws.path(&format!("manifest_{}.json", self.command));
        write_text(&path, &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"))?;
        log::info!(
            "{} finished in {:.1}s, {} outputs",
            manifest.command,
            manifest.wall_time_secs,
            manifest.outputs.len()
        );
        Ok(manifest)
    }
}

fn tagged(cfg: &PipelineConfig, stem: &str, ext: &str) -> String {
    format!("{stem}_{}_s{}.{ext}", cfg.hash(), cfg.seed)
}

fn warn_on_foreign_hash(cfg: &PipelineConfig, path: &Path, hash: &str) {
    if hash != cfg.hash() {
        log::warn!(
            "{} was produced under config {hash}, current config is {}",
            path.display(),
            cfg.hash()
        );
    }
}

fn load_encoders(
    cfg: &PipelineConfig,
    rec: &mut Recorder,
    ds: &Dataset,
) -> Result<(TactileEncoder, TactileEncoder)> {
    let mut out = Vec::new();
    for (name, domain) in [(HUMAN_ENCODER_FILE, Domain::Human), (ROBOT_ENCODER_FILE, Domain::Robot)] {
        let path = rec.input(name)?;
        let s: Stamped<TactileEncoder> = read_stamped(&path)?;
        warn_on_foreign_hash(cfg, &path, &s.config_hash);
        if s.data.domain != domain {
            return Err(Error::Compatibility(format!(
                "{} holds a {} encoder",
                path.display(),
                s.data.domain
            )));
        }
        s.data.check_spec(ds.spec(domain))?;
        out.push(s.data);
    }
    let robot = out.pop().expect("two encoders");
    Ok((out.pop().expect("two encoders"), robot))
}

fn load_flow(
    cfg: &PipelineConfig,
    rec: &mut Recorder,
    human: &TactileEncoder,
    robot: &TactileEncoder,
) -> Result<VelocityField> {
    let path = rec.input(FLOW_FILE)?;
    let s: Stamped<VelocityField> = read_stamped(&path)?;
    warn_on_foreign_hash(cfg, &path, &s.config_hash);
    let expected = latent_space_fingerprint(human, robot);
    if s.data.latent_fingerprint != expected {
        return Err(Error::Compatibility(format!(
            "velocity field was trained on latent space {} but the encoders define {expected}",
            s.data.latent_fingerprint
        )));
    }
    Ok(s.data)
}

fn load_data(rec: &mut Recorder) -> Result<Dataset> {
    let path = rec.input(DATASET_FILE)?;
    let ds = load_dataset(&path)?;
    ds.require_both_domains()?;
    Ok(ds)
}

/// Rebuild the deterministic intermediate state from saved encoders.
fn restore(cfg: &PipelineConfig, rec: &mut Recorder) -> Result<Prepared> {
    let dataset = load_data(rec)?;
    let (human_encoder, robot_encoder) = load_encoders(cfg, rec, &dataset)?;
    let split = Split::new(&dataset, cfg.data.held_out_every);
    let latents = encode_dataset(&human_encoder, &robot_encoder, &dataset)?;
    let stats = robot_stats(&dataset, &split)?;
    let ssl_path = rec.input(SSL_REPORT_FILE)?;
    let ssl: Stamped<(SslReport, SslReport)> = read_stamped(&ssl_path)?;
    Ok(Prepared {
        dataset,
        split,
        human_encoder,
        robot_encoder,
        ssl: ssl.data,
        latents,
        stats,
    })
}

pub fn cmd_gen_data(cfg: &PipelineConfig, ws: &Workspace) -> Result<Manifest> {
    cfg.validate()?;
    let mut rec = Recorder::new("gen-data", cfg, ws);
    let ds = generate_synthetic(&cfg.data.generator, cfg.data_seed())?;
    save_dataset_stamped(&ds, &ws.path(DATASET_FILE), Some(&cfg.hash()))?;
    rec.output(DATASET_FILE)?;
    rec.finish()
}

pub fn cmd_train_encoders(cfg: &PipelineConfig, ws: &Workspace) -> Result<Manifest> {
    cfg.validate()?;
    let mut rec = Recorder::new("train-encoders", cfg, ws);
    let ds = load_data(&mut rec)?;
    let split = Split::new(&ds, cfg.data.held_out_every);
    let (human, robot, hr, rr) = train_encoders(cfg, &ds, &split)?;
    let hash = cfg.hash();
    write_stamped(&ws.path(HUMAN_ENCODER_FILE), &hash, &human)?;
    write_stamped(&ws.path(ROBOT_ENCODER_FILE), &hash, &robot)?;
    write_stamped(&ws.path(SSL_REPORT_FILE), &hash, &(hr, rr))?;
    for name in [HUMAN_ENCODER_FILE, ROBOT_ENCODER_FILE, SSL_REPORT_FILE] {
        rec.output(name)?;
    }
    rec.finish()
}

pub fn cmd_build_pairs(cfg: &PipelineConfig, ws: &Workspace) -> Result<Manifest> {
    cfg.validate()?;
    let mut rec = Recorder::new("build-pairs", cfg, ws);
    let prep = restore(cfg, &mut rec)?;
    let set = prep.pair_set(&cfg.pairs)?;
    log::info!("mined {} pseudo-pairs", set.pairs.len());
    write_stamped(&ws.path(PAIRS_FILE), &cfg.hash(), &set)?;
    rec.output(PAIRS_FILE)?;
    rec.finish()
}

pub fn cmd_train_flow(cfg: &PipelineConfig, ws: &Workspace) -> Result<Manifest> {
    cfg.validate()?;
    let mut rec = Recorder::new("train-flow", cfg, ws);
    let ds = load_data(&mut rec)?;
    let (human, robot) = load_encoders(cfg, &mut rec, &ds)?;
    let path = rec.input(PAIRS_FILE)?;
    let set: Stamped<PairSet> = read_stamped(&path)?;
    warn_on_foreign_hash(cfg, &path, &set.config_hash);
    let set = set.data;
    if set.human_encoder != human.fingerprint() || set.robot_encoder != robot.fingerprint() {
        return Err(Error::Compatibility(
            "pseudo-pairs were mined with different encoders".into(),
        ));
    }
    let (vf, report) = train_flow(
        &set.pairs,
        &cfg.flow_config(),
        latent_space_fingerprint(&human, &robot),
    )?;
    let hash = cfg.hash();
    write_stamped(&ws.path(FLOW_FILE), &hash, &vf)?;
    write_stamped(&ws.path(FLOW_REPORT_FILE), &hash, &report)?;
    rec.output(FLOW_FILE)?;
    rec.output(FLOW_REPORT_FILE)?;
    rec.finish()
}

/// Transported latents of one human trajectory, `latents[t][k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportedTrajectory {
    pub id: usize,
    pub task_id: String,
    pub latents: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transported {
    pub flow: String,
    pub transport_steps: usize,
    pub trajectories: Vec<TransportedTrajectory>,
}

pub fn cmd_transport(cfg: &PipelineConfig, ws: &Workspace) -> Result<Manifest> {
    cfg.validate()?;
    let mut rec = Recorder::new("transport", cfg, ws);
    let ds = load_data(&mut rec)?;
    let (human, robot) = load_encoders(cfg, &mut rec, &ds)?;
    let vf = load_flow(cfg, &mut rec, &human, &robot)?;
    let mut trajectories = Vec::new();
    for t in ds.domain(Domain::Human) {
        let lat = human.encode_trajectory(t)?;
        let d = human.latent_dim();
        let flat: Vec<f64> = lat.iter().flatten().flatten().copied().collect();
        let rows = flat.len() / d;
        let m = ndarray::Array2::from_shape_vec((rows, d), flat).expect("rectangular latents");
        let moved = transport_batch(&vf, m.view())?;
        let k = ds.fingers;
        let latents = (0..t.len())
            .map(|s| (0..k).map(|f| moved.row(s * k + f).to_vec()).collect())
            .collect();
        trajectories.push(TransportedTrajectory {
            id: t.id,
            task_id: t.task_id.clone(),
            latents,
        });
    }
    let out = Transported {
        flow: vf.fingerprint(),
        transport_steps: vf.transport_steps,
        trajectories,
    };
    write_stamped(&ws.path(TRANSPORTED_FILE), &cfg.hash(), &out)?;
    rec.output(TRANSPORTED_FILE)?;
    rec.finish()
}

/// Names of the evaluation artifacts for `cfg`.
pub fn eval_artifacts(cfg: &PipelineConfig) -> [String; 4] {
    [
        tagged(cfg, "emd_report", "json"),
        tagged(cfg, "force_report", "json"),
        tagged(cfg, "force_table", "csv"),
        tagged(cfg, "pca", "csv"),
    ]
}

pub fn cmd_eval(cfg: &PipelineConfig, ws: &Workspace) -> Result<(Manifest, EmdReport, ForceReport)> {
    cfg.validate()?;
    let mut rec = Recorder::new("eval", cfg, ws);
    let ds = load_data(&mut rec)?;
    let (human, robot) = load_encoders(cfg, &mut rec, &ds)?;
    let vf = load_flow(cfg, &mut rec, &human, &robot)?;
    let split = Split::new(&ds, cfg.data.held_out_every);
    let latents = encode_dataset(&human, &robot, &ds)?;
    let out = evaluate(cfg, &ds, &split, &latents, &vf)?;
    let hash = cfg.hash();
    let [emd_name, force_name, table_name, pca_name] = eval_artifacts(cfg);
    write_stamped(&ws.path(&emd_name), &hash, &out.emd)?;
    write_stamped(&ws.path(&force_name), &hash, &out.force)?;
    write_stamped_csv(&ws.path(&table_name), &hash, &out.force.to_table())?;
    let pca = out.pca.as_ref().expect("evaluation exports pca");
    write_stamped_csv(&ws.path(&pca_name), &hash, &pca.to_csv())?;
    for name in [&emd_name, &force_name, &table_name, &pca_name] {
        rec.output(name)?;
    }
    Ok((rec.finish()?, out.emd, out.force))
}

pub fn cmd_sweep(
    cfg: &PipelineConfig,
    ws: &Workspace,
    param: SweepParam,
    values: Option<Vec<f64>>,
) -> Result<Manifest> {
    cfg.validate()?;
    let mut rec = Recorder::new("sweep", cfg, ws);
    let prep = restore(cfg, &mut rec)?;
    let values = values.unwrap_or_else(|| param.default_grid());
    let table = run_sweep(cfg, &prep, param, &values)?;
    let name = tagged(cfg, &format!("sweep_{}", param_name(param)), "csv");
    write_stamped_csv(&ws.path(&name), &cfg.hash(), &table.to_csv())?;
    rec.output(&name)?;
    rec.finish()
}

fn param_name(p: SweepParam) -> &'static str {
    match p {
        SweepParam::Lambda => "lambda",
        SweepParam::Delta => "delta",
    }
}

pub fn cmd_toy2d(cfg: &PipelineConfig, ws: &Workspace) -> Result<(Manifest, Toy2dReport)> {
    cfg.validate()?;
    let mut rec = Recorder::new("toy2d", cfg, ws);
    let report = toy2d_experiment(&cfg.toy2d_config())?;
    let json = tagged(cfg, "toy2d", "json");
    let csv = tagged(cfg, "toy2d_points", "csv");
    write_stamped(&ws.path(&json), &cfg.hash(), &report)?;
    write_stamped_csv(&ws.path(&csv), &cfg.hash(), &report.points_csv()?)?;
    rec.output(&json)?;
    rec.output(&csv)?;
    Ok((rec.finish()?, report))
}

/// Every alignment stage in order, through the artifact directory.
pub fn cmd_run(cfg: &PipelineConfig, ws: &Workspace) -> Result<(EmdReport, ForceReport)> {
    cmd_gen_data(cfg, ws)?;
    cmd_train_encoders(cfg, ws)?;
    cmd_build_pairs(cfg, ws)?;
    cmd_train_flow(cfg, ws)?;
    cmd_transport(cfg, ws)?;
    let (_, emd, force) = cmd_eval(cfg, ws)?;
    Ok((emd, force))
}

/// Report artifacts are JSON; this reads one back without its envelope.
pub fn read_report<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(read_stamped::<T>(path)?.data)
}
