//! End-to-end alignment pipeline.
//!
//! Stages run in order: data → encoders → pseudo-pairs → flow → evaluation.
//! Each stage is available in memory (used by tests and sweeps) and as a
//! file-level command in [`commands`] that writes versioned artifacts and a
//! manifest.
//!
//! Object-annotated trajectories are split per domain and task: every
//! `held_out_every`-th trajectory (by id order) is held out from encoder
//! training, pair mining and flow training, and is used for evaluation.

pub mod commands;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{generate_synthetic, Dataset, Domain, GenConfig, Trajectory};
use crate::encoder::{stack_frames, train_ssl, EncoderConfig, SslReport, TactileEncoder};
use crate::error::{Error, Result};
use crate::eval::{
    eval_alignment, eval_force_transfer, pca_export, EmdConfig, EmdReport, ForceConfig, ForceData,
    ForceReport, PcaExport, SweepParam, SweepRow, SweepTable,
};
use crate::flow::toy2d::Toy2dConfig;
use crate::flow::{train_flow, transport_batch, FlowConfig, FlowReport, VelocityField};
use crate::normalize::StatsTable;
use crate::pairs::{build_transitions, mine_pairs, PairConfig, PairSet, PAIRSET_FORMAT_VERSION};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub generator: GenConfig,
    /// Every n-th object-annotated trajectory per domain and task is held out.
    pub held_out_every: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            generator: GenConfig::default(),
            held_out_every: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub emd: EmdConfig,
    pub force: ForceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub data: DataSection,
    pub encoder: EncoderConfig,
    pub pairs: PairConfig,
    pub flow: FlowConfig,
    pub eval: EvalSection,
    pub toy2d: Toy2dConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::desk()
    }
}

impl PipelineConfig {
    /// Small-scale settings that run in minutes on one CPU core.
    pub fn desk() -> Self {
        PipelineConfig {
            seed: 0,
            data: DataSection {
                // Contact state is a function of the manipulation state, and
                // object placement varies little relative to the motion.
                generator: GenConfig {
                    start_jitter: 0.001,
                    force_jitter: 0.0,
                    ..GenConfig::default()
                },
                held_out_every: 4,
            },
            encoder: EncoderConfig::default(),
            pairs: PairConfig::default(),
            flow: FlowConfig {
                width: 128,
                depth: 3,
                steps: 3000,
                batch_size: 256,
                learning_rate: 1e-3,
                ..FlowConfig::default()
            },
            eval: EvalSection {
                emd: EmdConfig::default(),
                force: ForceConfig {
                    learning_rate: 1e-3,
                    epochs: 60,
                    ..ForceConfig::default()
                },
            },
            toy2d: Toy2dConfig::default(),
        }
    }

    /// Full-size velocity field and force-decoder recipe.
    pub fn full() -> Self {
        let desk = PipelineConfig::desk();
        PipelineConfig {
            flow: FlowConfig {
                width: 1024,
                depth: 3,
                steps: 20_000,
                learning_rate: 5e-5,
                ..desk.flow.clone()
            },
            eval: EvalSection {
                force: ForceConfig {
                    learning_rate: 1e-4,
                    epochs: 500,
                    ..desk.eval.force.clone()
                },
                ..desk.eval.clone()
            },
            ..desk
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(PipelineConfig::desk()),
            "full" => Ok(PipelineConfig::full()),
            other => Err(Error::Usage(format!(
                "unknown preset `{other}` (expected desk or full)"
            ))),
        }
    }

    /// Parse a TOML config. An optional top-level `preset` key selects the
    /// base settings that the remaining keys override.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut overrides: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Parse {
                line: line_of(text, e.span().map_or(0, |s| s.start)),
                reason: e.message().to_string(),
            })?;
        let base = match overrides.remove("preset") {
            Some(toml::Value::String(name)) => PipelineConfig::preset(&name)?,
            Some(_) => return Err(Error::Validation("`preset` must be a string".into())),
            None => PipelineConfig::desk(),
        };
        let mut merged = toml::Table::try_from(&base).expect("config serializes to toml");
        merge(&mut merged, overrides);
        let cfg: PipelineConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Validation(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to toml")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.generator.validate()?;
        if self.data.held_out_every < 2 {
            return Err(Error::Validation("data.held_out_every must be at least 2".into()));
        }
        self.encoder.validate()?;
        self.pairs.validate()?;
        self.flow.validate()?;
        self.eval.emd.validate()?;
        self.eval.force.validate()?;
        self.toy2d.validate()
    }

    /// Hex digest of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        hex::encode(&h.finalize()[..8])
    }

    fn stage_seed(&self, tag: u64, local: u64) -> u64 {
        seed::derive(self.seed, &[tag, local])
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            seed: self.stage_seed(1, self.encoder.seed),
            ..self.encoder.clone()
        }
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            seed: self.stage_seed(2, self.flow.seed),
            ..self.flow.clone()
        }
    }

    pub fn emd_config(&self) -> EmdConfig {
        EmdConfig {
            seed: self.stage_seed(3, self.eval.emd.seed),
            ..self.eval.emd
        }
    }

    pub fn force_config(&self) -> ForceConfig {
        ForceConfig {
            seed: self.stage_seed(4, self.eval.force.seed),
            ..self.eval.force.clone()
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.stage_seed(0, 0)
    }

    pub fn toy2d_config(&self) -> Toy2dConfig {
        Toy2dConfig {
            seed: self.stage_seed(5, self.toy2d.seed),
            ..self.toy2d.clone()
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Train / held-out partition of trajectory ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub held_out: BTreeSet<usize>,
}

impl Split {
    pub fn new(ds: &Dataset, every: usize) -> Split {
        let mut groups: BTreeMap<(Domain, &str), Vec<usize>> = BTreeMap::new();
        for t in ds.trajectories.iter().filter(|t| t.has_object_pose()) {
            groups.entry((t.domain, &t.task_id)).or_default().push(t.id);
        }
        let mut held_out = BTreeSet::new();
        for ids in groups.values_mut() {
            ids.sort_unstable();
            held_out.extend(ids.iter().skip(every - 1).step_by(every));
        }
        Split { held_out }
    }

    pub fn is_train(&self, t: &Trajectory) -> bool {
        !self.held_out.contains(&t.id)
    }
}

/// Per-trajectory latents: `latents[id][t][k]`.
pub type Latents = BTreeMap<usize, Vec<Vec<Vec<f64>>>>;

pub fn train_encoders(
    cfg: &PipelineConfig,
    ds: &Dataset,
    split: &Split,
) -> Result<(TactileEncoder, TactileEncoder, SslReport, SslReport)> {
    let enc_cfg = cfg.encoder_config();
    let mut trained = Vec::new();
    for domain in [Domain::Human, Domain::Robot] {
        let spec = *ds.spec(domain);
        let frames: Vec<_> = ds
            .domain(domain)
            .filter(|t| split.is_train(t))
            .flat_map(|t| t.steps.iter().flat_map(|s| &s.frames))
            .collect();
        let raws = stack_frames(&frames, spec.len())?;
        let domain_cfg = EncoderConfig {
            seed: seed::derive(enc_cfg.seed, &[domain as u64]),
            ..enc_cfg.clone()
        };
        let enc = TactileEncoder::new(domain, spec, &domain_cfg)?;
        trained.push(train_ssl(enc, raws.view(), &domain_cfg)?);
    }
    let (robot, robot_report) = trained.pop().expect("two encoders");
    let (human, human_report) = trained.pop().expect("two encoders");
    Ok((human, robot, human_report, robot_report))
}

pub fn encode_dataset(human: &TactileEncoder, robot: &TactileEncoder, ds: &Dataset) -> Result<Latents> {
    human.check_spec(&ds.human_spec)?;
    robot.check_spec(&ds.robot_spec)?;
    let mut out = Latents::new();
    for t in &ds.trajectories {
        let enc = match t.domain {
            Domain::Human => human,
            Domain::Robot => robot,
        };
        out.insert(t.id, enc.encode_trajectory(t)?);
    }
    Ok(out)
}

/// Identifier of the pair of latent spaces produced by two encoders.
pub fn latent_space_fingerprint(human: &TactileEncoder, robot: &TactileEncoder) -> String {
    format!("{}-{}", human.fingerprint(), robot.fingerprint())
}

pub fn robot_stats(ds: &Dataset, split: &Split) -> Result<StatsTable> {
    let robot: Vec<&Trajectory> = ds.domain(Domain::Robot).filter(|t| split.is_train(t)).collect();
    StatsTable::from_robot(&ds.tasks(), robot.iter().copied())
}

/// Mine pseudo-pairs over the training split, task by task.
pub fn build_pairs(
    cfg: &PairConfig,
    ds: &Dataset,
    split: &Split,
    stats: &StatsTable,
    latents: &Latents,
) -> Result<Vec<crate::pairs::PseudoPair>> {
    let mut all = Vec::new();
    for task in ds.tasks() {
        let task_stats = stats.get(&task)?;
        let mut sides = [Vec::new(), Vec::new()];
        for (side, domain) in [Domain::Human, Domain::Robot].into_iter().enumerate() {
            for t in ds
                .domain(domain)
                .filter(|t| t.task_id == task && t.has_object_pose() && split.is_train(t))
            {
                let lat = latents.get(&t.id).map(Vec::as_slice);
                sides[side].extend(build_transitions(t, task_stats, cfg.threshold(domain), lat)?);
            }
        }
        all.extend(mine_pairs(&sides[0], &sides[1], cfg)?);
    }
    Ok(all)
}

/// Held-out object-annotated latents of one domain, one row per frame.
pub fn held_out_latents(ds: &Dataset, split: &Split, latents: &Latents, domain: Domain) -> Array2<f64> {
    let rows: Vec<&Vec<f64>> = ds
        .domain(domain)
        .filter(|t| t.has_object_pose() && !split.is_train(t))
        .flat_map(|t| latents[&t.id].iter().flatten())
        .collect();
    to_matrix(&rows)
}

fn to_matrix(rows: &[&Vec<f64>]) -> Array2<f64> {
    let d = rows.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j])
}

/// Latents of in-contact frames labelled with their ground-truth force.
pub fn force_data<'a>(
    trajectories: impl Iterator<Item = &'a Trajectory>,
    latents: &Latents,
) -> Result<ForceData> {
    let mut rows = Vec::new();
    let mut forces = Vec::new();
    for t in trajectories {
        let Some(gt) = &t.ground_truth else {
            return Err(Error::Validation(format!(
                "trajectory {} has no ground-truth forces",
                t.id
            )));
        };
        for (step, g_step) in gt.iter().enumerate() {
            for (k, g) in g_step.iter().enumerate() {
                if g.iter().any(|v| *v != 0.0) {
                    rows.push(&latents[&t.id][step][k]);
                    forces.extend_from_slice(g);
                }
            }
        }
    }
    let forces = Array2::from_shape_vec((rows.len(), 3), forces).expect("three axes");
    ForceData::new(to_matrix(&rows), forces)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutputs {
    pub emd: EmdReport,
    pub force: ForceReport,
    #[serde(skip)]
    pub pca: Option<PcaExport>,
}

/// Held-out alignment, force transfer and PCA export.
pub fn evaluate(
    cfg: &PipelineConfig,
    ds: &Dataset,
    split: &Split,
    latents: &Latents,
    vf: &VelocityField,
) -> Result<EvalOutputs> {
    let human = held_out_latents(ds, split, latents, Domain::Human);
    let robot = held_out_latents(ds, split, latents, Domain::Robot);
    let emd = eval_alignment(human.view(), robot.view(), vf, &cfg.emd_config())?;
    let robot_force = force_data(ds.domain(Domain::Robot).filter(|t| t.has_object_pose()), latents)?;
    let human_force = force_data(
        ds.domain(Domain::Human)
            .filter(|t| t.has_object_pose() && !split.is_train(t)),
        latents,
    )?;
    let force = eval_force_transfer(&robot_force, &human_force, vf, &cfg.force_config())?;
    let moved = transport_batch(vf, human.view())?;
    let pca = pca_export(&[
        ("human", human.view()),
        ("human_transported", moved.view()),
        ("robot", robot.view()),
    ])?;
    Ok(EvalOutputs {
        emd,
        force,
        pca: Some(pca),
    })
}

/// Everything produced by one in-memory pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub config: PipelineConfig,
    pub dataset: Dataset,
    pub split: Split,
    pub human_encoder: TactileEncoder,
    pub robot_encoder: TactileEncoder,
    pub ssl: (SslReport, SslReport),
    pub latents: Latents,
    pub stats: StatsTable,
    pub pairs: PairSet,
    pub flow: VelocityField,
    pub flow_report: FlowReport,
    pub eval: EvalOutputs,
}

/// Stages up to (and including) latent extraction, shared by runs and sweeps.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub split: Split,
    pub human_encoder: TactileEncoder,
    pub robot_encoder: TactileEncoder,
    pub ssl: (SslReport, SslReport),
    pub latents: Latents,
    pub stats: StatsTable,
}

pub fn prepare(cfg: &PipelineConfig, dataset: Dataset) -> Result<Prepared> {
    cfg.validate()?;
    dataset.require_both_domains()?;
    let split = Split::new(&dataset, cfg.data.held_out_every);
    let (human_encoder, robot_encoder, hr, rr) = train_encoders(cfg, &dataset, &split)?;
    let latents = encode_dataset(&human_encoder, &robot_encoder, &dataset)?;
    let stats = robot_stats(&dataset, &split)?;
    Ok(Prepared {
        dataset,
        split,
        human_encoder,
        robot_encoder,
        ssl: (hr, rr),
        latents,
        stats,
    })
}

impl Prepared {
    pub fn pair_set(&self, cfg: &PairConfig) -> Result<PairSet> {
        let pairs = build_pairs(cfg, &self.dataset, &self.split, &self.stats, &self.latents)?;
        Ok(PairSet {
            format_version: PAIRSET_FORMAT_VERSION,
            config: *cfg,
            latent_dim: self.human_encoder.latent_dim(),
            human_encoder: self.human_encoder.fingerprint(),
            robot_encoder: self.robot_encoder.fingerprint(),
            stats: self.stats.fingerprint(),
            pairs,
        })
    }

    pub fn latent_fingerprint(&self) -> String {
        latent_space_fingerprint(&self.human_encoder, &self.robot_encoder)
    }
}

/// Run the whole pipeline in memory on generated data.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    let dataset = generate_synthetic(&cfg.data.generator, cfg.data_seed())?;
    run_pipeline_on(cfg, dataset)
}

pub fn run_pipeline_on(cfg: &PipelineConfig, dataset: Dataset) -> Result<PipelineRun> {
    let prep = prepare(cfg, dataset)?;
    let pairs = prep.pair_set(&cfg.pairs)?;
    let (flow, flow_report) = train_flow(&pairs.pairs, &cfg.flow_config(), prep.latent_fingerprint())?;
    let eval = evaluate(cfg, &prep.dataset, &prep.split, &prep.latents, &flow)?;
    Ok(PipelineRun {
        config: cfg.clone(),
        dataset: prep.dataset,
        split: prep.split,
        human_encoder: prep.human_encoder,
        robot_encoder: prep.robot_encoder,
        ssl: prep.ssl,
        latents: prep.latents,
        stats: prep.stats,
        pairs,
        flow,
        flow_report,
        eval,
    })
}

/// Re-mine pairs, retrain the flow and re-measure alignment per value.
///
/// A failing row records its error and the sweep continues.
pub fn run_sweep(
    cfg: &PipelineConfig,
    prep: &Prepared,
    param: SweepParam,
    values: &[f64],
) -> Result<SweepTable> {
    if values.len() < 2 {
        return Err(Error::Usage("a sweep needs at least two values".into()));
    }
    let human = held_out_latents(&prep.dataset, &prep.split, &prep.latents, Domain::Human);
    let robot = held_out_latents(&prep.dataset, &prep.split, &prep.latents, Domain::Robot);
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut pair_cfg = cfg.pairs;
        match param {
            SweepParam::Lambda => pair_cfg.lambda = value,
            SweepParam::Delta => pair_cfg.delta = value,
        }
        let row = (|| -> Result<(usize, f64)> {
            let set = prep.pair_set(&pair_cfg)?;
            let (vf, _) = train_flow(&set.pairs, &cfg.flow_config(), prep.latent_fingerprint())?;
            let rep = eval_alignment(human.view(), robot.view(), &vf, &cfg.emd_config())?;
            Ok((set.pairs.len(), rep.reduction_pct))
        })();
        rows.push(match row {
            Ok((pairs, red)) => SweepRow {
                value,
                pairs,
                reduction_pct: Some(red),
                error: None,
            },
            Err(e) => {
                log::warn!("sweep row {value} failed: {e}");
                SweepRow {
                    value,
                    pairs: 0,
                    reduction_pct: None,
                    error: Some(e.to_string()),
                }
            }
        });
    }
    Ok(SweepTable {
        param,
        seed: cfg.seed,
        rows,
    })
}
