//! Run directories and the stage commands behind the CLI.
//!
//! Layout of a run directory:
//!
//! ```text
//! <out>/config.lock           resolved configuration (TOML)
//! <out>/dataset.bin           generated dataset, unless `dataset` is configured
//! <out>/manifest.json
//! <out>/checkpoints/{pretrained,teacher,student,mrtt}.ckpt
//! <out>/reports/*.json, *.csv
//! <out>/plots/*.svg
//! ```

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use super::eval::{evaluate_split, EvalMode};
use super::plots;
use super::train::{distill, encoder_config, mrtt_config, pretrain, train_temporal, DistillLog, PretrainLog, TemporalLog};
use super::Reports;
use crate::checkpoint::Checkpoint;
use crate::datagen::{generate_dataset, manifest, read_dataset, write_dataset, EpisodeDataset, Manifest, Split};
use crate::encoder::ToyEncoder;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::mrtt::Mrtt;
use crate::schema::TripletVocabulary;

pub const NO_PRETRAIN_MARKER: &str = "no_pretrain";

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["checkpoints", "reports", "plots"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.ckpt"))
    }

    pub fn report(&self, file: &str) -> PathBuf {
        self.root.join("reports").join(file)
    }

    pub fn plot(&self, file: &str) -> PathBuf {
        self.root.join("plots").join(file)
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.bin")
    }

    pub fn write_lock(&self, cfg: &RunConfig) -> Result<()> {
        write(&self.root.join("config.lock"), cfg.to_toml_string()?)
    }

    fn write_json<T: Serialize>(&self, file: &str, value: &T) -> Result<()> {
        write(&self.report(file), serde_json::to_string_pretty(value)? + "\n")
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents)?;
    Ok(())
}

fn check_vocab(cfg: &RunConfig, ds: &EpisodeDataset) -> Result<()> {
    if let Some(p) = &cfg.vocab {
        let v = TripletVocabulary::load(p)?;
        if v != ds.vocab {
            return Err(Error::InvalidVocabulary(format!("{} does not match the dataset vocabulary", p.display())));
        }
    }
    Ok(())
}

/// Generates the dataset for `cfg.seed` and writes it with its manifest.
pub fn cmd_gen_data(cfg: &RunConfig, dir: &RunDir) -> Result<Manifest> {
    cfg.data.validate()?;
    dir.write_lock(cfg)?;
    let ds = generate_dataset(&cfg.data, cfg.seed)?;
    write_dataset(&ds, &dir.dataset())?;
    let m = manifest(&ds)?;
    write(&dir.root.join("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(m)
}

/// The configured dataset file, else `<out>/dataset.bin`, else a freshly
/// generated one (written to `<out>`).
pub fn load_dataset(cfg: &RunConfig, dir: &RunDir) -> Result<EpisodeDataset> {
    let ds = match &cfg.dataset {
        Some(p) => read_dataset(p)?,
        None if dir.dataset().exists() => read_dataset(&dir.dataset())?,
        None => {
            cmd_gen_data(cfg, dir)?;
            read_dataset(&dir.dataset())?
        }
    };
    check_vocab(cfg, &ds)?;
    Ok(ds)
}

fn load_checkpoint(dir: &RunDir, name: &str) -> Result<Checkpoint> {
    let path = dir.checkpoint(name);
    if !path.exists() {
        return Err(Error::MissingFile(format!("checkpoint {}", path.display())));
    }
    Checkpoint::load(&path)
}

pub fn load_encoder(cfg: &RunConfig, ds: &EpisodeDataset, dir: &RunDir, name: &str) -> Result<ToyEncoder> {
    let ck = load_checkpoint(dir, name)?;
    let mut enc = ToyEncoder::new(encoder_config(cfg, ds), 0)?;
    ck.load_into(enc.params_mut())?;
    Ok(enc)
}

pub fn load_mrtt(cfg: &RunConfig, ds: &EpisodeDataset, dir: &RunDir) -> Result<Mrtt> {
    let ck = load_checkpoint(dir, "mrtt")?;
    let mut m = Mrtt::new(mrtt_config(cfg, ds), 0)?;
    ck.load_into(m.params_mut())?;
    Ok(m)
}

fn prepare(cfg: &RunConfig, dir: &RunDir) -> Result<EpisodeDataset> {
    cfg.validate()?;
    dir.write_lock(cfg)?;
    load_dataset(cfg, dir)
}

pub fn cmd_pretrain(cfg: &RunConfig, dir: &RunDir) -> Result<PretrainLog> {
    let ds = prepare(cfg, dir)?;
    let (enc, log) = pretrain(cfg, &ds, cfg.seed)?;
    let mut ck = Checkpoint::from_params(enc.params());
    if log.no_pretrain {
        ck = ck.with_marker(NO_PRETRAIN_MARKER);
    }
    ck.save(&dir.checkpoint("pretrained"))?;
    dir.write_json("pretrain_log.json", &log)?;
    write(&dir.plot("pretrain_loss.svg"), plots::pretrain_plot(&log))?;
    Ok(log)
}

pub fn cmd_distill(cfg: &RunConfig, dir: &RunDir) -> Result<DistillLog> {
    let ds = prepare(cfg, dir)?;
    let pretrained = load_encoder(cfg, &ds, dir, "pretrained")?;
    let (teacher, student, log) = distill(cfg, &ds, &pretrained, cfg.seed)?;
    Checkpoint::from_params(teacher.params()).save(&dir.checkpoint("teacher"))?;
    Checkpoint::from_params(student.params()).save(&dir.checkpoint("student"))?;
    dir.write_json("distill_log.json", &log)?;
    write(&dir.plot("distill_loss.svg"), plots::distill_plot(&log))?;
    Ok(log)
}

pub fn cmd_train_temporal(cfg: &RunConfig, dir: &RunDir) -> Result<TemporalLog> {
    let ds = prepare(cfg, dir)?;
    if !cfg.toggles.temporal() {
        return Err(Error::InvalidConfig("temporal stage is disabled: both fusion toggles are off".into()));
    }
    let student = load_encoder(cfg, &ds, dir, "student")?;
    let (model, log) = train_temporal(cfg, &ds, &student, cfg.seed)?;
    Checkpoint::from_params(model.params()).save(&dir.checkpoint("mrtt"))?;
    dir.write_json("temporal_log.json", &log)?;
    write(&dir.plot("temporal_loss.svg"), plots::temporal_loss_plot(&log))?;
    write(&dir.plot("fusion_weights.svg"), plots::fusion_plot(&log))?;
    Ok(log)
}

/// What `evaluate` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalRequest {
    pub split: Split,
    /// Score `sigmoid(Z_spat)` of the temporal model instead of `Z_final`.
    pub spatial_only: bool,
}

fn report_stem(req: &EvalRequest) -> String {
    if req.spatial_only {
        format!("eval_{}_spatial_only", req.split)
    } else {
        format!("eval_{}", req.split)
    }
}

fn write_report(dir: &RunDir, stem: &str, report: &EvalReport) -> Result<()> {
    write(&dir.report(&format!("{stem}.json")), report.to_json()? + "\n")?;
    write(&dir.report(&format!("{stem}.csv")), report.to_csv())?;
    write(&dir.plot(&format!("{stem}_ap.svg")), plots::ap_plot(&format!("AP per family ({stem})"), report))
}

/// Scores the student, or the temporal model when the fusion toggles enable it.
pub fn cmd_evaluate(cfg: &RunConfig, dir: &RunDir, req: EvalRequest) -> Result<EvalReport> {
    let ds = prepare(cfg, dir)?;
    let student = load_encoder(cfg, &ds, dir, "student")?;
    let (mrtt, mode) = if req.spatial_only {
        (Some(load_mrtt(cfg, &ds, dir)?), EvalMode::SpatialOnly)
    } else if cfg.toggles.temporal() {
        (Some(load_mrtt(cfg, &ds, dir)?), EvalMode::Temporal)
    } else {
        (None, EvalMode::Frame)
    };
    let report = evaluate_split(cfg, &ds, &student, mrtt.as_ref(), req.split, mode)?;
    write_report(dir, &report_stem(&req), &report)?;
    Ok(report)
}

/// Every stage in order, then the full set of evaluation reports.
pub fn cmd_run(cfg: &RunConfig, dir: &RunDir) -> Result<Reports> {
    cmd_pretrain(cfg, dir)?;
    cmd_distill(cfg, dir)?;
    if cfg.toggles.temporal() {
        cmd_train_temporal(cfg, dir)?;
    }
    let ds = load_dataset(cfg, dir)?;
    let teacher = load_encoder(cfg, &ds, dir, "teacher")?;
    let student = load_encoder(cfg, &ds, dir, "student")?;
    let mrtt = if cfg.toggles.temporal() { Some(load_mrtt(cfg, &ds, dir)?) } else { None };
    let reports = super::build_reports(cfg, &ds, &teacher, &student, mrtt.as_ref())?;
    write_report(dir, "eval_train", &reports.train)?;
    write_report(dir, "eval_val", &reports.val)?;
    if let Some(r) = &reports.val_spatial_only {
        write_report(dir, "eval_val_spatial_only", r)?;
    }
    write_report(dir, "eval_val_student", &reports.val_student)?;
    write_report(dir, "eval_val_teacher", &reports.val_teacher)?;
    dir.write_json("summary.json", &reports)?;
    Ok(reports)
}
