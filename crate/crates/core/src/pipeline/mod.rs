//! End-to-end recipe: contrastive curriculum pretraining, teacher/student
//! distillation, temporal training, evaluation and ablation sweeps.

pub mod ablate;
pub mod config;
pub mod eval;
pub mod plots;
pub mod run;
pub mod train;

pub use config::{DistillConfig, EpochSplit, InitFrom, PretrainConfig, RunConfig, TemporalConfig, Toggles};
pub use eval::{evaluate_split, predict_split, EvalMode};
pub use train::{distill, pretrain, train_temporal, DistillLog, PretrainLog, TemporalEpoch, TemporalLog};

use crate::datagen::{EpisodeDataset, Split};
use crate::encoder::ToyEncoder;
use crate::error::Result;
use crate::metrics::EvalReport;
use crate::mrtt::Mrtt;

/// Evaluation reports of one finished run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Reports {
    /// Final predictions (temporal model when enabled, else the student).
    pub train: EvalReport,
    pub val: EvalReport,
    /// Temporal model with `β` forced to 1; absent without a temporal stage.
    pub val_spatial_only: Option<EvalReport>,
    pub val_student: EvalReport,
    pub val_teacher: EvalReport,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub pretrained: ToyEncoder,
    pub pretrain_log: PretrainLog,
    pub teacher: ToyEncoder,
    pub student: ToyEncoder,
    pub distill_log: DistillLog,
    pub mrtt: Option<Mrtt>,
    pub temporal_log: Option<TemporalLog>,
    pub reports: Reports,
}

pub fn final_mode(mrtt: Option<&Mrtt>) -> EvalMode {
    if mrtt.is_some() {
        EvalMode::Temporal
    } else {
        EvalMode::Frame
    }
}

pub fn build_reports(
    cfg: &RunConfig,
    ds: &EpisodeDataset,
    teacher: &ToyEncoder,
    student: &ToyEncoder,
    mrtt: Option<&Mrtt>,
) -> Result<Reports> {
    let mode = final_mode(mrtt);
    Ok(Reports {
        train: evaluate_split(cfg, ds, student, mrtt, Split::Train, mode)?,
        val: evaluate_split(cfg, ds, student, mrtt, Split::Val, mode)?,
        val_spatial_only: match mrtt {
            Some(m) => Some(evaluate_split(cfg, ds, student, Some(m), Split::Val, EvalMode::SpatialOnly)?),
            None => None,
        },
        val_student: evaluate_split(cfg, ds, student, None, Split::Val, EvalMode::Frame)?,
        val_teacher: evaluate_split(cfg, ds, teacher, None, Split::Val, EvalMode::Frame)?,
    })
}

/// Runs every stage in memory with `cfg.seed`.
pub fn run_pipeline(cfg: &RunConfig, ds: &EpisodeDataset) -> Result<Outcome> {
    cfg.validate()?;
    let seed = cfg.seed;
    let (pretrained, pretrain_log) = pretrain(cfg, ds, seed)?;
    let (teacher, student, distill_log) = distill(cfg, ds, &pretrained, seed)?;
    let (mrtt, temporal_log) = if cfg.toggles.temporal() {
        let (m, l) = train_temporal(cfg, ds, &student, seed)?;
        (Some(m), Some(l))
    } else {
        (None, None)
    };
    let reports = build_reports(cfg, ds, &teacher, &student, mrtt.as_ref())?;
    Ok(Outcome { pretrained, pretrain_log, teacher, student, distill_log, mrtt, temporal_log, reports })
}
