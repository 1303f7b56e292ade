use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::SyntheticConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::mrtt::PathwayConfig;
use crate::nn::AdamWConfig;
use crate::sampler::SamplerCaps;
use crate::schema::Curriculum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochSplit {
    /// `epochs` is the total budget, shared equally by the stages.
    Total,
    /// Every stage runs `epochs` epochs.
    PerStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitFrom {
    Pretrained,
    Scratch,
}

fn desk_optimizer() -> AdamWConfig {
    AdamWConfig { lr: 2e-3, lr_min: 2e-4, ..AdamWConfig::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub epoch_split: EpochSplit,
    pub curriculum: Curriculum,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            epoch_split: EpochSplit::Total,
            curriculum: Curriculum::default(),
            batch_size: 64,
            optimizer: desk_optimizer(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub teacher_epochs: usize,
    pub student_epochs: usize,
    pub teacher_init: InitFrom,
    pub student_init: InitFrom,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            teacher_epochs: 8,
            student_epochs: 12,
            teacher_init: InitFrom::Pretrained,
            student_init: InitFrom::Pretrained,
            batch_size: 64,
            optimizer: desk_optimizer(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalConfig {
    pub epochs: usize,
    /// Window length `T_win` in frames.
    pub window: usize,
    /// Start offset between consecutive training windows.
    pub hop: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            window: 32,
            hop: 4,
            batch_size: 8,
            optimizer: AdamWConfig { lr: 5e-3, lr_min: 5e-4, ..AdamWConfig::default() },
        }
    }
}

/// Component switches, one per ablation column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub supcon: bool,
    pub curriculum: bool,
    pub input_mixup: bool,
    pub feature_mixup: bool,
    pub gamma_fusion: bool,
    pub beta_fusion: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self { supcon: true, curriculum: true, input_mixup: true, feature_mixup: true, gamma_fusion: true, beta_fusion: true }
    }
}

impl Toggles {
    /// The temporal stage runs when either fusion switch is on.
    pub fn temporal(&self) -> bool {
        self.gamma_fusion || self.beta_fusion
    }

    pub fn validate(&self) -> Result<()> {
        if self.curriculum && !self.supcon {
            return Err(Error::InvalidConfig("toggle `curriculum` requires `supcon`".into()));
        }
        if self.feature_mixup && !self.supcon {
            return Err(Error::InvalidConfig("toggle `feature_mixup` requires `supcon`".into()));
        }
        Ok(())
    }

    /// The eight rows of the component ablation, from nothing to everything.
    pub fn ablation_rows() -> Vec<Toggles> {
        let off = Toggles {
            supcon: false,
            curriculum: false,
            input_mixup: false,
            feature_mixup: false,
            gamma_fusion: false,
            beta_fusion: false,
        };
        let r2 = Toggles { supcon: true, ..off };
        let r3 = Toggles { curriculum: true, ..r2 };
        let r4 = Toggles { input_mixup: true, ..r3 };
        let r5 = Toggles { feature_mixup: true, ..r4 };
        let r6 = Toggles { gamma_fusion: true, ..r5 };
        let r7 = Toggles { beta_fusion: true, ..r5 };
        vec![off, r2, r3, r4, r5, r6, r7, Toggles::default()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Existing dataset file; when absent the dataset is generated from `data`.
    pub dataset: Option<PathBuf>,
    /// Optional vocabulary file that must match the dataset's vocabulary.
    pub vocab: Option<PathBuf>,
    pub data: SyntheticConfig,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub distill: DistillConfig,
    pub temporal: TemporalConfig,
    pub loss: LossConfig,
    pub sampler: SamplerCaps,
    pub pathway: PathwayConfig,
    pub toggles: Toggles,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: None,
            vocab: None,
            data: SyntheticConfig::desk(),
            encoder: EncoderConfig::default(),
            pretrain: PretrainConfig::default(),
            distill: DistillConfig::default(),
            temporal: TemporalConfig::default(),
            loss: LossConfig::default(),
            sampler: SamplerCaps::default(),
            pathway: PathwayConfig::desk(),
            toggles: Toggles::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.display().to_string()))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Checks everything that does not depend on the dataset contents.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.toggles.validate()?;
        self.loss.validate()?;
        self.sampler.validate()?;
        if self.dataset.is_none() {
            self.data.validate()?;
        }
        for (path, what) in [(&self.dataset, "dataset"), (&self.vocab, "vocabulary")] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(Error::MissingFile(format!("{what} {}", p.display())));
                }
            }
        }
        if self.pretrain.epochs == 0 || self.distill.teacher_epochs == 0 || self.distill.student_epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.temporal.epochs == 0 || self.temporal.hop == 0 || self.temporal.batch_size == 0 {
            return bad("temporal epochs, hop and batch size must be at least 1".into());
        }
        if self.pretrain.batch_size < 2 || self.distill.batch_size == 0 {
            return bad("batch sizes must be positive (contrastive batches need two samples)".into());
        }
        if self.temporal.window < self.pathway.max_stride() {
            return Err(Error::SequenceTooShort { len: self.temporal.window, stride: self.pathway.max_stride() });
        }
        self.pathway.validate(self.encoder.feature_dim)?;
        Ok(())
    }

    /// Stage schedule of the contrastive pretraining as `(stage, epochs)`.
    pub fn stage_schedule(&self) -> Vec<(crate::schema::Components, usize)> {
        let stages: Vec<_> = if self.toggles.curriculum {
            self.pretrain.curriculum.stages().to_vec()
        } else {
            Curriculum::flat().stages().to_vec()
        };
        let n = stages.len();
        match self.pretrain.epoch_split {
            EpochSplit::PerStage => stages.into_iter().map(|s| (s, self.pretrain.epochs)).collect(),
            EpochSplit::Total => {
                let (q, r) = (self.pretrain.epochs / n, self.pretrain.epochs % n);
                stages.into_iter().enumerate().map(|(i, s)| (s, q + usize::from(i < r))).collect()
            }
        }
    }
}
