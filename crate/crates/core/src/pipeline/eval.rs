use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::train::{cut_windows, episode_features, forward_options};
use crate::autodiff::Tensor;
use crate::datagen::{EpisodeDataset, Split};
use crate::encoder::ToyEncoder;
use crate::error::Result;
use crate::metrics::{evaluate, EvalReport};
use crate::mrtt::{BetaMode, Mrtt};
use crate::schema::MultiLabel;

/// Which prediction path is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Per-frame probabilities of the encoder's own classification head.
    Frame,
    /// `sigmoid(Z_final)` of the temporal model.
    Temporal,
    /// `sigmoid(Z_spat)` of the temporal model (β forced to 1).
    SpatialOnly,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Frame scores and labels of a split under `mode`.
pub fn predict_split(
    cfg: &RunConfig,
    ds: &EpisodeDataset,
    encoder: &ToyEncoder,
    mrtt: Option<&Mrtt>,
    split: Split,
    mode: EvalMode,
) -> Result<(Tensor, Vec<MultiLabel>)> {
    let episodes = ds.split(split);
    let c = ds.vocab.num_classes();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    match (mode, mrtt) {
        (EvalMode::Frame, _) | (_, None) => {
            for e in episodes {
                scores.extend_from_slice(encoder.predict_proba(&e.obs)?.data());
                labels.extend(e.labels.iter().cloned());
            }
        }
        (_, Some(model)) => {
            let feats = episode_features(encoder, episodes)?;
            let w = cfg.temporal.window;
            let mut opts = forward_options(cfg, false, 0);
            if mode == EvalMode::SpatialOnly {
                opts.beta = BetaMode::Fixed(1.0);
            }
            for win in cut_windows(&feats, episodes, 0, w, w) {
                let z = model.predict_logits(&win.features, &win.mask, &opts)?;
                let v = win.valid();
                scores.extend(z.data()[..v * c].iter().map(|&l| sigmoid(l)));
                labels.extend(win.labels[..v].iter().cloned());
            }
        }
    }
    Ok((Tensor::matrix(labels.len(), c, scores)?, labels))
}

pub fn evaluate_split(
    cfg: &RunConfig,
    ds: &EpisodeDataset,
    encoder: &ToyEncoder,
    mrtt: Option<&Mrtt>,
    split: Split,
    mode: EvalMode,
) -> Result<EvalReport> {
    let (s, l) = predict_split(cfg, ds, encoder, mrtt, split, mode)?;
    evaluate(&s, &l, &ds.vocab)
}
