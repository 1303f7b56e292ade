use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{InitFrom, RunConfig};
use crate::autodiff::{Tape, Tensor};
use crate::datagen::{Episode, EpisodeDataset, Split};
use crate::encoder::{EncoderConfig, ToyEncoder};
use crate::error::{Error, Result};
use crate::losses::{
    bce_multilabel, input_mixup, mix_with, soft_distill_loss, supcon_mix_batch, supcon_stage_loss, MixSpec,
};
use crate::mrtt::{BetaMode, ForwardOptions, Mrtt, MrttConfig};
use crate::nn::{cosine_lr, mix_seed, rng_from, AdamW};
use crate::sampler::{candidate_pools, cosine_similarity_matrix, hard_pools, sample_pairs, synthesize_negatives};
use crate::schema::{Components, MultiLabel};

/// RNG stream ids, one per randomised step of the pipeline.
mod stream {
    pub const ENCODER_INIT: u64 = 1;
    pub const PRETRAIN: u64 = 2;
    pub const TEACHER_INIT: u64 = 3;
    pub const TEACHER: u64 = 4;
    pub const STUDENT_INIT: u64 = 5;
    pub const STUDENT: u64 = 6;
    pub const MRTT_INIT: u64 = 7;
    pub const MRTT: u64 = 8;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: Components,
    /// Mean loss of every epoch.
    pub epoch_loss: Vec<f64>,
    pub step_loss: Vec<f64>,
    pub skipped_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    pub no_pretrain: bool,
    pub stages: Vec<StageLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillLog {
    pub teacher_epoch_loss: Vec<f64>,
    pub student_epoch_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalEpoch {
    pub loss: f64,
    pub gamma: Vec<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalLog {
    pub strides: Vec<usize>,
    pub epochs: Vec<TemporalEpoch>,
}

pub fn encoder_config(cfg: &RunConfig, ds: &EpisodeDataset) -> EncoderConfig {
    EncoderConfig { input_dim: ds.config.obs_dim, num_classes: ds.vocab.num_classes(), ..cfg.encoder.clone() }
}

pub fn mrtt_config(cfg: &RunConfig, ds: &EpisodeDataset) -> MrttConfig {
    MrttConfig { input_dim: cfg.encoder.feature_dim, num_classes: ds.vocab.num_classes(), pathway: cfg.pathway.clone() }
}

fn gather(x: &Tensor, rows: &[usize]) -> Tensor {
    let (_, d) = x.dims2().expect("matrix");
    let mut data = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        data.extend_from_slice(x.row(r));
    }
    Tensor::matrix(rows.len(), d, data).expect("row gather")
}

fn label_matrix(labels: &[MultiLabel]) -> Tensor {
    let c = labels.first().map_or(0, MultiLabel::len);
    Tensor::matrix(labels.len(), c, labels.iter().flat_map(MultiLabel::as_f64).collect()).expect("labels")
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn batches(n: usize, size: usize) -> usize {
    n.div_ceil(size)
}

/// Contrastive curriculum pretraining of a fresh encoder. With the `supcon`
/// toggle off the randomly initialised encoder is returned unchanged.
pub fn pretrain(cfg: &RunConfig, ds: &EpisodeDataset, seed: u64) -> Result<(ToyEncoder, PretrainLog)> {
    let mut enc = ToyEncoder::new(encoder_config(cfg, ds), mix_seed(seed, stream::ENCODER_INIT))?;
    if !cfg.toggles.supcon {
        return Ok((enc, PretrainLog { no_pretrain: true, stages: vec![] }));
    }
    let (x, labels) = ds.frames(Split::Train);
    let keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].count_active() > 0).collect();
    let x = gather(&x, &keep);
    let labels: Vec<MultiLabel> = keep.iter().map(|&i| labels[i].clone()).collect();
    let n = labels.len();
    let bs = cfg.pretrain.batch_size;
    let schedule = cfg.stage_schedule();
    let total_steps: usize = schedule.iter().map(|(_, e)| e * batches(n, bs)).sum();
    let mut opt = AdamW::new(cfg.pretrain.optimizer, enc.params());
    let mut rng = rng_from(seed, stream::PRETRAIN);
    let caps = cfg.sampler;
    let mut step = 0;
    let mut stages = Vec::new();
    for (stage, epochs) in schedule {
        let mut log = StageLog { stage, epoch_loss: vec![], step_loss: vec![], skipped_batches: 0 };
        for epoch in 0..epochs {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut losses = Vec::new();
            for chunk in order.chunks(bs) {
                let lr = cosine_lr(&cfg.pretrain.optimizer, step, total_steps);
                step += 1;
                let bl: Vec<MultiLabel> = chunk.iter().map(|&i| labels[i].clone()).collect();
                let mut tape = Tape::new();
                let bound = enc.bind(&mut tape, true);
                let xb = tape.constant(gather(&x, chunk));
                let f = enc.encode(&mut tape, &bound, xb)?;
                let z = enc.project_normalize(&mut tape, &bound, f)?;
                let loss = if cfg.toggles.feature_mixup {
                    let sim = cosine_similarity_matrix(tape.value(f))?;
                    let pools = candidate_pools(&bl, &ds.vocab, stage)?;
                    let hard = hard_pools(&sim, &pools, caps.k, caps.n);
                    let pairs = sample_pairs(&hard, caps.m, &mut rng);
                    let zv = tape.value(z).clone();
                    let mut specs = vec![Vec::new(); chunk.len()];
                    for (i, a) in pairs.active() {
                        let negs: Vec<&[f64]> = a.negatives.iter().map(|&j| zv.row(j)).collect();
                        let syn = synthesize_negatives(&negs, caps.s, cfg.loss.alpha_feat, &mut rng)?;
                        specs[i] = syn
                            .negatives
                            .iter()
                            .map(|s| MixSpec { first: a.negatives[s.first], second: a.negatives[s.second], lambda: s.lambda })
                            .collect();
                    }
                    let mixed = supcon_mix_batch(&mut tape, z, &pairs, &specs, cfg.loss.tau);
                    match (mixed, cfg.loss.combine_supcon) {
                        (Ok(m), true) => match supcon_stage_loss(&mut tape, z, &bl, &ds.vocab, stage, cfg.loss.tau) {
                            Ok(s) => tape.add(m, s),
                            Err(Error::EmptyContrastiveBatch) => Ok(m),
                            Err(e) => Err(e),
                        },
                        (r, _) => r,
                    }
                } else {
                    supcon_stage_loss(&mut tape, z, &bl, &ds.vocab, stage, cfg.loss.tau)
                };
                let loss = match loss {
                    Ok(l) => l,
                    Err(Error::EmptyContrastiveBatch) => {
                        log.skipped_batches += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let value = tape.value(loss).item();
                let grads = tape.backward(loss)?;
                opt.step(enc.params_mut(), &bound, &grads, lr);
                losses.push(value);
                log.step_loss.push(value);
            }
            if losses.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "stage {stage} epoch {epoch}: every batch lacked a positive pair; \
                     increase the batch size or use a coarser stage"
                )));
            }
            log.epoch_loss.push(mean(&losses));
        }
        stages.push(log);
    }
    Ok((enc, PretrainLog { no_pretrain: false, stages }))
}

fn init_encoder(cfg: &RunConfig, ds: &EpisodeDataset, pretrained: &ToyEncoder, init: InitFrom, seed: u64) -> Result<ToyEncoder> {
    match init {
        InitFrom::Pretrained => Ok(pretrained.clone()),
        InitFrom::Scratch => ToyEncoder::new(encoder_config(cfg, ds), seed),
    }
}

fn mixed_batch(cfg: &RunConfig, x: &Tensor, y: &Tensor, rng: &mut rand_chacha::ChaCha8Rng) -> Result<(Tensor, Tensor)> {
    if cfg.toggles.input_mixup {
        let m = input_mixup(x, y, cfg.loss.alpha_input, rng)?;
        Ok((m.x, m.y))
    } else {
        let (b, _) = x.dims2()?;
        let ident: Vec<usize> = (0..b).collect();
        let m = mix_with(x, y, &ident, 1.0)?;
        Ok((m.x, m.y))
    }
}

/// Teacher training on (mixed) hard labels, then a student trained on the
/// frozen teacher's probabilities for freshly mixed inputs.
pub fn distill(
    cfg: &RunConfig,
    ds: &EpisodeDataset,
    pretrained: &ToyEncoder,
    seed: u64,
) -> Result<(ToyEncoder, ToyEncoder, DistillLog)> {
    let (x, labels) = ds.frames(Split::Train);
    let y = label_matrix(&labels);
    let n = labels.len();
    let bs = cfg.distill.batch_size;
    let dc = &cfg.distill;

    let mut teacher = init_encoder(cfg, ds, pretrained, dc.teacher_init, mix_seed(seed, stream::TEACHER_INIT))?;
    let mut rng = rng_from(seed, stream::TEACHER);
    let mut opt = AdamW::new(dc.optimizer, teacher.params());
    let total = dc.teacher_epochs * batches(n, bs);
    let mut step = 0;
    let mut teacher_epoch_loss = Vec::new();
    for _ in 0..dc.teacher_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(bs) {
            let (xm, ym) = mixed_batch(cfg, &gather(&x, chunk), &gather(&y, chunk), &mut rng)?;
            let mut tape = Tape::new();
            let bound = teacher.bind(&mut tape, true);
            let xv = tape.constant(xm);
            let f = teacher.encode(&mut tape, &bound, xv)?;
            let logits = teacher.classify(&mut tape, &bound, f)?;
            let p = tape.sigmoid(logits)?;
            let t = tape.constant(ym);
            let loss = bce_multilabel(&mut tape, p, t)?;
            losses.push(tape.value(loss).item());
            let grads = tape.backward(loss)?;
            opt.step(teacher.params_mut(), &bound, &grads, cosine_lr(&dc.optimizer, step, total));
            step += 1;
        }
        teacher_epoch_loss.push(mean(&losses));
    }

    let mut student = init_encoder(cfg, ds, pretrained, dc.student_init, mix_seed(seed, stream::STUDENT_INIT))?;
    let mut rng = rng_from(seed, stream::STUDENT);
    let mut opt = AdamW::new(dc.optimizer, student.params());
    let total = dc.student_epochs * batches(n, bs);
    let mut step = 0;
    let mut student_epoch_loss = Vec::new();
    for _ in 0..dc.student_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(bs) {
            let (xm, ym) = mixed_batch(cfg, &gather(&x, chunk), &gather(&y, chunk), &mut rng)?;
            let soft = teacher.predict_proba(&xm)?;
            let mut tape = Tape::new();
            let bound = student.bind(&mut tape, true);
            let xv = tape.constant(xm);
            let f = student.encode(&mut tape, &bound, xv)?;
            let logits = student.classify(&mut tape, &bound, f)?;
            let p = tape.sigmoid(logits)?;
            let mut loss = soft_distill_loss(&mut tape, p, &soft)?;
            if cfg.loss.hard_label_weight > 0.0 {
                let t = tape.constant(ym);
                let hard = bce_multilabel(&mut tape, p, t)?;
                let hard = tape.scale(hard, cfg.loss.hard_label_weight)?;
                loss = tape.add(loss, hard)?;
            }
            losses.push(tape.value(loss).item());
            let grads = tape.backward(loss)?;
            opt.step(student.params_mut(), &bound, &grads, cosine_lr(&dc.optimizer, step, total));
            step += 1;
        }
        student_epoch_loss.push(mean(&losses));
    }
    Ok((teacher, student, DistillLog { teacher_epoch_loss, student_epoch_loss }))
}

/// A window of backbone features with its validity mask and frame labels.
#[derive(Debug, Clone)]
pub struct Window {
    pub episode: usize,
    pub start: usize,
    /// `T_win × C_e`, zero-padded past the episode end.
    pub features: Tensor,
    pub mask: Vec<bool>,
    pub labels: Vec<MultiLabel>,
}

impl Window {
    pub fn valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Window starts `0, hop, 2·hop, …`, stopping once a window reaches the end.
pub fn window_starts(len: usize, window: usize, hop: usize) -> Vec<usize> {
    let mut starts = vec![0];
    while starts.last().unwrap() + window < len {
        starts.push(starts.last().unwrap() + hop);
    }
    starts
}

pub fn cut_windows(features: &[Tensor], episodes: &[Episode], offset: usize, window: usize, hop: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for (e, (f, ep)) in features.iter().zip(episodes).enumerate() {
        let (t, d) = f.dims2().expect("feature matrix");
        for start in window_starts(t, window, hop) {
            let valid = window.min(t - start);
            let mut data = vec![0.0; window * d];
            data[..valid * d].copy_from_slice(&f.data()[start * d..(start + valid) * d]);
            let mut labels: Vec<MultiLabel> = ep.labels[start..start + valid].to_vec();
            labels.resize(window, MultiLabel::empty(ep.labels[0].len()));
            out.push(Window {
                episode: offset + e,
                start,
                features: Tensor::matrix(window, d, data).expect("window"),
                mask: (0..window).map(|i| i < valid).collect(),
                labels,
            });
        }
    }
    out
}

/// Frozen backbone features for every episode.
pub fn episode_features(student: &ToyEncoder, episodes: &[Episode]) -> Result<Vec<Tensor>> {
    episodes.iter().map(|e| student.features(&e.obs)).collect()
}

pub fn forward_options(cfg: &RunConfig, train: bool, seed: u64) -> ForwardOptions {
    ForwardOptions {
        train,
        seed,
        learn_gamma: cfg.toggles.gamma_fusion,
        beta: if cfg.toggles.beta_fusion { BetaMode::Learned } else { BetaMode::Fixed(0.0) },
    }
}

/// MRTT training on frozen student features.
pub fn train_temporal(cfg: &RunConfig, ds: &EpisodeDataset, student: &ToyEncoder, seed: u64) -> Result<(Mrtt, TemporalLog)> {
    let tc = &cfg.temporal;
    let mut model = Mrtt::new(mrtt_config(cfg, ds), mix_seed(seed, stream::MRTT_INIT))?;
    let train = ds.split(Split::Train);
    let feats = episode_features(student, train)?;
    let windows = cut_windows(&feats, train, 0, tc.window, tc.hop);
    let total = tc.epochs * batches(windows.len(), tc.batch_size);
    let mut opt = AdamW::new(tc.optimizer, model.params());
    let mut rng = rng_from(seed, stream::MRTT);
    let aux = cfg.pathway.aux_loss_weight;
    let mut step = 0;
    let mut epochs = Vec::new();
    for _ in 0..tc.epochs {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(tc.batch_size) {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let opts = forward_options(cfg, true, mix_seed(seed ^ 0x5EED, step as u64));
            let mut finals = Vec::new();
            let mut paths: Vec<Vec<_>> = vec![Vec::new(); model.pathways().len()];
            let mut targets = Vec::new();
            for &w in chunk {
                let win = &windows[w];
                let e = tape.constant(win.features.clone());
                let out = model.forward_sequence(&mut tape, &bound, e, &win.mask, &opts)?;
                let v = win.valid();
                finals.push(tape.slice(out.z_final, 0, 0, v)?);
                if aux > 0.0 {
                    for (k, z) in out.z_paths.iter().enumerate() {
                        paths[k].push(tape.slice(*z, 0, 0, v)?);
                    }
                }
                targets.extend(win.labels[..v].iter().cloned());
            }
            let y = tape.constant(label_matrix(&targets));
            let z = tape.concat(&finals, 0)?;
            let p = tape.sigmoid(z)?;
            let mut loss = bce_multilabel(&mut tape, p, y)?;
            if aux > 0.0 {
                for parts in &paths {
                    let zk = tape.concat(parts, 0)?;
                    let pk = tape.sigmoid(zk)?;
                    let lk = bce_multilabel(&mut tape, pk, y)?;
                    let lk = tape.scale(lk, aux)?;
                    loss = tape.add(loss, lk)?;
                }
            }
            losses.push(tape.value(loss).item());
            let grads = tape.backward(loss)?;
            opt.step(model.params_mut(), &bound, &grads, cosine_lr(&tc.optimizer, step, total));
            step += 1;
        }
        let beta = match forward_options(cfg, false, 0).beta {
            BetaMode::Learned => model.beta(),
            BetaMode::Fixed(b) => b,
        };
        let gamma = if cfg.toggles.gamma_fusion { model.gamma() } else { vec![1.0 / model.pathways().len() as f64; model.pathways().len()] };
        epochs.push(TemporalEpoch { loss: mean(&losses), gamma, beta });
    }
    Ok((model, TemporalLog { strides: cfg.pathway.strides.clone(), epochs }))
}
