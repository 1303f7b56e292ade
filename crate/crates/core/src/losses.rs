//! Training objectives: stage-wise supervised contrastive loss, the hard-pair
//! mix loss with synthetic negatives, multi-label BCE, soft-label distillation
//! and input mixup.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::sampler::{beta_sampler, candidate_pools, PairSet};
use crate::schema::{Components, MultiLabel, TripletVocabulary};

/// Probability clamp applied before logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub tau: f64,
    pub alpha_input: f64,
    pub alpha_feat: f64,
    /// Add the full-batch supervised contrastive loss to the mix loss.
    pub combine_supcon: bool,
    /// Weight of a hard-label BCE term for the student (0 = soft targets only).
    pub hard_label_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { tau: 0.1, alpha_input: 0.4, alpha_feat: 0.4, combine_supcon: false, hard_label_weight: 0.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.alpha_input > 0.0) || !(self.alpha_feat > 0.0) {
            return Err(Error::InvalidConfig("tau and mixup alphas must be positive".into()));
        }
        if self.hard_label_weight < 0.0 {
            return Err(Error::InvalidConfig("hard_label_weight must be non-negative".into()));
        }
        Ok(())
    }
}

fn check_unit_rows(op: &'static str, t: &Tensor) -> Result<()> {
    let (r, _) = t.dims2()?;
    for i in 0..r {
        let n: f64 = t.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::shape(op, format!("row {i} has norm {n}, expected unit norm")));
        }
    }
    Ok(())
}

/// Supervised contrastive loss over a batch at one curriculum stage.
///
/// Positives of anchor `i` are the other samples whose stage-projected label
/// sets equal its own; the denominator runs over every other sample. Anchors
/// without a positive (or with an empty label) are skipped and the result is
/// the mean over the remaining anchors.
pub fn supcon_stage_loss(
    tape: &mut Tape,
    z: Var,
    labels: &[MultiLabel],
    vocab: &TripletVocabulary,
    stage: Components,
    tau: f64,
) -> Result<Var> {
    let zt = tape.value(z).clone();
    let (b, _) = zt.dims2()?;
    if b != labels.len() {
        return Err(Error::shape("supcon_stage_loss", format!("{b} embeddings, {} labels", labels.len())));
    }
    check_unit_rows("supcon_stage_loss", &zt)?;
    let pools = candidate_pools(labels, vocab, stage)?;

    let mut pos_w = vec![0.0; b * b];
    let mut anchor_w = vec![0.0; b];
    let mut valid = 0usize;
    for (i, p) in pools.iter().enumerate() {
        if labels[i].count_active() == 0 {
            continue;
        }
        let pos: Vec<usize> = p.positives.iter().copied().filter(|&j| labels[j].count_active() > 0).collect();
        if pos.is_empty() {
            continue;
        }
        for &j in &pos {
            pos_w[i * b + j] = 1.0 / pos.len() as f64;
        }
        anchor_w[i] = 1.0;
        valid += 1;
    }
    if valid == 0 {
        return Err(Error::EmptyContrastiveBatch);
    }
    anchor_w.iter_mut().for_each(|w| *w /= valid as f64);
    let mut off_diag = vec![1.0; b * b];
    for i in 0..b {
        off_diag[i * b + i] = 0.0;
    }

    let zt_var = tape.transpose(z)?;
    let gram = tape.matmul(z, zt_var)?;
    let logits = tape.scale(gram, 1.0 / tau)?;
    // Shift by the largest possible logit 1/tau so exp never overflows.
    let shift = tape.constant(Tensor::scalar(1.0 / tau));
    let shifted = tape.sub(logits, shift)?;
    let e = tape.exp(shifted)?;
    let mask = tape.constant(Tensor::matrix(b, b, off_diag)?);
    let e = tape.mul(e, mask)?;
    let denom = tape.sum(e, Some(1))?;
    let log_denom = tape.log(denom)?;
    let w = tape.constant(Tensor::matrix(b, b, pos_w)?);
    let pos_terms = tape.mul(shifted, w)?;
    let pos_sum = tape.sum(pos_terms, Some(1))?;
    let per_anchor = tape.sub(log_denom, pos_sum)?;
    let aw = tape.constant(Tensor::matrix(b, 1, anchor_w)?);
    let weighted = tape.mul(per_anchor, aw)?;
    tape.sum(weighted, None)
}

/// `-log softmax(row)[0]` for a 1×n (or g×n) matrix of logits, summed over rows.
fn neg_log_first(tape: &mut Tape, logits: Var) -> Result<Var> {
    let p = tape.softmax(logits)?;
    let first = tape.slice(p, 1, 0, 1)?;
    let lp = tape.log(first)?;
    let s = tape.sum(lp, None)?;
    tape.scale(s, -1.0)
}

/// Mix loss of one anchor with one hard positive and synthetic negatives.
///
/// Synthetic negatives are renormalised to unit length before use. With no
/// synthetic negatives the loss is zero.
pub fn supcon_mix_loss(tape: &mut Tape, anchor: Var, positive: Var, synthetic: &[Var], tau: f64) -> Result<Var> {
    if synthetic.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let normed = synthetic.iter().map(|&v| tape.l2_normalize(v)).collect::<Result<Vec<_>>>()?;
    let negs = tape.concat(&normed, 0)?;
    let at = tape.transpose(anchor)?;
    let neg_sims = tape.matmul(negs, at)?; // S×1
    let neg_row = tape.transpose(neg_sims)?; // 1×S
    let pt = tape.transpose(positive)?;
    let pos_sim = tape.matmul(anchor, pt)?; // 1×1
    let row = tape.concat(&[pos_sim, neg_row], 1)?;
    let logits = tape.scale(row, 1.0 / tau)?;
    neg_log_first(tape, logits)
}

/// One synthetic negative expressed over batch indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixSpec {
    pub first: usize,
    pub second: usize,
    pub lambda: f64,
}

/// Batched mix loss: mean over active anchors of [`supcon_mix_loss`], with
/// synthetic negatives built on the tape from rows of `z` so gradients reach
/// the mixed embeddings. Every anchor must carry either zero or exactly `s`
/// specs.
pub fn supcon_mix_batch(tape: &mut Tape, z: Var, pairs: &PairSet, synth: &[Vec<MixSpec>], tau: f64) -> Result<Var> {
    let (b, _) = tape.value(z).dims2()?;
    let active: Vec<(usize, usize)> = pairs.active().map(|(i, a)| (i, a.positive.unwrap())).collect();
    if active.is_empty() {
        return Err(Error::EmptyContrastiveBatch);
    }
    let s = synth.iter().map(Vec::len).max().unwrap_or(0);
    let group: Vec<(usize, usize)> = active.iter().copied().filter(|&(i, _)| synth[i].len() == s && s > 0).collect();
    if synth.iter().any(|v| !v.is_empty() && v.len() != s) {
        return Err(Error::shape("supcon_mix_batch", "anchors carry different synthetic counts"));
    }
    if group.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let g = group.len();
    let one_hot = |idx: &mut dyn Iterator<Item = usize>| {
        let mut m = vec![0.0; g * b];
        for (r, c) in idx.enumerate() {
            m[r * b + c] = 1.0;
        }
        Tensor::matrix(g, b, m)
    };
    let sel_a = tape.constant(one_hot(&mut group.iter().map(|p| p.0))?);
    let sel_p = tape.constant(one_hot(&mut group.iter().map(|p| p.1))?);
    let za = tape.matmul(sel_a, z)?;
    let zp = tape.matmul(sel_p, z)?;
    let prod = tape.mul(za, zp)?;
    let mut cols = vec![tape.sum(prod, Some(1))?];
    for k in 0..s {
        let mut mix = vec![0.0; g * b];
        for (r, &(i, _)) in group.iter().enumerate() {
            let m = synth[i][k];
            mix[r * b + m.first] += m.lambda;
            mix[r * b + m.second] += 1.0 - m.lambda;
        }
        let mv = tape.constant(Tensor::matrix(g, b, mix)?);
        let v = tape.matmul(mv, z)?;
        let v = tape.l2_normalize(v)?;
        let dots = tape.mul(za, v)?;
        cols.push(tape.sum(dots, Some(1))?);
    }
    let row = tape.concat(&cols, 1)?;
    let logits = tape.scale(row, 1.0 / tau)?;
    let total = neg_log_first(tape, logits)?;
    tape.scale(total, 1.0 / active.len() as f64)
}

/// `-(1/C) Σ_c [y log p + (1-y) log(1-p)]`, averaged over rows; `p` is clamped
/// to `[PROB_EPS, 1-PROB_EPS]`.
pub fn bce_multilabel(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let (ps, ts) = (tape.value(pred).shape().to_vec(), tape.value(target).shape().to_vec());
    if ps != ts {
        return Err(Error::shape("bce_multilabel", format!("pred {ps:?} vs target {ts:?}")));
    }
    let p = tape.clamp(pred, PROB_EPS, 1.0 - PROB_EPS)?;
    let one = tape.constant(Tensor::scalar(1.0));
    let neg_p = tape.scale(p, -1.0)?;
    let q = tape.add(neg_p, one)?;
    let lp = tape.log(p)?;
    let lq = tape.log(q)?;
    let neg_t = tape.scale(target, -1.0)?;
    let one_minus_t = tape.add(neg_t, one)?;
    let a = tape.mul(lp, target)?;
    let b = tape.mul(lq, one_minus_t)?;
    let s = tape.add(a, b)?;
    let m = tape.mean(s, None)?;
    tape.scale(m, -1.0)
}

/// BCE against teacher probabilities; the teacher is a constant, so no
/// gradient reaches it.
pub fn soft_distill_loss(tape: &mut Tape, student_pred: Var, teacher_pred: &Tensor) -> Result<Var> {
    let t = tape.constant(teacher_pred.clone());
    bce_multilabel(tape, student_pred, t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub x: Tensor,
    pub y: Tensor,
    pub lambda: f64,
    /// Mixing partner of every row.
    pub partner: Vec<usize>,
}

/// `x̃ = λ x + (1-λ) x[partner]`, same for `y`. `λ = 1` returns the inputs unchanged.
pub fn mix_with(x: &Tensor, y: &Tensor, partner: &[usize], lambda: f64) -> Result<MixedBatch> {
    let (bx, dx) = x.dims2()?;
    let (by, dy) = y.dims2()?;
    if bx != by || partner.len() != bx {
        return Err(Error::shape("input_mixup", format!("{bx} inputs, {by} targets, {} partners", partner.len())));
    }
    if lambda == 1.0 {
        return Ok(MixedBatch { x: x.clone(), y: y.clone(), lambda, partner: partner.to_vec() });
    }
    let mix = |t: &Tensor, d: usize| {
        let mut out = Vec::with_capacity(t.numel());
        for (i, &j) in partner.iter().enumerate() {
            let (a, b) = (t.row(i), t.row(j));
            out.extend(a.iter().zip(b).map(|(u, v)| lambda * u + (1.0 - lambda) * v));
        }
        Tensor::matrix(partner.len(), d, out)
    };
    Ok(MixedBatch { x: mix(x, dx)?, y: mix(y, dy)?, lambda, partner: partner.to_vec() })
}

/// Input mixup with `λ ~ Beta(alpha, alpha)` and a random permutation of the batch as partners.
pub fn input_mixup(x: &Tensor, y: &Tensor, alpha: f64, rng: &mut ChaCha8Rng) -> Result<MixedBatch> {
    let beta = beta_sampler(alpha)?;
    let (b, _) = x.dims2()?;
    let mut partner: Vec<usize> = (0..b).collect();
    partner.shuffle(rng);
    let lambda = beta.sample(rng);
    mix_with(x, y, &partner, lambda)
}
