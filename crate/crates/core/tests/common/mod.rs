//! Independent oracles and random instance builders shared by the
//! integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::time::Instant;

use curconmix::autodiff::{check_gradients, Tape, Tensor, Var};
use curconmix::losses::{bce_multilabel, soft_distill_loss, supcon_mix_batch, supcon_mix_loss, supcon_stage_loss, MixSpec};
use curconmix::mrtt::{ForwardOptions, Mrtt, MrttConfig, PathwayConfig};
use curconmix::nn::Bound;
use curconmix::sampler::{AnchorPairs, PairSet};
use curconmix::schema::{Components, MultiLabel, TripletVocabulary};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const STAGES: [Components; 7] =
    [Components::I, Components::V, Components::T, Components::IV, Components::IT, Components::VT, Components::IVT];

/// Random vocabulary with 1..=4 entries per component and a random non-empty triplet subset.
pub fn random_vocab(rng: &mut ChaCha8Rng) -> TripletVocabulary {
    let (ni, nv, nt) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
    let mut all = Vec::new();
    for i in 0..ni {
        for v in 0..nv {
            for t in 0..nt {
                all.push([i, v, t]);
            }
        }
    }
    all.shuffle(rng);
    let c = rng.random_range(1..=all.len());
    all.truncate(c);
    TripletVocabulary::synthetic(ni, nv, nt, all).unwrap()
}

/// Label with 0..=max_active active classes.
pub fn random_label(rng: &mut ChaCha8Rng, c: usize, max_active: usize) -> MultiLabel {
    let k = rng.random_range(0..=max_active.min(c));
    let mut idx: Vec<usize> = (0..c).collect();
    idx.shuffle(rng);
    MultiLabel::from_active(c, &idx[..k])
}

/// Labels drawn from a small pool so batches contain repeats.
pub fn random_batch_labels(rng: &mut ChaCha8Rng, vocab: &TripletVocabulary, b: usize) -> Vec<MultiLabel> {
    let c = vocab.num_classes();
    let pool: Vec<MultiLabel> = (0..rng.random_range(1..=4)).map(|_| random_label(rng, c, 2)).collect();
    (0..b).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect()
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Stage key of a triplet as a plain tuple, with `usize::MAX` for dropped components.
pub fn stage_tuple(vocab: &TripletVocabulary, class: usize, stage: Components) -> (usize, usize, usize) {
    let t = vocab.triplet(class);
    let keep = |on: bool, v: usize| if on { v } else { usize::MAX };
    (keep(stage.has_instrument(), t.instrument), keep(stage.has_verb(), t.verb), keep(stage.has_target(), t.target))
}

pub fn stage_set(vocab: &TripletVocabulary, label: &MultiLabel, stage: Components) -> BTreeSet<(usize, usize, usize)> {
    label.bits().iter().enumerate().filter(|(_, b)| **b).map(|(c, _)| stage_tuple(vocab, c, stage)).collect()
}

/// `(positives, negatives)` of anchor `i` by direct comparison of stage sets.
pub fn brute_candidates(labels: &[MultiLabel], vocab: &TripletVocabulary, stage: Components, i: usize) -> (Vec<usize>, Vec<usize>) {
    let mine = stage_set(vocab, &labels[i], stage);
    let (mut pos, mut neg) = (vec![], vec![]);
    for (j, l) in labels.iter().enumerate() {
        if j == i {
            continue;
        }
        if stage_set(vocab, l, stage) == mine {
            pos.push(j);
        } else {
            neg.push(j);
        }
    }
    (pos, neg)
}

/// Members of `pool` whose rank under "(similarity, index)" ascending
/// (or descending similarity when `hardest_high`) is below `cap`, counted pairwise.
pub fn brute_top(sim: &dyn Fn(usize) -> f64, pool: &[usize], cap: usize, hardest_high: bool) -> BTreeSet<usize> {
    pool.iter()
        .copied()
        .filter(|&a| {
            let before = pool
                .iter()
                .filter(|&&b| {
                    let (sa, sb) = (sim(a), sim(b));
                    let better = if hardest_high { sb > sa } else { sb < sa };
                    better || (sb == sa && b < a)
                })
                .count();
            before < cap
        })
        .collect()
}

/// AP by counting: for each positive, precision over every frame scoring at
/// least as high. Tied frames share one rank block.
pub fn ap_oracle(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let p = labels.iter().filter(|&&b| b).count();
    if p == 0 {
        return None;
    }
    let mut total = 0.0;
    for i in (0..scores.len()).filter(|&i| labels[i]) {
        let at_least: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] >= scores[i]).collect();
        let hits = at_least.iter().filter(|&&j| labels[j]).count();
        total += hits as f64 / at_least.len() as f64;
    }
    Some(total / p as f64)
}

/// Group scores (max) and labels (OR) of a family, with groups in sorted key order.
pub fn family_oracle(
    scores: &Tensor,
    labels: &[MultiLabel],
    vocab: &TripletVocabulary,
    family: Components,
) -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
    let c = vocab.num_classes();
    // Triplet classes keep vocabulary order; coarser groups are listed by key.
    let keys: Vec<_> = if family == Components::IVT {
        (0..c).map(|k| stage_tuple(vocab, k, family)).collect()
    } else {
        let set: BTreeSet<_> = (0..c).map(|k| stage_tuple(vocab, k, family)).collect();
        set.into_iter().collect()
    };
    let n = labels.len();
    let mut s = vec![vec![f64::NEG_INFINITY; n]; keys.len()];
    let mut l = vec![vec![false; n]; keys.len()];
    for (g, key) in keys.iter().enumerate() {
        for k in (0..c).filter(|&k| stage_tuple(vocab, k, family) == *key) {
            for f in 0..n {
                s[g][f] = s[g][f].max(scores.row(f)[k]);
                l[g][f] |= labels[f].bits()[k];
            }
        }
    }
    (s, l)
}

pub fn tiny_mrtt_config(strides: Vec<usize>) -> MrttConfig {
    MrttConfig {
        input_dim: 4,
        num_classes: 3,
        pathway: PathwayConfig { strides, layers: 1, heads: 2, ff_dim: 6, dropout: 0.0, aux_loss_weight: 0.0 },
    }
}

#[derive(Debug, Clone)]
pub struct GradSuite {
    pub instances: usize,
    pub failures: Vec<String>,
    pub max_rel: f64,
    pub seconds: f64,
}

fn normalized(tape: &mut Tape, v: Var) -> curconmix::Result<Var> {
    tape.l2_normalize(v)
}

/// `n` gradient checks cycling through every differentiable loss and the
/// full temporal forward pass.
pub fn gradient_suite(n: usize, seed: u64) -> GradSuite {
    let start = Instant::now();
    let mut r = rng(seed);
    let mut failures = Vec::new();
    let mut max_rel: f64 = 0.0;
    const STEP: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    for inst in 0..n {
        let kind = inst % 6;
        let report = match kind {
            0 => {
                let vocab = random_vocab(&mut r);
                let b = r.random_range(3..=8);
                let mut labels = random_batch_labels(&mut r, &vocab, b);
                let c = vocab.num_classes();
                labels[1] = labels[0].clone();
                if labels[0].count_active() == 0 {
                    labels[0] = MultiLabel::from_active(c, &[0]);
                    labels[1] = labels[0].clone();
                }
                let stage = STAGES[r.random_range(0..STAGES.len())];
                let tau = r.random_range(0.1..1.0);
                let d = r.random_range(2..=5);
                let f = gaussian(&mut r, b, d, 1.0);
                check_gradients(
                    |t, v| {
                        let z = normalized(t, v[0])?;
                        supcon_stage_loss(t, z, &labels, &vocab, stage, tau)
                    },
                    &[f],
                    STEP,
                    TOL,
                )
            }
            1 => {
                let d = r.random_range(2..=5);
                let s = r.random_range(1..=4);
                let tau = r.random_range(0.1..1.0);
                let mut pts = vec![gaussian(&mut r, 1, d, 1.0), gaussian(&mut r, 1, d, 1.0)];
                pts.extend((0..s).map(|_| gaussian(&mut r, 1, d, 1.0)));
                check_gradients(
                    |t, v| {
                        let a = normalized(t, v[0])?;
                        let p = normalized(t, v[1])?;
                        supcon_mix_loss(t, a, p, &v[2..], tau)
                    },
                    &pts,
                    STEP,
                    TOL,
                )
            }
            2 => {
                let b = r.random_range(4..=7);
                let d = r.random_range(2..=4);
                let s = r.random_range(1..=3);
                let tau = r.random_range(0.1..1.0);
                let mut anchors = Vec::new();
                let mut specs = Vec::new();
                for i in 0..b {
                    if r.random_bool(0.3) && i > 0 {
                        anchors.push(AnchorPairs::default());
                        specs.push(vec![]);
                        continue;
                    }
                    let others: Vec<usize> = (0..b).filter(|&j| j != i).collect();
                    let pos = others[r.random_range(0..others.len())];
                    anchors.push(AnchorPairs { positive: Some(pos), negatives: vec![] });
                    specs.push(
                        (0..s)
                            .map(|_| {
                                let mut pick = others.clone();
                                pick.shuffle(&mut r);
                                MixSpec { first: pick[0], second: pick[1], lambda: r.random_range(0.05..0.95) }
                            })
                            .collect(),
                    );
                }
                let pairs = PairSet { anchors };
                let f = gaussian(&mut r, b, d, 1.0);
                check_gradients(
                    |t, v| {
                        let z = normalized(t, v[0])?;
                        supcon_mix_batch(t, z, &pairs, &specs, tau)
                    },
                    &[f],
                    STEP,
                    TOL,
                )
            }
            3 => {
                let (b, c) = (r.random_range(1..=5), r.random_range(1..=5));
                let logits = gaussian(&mut r, b, c, 3.0);
                let y = Tensor::matrix(b, c, (0..b * c).map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 }).collect())
                    .unwrap();
                check_gradients(
                    |t, v| {
                        let p = t.sigmoid(v[0])?;
                        let yt = t.constant(y.clone());
                        bce_multilabel(t, p, yt)
                    },
                    &[logits],
                    STEP,
                    TOL,
                )
            }
            4 => {
                let (b, c) = (r.random_range(1..=5), r.random_range(1..=5));
                let logits = gaussian(&mut r, b, c, 3.0);
                let teacher = Tensor::matrix(b, c, (0..b * c).map(|_| r.random_range(0.01..0.99)).collect()).unwrap();
                check_gradients(
                    |t, v| {
                        let p = t.sigmoid(v[0])?;
                        soft_distill_loss(t, p, &teacher)
                    },
                    &[logits],
                    STEP,
                    TOL,
                )
            }
            _ => {
                let strides = [vec![2, 3], vec![4, 5, 6], vec![1, 2], vec![3]][r.random_range(0..4)].clone();
                let m = Mrtt::new(tiny_mrtt_config(strides.clone()), r.random()).unwrap();
                let max = *strides.iter().max().unwrap();
                let len = r.random_range(max..=max + 4);
                let valid = r.random_range(1..=len);
                let mask: Vec<bool> = (0..len).map(|i| i < valid).collect();
                let mut pts = vec![gaussian(&mut r, len, 4, 1.0)];
                pts.extend(m.params().tensors().iter().map(|t| {
                    let data = t.data().iter().map(|v| v + 0.2 * (r.random::<f64>() - 0.5)).collect();
                    Tensor::new(t.shape().to_vec(), data).unwrap()
                }));
                check_gradients(
                    |t, v| {
                        let bound = Bound::from_vars(v[1..].to_vec());
                        let out = m.forward_sequence(t, &bound, v[0], &mask, &ForwardOptions::eval())?;
                        t.mean(out.z_final, None)
                    },
                    &pts,
                    STEP,
                    TOL,
                )
            }
        };
        match report {
            Ok(rep) => {
                max_rel = max_rel.max(rep.max_rel);
                if !rep.passed {
                    failures.push(format!("instance {inst} (kind {kind}): rel {:.3e}", rep.max_rel));
                }
            }
            Err(e) => failures.push(format!("instance {inst} (kind {kind}): {e}")),
        }
    }
    GradSuite { instances: n, failures, max_rel, seconds: start.elapsed().as_secs_f64() }
}

/// Compares candidate pools, hard pools and cap clamping against the
/// brute-force definitions over `batches` random batches of size ≤ 16.
pub fn sampler_oracle(batches: usize, seed: u64) -> Vec<String> {
    use curconmix::sampler::{candidate_pools, cosine_similarity_matrix, hard_pools};
    let mut r = rng(seed);
    let mut failures = Vec::new();
    for batch in 0..batches {
        let vocab = random_vocab(&mut r);
        let b = r.random_range(1..=16);
        let labels = random_batch_labels(&mut r, &vocab, b);
        let stage = STAGES[r.random_range(0..STAGES.len())];
        // Rows drawn from a small pool so that exact similarity ties occur.
        let d = r.random_range(2..=4);
        let pool = gaussian(&mut r, 4, d, 1.0);
        let rows: Vec<f64> = (0..b).flat_map(|_| pool.row(r.random_range(0..4)).to_vec()).collect();
        let feats = Tensor::matrix(b, d, rows).unwrap();
        let (k, n) = (r.random_range(1..=6), r.random_range(1..=10));
        let pools = candidate_pools(&labels, &vocab, stage).unwrap();
        let sim = cosine_similarity_matrix(&feats).unwrap();
        let hard = hard_pools(&sim, &pools, k, n);
        for i in 0..b {
            let (pos, neg) = brute_candidates(&labels, &vocab, stage, i);
            if pools[i].positives != pos || pools[i].negatives != neg {
                failures.push(format!("batch {batch} anchor {i}: candidate pools differ"));
                continue;
            }
            for j in 0..b {
                let (a, c) = (feats.row(i), feats.row(j));
                let dot: f64 = a.iter().zip(c).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nc: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
                if (dot / (na * nc) - sim.get(i, j)).abs() > 1e-12 {
                    failures.push(format!("batch {batch}: cosine ({i}, {j}) differs"));
                }
            }
            let s = |j: usize| sim.get(i, j);
            let want_pos = brute_top(&s, &pos, k, false);
            let want_neg = brute_top(&s, &neg, n, true);
            let got_pos: BTreeSet<usize> = hard[i].positives.iter().copied().collect();
            let got_neg: BTreeSet<usize> = hard[i].negatives.iter().copied().collect();
            if got_pos != want_pos || got_neg != want_neg {
                failures.push(format!("batch {batch} anchor {i}: hard pools differ"));
            }
            if hard[i].positives.len() != k.min(pos.len()) || hard[i].negatives.len() != n.min(neg.len()) {
                failures.push(format!("batch {batch} anchor {i}: caps not clamped"));
            }
        }
    }
    failures
}

/// Draws `draws` pair sets from fixed hard pools and returns the largest
/// deviation, in binomial standard deviations, of any selection count.
pub fn sampler_uniformity(draws: usize, seed: u64) -> f64 {
    use curconmix::sampler::{sample_pairs, HardPools};
    let hard = vec![HardPools { positives: vec![3, 7, 9, 11], negatives: (20..32).collect() }];
    let m = 4;
    let mut pos_counts = [0usize; 4];
    let mut neg_counts = [0usize; 12];
    let mut r = rng(seed);
    for _ in 0..draws {
        let p = sample_pairs(&hard, m, &mut r);
        let a = &p.anchors[0];
        let pos = a.positive.unwrap();
        pos_counts[hard[0].positives.iter().position(|&x| x == pos).unwrap()] += 1;
        for &j in &a.negatives {
            neg_counts[j - 20] += 1;
        }
    }
    let z = |count: usize, p: f64| {
        let n = draws as f64;
        (count as f64 - n * p).abs() / (n * p * (1.0 - p)).sqrt()
    };
    let zp = pos_counts.iter().map(|&c| z(c, 1.0 / 4.0));
    let zn = neg_counts.iter().map(|&c| z(c, m as f64 / 12.0));
    zp.chain(zn).fold(0.0, f64::max)
}

/// Checks IVT-equal ⇒ IT-equal ⇒ T-equal over `pairs` random label pairs.
/// Half the pairs are built IVT-equal so the premise is exercised.
pub fn coarsening_violations(pairs: usize, seed: u64) -> usize {
    use curconmix::schema::stage_equal;
    let mut r = rng(seed);
    let mut bad = 0;
    for k in 0..pairs {
        let vocab = random_vocab(&mut r);
        let c = vocab.num_classes();
        let a = random_label(&mut r, c, 3);
        let b = if k % 2 == 0 { a.clone() } else { random_label(&mut r, c, 3) };
        let eq = |s| stage_equal(&a, &b, &vocab, s).unwrap();
        let (s3, s2, s1) = (eq(Components::IVT), eq(Components::IT), eq(Components::T));
        if (s3 && !s2) || (s2 && !s1) {
            bad += 1;
        }
    }
    bad
}

/// Plain-loop supervised contrastive loss on unit rows; `None` when no anchor has a positive.
pub fn supcon_oracle(z: &Tensor, labels: &[MultiLabel], vocab: &TripletVocabulary, stage: Components, tau: f64) -> Option<f64> {
    let b = labels.len();
    let dot = |i: usize, j: usize| z.row(i).iter().zip(z.row(j)).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    let mut valid = 0;
    for i in 0..b {
        if labels[i].count_active() == 0 {
            continue;
        }
        let (pos, _) = brute_candidates(labels, vocab, stage, i);
        if pos.is_empty() {
            continue;
        }
        let denom: f64 = (0..b).filter(|&a| a != i).map(|a| (dot(i, a) / tau).exp()).sum();
        let li: f64 = pos.iter().map(|&p| -((dot(i, p) / tau).exp() / denom).ln()).sum::<f64>() / pos.len() as f64;
        total += li;
        valid += 1;
    }
    (valid > 0).then(|| total / valid as f64)
}

/// `(supcon on two identical samples, symmetric two-way mix loss, BCE at uniform 0.5)`.
pub fn loss_identities() -> (f64, f64, f64) {
    let vocab = TripletVocabulary::synthetic(1, 1, 2, vec![[0, 0, 0], [0, 0, 1]]).unwrap();
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::matrix(2, 2, vec![0.6, 0.8, 0.6, 0.8]).unwrap());
    let labels = vec![MultiLabel::from_active(2, &[1]); 2];
    let l = supcon_stage_loss(&mut tape, z, &labels, &vocab, Components::IVT, 0.1).unwrap();
    let supcon = tape.value(l).item();

    let a = tape.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
    let p = tape.constant(Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap());
    let n = tape.constant(Tensor::matrix(1, 2, vec![0.0, -1.0]).unwrap());
    let l = supcon_mix_loss(&mut tape, a, p, &[n], 0.1).unwrap();
    let mix = tape.value(l).item();

    let pred = tape.constant(Tensor::full(&[3, 4], 0.5));
    let y = tape.constant(Tensor::matrix(3, 4, (0..12).map(|i| (i % 3 == 0) as u8 as f64).collect()).unwrap());
    let l = bce_multilabel(&mut tape, pred, y).unwrap();
    (supcon, mix, tape.value(l).item())
}

/// Largest gap between the library's per-class AP in every family and the
/// counting oracle over `sets` random prediction sets, plus the number of
/// defined-AP mismatches (one side `None`, the other not).
pub fn metrics_oracle(sets: usize, seed: u64) -> (f64, usize) {
    use curconmix::metrics::evaluate;
    let mut r = rng(seed);
    let (mut worst, mut mismatches) = (0.0f64, 0);
    for _ in 0..sets {
        let vocab = random_vocab(&mut r);
        let c = vocab.num_classes();
        let n = r.random_range(1..=40);
        let levels = r.random_range(2..=6);
        let tied = r.random_bool(0.5);
        let data = (0..n * c)
            .map(|_| if tied { r.random_range(0..levels) as f64 / levels as f64 } else { r.random::<f64>() })
            .collect();
        let scores = Tensor::matrix(n, c, data).unwrap();
        let labels: Vec<MultiLabel> = (0..n).map(|_| random_label(&mut r, c, 2)).collect();
        let report = evaluate(&scores, &labels, &vocab).unwrap();
        for fam in Components::FAMILIES {
            let (gs, gl) = family_oracle(&scores, &labels, &vocab, fam);
            let got = &report.family(fam).unwrap().classes;
            if got.len() != gs.len() {
                mismatches += 1;
                continue;
            }
            let mut defined = Vec::new();
            for (g, cls) in got.iter().enumerate() {
                match (ap_oracle(&gs[g], &gl[g]), cls.ap) {
                    (Some(a), Some(b)) => {
                        worst = worst.max((a - b).abs());
                        defined.push(a);
                    }
                    (None, None) => {}
                    _ => mismatches += 1,
                }
            }
            let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
            match (mean, report.mean(fam)) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => mismatches += 1,
            }
        }
    }
    (worst, mismatches)
}

/// Every defined AP when the labels themselves are used as scores.
pub fn perfect_prediction_aps(seed: u64) -> Vec<f64> {
    use curconmix::metrics::evaluate;
    let mut r = rng(seed);
    let mut out = Vec::new();
    for _ in 0..20 {
        let vocab = random_vocab(&mut r);
        let c = vocab.num_classes();
        let n = r.random_range(1..=30);
        let labels: Vec<MultiLabel> = (0..n).map(|_| random_label(&mut r, c, 2)).collect();
        let scores = Tensor::matrix(n, c, labels.iter().flat_map(|l| l.as_f64()).collect()).unwrap();
        let report = evaluate(&scores, &labels, &vocab).unwrap();
        out.extend(report.families.iter().flat_map(|f| f.classes.iter().filter_map(|c| c.ap)));
    }
    out
}

/// Shape-contract violations of the temporal model with strides {4, 5, 6}
/// over every window length 6..=64 (masked tails included).
pub fn mrtt_shape_violations(seed: u64) -> Vec<String> {
    use curconmix::error::Error;
    let mut r = rng(seed);
    let m = Mrtt::new(tiny_mrtt_config(vec![4, 5, 6]), seed).unwrap();
    let mut bad = Vec::new();
    for t in 1..=64usize {
        let valid = r.random_range(1..=t);
        let mask: Vec<bool> = (0..t).map(|i| i < valid).collect();
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, false);
        let x = tape.constant(gaussian(&mut r, t, 4, 1.0));
        let out = m.forward_sequence(&mut tape, &bound, x, &mask, &ForwardOptions::eval());
        if t < 6 {
            if !matches!(out, Err(Error::SequenceTooShort { .. })) {
                bad.push(format!("T={t}: short window accepted"));
            }
            continue;
        }
        let out = match out {
            Ok(o) => o,
            Err(e) => {
                bad.push(format!("T={t}: {e}"));
                continue;
            }
        };
        for (name, v) in [("final", out.z_final), ("spat", out.z_spat), ("temp", out.z_temp)]
            .into_iter()
            .chain(out.z_paths.iter().map(|&p| ("path", p)))
        {
            if tape.value(v).shape() != [t, 3] || !tape.value(v).all_finite() {
                bad.push(format!("T={t}: {name} has shape {:?}", tape.value(v).shape()));
            }
        }
        for k in [4, 5, 6] {
            let p = tape.masked_mean_pool(x, k, &mask).unwrap();
            if tape.value(p).shape() != [t.div_ceil(k), 4] {
                bad.push(format!("T={t} k={k}: pooled shape {:?}", tape.value(p).shape()));
            }
        }
    }
    bad
}

/// Windows 6..=64 and strides {4, 5, 6} for which pooling then upsampling a
/// constant sequence does not return it bit for bit.
pub fn constant_passthrough_violations() -> Vec<(usize, usize)> {
    let mut bad = Vec::new();
    for t in 6..=64usize {
        for k in [4, 5, 6] {
            for valid in [t, t - t / 3] {
                let mask: Vec<bool> = (0..t).map(|i| i < valid).collect();
                let c = Tensor::matrix(t, 3, [0.37, -1.9, 1.0 / 3.0].repeat(t)).unwrap();
                let mut tape = Tape::new();
                let x = tape.constant(c.clone());
                let p = tape.masked_mean_pool(x, k, &mask).unwrap();
                let u = tape.upsample(p, t).unwrap();
                if tape.value(u) != &c {
                    bad.push((t, k));
                }
            }
        }
    }
    bad
}

/// Whether `gamma` is on the probability simplex and `beta` strictly inside (0, 1).
pub fn fusion_weights_valid(gamma: &[f64], beta: f64) -> bool {
    gamma.iter().all(|&g| (0.0..=1.0).contains(&g)) && (gamma.iter().sum::<f64>() - 1.0).abs() <= 1e-12 && beta > 0.0 && beta < 1.0
}

pub const SMALL_CONFIG: &str = r#"
seed = 3
[data]
episodes = 12
episode_len = 32
[pretrain]
batch_size = 32
[distill]
teacher_epochs = 2
student_epochs = 2
[temporal]
epochs = 2
window = 16
hop = 8
"#;

/// Desk preset shrunk so that a full run takes about a second.
pub fn small_config() -> curconmix::pipeline::RunConfig {
    curconmix::pipeline::RunConfig::from_toml_str(SMALL_CONFIG).unwrap()
}

/// Relative path → bytes of every file under `root`.
pub fn tree_bytes(root: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(base: &std::path::Path, dir: &std::path::Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(root, root, &mut out);
    out
}
