//! Progressive hard-pair selection and synthetic hard negatives for one
//! contrastive batch at one curriculum stage.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::schema::{project_to_stage, Components, MultiLabel, TripletVocabulary};

/// Pairwise cosine similarities of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

pub fn cosine_similarity_matrix(features: &Tensor) -> Result<SimilarityMatrix> {
    let (n, _) = features.dims2()?;
    let mut unit: Vec<Vec<f64>> = Vec::with_capacity(n);
    for r in 0..n {
        let row = features.row(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm { op: "cosine_similarity_matrix", row: r });
        }
        unit.push(row.iter().map(|v| v / norm).collect());
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in i + 1..n {
            let s = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0);
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    Ok(SimilarityMatrix { n, values })
}

/// Candidate pools of one anchor; together they partition the other indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CandidatePools {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl CandidatePools {
    pub fn has_positive(&self) -> bool {
        !self.positives.is_empty()
    }
}

pub fn candidate_pools(labels: &[MultiLabel], vocab: &TripletVocabulary, stage: Components) -> Result<Vec<CandidatePools>> {
    let keys = labels
        .iter()
        .map(|l| project_to_stage(l, vocab, stage).map(|s| s.keys))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..labels.len())
        .map(|i| {
            let mut pools = CandidatePools::default();
            for j in (0..labels.len()).filter(|&j| j != i) {
                if keys[i] == keys[j] {
                    pools.positives.push(j);
                } else {
                    pools.negatives.push(j);
                }
            }
            pools
        })
        .collect())
}

/// Hardest members of each candidate pool.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HardPools {
    /// Up to `K` least similar positives.
    pub positives: Vec<usize>,
    /// Up to `N` most similar negatives.
    pub negatives: Vec<usize>,
}

/// Ascending by similarity, ties by ascending index.
fn by_similarity(sim: &SimilarityMatrix, i: usize) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| sim.get(i, a).total_cmp(&sim.get(i, b)).then(a.cmp(&b))
}

pub fn hard_pools(sim: &SimilarityMatrix, pools: &[CandidatePools], k: usize, n: usize) -> Vec<HardPools> {
    pools
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut pos = p.positives.clone();
            pos.sort_by(by_similarity(sim, i));
            pos.truncate(k);
            let mut neg = p.negatives.clone();
            // Descending similarity, ties still by ascending index.
            neg.sort_by(|&a, &b| sim.get(i, b).total_cmp(&sim.get(i, a)).then(a.cmp(&b)));
            neg.truncate(n);
            HardPools { positives: pos, negatives: neg }
        })
        .collect()
}

/// Sampled contrastive pairs of one anchor.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnchorPairs {
    /// `None` marks an inactive anchor (empty hard-positive pool).
    pub positive: Option<usize>,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairSet {
    pub anchors: Vec<AnchorPairs>,
}

impl PairSet {
    pub fn active(&self) -> impl Iterator<Item = (usize, &AnchorPairs)> {
        self.anchors.iter().enumerate().filter(|(_, a)| a.positive.is_some())
    }

    pub fn num_active(&self) -> usize {
        self.active().count()
    }
}

/// Uniform positive from each hard-positive pool and a uniform subset of
/// `min(M, |pool|)` hard negatives drawn without replacement.
pub fn sample_pairs(hard: &[HardPools], m: usize, rng: &mut ChaCha8Rng) -> PairSet {
    let anchors = hard
        .iter()
        .map(|h| {
            if h.positives.is_empty() {
                return AnchorPairs::default();
            }
            let positive = Some(h.positives[rng.random_range(0..h.positives.len())]);
            let take = m.min(h.negatives.len());
            let negatives = sample(rng, h.negatives.len(), take).into_iter().map(|k| h.negatives[k]).collect();
            AnchorPairs { positive, negatives }
        })
        .collect();
    PairSet { anchors }
}

/// One synthetic hard negative `λ v_a + (1-λ) v_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticNegative {
    /// Positions of the two mixed partners within the input list.
    pub first: usize,
    pub second: usize,
    pub lambda: f64,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Synthesis {
    pub negatives: Vec<SyntheticNegative>,
    /// Set when fewer than two negatives were available and nothing was generated.
    pub insufficient: bool,
}

pub fn beta_sampler(alpha: f64) -> Result<Beta<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("Beta parameter must be positive, got {alpha}")));
    }
    Beta::new(alpha, alpha).map_err(|e| Error::InvalidConfig(e.to_string()))
}

/// Mixes pairs of distinct negatives with `λ ~ Beta(alpha, alpha)`.
pub fn synthesize_negatives(neg_vectors: &[&[f64]], s: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Result<Synthesis> {
    let beta = beta_sampler(alpha)?;
    if neg_vectors.len() < 2 {
        return Ok(Synthesis { negatives: vec![], insufficient: true });
    }
    let d = neg_vectors[0].len();
    if neg_vectors.iter().any(|v| v.len() != d) {
        return Err(Error::shape("synthesize_negatives", "negatives have different dimensions"));
    }
    let negatives = (0..s)
        .map(|_| {
            let pick = sample(rng, neg_vectors.len(), 2);
            let (first, second) = (pick.index(0), pick.index(1));
            let lambda = beta.sample(rng);
            let vector = mix_vectors(neg_vectors[first], neg_vectors[second], lambda);
            SyntheticNegative { first, second, lambda, vector }
        })
        .collect();
    Ok(Synthesis { negatives, insufficient: false })
}

pub fn mix_vectors(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect()
}

/// Caps for hard-pair sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerCaps {
    /// Hard positives kept per anchor.
    pub k: usize,
    /// Hard negatives kept per anchor.
    pub n: usize,
    /// Negatives sampled from the hard pool.
    pub m: usize,
    /// Synthetic negatives per anchor.
    pub s: usize,
}

impl Default for SamplerCaps {
    fn default() -> Self {
        Self { k: 8, n: 32, m: 8, s: 4 }
    }
}

impl SamplerCaps {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n == 0 || self.m == 0 {
            return Err(Error::InvalidConfig("sampler caps K, N, M must be at least 1".into()));
        }
        Ok(())
    }
}
