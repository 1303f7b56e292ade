//! Seeded synthetic episodes with long-tailed, multi-label, compositional
//! triplet labels, plus the binary dataset file format.
//!
//! Every instrument and target owns a random unit direction; a frame is the
//! sum of its active triplets' instrument and target directions plus Gaussian
//! noise. Triplets whose (instrument, target) pair is shared by several active
//! verbs also carry a verb modulation over `n_V` random axes: on the verb's
//! own axis the sign flips every frame, on the other axes it stays fixed for
//! the whole segment. Single frames of such triplets have the same marginal
//! for every verb; averaging a few frames reveals which axis is oscillating.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::rng_from;
use crate::schema::{MultiLabel, TripletVocabulary};

pub const DATASET_MAGIC: &[u8; 8] = b"CCMXDATA";
pub const DATASET_VERSION: u32 = 1;
/// Most triplets a frame can carry.
pub const MAX_CONCURRENT: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_instruments: usize,
    pub n_verbs: usize,
    pub n_targets: usize,
    pub num_triplets: usize,
    pub obs_dim: usize,
    pub noise: f64,
    /// Zipf exponent over triplet classes (class 0 is the head).
    pub zipf: f64,
    pub episodes: usize,
    pub episode_len: usize,
    /// Probability that a segment carries a second concurrent triplet.
    pub multi_label_rate: f64,
    /// Mean segment length in frames.
    pub dwell: f64,
    /// Amplitude of the verb modulation on each axis.
    pub modulation: f64,
    /// Fraction of episodes held out for validation.
    pub val_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SyntheticConfig {
    pub fn desk() -> Self {
        Self {
            n_instruments: 3,
            n_verbs: 3,
            n_targets: 4,
            num_triplets: 12,
            obs_dim: 32,
            noise: 0.3,
            zipf: 1.2,
            episodes: 64,
            episode_len: 64,
            multi_label_rate: 0.2,
            dwell: 8.0,
            modulation: 1.0,
            val_fraction: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_instruments == 0 || self.n_verbs == 0 || self.n_targets == 0 || self.obs_dim == 0 {
            return bad("component counts and observation dim must be positive");
        }
        if self.num_triplets == 0 || self.num_triplets > self.n_instruments * self.n_verbs * self.n_targets {
            return bad("num_triplets must be in 1..=n_I·n_V·n_T");
        }
        if !(self.noise >= 0.0) || !(self.zipf >= 0.0) || !(self.modulation >= 0.0) {
            return bad("noise, zipf and modulation must be non-negative");
        }
        if !(self.dwell >= 1.0) {
            return bad("dwell must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.multi_label_rate) || !(0.0..1.0).contains(&self.val_fraction) {
            return bad("multi_label_rate must be in [0,1] and val_fraction in [0,1)");
        }
        if self.episodes == 0 || self.episode_len == 0 {
            return bad("episodes and episode_len must be positive");
        }
        if self.num_train_episodes() == 0 {
            return bad("no training episodes left after the validation split");
        }
        Ok(())
    }

    pub fn num_train_episodes(&self) -> usize {
        self.episodes - (self.episodes as f64 * self.val_fraction).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// T×D observations.
    pub obs: Tensor,
    pub labels: Vec<MultiLabel>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(Error::InvalidConfig(format!("unknown split `{s}` (expected train or val)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeDataset {
    pub config: SyntheticConfig,
    pub seed: u64,
    pub vocab: TripletVocabulary,
    pub episodes: Vec<Episode>,
    /// Episodes `[0, num_train)` form the training split, the rest validation.
    pub num_train: usize,
}

impl EpisodeDataset {
    pub fn split(&self, split: Split) -> &[Episode] {
        match split {
            Split::Train => &self.episodes[..self.num_train],
            Split::Val => &self.episodes[self.num_train..],
        }
    }

    /// All frames of a split stacked into one N×D matrix with their labels.
    pub fn frames(&self, split: Split) -> (Tensor, Vec<MultiLabel>) {
        let eps = self.split(split);
        let d = self.config.obs_dim;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for e in eps {
            data.extend_from_slice(e.obs.data());
            labels.extend(e.labels.iter().cloned());
        }
        (Tensor::matrix(labels.len(), d, data).expect("consistent frame widths"), labels)
    }

    pub fn num_frames(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }
}

/// `count` random unit directions, mutually orthogonal while `count ≤ d`
/// (Gram-Schmidt on Gaussian draws); beyond `d` they are merely random.
fn orthonormal_directions(rng: &mut ChaCha8Rng, count: usize, d: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if out.len() < d {
            for u in &out {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            out.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    out
}

/// Active triplets: a seeded random subset of all (instrument, verb, target) combinations.
fn choose_triplets(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<[usize; 3]> {
    let mut all = Vec::new();
    for i in 0..cfg.n_instruments {
        for v in 0..cfg.n_verbs {
            for t in 0..cfg.n_targets {
                all.push([i, v, t]);
            }
        }
    }
    all.shuffle(rng);
    all.truncate(cfg.num_triplets);
    all
}

/// Zipf weights `1/(c+1)^ρ`, normalised.
pub fn zipf_weights(classes: usize, rho: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..classes).map(|c| (c as f64 + 1.0).powf(-rho)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

fn draw_class(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

#[derive(Debug, Clone)]
struct Segment {
    len: usize,
    classes: Vec<usize>,
}

fn plan_episode(cfg: &SyntheticConfig, cdf: &[f64], rng: &mut ChaCha8Rng) -> Vec<Segment> {
    let p = 1.0 / cfg.dwell;
    let mut segs = Vec::new();
    let mut used = 0;
    while used < cfg.episode_len {
        let mut len = 1;
        while rng.random::<f64>() >= p {
            len += 1;
        }
        let len = len.min(cfg.episode_len - used);
        let first = draw_class(cdf, rng);
        let mut classes = vec![first];
        if cfg.num_triplets > 1 && rng.random::<f64>() < cfg.multi_label_rate {
            loop {
                let c = draw_class(cdf, rng);
                if c != first {
                    classes.push(c);
                    break;
                }
            }
        }
        segs.push(Segment { len, classes });
        used += len;
    }
    segs
}

/// Generates a dataset; identical `(config, seed)` gives identical output.
pub fn generate_dataset(config: &SyntheticConfig, seed: u64) -> Result<EpisodeDataset> {
    config.validate()?;
    let cfg = config;
    let d = cfg.obs_dim;
    let mut rng = rng_from(seed, 0xDA7A);
    let triplets = choose_triplets(cfg, &mut rng);
    let vocab = TripletVocabulary::synthetic(cfg.n_instruments, cfg.n_verbs, cfg.n_targets, triplets.clone())?;
    let mut dirs = orthonormal_directions(&mut rng, cfg.n_instruments + cfg.n_targets + cfg.n_verbs, d);
    let mod_axes = dirs.split_off(cfg.n_instruments + cfg.n_targets);
    let targ_dirs = dirs.split_off(cfg.n_instruments);
    let inst_dirs = dirs;

    let mut verbs_per_pair: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for t in &triplets {
        verbs_per_pair.entry((t[0], t[2])).or_default().insert(t[1]);
    }
    let modulated: Vec<bool> = triplets.iter().map(|t| verbs_per_pair[&(t[0], t[2])].len() > 1).collect();

    let weights = zipf_weights(cfg.num_triplets, cfg.zipf);
    let cdf: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let mut plans: Vec<Vec<Segment>> = (0..cfg.episodes).map(|_| plan_episode(cfg, &cdf, &mut rng)).collect();

    // Every class must appear in the training split: overwrite the primary
    // triplet of random training segments with any missing class.
    let num_train = cfg.num_train_episodes();
    let present: BTreeSet<usize> =
        plans[..num_train].iter().flatten().flat_map(|s| s.classes.iter().copied()).collect();
    let missing: Vec<usize> = (0..cfg.num_triplets).filter(|c| !present.contains(c)).collect();
    let mut slots: Vec<(usize, usize)> =
        plans[..num_train].iter().enumerate().flat_map(|(e, p)| (0..p.len()).map(move |s| (e, s))).collect();
    slots.shuffle(&mut rng);
    let mut slot_iter = slots.into_iter();
    for c in missing {
        loop {
            let (e, s) = slot_iter.next().ok_or_else(|| {
                Error::InvalidConfig("too few training segments to cover every triplet".into())
            })?;
            let seg = &mut plans[e][s];
            if seg.classes.len() == 1 || seg.classes[1] != c {
                seg.classes[0] = c;
                break;
            }
        }
    }

    let mut episodes = Vec::with_capacity(cfg.episodes);
    for plan in &plans {
        let mut obs = Vec::with_capacity(cfg.episode_len * d);
        let mut labels = Vec::with_capacity(cfg.episode_len);
        for seg in plan {
            // Per-segment modulation state of each concurrent triplet: fixed
            // signs for every axis and a starting phase for the oscillating one.
            let states: Vec<(Vec<f64>, f64)> = seg
                .classes
                .iter()
                .map(|_| {
                    let signs = (0..cfg.n_verbs).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
                    let phase = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    (signs, phase)
                })
                .collect();
            for f in 0..seg.len {
                let mut x = vec![0.0; d];
                for (&c, (signs, phase)) in seg.classes.iter().zip(&states) {
                    let [i, v, t] = triplets[c];
                    for k in 0..d {
                        x[k] += inst_dirs[i][k] + targ_dirs[t][k];
                    }
                    if modulated[c] && cfg.modulation > 0.0 {
                        for (axis, dir) in mod_axes.iter().enumerate() {
                            let sign = if axis == v {
                                if f % 2 == 0 { *phase } else { -*phase }
                            } else {
                                signs[axis]
                            };
                            let a = sign * cfg.modulation;
                            for k in 0..d {
                                x[k] += a * dir[k];
                            }
                        }
                    }
                }
                if cfg.noise > 0.0 {
                    for xk in x.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *xk += cfg.noise * z;
                    }
                }
                obs.extend(x);
                labels.push(MultiLabel::from_active(cfg.num_triplets, &seg.classes));
            }
        }
        episodes.push(Episode { obs: Tensor::matrix(cfg.episode_len, d, obs)?, labels });
    }
    Ok(EpisodeDataset { config: cfg.clone(), seed, vocab, episodes, num_train })
}

#[derive(Serialize, Deserialize)]
struct Header {
    seed: u64,
    num_train: usize,
    config: SyntheticConfig,
    vocab: TripletVocabulary,
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn encode_payload(ds: &EpisodeDataset) -> Result<Vec<u8>> {
    let header = Header { seed: ds.seed, num_train: ds.num_train, config: ds.config.clone(), vocab: ds.vocab.clone() };
    let text = toml::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut p = Vec::new();
    put_u64(&mut p, text.len() as u64);
    p.extend_from_slice(text.as_bytes());
    put_u64(&mut p, ds.episodes.len() as u64);
    let c = ds.vocab.num_classes();
    for e in &ds.episodes {
        let (t, d) = e.obs.dims2()?;
        put_u64(&mut p, t as u64);
        put_u64(&mut p, d as u64);
        for v in e.obs.data() {
            p.extend_from_slice(&v.to_le_bytes());
        }
        put_u64(&mut p, c as u64);
        for l in &e.labels {
            let mut bytes = vec![0u8; c.div_ceil(8)];
            for k in l.active() {
                bytes[k / 8] |= 1 << (k % 8);
            }
            p.extend_from_slice(&bytes);
        }
    }
    Ok(p)
}

/// Serialises the dataset: magic, version, SHA-256 of the payload, payload.
pub fn encode_dataset(ds: &EpisodeDataset) -> Result<Vec<u8>> {
    let payload = encode_payload(ds)?;
    let mut out = Vec::with_capacity(payload.len() + 44);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&payload));
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows usize".into()))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<EpisodeDataset> {
    if bytes.len() < 12 || &bytes[..8] != DATASET_MAGIC {
        return Err(Error::Format("not a dataset file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(Error::Version { found: version, supported: DATASET_VERSION });
    }
    let mut head = Cursor { buf: bytes, pos: 12 };
    let digest = head.take(32)?;
    let payload = &bytes[44..];
    let mut cur = Cursor { buf: payload, pos: 0 };
    let hlen = cur.usize()?;
    let text = std::str::from_utf8(cur.take(hlen)?).map_err(|e| Error::Format(e.to_string()))?;
    let header: Header = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    header.vocab.validate()?;
    let n = cur.usize()?;
    let mut episodes = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let t = cur.usize()?;
        let d = cur.usize()?;
        let raw = cur.take(t.checked_mul(d).and_then(|v| v.checked_mul(8)).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        let c = cur.usize()?;
        if c != header.vocab.num_classes() {
            return Err(Error::Format(format!("label width {c} vs {} classes", header.vocab.num_classes())));
        }
        let w = c.div_ceil(8);
        let mut labels = Vec::with_capacity(t);
        for _ in 0..t {
            let b = cur.take(w)?;
            labels.push(MultiLabel::new((0..c).map(|k| b[k / 8] & (1 << (k % 8)) != 0).collect()));
        }
        episodes.push(Episode { obs: Tensor::matrix(t, d, data)?, labels });
    }
    if cur.pos != payload.len() {
        return Err(Error::Format("trailing bytes after last episode".into()));
    }
    if Sha256::digest(payload).as_slice() != digest {
        return Err(Error::Checksum);
    }
    if header.num_train > episodes.len() {
        return Err(Error::Format("training split larger than episode count".into()));
    }
    Ok(EpisodeDataset { config: header.config, seed: header.seed, vocab: header.vocab, episodes, num_train: header.num_train })
}

pub fn write_dataset(ds: &EpisodeDataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<EpisodeDataset> {
    let mut f = std::fs::File::open(path).map_err(|_| Error::MissingFile(path.display().to_string()))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    decode_dataset(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub sha256: String,
    pub episodes: usize,
    pub train_episodes: usize,
    pub frames: usize,
    pub obs_dim: usize,
    pub triplets: Vec<String>,
    /// Frame count per triplet class over the whole dataset.
    pub class_frames: Vec<usize>,
    pub config: SyntheticConfig,
}

pub fn manifest(ds: &EpisodeDataset) -> Result<Manifest> {
    let payload = encode_payload(ds)?;
    let digest = Sha256::digest(&payload);
    let sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
    let mut class_frames = vec![0; ds.vocab.num_classes()];
    for l in ds.episodes.iter().flat_map(|e| &e.labels) {
        for c in l.active() {
            class_frames[c] += 1;
        }
    }
    Ok(Manifest {
        format_version: DATASET_VERSION,
        seed: ds.seed,
        sha256,
        episodes: ds.episodes.len(),
        train_episodes: ds.num_train,
        frames: ds.num_frames(),
        obs_dim: ds.config.obs_dim,
        triplets: (0..ds.vocab.num_classes()).map(|c| ds.vocab.triplet_name(c)).collect(),
        class_frames,
        config: ds.config.clone(),
    })
}
