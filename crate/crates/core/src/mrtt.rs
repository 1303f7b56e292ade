//! Multi-resolution temporal transformer: stride-k pooled encoder pathways
//! fused by global weights `γ = softmax(w)`, blended with a per-frame spatial
//! head through `β = sigmoid(b_β)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{mix_seed, rng_from, Bound, LayerNorm, Linear, ParamId, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathwayConfig {
    pub strides: Vec<usize>,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Weight of per-pathway BCE terms added to the training loss.
    pub aux_loss_weight: f64,
}

impl Default for PathwayConfig {
    fn default() -> Self {
        Self { strides: vec![4, 5, 6], layers: 3, heads: 4, ff_dim: 2048, dropout: 0.1, aux_loss_weight: 0.0 }
    }
}

impl PathwayConfig {
    /// Default pathways with the feed-forward width reduced for CPU runs.
    pub fn desk() -> Self {
        Self { ff_dim: 256, ..Self::default() }
    }

    pub fn validate(&self, model_dim: usize) -> Result<()> {
        if self.strides.is_empty() || self.strides.contains(&0) {
            return Err(Error::InvalidConfig("pathway strides must be non-empty and ≥ 1".into()));
        }
        let mut s = self.strides.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.strides.len() {
            return Err(Error::InvalidConfig(format!("duplicate pathway strides {:?}", self.strides)));
        }
        if self.heads == 0 || !model_dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!("{} heads do not divide model dim {model_dim}", self.heads)));
        }
        if !model_dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!("model dim {model_dim} must be even")));
        }
        if self.ff_dim == 0 || !(0.0..1.0).contains(&self.dropout) || self.aux_loss_weight < 0.0 {
            return Err(Error::InvalidConfig("invalid feed-forward width, dropout or aux weight".into()));
        }
        Ok(())
    }

    pub fn max_stride(&self) -> usize {
        self.strides.iter().copied().max().unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MrttConfig {
    /// Width of the frozen backbone features, also the transformer width.
    pub input_dim: usize,
    pub num_classes: usize,
    pub pathway: PathwayConfig,
}

impl Default for MrttConfig {
    fn default() -> Self {
        Self { input_dim: 64, num_classes: 12, pathway: PathwayConfig::desk() }
    }
}

/// Fixed sinusoidal position table: `sin(p / 10000^(2i/d))` on even lanes,
/// `cos` of the same angle on odd lanes.
pub fn sinusoidal_pe(length: usize, dim: usize) -> Result<Tensor> {
    if !dim.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("positional encoding dim {dim} must be even")));
    }
    let mut data = vec![0.0; length * dim];
    for p in 0..length {
        for i in 0..dim / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data[p * dim + 2 * i] = angle.sin();
            data[p * dim + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::matrix(length, dim, data)
}

/// `Z_temp = Σ_k γ_k Z_k` with `γ = softmax(w)`; `w` is 1×K.
pub fn fuse_multires(tape: &mut Tape, zs: &[Var], w: Var) -> Result<Var> {
    let k = tape.value(w).numel();
    if zs.is_empty() || k != zs.len() {
        return Err(Error::shape("fuse_multires", format!("{} pathways, {k} fusion logits", zs.len())));
    }
    let shape = tape.value(zs[0]).shape().to_vec();
    if zs.iter().any(|&z| tape.value(z).shape() != shape.as_slice()) {
        return Err(Error::shape("fuse_multires", "pathway outputs differ in shape"));
    }
    if tape.value(w).shape() != [1, k] {
        return Err(Error::shape("fuse_multires", "fusion logits must be 1×K"));
    }
    let gamma = tape.softmax(w)?;
    let mut acc = None;
    for (i, &z) in zs.iter().enumerate() {
        let g = tape.slice(gamma, 1, i, 1)?;
        let term = tape.mul(z, g)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.unwrap())
}

/// `Z_final = β Z_spat + (1-β) Z_temp` for a 1×1 (or scalar) `β`.
pub fn blend(tape: &mut Tape, z_spat: Var, z_temp: Var, beta: Var) -> Result<Var> {
    let (a, b) = (tape.value(z_spat).shape().to_vec(), tape.value(z_temp).shape().to_vec());
    if a != b {
        return Err(Error::shape("fuse_spatiotemporal", format!("{a:?} vs {b:?}")));
    }
    let one = tape.constant(Tensor::scalar(1.0));
    let neg = tape.scale(beta, -1.0)?;
    let keep = tape.add(neg, one)?;
    let s = tape.mul(z_spat, beta)?;
    let t = tape.mul(z_temp, keep)?;
    tape.add(s, t)
}

/// [`blend`] with `β = sigmoid(b_β)`.
pub fn fuse_spatiotemporal(tape: &mut Tape, z_spat: Var, z_temp: Var, b_beta: Var) -> Result<Var> {
    let beta = tape.sigmoid(b_beta)?;
    blend(tape, z_spat, z_temp, beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct EncoderLayer {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pathway {
    pub stride: usize,
    layers: Vec<EncoderLayer>,
    pub final_norm: LayerNorm,
    pub head: Linear,
}

impl Pathway {
    /// Parameter ids of the transformer encoder (everything but the head).
    pub fn encoder_params(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in &self.layers {
            for lin in [l.q, l.k, l.v, l.o, l.ff1, l.ff2] {
                ids.extend([lin.weight, lin.bias]);
            }
            for n in [l.ln1, l.ln2] {
                ids.extend([n.gain, n.bias]);
            }
        }
        ids.extend([self.final_norm.gain, self.final_norm.bias]);
        ids
    }
}

/// How the fused output is formed at forward time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaMode {
    /// `β = sigmoid(b_β)` from the learned parameter.
    Learned,
    /// Fixed blend weight in `[0, 1]`; `1` gives spatial-only predictions.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub train: bool,
    pub seed: u64,
    /// When false the pathways are averaged with uniform weights.
    pub learn_gamma: bool,
    pub beta: BetaMode,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        Self { train: false, seed: 0, learn_gamma: true, beta: BetaMode::Learned }
    }
}

#[derive(Debug, Clone)]
pub struct MrttOutput {
    pub z_final: Var,
    pub z_spat: Var,
    pub z_temp: Var,
    pub z_paths: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mrtt {
    cfg: MrttConfig,
    params: ParamSet,
    pathways: Vec<Pathway>,
    spatial: Linear,
    fusion_logits: ParamId,
    beta_raw: ParamId,
}

impl Mrtt {
    pub fn new(cfg: MrttConfig, seed: u64) -> Result<Self> {
        let d = cfg.input_dim;
        if d == 0 || cfg.num_classes == 0 {
            return Err(Error::InvalidConfig("MRTT dimensions must be positive".into()));
        }
        cfg.pathway.validate(d)?;
        let mut rng = rng_from(seed, 0x7E4);
        let mut params = ParamSet::new();
        let pc = &cfg.pathway;
        let mut pathways = Vec::with_capacity(pc.strides.len());
        for &k in &pc.strides {
            let p = format!("mrtt.path{k}");
            let layers = (0..pc.layers)
                .map(|l| {
                    let n = format!("{p}.layer{l}");
                    EncoderLayer {
                        ln1: LayerNorm::new(&mut params, &format!("{n}.ln1"), d),
                        q: Linear::new(&mut params, &format!("{n}.q"), d, d, &mut rng),
                        k: Linear::new(&mut params, &format!("{n}.k"), d, d, &mut rng),
                        v: Linear::new(&mut params, &format!("{n}.v"), d, d, &mut rng),
                        o: Linear::new(&mut params, &format!("{n}.o"), d, d, &mut rng),
                        ln2: LayerNorm::new(&mut params, &format!("{n}.ln2"), d),
                        ff1: Linear::new(&mut params, &format!("{n}.ff1"), d, pc.ff_dim, &mut rng),
                        ff2: Linear::new(&mut params, &format!("{n}.ff2"), pc.ff_dim, d, &mut rng),
                    }
                })
                .collect();
            let final_norm = LayerNorm::new(&mut params, &format!("{p}.norm"), d);
            let head = Linear::new(&mut params, &format!("{p}.head"), d, cfg.num_classes, &mut rng);
            pathways.push(Pathway { stride: k, layers, final_norm, head });
        }
        let spatial = Linear::new(&mut params, "mrtt.spatial", d, cfg.num_classes, &mut rng);
        let fusion_logits = params.add("mrtt.fusion_logits", Tensor::zeros(&[1, pc.strides.len()]));
        let beta_raw = params.add("mrtt.beta_raw", Tensor::zeros(&[1, 1]));
        Ok(Self { cfg, params, pathways, spatial, fusion_logits, beta_raw })
    }

    pub fn config(&self) -> &MrttConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn pathways(&self) -> &[Pathway] {
        &self.pathways
    }

    pub fn spatial_head(&self) -> Linear {
        self.spatial
    }

    pub fn fusion_logits_id(&self) -> ParamId {
        self.fusion_logits
    }

    pub fn beta_raw_id(&self) -> ParamId {
        self.beta_raw
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        self.params.bind(tape, trainable)
    }

    /// Current `γ = softmax(w)`.
    pub fn gamma(&self) -> Vec<f64> {
        let w = self.params.get(self.fusion_logits).data();
        let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = w.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    /// Current `β = sigmoid(b_β)`.
    pub fn beta(&self) -> f64 {
        let b = self.params.get(self.beta_raw).data()[0];
        1.0 / (1.0 + (-b).exp())
    }

    fn encoder_layer(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        layer: &EncoderLayer,
        x: Var,
        opts: &ForwardOptions,
        stream: &mut u64,
    ) -> Result<Var> {
        let rate = self.cfg.pathway.dropout;
        let mut drop = |tape: &mut Tape, v: Var| {
            *stream += 1;
            tape.dropout(v, rate, mix_seed(opts.seed, *stream), opts.train)
        };
        let h = layer.ln1.forward(tape, bound, x)?;
        let q = layer.q.forward(tape, bound, h)?;
        let k = layer.k.forward(tape, bound, h)?;
        let v = layer.v.forward(tape, bound, h)?;
        let a = tape.attention(q, k, v, self.cfg.pathway.heads)?;
        let a = layer.o.forward(tape, bound, a)?;
        let a = drop(tape, a)?;
        let x = tape.add(x, a)?;
        let h = layer.ln2.forward(tape, bound, x)?;
        let h = layer.ff1.forward(tape, bound, h)?;
        let h = tape.relu(h)?;
        let h = drop(tape, h)?;
        let h = layer.ff2.forward(tape, bound, h)?;
        let h = drop(tape, h)?;
        tape.add(x, h)
    }

    /// One pathway on a single T×C_e sequence: pool, add positions, encode,
    /// upsample back to T frames and apply the pathway head.
    pub fn pathway_forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        index: usize,
        e: Var,
        mask: &[bool],
        opts: &ForwardOptions,
    ) -> Result<Var> {
        let p = &self.pathways[index];
        let (t, d) = tape.value(e).dims2()?;
        if d != self.cfg.input_dim {
            return Err(Error::shape("pathway_forward", format!("feature dim {d}, expected {}", self.cfg.input_dim)));
        }
        let pooled = tape.masked_mean_pool(e, p.stride, mask)?;
        let l = t.div_ceil(p.stride);
        let pe = tape.constant(sinusoidal_pe(l, d)?);
        let mut h = tape.add(pooled, pe)?;
        let mut stream = mix_seed(index as u64, 0xD0);
        for layer in &p.layers {
            h = self.encoder_layer(tape, bound, layer, h, opts, &mut stream)?;
        }
        let h = p.final_norm.forward(tape, bound, h)?;
        let up = tape.upsample(h, t)?;
        p.head.forward(tape, bound, up)
    }

    pub fn spatial_forward(&self, tape: &mut Tape, bound: &Bound, e: Var) -> Result<Var> {
        self.spatial.forward(tape, bound, e)
    }

    /// Full forward on one T×C_e sequence with its frame-validity mask.
    pub fn forward_sequence(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        e: Var,
        mask: &[bool],
        opts: &ForwardOptions,
    ) -> Result<MrttOutput> {
        let (t, _) = tape.value(e).dims2()?;
        if mask.len() != t {
            return Err(Error::shape("mrtt", format!("mask length {} vs {t} frames", mask.len())));
        }
        if t < self.cfg.pathway.max_stride() {
            return Err(Error::SequenceTooShort { len: t, stride: self.cfg.pathway.max_stride() });
        }
        let z_paths = (0..self.pathways.len())
            .map(|i| self.pathway_forward(tape, bound, i, e, mask, opts))
            .collect::<Result<Vec<_>>>()?;
        let w = if opts.learn_gamma {
            bound.var(self.fusion_logits)
        } else {
            tape.constant(Tensor::zeros(&[1, self.pathways.len()]))
        };
        let z_temp = fuse_multires(tape, &z_paths, w)?;
        let z_spat = self.spatial_forward(tape, bound, e)?;
        let z_final = match opts.beta {
            BetaMode::Learned => fuse_spatiotemporal(tape, z_spat, z_temp, bound.var(self.beta_raw))?,
            BetaMode::Fixed(b) if b == 1.0 => z_spat,
            BetaMode::Fixed(b) => {
                let beta = tape.constant(Tensor::scalar(b));
                blend(tape, z_spat, z_temp, beta)?
            }
        };
        Ok(MrttOutput { z_final, z_spat, z_temp, z_paths })
    }

    /// Eval-mode logits `Z_final` (T×C) for one sequence.
    pub fn predict_logits(&self, e: &Tensor, mask: &[bool], opts: &ForwardOptions) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(e.clone());
        let out = self.forward_sequence(&mut tape, &bound, x, mask, &ForwardOptions { train: false, ..*opts })?;
        Ok(tape.value(out.z_final).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;

    fn tiny(strides: Vec<usize>) -> MrttConfig {
        MrttConfig {
            input_dim: 4,
            num_classes: 3,
            pathway: PathwayConfig { strides, layers: 1, heads: 2, ff_dim: 6, dropout: 0.0, aux_loss_weight: 0.0 },
        }
    }

    fn seq(t: usize, d: usize, phase: f64) -> Tensor {
        Tensor::matrix(t, d, (0..t * d).map(|i| (i as f64 * 0.37 + phase).sin()).collect()).unwrap()
    }

    #[test]
    fn pe_examples() {
        let pe = sinusoidal_pe(5, 4).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let r = pe.row(1);
        let w1 = 1.0 / 10000f64.powf(0.5);
        assert_eq!(r, &[1f64.sin(), 1f64.cos(), w1.sin(), w1.cos()]);
        assert!(sinusoidal_pe(3, 5).is_err());
    }

    #[test]
    fn fusion_examples() {
        let mut tape = Tape::new();
        let zs: Vec<Var> = (0..3).map(|k| tape.constant(seq(4, 3, k as f64))).collect();
        let w = tape.constant(Tensor::zeros(&[1, 3]));
        let f = fuse_multires(&mut tape, &zs, w).unwrap();
        let avg: Vec<f64> = (0..12)
            .map(|i| zs.iter().map(|&z| tape.value(z).data()[i]).sum::<f64>() / 3.0)
            .collect();
        assert!(tape.value(f).data().iter().zip(&avg).all(|(a, b)| (a - b).abs() < 1e-15));

        let w = tape.constant(Tensor::matrix(1, 3, vec![100.0, -100.0, -100.0]).unwrap());
        let f = fuse_multires(&mut tape, &zs, w).unwrap();
        assert!(tape.value(f).max_abs_diff(tape.value(zs[0])) < 1e-10);

        let wv = [0.3, -1.2, 0.8];
        let w = tape.constant(Tensor::matrix(1, 3, wv.to_vec()).unwrap());
        let f = fuse_multires(&mut tape, &zs, w).unwrap();
        let e: Vec<f64> = wv.iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        for i in 0..12 {
            let want: f64 = (0..3).map(|k| e[k] / s * tape.value(zs[k]).data()[i]).sum();
            assert!((tape.value(f).data()[i] - want).abs() < 1e-12);
        }
        let bad = tape.constant(Tensor::zeros(&[1, 2]));
        assert!(fuse_multires(&mut tape, &zs, bad).is_err());
    }

    #[test]
    fn spatiotemporal_examples() {
        let mut tape = Tape::new();
        let s = tape.constant(seq(5, 3, 0.0));
        let t = tape.constant(seq(5, 3, 1.0));
        let b = tape.constant(Tensor::matrix(1, 1, vec![50.0]).unwrap());
        let f = fuse_spatiotemporal(&mut tape, s, t, b).unwrap();
        assert!(tape.value(f).max_abs_diff(tape.value(s)) < 1e-10);
        let b0 = tape.constant(Tensor::matrix(1, 1, vec![0.0]).unwrap());
        let f = fuse_spatiotemporal(&mut tape, s, t, b0).unwrap();
        for i in 0..15 {
            let mid = 0.5 * (tape.value(s).data()[i] + tape.value(t).data()[i]);
            assert!((tape.value(f).data()[i] - mid).abs() < 1e-15);
        }
        let b = tape.constant(Tensor::matrix(1, 1, vec![-0.7]).unwrap());
        let f = fuse_spatiotemporal(&mut tape, s, s, b).unwrap();
        assert!(tape.value(f).max_abs_diff(tape.value(s)) < 1e-15);
        let other = tape.constant(seq(4, 3, 0.0));
        assert!(fuse_spatiotemporal(&mut tape, s, other, b).is_err());
    }

    #[test]
    fn pathway_shapes_and_short_sequence() {
        let m = Mrtt::new(tiny(vec![4]), 1).unwrap();
        let mut tape = Tape::new();
        let b = m.bind(&mut tape, false);
        let e = tape.constant(seq(12, 4, 0.0));
        let z = m.pathway_forward(&mut tape, &b, 0, e, &[true; 12], &ForwardOptions::eval()).unwrap();
        assert_eq!(tape.value(z).shape(), &[12, 3]);
        let short = tape.constant(seq(3, 4, 0.0));
        assert!(matches!(
            m.forward_sequence(&mut tape, &b, short, &[true; 3], &ForwardOptions::eval()),
            Err(Error::SequenceTooShort { .. })
        ));
    }

    #[test]
    fn zeroed_encoder_on_constant_input_gives_constant_logits() {
        let mut m = Mrtt::new(tiny(vec![4, 5]), 2).unwrap();
        for p in m.pathways().to_vec() {
            for id in p.encoder_params() {
                m.params_mut().get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
            *m.params_mut().get_mut(p.final_norm.bias) = Tensor::matrix(1, 4, vec![0.5, -1.0, 2.0, 0.1]).unwrap();
        }
        let e = Tensor::matrix(13, 4, [0.3, -0.2, 1.1, 0.7].repeat(13)).unwrap();
        let z = m.predict_logits(&e, &[true; 13], &ForwardOptions::eval()).unwrap();
        for r in 1..13 {
            assert_eq!(z.row(r), z.row(0));
        }
    }

    #[test]
    fn spatial_head_is_per_frame() {
        let m = Mrtt::new(tiny(vec![4]), 3).unwrap();
        let e = seq(6, 4, 0.2);
        let perm = [3, 0, 5, 1, 4, 2];
        let permuted = Tensor::from_rows(&perm.iter().map(|&i| e.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let mut tape = Tape::new();
        let b = m.bind(&mut tape, false);
        let x = tape.constant(e);
        let xp = tape.constant(permuted);
        let z = m.spatial_forward(&mut tape, &b, x).unwrap();
        let zp = m.spatial_forward(&mut tape, &b, xp).unwrap();
        for (r, &src) in perm.iter().enumerate() {
            assert_eq!(tape.value(zp).row(r), tape.value(z).row(src));
        }

        let mut m = m;
        let h = m.spatial_head();
        *m.params_mut().get_mut(h.weight) = Tensor::zeros(&[4, 3]);
        *m.params_mut().get_mut(h.bias) = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let mut tape = Tape::new();
        let b = m.bind(&mut tape, false);
        let x = tape.constant(seq(5, 4, 0.0));
        let z = m.spatial_forward(&mut tape, &b, x).unwrap();
        for r in 0..5 {
            assert_eq!(tape.value(z).row(r), &[1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn invariants_at_init() {
        let m = Mrtt::new(MrttConfig::default(), 4).unwrap();
        let g = m.gamma();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(m.beta(), 0.5);
        let bad = MrttConfig { pathway: PathwayConfig { strides: vec![4, 4], ..PathwayConfig::desk() }, ..Default::default() };
        assert!(Mrtt::new(bad, 0).is_err());
        let bad = MrttConfig { pathway: PathwayConfig { heads: 5, ..PathwayConfig::desk() }, ..Default::default() };
        assert!(Mrtt::new(bad, 0).is_err());
    }

    #[test]
    fn forward_is_deterministic_with_dropout_off() {
        let m = Mrtt::new(tiny(vec![4, 5, 6]), 5).unwrap();
        let e = seq(9, 4, 0.4);
        let a = m.predict_logits(&e, &[true; 9], &ForwardOptions::eval()).unwrap();
        let b = m.predict_logits(&e, &[true; 9], &ForwardOptions::eval()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spatial_only_mode_returns_spatial_logits() {
        let m = Mrtt::new(tiny(vec![4]), 6).unwrap();
        let e = seq(8, 4, 0.9);
        let opts = ForwardOptions { beta: BetaMode::Fixed(1.0), ..ForwardOptions::eval() };
        let z = m.predict_logits(&e, &[true; 8], &opts).unwrap();
        let mut tape = Tape::new();
        let b = m.bind(&mut tape, false);
        let x = tape.constant(e);
        let s = m.spatial_forward(&mut tape, &b, x).unwrap();
        assert_eq!(&z, tape.value(s));
    }

    #[test]
    fn full_forward_gradient_check() {
        let m = Mrtt::new(tiny(vec![4, 5, 6]), 7).unwrap();
        let mut points = vec![seq(8, 4, 0.3)];
        points.extend(m.params().tensors().iter().cloned());
        let mut mask = [true; 8];
        mask[7] = false;
        let report = check_gradients(
            |tape, vars| {
                let bound = Bound::from_vars(vars[1..].to_vec());
                let out = m.forward_sequence(tape, &bound, vars[0], &mask, &ForwardOptions::eval())?;
                tape.mean(out.z_final, None)
            },
            &points,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{:?}", report.max_rel);
    }
}
