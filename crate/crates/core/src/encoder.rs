//! Toy MLP backbone: observations -> features `f`, normalised projections `z`
//! and classification logits.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{rng_from, Bound, Linear, ParamSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub proj_dim: usize,
    pub num_classes: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { input_dim: 32, hidden: vec![128, 128], feature_dim: 64, proj_dim: 32, num_classes: 12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    cfg: EncoderConfig,
    params: ParamSet,
    trunk: Vec<Linear>,
    proj: Linear,
    head: Linear,
}

impl ToyEncoder {
    pub fn new(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        if cfg.input_dim == 0 || cfg.feature_dim == 0 || cfg.proj_dim == 0 || cfg.num_classes == 0 {
            return Err(Error::InvalidConfig("encoder dimensions must be positive".into()));
        }
        let mut rng = rng_from(seed, 0xE4C0);
        let mut params = ParamSet::new();
        let mut widths = vec![cfg.input_dim];
        widths.extend(&cfg.hidden);
        widths.push(cfg.feature_dim);
        let trunk = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| Linear::new(&mut params, &format!("encoder.trunk.{k}"), w[0], w[1], &mut rng))
            .collect();
        let proj = Linear::new(&mut params, "encoder.proj", cfg.feature_dim, cfg.proj_dim, &mut rng);
        let head = Linear::new(&mut params, "encoder.head", cfg.feature_dim, cfg.num_classes, &mut rng);
        Ok(Self { cfg, params, trunk, proj, head })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn trunk(&self) -> &[Linear] {
        &self.trunk
    }

    pub fn proj(&self) -> Linear {
        self.proj
    }

    pub fn head(&self) -> Linear {
        self.head
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        self.params.bind(tape, trainable)
    }

    /// `obs` (B×D) -> features (B×d). ReLU between trunk layers, none after the last.
    pub fn encode(&self, tape: &mut Tape, bound: &Bound, obs: Var) -> Result<Var> {
        let (_, d) = tape.value(obs).dims2()?;
        if d != self.cfg.input_dim {
            return Err(Error::shape("encode", format!("observation dim {d}, expected {}", self.cfg.input_dim)));
        }
        let mut h = obs;
        for (k, layer) in self.trunk.iter().enumerate() {
            h = layer.forward(tape, bound, h)?;
            if k + 1 < self.trunk.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Unit-norm projections `z = g(f)/‖g(f)‖`.
    pub fn project_normalize(&self, tape: &mut Tape, bound: &Bound, f: Var) -> Result<Var> {
        let p = self.proj.forward(tape, bound, f)?;
        tape.l2_normalize(p)
    }

    pub fn classify(&self, tape: &mut Tape, bound: &Bound, f: Var) -> Result<Var> {
        self.head.forward(tape, bound, f)
    }

    /// Eval-mode features for a plain matrix of observations.
    pub fn features(&self, obs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let x = tape.constant(obs.clone());
        let f = self.encode(&mut tape, &b, x)?;
        Ok(tape.value(f).clone())
    }

    /// Eval-mode sigmoid probabilities.
    pub fn predict_proba(&self, obs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let x = tape.constant(obs.clone());
        let f = self.encode(&mut tape, &b, x)?;
        let l = self.classify(&mut tape, &b, f)?;
        let p = tape.sigmoid(l)?;
        Ok(tape.value(p).clone())
    }
}
