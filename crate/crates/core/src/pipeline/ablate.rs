//! Ablation sweeps over toggles, curriculum orders, mixup α and stride sets.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Toggles};
use super::run_pipeline;
use crate::datagen::{generate_dataset, read_dataset, EpisodeDataset};
use crate::error::{Error, Result};
use crate::schema::{Components, Curriculum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Toggles,
    CurriculumOrder,
    Alpha,
    Strides,
}

/// Sweep description, read from TOML.
///
/// ```toml
/// kind = "curriculum_order"
/// seeds = [0, 1, 2]
/// orders = ["T->IT->IVT", "V->VT->IVT", "I->IV->IVT"]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub kind: SweepKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Toggle rows; the eight component-ablation rows when empty.
    #[serde(default)]
    pub toggles: Vec<Toggles>,
    #[serde(default)]
    pub orders: Vec<Curriculum>,
    /// Applied to each mixup in turn while the other keeps its configured value.
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub strides: Vec<Vec<usize>>,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

impl SweepSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| Error::InvalidConfig(format!("sweep spec: {}", e.message())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.display().to_string()))?;
        Self::from_toml_str(&s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("sweep spec: {m}")));
        if self.seeds.is_empty() {
            return bad("`seeds` must not be empty");
        }
        match self.kind {
            SweepKind::Toggles => Ok(()),
            SweepKind::CurriculumOrder if self.orders.is_empty() => bad("`orders` must not be empty"),
            SweepKind::Alpha if self.alphas.is_empty() => bad("`alphas` must not be empty"),
            SweepKind::Alpha if self.alphas.iter().any(|a| !(*a > 0.0)) => bad("every alpha must be positive"),
            SweepKind::Strides if self.strides.is_empty() => bad("`strides` must not be empty"),
            _ => Ok(()),
        }
    }

    /// `(column values, configuration)` for every row, in table order.
    pub fn rows(&self, base: &RunConfig) -> Result<Vec<(Vec<String>, RunConfig)>> {
        let mark = |b: bool| if b { "x".to_string() } else { String::new() };
        let mut rows = Vec::new();
        match self.kind {
            SweepKind::Toggles => {
                let toggles = if self.toggles.is_empty() { Toggles::ablation_rows() } else { self.toggles.clone() };
                for t in toggles {
                    let cols = [t.supcon, t.curriculum, t.input_mixup, t.feature_mixup, t.gamma_fusion, t.beta_fusion]
                        .map(mark)
                        .to_vec();
                    rows.push((cols, RunConfig { toggles: t, ..base.clone() }));
                }
            }
            SweepKind::CurriculumOrder => {
                for order in &self.orders {
                    let mut cfg = base.clone();
                    cfg.pretrain.curriculum = order.clone();
                    cfg.toggles.curriculum = true;
                    cfg.toggles.supcon = true;
                    let mut cols: Vec<String> = order.stages().iter().map(Components::to_string).collect();
                    cols.resize(3, String::new());
                    rows.push((cols, cfg));
                }
            }
            SweepKind::Alpha => {
                for (which, feature) in [("feature", true), ("input", false)] {
                    for &a in &self.alphas {
                        let mut cfg = base.clone();
                        if feature {
                            cfg.loss.alpha_feat = a;
                        } else {
                            cfg.loss.alpha_input = a;
                        }
                        rows.push((vec![which.to_string(), format!("{a}")], cfg));
                    }
                }
            }
            SweepKind::Strides => {
                for s in &self.strides {
                    let mut cfg = base.clone();
                    cfg.pathway.strides = s.clone();
                    let t = cfg.toggles;
                    let names: Vec<String> = s.iter().map(usize::to_string).collect();
                    rows.push((vec![mark(t.gamma_fusion), mark(t.beta_fusion), format!("{{{}}}", names.join(","))], cfg));
                }
            }
        }
        for (_, cfg) in &rows {
            cfg.validate()?;
        }
        Ok(rows)
    }

    pub fn columns(&self) -> Vec<&'static str> {
        match self.kind {
            SweepKind::Toggles => vec!["supcon", "curriculum", "input_mixup", "feature_mixup", "multi_res_gamma", "spatio_temporal_beta"],
            SweepKind::CurriculumOrder => vec!["stage1", "stage2", "stage3"],
            SweepKind::Alpha => vec!["mixup", "alpha"],
            SweepKind::Strides => vec!["gamma", "beta", "pathways"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub columns: Vec<String>,
    /// Held-out AP_IVT per seed, in spec seed order.
    pub ap_ivt: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub kind: SweepKind,
    pub seeds: Vec<u64>,
    pub headers: Vec<String>,
    pub rows: Vec<AblationRow>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Dataset for one seed: the configured file when set, else generated from the seed.
fn dataset_for(cfg: &RunConfig, seed: u64) -> Result<EpisodeDataset> {
    match &cfg.dataset {
        Some(p) => read_dataset(p),
        None => generate_dataset(&cfg.data, seed),
    }
}

/// Runs every row for every seed; rows share the seeds and the per-seed datasets.
pub fn run_sweep(base: &RunConfig, spec: &SweepSpec, mut progress: impl FnMut(usize, u64, f64)) -> Result<AblationTable> {
    spec.validate()?;
    let rows = spec.rows(base)?;
    let mut scores = vec![Vec::new(); rows.len()];
    for &seed in &spec.seeds {
        let ds = dataset_for(base, seed)?;
        for (r, (_, cfg)) in rows.iter().enumerate() {
            let cfg = RunConfig { seed, ..cfg.clone() };
            let ap = run_pipeline(&cfg, &ds)?.reports.val.ap_ivt();
            progress(r, seed, ap);
            scores[r].push(ap);
        }
    }
    let rows = rows
        .into_iter()
        .zip(scores)
        .map(|((columns, _), ap_ivt)| {
            let (mean, std) = mean_std(&ap_ivt);
            AblationRow { columns, ap_ivt, mean, std }
        })
        .collect();
    let mut headers: Vec<String> = spec.columns().into_iter().map(String::from).collect();
    headers.push("ap_ivt".into());
    Ok(AblationTable { kind: spec.kind, seeds: spec.seeds.clone(), headers, rows })
}

impl AblationTable {
    /// `columns…,ap_ivt_mean,ap_ivt_std,seed_<s>…`
    pub fn to_csv(&self) -> String {
        let mut s = self.headers[..self.headers.len() - 1].join(",");
        s.push_str(",ap_ivt_mean,ap_ivt_std");
        for seed in &self.seeds {
            let _ = write!(s, ",seed_{seed}");
        }
        s.push('\n');
        for r in &self.rows {
            let mut cells = r.columns.clone();
            cells.push(format!("{}", r.mean));
            cells.push(format!("{}", r.std));
            cells.extend(r.ap_ivt.iter().map(|v| format!("{v}")));
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    /// Markdown table with AP_IVT as `mean±std` in percent.
    pub fn to_markdown(&self) -> String {
        let mut s = format!("| {} |\n", self.headers.join(" | "));
        let _ = writeln!(s, "|{}", " --- |".repeat(self.headers.len()));
        for r in &self.rows {
            let cells: Vec<String> =
                r.columns.iter().map(|c| if c == "x" { "✓".to_string() } else { c.clone() }).collect();
            let _ = writeln!(s, "| {} | {:.2}±{:.2} |", cells.join(" | "), 100.0 * r.mean, 100.0 * r.std);
        }
        s
    }
}
