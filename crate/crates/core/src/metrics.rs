//! Multi-label average precision for the triplet classes and their component
//! projections (I, V, T, IV, IT).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::schema::{component_maps, ComponentMaps, Components, GroupMap, MultiLabel, StageKey, TripletVocabulary};

/// Average precision of one class; `None` when the class has no positive.
///
/// Frames are ranked by descending score. Tied scores form one rank block: the
/// precision credited to a positive is `#positives / #frames` over every frame
/// scoring at least as high as it does. Constant scores therefore give the
/// class prevalence.
pub fn average_precision_class(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let (mut seen, mut seen_pos, mut sum) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut j = i;
        while j < order.len() && scores[order[j]] == s {
            j += 1;
        }
        let block_pos = order[i..j].iter().filter(|&&f| labels[f]).count();
        seen += j - i;
        seen_pos += block_pos;
        sum += block_pos as f64 * seen_pos as f64 / seen as f64;
        i = j;
    }
    Some(sum / total_pos as f64)
}

/// Per-class AP for an N×C score matrix.
pub fn average_precision(scores: &Tensor, labels: &[MultiLabel]) -> Result<Vec<Option<f64>>> {
    let (n, c) = scores.dims2()?;
    check_labels(n, c, labels)?;
    if n == 0 {
        return Err(Error::shape("average_precision", "no frames"));
    }
    Ok((0..c)
        .map(|k| {
            let s: Vec<f64> = (0..n).map(|f| scores.get2(f, k)).collect();
            let l: Vec<bool> = labels.iter().map(|m| m.bits()[k]).collect();
            average_precision_class(&s, &l)
        })
        .collect())
}

fn check_labels(n: usize, c: usize, labels: &[MultiLabel]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: labels.len() });
    }
    if let Some(l) = labels.iter().find(|l| l.len() != c) {
        return Err(Error::shape("metrics", format!("label width {} vs {c} classes", l.len())));
    }
    Ok(())
}

/// Group scores (max over member triplets) and labels (OR over members).
pub fn project_scores(scores: &Tensor, labels: &[MultiLabel], map: &GroupMap) -> Result<(Tensor, Vec<MultiLabel>)> {
    let (n, c) = scores.dims2()?;
    check_labels(n, c, labels)?;
    if map.group_of.len() != c {
        return Err(Error::shape("component_scores", format!("map covers {} classes, scores have {c}", map.group_of.len())));
    }
    let g = map.num_groups();
    let mut out = vec![f64::NEG_INFINITY; n * g];
    let mut out_labels = Vec::with_capacity(n);
    for f in 0..n {
        let mut l = MultiLabel::empty(g);
        for (k, &grp) in map.group_of.iter().enumerate() {
            let s = &mut out[f * g + grp];
            *s = s.max(scores.get2(f, k));
            if labels[f].bits()[k] {
                l.set(grp, true);
            }
        }
        out_labels.push(l);
    }
    Ok((Tensor::matrix(n, g, out)?, out_labels))
}

/// Projections onto the five component families, in `I, V, T, IV, IT` order.
pub fn component_scores(
    scores: &Tensor,
    labels: &[MultiLabel],
    maps: &ComponentMaps,
) -> Result<Vec<(Components, Tensor, Vec<MultiLabel>)>> {
    Components::FAMILIES
        .iter()
        .filter(|&&f| f != Components::IVT)
        .map(|&f| {
            let (s, l) = project_scores(scores, labels, maps.get(f))?;
            Ok((f, s, l))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub name: String,
    pub positives: usize,
    /// `None` for classes without positives; those are left out of the mean.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub family: Components,
    pub classes: Vec<ClassAp>,
    pub mean_ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub families: Vec<FamilyReport>,
}

fn group_name(vocab: &TripletVocabulary, key: &StageKey) -> String {
    let mut parts = Vec::new();
    if let Some(i) = key.instrument {
        parts.push(vocab.instruments()[i].as_str());
    }
    if let Some(v) = key.verb {
        parts.push(vocab.verbs()[v].as_str());
    }
    if let Some(t) = key.target {
        parts.push(vocab.targets()[t].as_str());
    }
    parts.join("+")
}

fn family_report(
    family: Components,
    names: Vec<String>,
    scores: &Tensor,
    labels: &[MultiLabel],
) -> Result<FamilyReport> {
    let aps = average_precision(scores, labels)?;
    let classes: Vec<ClassAp> = names
        .into_iter()
        .enumerate()
        .zip(aps)
        .map(|((k, name), ap)| ClassAp { name, positives: labels.iter().filter(|l| l.bits()[k]).count(), ap })
        .collect();
    let defined: Vec<f64> = classes.iter().filter_map(|c| c.ap).collect();
    let mean_ap = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(FamilyReport { family, classes, mean_ap })
}

/// AP for all six families from N×C triplet scores.
pub fn evaluate(scores: &Tensor, labels: &[MultiLabel], vocab: &TripletVocabulary) -> Result<EvalReport> {
    let (n, c) = scores.dims2()?;
    if c != vocab.num_classes() {
        return Err(Error::shape("evaluate", format!("{c} score columns, {} classes", vocab.num_classes())));
    }
    check_labels(n, c, labels)?;
    let maps = component_maps(vocab);
    let mut families = Vec::with_capacity(6);
    for family in Components::FAMILIES {
        let report = if family == Components::IVT {
            let names = (0..c).map(|k| vocab.triplet_name(k)).collect();
            family_report(family, names, scores, labels)?
        } else {
            let map = maps.get(family);
            let (s, l) = project_scores(scores, labels, map)?;
            let names = map.keys.iter().map(|k| group_name(vocab, k)).collect();
            family_report(family, names, &s, &l)?
        };
        families.push(report);
    }
    Ok(EvalReport { frames: n, families })
}

impl EvalReport {
    pub fn family(&self, family: Components) -> Option<&FamilyReport> {
        self.families.iter().find(|f| f.family == family)
    }

    pub fn mean(&self, family: Components) -> Option<f64> {
        self.family(family).and_then(|f| f.mean_ap)
    }

    pub fn ap_ivt(&self) -> f64 {
        self.mean(Components::IVT).unwrap_or(0.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per class per family: `family,class,positives,ap` (empty AP when undefined).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("family,class,positives,ap\n");
        for f in &self.families {
            for c in &f.classes {
                let ap = c.ap.map(|v| format!("{v}")).unwrap_or_default();
                let _ = writeln!(s, "{},{},{},{}", f.family, c.name, c.positives, ap);
            }
        }
        s
    }
}
