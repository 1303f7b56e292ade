//! Triplet label algebra: vocabularies, multi-label vectors, curriculum stage
//! projections and component group maps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A subset of the three triplet components, e.g. `T`, `IT`, `IVT`.
///
/// Used both as a curriculum stage (which components must agree for two
/// samples to be positives) and as a metric family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Components(u8);

impl Components {
    pub const I: Self = Self(1);
    pub const V: Self = Self(2);
    pub const T: Self = Self(4);
    pub const IV: Self = Self(1 | 2);
    pub const IT: Self = Self(1 | 4);
    pub const VT: Self = Self(2 | 4);
    pub const IVT: Self = Self(1 | 2 | 4);

    /// The six metric families in report order.
    pub const FAMILIES: [Self; 6] = [Self::I, Self::V, Self::T, Self::IV, Self::IT, Self::IVT];

    pub fn has_instrument(self) -> bool {
        self.0 & 1 != 0
    }
    pub fn has_verb(self) -> bool {
        self.0 & 2 != 0
    }
    pub fn has_target(self) -> bool {
        self.0 & 4 != 0
    }

    /// True when every component of `self` is also in `other`.
    pub fn is_subset_of(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn key(self, t: Triplet) -> StageKey {
        StageKey {
            instrument: self.has_instrument().then_some(t.instrument),
            verb: self.has_verb().then_some(t.verb),
            target: self.has_target().then_some(t.target),
        }
    }
}

impl fmt::Display for Components {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.has_instrument() {
            f.write_str("I")?;
        }
        if self.has_verb() {
            f.write_str("V")?;
        }
        if self.has_target() {
            f.write_str("T")?;
        }
        Ok(())
    }
}

impl FromStr for Components {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut bits = 0u8;
        for ch in s.trim().chars() {
            let b = match ch.to_ascii_uppercase() {
                'I' => 1,
                'V' => 2,
                'T' => 4,
                _ => return Err(Error::InvalidConfig(format!("bad component set `{s}`"))),
            };
            if bits & b != 0 {
                return Err(Error::InvalidConfig(format!("repeated component in `{s}`")));
            }
            bits |= b;
        }
        if bits == 0 {
            return Err(Error::InvalidConfig("empty component set".into()));
        }
        Ok(Self(bits))
    }
}

impl TryFrom<String> for Components {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Components> for String {
    fn from(c: Components) -> String {
        c.to_string()
    }
}

/// Ordered curriculum stages, coarse to fine. Default `T -> IT -> IVT`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Curriculum(Vec<Components>);

impl Curriculum {
    pub fn new(stages: Vec<Components>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::InvalidConfig("curriculum needs at least one stage".into()));
        }
        Ok(Self(stages))
    }

    /// Single stage at full triplet granularity (curriculum disabled).
    pub fn flat() -> Self {
        Self(vec![Components::IVT])
    }

    pub fn stages(&self) -> &[Components] {
        &self.0
    }
}

impl Default for Curriculum {
    fn default() -> Self {
        Self(vec![Components::T, Components::IT, Components::IVT])
    }
}

impl fmt::Display for Curriculum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("->"))
    }
}

impl FromStr for Curriculum {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let stages = s
            .split(['>', ','])
            .map(|p| p.trim().trim_end_matches('-'))
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        Self::new(stages)
    }
}

impl TryFrom<String> for Curriculum {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Curriculum> for String {
    fn from(c: Curriculum) -> String {
        c.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub instrument: usize,
    pub verb: usize,
    pub target: usize,
}

/// A projected triplet; components outside the stage are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StageKey {
    pub instrument: Option<usize>,
    pub verb: Option<usize>,
    pub target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletVocabulary {
    instruments: Vec<String>,
    verbs: Vec<String>,
    targets: Vec<String>,
    /// `[instrument, verb, target]`; the position is the triplet class id.
    triplets: Vec<[usize; 3]>,
}

impl TripletVocabulary {
    pub fn new(
        instruments: Vec<String>,
        verbs: Vec<String>,
        targets: Vec<String>,
        triplets: Vec<[usize; 3]>,
    ) -> Result<Self> {
        let v = Self { instruments, verbs, targets, triplets };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.triplets.is_empty() {
            return Err(Error::InvalidVocabulary("no triplets".into()));
        }
        let mut seen = BTreeSet::new();
        for (c, t) in self.triplets.iter().enumerate() {
            if t[0] >= self.instruments.len() || t[1] >= self.verbs.len() || t[2] >= self.targets.len() {
                return Err(Error::InvalidVocabulary(format!("triplet {c} {t:?} out of alphabet bounds")));
            }
            if !seen.insert(*t) {
                return Err(Error::InvalidVocabulary(format!("duplicate triplet {t:?}")));
            }
        }
        Ok(())
    }

    /// Vocabulary with generated names `instrument_0`, `verb_0`, ...
    pub fn synthetic(n_i: usize, n_v: usize, n_t: usize, triplets: Vec<[usize; 3]>) -> Result<Self> {
        let names = |p: &str, n: usize| (0..n).map(|k| format!("{p}_{k}")).collect();
        Self::new(names("instrument", n_i), names("verb", n_v), names("target", n_t), triplets)
    }

    pub fn num_classes(&self) -> usize {
        self.triplets.len()
    }

    pub fn instruments(&self) -> &[String] {
        &self.instruments
    }
    pub fn verbs(&self) -> &[String] {
        &self.verbs
    }
    pub fn targets(&self) -> &[String] {
        &self.targets
    }

    pub fn triplet(&self, class: usize) -> Triplet {
        let [i, v, t] = self.triplets[class];
        Triplet { instrument: i, verb: v, target: t }
    }

    pub fn triplet_name(&self, class: usize) -> String {
        let t = self.triplet(class);
        format!("{}+{}+{}", self.instruments[t.instrument], self.verbs[t.verb], self.targets[t.target])
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let v: Self = toml::from_str(s).map_err(|e| Error::InvalidVocabulary(e.to_string()))?;
        v.validate()?;
        Ok(v)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("vocabulary serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.display().to_string()))?;
        Self::from_toml_str(&s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }
}

/// Binary indicator vector over the triplet classes of one frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiLabel {
    bits: Vec<bool>,
}

impl MultiLabel {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn empty(num_classes: usize) -> Self {
        Self { bits: vec![false; num_classes] }
    }

    pub fn from_active(num_classes: usize, active: &[usize]) -> Self {
        let mut bits = vec![false; num_classes];
        for &a in active {
            bits[a] = true;
        }
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn set(&mut self, class: usize, on: bool) {
        self.bits[class] = on;
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(c, _)| c)
    }

    pub fn count_active(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageLabel {
    pub stage: Components,
    pub keys: BTreeSet<StageKey>,
}

fn check_len(label: &MultiLabel, vocab: &TripletVocabulary) -> Result<()> {
    if label.len() != vocab.num_classes() {
        return Err(Error::LengthMismatch { expected: vocab.num_classes(), got: label.len() });
    }
    Ok(())
}

/// Set of stage keys of every active triplet in `label`.
pub fn project_to_stage(label: &MultiLabel, vocab: &TripletVocabulary, stage: Components) -> Result<StageLabel> {
    check_len(label, vocab)?;
    let keys = label.active().map(|c| stage.key(vocab.triplet(c))).collect();
    Ok(StageLabel { stage, keys })
}

/// Exact equality of the projected key sets.
pub fn stage_equal(a: &MultiLabel, b: &MultiLabel, vocab: &TripletVocabulary, stage: Components) -> Result<bool> {
    Ok(project_to_stage(a, vocab, stage)?.keys == project_to_stage(b, vocab, stage)?.keys)
}

/// Triplet class -> group id for one component family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupMap {
    pub family: Components,
    pub group_of: Vec<usize>,
    /// Key of each group, in ascending key order.
    pub keys: Vec<StageKey>,
}

impl GroupMap {
    pub fn num_groups(&self) -> usize {
        self.keys.len()
    }

    fn build(vocab: &TripletVocabulary, family: Components) -> Self {
        let all: BTreeSet<StageKey> = (0..vocab.num_classes()).map(|c| family.key(vocab.triplet(c))).collect();
        let index: BTreeMap<StageKey, usize> = all.iter().enumerate().map(|(g, k)| (*k, g)).collect();
        let group_of = (0..vocab.num_classes()).map(|c| index[&family.key(vocab.triplet(c))]).collect();
        Self { family, group_of, keys: all.into_iter().collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentMaps {
    pub maps: Vec<GroupMap>,
}

impl ComponentMaps {
    /// Map for one family; panics if `family` is not one of [`Components::FAMILIES`].
    pub fn get(&self, family: Components) -> &GroupMap {
        self.maps.iter().find(|m| m.family == family).expect("known family")
    }
}

/// Group maps for `I, V, T, IV, IT` (plus the identity map for `IVT`).
pub fn component_maps(vocab: &TripletVocabulary) -> ComponentMaps {
    ComponentMaps { maps: Components::FAMILIES.iter().map(|&f| GroupMap::build(vocab, f)).collect() }
}
