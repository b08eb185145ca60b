//! Model and run configuration.
//!
//! Every default reproduces the reference regimen: q = 128, three branch
//! layers, 8 attention heads, a 2×128 trunk, 180-step history and horizon,
//! and a 45/10/45 chronological split. An empty JSON object is a valid
//! run configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StoneError};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    Fcn,
    Gru,
    Lstm,
    Transformer,
}

impl BranchKind {
    pub const ALL: [BranchKind; 4] = [
        BranchKind::Fcn,
        BranchKind::Lstm,
        BranchKind::Gru,
        BranchKind::Transformer,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BranchKind::Fcn => "fcn",
            BranchKind::Gru => "gru",
            BranchKind::Lstm => "lstm",
            BranchKind::Transformer => "transformer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.label() == s.to_ascii_lowercase())
    }
}

impl std::fmt::Display for BranchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    pub kind: BranchKind,
    pub n_sensors: usize,
    pub k_hist: usize,
    pub q: usize,
    pub depth: usize,
    pub heads: usize,
}

impl BranchConfig {
    pub fn validate(&self) -> Result<()> {
        positive("model.q", self.q)?;
        positive("model.depth", self.depth)?;
        positive("data.n_sensors", self.n_sensors)?;
        positive("data.k_hist", self.k_hist)?;
        if self.kind == BranchKind::Transformer {
            if self.heads == 0 || !self.q.is_multiple_of(self.heads) {
                return Err(StoneError::config(
                    "model.heads",
                    format!("{} heads do not divide q = {}", self.heads, self.q),
                ));
            }
            if !self.q.is_multiple_of(2) {
                return Err(StoneError::config("model.q", "transformer branch needs an even q"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrunkConfig {
    pub q: usize,
    /// Output channels per point (1 for effective dose).
    pub p: usize,
    pub k_fut: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl TrunkConfig {
    pub const COORD_DIM: usize = 2;

    /// Width of the flat trunk output, `q·p·K_fut`.
    pub fn out_width(&self) -> usize {
        self.q * self.p * self.k_fut
    }

    /// Flat output column of `T[i, j, k]`: k fastest, then j, then i.
    pub fn flat_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.p + j) * self.k_fut + k
    }

    pub fn validate(&self) -> Result<()> {
        positive("model.q", self.q)?;
        positive("model.p", self.p)?;
        positive("data.k_fut", self.k_fut)?;
        positive("model.trunk_hidden", self.hidden)?;
        positive("model.trunk_layers", self.layers)
    }
}

/// Fully resolved architecture of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub branch: BranchConfig,
    pub trunk: TrunkConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.branch.validate()?;
        self.trunk.validate()?;
        if self.branch.q != self.trunk.q {
            return Err(StoneError::config(
                "model.q",
                format!("branch q = {} but trunk q = {}", self.branch.q, self.trunk.q),
            ));
        }
        Ok(())
    }

    pub fn k_hist(&self) -> usize {
        self.branch.k_hist
    }

    pub fn k_fut(&self) -> usize {
        self.trunk.k_fut
    }
}

fn positive(field: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(StoneError::config(field, "must be at least 1"));
    }
    Ok(())
}

fn default_k() -> usize {
    180
}

fn default_split() -> [f64; 3] {
    [0.45, 0.10, 0.45]
}

/// Parameters of the synthetic stand-in dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    #[serde(default = "SynthParams::default_seed")]
    pub seed: u64,
    #[serde(default = "SynthParams::default_sensors")]
    pub sensors: usize,
    /// `[lat cells, lon cells]`
    #[serde(default = "SynthParams::default_grid")]
    pub grid: [usize; 2],
    #[serde(default = "SynthParams::default_days")]
    pub days: usize,
    #[serde(default = "SynthParams::default_cycles")]
    pub cycles: f64,
}

impl SynthParams {
    fn default_seed() -> u64 {
        7
    }
    fn default_sensors() -> usize {
        4
    }
    fn default_grid() -> [usize; 2] {
        [8, 16]
    }
    fn default_days() -> usize {
        400
    }
    pub fn default_cycles() -> f64 {
        2.0
    }
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: Self::default_seed(),
            sensors: Self::default_sensors(),
            grid: Self::default_grid(),
            days: Self::default_days(),
            cycles: Self::default_cycles(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `sensors.csv` and `fields.stnf`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensors: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<PathBuf>,
    /// Generate the dataset in memory instead of reading files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthParams>,
    #[serde(default = "default_k")]
    pub k_hist: usize,
    #[serde(default = "default_k")]
    pub k_fut: usize,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            sensors: None,
            fields: None,
            synth: None,
            k_hist: default_k(),
            k_fut: default_k(),
            split: default_split(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "ModelSection::default_branch")]
    pub branch: BranchKind,
    #[serde(default = "ModelSection::default_width")]
    pub q: usize,
    #[serde(default = "ModelSection::default_depth")]
    pub depth: usize,
    #[serde(default = "ModelSection::default_heads")]
    pub heads: usize,
    #[serde(default = "ModelSection::default_width")]
    pub trunk_hidden: usize,
    #[serde(default = "ModelSection::default_trunk_layers")]
    pub trunk_layers: usize,
    #[serde(default = "ModelSection::default_p")]
    pub p: usize,
}

impl ModelSection {
    fn default_branch() -> BranchKind {
        BranchKind::Gru
    }
    fn default_width() -> usize {
        128
    }
    fn default_depth() -> usize {
        3
    }
    fn default_heads() -> usize {
        8
    }
    fn default_trunk_layers() -> usize {
        2
    }
    fn default_p() -> usize {
        1
    }

    pub fn resolve(&self, kind: BranchKind, n_sensors: usize, k_hist: usize, k_fut: usize) -> ModelConfig {
        ModelConfig {
            branch: BranchConfig {
                kind,
                n_sensors,
                k_hist,
                q: self.q,
                depth: self.depth,
                heads: self.heads,
            },
            trunk: TrunkConfig {
                q: self.q,
                p: self.p,
                k_fut,
                hidden: self.trunk_hidden,
                layers: self.trunk_layers,
            },
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            branch: Self::default_branch(),
            q: Self::default_width(),
            depth: Self::default_depth(),
            heads: Self::default_heads(),
            trunk_hidden: Self::default_width(),
            trunk_layers: Self::default_trunk_layers(),
            p: Self::default_p(),
        }
    }
}

/// Top-level JSON run document: `data`, `model`, `train`, `seed`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "<root>".to_string() } else { path };
            StoneError::config(field, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks that serde cannot express; errors carry the field path.
    pub fn validate(&self) -> Result<()> {
        positive("data.k_hist", self.data.k_hist)?;
        positive("data.k_fut", self.data.k_fut)?;
        let split = self.data.split;
        if split.iter().any(|f| !(0.0..=1.0).contains(f)) || (split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(StoneError::config("data.split", format!("fractions {split:?} must be in [0,1] and sum to 1")));
        }
        if self.data.sensors.is_some() != self.data.fields.is_some() {
            return Err(StoneError::config("data.sensors", "`sensors` and `fields` must be given together"));
        }
        let m = &self.model;
        positive("model.q", m.q)?;
        positive("model.depth", m.depth)?;
        positive("model.trunk_hidden", m.trunk_hidden)?;
        positive("model.trunk_layers", m.trunk_layers)?;
        positive("model.p", m.p)?;
        if m.branch == BranchKind::Transformer && (m.heads == 0 || !m.q.is_multiple_of(m.heads)) {
            return Err(StoneError::config("model.heads", format!("{} heads do not divide q = {}", m.heads, m.q)));
        }
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_reference_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg.data.k_hist, 180);
        assert_eq!(cfg.data.k_fut, 180);
        assert_eq!(cfg.data.split, [0.45, 0.10, 0.45]);
        assert_eq!(cfg.model.q, 128);
        assert_eq!(cfg.model.depth, 3);
        assert_eq!(cfg.model.heads, 8);
        assert_eq!((cfg.model.trunk_hidden, cfg.model.trunk_layers), (128, 2));
        assert_eq!(cfg.train.lr0, 1e-3);
        assert_eq!(cfg.train.max_epochs, 500);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_json(r#"{"model": {"q": 16, "width": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("width"), "{err}");
    }

    #[test]
    fn type_errors_carry_field_path() {
        let err = RunConfig::from_json(r#"{"train": {"lr0": "fast"}}"#).unwrap_err();
        assert!(matches!(err, StoneError::Config { ref field, .. } if field == "train.lr0"), "{err}");
        let err = RunConfig::from_json(r#"{"model": {"branch": "cnn"}}"#).unwrap_err();
        assert!(matches!(err, StoneError::Config { ref field, .. } if field == "model.branch"), "{err}");
    }

    #[test]
    fn bad_split_names_field() {
        let err = RunConfig::from_json(r#"{"data": {"split": [0.5, 0.5, 0.5]}}"#).unwrap_err();
        assert!(matches!(err, StoneError::Config { ref field, .. } if field == "data.split"));
    }

    #[test]
    fn flat_index_is_k_fastest() {
        let t = TrunkConfig { q: 3, p: 2, k_fut: 4, hidden: 8, layers: 2 };
        assert_eq!(t.flat_index(0, 0, 1), 1);
        assert_eq!(t.flat_index(0, 1, 0), 4);
        assert_eq!(t.flat_index(1, 0, 0), 8);
        assert_eq!(t.flat_index(2, 1, 3), t.out_width() - 1);
    }

    #[test]
    fn q_mismatch_is_config_error() {
        let mut m = ModelSection::default().resolve(BranchKind::Gru, 2, 4, 4);
        m.trunk.q = 7;
        assert!(matches!(m.validate(), Err(StoneError::Config { .. })));
    }
}
