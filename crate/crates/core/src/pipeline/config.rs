use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::dataio::GeneratorConfig;
use crate::encoders::{GatConfig, VitConfig};
use crate::fusion::{FusionConfig, FusionVariant};
use crate::{Error, Result};

/// Optimizer and regularization settings of one fusion head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub batch_size: usize,
    /// Cross-attention heads (dual variant only).
    pub heads: usize,
    pub hidden_dim: usize,
}

impl HeadConfig {
    pub fn concat() -> Self {
        HeadConfig {
            learning_rate: 1e-2,
            weight_decay: 1e-4,
            dropout: 0.5,
            batch_size: 16,
            heads: 8,
            hidden_dim: 64,
        }
    }

    pub fn dual() -> Self {
        HeadConfig {
            learning_rate: 5e-4,
            weight_decay: 3e-5,
            dropout: 0.3,
            batch_size: 16,
            heads: 8,
            hidden_dim: 64,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.dropout)
            && self.batch_size > 0
            && self.heads > 0
            && self.hidden_dim > 0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid {name} head settings {self:?}")));
        }
        Ok(())
    }
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig::concat()
    }
}

/// First training stage: the ViT alone under its classification loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VitStageConfig {
    pub model: VitConfig,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for VitStageConfig {
    fn default() -> Self {
        VitStageConfig {
            model: VitConfig::default(),
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 16,
            epochs: 50,
        }
    }
}

/// Second training stage: GAT encoders, fusion and classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionStageConfig {
    pub gat: GatConfig,
    pub epochs: usize,
    pub concat: HeadConfig,
    /// Missing keys fall back to the dual defaults, not the concat ones.
    #[serde(deserialize_with = "dual_head")]
    pub dual: HeadConfig,
}

fn dual_head<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<HeadConfig, D::Error> {
    let given = serde_json::Map::<String, serde_json::Value>::deserialize(d)?;
    let mut merged = match serde_json::to_value(HeadConfig::dual()) {
        Ok(serde_json::Value::Object(m)) => m,
        _ => unreachable!("HeadConfig serializes to an object"),
    };
    merged.extend(given);
    serde_json::from_value(serde_json::Value::Object(merged)).map_err(serde::de::Error::custom)
}

impl Default for FusionStageConfig {
    fn default() -> Self {
        FusionStageConfig {
            gat: GatConfig::default(),
            epochs: 100,
            concat: HeadConfig::concat(),
            dual: HeadConfig::dual(),
        }
    }
}

impl FusionStageConfig {
    /// Unimodal ablations share the concatenation head's settings.
    pub fn head(&self, variant: FusionVariant) -> &HeadConfig {
        match variant {
            FusionVariant::Dual => &self.dual,
            _ => &self.concat,
        }
    }

    pub fn model(&self, variant: FusionVariant) -> FusionConfig {
        let head = self.head(variant);
        FusionConfig {
            gat: self.gat.clone(),
            heads: head.heads,
            hidden_dim: head.hidden_dim,
            classes: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub folds: usize,
    /// Stratify folds by (class, site) instead of class alone.
    pub stratify_by_site: bool,
    /// Synthetic cohort settings. `patch_side` is also used when the cohort
    /// is loaded from `manifest`.
    pub cohort: GeneratorConfig,
    /// Load this cohort instead of generating one.
    pub manifest: Option<PathBuf>,
    pub harmonize: bool,
    /// Neighbors per node in both graph types.
    pub k: usize,
    pub vit: VitStageConfig,
    pub fusion: FusionStageConfig,
    pub variants: Vec<FusionVariant>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            folds: 10,
            stratify_by_site: false,
            cohort: GeneratorConfig::default(),
            manifest: None,
            harmonize: true,
            k: crate::graphs::DEFAULT_K,
            vit: VitStageConfig::default(),
            fusion: FusionStageConfig::default(),
            variants: vec![FusionVariant::Concat, FusionVariant::Dual],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidArgument(format!("{} folds; need at least 2", self.folds)));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidArgument("no fusion variants selected".into()));
        }
        self.vit.model.validate()?;
        let v = &self.vit;
        if !(v.learning_rate > 0.0) || v.weight_decay < 0.0 || v.batch_size == 0 {
            return Err(Error::InvalidArgument(format!("invalid ViT stage settings {v:?}")));
        }
        self.fusion.concat.validate("concat")?;
        self.fusion.dual.validate("dual")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_defaults() {
        let c = ExperimentConfig::default();
        let h = c.fusion.head(FusionVariant::Concat);
        assert_eq!((h.learning_rate, h.weight_decay, h.dropout, h.batch_size, h.hidden_dim), (1e-2, 1e-4, 0.5, 16, 64));
        let h = c.fusion.head(FusionVariant::Dual);
        assert_eq!((h.learning_rate, h.weight_decay, h.dropout, h.batch_size, h.heads), (5e-4, 3e-5, 0.3, 16, 8));
        assert_eq!(c.folds, 10);
        assert_eq!(c.fusion.head(FusionVariant::StructuralOnly), &c.fusion.concat);
    }

    #[test]
    fn keys_load_verbatim() {
        let json = r#"{"folds": 5, "fusion": {"dual": {"learning_rate": 0.001, "heads": 4}}}"#;
        let c: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.folds, 5);
        assert_eq!(c.fusion.dual.learning_rate, 1e-3);
        assert_eq!(c.fusion.dual.heads, 4);
        assert_eq!(c.fusion.dual.dropout, HeadConfig::dual().dropout);
        let text = c.to_json();
        for key in ["learning_rate", "weight_decay", "dropout", "batch_size", "folds", "heads", "hidden_dim"] {
            assert!(text.contains(&format!("\"{key}\"")), "{key}");
        }
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = ExperimentConfig::default();
        c.fusion.dual.dropout = 1.0;
        assert!(c.validate().is_err());
        let c = ExperimentConfig { folds: 1, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
