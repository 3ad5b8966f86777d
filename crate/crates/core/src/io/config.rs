//! Attack configuration files: one flat TOML table, every key optional,
//! unknown keys rejected.
//!
//! ```toml
//! alpha = 0.2
//! beta = 0.15
//! target_class = "bus"
//! patch_size = 16
//! lr = 0.01
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augmentation::AugmentationRanges;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::matching::CandidateSelection;
use crate::projection::ProjectionParams;
use crate::trainer::AttackConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FlatConfig {
    alpha: f64,
    beta: f64,
    rho_w: f64,
    rho_h: f64,
    min_area_frac: f64,
    ar_min: f64,
    ar_max: f64,
    brightness_lo: f64,
    brightness_hi: f64,
    contrast_lo: f64,
    contrast_hi: f64,
    noise_std: f64,
    augmentation_seed: u64,
    lambda1: f64,
    lambda2: f64,
    t_conf: f64,
    t_iou: f64,
    eval_iou: f64,
    target_class: String,
    patch_size: usize,
    lr: f64,
    iterations: u64,
    batch_size: usize,
    seed: u64,
    candidate_selection: CandidateSelection,
    checkpoint_every: u64,
    models: Vec<String>,
}

impl Default for FlatConfig {
    fn default() -> Self {
        FlatConfig::from(&AttackConfig::default())
    }
}

impl From<&AttackConfig> for FlatConfig {
    fn from(c: &AttackConfig) -> Self {
        let (p, a, w) = (&c.projection, &c.augmentation, &c.weights);
        FlatConfig {
            alpha: p.alpha,
            beta: p.beta,
            rho_w: p.rho_w,
            rho_h: p.rho_h,
            min_area_frac: p.min_area_frac,
            ar_min: p.ar_min,
            ar_max: p.ar_max,
            brightness_lo: a.brightness_lo,
            brightness_hi: a.brightness_hi,
            contrast_lo: a.contrast_lo,
            contrast_hi: a.contrast_hi,
            noise_std: a.noise_std,
            augmentation_seed: a.seed,
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            t_conf: c.t_conf,
            t_iou: c.t_iou,
            eval_iou: c.eval_iou,
            target_class: c.target_class.clone(),
            patch_size: c.patch_size,
            lr: c.learning_rate,
            iterations: c.iterations,
            batch_size: c.batch_size,
            seed: c.seed,
            candidate_selection: c.candidate_selection,
            checkpoint_every: c.checkpoint_every,
            models: c.models.clone(),
        }
    }
}

impl From<FlatConfig> for AttackConfig {
    fn from(f: FlatConfig) -> Self {
        AttackConfig {
            projection: ProjectionParams {
                alpha: f.alpha,
                beta: f.beta,
                rho_w: f.rho_w,
                rho_h: f.rho_h,
                min_area_frac: f.min_area_frac,
                ar_min: f.ar_min,
                ar_max: f.ar_max,
            },
            augmentation: AugmentationRanges {
                brightness_lo: f.brightness_lo,
                brightness_hi: f.brightness_hi,
                contrast_lo: f.contrast_lo,
                contrast_hi: f.contrast_hi,
                noise_std: f.noise_std,
                seed: f.augmentation_seed,
            },
            weights: LossWeights {
                lambda1: f.lambda1,
                lambda2: f.lambda2,
            },
            t_conf: f.t_conf,
            t_iou: f.t_iou,
            eval_iou: f.eval_iou,
            target_class: f.target_class,
            patch_size: f.patch_size,
            learning_rate: f.lr,
            iterations: f.iterations,
            batch_size: f.batch_size,
            seed: f.seed,
            candidate_selection: f.candidate_selection,
            checkpoint_every: f.checkpoint_every,
            models: f.models,
        }
    }
}

/// Parses and validates a config document. Keys left out keep their
/// defaults.
pub fn parse_config(text: &str) -> Result<AttackConfig> {
    let flat: FlatConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let config = AttackConfig::from(flat);
    config.validate()?;
    Ok(config)
}

/// Like [`parse_config`], with `key=value` overrides applied on top of
/// the document. Values are read as TOML; anything that does not parse
/// as a TOML value is taken as a bare string (`target_class=truck`).
pub fn parse_config_with_overrides(text: &str, overrides: &[String]) -> Result<AttackConfig> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        table.insert(key.to_string(), value);
    }
    let flat: FlatConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let config = AttackConfig::from(flat);
    config.validate()?;
    Ok(config)
}

/// Renders every key, so the output documents the full configuration.
/// Fails for integers TOML cannot hold (above `i64::MAX`).
pub fn config_to_string(config: &AttackConfig) -> Result<String> {
    toml::to_string(&FlatConfig::from(config)).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<AttackConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn save_config(config: &AttackConfig, path: &Path) -> Result<()> {
    std::fs::write(path, config_to_string(config)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), AttackConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = AttackConfig::default();
        c.projection.alpha = 0.35;
        c.patch_size = 24;
        c.models = vec!["a.bin".into(), "b.bin".into()];
        c.candidate_selection = CandidateSelection::AttackedCarOnly;
        assert_eq!(parse_config(&config_to_string(&c).unwrap()).unwrap(), c);
    }

    #[test]
    fn overrides_win_over_the_document() {
        let over = ["seed=9".to_string(), "target_class=truck".to_string(), "lr = 0.5".to_string()];
        let c = parse_config_with_overrides("seed = 3\nlr = 0.1", &over).unwrap();
        assert_eq!((c.seed, c.target_class.as_str(), c.learning_rate), (9, "truck", 0.5));
        assert!(parse_config_with_overrides("", &["sede=1".to_string()]).is_err());
        assert!(parse_config_with_overrides("", &["seed".to_string()]).is_err());
    }

    #[test]
    fn unknown_and_mistyped_keys_fail() {
        let e = parse_config("alpah = 0.2").unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("alpah")), "{e}");
        assert!(parse_config("patch_size = \"big\"").is_err());
        assert!(parse_config("patch_size = 4").is_err());
        assert!(parse_config("[projection]\nalpha = 1.0").is_err());
    }
}
