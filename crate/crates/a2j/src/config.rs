//! Run configuration: flat key=value settings resolved from defaults, an
//! optional config file, and command-line flags (flags win over file, file
//! over defaults). Every run serializes a manifest of the resolved values
//! with their provenance; a manifest is itself a loadable config file.

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{ModelConfig, Toggles};
use crate::train_eval::ablation::{apply_anchor_setting, AblationBudget};
use crate::train_eval::TrainConfig;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Default,
    File,
    Flag,
}

impl Provenance {
    fn label(self) -> &'static str {
        match self {
            Provenance::Default => "default",
            Provenance::File => "file",
            Provenance::Flag => "flag",
        }
    }
}

/// `(key, default, constraint description)`.
const KEYS: &[(&str, &str, &str)] = &[
    ("image_size", "64", "positive multiple of the anchor grid side"),
    ("d_model", "64", "divisible by 4 and by heads"),
    ("heads", "2", "positive, divides d_model"),
    ("points", "2", "positive sampling points per level"),
    ("encoder_layers", "2", "non-negative"),
    ("decoder_layers", "2", "non-negative"),
    ("ffn_dim", "128", "positive"),
    ("in_plane_count", "16", "square number whose side divides image_size"),
    ("depth_count", "3", "positive"),
    ("n_joints", "42", "positive, 2x joints per hand"),
    ("gn_groups", "8", "positive"),
    ("projection_convs", "1", "positive"),
    ("head_hidden", "64", "positive"),
    ("pre_norm", "false", "true|false"),
    ("transformer", "true", "true|false"),
    ("a2j_fusion", "true", "true|false"),
    ("learned_weights", "true", "true|false"),
    ("msdam", "true", "true|false"),
    ("alpha", "0.5", "positive"),
    ("tau1", "1", "positive"),
    ("tau2", "3", "positive"),
    ("lambda1", "3", "positive"),
    ("lambda2", "1", "positive"),
    ("learning_rate", "0.0001", "positive"),
    ("weight_decay", "0.0001", "non-negative"),
    ("epochs", "10", "non-negative"),
    ("batch_size", "16", "positive"),
    ("seed", "1", "u64"),
    ("threads", "1", "positive; 1 is strict single-threaded"),
    ("train_samples", "2000", "positive"),
    ("eval_samples", "256", "positive"),
    ("overlap_probability", "0.5", "in [0,1]"),
    ("data_seed", "10000", "u64"),
];

#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
    provenance: BTreeMap<String, Provenance>,
}

impl Default for Settings {
    fn default() -> Self {
        let mut values = BTreeMap::new();
        let mut provenance = BTreeMap::new();
        for (k, v, _) in KEYS {
            values.insert(k.to_string(), v.to_string());
            provenance.insert(k.to_string(), Provenance::Default);
        }
        Settings { values, provenance }
    }
}

impl Settings {
    fn constraint(key: &str) -> &'static str {
        KEYS.iter()
            .find(|(k, _, _)| *k == key)
            .map(|(_, _, c)| *c)
            .unwrap_or("known key")
    }

    fn set(&mut self, key: &str, value: &str, from: Provenance) -> Result<()> {
        if !self.values.contains_key(key) {
            return Err(Error::config(key, "unknown configuration key"));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        self.provenance.insert(key.to_string(), from);
        Ok(())
    }

    /// Load `key=value` lines; `#` starts a comment, blank lines are skipped.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let text = std::fs::read_to_string(&path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(
                    format!("line {}", lineno + 1),
                    "expected key=value",
                ));
            };
            self.set(key.trim(), value, Provenance::File)?;
        }
        Ok(())
    }

    pub fn apply_flag(&mut self, key: &str, value: &str) -> Result<()> {
        self.set(key, value, Provenance::Flag)
    }

    /// Apply a `key=value` override string from the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let Some((key, value)) = kv.split_once('=') else {
            return Err(Error::config(kv, "expected key=value"));
        };
        self.apply_flag(key.trim(), value)
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.values[key]
            .parse()
            .map_err(|_| Error::config(key, Self::constraint(key)))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.values[key]
            .parse()
            .map_err(|_| Error::config(key, Self::constraint(key)))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.values[key]
            .parse()
            .map_err(|_| Error::config(key, Self::constraint(key)))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool> {
        match self.values[key].as_str() {
            "true" | "1" | "on" => Ok(true),
            "false" | "0" | "off" => Ok(false),
            _ => Err(Error::config(key, "true|false")),
        }
    }

    /// Build the model/train configuration from the resolved settings.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut model = ModelConfig {
            image_size: self.get_usize("image_size")?,
            d_model: self.get_usize("d_model")?,
            heads: self.get_usize("heads")?,
            points: self.get_usize("points")?,
            encoder_layers: self.get_usize("encoder_layers")?,
            decoder_layers: self.get_usize("decoder_layers")?,
            ffn_dim: self.get_usize("ffn_dim")?,
            anchor_stride: 16,
            depth_values: vec![],
            n_joints: self.get_usize("n_joints")?,
            trunk_channels: default_trunk(self.get_usize("d_model")?),
            gn_groups: self.get_usize("gn_groups")?,
            projection_convs: self.get_usize("projection_convs")?,
            head_hidden: self.get_usize("head_hidden")?,
            pre_norm: self.get_bool("pre_norm")?,
            toggles: Toggles {
                transformer: self.get_bool("transformer")?,
                a2j_fusion: self.get_bool("a2j_fusion")?,
                learned_weights: self.get_bool("learned_weights")?,
                msdam: self.get_bool("msdam")?,
            },
        };
        apply_anchor_setting(
            &mut model,
            self.get_usize("in_plane_count")?,
            self.get_usize("depth_count")?,
        )?;
        let positive = |key: &str, v: f64| -> Result<f64> {
            if v > 0.0 {
                Ok(v)
            } else {
                Err(Error::config(key, "must be positive"))
            }
        };
        let loss = LossConfig {
            alpha: positive("alpha", self.get_f64("alpha")?)?,
            tau1: positive("tau1", self.get_f64("tau1")?)?,
            tau2: positive("tau2", self.get_f64("tau2")?)?,
            lambda1: positive("lambda1", self.get_f64("lambda1")?)?,
            lambda2: positive("lambda2", self.get_f64("lambda2")?)?,
        };
        let cfg = TrainConfig {
            model,
            loss,
            learning_rate: positive("learning_rate", self.get_f64("learning_rate")?)?,
            weight_decay: self.get_f64("weight_decay")?,
            epochs: self.get_usize("epochs")?,
            batch_size: self.get_usize("batch_size")?,
            seed: self.get_u64("seed")?,
            threads: self.get_usize("threads")?.max(1),
        };
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn synth_samples(&self) -> Result<(usize, usize)> {
        Ok((self.get_usize("train_samples")?, self.get_usize("eval_samples")?))
    }

    pub fn ablation_budget(&self) -> Result<AblationBudget> {
        Ok(AblationBudget {
            train_samples: self.get_usize("train_samples")?,
            eval_samples: self.get_usize("eval_samples")?,
            epochs: self.get_usize("epochs")?,
            batch_size: self.get_usize("batch_size")?,
            data_seed: self.get_u64("data_seed")?,
        })
    }

    /// The run manifest: resolved settings plus provenance, loadable as a
    /// config file. Re-running from it reproduces the run.
    pub fn manifest(&self, subcommand: &str, outputs: &[(&str, String)]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# a2j run manifest");
        let _ = writeln!(out, "# subcommand: {subcommand}");
        let _ = writeln!(out, "# code_version: {}", env!("CARGO_PKG_VERSION"));
        for (k, v) in outputs {
            let _ = writeln!(out, "# output {k}: {v}");
        }
        for (key, value) in &self.values {
            let _ = writeln!(
                out,
                "{key}={value}  # {}",
                self.provenance[key].label()
            );
        }
        out
    }
}

fn default_trunk(d_model: usize) -> Vec<usize> {
    let w = (d_model / 4).max(4);
    vec![w, 2 * w, d_model, d_model, d_model]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_to_desk_config() {
        let s = Settings::default();
        let cfg = s.train_config().unwrap();
        assert_eq!(cfg.model.image_size, 64);
        assert_eq!(cfg.model.anchor_stride, 16);
        assert_eq!(cfg.model.depth_values, vec![-100.0, 0.0, 100.0]);
        assert_eq!(cfg.learning_rate, 1e-4);
        assert_eq!(cfg.weight_decay, 1e-4);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let mut s = Settings::default();
        match s.apply_flag("learningrate", "0.1") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "learningrate"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_value_names_key_and_constraint() {
        let mut s = Settings::default();
        s.apply_flag("epochs", "three").unwrap();
        match s.train_config() {
            Err(Error::Config { key, constraint }) => {
                assert_eq!(key, "epochs");
                assert!(!constraint.is_empty());
            }
            other => panic!("expected config error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn flags_beat_file_beats_default() {
        let dir = std::env::temp_dir().join("a2j_cfg_test.cfg");
        std::fs::write(&dir, "epochs=5\nseed=99\n# comment\n\nbatch_size=8\n").unwrap();
        let mut s = Settings::default();
        s.apply_file(&dir).unwrap();
        s.apply_flag("seed", "123").unwrap();
        let cfg = s.train_config().unwrap();
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.seed, 123);
        assert_eq!(cfg.batch_size, 8);
        std::fs::remove_file(dir).ok();
    }

    #[test]
    fn manifest_round_trips_as_config() {
        let mut s = Settings::default();
        s.apply_flag("epochs", "7").unwrap();
        s.apply_flag("in_plane_count", "256").unwrap();
        let manifest = s.manifest("train", &[("checkpoint", "x.ckpt".into())]);
        let path = std::env::temp_dir().join("a2j_manifest_test.cfg");
        std::fs::write(&path, &manifest).unwrap();
        let mut s2 = Settings::default();
        s2.apply_file(&path).unwrap();
        let a = s.train_config().unwrap();
        let b = s2.train_config().unwrap();
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.model.anchor_stride, b.model.anchor_stride);
        std::fs::remove_file(path).ok();
    }
}
