//! Run configuration: one TOML file plus `key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use polytone::audio::AudioConfig;
use polytone::experiment::LowResourceSetup;
use polytone::model::ModelConfig;
use polytone::training::{Strategy, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Where checkpoints, histories and reports go.
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub setup: LowResourceSetup,
    pub audio: AudioConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub compare: CompareSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory written by `polytone synthlang`.
    pub corpus_dir: PathBuf,
    /// Target-speaker pairs used for fine-tuning; 0 takes all of them.
    pub low_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub sizes: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub failed_cell_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: "runs/default".into(),
            data: DataConfig::default(),
            setup: LowResourceSetup::default(),
            audio: AudioConfig::default(),
            model: ModelConfig::default(),
            pretrain: TrainConfig::default(),
            finetune: TrainConfig::default(),
            compare: CompareSection::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            corpus_dir: "corpus".into(),
            low_size: 100,
        }
    }
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            sizes: vec![20, 100, 500],
            strategies: Strategy::ALL.to_vec(),
            failed_cell_fraction: 0.5,
        }
    }
}

/// Sets `a.b.c = value` in a TOML table; the value is parsed as TOML, falling back to a string.
fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!("override {assignment:?} is not key=value");
    };
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("override {key:?}: {p:?} is not a table"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(root).try_into().context("invalid run configuration")?;
        cfg.audio.validate().context("invalid [audio] section")?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_patch_nested_keys() {
        let cfg = RunConfig::load(None, &["seed=7".into(), "audio.mel_bins=40".into(), "out_dir=/tmp/x".into()]).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.audio.mel_bins, 40);
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x"));
        assert!(RunConfig::load(None, &["nonsense".into()]).is_err());
        assert!(RunConfig::load(None, &["no_such_key=1".into()]).is_err());
    }

    #[test]
    fn desk_config_matches_library_preset() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml");
        let cfg = RunConfig::load(Some(Path::new(path)), &[]).unwrap();
        let preset = polytone::experiment::DeskPreset::new();
        assert_eq!(cfg.audio, preset.audio);
        assert_eq!(cfg.model, preset.model);
        assert_eq!(cfg.pretrain, preset.pretrain);
        assert_eq!(cfg.finetune, preset.finetune);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
    }
}
