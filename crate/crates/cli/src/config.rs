//! Run configuration for the synthetic benchmark commands.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use segfuse_core::synth::{CorruptionConfig, SceneConfig};
use segfuse_core::tensor::ClassSchema;
use segfuse_core::{Error, Result};

/// Everything `synth` needs: scene count, seed, label schema and the two
/// generator configs. All fields have defaults, so a config file only has to
/// name what it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    #[serde(default = "default_scenes")]
    pub scenes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_schema")]
    pub schema: ClassSchema,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub corruption: CorruptionConfig,
}

fn default_scenes() -> usize {
    50
}

pub fn default_schema() -> ClassSchema {
    ClassSchema {
        num_classes: 6,
        foreground_ids: vec![0, 1],
        class_names: Some(
            ["person", "vehicle", "road", "building", "nature", "sky"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        ),
        ignore_id: Some(255),
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scenes: default_scenes(),
            seed: 0,
            schema: default_schema(),
            scene: SceneConfig::default(),
            corruption: CorruptionConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: SynthConfig = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("invalid config JSON: {e}")))?;
        config.schema.validate()?;
        config.scene.validate(&config.schema)?;
        config.corruption.validate()?;
        Ok(config)
    }
}

pub fn load_schema(path: &Path) -> Result<ClassSchema> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let schema: ClassSchema = serde_json::from_str(&text)
        .map_err(|e| Error::format(path, format!("invalid schema JSON: {e}")))?;
    schema.validate()?;
    Ok(schema)
}

pub fn load_train_config(path: &Path) -> Result<segfuse_core::meta::TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: segfuse_core::meta::TrainConfig = serde_json::from_str(&text)
        .map_err(|e| Error::format(path, format!("invalid train config JSON: {e}")))?;
    config.validate()?;
    Ok(config)
}

pub fn pretty_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("config serialization");
    text.push('\n');
    text
}

/// Writes the resolved configuration into the output directory so every run
/// records exactly what produced it.
pub fn echo_run_config(out_dir: &Path, value: &serde_json::Value) -> Result<()> {
    let path = out_dir.join("run_config.json");
    fs::write(&path, pretty_json(value)).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let config = SynthConfig::default();
        config.schema.validate().unwrap();
        config.scene.validate(&config.schema).unwrap();
        config.corruption.validate().unwrap();
    }

    #[test]
    fn partial_config_fills_defaults() {
        let parsed: SynthConfig = serde_json::from_str(r#"{"scenes": 3}"#).unwrap();
        assert_eq!(parsed.scenes, 3);
        assert_eq!(parsed.schema, default_schema());
    }
}
