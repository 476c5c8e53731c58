//! Run configuration: a TOML file whose every key has a default and can be
//! overridden by command-line flags.

use std::path::{Path, PathBuf};

use affordgen::dataset::{ClassSpec, ClassTable};
use affordgen::vae::{ModelConfig, TrainConfig};
use anyhow::Context;
use serde::{Deserialize, Serialize};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "AFFORDGEN_CONFIG";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub dataset: DatasetSettings,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub afford: AffordSettings,
    pub server: ServerSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub checkpoint: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: "corpus".into(),
            checkpoint: "model.ckpt".into(),
            output: "out".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSettings {
    pub dim: usize,
    pub samples_per_class: usize,
    pub seed: u64,
    /// `None` keeps every shape in the training split.
    pub train_fraction: Option<f64>,
    pub augment: bool,
    /// TOML file with `[[class]]` entries replacing the built-in classes.
    pub classes: Option<PathBuf>,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        DatasetSettings {
            dim: 32,
            samples_per_class: 50,
            seed: 7,
            train_fraction: Some(0.8),
            augment: true,
            classes: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffordSettings {
    pub probe_side: f64,
    pub probe_mass: f64,
    pub flatness_tol: u32,
    pub sphere_radius: Option<f64>,
}

impl Default for AffordSettings {
    fn default() -> Self {
        let p = affordgen::affordlab::CubeProbe::default();
        AffordSettings {
            probe_side: p.side,
            probe_mass: p.mass,
            flatness_tol: p.flatness_tol,
            sphere_radius: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSettings {
    pub host: String,
    pub port: u16,
}

impl Default for ServerSettings {
    fn default() -> Self {
        ServerSettings {
            host: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

impl RunConfig {
    /// Reads `explicit`, else the file named by `AFFORDGEN_CONFIG`, else
    /// returns the defaults.
    pub fn load(explicit: Option<&Path>) -> anyhow::Result<RunConfig> {
        let from_env = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        let Some(path) = explicit.map(Path::to_path_buf).or(from_env) else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassFile {
    class: Vec<ClassSpec>,
}

/// Class table from a `[[class]]` TOML file, or the built-in desk classes.
pub fn load_classes(path: Option<&Path>, dim: usize) -> anyhow::Result<ClassTable> {
    let table = match path {
        None => ClassTable::desk(dim),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading class table {}", p.display()))?;
            let file: ClassFile = toml::from_str(&text).with_context(|| format!("parsing class table {}", p.display()))?;
            ClassTable(file.class)
        }
    };
    table.validate(dim)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str("[train]\nepochs = 3\n[model]\nlatent_dim = 8\n").unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.alpha, TrainConfig::default().alpha);
        assert_eq!(c.model.latent_dim, 8);
        assert_eq!(c.model.channel_widths, ModelConfig::default().channel_widths);
        assert_eq!(c.paths, Paths::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[train]\nepoch = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[trian]\n").is_err());
    }

    #[test]
    fn default_round_trips() {
        let text = toml::to_string(&RunConfig::default()).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn class_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("classes.toml");
        std::fs::write(
            &p,
            "[[class]]\nclass_label = \"vase\"\naffordances = [\"contain-ability\"]\n\n\
             [[class]]\nclass_label = \"bench\"\naffordances = [\"sit-ability\"]\n\
             generator = { kind = \"table\", width = [8, 10], depth = [4, 5], leg_height = [3, 4], slab_thickness = [1, 1], leg_count = [2, 4] }\n",
        )
        .unwrap();
        let t = load_classes(Some(&p), 16).unwrap();
        assert_eq!(t.labels().collect::<Vec<_>>(), vec!["vase", "bench"]);
        assert!(t.get("bench").unwrap().generator.is_some());
        assert!(load_classes(Some(&p), 4).is_err());
    }
}
