//! Study configuration, read from a single TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use flustack_core::components::{Component, KdeComponent, SarComponent};
use flustack_core::ensemble::{Scheme, TrainOptions};
use flustack_core::season::GeneratorConfig;
use flustack_core::{ComponentId, DataSplit, Season, SeasonCollection, Target};

use crate::Invalid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_targets")]
    pub targets: Vec<String>,
    pub data: DataConfig,
    /// Generator settings used by `simulate` to write the data files.
    pub simulate: Option<GeneratorConfig>,
    pub split: SplitConfig,
    #[serde(default)]
    pub components: ComponentsConfig,
    pub ensemble: EnsembleConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_targets() -> Vec<String> {
    Target::ALL.iter().map(|t| t.as_str().to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub wili: PathBuf,
    pub thresholds: Option<PathBuf>,
}

/// Either the last `test_last` seasons are held out, or both lists are given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub test_last: Option<usize>,
    pub training: Option<Vec<Season>>,
    pub test: Option<Vec<Season>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentsConfig {
    pub kde: Option<KdeSettings>,
    pub sar: Option<SarSettings>,
    #[serde(default)]
    pub external: Vec<ExternalConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdeSettings {
    #[serde(default = "default_samples")]
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SarSettings {
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    flustack_core::components::DEFAULT_SAMPLES
}

fn default_order() -> usize {
    2
}

/// Densities produced elsewhere, one file for cross-validation and one for test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    pub id: ComponentId,
    pub cv: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub uncertainty_components: Vec<ComponentId>,
    #[serde(default)]
    pub train: TrainOptions,
}

/// A parsed config with paths resolved and fields checked.
#[derive(Debug, Clone)]
pub struct Study {
    pub config: StudyConfig,
    pub config_sha256: String,
    pub seed: u64,
    pub out: PathBuf,
    pub wili: PathBuf,
    pub thresholds: Option<PathBuf>,
    pub targets: Vec<Target>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Study {
    /// Reads and checks a config file. Relative paths inside it are taken
    /// relative to the file's directory.
    pub fn load(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<Study, Invalid> {
        let bytes = std::fs::read(path).map_err(|e| Invalid(format!("cannot read config {}: {e}", path.display())))?;
        let text = String::from_utf8(bytes.clone()).map_err(|_| Invalid("config is not UTF-8".into()))?;
        let config: StudyConfig =
            toml::from_str(&text).map_err(|e| Invalid(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Study::from_config(config, base, crate::manifest::sha256_hex(&bytes), seed, out)
    }

    pub fn from_config(
        mut config: StudyConfig,
        base: &Path,
        config_sha256: String,
        seed: Option<u64>,
        out: Option<&Path>,
    ) -> Result<Study, Invalid> {
        let targets = config
            .targets
            .iter()
            .map(|t| t.parse::<Target>().map_err(|e| Invalid(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        if targets.is_empty() {
            return Err(Invalid("no targets configured".into()));
        }
        if config.ensemble.schemes.is_empty() {
            return Err(Invalid("no ensemble schemes configured".into()));
        }
        let roster = roster_ids(&config.components);
        if roster.is_empty() {
            return Err(Invalid("no components configured".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = roster.iter().find(|c| !seen.insert(*c)) {
            return Err(Invalid(format!("component {dup} is configured twice")));
        }
        if let Some(c) = config
            .ensemble
            .uncertainty_components
            .iter()
            .find(|c| !roster.contains(c))
        {
            return Err(Invalid(format!("uncertainty component {c} is not in the component roster")));
        }
        for ext in &mut config.components.external {
            if !ext.id.as_str().starts_with("ext:") {
                return Err(Invalid(format!("external component {} must be named ext:<name>", ext.id)));
            }
            ext.cv = resolve(base, &ext.cv);
            ext.test = resolve(base, &ext.test);
        }
        if let Some(sar) = &config.components.sar {
            if sar.order == 0 || sar.samples == 0 {
                return Err(Invalid("sar order and samples must be positive".into()));
            }
        }
        if config.components.kde.as_ref().is_some_and(|k| k.samples == 0) {
            return Err(Invalid("kde samples must be positive".into()));
        }
        config.ensemble.train.base.validate().map_err(|e| Invalid(e.to_string()))?;
        config.ensemble.train.grid.validate().map_err(|e| Invalid(e.to_string()))?;
        if let Some(g) = &config.simulate {
            g.validate().map_err(|e| Invalid(e.to_string()))?;
        }
        let split = &config.split;
        match (split.test_last, &split.training, &split.test) {
            (Some(_), None, None) | (None, Some(_), Some(_)) => {}
            _ => return Err(Invalid("split needs either test_last or both training and test lists".into())),
        }
        let out = match out {
            Some(o) => o.to_path_buf(),
            None => resolve(base, &config.output),
        };
        Ok(Study {
            wili: resolve(base, &config.data.wili),
            thresholds: config.data.thresholds.as_ref().map(|t| resolve(base, t)),
            seed: seed.unwrap_or(config.seed),
            config,
            config_sha256,
            out,
            targets,
        })
    }

    /// Checks that every input file exists.
    pub fn check_inputs(&self) -> Result<(), Invalid> {
        let mut files = vec![self.wili.clone()];
        files.extend(self.thresholds.clone());
        for ext in &self.config.components.external {
            files.push(ext.cv.clone());
            files.push(ext.test.clone());
        }
        match files.iter().find(|f| !f.is_file()) {
            Some(f) => Err(Invalid(format!("input file {} does not exist", f.display()))),
            None => Ok(()),
        }
    }

    pub fn split(&self, data: &SeasonCollection) -> Result<DataSplit, Invalid> {
        let present: std::collections::BTreeSet<Season> = data.keys().map(|(_, s)| *s).collect();
        let split = match (&self.config.split.test_last, &self.config.split.training, &self.config.split.test) {
            (Some(n), _, _) => DataSplit::last_n_test(present.iter().copied(), *n),
            (_, Some(train), Some(test)) => DataSplit::new(train.clone(), test.clone()),
            _ => unreachable!("checked when the study was loaded"),
        }
        .map_err(|e| Invalid(e.to_string()))?;
        if let Some(s) = split.training().iter().chain(split.test()).find(|s| !present.contains(s)) {
            return Err(Invalid(format!("split season {s} is not in the data")));
        }
        Ok(split)
    }

    /// Components fitted here, in roster order.
    pub fn builtin_components(&self) -> Vec<Box<dyn Component>> {
        let mut out: Vec<Box<dyn Component>> = Vec::new();
        if let Some(k) = &self.config.components.kde {
            out.push(Box::new(KdeComponent { samples: k.samples }));
        }
        if let Some(s) = &self.config.components.sar {
            out.push(Box::new(SarComponent {
                order: s.order,
                samples: s.samples,
            }));
        }
        out
    }

    pub fn roster(&self) -> Vec<ComponentId> {
        roster_ids(&self.config.components)
    }
}

fn roster_ids(c: &ComponentsConfig) -> Vec<ComponentId> {
    let mut ids = Vec::new();
    if c.kde.is_some() {
        ids.push(ComponentId::new("kde"));
    }
    if c.sar.is_some() {
        ids.push(ComponentId::new("sar"));
    }
    ids.extend(c.external.iter().map(|e| e.id.clone()));
    ids
}
