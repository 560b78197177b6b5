//! Run configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::ArchDescriptor;
use crate::data::{load_cifar100, synthetic_dataset, LabeledDataset, SyntheticSpec, CIFAR_CHANNELS, CIFAR_CLASSES, CIFAR_SIDE};
use crate::driver::{DriverConfig, Method};
use crate::error::{Error, Result};
use crate::nn::TrainConfig;
use crate::rl::ActorConfig;
use crate::search::SearchConfig;
use crate::seed;
use crate::stream::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Cifar100,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Number of classes: generated (synthetic) or kept from the start of
    /// the label range (CIFAR-100). Defaults to 10 and 100.
    pub classes: Option<usize>,
    pub per_class: usize,
    pub height: usize,
    pub width: usize,
    pub separation: f64,
    /// CIFAR-100 binary files, relative to the config file.
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            source: DataSource::Synthetic,
            classes: None,
            per_class: s.per_class,
            height: s.height,
            width: s.width,
            separation: s.separation,
            train: None,
            test: None,
        }
    }
}

impl DataConfig {
    pub fn class_count(&self) -> usize {
        self.classes.unwrap_or(match self.source {
            DataSource::Synthetic => SyntheticSpec::default().classes,
            DataSource::Cifar100 => CIFAR_CLASSES,
        })
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.class_count(),
            per_class: self.per_class,
            height: self.height,
            width: self.width,
            separation: self.separation,
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        match self.source {
            DataSource::Synthetic => [self.height, self.width, 1],
            DataSource::Cifar100 => [CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS],
        }
    }

    fn cifar_paths(&self) -> Result<(&Path, &Path)> {
        match (&self.train, &self.test) {
            (Some(train), Some(test)) => Ok((train, test)),
            _ => Err(Error::Config("data: cifar100 needs `train` and `test` paths".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.source {
            DataSource::Synthetic => self.synthetic_spec().validate(),
            DataSource::Cifar100 => {
                let (train, test) = self.cifar_paths()?;
                for p in [train, test] {
                    if !p.is_file() {
                        return Err(Error::Config(format!("data: {} does not exist", p.display())));
                    }
                }
                let n = self.class_count();
                if !(2..=CIFAR_CLASSES).contains(&n) {
                    return Err(Error::Config(format!(
                        "data: classes must be within 2..={CIFAR_CLASSES}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Loads or generates the dataset together with the order in which
    /// classes enter the stream: label order for CIFAR-100, a seeded
    /// permutation for synthetic data.
    pub fn load(&self, master_seed: u64) -> Result<(LabeledDataset, Vec<usize>)> {
        let n = self.class_count();
        match self.source {
            DataSource::Synthetic => {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let ds = synthetic_dataset(
                    &self.synthetic_spec(),
                    seed::derive(master_seed, &[seed::DATA]),
                )?;
                let mut order: Vec<usize> = (0..n).collect();
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed::derive(
                    master_seed,
                    &[seed::DATA, 1],
                ));
                order.shuffle(&mut rng);
                Ok((ds, order))
            }
            DataSource::Cifar100 => {
                let (train, test) = self.cifar_paths()?;
                let mut ds = load_cifar100(train, test)?;
                if n < CIFAR_CLASSES {
                    ds = ds.filter_classes(|l| l < n);
                }
                Ok((ds, (0..n).collect()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Threads for candidate training; 1 runs serially.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Fill the `wall_s` column of series.csv. Off by default so that the
    /// CSV depends only on the configuration and seed.
    #[serde(default)]
    pub record_wall_time: bool,
    /// Base architecture in descriptor text form. The softmax size is
    /// replaced by the number of base-knowledge classes.
    #[serde(default)]
    pub architecture: Option<String>,
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub agent: ActorConfig,
}

fn default_method() -> Method {
    Method::Cnas
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/latest")
}

fn default_workers() -> usize {
    1
}

impl RunConfig {
    /// Parses TOML text. Relative data paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        for p in [&mut cfg.data.train, &mut cfg.data.test].into_iter().flatten() {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn architecture(&self) -> Result<ArchDescriptor> {
        self.architecture
            .as_deref()
            .ok_or_else(|| Error::Config("missing base architecture (`architecture`)".into()))?
            .parse()
    }

    /// Static checks only; data files are checked for existence, not read.
    pub fn validate(&self) -> Result<()> {
        let arch = self.architecture()?;
        self.data.validate()?;
        if arch.input != self.data.input_shape() {
            return Err(Error::Config(format!(
                "architecture input {:?} does not match the data {:?}",
                arch.input,
                self.data.input_shape()
            )));
        }
        self.scenario.validate()?;
        if self.scenario.base > self.data.class_count() {
            return Err(Error::Config(format!(
                "scenario: base knowledge of {} classes exceeds the {} available",
                self.scenario.base,
                self.data.class_count()
            )));
        }
        self.train.validate()?;
        self.search.validate()?;
        self.agent.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn driver(&self) -> DriverConfig {
        DriverConfig {
            method: self.method,
            train: self.train.clone(),
            search: self.search.clone(),
            agent: self.agent,
            workers: self.workers,
            seed: self.seed,
        }
    }
}
