//! TOML training configuration.
//!
//! ```toml
//! [data]
//! source = "synthetic"        # or "idx"
//! # dir = "data/fashion"      # idx: holds train-/t10k- image and label files
//! # train_per_class = 1000    # optional class-balanced subsets
//! # test_per_class = 200
//! [data.synthetic]            # any SyntheticSpec field
//! per_class = 200
//!
//! [model]
//! preset = "synthetic"        # synthetic | mini-vgg-lite | mini-vgg | custom
//! layer = "hm-dual"           # conv gc1 gc2 hm-dual hm-single shm erosion dilation
//! # alpha = 1.0               # gc1, gc2, shm
//! # init = "constant:0.01"
//! # nonintersect = true
//! # dnc = 0.0
//! # variance = "table.txt"    # fitted variance table
//!
//! [optim]
//! method = "sgd"              # or "adam" (beta1, beta2, eps)
//! lr = 0.01
//! momentum = 0.9
//! epochs = 1000
//! batch_size = 400
//! seed = 1
//! ```
//!
//! A `custom` preset takes `layers` (an array of tables tagged by `type`)
//! and `loss` instead of `layer`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::fit::{RunRngs, TrainState};
use super::model::{mini_vgg, mini_vgg_lite, synthetic_net, Constraints, LayerSpec, ModelSpec, OpKind, Sequential};
use super::optim::OptimSpec;
use crate::data::{gen_synthetic, load_idx, subset, LabeledSet, SyntheticSpec};
use crate::error::{Error, Result};
use crate::init::InitSpec;
use crate::layers::Loss;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_per_class: Option<usize>,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Synthetic,
    MiniVggLite,
    MiniVgg,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Preset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<OpKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<String>,
    #[serde(default)]
    pub nonintersect: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dnc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<Loss>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optim: OptimSpec,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        // the optimizer table is flattened, which serde cannot police
        if let Some(optim) = raw.get("optim").and_then(|v| v.as_table()) {
            const KEYS: [&str; 9] = ["method", "lr", "momentum", "beta1", "beta2", "eps", "epochs", "batch_size", "seed"];
            if let Some(k) = optim.keys().find(|k| !KEYS.contains(&k.as_str())) {
                return Err(Error::Config(format!("unknown key `{k}` in [optim]")));
            }
        }
        raw.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // relative paths are taken from the config file's directory
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [cfg.data.dir.as_mut(), cfg.model.variance.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# unprintable config: {e}\n"))
    }

    /// Model for samples of shape `input` and `classes` classes.
    pub fn model_spec(&self, input: [usize; 3], classes: usize) -> Result<ModelSpec> {
        let m = &self.model;
        let init = m.init.as_deref().map(InitSpec::parse).transpose()?;
        let c = Constraints { nonintersect: m.nonintersect, dnc: m.dnc };
        let op = || m.layer.ok_or_else(|| Error::Config("model.layer is required for this preset".into()));
        let mut spec = match m.preset {
            Preset::Synthetic => {
                if input[0] != 1 || input[1] != input[2] {
                    return Err(Error::Config(format!("synthetic preset needs square single-channel input, got {input:?}")));
                }
                if classes > 2 {
                    return Err(Error::Config(format!("synthetic preset has two outputs, data has {classes} classes")));
                }
                synthetic_net(op()?, m.alpha, input[1], init, c)
            }
            Preset::MiniVggLite => mini_vgg_lite(op()?, m.alpha, input, classes, init, c),
            Preset::MiniVgg => mini_vgg(op()?, m.alpha, input, classes, (32, 64, 512), init, c),
            Preset::Custom => ModelSpec {
                input: input.to_vec(),
                layers: m.layers.clone().ok_or_else(|| Error::Config("custom preset needs model.layers".into()))?,
                loss: m.loss.ok_or_else(|| Error::Config("custom preset needs model.loss".into()))?,
                constraints: c,
                variance: None,
            },
        };
        if let Some(p) = &m.variance {
            spec.variance = Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?);
        }
        spec.shapes()?;
        spec.variance_model()?;
        Ok(spec)
    }

    /// Training and optional test set.
    pub fn load_data<T: Scalar>(&self, rngs: &mut RunRngs) -> Result<(LabeledSet<T>, Option<LabeledSet<T>>)> {
        let d = &self.data;
        match d.source {
            DataSource::Synthetic => {
                let train = gen_synthetic(&d.synthetic, &mut rngs.data)?;
                let test = gen_synthetic(&d.synthetic, &mut rngs.test_data)?;
                Ok((train, Some(test)))
            }
            DataSource::Idx => {
                let dir = d.dir.as_ref().ok_or_else(|| Error::Config("data.dir is required for idx data".into()))?;
                let train = load_pair(dir, "train")?;
                let test = load_pair(dir, "t10k").ok();
                let train = match d.train_per_class {
                    Some(k) => subset(&train, k, &mut rngs.data),
                    None => train,
                };
                let test = match (test, d.test_per_class) {
                    (Some(t), Some(k)) => Some(subset(&t, k, &mut rngs.test_data)),
                    (t, _) => t,
                };
                Ok((train, test))
            }
        }
    }
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    [stem.to_string(), format!("{stem}.gz")]
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Config(format!("no {stem}[.gz] in {}", dir.display())))
}

/// `{prefix}-images-idx3-ubyte[.gz]` with its labels file.
pub fn load_pair<T: Scalar>(dir: &Path, prefix: &str) -> Result<LabeledSet<T>> {
    load_idx(find(dir, &format!("{prefix}-images-idx3-ubyte"))?, find(dir, &format!("{prefix}-labels-idx1-ubyte"))?)
}

/// A model, its data and a fresh training state, ready for [`super::train`].
pub struct Prepared<T: Scalar> {
    pub model: Sequential<T>,
    pub train: LabeledSet<T>,
    pub test: Option<LabeledSet<T>>,
    pub state: TrainState<T>,
}

/// Number of training samples pushed through the network to measure each
/// layer's input variance at initialization.
pub const PROBE_SAMPLES: usize = 64;

pub fn prepare<T: Scalar>(cfg: &TrainConfig) -> Result<Prepared<T>> {
    cfg.optim.validate()?;
    let mut rngs = RunRngs::new(cfg.optim.seed);
    let (train, test) = cfg.load_data::<T>(&mut rngs)?;
    let [c, h, w] = train.sample_shape()[..] else { unreachable!() };
    let spec = cfg.model_spec([c, h, w], train.num_classes())?;
    let mut model = Sequential::new(&spec)?;
    let probe: Vec<usize> = (0..train.len().min(PROBE_SAMPLES)).collect();
    model.init(&mut rngs.init, Some(&train.images.select(&probe)))?;
    let state = TrainState::new(&model, &cfg.optim, rngs.train);
    Ok(Prepared { model, train, test, state })
}
