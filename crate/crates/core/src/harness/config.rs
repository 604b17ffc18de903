//! Experiment configuration: profile defaults overlaid with a JSON file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::{DatasetSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::NetworkSpec;
use crate::periodogram::Scale;
use crate::scene::{OfdmConfig, SceneGenConfig};
use crate::window::WindowKind;

/// Overrides `paths.data_dir`.
pub const DATA_DIR_ENV: &str = "RDCOUNT_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Full,
    Desk,
}

/// Which channels of the cached dataset a model reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    SingleRect,
    SingleHann,
    Dual,
}

impl ModelTag {
    pub const ALL: [ModelTag; 3] = [ModelTag::SingleRect, ModelTag::SingleHann, ModelTag::Dual];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelTag::SingleRect => "single_rect",
            ModelTag::SingleHann => "single_hann",
            ModelTag::Dual => "dual",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::config(format!("model: unknown tag {s:?} (single_rect, single_hann, dual)")))
    }

    /// Channel indices into a dataset built with `windows`.
    pub fn channels(&self, windows: &[WindowKind]) -> Result<Vec<usize>> {
        let find = |kind: WindowKind| {
            windows.iter().position(|w| *w == kind).ok_or_else(|| {
                Error::config(format!("model {}: dataset.windows has no {} channel", self.as_str(), kind.label()))
            })
        };
        match self {
            ModelTag::SingleRect => Ok(vec![find(WindowKind::Rectangular)?]),
            ModelTag::SingleHann => Ok(vec![find(WindowKind::Hann)?]),
            ModelTag::Dual if windows.len() == 2 => Ok(vec![0, 1]),
            ModelTag::Dual => Err(Error::config("model dual: dataset.windows needs two entries")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub n_train: usize,
    pub n_val: usize,
    pub windows: Vec<WindowKind>,
    pub scale: Scale,
    pub seed: u64,
}

/// Network shape apart from the input size and channel count, which come
/// from the crop and the model tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub dropout: Vec<(usize, f64)>,
    pub head_width: usize,
    pub h_t: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub snr_grid: Vec<f64>,
    pub fixed_snr_db: f64,
    pub k_grid: Vec<usize>,
    pub n_trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub data_dir: PathBuf,
    pub ckpt_dir: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub ofdm: OfdmConfig,
    pub gen: SceneGenConfig,
    pub dataset: DatasetSection,
    pub network: NetworkSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

impl ExperimentConfig {
    pub fn defaults(profile: Profile) -> Self {
        let (ofdm, gen, net, dataset, train) = match profile {
            Profile::Full => (
                OfdmConfig::full(),
                SceneGenConfig::full(),
                NetworkSpec::full(2),
                DatasetSection {
                    n_train: 50_000,
                    n_val: 5_000,
                    windows: default_windows(),
                    scale: Scale::Decibel,
                    seed: 1,
                },
                TrainConfig::default(),
            ),
            Profile::Desk => (
                OfdmConfig::desk(),
                SceneGenConfig::desk(),
                NetworkSpec::desk(2),
                DatasetSection {
                    n_train: 4_000,
                    n_val: 1_000,
                    windows: default_windows(),
                    scale: Scale::Decibel,
                    seed: 1,
                },
                TrainConfig { epochs: 12, batch: 50, ..TrainConfig::default() },
            ),
        };
        let k_grid = (gen.k_min..=gen.k_max).collect();
        Self {
            profile,
            ofdm,
            gen,
            dataset,
            network: NetworkSection {
                widths: net.widths,
                kernel: net.kernel,
                dropout: net.dropout,
                head_width: net.head_width,
                h_t: net.h_t,
            },
            train,
            eval: EvalSection {
                snr_grid: vec![-30.0, -25.0, -20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 9.0],
                fixed_snr_db: -15.0,
                k_grid,
                n_trials: 2_000,
                seed: 7,
            },
            paths: PathsSection { data_dir: "data".into(), ckpt_dir: "checkpoints".into(), out_dir: "results".into() },
        }
    }

    /// Profile defaults overlaid with `overrides`. The overlay must only use
    /// keys the defaults know; `profile` (default desk) picks the base.
    pub fn from_value(overrides: &Value) -> Result<Self> {
        let obj = overrides.as_object().ok_or_else(|| Error::config("config: top level must be an object"))?;
        let profile = match obj.get("profile") {
            None => Profile::Desk,
            Some(p) => serde_json::from_value(p.clone())
                .map_err(|_| Error::config(format!("profile: expected \"full\" or \"desk\", found {p}")))?,
        };
        let mut merged = serde_json::to_value(Self::defaults(profile))?;
        let mut errs = Vec::new();
        overlay(&mut merged, overrides, "", &mut errs);
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let cfg: Self = serde_json::from_value(merged).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths resolve against the file's
    /// directory and [`DATA_DIR_ENV`] replaces the data directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::MissingArtifact { path: path.to_path_buf(), hint: "config file not found".into() }
            }
            _ => Error::Io(e),
        })?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::config(format!("config: {e}")))?;
        let mut cfg = Self::from_value(&value)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.data_dir, &mut cfg.paths.ckpt_dir, &mut cfg.paths.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV).filter(|d| !d.is_empty()) {
            cfg.paths.data_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut take = |r: Result<()>, prefix: &str| match r {
            Ok(()) => {}
            Err(Error::Config(e)) => errs.extend(e.into_iter().map(|m| format!("{prefix}{m}"))),
            Err(e) => errs.push(e.to_string()),
        };
        take(self.dataset_spec().validate(self.network.h_t), "");
        for tag in ModelTag::ALL {
            take(self.network_spec(tag).and_then(|s| s.validate()), &format!("network ({}): ", tag.as_str()));
        }
        take(self.train.validate(), "");
        if self.train.lr <= 0.0 {
            errs.push("train.lr: must be > 0".into());
        }
        if self.eval.snr_grid.is_empty() {
            errs.push("eval.snr_grid: must not be empty".into());
        }
        if self.eval.snr_grid.iter().any(|s| !s.is_finite()) || !self.eval.fixed_snr_db.is_finite() {
            errs.push("eval.snr_grid: values must be finite".into());
        }
        if self.eval.k_grid.is_empty() {
            errs.push("eval.k_grid: must not be empty".into());
        }
        if let Some(k) = self.eval.k_grid.iter().find(|k| !(self.gen.k_min..=self.gen.k_max).contains(*k)) {
            errs.push(format!("eval.k_grid: {k} outside {}..={}", self.gen.k_min, self.gen.k_max));
        }
        if self.eval.n_trials == 0 {
            errs.push("eval.n_trials: must be >= 1".into());
        }
        errs.dedup();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            n_train: self.dataset.n_train,
            n_val: self.dataset.n_val,
            windows: self.dataset.windows.clone(),
            scale: self.dataset.scale,
            seed: self.dataset.seed,
            cfg: self.ofdm.clone(),
            gen: self.gen.clone(),
        }
    }

    pub fn network_spec(&self, tag: ModelTag) -> Result<NetworkSpec> {
        let in_channels = tag.channels(&self.dataset.windows)?.len();
        Ok(NetworkSpec {
            input_hw: (self.ofdm.crop_rows, self.ofdm.crop_cols),
            in_channels,
            widths: self.network.widths.clone(),
            kernel: self.network.kernel,
            dropout: self.network.dropout.clone(),
            head_width: self.network.head_width,
            h_t: self.network.h_t,
        })
    }

    pub fn data_digest(&self) -> [u8; 32] {
        self.dataset_spec().digest()
    }

    /// Identifies a trained model: dataset, network, training settings and tag.
    pub fn train_digest(&self, tag: ModelTag) -> Result<[u8; 32]> {
        let mut h = Sha256::new();
        h.update(self.data_digest());
        h.update(serde_json::to_vec(&self.network_spec(tag)?)?);
        h.update(serde_json::to_vec(&self.train)?);
        h.update(tag.as_str().as_bytes());
        Ok(h.finalize().into())
    }
}

fn default_windows() -> Vec<WindowKind> {
    vec![WindowKind::Rectangular, WindowKind::Hann]
}

/// Copies `src` into `dst` key by key; objects merge recursively, anything
/// else replaces. Keys missing from `dst` are reported.
fn overlay(dst: &mut Value, src: &Value, at: &str, errs: &mut Vec<String>) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match d.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v, &path, errs),
                    Some(slot) => *slot = v.clone(),
                    None => errs.push(format!("{path}: unknown key")),
                }
            }
        }
        (d, s) => *d = s.clone(),
    }
}
