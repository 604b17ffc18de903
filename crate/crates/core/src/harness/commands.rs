//! The `gen-data`, `train`, `sweep` and `inspect` commands.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::dataset::{read_dataset_header, write_split, DATASET_MAGIC};
use crate::data::{
    evaluate_many, train_with, Condition, ConstantPredictor, CountPredictor, Dataset, DatasetSpec, EvalReport,
    EvalSpec, ModelPredictor, OraclePredictor,
};
use crate::error::{Error, Result};
use crate::io_util::atomic_write;
use crate::nn::checkpoint::CHECKPOINT_MAGIC;
use crate::nn::{read_checkpoint_header, Checkpoint, ModelParams, NetworkSpec};
use crate::rng::Stream;

use super::config::{ExperimentConfig, ModelTag};
use super::svg;

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "rdcount-dataset/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub split: String,
    pub file: String,
    pub n_samples: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config_digest: String,
    pub seed: u64,
    pub spec: DatasetSpec,
    pub files: Vec<ManifestFile>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenStatus {
    Generated,
    Verified,
}

fn sha256_file(path: &Path) -> Result<[u8; 32]> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().into())
}

fn read_manifest(dir: &Path) -> Result<Option<Manifest>> {
    let path = dir.join(MANIFEST_FILE);
    match std::fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| Error::Corrupt { path, reason: format!("unreadable manifest: {e}") }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Checks every file listed in `m` against its recorded hash.
fn verify_files(dir: &Path, m: &Manifest) -> Result<()> {
    for f in &m.files {
        let path = dir.join(&f.file);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path,
                hint: "listed in the manifest but absent; rerun gen-data".into(),
            });
        }
        let found = hex::encode(sha256_file(&path)?);
        if found != f.sha256 {
            return Err(Error::Corrupt {
                path,
                reason: format!(
                    "sha256 {found} does not match manifest {}; delete the data directory and rerun gen-data",
                    f.sha256
                ),
            });
        }
    }
    Ok(())
}

/// Generates the training and validation files, or verifies them when a
/// manifest for the same configuration already exists.
pub fn gen_data(cfg: &ExperimentConfig, log: &mut dyn Write) -> Result<GenStatus> {
    let dir = &cfg.paths.data_dir;
    let spec = cfg.dataset_spec();
    let digest = hex::encode(spec.digest());
    if let Some(m) = read_manifest(dir)? {
        if m.config_digest == digest {
            verify_files(dir, &m)?;
            writeln!(log, "verified {} ({digest})", dir.display())?;
            return Ok(GenStatus::Verified);
        }
        writeln!(log, "configuration changed; regenerating {}", dir.display())?;
    }
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (split, stream, n) in [("train", Stream::Train, spec.n_train), ("val", Stream::Validation, spec.n_val)] {
        let file = format!("{split}.rdds");
        writeln!(log, "writing {file}: {n} samples")?;
        let sha = write_split(&spec, stream, &dir.join(&file))?;
        files.push(ManifestFile { split: split.into(), file, n_samples: n, sha256: hex::encode(sha) });
    }
    let manifest =
        Manifest { format: MANIFEST_FORMAT.into(), config_digest: digest.clone(), seed: spec.seed, spec, files };
    atomic_write(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    writeln!(log, "generated {} ({digest})", dir.display())?;
    Ok(GenStatus::Generated)
}

/// Loads both splits after checking them against the manifest and the
/// current configuration.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let dir = &cfg.paths.data_dir;
    let missing = || Error::MissingArtifact {
        path: dir.join(MANIFEST_FILE),
        hint: "no dataset here; run `rdcount gen-data --config <config>` first".into(),
    };
    let m = read_manifest(dir)?.ok_or_else(missing)?;
    let digest = hex::encode(cfg.data_digest());
    if m.config_digest != digest {
        return Err(Error::MissingArtifact {
            path: dir.join(MANIFEST_FILE),
            hint: "dataset was generated from a different configuration; rerun `rdcount gen-data --config <config>`"
                .into(),
        });
    }
    verify_files(dir, &m)?;
    let load = |split: &str| -> Result<Dataset> {
        let f = m
            .files
            .iter()
            .find(|f| f.split == split)
            .ok_or_else(|| Error::Corrupt { path: dir.join(MANIFEST_FILE), reason: format!("no {split} entry") })?;
        let path = dir.join(&f.file);
        let ds = Dataset::load(&path)?;
        if hex::encode(ds.header.config_digest) != digest {
            return Err(Error::Corrupt { path, reason: "embedded config digest differs from manifest".into() });
        }
        Ok(ds)
    };
    Ok((load("train")?, load("val")?))
}

pub fn checkpoint_path(cfg: &ExperimentConfig, tag: ModelTag, which: &str) -> PathBuf {
    cfg.paths.ckpt_dir.join(format!("{}.{which}.rdck", tag.as_str()))
}

pub fn history_path(cfg: &ExperimentConfig, tag: ModelTag) -> PathBuf {
    cfg.paths.out_dir.join(format!("history_{}.csv", tag.as_str()))
}

pub struct TrainSummary {
    pub final_path: PathBuf,
    pub best_path: PathBuf,
    pub history_path: PathBuf,
    pub best_epoch: usize,
}

/// Trains one model variant on the cached dataset.
pub fn train(cfg: &ExperimentConfig, tag: ModelTag, log: &mut dyn Write) -> Result<TrainSummary> {
    let (train_set, val_set) = load_datasets(cfg)?;
    let channels = tag.channels(&cfg.dataset.windows)?;
    let spec = cfg.network_spec(tag)?;
    let digest = cfg.train_digest(tag)?;
    let every = cfg.train.checkpoint_every;
    writeln!(log, "training {} on channels {channels:?}, {} samples", tag.as_str(), train_set.samples.len())?;
    let out = train_with(&train_set, &val_set, &channels, &spec, &cfg.train, |rec, params, adam| {
        writeln!(
            log,
            "epoch {:>3}  train_ce {:.4}  val_ce {:.4}  val_mse {:.4}  val_acc {:.3}",
            rec.epoch, rec.train_ce, rec.val_ce, rec.val_mse, rec.val_accuracy
        )?;
        if every > 0 && rec.epoch % every == 0 {
            let ck = Checkpoint::new(&spec, params.clone(), Some(adam.clone()), digest, rec.epoch as u32, tag.as_str());
            ck.save(&checkpoint_path(cfg, tag, &format!("epoch{:03}", rec.epoch)))?;
        }
        Ok(true)
    })?;
    let epochs = out.history.epochs.len() as u32;
    let final_path = checkpoint_path(cfg, tag, "final");
    let best_path = checkpoint_path(cfg, tag, "best");
    Checkpoint::new(&spec, out.params, Some(out.adam), digest, epochs, tag.as_str()).save(&final_path)?;
    Checkpoint::new(&spec, out.best, None, digest, out.best_epoch as u32, tag.as_str()).save(&best_path)?;
    let history_path = history_path(cfg, tag);
    atomic_write(&history_path, out.history.to_csv().as_bytes())?;
    writeln!(log, "best epoch {}; wrote {} and {}", out.best_epoch, final_path.display(), best_path.display())?;
    Ok(TrainSummary { final_path, best_path, history_path, best_epoch: out.best_epoch })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Snr,
    Targets,
}

impl Axis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::Snr => "snr",
            Axis::Targets => "targets",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub model_tag: String,
    pub axis: Axis,
    pub value: f64,
    pub mse: f64,
    pub accuracy: f64,
    pub n_trials: usize,
    pub seed: u64,
}

pub fn conditions(cfg: &ExperimentConfig, axis: Axis) -> Vec<Condition> {
    match axis {
        Axis::Snr => cfg.eval.snr_grid.iter().map(|&s| Condition::Snr(s)).collect(),
        Axis::Targets => {
            cfg.eval.k_grid.iter().map(|&k| Condition::Targets { k, snr_db: cfg.eval.fixed_snr_db }).collect()
        }
    }
}

pub fn eval_spec(cfg: &ExperimentConfig, axis: Axis) -> EvalSpec {
    EvalSpec {
        cfg: cfg.ofdm.clone(),
        gen: cfg.gen.clone(),
        windows: cfg.dataset.windows.clone(),
        scale: cfg.dataset.scale,
        seed: cfg.eval.seed,
        n_trials: cfg.eval.n_trials,
        conditions: conditions(cfg, axis),
    }
}

/// Loads the best checkpoint of `tag`, refusing one trained under another
/// configuration.
pub fn load_model(cfg: &ExperimentConfig, tag: ModelTag) -> Result<(NetworkSpec, ModelParams<f32>)> {
    let path = checkpoint_path(cfg, tag, "best");
    let hint = format!("run `rdcount train --config <config> --model {}`", tag.as_str());
    let header = read_checkpoint_header(&path).map_err(|e| match e {
        Error::MissingArtifact { path, .. } => Error::MissingArtifact { path, hint: hint.clone() },
        e => e,
    })?;
    if header.config_digest != cfg.train_digest(tag)? {
        return Err(Error::MissingArtifact {
            path,
            hint: format!("checkpoint is stale (trained under a different configuration); {hint}"),
        });
    }
    let ck = Checkpoint::<f32>::load(&path)?;
    Ok((ck.header.spec, ck.params))
}

enum Loaded {
    Model(NetworkSpec, ModelParams<f32>, Vec<usize>),
    Oracle(OraclePredictor),
    Constant(ConstantPredictor),
}

/// Resolves a model tag, or one of the stubs `oracle` and `constant-N`.
fn load_predictor(cfg: &ExperimentConfig, name: &str) -> Result<Loaded> {
    let h_t = cfg.network.h_t;
    if name == "oracle" {
        return Ok(Loaded::Oracle(OraclePredictor { h_t }));
    }
    if let Some(n) = name.strip_prefix("constant-") {
        let count = n.parse().map_err(|_| Error::config(format!("models: bad stub {name:?}")))?;
        if !(1..=h_t).contains(&count) {
            return Err(Error::config(format!("models: {name} outside 1..={h_t}")));
        }
        return Ok(Loaded::Constant(ConstantPredictor { h_t, count }));
    }
    let tag = ModelTag::parse(name)?;
    let (spec, params) = load_model(cfg, tag)?;
    Ok(Loaded::Model(spec, params, tag.channels(&cfg.dataset.windows)?))
}

/// Evaluates every listed model on shared fresh scenes. Rows are sorted by
/// model tag, then condition value.
pub fn sweep_rows(cfg: &ExperimentConfig, axis: Axis, models: &[String]) -> Result<Vec<SweepRow>> {
    if models.is_empty() {
        return Err(Error::config("models: at least one model is required"));
    }
    let mut names = models.to_vec();
    names.sort();
    names.dedup();
    let loaded = names.iter().map(|n| load_predictor(cfg, n)).collect::<Result<Vec<_>>>()?;
    let model_preds: Vec<Option<ModelPredictor>> = loaded
        .iter()
        .map(|l| match l {
            Loaded::Model(spec, params, channels) => Some(ModelPredictor { spec, params, channels: channels.clone() }),
            _ => None,
        })
        .collect();
    let predictors: Vec<&dyn CountPredictor> = loaded
        .iter()
        .zip(&model_preds)
        .map(|(l, m)| match (l, m) {
            (_, Some(m)) => m as &dyn CountPredictor,
            (Loaded::Oracle(o), _) => o as &dyn CountPredictor,
            (Loaded::Constant(c), _) => c as &dyn CountPredictor,
            (Loaded::Model(..), None) => unreachable!(),
        })
        .collect();
    let reports: Vec<EvalReport> = evaluate_many(&predictors, &eval_spec(cfg, axis))?;
    let mut rows = Vec::new();
    for (name, report) in names.iter().zip(reports) {
        let mut recs = report.records;
        recs.sort_by(|a, b| a.condition.value().total_cmp(&b.condition.value()));
        rows.extend(recs.into_iter().map(|r| SweepRow {
            model_tag: name.clone(),
            axis,
            value: r.condition.value(),
            mse: r.mse,
            accuracy: r.accuracy,
            n_trials: r.n_trials,
            seed: cfg.eval.seed,
        }));
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("model_tag,condition_axis,condition_value,mse,accuracy,n_trials,seed\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.model_tag,
            r.axis.as_str(),
            r.value,
            r.mse,
            r.accuracy,
            r.n_trials,
            r.seed
        );
    }
    s
}

pub struct SweepOutput {
    pub csv_path: PathBuf,
    pub svg_path: Option<PathBuf>,
    pub rows: Vec<SweepRow>,
}

pub fn sweep(
    cfg: &ExperimentConfig,
    axis: Axis,
    models: &[String],
    with_svg: bool,
    log: &mut dyn Write,
) -> Result<SweepOutput> {
    let rows = sweep_rows(cfg, axis, models)?;
    let csv_path = cfg.paths.out_dir.join(format!("sweep_{}.csv", axis.as_str()));
    atomic_write(&csv_path, rows_to_csv(&rows).as_bytes())?;
    writeln!(log, "wrote {}", csv_path.display())?;
    let svg_path = if with_svg {
        let path = cfg.paths.out_dir.join(format!("sweep_{}.svg", axis.as_str()));
        let x_label = match axis {
            Axis::Snr => "SNR (dB)".to_string(),
            Axis::Targets => format!("number of targets (SNR {} dB)", cfg.eval.fixed_snr_db),
        };
        atomic_write(&path, svg::line_chart(&rows, &x_label, "count MSE").as_bytes())?;
        writeln!(log, "wrote {}", path.display())?;
        Some(path)
    } else {
        None
    };
    Ok(SweepOutput { csv_path, svg_path, rows })
}

/// Header-only summary of a dataset or checkpoint file.
pub fn inspect(path: &Path) -> Result<String> {
    let mut magic = [0u8; 4];
    let n = File::open(path)
        .map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => {
                Error::MissingArtifact { path: path.to_path_buf(), hint: "file does not exist".into() }
            }
            _ => Error::Io(e),
        })?
        .read(&mut magic)?;
    let mut s = String::new();
    if n == 4 && &magic == DATASET_MAGIC {
        let h = read_dataset_header(path)?;
        let _ = writeln!(s, "kind:          dataset");
        let _ = writeln!(s, "n_samples:     {}", h.n_samples);
        let _ = writeln!(s, "crop:          {} x {}", h.crop_rows, h.crop_cols);
        let _ = writeln!(s, "channels:      {}", h.channels());
        let labels: Vec<String> = h.windows.iter().map(|w| w.label()).collect();
        let _ = writeln!(s, "windows:       {}", labels.join(", "));
        let _ = writeln!(s, "scale:         {:?}", h.scale);
        let _ = writeln!(s, "seed:          {}", h.seed);
        let _ = writeln!(s, "stream:        {:?}", h.stream);
        let _ = writeln!(s, "config_digest: {}", hex::encode(h.config_digest));
    } else if n == 4 && &magic == CHECKPOINT_MAGIC {
        let h = read_checkpoint_header(path)?;
        let _ = writeln!(s, "kind:          checkpoint");
        let _ = writeln!(s, "label:         {}", h.label);
        let _ = writeln!(s, "epoch:         {}", h.epoch);
        let _ = writeln!(s, "precision:     {:?}", h.precision);
        let _ = writeln!(s, "in_channels:   {}", h.spec.in_channels);
        let _ = writeln!(s, "input:         {} x {}", h.spec.input_hw.0, h.spec.input_hw.1);
        let _ = writeln!(s, "widths:        {:?}", h.spec.widths);
        let _ = writeln!(s, "h_t:           {}", h.spec.h_t);
        let _ = writeln!(s, "spec_hash:     {}", hex::encode(h.spec_hash));
        let _ = writeln!(s, "config_digest: {}", hex::encode(h.config_digest));
    } else {
        return Err(Error::Format {
            path: path.display().to_string(),
            expected: "magic RDDS or RDCK".into(),
            found: format!("{:?}", String::from_utf8_lossy(&magic[..n])),
        });
    }
    Ok(s)
}
