//! Labeled samples: one noisy frame per scene, one periodogram crop per
//! window, and the `RDDS` binary file format.
//!
//! File layout (little-endian):
//!
//! ```text
//! "RDDS" | version u16 | crop_rows u32 | crop_cols u32 | channels u8
//! sample count u64 | scale u8 | channels x (window code u8, parameter f64)
//! seed u64 | stream u8 | config digest [32]
//! samples: label u16 | snr_db f32 | channels x crop_rows x crop_cols f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec;
use crate::io_util::{atomic_write, atomic_write_with, Reader};
use crate::periodogram::{crop_map, to_input, PeriodogramPlan, RdInput, Scale};
use crate::rng::{derive_seed, source, Stream};
use crate::scene::{make_frame, sample_scene, sample_scene_with_k, OfdmConfig, SceneGenConfig};
use crate::window::{Window2d, WindowKind};

pub const DATASET_MAGIC: &[u8; 4] = b"RDDS";
pub const DATASET_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_val: usize,
    /// Channel order: resolution window first, sidelobe window second.
    pub windows: Vec<WindowKind>,
    pub scale: Scale,
    pub seed: u64,
    pub cfg: OfdmConfig,
    /// Target-count and SNR ranges live here.
    pub gen: SceneGenConfig,
}

impl DatasetSpec {
    pub fn k_range(&self) -> (usize, usize) {
        (self.gen.k_min, self.gen.k_max)
    }

    pub fn snr_range_db(&self) -> (f64, f64) {
        (self.gen.snr_lo, self.gen.snr_hi)
    }

    pub fn validate(&self, h_t: usize) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_train == 0 {
            errs.push("dataset.n_train: must be >= 1".to_string());
        }
        if self.n_val == 0 {
            errs.push("dataset.n_val: must be >= 1".to_string());
        }
        if self.windows.is_empty() || self.windows.len() > 2 {
            errs.push(format!("dataset.windows: need 1 or 2 windows, got {}", self.windows.len()));
        }
        for w in &self.windows {
            if let Err(Error::Config(e)) = w.validate() {
                errs.extend(e.into_iter().map(|m| format!("dataset.{m}")));
            }
        }
        for r in [self.cfg.validate(), self.gen.validate(&self.cfg, h_t)] {
            if let Err(Error::Config(e)) = r {
                errs.extend(e);
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(serde_json::to_vec(self).expect("spec serializes")).into()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: RdInput,
    /// True target count.
    pub label: u16,
    pub snr_db: f32,
    /// Per-sample derived seed; regenerates the scene and its noise.
    pub scene_digest: u64,
}

/// Renders labeled samples for a fixed geometry and window set.
pub struct SampleFactory {
    plan: PeriodogramPlan,
    gen: SceneGenConfig,
    windows: Vec<Window2d>,
    scale: Scale,
}

/// Optional overrides of the scene draw.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SceneOverride {
    pub k: Option<usize>,
    pub snr_db: Option<f64>,
}

impl SampleFactory {
    pub fn new(cfg: &OfdmConfig, gen: &SceneGenConfig, windows: &[WindowKind], scale: Scale) -> Result<Self> {
        if windows.is_empty() || windows.len() > 2 {
            return Err(Error::config(format!("dataset.windows: need 1 or 2 windows, got {}", windows.len())));
        }
        let plan = PeriodogramPlan::new(cfg)?;
        let windows =
            windows.iter().map(|&w| Window2d::new(w, cfg.n_use, cfg.m_symbols)).collect::<Result<Vec<_>>>()?;
        Ok(Self { plan, gen: gen.clone(), windows, scale })
    }

    pub fn cfg(&self) -> &OfdmConfig {
        self.plan.cfg()
    }

    /// Sample drawn entirely from `seed`. All channels share one noisy
    /// frame.
    pub fn render(&self, seed: u64, over: SceneOverride) -> Result<Sample> {
        let cfg = self.plan.cfg();
        let mut rng = source(seed);
        let mut gen = self.gen.clone();
        if let Some(snr) = over.snr_db {
            gen.snr_lo = snr;
            gen.snr_hi = snr;
        }
        let scene = match over.k {
            Some(k) => sample_scene_with_k(cfg, &gen, k, &mut rng)?,
            None => sample_scene(cfg, &gen, &mut rng)?,
        };
        let frame = make_frame(cfg, &scene, &mut rng);
        let crops = self
            .windows
            .iter()
            .map(|w| crop_map(&self.plan.periodogram(&frame, w)?, cfg))
            .collect::<Result<Vec<Array2<f64>>>>()?;
        Ok(Sample {
            input: to_input(&crops, self.scale)?,
            label: scene.k() as u16,
            snr_db: scene.snr_db as f32,
            scene_digest: seed,
        })
    }

    /// Samples `first..first + n` of `stream` under `base_seed`.
    pub fn render_range(
        &self,
        base_seed: u64,
        stream: Stream,
        first: u64,
        n: usize,
        over: SceneOverride,
    ) -> Result<Vec<Sample>> {
        exec::map_range(n, |i| self.render(derive_seed(base_seed, stream, first + i as u64), over))
            .into_iter()
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub crop_rows: usize,
    pub crop_cols: usize,
    pub windows: Vec<WindowKind>,
    pub scale: Scale,
    pub n_samples: u64,
    pub seed: u64,
    pub stream: Stream,
    pub config_digest: [u8; 32],
}

impl DatasetHeader {
    pub fn channels(&self) -> usize {
        self.windows.len()
    }

    fn to_bytes_with_count(&self, n: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(128);
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.crop_rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.crop_cols as u32).to_le_bytes());
        out.push(self.channels() as u8);
        out.extend_from_slice(&n.to_le_bytes());
        out.push(self.scale.code());
        for w in &self.windows {
            let (code, param) = w.code();
            out.push(code);
            out.extend_from_slice(&param.to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.push(self.stream as u8);
        out.extend_from_slice(&self.config_digest);
        out
    }
}

impl Sample {
    fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.label.to_le_bytes());
        out.extend_from_slice(&self.snr_db.to_le_bytes());
        for ch in &self.input.channels {
            for v in ch.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

pub struct Datasets {
    pub train: Dataset,
    pub val: Dataset,
}

fn split_header(spec: &DatasetSpec, stream: Stream, n: usize) -> DatasetHeader {
    DatasetHeader {
        crop_rows: spec.cfg.crop_rows,
        crop_cols: spec.cfg.crop_cols,
        windows: spec.windows.clone(),
        scale: spec.scale,
        n_samples: n as u64,
        seed: spec.seed,
        stream,
        config_digest: spec.digest(),
    }
}

fn build_split(spec: &DatasetSpec, factory: &SampleFactory, stream: Stream, n: usize) -> Result<Dataset> {
    let samples = factory.render_range(spec.seed, stream, 0, n, SceneOverride::default())?;
    Ok(Dataset { header: split_header(spec, stream, n), samples })
}

/// Samples rendered per chunk by [`write_split`].
const WRITE_CHUNK: usize = 1000;

/// Renders the training or validation split of `spec` straight to `path`,
/// a chunk at a time, and returns the SHA-256 of the file. The bytes equal
/// those of the matching [`build_dataset`] split.
pub fn write_split(spec: &DatasetSpec, stream: Stream, path: &Path) -> Result<[u8; 32]> {
    let n = match stream {
        Stream::Train => spec.n_train,
        Stream::Validation => spec.n_val,
        other => return Err(Error::domain(format!("{other:?} is not a dataset split"))),
    };
    spec.validate(usize::MAX)?;
    let factory = SampleFactory::new(&spec.cfg, &spec.gen, &spec.windows, spec.scale)?;
    let mut hasher = Sha256::new();
    atomic_write_with(path, |f| {
        let head = split_header(spec, stream, n).to_bytes_with_count(n as u64);
        hasher.update(&head);
        f.write_all(&head)?;
        let mut buf = Vec::new();
        for first in (0..n).step_by(WRITE_CHUNK) {
            let m = WRITE_CHUNK.min(n - first);
            buf.clear();
            for s in factory.render_range(spec.seed, stream, first as u64, m, SceneOverride::default())? {
                s.write_to(&mut buf);
            }
            hasher.update(&buf);
            f.write_all(&buf)?;
        }
        Ok(())
    })?;
    Ok(hasher.finalize().into())
}

/// Training and validation sets on disjoint seed streams.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Datasets> {
    spec.validate(usize::MAX)?;
    let factory = SampleFactory::new(&spec.cfg, &spec.gen, &spec.windows, spec.scale)?;
    Ok(Datasets {
        train: build_split(spec, &factory, Stream::Train, spec.n_train)?,
        val: build_split(spec, &factory, Stream::Validation, spec.n_val)?,
    })
}

impl Dataset {
    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label as usize).collect()
    }

    /// Channel index holding `kind`, if present.
    pub fn channel_of(&self, kind: WindowKind) -> Option<usize> {
        self.header.windows.iter().position(|w| *w == kind)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header.to_bytes_with_count(self.samples.len() as u64);
        for s in &self.samples {
            s.write_to(&mut out);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn from_reader<R: Read>(mut r: Reader<R>) -> Result<Self> {
        let header = read_header(&mut r)?;
        let (rows, cols) = (header.crop_rows, header.crop_cols);
        let mut samples = Vec::with_capacity(header.n_samples as usize);
        let mut buf = vec![0u8; rows * cols * 4];
        for i in 0..header.n_samples {
            let label = r.u16()?;
            let snr_db = r.f32()?;
            let mut channels = Vec::with_capacity(header.channels());
            for _ in 0..header.channels() {
                r.fill(&mut buf)?;
                let vals = buf.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
                channels.push(Array2::from_shape_vec((rows, cols), vals).unwrap());
            }
            samples.push(Sample {
                input: RdInput { channels, scale: header.scale },
                label,
                snr_db,
                scene_digest: derive_seed(header.seed, header.stream, i),
            });
        }
        r.expect_eof()?;
        Ok(Self { header, samples })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(Reader::open(path)?)
    }
}

fn read_header<R: Read>(r: &mut Reader<R>) -> Result<DatasetHeader> {
    r.magic(DATASET_MAGIC)?;
    let version = r.u16()?;
    if version != DATASET_VERSION {
        return Err(r.format_err(format!("version {DATASET_VERSION}"), version.to_string()));
    }
    let crop_rows = r.u32()? as usize;
    let crop_cols = r.u32()? as usize;
    let channels = r.u8()? as usize;
    if !(1..=2).contains(&channels) {
        return Err(r.format_err("1 or 2 channels", channels.to_string()));
    }
    let n_samples = r.u64()?;
    let sc = r.u8()?;
    let scale = Scale::from_code(sc).ok_or_else(|| r.format_err("scale 0 or 1", sc.to_string()))?;
    let mut windows = Vec::new();
    for _ in 0..channels {
        let code = r.u8()?;
        let param = r.f64()?;
        windows.push(
            WindowKind::from_code(code, param).ok_or_else(|| r.format_err("window code 0..=2", code.to_string()))?,
        );
    }
    let seed = r.u64()?;
    let st = r.u8()?;
    let stream = Stream::from_u8(st).ok_or_else(|| r.format_err("stream tag", st.to_string()))?;
    let config_digest: [u8; 32] = r.bytes(32)?.try_into().unwrap();
    Ok(DatasetHeader { crop_rows, crop_cols, windows, scale, n_samples, seed, stream, config_digest })
}

/// Reads only the header of a dataset file.
pub fn read_dataset_header(path: &Path) -> Result<DatasetHeader> {
    read_header(&mut Reader::open(path)?)
}
