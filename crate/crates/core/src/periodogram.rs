//! Windowed range-Doppler periodogram, Doppler-centered crops and network
//! input scaling.
//!
//! Transform conventions: the symbol axis uses the forward kernel
//! `exp(-j 2 pi l m / m_per)` and the subcarrier axis the inverse kernel
//! `exp(+j 2 pi k n / n_fft)` (unnormalized). A target with delay `tau` and
//! Doppler `f_d` therefore peaks at row `tau * delta_f * n_fft` and column
//! `f_d * t_o * m_per (mod m_per)`.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::scene::{NormalizedFrame, OfdmConfig};
use crate::window::Window2d;

/// Relative floor applied before taking decibels.
pub const DB_FLOOR: f64 = 1e-12;

/// Full periodogram, `n_fft` range rows by `m_per` Doppler columns (unsigned
/// bin order).
#[derive(Clone, Debug, PartialEq)]
pub struct RdMap {
    pub values: Array2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Decibel,
}

impl Scale {
    pub(crate) fn code(self) -> u8 {
        match self {
            Scale::Linear => 0,
            Scale::Decibel => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Scale::Linear),
            1 => Some(Scale::Decibel),
            _ => None,
        }
    }
}

/// Network input: one crop per window, all the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct RdInput {
    pub channels: Vec<Array2<f32>>,
    pub scale: Scale,
}

impl RdInput {
    pub fn shape(&self) -> (usize, usize) {
        self.channels[0].dim()
    }

    /// Keeps only the listed channels, in the listed order.
    pub fn select(&self, channels: &[usize]) -> Result<RdInput> {
        let picked = channels
            .iter()
            .map(|&c| self.channels.get(c).cloned().ok_or_else(|| Error::domain(format!("channel {c} not present"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(RdInput { channels: picked, scale: self.scale })
    }
}

/// Reusable transform plans for one geometry. Plans are immutable and can
/// be shared across threads.
#[derive(Clone)]
pub struct PeriodogramPlan {
    cfg: OfdmConfig,
    doppler_fft: Arc<dyn Fft<f64>>,
    range_ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for PeriodogramPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeriodogramPlan").field("cfg", &self.cfg).finish()
    }
}

impl PeriodogramPlan {
    pub fn new(cfg: &OfdmConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg: cfg.clone(),
            doppler_fft: planner.plan_fft_forward(cfg.m_per),
            range_ifft: planner.plan_fft_inverse(cfg.n_fft),
        })
    }

    pub fn cfg(&self) -> &OfdmConfig {
        &self.cfg
    }

    /// Windowed periodogram of `frame`.
    pub fn periodogram(&self, frame: &NormalizedFrame, window: &Window2d) -> Result<RdMap> {
        let cfg = &self.cfg;
        let (rows, cols) = frame.data.dim();
        if (rows, cols) != (cfg.n_use, cfg.m_symbols) {
            return Err(Error::domain(format!(
                "frame is {rows}x{cols}, config expects {}x{}",
                cfg.n_use, cfg.m_symbols
            )));
        }
        if window.shape() != (rows, cols) {
            let (wr, wc) = window.shape();
            return Err(Error::domain(format!("window is {wr}x{wc}, frame is {rows}x{cols}")));
        }
        let zero = Complex64::new(0.0, 0.0);
        let m_per = cfg.m_per;
        let n_fft = cfg.n_fft;

        // Doppler transform per active subcarrier, zero-padded to m_per.
        let mut stage = vec![zero; rows * m_per];
        exec::for_each_chunk_mut(&mut stage, m_per, |k, buf| {
            let wk = window.row_weights[k];
            for (l, z) in frame.data.row(k).iter().enumerate() {
                buf[l] = z * (wk * window.col_weights[l]);
            }
            self.doppler_fft.process(buf);
        });

        // Range transform per Doppler bin, zero-padded to n_fft. Built
        // column-major, then transposed.
        let scale = 1.0 / (n_fft as f64 * cfg.m_symbols as f64);
        let mut by_col = vec![0.0f64; m_per * n_fft];
        exec::for_each_chunk_mut(&mut by_col, n_fft, |m, out| {
            let mut buf = vec![zero; n_fft];
            for k in 0..rows {
                buf[k] = stage[k * m_per + m];
            }
            self.range_ifft.process(&mut buf);
            for (o, z) in out.iter_mut().zip(&buf) {
                *o = z.norm_sqr() * scale;
            }
        });
        let values = Array2::from_shape_fn((n_fft, m_per), |(n, m)| by_col[m * n_fft + n]);
        Ok(RdMap { values })
    }
}

/// One-shot periodogram; builds a plan each call.
pub fn periodogram(frame: &NormalizedFrame, window: &Window2d, cfg: &OfdmConfig) -> Result<RdMap> {
    PeriodogramPlan::new(cfg)?.periodogram(frame, window)
}

/// Crop column holding signed Doppler bin `signed_bin`.
pub fn crop_column(cfg: &OfdmConfig, signed_bin: i64) -> i64 {
    signed_bin + (cfg.crop_cols / 2) as i64
}

/// Near-range rows and the zero-centered Doppler columns, negative Doppler
/// on the left.
pub fn crop_map(map: &RdMap, cfg: &OfdmConfig) -> Result<Array2<f64>> {
    let (n, m) = map.values.dim();
    if cfg.crop_rows > n || cfg.crop_cols > m {
        return Err(Error::domain(format!("crop {}x{} does not fit map {n}x{m}", cfg.crop_rows, cfg.crop_cols)));
    }
    let half = (cfg.crop_cols / 2) as i64;
    Ok(Array2::from_shape_fn((cfg.crop_rows, cfg.crop_cols), |(r, c)| {
        let signed = c as i64 - half;
        let col = signed.rem_euclid(m as i64) as usize;
        map.values[(r, col)]
    }))
}

/// Stacks crops into channels, converting to decibels if requested.
pub fn to_input(crops: &[Array2<f64>], scale: Scale) -> Result<RdInput> {
    if crops.is_empty() || crops.len() > 2 {
        return Err(Error::domain(format!("expected 1 or 2 crops, got {}", crops.len())));
    }
    let dim = crops[0].dim();
    if crops.iter().any(|c| c.dim() != dim) {
        return Err(Error::domain("crops differ in shape"));
    }
    let channels = crops
        .iter()
        .map(|crop| match scale {
            Scale::Linear => crop.mapv(|x| x as f32),
            Scale::Decibel => {
                let x_max = crop.iter().cloned().fold(0.0f64, f64::max);
                // An all-zero crop maps to the absolute floor.
                let floor = if x_max > 0.0 { DB_FLOOR * x_max } else { DB_FLOOR };
                crop.mapv(|x| (10.0 * x.max(floor).log10()) as f32)
            }
        })
        .collect();
    Ok(RdInput { channels, scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::source;
    use crate::scene::{make_frame, SceneSpec, Target};
    use crate::window::WindowKind;

    fn small_cfg() -> OfdmConfig {
        OfdmConfig { n_fft: 16, n_use: 8, m_symbols: 4, m_per: 8, crop_rows: 16, crop_cols: 8, ..OfdmConfig::desk() }
    }

    #[test]
    fn zero_frame_gives_zero_map() {
        let cfg = small_cfg();
        let frame = NormalizedFrame { data: Array2::zeros((8, 4)) };
        let w = Window2d::new(WindowKind::Hann, 8, 4).unwrap();
        let map = periodogram(&frame, &w, &cfg).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let cfg = small_cfg();
        let frame = NormalizedFrame { data: Array2::zeros((7, 4)) };
        let w = Window2d::new(WindowKind::Hann, 8, 4).unwrap();
        assert!(periodogram(&frame, &w, &cfg).is_err());
    }

    #[test]
    fn crop_centering() {
        let cfg = OfdmConfig::full();
        assert_eq!(crop_column(&cfg, 0), 100);
        assert_eq!(crop_column(&cfg, -3), 97);
    }

    #[test]
    fn decibel_floor() {
        let crop = Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
        let input = to_input(std::slice::from_ref(&crop), Scale::Decibel).unwrap();
        assert_eq!(input.channels[0][(0, 0)], 0.0);
        assert!((input.channels[0][(0, 1)] + 120.0).abs() < 1e-4);
        let zeros = Array2::<f64>::zeros((3, 3));
        let z = to_input(&[zeros], Scale::Decibel).unwrap();
        assert!(z.channels[0].iter().all(|&v| v == z.channels[0][(0, 0)]));
        let lin = to_input(std::slice::from_ref(&crop), Scale::Linear).unwrap();
        assert_eq!(lin.channels.len(), 1);
        assert_eq!(lin.channels[0][(0, 0)], 1.0);
        let two = to_input(&[crop.clone(), crop.clone()], Scale::Decibel).unwrap();
        assert_eq!(two.channels[0], two.channels[1]);
        let bad = Array2::<f64>::zeros((2, 1));
        assert!(to_input(&[crop, bad], Scale::Linear).is_err());
    }

    #[test]
    fn window_scaling_scales_map_quadratically() {
        let cfg = small_cfg();
        let scene = SceneSpec {
            targets: vec![Target { delay: 1e-6, doppler: 3e3, amplitude: 1.0, phase: 0.3 }],
            noise_var: 0.1,
            snr_db: 0.0,
        };
        let frame = make_frame(&cfg, &scene, &mut source(5));
        let w = Window2d::new(WindowKind::Hann, 8, 4).unwrap();
        let mut w2 = w.clone();
        w2.row_weights.iter_mut().for_each(|x| *x *= 3.0);
        let a = periodogram(&frame, &w, &cfg).unwrap();
        let b = periodogram(&frame, &w2, &cfg).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!((9.0 * x - y).abs() <= 1e-9 * y.abs().max(1e-12));
        }
    }
}
