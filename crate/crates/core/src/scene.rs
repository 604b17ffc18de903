//! Multi-target scenes and the normalized OFDM frame.
//!
//! The frame is synthesized directly in its normalized form (received grid
//! divided element-wise by the transmitted grid). With a unit-modulus symbol
//! alphabet that division leaves white Gaussian noise white, so the
//! modulation chain is not simulated.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomSource;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Waveform and periodogram geometry.
///
/// The symbol duration including cyclic prefix is derived by
/// [`OfdmConfig::t_o`] and never stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmConfig {
    /// IFFT size over subcarriers (N = N_Per).
    pub n_fft: usize,
    /// Active subcarriers, mapped to rows `0..n_use`.
    pub n_use: usize,
    /// OFDM symbols per frame (M).
    pub m_symbols: usize,
    /// FFT size over symbols (M_Per).
    pub m_per: usize,
    /// Subcarrier spacing in Hz.
    pub delta_f: f64,
    /// Carrier frequency in Hz.
    pub f_c: f64,
    /// Cyclic-prefix duration in seconds.
    pub t_cp: f64,
    pub crop_rows: usize,
    pub crop_cols: usize,
}

impl OfdmConfig {
    /// 4096-point transform, 1284 active subcarriers, 64 symbols padded to
    /// 256, 30 kHz spacing at 28 GHz, 200x200 crops.
    pub fn full() -> Self {
        Self {
            n_fft: 4096,
            n_use: 1284,
            m_symbols: 64,
            m_per: 256,
            delta_f: 30e3,
            f_c: 28e9,
            t_cp: 1.0 / 30e3 / 8.0,
            crop_rows: 200,
            crop_cols: 200,
        }
    }

    /// Scaled-down geometry used for CI-time experiments.
    pub fn desk() -> Self {
        Self {
            n_fft: 512,
            n_use: 160,
            m_symbols: 32,
            m_per: 64,
            delta_f: 30e3,
            f_c: 28e9,
            t_cp: 1.0 / 30e3 / 8.0,
            crop_rows: 48,
            crop_cols: 48,
        }
    }

    /// Symbol duration including the cyclic prefix.
    pub fn t_o(&self) -> f64 {
        1.0 / self.delta_f + self.t_cp
    }

    /// Fractional range bin of a round-trip delay.
    pub fn range_bin(&self, delay: f64) -> f64 {
        delay * self.delta_f * self.n_fft as f64
    }

    /// Fractional signed Doppler bin of a Doppler shift.
    pub fn doppler_bin(&self, doppler: f64) -> f64 {
        doppler * self.t_o() * self.m_per as f64
    }

    /// Largest |signed Doppler bin| that still lands inside the centered crop.
    pub fn doppler_half_crop(&self) -> f64 {
        (self.crop_cols as f64 - 1.0) / 2.0
    }

    /// Largest radial speed whose Doppler peak stays inside the crop.
    pub fn crop_velocity(&self) -> f64 {
        let f_d = self.doppler_half_crop() / (self.t_o() * self.m_per as f64);
        f_d * SPEED_OF_LIGHT / (2.0 * self.f_c)
    }

    /// Largest distance whose range peak stays inside the crop.
    pub fn crop_range(&self) -> f64 {
        (self.crop_rows as f64 - 1.0) * SPEED_OF_LIGHT / (2.0 * self.delta_f * self.n_fft as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("n_fft", self.n_fft),
            ("n_use", self.n_use),
            ("m_symbols", self.m_symbols),
            ("m_per", self.m_per),
            ("crop_rows", self.crop_rows),
            ("crop_cols", self.crop_cols),
        ] {
            if v == 0 {
                errs.push(format!("ofdm.{name}: must be >= 1"));
            }
        }
        if self.n_use > self.n_fft {
            errs.push(format!("ofdm.n_use: {} exceeds n_fft {}", self.n_use, self.n_fft));
        }
        if self.m_symbols > self.m_per {
            errs.push(format!("ofdm.m_symbols: {} exceeds m_per {}", self.m_symbols, self.m_per));
        }
        if self.crop_rows > self.n_fft {
            errs.push(format!("ofdm.crop_rows: {} exceeds n_fft {}", self.crop_rows, self.n_fft));
        }
        if self.crop_cols > self.m_per {
            errs.push(format!("ofdm.crop_cols: {} exceeds m_per {}", self.crop_cols, self.m_per));
        }
        if !(self.delta_f.is_finite() && self.delta_f > 0.0) {
            errs.push("ofdm.delta_f: must be finite and > 0".into());
        }
        if !(self.f_c.is_finite() && self.f_c > 0.0) {
            errs.push("ofdm.f_c: must be finite and > 0".into());
        }
        if !(self.t_cp.is_finite() && self.t_cp >= 0.0) {
            errs.push("ofdm.t_cp: must be finite and >= 0".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Random scene generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneGenConfig {
    pub k_min: usize,
    pub k_max: usize,
    /// Range interval in meters.
    pub d_min: f64,
    pub d_max: f64,
    /// Speed limit in m/s; `None` uses the largest speed that fits the crop.
    #[serde(default)]
    pub v_max: Option<f64>,
    /// Path-loss reference range; `None` uses the interval midpoint.
    #[serde(default)]
    pub d_ref: Option<f64>,
    pub snr_lo: f64,
    pub snr_hi: f64,
}

impl SceneGenConfig {
    pub fn full() -> Self {
        Self { k_min: 1, k_max: 12, d_min: 10.0, d_max: 240.0, v_max: None, d_ref: None, snr_lo: -30.0, snr_hi: 9.0 }
    }

    pub fn desk() -> Self {
        Self { k_min: 1, k_max: 6, d_min: 10.0, d_max: 80.0, v_max: None, d_ref: None, snr_lo: -30.0, snr_hi: 9.0 }
    }

    pub fn velocity_limit(&self, cfg: &OfdmConfig) -> f64 {
        self.v_max.unwrap_or_else(|| cfg.crop_velocity())
    }

    pub fn reference_range(&self) -> f64 {
        self.d_ref.unwrap_or(0.5 * (self.d_min + self.d_max))
    }

    /// Checks the generator against the crop geometry and the class count.
    pub fn validate(&self, cfg: &OfdmConfig, h_t: usize) -> Result<()> {
        let mut errs = Vec::new();
        if self.k_min < 1 {
            errs.push("gen.k_min: must be >= 1".to_string());
        }
        if self.k_max < self.k_min {
            errs.push(format!("gen.k_max: {} is below k_min {}", self.k_max, self.k_min));
        }
        if self.k_max > h_t {
            errs.push(format!("gen.k_max: {} exceeds h_t {}", self.k_max, h_t));
        }
        if !(self.d_min.is_finite() && self.d_min > 0.0) {
            errs.push("gen.d_min: must be finite and > 0".into());
        }
        if !(self.d_max.is_finite() && self.d_max >= self.d_min) {
            errs.push("gen.d_max: must be finite and >= d_min".into());
        }
        let tol = 1e-9;
        let max_bin = cfg.range_bin(2.0 * self.d_max / SPEED_OF_LIGHT);
        if max_bin > (cfg.crop_rows as f64 - 1.0) * (1.0 + tol) {
            errs.push(format!(
                "gen.d_max: {} m maps to range bin {max_bin:.3}, past crop row {}",
                self.d_max,
                cfg.crop_rows - 1
            ));
        }
        let v = self.velocity_limit(cfg);
        if !(v.is_finite() && v >= 0.0) {
            errs.push("gen.v_max: must be finite and >= 0".into());
        } else {
            let bin = cfg.doppler_bin(2.0 * v * cfg.f_c / SPEED_OF_LIGHT);
            if bin > cfg.doppler_half_crop() * (1.0 + tol) {
                errs.push(format!(
                    "gen.v_max: {v} m/s maps to Doppler bin {bin:.3}, past half crop {}",
                    cfg.doppler_half_crop()
                ));
            }
        }
        let d_ref = self.reference_range();
        if !(d_ref >= self.d_min && d_ref <= self.d_max) {
            errs.push(format!("gen.d_ref: {d_ref} outside [d_min, d_max]"));
        }
        if !(self.snr_lo.is_finite() && self.snr_hi.is_finite() && self.snr_hi >= self.snr_lo) {
            errs.push("gen.snr_hi: must be finite and >= snr_lo".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// One point scatterer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    /// Round-trip delay in seconds.
    pub delay: f64,
    /// Doppler shift in Hz.
    pub doppler: f64,
    pub amplitude: f64,
    /// Residual phase in radians, carrier term already absorbed.
    pub phase: f64,
}

impl Target {
    /// Target at `distance` meters moving at radial `velocity` m/s, for a
    /// monostatic (two-way) geometry.
    pub fn from_kinematics(cfg: &OfdmConfig, distance: f64, velocity: f64, amplitude: f64, phase: f64) -> Self {
        Self {
            delay: 2.0 * distance / SPEED_OF_LIGHT,
            doppler: 2.0 * velocity * cfg.f_c / SPEED_OF_LIGHT,
            amplitude,
            phase,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub targets: Vec<Target>,
    /// Per-element complex noise variance.
    pub noise_var: f64,
    pub snr_db: f64,
}

impl SceneSpec {
    pub fn k(&self) -> usize {
        self.targets.len()
    }
}

fn uniform(rng: &mut RandomSource, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Noise variance giving the requested echo-to-noise ratio against the mean
/// per-target echo power.
pub fn calibrate_noise(targets: &[Target], snr_db: f64) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::domain("calibrate_noise: empty target list"));
    }
    let mean_power = targets.iter().map(|t| t.amplitude * t.amplitude).sum::<f64>() / targets.len() as f64;
    Ok(mean_power * 10f64.powf(-snr_db / 10.0))
}

/// Draws a scene with a uniform target count.
pub fn sample_scene(cfg: &OfdmConfig, gen: &SceneGenConfig, rng: &mut RandomSource) -> Result<SceneSpec> {
    let k = rng.random_range(gen.k_min..=gen.k_max.max(gen.k_min));
    sample_scene_with_k(cfg, gen, k, rng)
}

/// Same as [`sample_scene`] but with the target count fixed.
pub fn sample_scene_with_k(
    cfg: &OfdmConfig,
    gen: &SceneGenConfig,
    k: usize,
    rng: &mut RandomSource,
) -> Result<SceneSpec> {
    cfg.validate()?;
    if gen.k_max < gen.k_min {
        return Err(Error::config(format!("gen.k_max: {} is below k_min {}", gen.k_max, gen.k_min)));
    }
    gen.validate(cfg, usize::MAX)?;
    if k == 0 {
        return Err(Error::domain("scene needs at least one target"));
    }
    let v_max = gen.velocity_limit(cfg);
    let d_ref = gen.reference_range();
    let mut targets = Vec::with_capacity(k);
    for _ in 0..k {
        let d = uniform(rng, gen.d_min, gen.d_max);
        let v = uniform(rng, -v_max, v_max);
        let phase = uniform(rng, 0.0, 2.0 * PI);
        let amplitude = (d_ref / d).powi(2);
        targets.push(Target::from_kinematics(cfg, d, v, amplitude, phase));
    }
    let snr_db = uniform(rng, gen.snr_lo, gen.snr_hi);
    let noise_var = calibrate_noise(&targets, snr_db)?;
    Ok(SceneSpec { targets, noise_var, snr_db })
}

/// Normalized frame, `n_use` subcarrier rows by `m_symbols` symbol columns.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedFrame {
    pub data: Array2<Complex64>,
}

/// Synthesizes the normalized frame of `scene`, noise included.
pub fn make_frame(cfg: &OfdmConfig, scene: &SceneSpec, rng: &mut RandomSource) -> NormalizedFrame {
    let mut data = echo_frame(cfg, &scene.targets);
    if scene.noise_var > 0.0 {
        let sigma = (scene.noise_var / 2.0).sqrt();
        for z in data.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *z += Complex64::new(re * sigma, im * sigma);
        }
    }
    NormalizedFrame { data }
}

/// Noise-free echo sum. Each target term factors into a subcarrier phasor
/// times a symbol phasor.
pub fn echo_frame(cfg: &OfdmConfig, targets: &[Target]) -> Array2<Complex64> {
    let t_o = cfg.t_o();
    let mut data = Array2::<Complex64>::zeros((cfg.n_use, cfg.m_symbols));
    let mut col = vec![Complex64::new(0.0, 0.0); cfg.m_symbols];
    for t in targets {
        let gain = Complex64::from_polar(t.amplitude, t.phase);
        for (l, c) in col.iter_mut().enumerate() {
            *c = gain * Complex64::from_polar(1.0, 2.0 * PI * l as f64 * t_o * t.doppler);
        }
        for (k, mut row) in data.rows_mut().into_iter().enumerate() {
            let r = Complex64::from_polar(1.0, -2.0 * PI * k as f64 * t.delay * cfg.delta_f);
            for (z, c) in row.iter_mut().zip(&col) {
                *z += r * c;
            }
        }
    }
    data
}
