//! Tapers applied to the frame before the periodogram transforms.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Rectangular,
    Hann,
    DolphChebyshev { attenuation_db: f64 },
}

impl WindowKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WindowKind::DolphChebyshev { attenuation_db } if !(attenuation_db.is_finite() && attenuation_db > 0.0) => {
                Err(Error::config(format!(
                    "window: Dolph-Chebyshev attenuation {attenuation_db} must be finite and > 0"
                )))
            }
            _ => Ok(()),
        }
    }

    pub(crate) fn code(&self) -> (u8, f64) {
        match *self {
            WindowKind::Rectangular => (0, 0.0),
            WindowKind::Hann => (1, 0.0),
            WindowKind::DolphChebyshev { attenuation_db } => (2, attenuation_db),
        }
    }

    pub(crate) fn from_code(code: u8, param: f64) -> Option<Self> {
        match code {
            0 => Some(WindowKind::Rectangular),
            1 => Some(WindowKind::Hann),
            2 => Some(WindowKind::DolphChebyshev { attenuation_db: param }),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            WindowKind::Rectangular => "rectangular".into(),
            WindowKind::Hann => "hann".into(),
            WindowKind::DolphChebyshev { attenuation_db } => format!("chebyshev({attenuation_db} dB)"),
        }
    }
}

/// Symmetric, peak-normalized window of `length` samples. A length-2 Hann
/// window is all zeros and is returned as such.
pub fn make_window_1d(kind: WindowKind, length: usize) -> Result<Vec<f64>> {
    if length < 2 {
        return Err(Error::domain(format!("window length {length} < 2")));
    }
    kind.validate().map_err(|e| Error::domain(e.to_string()))?;
    let w = match kind {
        WindowKind::Rectangular => vec![1.0; length],
        WindowKind::Hann => {
            let denom = (length - 1) as f64;
            (0..length).map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / denom).cos())).collect()
        }
        WindowKind::DolphChebyshev { attenuation_db } => chebyshev(length, attenuation_db),
    };
    Ok(peak_normalize(w))
}

fn peak_normalize(mut w: Vec<f64>) -> Vec<f64> {
    let peak = w.iter().cloned().fold(f64::MIN, f64::max);
    if peak > 0.0 && peak != 1.0 {
        w.iter_mut().for_each(|x| *x /= peak);
    }
    w
}

/// Dolph-Chebyshev taper: samples of the Chebyshev polynomial on the unit
/// circle, brought back to the time domain with one DFT.
fn chebyshev(m: usize, attenuation_db: f64) -> Vec<f64> {
    let order = (m - 1) as f64;
    let ripple = 10f64.powf(attenuation_db / 20.0);
    let beta = (ripple.acosh() / order).cosh();
    let odd = m % 2 == 1;
    let mut p: Vec<Complex64> = (0..m)
        .map(|k| {
            let x = beta * (PI * k as f64 / m as f64).cos();
            let v = if x > 1.0 {
                (order * x.acosh()).cosh()
            } else if x < -1.0 {
                let sign = if odd { 1.0 } else { -1.0 };
                sign * (order * (-x).acosh()).cosh()
            } else {
                (order * x.acos()).cos()
            };
            if odd {
                Complex64::new(v, 0.0)
            } else {
                v * Complex64::from_polar(1.0, PI * k as f64 / m as f64)
            }
        })
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut p);
    let re: Vec<f64> = p.iter().map(|z| z.re).collect();
    if odd {
        let n = m.div_ceil(2);
        re[1..n].iter().rev().chain(&re[..n]).copied().collect()
    } else {
        let n = m / 2 + 1;
        re[1..n].iter().rev().chain(&re[1..n]).copied().collect()
    }
}

/// Separable 2D window; entry (k, l) is `row_weights[k] * col_weights[l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Window2d {
    pub row_weights: Vec<f64>,
    pub col_weights: Vec<f64>,
}

impl Window2d {
    pub fn new(kind: WindowKind, rows: usize, cols: usize) -> Result<Self> {
        Ok(Self { row_weights: make_window_1d(kind, rows)?, col_weights: make_window_1d(kind, cols)? })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.row_weights.len(), self.col_weights.len())
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.shape(), |(k, l)| self.row_weights[k] * self.col_weights[l])
    }
}

/// Magnitude response features of a zero-padded window transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowResponse {
    /// Crest of the sidelobe next to the mainlobe, in dB relative to the peak.
    pub first_sidelobe_db: f64,
    /// Two-sided -3 dB mainlobe width in transform bins (linearly
    /// interpolated).
    pub width_3db_bins: f64,
}

/// Measures the mainlobe/sidelobe shape of `weights` zero-padded to `n_fft`.
pub fn window_response(weights: &[f64], n_fft: usize) -> Result<WindowResponse> {
    if weights.len() > n_fft {
        return Err(Error::domain("window longer than transform"));
    }
    let mut buf: Vec<Complex64> = weights.iter().map(|&w| Complex64::new(w, 0.0)).collect();
    buf.resize(n_fft, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
    let mag: Vec<f64> = buf.iter().map(|z| z.norm()).collect();
    let (side_bin, width_3db_bins) = lobe_bins(&mag)?;
    // The sidelobe crest generally falls between bins; maximize the
    // continuous transform over the neighbouring bin interval.
    let dtft = |bin: f64| {
        let step = -2.0 * std::f64::consts::PI * bin / n_fft as f64;
        weights.iter().enumerate().map(|(i, &w)| Complex64::from_polar(w, step * i as f64)).sum::<Complex64>().norm()
    };
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (side_bin as f64 - 1.0, side_bin as f64 + 1.0);
    for _ in 0..60 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if dtft(m1) < dtft(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let side = dtft(0.5 * (lo + hi)).max(mag[side_bin]);
    Ok(WindowResponse { first_sidelobe_db: 20.0 * (side / mag[0]).log10(), width_3db_bins })
}

/// Bin of the first sidelobe maximum and the interpolated -3 dB width, from a
/// magnitude spectrum whose peak is bin 0.
fn lobe_bins(mag: &[f64]) -> Result<(usize, f64)> {
    let n = mag.len();
    let peak = mag[0];
    if !(peak > 0.0) {
        return Err(Error::domain("window has no energy"));
    }
    let half = n / 2;
    let null = (1..half)
        .find(|&i| mag[i] <= mag[i - 1] && mag[i] <= mag[i + 1])
        .ok_or_else(|| Error::domain("no mainlobe null below Nyquist"))?;
    let side = (null..half)
        .find(|&i| mag[i] >= mag[i - 1] && mag[i] >= mag[i + 1])
        .ok_or_else(|| Error::domain("no sidelobe below Nyquist"))?;
    let target = peak / 2f64.sqrt();
    let mut width = 0.0;
    for i in 1..=null {
        if mag[i] < target {
            let frac = (mag[i - 1] - target) / (mag[i - 1] - mag[i]);
            width = 2.0 * ((i - 1) as f64 + frac);
            break;
        }
    }
    Ok((side, width))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rectangular_and_hann_examples() {
        assert_eq!(make_window_1d(WindowKind::Rectangular, 4).unwrap(), vec![1.0; 4]);
        let h = make_window_1d(WindowKind::Hann, 5).unwrap();
        let expect = [0.0, 0.5, 1.0, 0.5, 0.0];
        for (a, b) in h.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(make_window_1d(WindowKind::Hann, 1).is_err());
        assert!(make_window_1d(WindowKind::DolphChebyshev { attenuation_db: -3.0 }, 8).is_err());
    }

    #[test]
    fn chebyshev_matches_reference_taper() {
        // scipy.signal.windows.chebwin(7, 60) and chebwin(8, 60)
        let odd = [
            0.087_062_625_923_214_48,
            0.380_025_263_041_963_77,
            0.794_724_449_457_172_1,
            1.0,
            0.794_724_449_457_172_1,
            0.380_025_263_041_963_77,
            0.087_062_625_923_214_48,
        ];
        let even = [
            0.068_475_554_163_996_7,
            0.303_219_161_655_201_9,
            0.686_846_620_773_932_4,
            1.0,
            1.0,
            0.686_846_620_773_932_4,
            0.303_219_161_655_201_9,
            0.068_475_554_163_996_7,
        ];
        let kind = WindowKind::DolphChebyshev { attenuation_db: 60.0 };
        for (w, r) in make_window_1d(kind, 7).unwrap().iter().zip(odd) {
            assert!((w - r).abs() < 1e-12, "{w} vs {r}");
        }
        for (w, r) in make_window_1d(kind, 8).unwrap().iter().zip(even) {
            assert!((w - r).abs() < 1e-12, "{w} vs {r}");
        }
    }

    #[test]
    fn chebyshev_sidelobes_are_equiripple_at_requested_level() {
        let w = make_window_1d(WindowKind::DolphChebyshev { attenuation_db: 60.0 }, 64).unwrap();
        let r = window_response(&w, 4096).unwrap();
        assert!((r.first_sidelobe_db + 60.0).abs() < 0.5, "{r:?}");
    }

    proptest! {
        #[test]
        fn windows_are_symmetric_and_peak_normalized(len in 3usize..300, kind in 0u8..3) {
            let kind = WindowKind::from_code(kind, 50.0).unwrap();
            let w = make_window_1d(kind, len).unwrap();
            let peak = w.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert!((peak - 1.0).abs() < 1e-12);
            for i in 0..len {
                prop_assert!(w[i].is_finite());
                prop_assert!((w[i] - w[len - 1 - i]).abs() < 1e-9);
            }
            if kind == WindowKind::Hann {
                prop_assert_eq!(w[0], 0.0);
                prop_assert!(w[len - 1].abs() < 1e-15);
            }
        }
    }
}
