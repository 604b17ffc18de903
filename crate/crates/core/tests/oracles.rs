//! Independent reference computations checked against the library.

use std::collections::HashSet;
use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

use rdcount::data::{build_dataset, DatasetSpec};
use rdcount::periodogram::{crop_column, crop_map, periodogram, Scale};
use rdcount::rng::{derive_seed, source, Stream};
use rdcount::scene::{
    echo_frame, make_frame, sample_scene, NormalizedFrame, OfdmConfig, SceneGenConfig, SceneSpec, Target,
};
use rdcount::window::{make_window_1d, window_response, Window2d, WindowKind};

fn small_cfg() -> OfdmConfig {
    OfdmConfig {
        n_fft: 16,
        n_use: 8,
        m_symbols: 4,
        m_per: 8,
        delta_f: 30e3,
        f_c: 28e9,
        t_cp: 1.0 / 30e3 / 8.0,
        crop_rows: 8,
        crop_cols: 8,
    }
}

fn random_frame(rows: usize, cols: usize, seed: u64) -> NormalizedFrame {
    let mut rng = source(seed);
    NormalizedFrame {
        data: Array2::from_shape_fn((rows, cols), |_| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        }),
    }
}

/// The double sum, straight from its definition.
fn direct_map(frame: &NormalizedFrame, w: &Array2<f64>, cfg: &OfdmConfig) -> Array2<f64> {
    let (rows, cols) = frame.data.dim();
    Array2::from_shape_fn((cfg.n_fft, cfg.m_per), |(n, m)| {
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..rows {
            for l in 0..cols {
                let arg = -2.0 * PI * (l * m) as f64 / cfg.m_per as f64 + 2.0 * PI * (k * n) as f64 / cfg.n_fft as f64;
                acc += frame.data[(k, l)] * w[(k, l)] * Complex64::from_polar(1.0, arg);
            }
        }
        acc.norm_sqr() / (cfg.n_fft * cfg.m_symbols) as f64
    })
}

fn max_rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / scale).fold(0.0, f64::max)
}

#[test]
fn fast_map_matches_direct_sum_for_every_window() {
    let cfg = small_cfg();
    let kinds = [WindowKind::Rectangular, WindowKind::Hann, WindowKind::DolphChebyshev { attenuation_db: 40.0 }];
    for seed in 0..4 {
        let frame = random_frame(cfg.n_use, cfg.m_symbols, seed);
        for kind in kinds {
            let w = Window2d::new(kind, cfg.n_use, cfg.m_symbols).unwrap();
            let fast = periodogram(&frame, &w, &cfg).unwrap().values;
            let slow = direct_map(&frame, &w.to_matrix(), &cfg);
            let err = max_rel_err(&fast, &slow);
            assert!(err < 1e-12, "{kind:?}: {err}");
        }
    }
}

#[test]
fn frame_entries_match_per_element_formula() {
    let cfg = OfdmConfig::desk();
    let targets = vec![
        Target {
            delay: 0.25 / cfg.delta_f / cfg.n_use as f64 * cfg.n_fft as f64 / 100.0,
            doppler: 311.0,
            amplitude: 1.3,
            phase: 0.4,
        },
        Target::from_kinematics(&cfg, 37.5, -4.2, 0.6, 2.0),
    ];
    let frame = echo_frame(&cfg, &targets);
    let t_o = 1.0 / cfg.delta_f + cfg.t_cp;
    for ((k, l), z) in frame.indexed_iter() {
        let mut want = Complex64::new(0.0, 0.0);
        for t in &targets {
            let phase = 2.0 * PI * l as f64 * t_o * t.doppler - 2.0 * PI * k as f64 * t.delay * cfg.delta_f + t.phase;
            want += Complex64::from_polar(t.amplitude, phase);
        }
        assert!((z - want).norm() <= 1e-12 * want.norm().max(1.0), "({k},{l}): {z} vs {want}");
    }
}

/// Target sitting exactly on range bin `n` and signed Doppler bin `m`.
fn on_bin(cfg: &OfdmConfig, n: usize, m: i64) -> Target {
    Target {
        delay: n as f64 / (cfg.delta_f * cfg.n_fft as f64),
        doppler: m as f64 / (cfg.t_o() * cfg.m_per as f64),
        amplitude: 1.0,
        phase: 0.0,
    }
}

#[test]
fn on_bin_peak_value_has_closed_form() {
    for cfg in [OfdmConfig::desk(), small_cfg()] {
        let frame = NormalizedFrame { data: echo_frame(&cfg, &[on_bin(&cfg, 3, 2)]) };
        let w = Window2d::new(WindowKind::Rectangular, cfg.n_use, cfg.m_symbols).unwrap();
        let map = periodogram(&frame, &w, &cfg).unwrap().values;
        let want = (cfg.n_use * cfg.n_use * cfg.m_symbols * cfg.m_symbols) as f64 / (cfg.n_fft * cfg.m_symbols) as f64;
        assert!((map[(3, 2)] - want).abs() < 1e-9 * want);
    }
    // Full-size geometry: 1284^2 * 64 / 4096.
    let cfg = OfdmConfig::full();
    assert_eq!((cfg.n_use * cfg.n_use * cfg.m_symbols) as f64 / cfg.n_fft as f64, 25_760.25);
}

#[test]
fn total_power_obeys_parseval() {
    let cfg = OfdmConfig::desk();
    let frame = random_frame(cfg.n_use, cfg.m_symbols, 9);
    for kind in [WindowKind::Rectangular, WindowKind::Hann] {
        let w = Window2d::new(kind, cfg.n_use, cfg.m_symbols).unwrap();
        let map = periodogram(&frame, &w, &cfg).unwrap().values;
        let energy: f64 = frame.data.iter().zip(w.to_matrix().iter()).map(|(z, g)| (z * g).norm_sqr()).sum();
        // Sum over the n_fft x m_per grid of |X|^2 is n_fft * m_per * energy.
        let want = energy * cfg.m_per as f64 / cfg.m_symbols as f64;
        let got: f64 = map.sum();
        assert!((got - want).abs() < 1e-10 * want, "{kind:?}: {got} vs {want}");
    }
}

#[test]
fn map_is_quadratic_in_the_frame() {
    let cfg = small_cfg();
    let frame = random_frame(cfg.n_use, cfg.m_symbols, 4);
    let w = Window2d::new(WindowKind::Hann, cfg.n_use, cfg.m_symbols).unwrap();
    let a = periodogram(&frame, &w, &cfg).unwrap().values;
    let alpha = Complex64::new(0.3, -1.7);
    let scaled = NormalizedFrame { data: frame.data.mapv(|z| z * alpha) };
    let b = periodogram(&scaled, &w, &cfg).unwrap().values;
    for (x, y) in a.iter().zip(&b) {
        assert!((x * alpha.norm_sqr() - y).abs() <= 1e-12 * y.abs().max(1e-12));
    }
}

#[test]
fn scene_counts_are_uniform() {
    // Chi-square over 12 classes, 11 degrees of freedom; 31.26 is the 0.999
    // quantile.
    let cfg = OfdmConfig::full();
    let gen = SceneGenConfig::full();
    let n = 10_000;
    let mut hist = [0usize; 12];
    for i in 0..n {
        let s = sample_scene(&cfg, &gen, &mut source(derive_seed(5, Stream::Train, i))).unwrap();
        hist[s.k() - 1] += 1;
    }
    let e = n as f64 / 12.0;
    let chi2: f64 = hist.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    assert!(chi2 < 31.26, "chi2 {chi2}, {hist:?}");
}

#[test]
fn seed_streams_are_disjoint() {
    let n = 10_000;
    let sets: Vec<HashSet<u64>> = [Stream::Train, Stream::Validation, Stream::Evaluation]
        .iter()
        .map(|&s| (0..n).map(|i| derive_seed(3, s, i)).collect())
        .collect();
    for s in &sets {
        assert_eq!(s.len(), n as usize);
    }
    assert!(sets[0].is_disjoint(&sets[1]));
    assert!(sets[0].is_disjoint(&sets[2]));
    assert!(sets[1].is_disjoint(&sets[2]));
}

#[test]
fn dataset_scene_digests_do_not_repeat_across_splits() {
    let spec = DatasetSpec {
        n_train: 40,
        n_val: 40,
        windows: vec![WindowKind::Rectangular],
        scale: Scale::Linear,
        seed: 3,
        cfg: OfdmConfig::desk(),
        gen: SceneGenConfig::desk(),
    };
    let d = build_dataset(&spec).unwrap();
    let a: HashSet<u64> = d.train.samples.iter().map(|s| s.scene_digest).collect();
    let b: HashSet<u64> = d.val.samples.iter().map(|s| s.scene_digest).collect();
    assert!(a.is_disjoint(&b));
}

#[test]
fn measured_noise_power_matches_requested_snr() {
    let cfg = OfdmConfig::desk();
    let scene = SceneSpec { targets: vec![], noise_var: 0.25, snr_db: 0.0 };
    let frame = make_frame(&cfg, &scene, &mut source(12));
    let p: f64 = frame.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / frame.data.len() as f64;
    // 5120 complex draws: relative standard error about 1.4%.
    assert!((p / 0.25 - 1.0).abs() < 0.06, "{p}");
}

#[test]
fn window_sidelobes_at_full_scale() {
    let rect = window_response(&make_window_1d(WindowKind::Rectangular, 1284).unwrap(), 4096).unwrap();
    let hann = window_response(&make_window_1d(WindowKind::Hann, 1284).unwrap(), 4096).unwrap();
    assert!((rect.first_sidelobe_db + 13.26).abs() < 0.5, "{rect:?}");
    assert!((hann.first_sidelobe_db + 31.5).abs() < 0.5, "{hann:?}");
    assert!(hann.width_3db_bins > rect.width_3db_bins);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn one_range_bin_delay_shifts_the_map_one_row(n in 0usize..40, m in -20i64..20, phase in 0.0..std::f64::consts::TAU) {
        let cfg = OfdmConfig::desk();
        let w = Window2d::new(WindowKind::Hann, cfg.n_use, cfg.m_symbols).unwrap();
        let mut t = on_bin(&cfg, n, m);
        t.delay += 0.37 / (cfg.delta_f * cfg.n_fft as f64);
        t.phase = phase;
        let mut u = t.clone();
        u.delay += 1.0 / (cfg.delta_f * cfg.n_fft as f64);
        let a = periodogram(&NormalizedFrame { data: echo_frame(&cfg, &[t]) }, &w, &cfg).unwrap().values;
        let b = periodogram(&NormalizedFrame { data: echo_frame(&cfg, &[u]) }, &w, &cfg).unwrap().values;
        let peak = a.iter().fold(0.0f64, |x, v| x.max(*v));
        for r in 0..cfg.n_fft {
            for c in 0..cfg.m_per {
                let diff = (a[(r, c)] - b[((r + 1) % cfg.n_fft, c)]).abs();
                prop_assert!(diff <= 1e-9 * peak);
            }
        }
    }

    #[test]
    fn on_bin_target_peaks_at_its_crop_cell(n in 0usize..48, m in -24i64..24, phase in 0.0..std::f64::consts::TAU) {
        let cfg = OfdmConfig::desk();
        let mut t = on_bin(&cfg, n, m);
        t.phase = phase;
        let frame = NormalizedFrame { data: echo_frame(&cfg, &[t]) };
        let w = Window2d::new(WindowKind::Rectangular, cfg.n_use, cfg.m_symbols).unwrap();
        let crop = crop_map(&periodogram(&frame, &w, &cfg).unwrap(), &cfg).unwrap();
        let (mut best, mut at) = (f64::MIN, (0, 0));
        for ((r, c), v) in crop.indexed_iter() {
            if *v > best {
                best = *v;
                at = (r, c);
            }
        }
        prop_assert_eq!(at, (n, crop_column(&cfg, m) as usize));
    }
}
