#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;

use rdcount::data::{build_dataset, DatasetSpec, Datasets};
use rdcount::nn::model::loss_and_grad;
use rdcount::nn::{ModelParams, NetworkSpec, Tensor};
use rdcount::periodogram::Scale;
use rdcount::rng::source;
use rdcount::scene::{OfdmConfig, SceneGenConfig};
use rdcount::window::WindowKind;

/// 8x8x2 input, two blocks of widths 2 and 3, three classes.
pub fn tiny_spec() -> NetworkSpec {
    NetworkSpec {
        input_hw: (8, 8),
        in_channels: 2,
        widths: vec![2, 3],
        kernel: 5,
        dropout: vec![(2, 0.25)],
        head_width: 4,
        h_t: 3,
    }
}

/// Largest relative disagreement between analytic and central-difference
/// gradients over every learnable value, in f64.
pub fn max_gradient_error(spec: &NetworkSpec, seed: u64, h: f64, floor: f64) -> f64 {
    let mut rng = source(seed);
    let mut params = ModelParams::<f64>::init(spec, &mut rng).unwrap();
    // Non-trivial BN affine and biases.
    for t in params.learnable_mut() {
        for v in t.data_mut() {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let b = 4;
    let (rows, cols) = spec.input_hw;
    let n = b * spec.in_channels * rows * cols;
    let x = Tensor::from_vec(&[b, spec.in_channels, rows, cols], (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .unwrap();
    let labels: Vec<usize> = (0..b).map(|i| i % spec.h_t + 1).collect();
    let l2 = 1e-3;
    let mask_seed = seed ^ 0xabcdef;
    let loss = |p: &ModelParams<f64>| loss_and_grad(spec, p, &x, &labels, l2, &mut source(mask_seed)).unwrap();
    let analytic = loss(&params).grads;
    let mut worst = 0.0f64;
    for (ti, g) in analytic.iter().enumerate() {
        for j in 0..g.len() {
            let orig = params.learnable_mut()[ti].data()[j];
            params.learnable_mut()[ti].data_mut()[j] = orig + h;
            let up = loss(&params).loss;
            params.learnable_mut()[ti].data_mut()[j] = orig - h;
            let down = loss(&params).loss;
            params.learnable_mut()[ti].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = g.data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    worst
}

/// Desk periodograms of one or two targets at +9 dB.
pub fn toy_datasets(n_train: usize, seed: u64) -> Datasets {
    let gen = SceneGenConfig { k_min: 1, k_max: 2, snr_lo: 9.0, snr_hi: 9.0, ..SceneGenConfig::desk() };
    let spec = DatasetSpec {
        n_train,
        n_val: 50,
        windows: vec![WindowKind::Rectangular, WindowKind::Hann],
        scale: Scale::Decibel,
        seed,
        cfg: OfdmConfig::desk(),
        gen,
    };
    build_dataset(&spec).unwrap()
}

/// Small 48x48 network for the toy task.
pub fn toy_spec(in_channels: usize) -> NetworkSpec {
    NetworkSpec {
        input_hw: (48, 48),
        in_channels,
        widths: vec![8, 16, 16, 16, 16],
        kernel: 5,
        dropout: vec![],
        head_width: 16,
        h_t: 2,
    }
}
