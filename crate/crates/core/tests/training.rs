mod common;

use rdcount::data::{evaluate, metrics, train, Condition, ConstantPredictor, EvalSpec, ModelPredictor, TrainConfig};
use rdcount::nn::model::loss_and_grad;
use rdcount::nn::{Checkpoint, ModelParams};
use rdcount::periodogram::Scale;
use rdcount::rng::{stream_source, Stream};
use rdcount::scene::{OfdmConfig, SceneGenConfig};
use rdcount::window::WindowKind;

use common::{max_gradient_error, tiny_spec, toy_datasets, toy_spec};

#[test]
fn analytic_gradients_match_finite_differences() {
    for seed in 0..3 {
        let err = max_gradient_error(&tiny_spec(), seed, 1e-5, 1e-6);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn l2_changes_loss_by_half_weight_norm() {
    let spec = tiny_spec();
    let params = ModelParams::<f64>::init(&spec, &mut rdcount::rng::source(1)).unwrap();
    let x = rdcount::nn::Tensor::filled(&[2, 2, 8, 8], 0.3);
    let a = loss_and_grad(&spec, &params, &x, &[1, 3], 0.0, &mut rdcount::rng::source(2)).unwrap();
    let b = loss_and_grad(&spec, &params, &x, &[1, 3], 0.01, &mut rdcount::rng::source(2)).unwrap();
    let want = 0.005 * params.weight_norm_sq();
    assert!(((b.loss - a.loss) - want).abs() < 1e-12 * want.max(1.0));
}

fn toy_cfg(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig { epochs, batch: 20, lr, l2: 1e-4, shuffle_seed: 11, checkpoint_every: 0, lr_decay: None }
}

#[test]
fn zero_learning_rate_keeps_learnable_parameters() {
    let d = toy_datasets(60, 2);
    let spec = toy_spec(2);
    let out = train(&d.train, &d.val, &[0, 1], &spec, &toy_cfg(1, 0.0)).unwrap();
    let init = ModelParams::<f32>::init(&spec, &mut stream_source(11, Stream::Init, 0)).unwrap();
    for (a, b) in out.params.learnable().iter().zip(init.learnable()) {
        assert_eq!(a.tensor.data(), b.tensor.data(), "{}", a.name);
    }
}

#[test]
fn same_seed_gives_identical_history() {
    let d = toy_datasets(60, 3);
    let spec = toy_spec(1);
    let a = train(&d.train, &d.val, &[1], &spec, &toy_cfg(2, 1e-3)).unwrap();
    let b = train(&d.train, &d.val, &[1], &spec, &toy_cfg(2, 1e-3)).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.history.to_csv(), b.history.to_csv());
    assert_eq!(a.params, b.params);
}

#[test]
fn toy_training_lowers_cross_entropy() {
    let d = toy_datasets(200, 4);
    let spec = toy_spec(2);
    let out = train(&d.train, &d.val, &[0, 1], &spec, &toy_cfg(10, 1e-3)).unwrap();
    let e = &out.history.epochs;
    assert_eq!(e.len(), 10);
    assert!(e[9].train_ce < e[0].train_ce, "{:?}", e);
}

#[test]
fn channel_mismatch_is_rejected() {
    let d = toy_datasets(10, 5);
    assert!(train(&d.train, &d.val, &[0, 1], &toy_spec(1), &toy_cfg(1, 1e-3)).is_err());
}

#[test]
fn evaluation_does_not_touch_the_model() {
    let d = toy_datasets(40, 6);
    let spec = toy_spec(2);
    let out = train(&d.train, &d.val, &[0, 1], &spec, &toy_cfg(1, 1e-3)).unwrap();
    let digest = |p: &ModelParams<f32>| Checkpoint::new(&spec, p.clone(), None, [0; 32], 0, "x").to_bytes();
    let before = digest(&out.params);
    metrics(&spec, &out.params, &d.val, &[0, 1]).unwrap();
    let es = EvalSpec {
        cfg: OfdmConfig::desk(),
        gen: SceneGenConfig { k_max: 2, ..SceneGenConfig::desk() },
        windows: vec![WindowKind::Rectangular, WindowKind::Hann],
        scale: Scale::Decibel,
        seed: 1,
        n_trials: 20,
        conditions: vec![Condition::Snr(0.0)],
    };
    evaluate(&ModelPredictor { spec: &spec, params: &out.params, channels: vec![0, 1] }, &es).unwrap();
    assert_eq!(before, digest(&out.params));
}

#[test]
fn constant_six_matches_closed_form_mse() {
    let n = 2000;
    let es = EvalSpec {
        cfg: OfdmConfig::desk(),
        gen: SceneGenConfig { k_max: 12, ..SceneGenConfig::desk() },
        windows: vec![WindowKind::Rectangular],
        scale: Scale::Linear,
        seed: 21,
        n_trials: n,
        conditions: vec![Condition::Snr(0.0)],
    };
    let r = evaluate(&ConstantPredictor { h_t: 12, count: 6 }, &es).unwrap();
    let mean = 146.0 / 12.0;
    let second: f64 = (1..=12).map(|k| (6.0 - k as f64).powi(4)).sum::<f64>() / 12.0;
    let sigma = ((second - mean * mean) / n as f64).sqrt();
    assert!((r.overall_mse - mean).abs() < 3.0 * sigma, "{} vs {mean} (sigma {sigma})", r.overall_mse);
    assert!((0.0..=1.0).contains(&r.records[0].accuracy));
}
