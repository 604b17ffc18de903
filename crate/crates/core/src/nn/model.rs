//! Parameters, forward pass and analytic backward pass of the counter
//! network.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::periodogram::RdInput;
use crate::rng::RandomSource;

use super::layers::{self, BnCache};
use super::spec::NetworkSpec;
use super::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
const ZSCORE_STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub convs: Vec<ConvParams<T>>,
    pub norms: Vec<BnParams<T>>,
    pub proj: ConvParams<T>,
    pub fc_weight: Tensor<T>,
    pub fc_bias: Tensor<T>,
}

/// One learnable tensor as seen by the optimizer and checkpoints.
pub struct ParamRef<'a, T> {
    pub name: String,
    pub tensor: &'a Tensor<T>,
    /// Conv and FC weights take the l2 penalty; biases and BN affine do not.
    pub decay: bool,
}

impl<T: Real> ModelParams<T> {
    /// Fan-in scaled Gaussian weights, zero biases, unit BN scale.
    pub fn init(spec: &NetworkSpec, rng: &mut RandomSource) -> Result<Self> {
        spec.validate()?;
        let mut gauss = |shape: &[usize], fan_in: usize, gain: f64| {
            let n = Normal::new(0.0, (gain / fan_in as f64).sqrt()).unwrap();
            let data = (0..shape.iter().product()).map(|_| T::of(n.sample(rng))).collect();
            Tensor::from_vec(shape, data).unwrap()
        };
        let k = spec.kernel;
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut c_in = spec.in_channels;
        for &c in &spec.widths {
            convs.push(ConvParams { weight: gauss(&[c, c_in, k, k], c_in * k * k, 2.0), bias: Tensor::zeros(&[c]) });
            norms.push(BnParams {
                gamma: Tensor::filled(&[c], T::one()),
                beta: Tensor::zeros(&[c]),
                running_mean: Tensor::zeros(&[c]),
                running_var: Tensor::filled(&[c], T::one()),
            });
            c_in = c;
        }
        let proj = ConvParams {
            weight: gauss(&[spec.head_width, c_in, 1, 1], c_in, 2.0),
            bias: Tensor::zeros(&[spec.head_width]),
        };
        let fc_weight = gauss(&[spec.h_t, spec.head_width], spec.head_width, 1.0);
        Ok(Self { convs, norms, proj, fc_weight, fc_bias: Tensor::zeros(&[spec.h_t]) })
    }

    /// Learnable tensors in the fixed optimizer/checkpoint order.
    pub fn learnable(&self) -> Vec<ParamRef<'_, T>> {
        let mut out = Vec::new();
        for (i, (c, n)) in self.convs.iter().zip(&self.norms).enumerate() {
            out.push(ParamRef { name: format!("block{}.conv.weight", i + 1), tensor: &c.weight, decay: true });
            out.push(ParamRef { name: format!("block{}.conv.bias", i + 1), tensor: &c.bias, decay: false });
            out.push(ParamRef { name: format!("block{}.bn.gamma", i + 1), tensor: &n.gamma, decay: false });
            out.push(ParamRef { name: format!("block{}.bn.beta", i + 1), tensor: &n.beta, decay: false });
        }
        out.push(ParamRef { name: "proj.weight".into(), tensor: &self.proj.weight, decay: true });
        out.push(ParamRef { name: "proj.bias".into(), tensor: &self.proj.bias, decay: false });
        out.push(ParamRef { name: "fc.weight".into(), tensor: &self.fc_weight, decay: true });
        out.push(ParamRef { name: "fc.bias".into(), tensor: &self.fc_bias, decay: false });
        out
    }

    /// Mutable learnable tensors, same order as [`ModelParams::learnable`].
    pub fn learnable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for (c, n) in self.convs.iter_mut().zip(self.norms.iter_mut()) {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
            out.push(&mut n.gamma);
            out.push(&mut n.beta);
        }
        out.push(&mut self.proj.weight);
        out.push(&mut self.proj.bias);
        out.push(&mut self.fc_weight);
        out.push(&mut self.fc_bias);
        out
    }

    /// Running statistics in checkpoint order.
    pub fn running(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, n) in self.norms.iter().enumerate() {
            out.push((format!("block{}.bn.running_mean", i + 1), &n.running_mean));
            out.push((format!("block{}.bn.running_var", i + 1), &n.running_var));
        }
        out
    }

    pub fn running_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for n in self.norms.iter_mut() {
            out.push(&mut n.running_mean);
            out.push(&mut n.running_var);
        }
        out
    }

    /// Sum of squared decayed weights.
    pub fn weight_norm_sq(&self) -> f64 {
        self.learnable().iter().filter(|p| p.decay).map(|p| p.tensor.sum_squares()).sum()
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// estimates (unbiased variance).
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) {
        for (n, s) in self.norms.iter_mut().zip(stats) {
            let unbias = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
            for (i, (m, v)) in s.mean.iter().zip(&s.var).enumerate() {
                let rm = &mut n.running_mean.data_mut()[i];
                *rm = T::of((1.0 - BN_MOMENTUM) * rm.f64() + BN_MOMENTUM * m);
                let rv = &mut n.running_var.data_mut()[i];
                *rv = T::of((1.0 - BN_MOMENTUM) * rv.f64() + BN_MOMENTUM * v * unbias);
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let conv = |c: &ConvParams<T>| ConvParams { weight: c.weight.cast(), bias: c.bias.cast() };
        ModelParams {
            convs: self.convs.iter().map(conv).collect(),
            norms: self
                .norms
                .iter()
                .map(|n| BnParams {
                    gamma: n.gamma.cast(),
                    beta: n.beta.cast(),
                    running_mean: n.running_mean.cast(),
                    running_var: n.running_var.cast(),
                })
                .collect(),
            proj: conv(&self.proj),
            fc_weight: self.fc_weight.cast(),
            fc_bias: self.fc_bias.cast(),
        }
    }
}

/// Per-channel statistics of one BN layer over a training batch.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

struct BlockCache<T> {
    conv_in: Tensor<T>,
    bn: BnCache<T>,
    relu_out: Tensor<T>,
    pool_arg: Vec<u32>,
    mask: Option<Vec<T>>,
}

/// Intermediates kept for the backward pass.
pub struct ForwardCache<T> {
    blocks: Vec<BlockCache<T>>,
    head_in: Tensor<T>,
    proj_out: Tensor<T>,
    pooled: Tensor<T>,
    mode: Mode,
}

impl<T: Real> ForwardCache<T> {
    pub fn batch_stats(&self) -> Vec<BatchStats> {
        self.blocks
            .iter()
            .map(|b| {
                let (n, _, h, w) = b.conv_in.dims4();
                BatchStats { mean: b.bn.batch_mean.clone(), var: b.bn.batch_var.clone(), count: n * h * w }
            })
            .collect()
    }

    /// Input of the 1x1 projection, `[b, c, h, w]`.
    pub fn pre_head(&self) -> &Tensor<T> {
        &self.head_in
    }

    /// BN outputs before scale and shift, per block.
    pub fn normalized(&self, block: usize) -> &Tensor<T> {
        &self.blocks[block].bn.x_hat
    }
}

pub struct ForwardOutput<T> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    pub cache: ForwardCache<T>,
}

/// Z-scores each sample and channel and stacks a batch `[b, c, h, w]`.
pub fn zscore<T: Real>(inputs: &[&RdInput]) -> Result<Tensor<T>> {
    let c = inputs.first().ok_or_else(|| Error::domain("empty batch"))?.channels.len();
    zscore_select(inputs, &(0..c).collect::<Vec<_>>())
}

/// [`zscore`] over the listed channels only, in the listed order.
pub fn zscore_select<T: Real>(inputs: &[&RdInput], channels: &[usize]) -> Result<Tensor<T>> {
    let first = inputs.first().ok_or_else(|| Error::domain("empty batch"))?;
    let (h, w) = first.shape();
    let mut data = Vec::with_capacity(inputs.len() * channels.len() * h * w);
    for input in inputs {
        if input.channels.iter().any(|ch| ch.dim() != (h, w)) {
            return Err(Error::domain("batch inputs differ in shape"));
        }
        for &c in channels {
            let ch = input.channels.get(c).ok_or_else(|| Error::domain(format!("input has no channel {c}")))?;
            let n = (h * w) as f64;
            let first = ch.iter().next().copied().unwrap_or(0.0);
            if ch.iter().all(|&v| v == first) {
                data.extend(std::iter::repeat_n(T::zero(), h * w));
                continue;
            }
            let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = ch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / var.sqrt().max(ZSCORE_STD_FLOOR);
            data.extend(ch.iter().map(|&v| T::of((v as f64 - mean) * inv)));
        }
    }
    Tensor::from_vec(&[inputs.len(), channels.len(), h, w], data)
}

pub fn forward<T: Real>(
    spec: &NetworkSpec,
    params: &ModelParams<T>,
    x: &Tensor<T>,
    mode: Mode,
    rng: &mut RandomSource,
) -> Result<ForwardOutput<T>> {
    let (_, c, h, w) = match x.shape() {
        [b, c, h, w] => (*b, *c, *h, *w),
        s => return Err(Error::domain(format!("input must be rank 4, got {s:?}"))),
    };
    if (c, (h, w)) != (spec.in_channels, spec.input_hw) {
        return Err(Error::domain(format!(
            "input {c}x{h}x{w} does not match network {}x{}x{}",
            spec.in_channels, spec.input_hw.0, spec.input_hw.1
        )));
    }
    if params.convs.len() != spec.blocks() {
        return Err(Error::domain("parameters do not match network spec"));
    }
    let train = mode == Mode::Train;
    let mut act = x.clone();
    let mut blocks = Vec::with_capacity(spec.blocks());
    for (i, (conv, bn)) in params.convs.iter().zip(&params.norms).enumerate() {
        let z = layers::conv_forward(&act, &conv.weight, &conv.bias);
        let (y, bn_cache) =
            layers::bn_forward(&z, &bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var, BN_EPS, train);
        let r = layers::relu_forward(&y);
        let (p, pool_arg) = layers::maxpool_forward(&r);
        let (out, mask) = match spec.dropout_after(i + 1) {
            Some(rate) if train && rate > 0.0 => {
                let mask = layers::dropout_mask(p.len(), rate, rng);
                (layers::apply_mask(&p, &mask), Some(mask))
            }
            _ => (p, None),
        };
        blocks.push(BlockCache { conv_in: act, bn: bn_cache, relu_out: r, pool_arg, mask });
        act = out;
    }
    let proj = layers::relu_forward(&layers::conv_forward(&act, &params.proj.weight, &params.proj.bias));
    let pooled = layers::gap_forward(&proj);
    let logits = layers::fc_forward(&pooled, &params.fc_weight, &params.fc_bias);
    let probs = layers::softmax(&logits);
    Ok(ForwardOutput { logits, probs, cache: ForwardCache { blocks, head_in: act, proj_out: proj, pooled, mode } })
}

/// Gradients of the mean cross-entropy (plus l2 penalty) with respect to
/// every learnable tensor, in [`ModelParams::learnable`] order.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    dlogits: &Tensor<T>,
    l2: f64,
) -> Vec<Tensor<T>> {
    let (d_pooled, dfc_w, dfc_b) = layers::fc_backward(&cache.pooled, &params.fc_weight, dlogits);
    let d_proj = layers::gap_backward(cache.proj_out.shape(), &d_pooled);
    let d_proj = layers::relu_backward(&cache.proj_out, &d_proj);
    let pg = layers::conv_backward(&cache.head_in, &params.proj.weight, &d_proj, true);
    let mut d = pg.dx.expect("dx requested");

    let mut block_grads = Vec::with_capacity(cache.blocks.len());
    for (i, bc) in cache.blocks.iter().enumerate().rev() {
        if let Some(mask) = &bc.mask {
            d = layers::apply_mask(&d, mask);
        }
        let d_relu = layers::maxpool_backward(bc.relu_out.shape(), &bc.pool_arg, &d);
        let d_bn = layers::relu_backward(&bc.relu_out, &d_relu);
        let bg = layers::bn_backward(&d_bn, &params.norms[i].gamma, &bc.bn);
        let cg = layers::conv_backward(&bc.conv_in, &params.convs[i].weight, &bg.dx, i > 0);
        block_grads.push((cg.dw, cg.db, bg.dgamma, bg.dbeta));
        if let Some(dx) = cg.dx {
            d = dx;
        }
    }
    debug_assert!(cache.mode == Mode::Train || cache.blocks.iter().all(|b| b.mask.is_none()));

    let mut grads = Vec::new();
    for (dw, db, dg, dbt) in block_grads.into_iter().rev() {
        grads.extend([dw, db, dg, dbt]);
    }
    grads.extend([pg.dw, pg.db, dfc_w, dfc_b]);
    if l2 > 0.0 {
        for (g, p) in grads.iter_mut().zip(params.learnable()) {
            if p.decay {
                let l2 = T::of(l2);
                for (gv, pv) in g.data_mut().iter_mut().zip(p.tensor.data()) {
                    *gv += l2 * *pv;
                }
            }
        }
    }
    grads
}

pub struct LossAndGrad<T> {
    /// Mean cross-entropy plus `(l2 / 2) * sum ||w||^2`.
    pub loss: f64,
    pub cross_entropy: f64,
    pub grads: Vec<Tensor<T>>,
    pub batch_stats: Vec<BatchStats>,
    pub probs: Tensor<T>,
}

/// Validates 1-based counts and maps them to class indices.
pub fn label_classes(labels: &[usize], h_t: usize) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&k| {
            if (1..=h_t).contains(&k) {
                Ok(k - 1)
            } else {
                Err(Error::domain(format!("label {k} outside 1..={h_t}")))
            }
        })
        .collect()
}

/// Loss and analytic gradients for one mini-batch. Pure: running statistics
/// are returned, not applied.
pub fn loss_and_grad_mode<T: Real>(
    spec: &NetworkSpec,
    params: &ModelParams<T>,
    x: &Tensor<T>,
    labels: &[usize],
    l2: f64,
    mode: Mode,
    rng: &mut RandomSource,
) -> Result<LossAndGrad<T>> {
    let classes = label_classes(labels, spec.h_t)?;
    if classes.len() != x.shape()[0] {
        return Err(Error::domain("label count does not match batch"));
    }
    let out = forward(spec, params, x, mode, rng)?;
    let (ce, dlogits) = layers::cross_entropy(&out.probs, &classes);
    let grads = backward(params, &out.cache, &dlogits, l2);
    let loss = ce + 0.5 * l2 * params.weight_norm_sq();
    let batch_stats = if mode == Mode::Train { out.cache.batch_stats() } else { Vec::new() };
    Ok(LossAndGrad { loss, cross_entropy: ce, grads, batch_stats, probs: out.probs })
}

/// Train-mode loss and gradients.
pub fn loss_and_grad<T: Real>(
    spec: &NetworkSpec,
    params: &ModelParams<T>,
    x: &Tensor<T>,
    labels: &[usize],
    l2: f64,
    rng: &mut RandomSource,
) -> Result<LossAndGrad<T>> {
    loss_and_grad_mode(spec, params, x, labels, l2, Mode::Train, rng)
}

/// Count for one probability row: first maximal class, plus one.
pub fn count_from_probs<T: Real>(probs: &[T]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    best + 1
}

/// Eval-mode counts for a batch of inputs.
pub fn predict_counts<T: Real>(spec: &NetworkSpec, params: &ModelParams<T>, inputs: &[&RdInput]) -> Result<Vec<usize>> {
    predict_counts_select(spec, params, inputs, &(0..spec.in_channels).collect::<Vec<_>>())
}

/// Eval-mode counts using the listed input channels.
pub fn predict_counts_select<T: Real>(
    spec: &NetworkSpec,
    params: &ModelParams<T>,
    inputs: &[&RdInput],
    channels: &[usize],
) -> Result<Vec<usize>> {
    let x = zscore_select::<T>(inputs, channels)?;
    // Eval mode draws nothing from the source.
    let out = forward(spec, params, &x, Mode::Eval, &mut crate::rng::source(0))?;
    Ok(out.probs.data().chunks(spec.h_t).map(count_from_probs).collect())
}

pub fn predict_count<T: Real>(spec: &NetworkSpec, params: &ModelParams<T>, input: &RdInput) -> Result<usize> {
    Ok(predict_counts(spec, params, &[input])?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::periodogram::Scale;
    use crate::rng::source;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn count_mapping_and_ties() {
        let mut p = [0.0f64; 12];
        p[0] = 1.0;
        assert_eq!(count_from_probs(&p), 1);
        let mut p = [0.0f64; 12];
        p[11] = 1.0;
        assert_eq!(count_from_probs(&p), 12);
        let mut p = [0.05f64; 12];
        p[2] = 0.3;
        p[5] = 0.3;
        assert_eq!(count_from_probs(&p), 3);
    }

    #[test]
    fn zscore_examples() {
        let a = RdInput {
            channels: vec![Array2::from_shape_vec((1, 2), vec![0.0, 2.0]).unwrap(), Array2::from_elem((1, 2), -120.0)],
            scale: Scale::Decibel,
        };
        let t = zscore::<f64>(&[&a]).unwrap();
        assert_eq!(t.data(), &[-1.0, 1.0, 0.0, 0.0]);

        let mut rng = source(3);
        let b = RdInput {
            channels: vec![Array2::from_shape_fn((8, 9), |_| rng.random::<f32>() * 40.0 - 10.0)],
            scale: Scale::Linear,
        };
        let t = zscore::<f64>(&[&b]).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6 && (var.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn l2_penalty_shifts_loss_exactly() {
        let spec = NetworkSpec {
            input_hw: (8, 8),
            in_channels: 2,
            widths: vec![2, 3],
            kernel: 5,
            dropout: vec![],
            head_width: 4,
            h_t: 3,
        };
        let params = ModelParams::<f64>::init(&spec, &mut source(1)).unwrap();
        let mut rng = source(2);
        let x = Tensor::from_vec(&[3, 2, 8, 8], (0..384).map(|_| rng.random::<f64>()).collect()).unwrap();
        let a = loss_and_grad(&spec, &params, &x, &[1, 2, 3], 0.0, &mut source(0)).unwrap();
        let b = loss_and_grad(&spec, &params, &x, &[1, 2, 3], 0.01, &mut source(0)).unwrap();
        let expect = 0.005 * params.weight_norm_sq();
        assert!((b.loss - a.loss - expect).abs() < 1e-12);
        assert!(loss_and_grad(&spec, &params, &x, &[1, 2, 4], 0.0, &mut source(0)).is_err());
        assert!(loss_and_grad(&spec, &params, &x, &[0, 2, 3], 0.0, &mut source(0)).is_err());
    }
}
