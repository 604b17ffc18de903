use super::model::ModelParams;
use super::tensor::{Real, Tensor};

/// Bias-corrected Adam. The l2 coefficient is recorded here and applied by
/// the loss, so the gradients passed to [`AdamState::step`] already include
/// it.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub l2: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>, lr: f64, l2: f64) -> Self {
        let zeros: Vec<Tensor<T>> = params.learnable().iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, l2 }
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &[Tensor<T>]) {
        let mut targets = params.learnable_mut();
        assert_eq!(targets.len(), grads.len(), "gradient count");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in targets.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.shape(), g.shape(), "gradient shape");
            for (((w, &gv), mv), vv) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut())
            {
                let gv = gv.f64();
                let mn = self.beta1 * mv.f64() + (1.0 - self.beta1) * gv;
                let vn = self.beta2 * vv.f64() + (1.0 - self.beta2) * gv * gv;
                *mv = T::of(mn);
                *vv = T::of(vn);
                let update = self.lr * (mn / c1) / ((vn / c2).sqrt() + self.eps);
                *w = T::of(w.f64() - update);
            }
        }
    }
}
