use crate::numerics::{Scalar, Tensor};
use crate::params::{ParamId, ParamStore};

/// Adam with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// First and second moments per parameter tensor.
#[derive(Clone, Debug)]
pub struct OptimizerState<S: Scalar> {
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub step: u64,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(params: &ParamStore<S>) -> Self {
        let zeros = || params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

impl AdamW {
    /// One update of every parameter in `params` with learning rate `lr`.
    ///
    /// Per element: bias-corrected Adam step `θ ← θ − lr·m̂/(√v̂ + eps)`, then
    /// the decoupled decay `θ ← θ − lr·λ·θ`.
    pub fn step<S: Scalar>(
        &self,
        params: &mut ParamStore<S>,
        grads: &[Tensor<S>],
        state: &mut OptimizerState<S>,
        lr: f64,
    ) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        state.step += 1;
        let t = state.step as i32;
        let (b1, b2) = (S::lit(self.beta1), S::lit(self.beta2));
        let one = S::one();
        let c1 = S::lit(1.0 - self.beta1.powi(t));
        let c2 = S::lit(1.0 - self.beta2.powi(t));
        let lr_s = S::lit(lr);
        let eps = S::lit(self.eps);
        let shrink = S::lit(lr * self.weight_decay);
        for (i, g) in grads.iter().enumerate() {
            let theta = params.get_mut(ParamId(i));
            assert_eq!(theta.shape(), g.shape());
            let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
            for (((w, &gv), mv), vv) in theta
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *w = *w - lr_s * m_hat / (v_hat.sqrt() + eps);
                *w = *w - shrink * *w;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(theta: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("theta", Tensor::scalar(theta));
        s
    }

    fn no_decay() -> AdamW {
        AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        }
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = scalar_store(0.0);
        let mut st = OptimizerState::new(&p);
        no_decay().step(&mut p, &[Tensor::scalar(1.0)], &mut st, 1e-4);
        // m̂ = g, v̂ = g², so Δ = −lr·g/(|g| + eps).
        let expect = -1e-4 * 1.0 / (1.0 + 1e-8);
        let got = p.get(ParamId(0)).data()[0];
        assert!((got - expect).abs() < 1e-10);
        assert!((got + 1e-4).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut p = scalar_store(0.7);
        let mut st = OptimizerState::new(&p);
        for _ in 0..5 {
            no_decay().step(&mut p, &[Tensor::scalar(0.0)], &mut st, 1e-3);
        }
        assert_eq!(p.get(ParamId(0)).data()[0], 0.7);
    }

    #[test]
    fn zero_gradient_with_decay_shrinks() {
        let mut p = scalar_store(2.0);
        let mut st = OptimizerState::new(&p);
        let opt = AdamW {
            weight_decay: 0.5,
            ..AdamW::default()
        };
        opt.step(&mut p, &[Tensor::scalar(0.0)], &mut st, 0.1);
        assert_eq!(p.get(ParamId(0)).data()[0], 2.0 * (1.0 - 0.1 * 0.5));
    }

    #[test]
    fn minimises_square() {
        let mut p = scalar_store(1.0);
        let mut st = OptimizerState::new(&p);
        let mut reached = None;
        for step in 1..=2000 {
            let theta = p.get(ParamId(0)).data()[0];
            no_decay().step(&mut p, &[Tensor::scalar(2.0 * theta)], &mut st, 1e-2);
            if p.get(ParamId(0)).data()[0].abs() <= 1e-2 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some(), "|θ| stayed above 1e-2");
    }
}
