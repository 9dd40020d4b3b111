//! Adaptive-moment optimizer with decoupled weight decay.

use crate::diffmath::{rf, NdArray, ParamStore, Real};

pub struct AdamW<R> {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<NdArray<R>>,
    v: Vec<NdArray<R>>,
    t: u32,
}

impl<R: Real> AdamW<R> {
    pub fn new(store: &ParamStore<R>, learning_rate: f64, weight_decay: f64) -> Self {
        let m = store.iter().map(|(_, p)| NdArray::zeros(p.value.shape())).collect();
        let v = store.iter().map(|(_, p)| NdArray::zeros(p.value.shape())).collect();
        AdamW {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m,
            v,
            t: 0,
        }
    }

    /// Apply one update from the gradients currently held in the store.
    pub fn step(&mut self, store: &mut ParamStore<R>) {
        self.t += 1;
        let b1 = rf::<R>(self.beta1);
        let b2 = rf::<R>(self.beta2);
        let one = R::one();
        let bias1 = rf::<R>(1.0 - self.beta1.powi(self.t as i32));
        let bias2 = rf::<R>(1.0 - self.beta2.powi(self.t as i32));
        let lr = rf::<R>(self.learning_rate);
        let wd = rf::<R>(self.weight_decay);
        let eps = rf::<R>(self.eps);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = store.grad(id).clone();
            let m = &mut self.m[id.index()];
            let v = &mut self.v[id.index()];
            let value = store.value_mut(id);
            for i in 0..g.len() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (one - b1) * gi;
                let vi = b2 * v.data()[i] + (one - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bias1;
                let v_hat = vi / bias2;
                let x = value.data_mut();
                x[i] = x[i] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * x[i]);
            }
        }
    }
}
