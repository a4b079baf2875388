//! Adam optimizer with serializable state.

use crate::nn::ParamStore;
use crate::Arr;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Arr>,
    v: Vec<Arr>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let m = store
            .ids()
            .iter()
            .map(|&id| Arr::zeros(store.value(id).raw_dim()))
            .collect();
        let v = store
            .ids()
            .iter()
            .map(|&id| Arr::zeros(store.value(id).raw_dim()))
            .collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m, v }
    }

    pub fn apply(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for id in store.ids() {
            let i = id.index();
            let g = store.grad(id).clone();
            self.m[i].zip_mut_with(&g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            self.v[i].zip_mut_with(&g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let (m, v) = (&self.m[i], &self.v[i]);
            let lr = self.lr;
            let eps = self.eps;
            let val = store.value_mut(id);
            ndarray::Zip::from(val).and(m).and(v).for_each(|p, &m, &v| {
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            });
        }
    }

    /// Moment tensors for checkpointing, in parameter order.
    pub fn state(&self) -> (u64, &[Arr], &[Arr]) {
        (self.step, &self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Arr>, v: Vec<Arr>) {
        assert_eq!(m.len(), self.m.len(), "optimizer state length mismatch");
        assert_eq!(v.len(), self.v.len(), "optimizer state length mismatch");
        self.step = step;
        self.m = m;
        self.v = v;
    }
}
