//! Adam with bias correction.

use ddt_tensor::{ParamStore, Tape, Tensor};

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Update every parameter; `grads[i]` belongs to the `i`-th parameter of
    /// `store` and `None` counts as a zero gradient.
    pub fn step_with(&mut self, store: &mut ParamStore, grads: &[Option<&Tensor>]) {
        if self.m.is_empty() {
            self.m = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powf(self.step as f64);
        let bc2 = 1.0 - self.beta2.powf(self.step as f64);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.get_mut(id).data_mut();
            match grads.get(i).copied().flatten() {
                Some(g) => {
                    for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                        *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                    }
                }
                None => {
                    for ((p, m), v) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m *= self.beta1;
                        *v *= self.beta2;
                        *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                    }
                }
            }
        }
    }

    /// Update from the parameter gradients recorded on `tape`.
    pub fn step(&mut self, store: &mut ParamStore, tape: &Tape) {
        let grads: Vec<Option<Tensor>> = store.ids().map(|id| tape.param_grad(id).cloned()).collect();
        let refs: Vec<Option<&Tensor>> = grads.iter().map(Option::as_ref).collect();
        self.step_with(store, &refs);
    }
}
