//! Central finite-difference gradient checks.
//!
//! The error metric is `|analytic - numeric| / max(1, |numeric|)`, maximized
//! over every checked coordinate.

use crate::error::TensorError;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Result;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    tape.value(v).item()
}

/// Central-difference gradient of a scalar function of one tensor.
pub fn numerical_gradient(f: impl Fn(&Tensor) -> Result<f64>, x: &Tensor, h: f64) -> Result<Tensor> {
    if h <= 0.0 {
        return Err(TensorError::Contract(format!("step h={h} must be positive")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Compare the tape gradient of `f` at `x` against central differences.
pub fn grad_check(
    f: impl Fn(&mut Tape, Var) -> Result<Var>,
    x: &Tensor,
    h: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let input = tape.leaf(x.clone(), true);
    let out = f(&mut tape, input)?;
    tape.backward(out)?;
    let analytic = tape
        .grad(input)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));
    let numeric = numerical_gradient(
        |probe| {
            let mut t = Tape::new();
            let v = t.constant(probe.clone());
            let o = f(&mut t, v)?;
            scalar_of(&t, o)
        },
        x,
        h,
    )?;
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .fold(0.0, |m, (a, n)| m.max(relative_error(*a, *n))))
}

/// Gradient check over every scalar of every parameter in `store`.
pub fn grad_check_params(
    store: &ParamStore,
    f: impl Fn(&mut Tape, &ParamStore) -> Result<Var>,
    h: f64,
) -> Result<f64> {
    if h <= 0.0 {
        return Err(TensorError::Contract(format!("step h={h} must be positive")));
    }
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    tape.backward(out)?;
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let o = f(&mut t, s)?;
        scalar_of(&t, o)
    };
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for id in store.ids() {
        let analytic = tape
            .param_grad(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        for i in 0..store.get(id).numel() {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}
