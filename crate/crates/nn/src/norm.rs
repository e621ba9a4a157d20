use ddt_tensor::{ParamId, ParamStore, Tape, Tensor, Var};

use crate::Result;

/// Layer normalization over the last axis with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::ones(&[d]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[d]));
        LayerNorm { gain, bias, eps: Self::DEFAULT_EPS }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let n = tape.layer_norm(x, self.eps)?;
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        let scaled = tape.mul(n, g)?;
        Ok(tape.add(scaled, b)?)
    }
}
