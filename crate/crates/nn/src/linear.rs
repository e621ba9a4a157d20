use ddt_tensor::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use rand::Rng;

use crate::init;
use crate::Result;

/// Affine map `x·W + b` over the last axis.
#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl LinearLayer {
    /// Xavier-uniform weight, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init::xavier_uniform(d_in, d_out, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        LinearLayer { weight, bias, d_in, d_out }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.last() != Some(&self.d_in) {
            return Err(TensorError::Dimension {
                op: "linear",
                lhs: shape,
                rhs: vec![self.d_in, self.d_out],
            }
            .into());
        }
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        if shape.len() == 1 {
            let row = tape.reshape(x, &[1, self.d_in])?;
            let y = tape.matmul(row, w)?;
            let y = tape.add(y, b)?;
            return Ok(tape.reshape(y, &[self.d_out])?);
        }
        let y = tape.matmul(x, w)?;
        Ok(tape.add(y, b)?)
    }
}
