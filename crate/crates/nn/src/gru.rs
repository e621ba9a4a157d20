use ddt_tensor::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use rand::Rng;

use crate::init;
use crate::Result;

/// Gated recurrent cell with PyTorch gate layout `[reset | update | candidate]`:
///
/// ```text
/// r  = σ(x·Wi_r + bi_r + h·Wh_r + bh_r)
/// z  = σ(x·Wi_z + bi_z + h·Wh_z + bh_z)
/// n  = tanh(x·Wi_n + bi_n + r ⊙ (h·Wh_n + bh_n))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug)]
pub struct GatedRecurrentCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub b_input: ParamId,
    pub b_hidden: ParamId,
    pub d_in: usize,
    pub d_hidden: usize,
}

impl GatedRecurrentCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        rng: &mut R,
    ) -> Self {
        let gates = 3 * d_hidden;
        GatedRecurrentCell {
            w_input: store.add(format!("{name}.w_input"), init::xavier_uniform(d_in, gates, rng)),
            w_hidden: store.add(format!("{name}.w_hidden"), init::xavier_uniform(d_hidden, gates, rng)),
            b_input: store.add(format!("{name}.b_input"), Tensor::zeros(&[gates])),
            b_hidden: store.add(format!("{name}.b_hidden"), Tensor::zeros(&[gates])),
            d_in,
            d_hidden,
        }
    }

    fn expect_width(&self, tape: &Tape, v: Var, width: usize, what: &'static str) -> Result<()> {
        let s = tape.shape(v);
        if s.last() != Some(&width) {
            return Err(TensorError::Dimension {
                op: what,
                lhs: s.to_vec(),
                rhs: vec![width],
            }
            .into());
        }
        Ok(())
    }

    /// Input-side gate pre-activations `x·Wi + bi` for any leading shape.
    /// Hoisting this out of the recurrence lets a whole sequence share one
    /// matrix product.
    pub fn project_input(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        self.expect_width(tape, x, self.d_in, "gru input")?;
        let w = tape.param(store, self.w_input);
        let b = tape.param(store, self.b_input);
        let rank = tape.shape(x).len();
        let gi = if rank == 1 {
            let row = tape.reshape(x, &[1, self.d_in])?;
            let p = tape.matmul(row, w)?;
            tape.reshape(p, &[3 * self.d_hidden])?
        } else {
            tape.matmul(x, w)?
        };
        Ok(tape.add(gi, b)?)
    }

    /// One recurrence step from precomputed input projections `gi`.
    pub fn step_projected(&self, tape: &mut Tape, store: &ParamStore, h_prev: Var, gi: Var) -> Result<Var> {
        self.expect_width(tape, h_prev, self.d_hidden, "gru hidden")?;
        self.expect_width(tape, gi, 3 * self.d_hidden, "gru gates")?;
        let dh = self.d_hidden;
        let w = tape.param(store, self.w_hidden);
        let b = tape.param(store, self.b_hidden);
        let h_shape = tape.shape(h_prev).to_vec();
        let h2 = if h_shape.len() == 1 { tape.reshape(h_prev, &[1, dh])? } else { h_prev };
        let gh = tape.matmul(h2, w)?;
        let gh = if h_shape.len() == 1 { tape.reshape(gh, &[3 * dh])? } else { gh };
        let gh = tape.add(gh, b)?;

        let axis = tape.shape(gi).len() - 1;
        let gi_r = tape.narrow(gi, axis, 0, dh)?;
        let gi_z = tape.narrow(gi, axis, dh, dh)?;
        let gi_n = tape.narrow(gi, axis, 2 * dh, dh)?;
        let gh_r = tape.narrow(gh, axis, 0, dh)?;
        let gh_z = tape.narrow(gh, axis, dh, dh)?;
        let gh_n = tape.narrow(gh, axis, 2 * dh, dh)?;

        let r = tape.add(gi_r, gh_r)?;
        let r = tape.sigmoid(r)?;
        let z = tape.add(gi_z, gh_z)?;
        let z = tape.sigmoid(z)?;
        let rn = tape.mul(r, gh_n)?;
        let n = tape.add(gi_n, rn)?;
        let n = tape.tanh(n)?;
        // h' = n + z ⊙ (h − n)
        let diff = tape.sub(h_prev, n)?;
        let gated = tape.mul(z, diff)?;
        Ok(tape.add(n, gated)?)
    }

    pub fn step(&self, tape: &mut Tape, store: &ParamStore, h_prev: Var, x: Var) -> Result<Var> {
        let gi = self.project_input(tape, store, x)?;
        self.step_projected(tape, store, h_prev, gi)
    }
}
