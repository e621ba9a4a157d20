use ddt_tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::NnError;
use crate::init;
use crate::Result;

/// Sinusoidal embedding of an integer step: even indices `sin(t·ω_i)`, odd
/// indices `cos(t·ω_i)`, with `ω_i = 10000^(−2i/d)` shared by each pair.
pub fn step_embedding(t: usize, d_model: usize, max_step: usize) -> Result<Tensor> {
    if t > max_step {
        return Err(NnError::Contract(format!("step {t} exceeds maximum {max_step}")));
    }
    if d_model == 0 {
        return Err(NnError::Config("embedding width must be positive".into()));
    }
    let data = (0..d_model)
        .map(|j| {
            let pair = (j / 2) as f64;
            let freq = 10000f64.powf(-2.0 * pair / d_model as f64);
            let angle = t as f64 * freq;
            if j % 2 == 0 { angle.sin() } else { angle.cos() }
        })
        .collect();
    Ok(Tensor::new(&[d_model], data)?)
}

/// Fixed sinusoidal table for steps `0..=max_step`.
#[derive(Clone, Debug)]
pub struct StepEmbedding {
    pub d_model: usize,
    pub max_step: usize,
}

impl StepEmbedding {
    pub fn new(d_model: usize, max_step: usize) -> Self {
        StepEmbedding { d_model, max_step }
    }

    pub fn embed(&self, t: usize) -> Result<Tensor> {
        step_embedding(t, self.d_model, self.max_step)
    }
}

/// Two learned vectors selecting the decoder's behaviour.
#[derive(Clone, Debug)]
pub struct ModeToken {
    pub table: ParamId,
    pub d_model: usize,
}

impl ModeToken {
    pub const MODES: usize = 2;

    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_model: usize, rng: &mut R) -> Self {
        let table = store.add(name.to_string(), init::gaussian(&[Self::MODES, d_model], 0.5, rng));
        ModeToken { table, d_model }
    }

    /// The `[1, d_model]` row for `mode`.
    pub fn token(&self, tape: &mut Tape, store: &ParamStore, mode: usize) -> Result<Var> {
        if mode >= Self::MODES {
            return Err(NnError::Contract(format!("mode must be 0 or 1, got {mode}")));
        }
        let table = tape.param(store, self.table);
        Ok(tape.narrow(table, 0, mode, 1)?)
    }
}
