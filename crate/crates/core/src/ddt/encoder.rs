//! Bidirectional two-layer recurrent motion encoder.

use ddt_nn::{GatedRecurrentCell, LinearLayer};
use ddt_tensor::{ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::CoreError;
use crate::Result;

/// Encoder outputs for a batch of sequences.
#[derive(Clone, Copy, Debug)]
pub struct MotionFeatures {
    /// `[B, T, d_model]`; row `t` summarizes motion around frame `t`.
    pub m: Var,
    /// `[B, d_model]`, from the last forward hidden state.
    pub m_end: Var,
    /// `[B, d_model]`, from the last backward hidden state; starts the
    /// time-reversed chain.
    pub m_start: Var,
}

#[derive(Clone, Debug)]
struct BiLayer {
    forward: GatedRecurrentCell,
    backward: GatedRecurrentCell,
}

#[derive(Clone, Debug)]
pub struct MotionEncoder {
    layers: Vec<BiLayer>,
    project: LinearLayer,
    project_end: LinearLayer,
    project_start: LinearLayer,
    pub d_feat: usize,
    pub hidden: usize,
}

pub const ENCODER_LAYERS: usize = 2;

impl MotionEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_feat: usize,
        hidden: usize,
        d_model: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..ENCODER_LAYERS)
            .map(|l| {
                let d_in = if l == 0 { d_feat } else { 2 * hidden };
                BiLayer {
                    forward: GatedRecurrentCell::new(store, &format!("{name}.layer{l}.fwd"), d_in, hidden, rng),
                    backward: GatedRecurrentCell::new(store, &format!("{name}.layer{l}.bwd"), d_in, hidden, rng),
                }
            })
            .collect();
        MotionEncoder {
            layers,
            project: LinearLayer::new(store, &format!("{name}.project"), 2 * hidden, d_model, rng),
            project_end: LinearLayer::new(store, &format!("{name}.project_end"), hidden, d_model, rng),
            project_start: LinearLayer::new(store, &format!("{name}.project_start"), hidden, d_model, rng),
            d_feat,
            hidden,
        }
    }

    /// Run one direction; returns states in frame order and the final state.
    fn run(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        cell: &GatedRecurrentCell,
        x: Var,
        reverse: bool,
    ) -> Result<(Var, Var)> {
        let (b, t) = (tape.shape(x)[0], tape.shape(x)[1]);
        let gi = cell.project_input(tape, store, x)?;
        let mut h = tape.constant(Tensor::zeros(&[b, self.hidden]));
        let mut states = vec![h; t];
        let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
        for &f in &order {
            let g = tape.narrow(gi, 1, f, 1)?;
            let g = tape.reshape(g, &[b, 3 * self.hidden])?;
            h = cell.step_projected(tape, store, h, g)?;
            states[f] = tape.reshape(h, &[b, 1, self.hidden])?;
        }
        Ok((tape.concat(&states, 1)?, h))
    }

    /// `x: [B, T, d_feat]` with `T >= 2`.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<MotionFeatures> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.d_feat {
            return Err(CoreError::Contract(format!(
                "encoder input must be [B, T, {}], got {shape:?}",
                self.d_feat
            )));
        }
        if shape[1] < 2 {
            return Err(CoreError::Contract(format!("motion needs at least 2 frames, got {}", shape[1])));
        }
        let mut input = x;
        let mut last = None;
        for layer in &self.layers {
            let (fwd, fwd_last) = self.run(tape, store, &layer.forward, input, false)?;
            let (bwd, bwd_last) = self.run(tape, store, &layer.backward, input, true)?;
            input = tape.concat(&[fwd, bwd], 2)?;
            last = Some((fwd_last, bwd_last));
        }
        let (fwd_last, bwd_last) = last.expect("at least one layer");
        Ok(MotionFeatures {
            m: self.project.forward(tape, store, input)?,
            m_end: self.project_end.forward(tape, store, fwd_last)?,
            m_start: self.project_start.forward(tape, store, bwd_last)?,
        })
    }
}
