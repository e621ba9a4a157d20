//! Two-mode transformer motion decoder and the recursive decoding chain.

use ddt_nn::{step_embedding, LayerNorm, LinearLayer, ModeToken, TransformerBlock, TransformerConfig};
use ddt_tensor::{ParamStore, Tape, Var};
use rand::Rng;

use super::encoder::MotionFeatures;
use crate::error::CoreError;
use crate::Result;

/// Mode 0 maps noise to the end state, mode 1 walks one frame back.
pub const MODE_START: usize = 0;
pub const MODE_STEP: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub max_step: usize,
    pub norm: ddt_nn::NormPlacement,
    /// Without a mode token both modes share one behavior.
    pub mode_token: bool,
}

/// Reads a token set `[y, m, step(t), mode]` through a block stack and
/// returns the updated `y` token.
#[derive(Clone, Debug)]
pub struct MotionDecoder {
    pub config: DecoderConfig,
    y_in: LinearLayer,
    m_in: LinearLayer,
    t_in: LinearLayer,
    mode: Option<ModeToken>,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
    out: LinearLayer,
}

impl MotionDecoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: DecoderConfig, rng: &mut R) -> Result<Self> {
        let d = config.d_model;
        let mut block_cfg = TransformerConfig::new(d, config.heads);
        block_cfg.norm = config.norm;
        let blocks = (0..config.blocks)
            .map(|i| TransformerBlock::new(store, &format!("{name}.block{i}"), block_cfg, rng))
            .collect::<std::result::Result<_, _>>()?;
        Ok(MotionDecoder {
            config,
            y_in: LinearLayer::new(store, &format!("{name}.y_in"), d, d, rng),
            m_in: LinearLayer::new(store, &format!("{name}.m_in"), d, d, rng),
            t_in: LinearLayer::new(store, &format!("{name}.t_in"), d, d, rng),
            mode: config.mode_token.then(|| ModeToken::new(store, &format!("{name}.mode"), d, rng)),
            blocks,
            norm: LayerNorm::new(store, &format!("{name}.norm"), d),
            out: LinearLayer::new(store, &format!("{name}.out"), d, d, rng),
        })
    }

    /// One decoder invocation on a batch: `y_in, m: [B, d]`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, y_in: Var, m: Var, t: usize, mode: usize) -> Result<Var> {
        if mode > MODE_STEP {
            return Err(CoreError::Contract(format!("decoder mode must be 0 or 1, got {mode}")));
        }
        let d = self.config.d_model;
        let b = match tape.shape(y_in) {
            [b, w] if *w == d => *b,
            other => return Err(CoreError::Contract(format!("decoder state must be [B, {d}], got {other:?}"))),
        };
        if tape.shape(m) != [b, d] {
            return Err(CoreError::Contract(format!(
                "motion feature must be [{b}, {d}], got {:?}",
                tape.shape(m)
            )));
        }
        let y_tok = self.y_in.forward(tape, store, y_in)?;
        let y_tok = tape.reshape(y_tok, &[b, 1, d])?;
        let m_tok = self.m_in.forward(tape, store, m)?;
        let m_tok = tape.reshape(m_tok, &[b, 1, d])?;
        let emb = tape.constant(step_embedding(t, d, self.config.max_step)?.reshape(&[1, d])?);
        let t_tok = self.t_in.forward(tape, store, emb)?;
        let t_tok = tape.reshape(t_tok, &[1, 1, d])?;
        let t_tok = tape.broadcast_to(t_tok, &[b, 1, d])?;
        let mut tokens = vec![y_tok, m_tok, t_tok];
        if let Some(table) = &self.mode {
            let mode_tok = table.token(tape, store, mode)?;
            let mode_tok = tape.reshape(mode_tok, &[1, 1, d])?;
            tokens.push(tape.broadcast_to(mode_tok, &[b, 1, d])?);
        }
        let mut h = tape.concat(&tokens, 1)?;
        for block in &self.blocks {
            h = block.forward(tape, store, h)?;
        }
        let h = self.norm.forward(tape, store, h)?;
        let y = tape.narrow(h, 1, 0, 1)?;
        let y = tape.reshape(y, &[b, d])?;
        Ok(self.out.forward(tape, store, y)?)
    }
}

/// How a chain obtains its first state.
#[derive(Clone, Copy, Debug)]
pub enum ChainStart {
    /// A mode-0 step from noise `[B, d]` and the end motion feature.
    Noise { y_start: Var, m_end: Var },
    /// A state supplied directly (the one-phase variant); no mode-0 step.
    Direct(Var),
}

#[derive(Clone, Copy, Debug)]
pub struct ChainOutput {
    /// `[B, T, d]`, frames in time order.
    pub y: Var,
    pub invocations: usize,
}

/// `m: [B, T, d]`. With a noise start the chain first computes the end state
/// `s = step(y_start, m_end, T, 0)`, then walks `y_t = step(y_{t+1}, m_t, t, 1)`
/// for `t = T..1` with `y_{T+1} = s`: `T + 1` invocations in total.
pub fn decode_chain(tape: &mut Tape, store: &ParamStore, dec: &MotionDecoder, m: Var, start: ChainStart) -> Result<ChainOutput> {
    let shape = tape.shape(m).to_vec();
    let d = dec.config.d_model;
    if shape.len() != 3 || shape[2] != d {
        return Err(CoreError::Contract(format!("motion features must be [B, T, {d}], got {shape:?}")));
    }
    let (b, frames) = (shape[0], shape[1]);
    let mut invocations = 0;
    let mut state = match start {
        ChainStart::Noise { y_start, m_end } => {
            invocations += 1;
            dec.step(tape, store, y_start, m_end, frames, MODE_START)?
        }
        ChainStart::Direct(s) => s,
    };
    let mut ys = vec![state; frames];
    for t in (1..=frames).rev() {
        let m_t = tape.narrow(m, 1, t - 1, 1)?;
        let m_t = tape.reshape(m_t, &[b, d])?;
        state = dec.step(tape, store, state, m_t, t, MODE_STEP)?;
        invocations += 1;
        ys[t - 1] = tape.reshape(state, &[b, 1, d])?;
    }
    Ok(ChainOutput { y: tape.concat(&ys, 1)?, invocations })
}

pub(crate) fn reverse_time(tape: &mut Tape, x: Var) -> Result<Var> {
    let t = tape.shape(x)[1];
    let rows: Vec<Var> = (0..t).rev().map(|f| tape.narrow(x, 1, f, 1)).collect::<std::result::Result<_, _>>()?;
    Ok(tape.concat(&rows, 1)?)
}

/// The chain run on time-reversed motion, with frames put back in time
/// order: frame `t` comes from reversed step `T + 1 − t`.
pub fn decode_reversed(tape: &mut Tape, store: &ParamStore, dec: &MotionDecoder, m: Var, start: ChainStart) -> Result<ChainOutput> {
    let m_rev = reverse_time(tape, m)?;
    let out = decode_chain(tape, store, dec, m_rev, start)?;
    Ok(ChainOutput { y: reverse_time(tape, out.y)?, invocations: out.invocations })
}

#[derive(Clone, Copy, Debug)]
pub struct Bidirectional {
    /// `(y_F + y_B) / 2`
    pub y: Var,
    pub y_f: Var,
    pub y_b: Var,
    pub invocations: usize,
}

/// Two decoders: one walks the motion backwards from the last frame
/// (`y_F`), the other walks the reversed motion (`y_B`).
pub fn decode_bidirectional(
    tape: &mut Tape,
    store: &ParamStore,
    dec_f: &MotionDecoder,
    dec_b: &MotionDecoder,
    motion: &MotionFeatures,
    y_start_f: Var,
    y_start_b: Var,
) -> Result<Bidirectional> {
    let f = decode_chain(tape, store, dec_f, motion.m, ChainStart::Noise { y_start: y_start_f, m_end: motion.m_end })?;
    let r = decode_reversed(tape, store, dec_b, motion.m, ChainStart::Noise { y_start: y_start_b, m_end: motion.m_start })?;
    let sum = tape.add(f.y, r.y)?;
    Ok(Bidirectional { y: tape.scale(sum, 0.5), y_f: f.y, y_b: r.y, invocations: f.invocations + r.invocations })
}
