//! The diffusion-driven transformer: motion encoder, recursive two-mode
//! decoding chain, and forward/backward augmentation.

mod decoder;
mod encoder;

pub use decoder::{
    decode_bidirectional, decode_chain, decode_reversed, Bidirectional, ChainOutput, ChainStart, DecoderConfig,
    MotionDecoder, MODE_START, MODE_STEP,
};
pub use encoder::{MotionEncoder, MotionFeatures, ENCODER_LAYERS};

use std::fmt;
use std::str::FromStr;

use ddt_nn::{init, LinearLayer, NormPlacement};
use ddt_tensor::{ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::CoreError;
use crate::Result;

/// Decoder design choices compared in the ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeKind {
    /// Mode-0 start from noise, then mode-1 steps.
    TwoModes,
    /// Same chain without a mode token.
    OneMode,
    /// No noise start: the first state is a projection of the boundary frame's features.
    OnePhase,
}

/// Which decoding directions are run and averaged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Directions {
    Forward,
    Backward,
    Both,
}

/// Named ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    TwoModes,
    OneMode,
    OnePhase,
    FwdOnly,
    BwdOnly,
    Both,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::TwoModes, Variant::OneMode, Variant::OnePhase, Variant::FwdOnly, Variant::BwdOnly, Variant::Both];

    pub fn decode_kind(self) -> DecodeKind {
        match self {
            Variant::OneMode => DecodeKind::OneMode,
            Variant::OnePhase => DecodeKind::OnePhase,
            _ => DecodeKind::TwoModes,
        }
    }

    pub fn directions(self) -> Directions {
        match self {
            Variant::FwdOnly => Directions::Forward,
            Variant::BwdOnly => Directions::Backward,
            _ => Directions::Both,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::TwoModes => "two_modes",
            Variant::OneMode => "one_mode",
            Variant::OnePhase => "one_phase",
            Variant::FwdOnly => "fwd_only",
            Variant::BwdOnly => "bwd_only",
            Variant::Both => "both",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown variant '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DdtConfig {
    pub d_feat: usize,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub enc_hidden: usize,
    /// Largest step index the step embedding accepts; at least the window length.
    pub max_step: usize,
    pub norm: NormPlacement,
    pub decode: DecodeKind,
    pub directions: Directions,
}

impl DdtConfig {
    pub fn new(d_feat: usize, d_model: usize) -> Self {
        DdtConfig {
            d_feat,
            d_model,
            heads: 4,
            blocks: 3,
            enc_hidden: d_model,
            max_step: 64,
            norm: NormPlacement::Pre,
            decode: DecodeKind::TwoModes,
            directions: Directions::Both,
        }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.decode = v.decode_kind();
        self.directions = v.directions();
        self
    }

    fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            d_model: self.d_model,
            heads: self.heads,
            blocks: self.blocks,
            max_step: self.max_step,
            norm: self.norm,
            mode_token: self.decode != DecodeKind::OneMode,
        }
    }

    fn uses_forward(&self) -> bool {
        self.directions != Directions::Backward
    }

    fn uses_backward(&self) -> bool {
        self.directions != Directions::Forward
    }
}

/// Parameter handles of one DDT; values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct DdtNetwork {
    pub config: DdtConfig,
    pub encoder: MotionEncoder,
    pub decoder_f: Option<MotionDecoder>,
    pub decoder_b: Option<MotionDecoder>,
    direct_f: Option<LinearLayer>,
    direct_b: Option<LinearLayer>,
}

/// Noise that seeds each decoding direction, `[B, d_model]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct StartNoise {
    pub forward: Tensor,
    pub backward: Tensor,
}

impl StartNoise {
    /// Unit Gaussian draws: forward first, then backward.
    pub fn sample<R: Rng + ?Sized>(batch: usize, d_model: usize, rng: &mut R) -> Self {
        let forward = init::gaussian(&[batch, d_model], 1.0, rng);
        let backward = init::gaussian(&[batch, d_model], 1.0, rng);
        StartNoise { forward, backward }
    }

    pub fn from_seed(batch: usize, d_model: usize, seed: u64) -> Self {
        StartNoise::sample(batch, d_model, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DdtOutput {
    /// `[B, T, d_model]` mesh features handed to the regressor.
    pub y: Var,
    pub y_f: Option<Var>,
    pub y_b: Option<Var>,
    pub invocations: usize,
}

impl DdtNetwork {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: DdtConfig, rng: &mut R) -> Result<Self> {
        if config.d_model == 0 || config.d_feat == 0 || config.enc_hidden == 0 || config.blocks == 0 {
            return Err(CoreError::Config(format!("degenerate DDT configuration {config:?}")));
        }
        let encoder = MotionEncoder::new(
            store,
            &format!("{name}.encoder"),
            config.d_feat,
            config.enc_hidden,
            config.d_model,
            rng,
        );
        let one_phase = config.decode == DecodeKind::OnePhase;
        let mut make = |tag: &str, used: bool| -> Result<(Option<MotionDecoder>, Option<LinearLayer>)> {
            if !used {
                return Ok((None, None));
            }
            let dec = MotionDecoder::new(store, &format!("{name}.decoder_{tag}"), config.decoder(), rng)?;
            let direct = one_phase
                .then(|| LinearLayer::new(store, &format!("{name}.direct_{tag}"), config.d_feat, config.d_model, rng));
            Ok((Some(dec), direct))
        };
        let (decoder_f, direct_f) = make("f", config.uses_forward())?;
        let (decoder_b, direct_b) = make("b", config.uses_backward())?;
        Ok(DdtNetwork { config, encoder, decoder_f, decoder_b, direct_f, direct_b })
    }

    fn start(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        direct: Option<&LinearLayer>,
        features: Var,
        frame: usize,
        noise: &Tensor,
        m_end: Var,
    ) -> Result<ChainStart> {
        match direct {
            Some(layer) => {
                let (b, _, d) = dims(tape, features);
                let x = tape.narrow(features, 1, frame, 1)?;
                let x = tape.reshape(x, &[b, d])?;
                Ok(ChainStart::Direct(layer.forward(tape, store, x)?))
            }
            None => Ok(ChainStart::Noise { y_start: tape.constant(noise.clone()), m_end }),
        }
    }

    /// Encode, decode in the configured directions and average.
    /// `features: [B, T, d_feat]`; all `T` frames come out of one pass.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, features: Var, noise: &StartNoise) -> Result<DdtOutput> {
        let (b, t, d) = dims(tape, features);
        if d != self.config.d_feat {
            return Err(CoreError::Contract(format!(
                "features must be [B, T, {}], got {:?}",
                self.config.d_feat,
                tape.shape(features)
            )));
        }
        let expected = [b, self.config.d_model];
        if noise.forward.shape() != expected || noise.backward.shape() != expected {
            return Err(CoreError::Contract(format!("start noise must be {expected:?}")));
        }
        if t > self.config.max_step {
            return Err(CoreError::Contract(format!("{t} frames exceed max_step {}", self.config.max_step)));
        }
        let motion = self.encoder.encode(tape, store, features)?;
        let mut invocations = 0;
        let y_f = match &self.decoder_f {
            Some(dec) => {
                let start = self.start(tape, store, self.direct_f.as_ref(), features, t - 1, &noise.forward, motion.m_end)?;
                let out = decode_chain(tape, store, dec, motion.m, start)?;
                invocations += out.invocations;
                Some(out.y)
            }
            None => None,
        };
        let y_b = match &self.decoder_b {
            Some(dec) => {
                let start = self.start(tape, store, self.direct_b.as_ref(), features, 0, &noise.backward, motion.m_start)?;
                let out = decode_reversed(tape, store, dec, motion.m, start)?;
                invocations += out.invocations;
                Some(out.y)
            }
            None => None,
        };
        let y = match (y_f, y_b) {
            (Some(f), Some(r)) => {
                let s = tape.add(f, r)?;
                tape.scale(s, 0.5)
            }
            (Some(v), None) | (None, Some(v)) => v,
            (None, None) => unreachable!("a network decodes in at least one direction"),
        };
        Ok(DdtOutput { y, y_f, y_b, invocations })
    }

    /// [`DdtNetwork::forward`] with start noise drawn from `seed`.
    pub fn forward_seeded(&self, tape: &mut Tape, store: &ParamStore, features: Var, seed: u64) -> Result<DdtOutput> {
        let b = tape.shape(features)[0];
        let noise = StartNoise::from_seed(b, self.config.d_model, seed);
        self.forward(tape, store, features, &noise)
    }
}

fn dims(tape: &Tape, v: Var) -> (usize, usize, usize) {
    match tape.shape(v) {
        [b, t, d] => (*b, *t, *d),
        _ => (0, 0, 0),
    }
}
