//! ViT-style transformer block: multi-head self-attention and a GELU
//! feed-forward network, each wrapped in a residual connection.

use ddt_tensor::{ParamStore, Tape, Var};
use rand::Rng;

use crate::error::NnError;
use crate::linear::LinearLayer;
use crate::norm::LayerNorm;
use crate::Result;

/// Where the layer norms sit relative to the residual additions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NormPlacement {
    /// `x + f(norm(x))`
    #[default]
    Pre,
    /// `norm(x + f(x))`
    Post,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub norm: NormPlacement,
}

impl TransformerConfig {
    pub fn new(d_model: usize, heads: usize) -> Self {
        TransformerConfig {
            d_model,
            heads,
            ffn_mult: 4,
            norm: NormPlacement::Pre,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub query: LinearLayer,
    pub key: LinearLayer,
    pub value: LinearLayer,
    pub output: LinearLayer,
    pub ffn_in: LinearLayer,
    pub ffn_out: LinearLayer,
    pub norm_attn: LayerNorm,
    pub norm_ffn: LayerNorm,
    pub config: TransformerConfig,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        config: TransformerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let TransformerConfig { d_model: d, heads, ffn_mult, .. } = config;
        if heads == 0 || d == 0 || d % heads != 0 {
            return Err(NnError::Config(format!(
                "d_model {d} is not divisible by {heads} heads"
            )));
        }
        let hidden = ffn_mult * d;
        Ok(TransformerBlock {
            query: LinearLayer::new(store, &format!("{name}.attn.query"), d, d, rng),
            key: LinearLayer::new(store, &format!("{name}.attn.key"), d, d, rng),
            value: LinearLayer::new(store, &format!("{name}.attn.value"), d, d, rng),
            output: LinearLayer::new(store, &format!("{name}.attn.output"), d, d, rng),
            ffn_in: LinearLayer::new(store, &format!("{name}.ffn.in"), d, hidden, rng),
            ffn_out: LinearLayer::new(store, &format!("{name}.ffn.out"), hidden, d, rng),
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), d),
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), d),
            config,
        })
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<(Vec<usize>, usize)> {
        let shape = tape.shape(x).to_vec();
        let d = self.config.d_model;
        if shape.len() < 2 || shape[shape.len() - 1] != d {
            return Err(ddt_tensor::TensorError::Dimension {
                op: "transformer block",
                lhs: shape,
                rhs: vec![0, d],
            }
            .into());
        }
        let len = shape[shape.len() - 2];
        Ok((shape, len))
    }

    /// Scaled dot-product attention per head, `softmax(QKᵀ/√d_head)·V`, with
    /// heads concatenated and output-projected. No mask.
    pub fn multi_head_self_attention(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (shape, len) = self.check_input(tape, x)?;
        let d = self.config.d_model;
        let heads = self.config.heads;
        let dh = d / heads;
        let batch: usize = shape[..shape.len() - 2].iter().product();

        let q = self.query.forward(tape, store, x)?;
        let k = self.key.forward(tape, store, x)?;
        let v = self.value.forward(tape, store, x)?;
        let split = |tape: &mut Tape, t: Var, perm: &[usize]| -> Result<Var> {
            let r = tape.reshape(t, &[batch, len, heads, dh])?;
            Ok(tape.permute(r, perm)?)
        };
        let q = split(tape, q, &[0, 2, 1, 3])?;
        let kt = split(tape, k, &[0, 2, 3, 1])?;
        let v = split(tape, v, &[0, 2, 1, 3])?;

        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let weights = tape.softmax(scores, 3)?;
        let ctx = tape.matmul(weights, v)?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &shape)?;
        self.output.forward(tape, store, ctx)
    }

    fn feed_forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.ffn_in.forward(tape, store, x)?;
        let h = tape.gelu(h)?;
        self.ffn_out.forward(tape, store, h)
    }

    /// `x_attn = MSA(x) + x`, `out = FFN(x_attn) + x_attn`, with norms placed
    /// according to the configuration. Shape is preserved.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        self.check_input(tape, x)?;
        match self.config.norm {
            NormPlacement::Pre => {
                let n = self.norm_attn.forward(tape, store, x)?;
                let a = self.multi_head_self_attention(tape, store, n)?;
                let x_attn = tape.add(a, x)?;
                let n = self.norm_ffn.forward(tape, store, x_attn)?;
                let f = self.feed_forward(tape, store, n)?;
                Ok(tape.add(f, x_attn)?)
            }
            NormPlacement::Post => {
                let a = self.multi_head_self_attention(tape, store, x)?;
                let r = tape.add(a, x)?;
                let x_attn = self.norm_attn.forward(tape, store, r)?;
                let f = self.feed_forward(tape, store, x_attn)?;
                let r = tape.add(f, x_attn)?;
                self.norm_ffn.forward(tape, store, r)
            }
        }
    }
}
