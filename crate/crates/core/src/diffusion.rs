//! DDPM schedule, forward corruption and ancestral reverse sampling, plus the
//! concatenated-feature baseline: a transformer noise predictor over all
//! frames of a window, conditioned on the per-frame input features.

use ddt_nn::{init, step_embedding, LayerNorm, LinearLayer, TransformerBlock, TransformerConfig};
use ddt_tensor::{ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::CoreError;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
}

impl std::str::FromStr for ScheduleKind {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            other => Err(CoreError::Config(format!("unknown schedule kind '{other}'"))),
        }
    }
}

/// Per-step variances. Steps are numbered `1..=steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_cum: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64, kind: ScheduleKind) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(CoreError::Config("diffusion needs at least one step".into()));
    }
    if !(0.0 <= beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(CoreError::Config(format!(
            "need 0 <= beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let beta: Vec<f64> = match kind {
        ScheduleKind::Linear if steps == 1 => vec![beta_start],
        ScheduleKind::Linear => (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect(),
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_cum = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(DiffusionSchedule { beta, alpha, alpha_cum })
}

impl DiffusionSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(CoreError::Contract(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.index(t)?])
    }

    pub fn alpha_cum(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_cum[self.index(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_cums(&self) -> &[f64] {
        &self.alpha_cum
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(ddt_tensor::TensorError::Dimension { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }.into());
    }
    Ok(())
}

/// `x_t = sqrt(ᾱ_t)·x_0 + sqrt(1 − ᾱ_t)·z`.
pub fn diffuse_sample(x0: &Tensor, t: usize, schedule: &DiffusionSchedule, z: &Tensor) -> Result<Tensor> {
    same_shape("diffuse", x0, z)?;
    let ab = schedule.alpha_cum(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.zip_map(z, |x, n| a * x + b * n)?)
}

/// One ancestral step
/// `x_{t-1} = (x_t − (1−α_t)/sqrt(1−ᾱ_t)·ε) / sqrt(α_t) + σ_t·z` with
/// `σ_t = sqrt(β_t)` and no noise at `t = 1`.
pub fn reverse_step(
    x_t: &Tensor,
    t: usize,
    predictor: impl FnOnce(&Tensor, usize) -> Result<Tensor>,
    schedule: &DiffusionSchedule,
    z: &Tensor,
) -> Result<Tensor> {
    same_shape("reverse step", x_t, z)?;
    let (alpha, ab, beta) = (schedule.alpha(t)?, schedule.alpha_cum(t)?, schedule.beta(t)?);
    let eps = predictor(x_t, t)?;
    same_shape("reverse step noise", x_t, &eps)?;
    let coef = if beta == 0.0 { 0.0 } else { (1.0 - alpha) / (1.0 - ab).sqrt() };
    let inv = 1.0 / alpha.sqrt();
    let sigma = if t > 1 { beta.sqrt() } else { 0.0 };
    let mean = x_t.zip_map(&eps, |x, e| inv * (x - coef * e))?;
    Ok(mean.zip_map(z, |m, n| m + sigma * n)?)
}

/// A noise model `ε(x_t, t | features)` evaluated on a tape.
pub trait EpsModel {
    /// `x_t: [B, T, d_y]`, `features: [B, T, d_feat]`, one step per batch row.
    fn predict(&self, tape: &mut Tape, store: &ParamStore, x_t: Var, features: Var, steps: &[usize]) -> Result<Var>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoisePredictorConfig {
    pub d_y: usize,
    pub d_feat: usize,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub max_frames: usize,
    pub diffusion_steps: usize,
}

/// Transformer over the frames of a window. Each token is the noisy sample
/// concatenated with that frame's features, plus step and frame embeddings.
#[derive(Clone, Debug)]
pub struct NoisePredictor {
    pub config: NoisePredictorConfig,
    input: LinearLayer,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
    output: LinearLayer,
}

impl NoisePredictor {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: NoisePredictorConfig, rng: &mut R) -> Result<Self> {
        let d = config.d_model;
        let blocks = (0..config.blocks)
            .map(|i| TransformerBlock::new(store, &format!("{name}.block{i}"), TransformerConfig::new(d, config.heads), rng))
            .collect::<std::result::Result<_, _>>()?;
        Ok(NoisePredictor {
            config,
            input: LinearLayer::new(store, &format!("{name}.input"), config.d_y + config.d_feat, d, rng),
            blocks,
            norm: LayerNorm::new(store, &format!("{name}.norm"), d),
            output: LinearLayer::new(store, &format!("{name}.output"), d, config.d_y, rng),
        })
    }

    fn embeddings(&self, batch: usize, frames: usize, steps: &[usize]) -> Result<Tensor> {
        let d = self.config.d_model;
        let mut data = Vec::with_capacity(batch * frames * d);
        for &t in steps {
            let step = step_embedding(t, d, self.config.diffusion_steps)?;
            for f in 0..frames {
                let pos = step_embedding(f, d, self.config.max_frames)?;
                data.extend(step.data().iter().zip(pos.data()).map(|(a, b)| a + b));
            }
        }
        Ok(Tensor::new(&[batch, frames, d], data)?)
    }
}

impl EpsModel for NoisePredictor {
    fn predict(&self, tape: &mut Tape, store: &ParamStore, x_t: Var, features: Var, steps: &[usize]) -> Result<Var> {
        let xs = tape.shape(x_t).to_vec();
        if xs.len() != 3 || xs[2] != self.config.d_y || steps.len() != xs[0] {
            return Err(CoreError::Contract(format!(
                "noise predictor input {xs:?} with {} steps, expected [B, T, {}]",
                steps.len(),
                self.config.d_y
            )));
        }
        let (b, t) = (xs[0], xs[1]);
        let joined = tape.concat(&[x_t, features], 2)?;
        let h = self.input.forward(tape, store, joined)?;
        let emb = tape.constant(self.embeddings(b, t, steps)?);
        let mut h = tape.add(h, emb)?;
        for block in &self.blocks {
            h = block.forward(tape, store, h)?;
        }
        let h = self.norm.forward(tape, store, h)?;
        Ok(self.output.forward(tape, store, h)?)
    }
}

fn batched(t: &Tensor) -> Result<Tensor> {
    match t.rank() {
        3 => Ok(t.clone()),
        2 => Ok(t.reshape(&[1, t.shape()[0], t.shape()[1]])?),
        _ => Err(CoreError::Contract(format!("expected [T, d] or [B, T, d], got {:?}", t.shape()))),
    }
}

/// Noise-prediction objective: draw `t ~ U{1..T_diff}` and `z ~ N(0, I)` per
/// sequence, corrupt `x0`, and return `mean((ε̂ − z)²)` on the tape.
pub fn baseline_train_step<M: EpsModel, R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParamStore,
    model: &M,
    schedule: &DiffusionSchedule,
    x0: &Tensor,
    features: &Tensor,
    rng: &mut R,
) -> Result<Var> {
    let x0 = batched(x0)?;
    let features = batched(features)?;
    let b = x0.shape()[0];
    if features.shape()[..2] != x0.shape()[..2] {
        return Err(CoreError::Contract(format!(
            "targets {:?} and features {:?} disagree on batch or frames",
            x0.shape(),
            features.shape()
        )));
    }
    let per = x0.numel() / b;
    let steps: Vec<usize> = (0..b).map(|_| rng.random_range(1..=schedule.steps())).collect();
    let z = init::gaussian(x0.shape(), 1.0, rng);
    let mut noisy = Vec::with_capacity(x0.numel());
    for (i, &t) in steps.iter().enumerate() {
        let ab = schedule.alpha_cum(t)?;
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let range = i * per..(i + 1) * per;
        noisy.extend(x0.data()[range.clone()].iter().zip(&z.data()[range]).map(|(x, n)| a * x + s * n));
    }
    let x_t = tape.constant(Tensor::new(x0.shape(), noisy)?);
    let f = tape.constant(features);
    let eps = model.predict(tape, store, x_t, f, &steps)?;
    let target = tape.constant(z);
    let diff = tape.sub(eps, target)?;
    let sq = tape.square(diff)?;
    Ok(tape.mean(sq))
}

/// Run the full reverse chain from pure noise, conditioned on `features`
/// (`[T, d_feat]` or `[B, T, d_feat]`). Output has `d_y` channels per frame
/// and is a pure function of the inputs and `seed`.
pub fn baseline_generate<M: EpsModel>(
    model: &M,
    store: &ParamStore,
    schedule: &DiffusionSchedule,
    features: &Tensor,
    d_y: usize,
    seed: u64,
) -> Result<Tensor> {
    let single = features.rank() == 2;
    let features = batched(features)?;
    let (b, t) = (features.shape()[0], features.shape()[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = init::gaussian(&[b, t, d_y], 1.0, &mut rng);
    for step in (1..=schedule.steps()).rev() {
        let z = init::gaussian(&[b, t, d_y], 1.0, &mut rng);
        x = reverse_step(
            &x,
            step,
            |x_t, s| {
                let mut tape = Tape::new();
                let xv = tape.constant(x_t.clone());
                let fv = tape.constant(features.clone());
                let eps = model.predict(&mut tape, store, xv, fv, &vec![s; b])?;
                Ok(tape.value(eps).clone())
            },
            schedule,
            &z,
        )?;
        if !x.is_finite() {
            return Err(CoreError::Numeric { context: format!("reverse step {step}") });
        }
    }
    if single {
        Ok(x.reshape(&[t, d_y])?)
    } else {
        Ok(x)
    }
}
