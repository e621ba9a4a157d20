//! A trainable model: configuration, body template, parameters and network.

use ddt_tensor::{ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelKind, TrainConfig};
use super::regressor::{MeshParams, RegressorHead};
use crate::body::{body_forward, MotionSequence, ToyBody, IDENTITY_6D};
use crate::ddt::{DdtConfig, DdtNetwork, DdtOutput, Directions, StartNoise};
use crate::diffusion::{baseline_generate, make_schedule, DiffusionSchedule, NoisePredictor, NoisePredictorConfig, ScheduleKind};
use crate::error::CoreError;
use crate::Result;

/// Bone-length residuals are stored ×10 in the baseline's target space.
const BETA_SCALE: f64 = 10.0;

#[derive(Clone, Debug)]
pub enum Network {
    Ddt { net: DdtNetwork, head: RegressorHead },
    Baseline { predictor: NoisePredictor, schedule: DiffusionSchedule },
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainConfig,
    pub body: ToyBody,
    pub store: ParamStore,
    pub network: Network,
}

/// Per-frame predictions for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `[T, K, 3]`, mm
    pub joints: Tensor,
    /// `[T, V, 3]`, mm
    pub vertices: Tensor,
}

/// Stack equally shaped tensors along a new leading axis.
pub fn stack(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| CoreError::Contract("nothing to stack".into()))?;
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(first.numel() * parts.len());
    for p in parts {
        if p.shape() != first.shape() {
            return Err(CoreError::Contract(format!("cannot stack {:?} with {:?}", p.shape(), first.shape())));
        }
        data.extend_from_slice(p.data());
    }
    Ok(Tensor::new(&shape, data)?)
}

/// Width of the baseline's per-frame target vector.
pub fn baseline_width(joints: usize) -> usize {
    joints * 6 + joints - 1
}

/// Per-frame baseline targets `[T, K·6 + K−1]`: the pose offset from the
/// identity rotation, then scaled relative bone-length changes.
pub fn encode_baseline_targets(seq: &MotionSequence, template: &[f64]) -> Result<Tensor> {
    let (t, k) = (seq.frames(), template.len() + 1);
    if seq.theta.shape() != [t, k, 6] || seq.beta.len() != k - 1 {
        return Err(CoreError::Contract(format!("sequence does not match a {k}-joint template")));
    }
    let width = baseline_width(k);
    let mut data = Vec::with_capacity(t * width);
    for f in 0..t {
        let pose = &seq.theta.data()[f * k * 6..(f + 1) * k * 6];
        data.extend(pose.iter().enumerate().map(|(i, v)| v - IDENTITY_6D[i % 6]));
        data.extend(seq.beta.iter().zip(template).map(|(b, l)| (b / l - 1.0) * BETA_SCALE));
    }
    Ok(Tensor::new(&[t, width], data)?)
}

/// Inverse of [`encode_baseline_targets`]: `(theta [T, K, 6], beta [T, K−1])`.
pub fn decode_baseline_targets(x: &Tensor, template: &[f64]) -> Result<(Tensor, Tensor)> {
    let k = template.len() + 1;
    let width = baseline_width(k);
    let t = match x.shape() {
        [t, w] if *w == width => *t,
        other => return Err(CoreError::Contract(format!("baseline sample must be [T, {width}], got {other:?}"))),
    };
    let mut theta = Vec::with_capacity(t * k * 6);
    let mut beta = Vec::with_capacity(t * (k - 1));
    for row in x.data().chunks(width) {
        theta.extend(row[..k * 6].iter().enumerate().map(|(i, v)| v + IDENTITY_6D[i % 6]));
        beta.extend(row[k * 6..].iter().zip(template).map(|(v, l)| l * (1.0 + v / BETA_SCALE)));
    }
    Ok((Tensor::new(&[t, k, 6], theta)?, Tensor::new(&[t, k - 1], beta)?))
}

/// Start noise for a batch whose row `i` is drawn from `seeds[i]` alone.
pub fn start_noise(seeds: &[u64], d_model: usize) -> Result<StartNoise> {
    let rows: Vec<StartNoise> = seeds.iter().map(|&s| StartNoise::from_seed(1, d_model, s)).collect();
    let f: Vec<&Tensor> = rows.iter().map(|r| &r.forward).collect();
    let b: Vec<&Tensor> = rows.iter().map(|r| &r.backward).collect();
    let reshape = |t: Tensor| t.reshape(&[seeds.len(), d_model]);
    Ok(StartNoise { forward: reshape(stack(&f)?)?, backward: reshape(stack(&b)?)? })
}

impl Model {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let body = ToyBody::standard(config.joints, config.vertices)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let network = match config.model {
            ModelKind::Ddt => {
                let mut dc = DdtConfig::new(config.d_feat, config.d_model).with_variant(config.variant);
                dc.heads = config.heads;
                dc.blocks = config.blocks;
                dc.enc_hidden = config.enc_hidden;
                dc.max_step = config.max_step;
                dc.norm = config.norm;
                if !config.augmentation && dc.directions == Directions::Both {
                    dc.directions = Directions::Forward;
                }
                let net = DdtNetwork::new(&mut store, "ddt", dc, &mut rng)?;
                let head = RegressorHead::new(&mut store, "head", config.d_model, &body.bone_lengths, &mut rng);
                Network::Ddt { net, head }
            }
            ModelKind::Baseline => {
                let pc = NoisePredictorConfig {
                    d_y: baseline_width(config.joints),
                    d_feat: config.d_feat,
                    d_model: config.d_model,
                    heads: config.heads,
                    blocks: config.blocks,
                    max_frames: config.max_step,
                    diffusion_steps: config.diffusion_steps,
                };
                let predictor = NoisePredictor::new(&mut store, "baseline", pc, &mut rng)?;
                let schedule =
                    make_schedule(config.diffusion_steps, config.beta_start, config.beta_end, ScheduleKind::Linear)?;
                Network::Baseline { predictor, schedule }
            }
        };
        Ok(Model { config: config.clone(), body, store, network })
    }

    /// DDT pass plus regressor on `features: [B, T, d_feat]`.
    pub fn ddt_forward(&self, tape: &mut Tape, features: Var, noise: &StartNoise) -> Result<(DdtOutput, MeshParams)> {
        match &self.network {
            Network::Ddt { net, head } => {
                let out = net.forward(tape, &self.store, features, noise)?;
                let mesh = head.forward(tape, &self.store, out.y)?;
                Ok((out, mesh))
            }
            Network::Baseline { .. } => Err(CoreError::Contract("not a DDT model".into())),
        }
    }

    /// Posed joints and vertices (mm) for `theta: [N, K, 6]`, `beta: [N, K−1]`.
    pub fn pose_batch(&self, tape: &mut Tape, theta: Var, beta: Var) -> Result<(Var, Var)> {
        let (j, v) = body_forward(tape, &self.body, theta, beta, true)?;
        Ok((j, v.expect("vertices requested")))
    }

    /// Predict a batch of sequences; sequence `i` uses seed `seeds[i]`.
    pub fn predict(&self, seqs: &[&MotionSequence], seeds: &[u64]) -> Result<Vec<Prediction>> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let t = seqs[0].frames();
        let (k, nv) = (self.config.joints, self.config.vertices);
        let mut tape = Tape::new();
        let (theta, beta) = match &self.network {
            Network::Ddt { .. } => {
                let feats: Vec<&Tensor> = seqs.iter().map(|s| &s.features).collect();
                let f = tape.constant(stack(&feats)?);
                let noise = start_noise(seeds, self.config.d_model)?;
                let (_, mesh) = self.ddt_forward(&mut tape, f, &noise)?;
                (mesh.theta, mesh.beta)
            }
            Network::Baseline { predictor, schedule } => {
                let mut thetas = Vec::new();
                let mut betas = Vec::new();
                for (s, &seed) in seqs.iter().zip(seeds) {
                    let x = baseline_generate(predictor, &self.store, schedule, &s.features, baseline_width(k), seed)?;
                    let (th, be) = decode_baseline_targets(&x, &self.body.bone_lengths)?;
                    thetas.push(th);
                    betas.push(be);
                }
                let th = stack(&thetas.iter().collect::<Vec<_>>())?.reshape(&[seqs.len() * t, k, 6])?;
                let be = stack(&betas.iter().collect::<Vec<_>>())?.reshape(&[seqs.len() * t, k - 1])?;
                (tape.constant(th), tape.constant(be))
            }
        };
        let (j, v) = self.pose_batch(&mut tape, theta, beta)?;
        let (j, v) = (tape.value(j), tape.value(v));
        if !j.is_finite() || !v.is_finite() {
            return Err(CoreError::Numeric { context: "prediction".into() });
        }
        let per_j = t * k * 3;
        let per_v = t * nv * 3;
        (0..seqs.len())
            .map(|i| {
                Ok(Prediction {
                    joints: Tensor::new(&[t, k, 3], j.data()[i * per_j..(i + 1) * per_j].to_vec())?,
                    vertices: Tensor::new(&[t, nv, 3], v.data()[i * per_v..(i + 1) * per_v].to_vec())?,
                })
            })
            .collect()
    }
}
