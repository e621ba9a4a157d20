//! Seeded mini-batch training with best-by-validation selection.

use std::fmt;

use ddt_tensor::{Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, RngState};
use super::config::TrainConfig;
use super::loss::{loss_aug, loss_overall, loss_tcmr, reprojection_loss, LossWeights, MeshTargets};
use super::model::{encode_baseline_targets, stack, Model, Network};
use super::optim::Adam;
use crate::body::MotionSequence;
use crate::ddt::StartNoise;
use crate::diffusion::baseline_train_step;
use crate::error::CoreError;
use crate::Result;

const MM: f64 = 1e-3;
const SMOOTHING: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean batch loss.
    pub train_loss: f64,
    /// Exponential moving average of batch losses at the end of the epoch.
    pub smoothed_loss: f64,
    pub val_loss: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} train_loss={:?} smoothed_loss={:?} val_loss={:?}",
            self.epoch, self.train_loss, self.smoothed_loss, self.val_loss
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best epoch.
    pub model: Model,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub checkpoint: Checkpoint,
}

impl TrainOutcome {
    pub fn log_text(&self) -> String {
        self.log.iter().map(|l| format!("{l}\n")).collect()
    }
}

/// Split off the validation tail: `ceil(fraction · n)` sequences, keeping at
/// least one for training.
pub fn split_validation(data: &[MotionSequence], fraction: f64) -> (&[MotionSequence], &[MotionSequence]) {
    let n = data.len();
    let v = ((fraction * n as f64).ceil() as usize).min(n.saturating_sub(1));
    data.split_at(n - v)
}

/// Loss of one batch on `tape`. `noise` is used by DDT models; baseline
/// models draw their diffusion steps and noise from `rng`.
pub fn batch_loss(
    model: &Model,
    tape: &mut Tape,
    batch: &[&MotionSequence],
    noise: &StartNoise,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let cfg = &model.config;
    match &model.network {
        Network::Ddt { .. } => {
            let (b, t, k) = (batch.len(), batch[0].frames(), cfg.joints);
            let n = b * t;
            let feats: Vec<&Tensor> = batch.iter().map(|s| &s.features).collect();
            let f = tape.constant(stack(&feats)?);
            let (out, mesh) = model.ddt_forward(tape, f, noise)?;
            let (joints, _) = crate::body::body_forward(tape, &model.body, mesh.theta, mesh.beta, false)?;

            let thetas: Vec<&Tensor> = batch.iter().map(|s| &s.theta).collect();
            let joints_gt: Vec<&Tensor> = batch.iter().map(|s| &s.joints).collect();
            let mut beta_gt = Vec::with_capacity(n * (k - 1));
            for s in batch {
                for _ in 0..t {
                    beta_gt.extend(s.beta.iter().map(|v| v * MM));
                }
            }
            let gt_joints = stack(&joints_gt)?.reshape(&[n, k, 3])?.map(|v| v * MM);
            let gt = MeshTargets {
                theta: tape.constant(stack(&thetas)?.reshape(&[n, k, 6])?),
                beta: tape.constant(Tensor::new(&[n, k - 1], beta_gt)?),
                joints: tape.constant(gt_joints.clone()),
            };
            let pred = MeshTargets {
                theta: mesh.theta,
                beta: tape.scale(mesh.beta, MM),
                joints: tape.scale(joints, MM),
            };
            let w = LossWeights { w1: cfg.w1, w2: cfg.w2, w3: cfg.w3, w4: cfg.w4 };
            let mut loss = loss_tcmr(tape, &pred, &gt, &w, cfg.loss_norm)?;
            if cfg.reprojection {
                let xy: Vec<f64> = gt_joints.data().chunks(3).flat_map(|p| [p[0], p[1]]).collect();
                let gt2d = tape.constant(Tensor::new(&[n, k, 2], xy)?);
                let r = reprojection_loss(tape, pred.joints, mesh.cam, gt2d)?;
                let r = tape.scale(r, cfg.w_reproj);
                loss = tape.add(loss, r)?;
            }
            let aug = match (cfg.augmentation, out.y_f, out.y_b) {
                (true, Some(yf), Some(yb)) => Some(loss_aug(tape, yf, yb, cfg.w4)?),
                _ => None,
            };
            loss_overall(tape, loss, aug)
        }
        Network::Baseline { predictor, schedule } => {
            let targets = batch
                .iter()
                .map(|s| encode_baseline_targets(s, &model.body.bone_lengths))
                .collect::<Result<Vec<_>>>()?;
            let x0 = stack(&targets.iter().collect::<Vec<_>>())?;
            let feats = stack(&batch.iter().map(|s| &s.features).collect::<Vec<_>>())?;
            baseline_train_step(tape, &model.store, predictor, schedule, &x0, &feats, rng)
        }
    }
}

fn validation_loss(model: &Model, val: &[MotionSequence]) -> Result<f64> {
    let cfg = &model.config;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval_seed);
    let mut total = 0.0;
    for (c, chunk) in val.chunks(cfg.batch_size).enumerate() {
        let batch: Vec<&MotionSequence> = chunk.iter().collect();
        let seeds: Vec<u64> = (0..chunk.len()).map(|i| cfg.eval_seed.wrapping_add((c * cfg.batch_size + i) as u64)).collect();
        let noise = super::model::start_noise(&seeds, cfg.d_model)?;
        let mut tape = Tape::new();
        let loss = batch_loss(model, &mut tape, &batch, &noise, &mut rng)?;
        total += tape.value(loss).item()? * chunk.len() as f64;
    }
    Ok(total / val.len() as f64)
}

fn check_data(config: &TrainConfig, data: &[MotionSequence]) -> Result<()> {
    let first = data.first().ok_or_else(|| CoreError::Config("training needs at least one sequence".into()))?;
    let got = [
        ("frames", first.frames()),
        ("joints", first.joints.shape()[1]),
        ("vertices", first.vertices.shape()[1]),
        ("d_feat", first.features.shape()[1]),
    ];
    let want = [config.frames, config.joints, config.vertices, config.d_feat];
    let bad: Vec<String> = got
        .iter()
        .zip(want)
        .filter(|((_, g), w)| g != w)
        .map(|((k, g), w)| format!("{k}: config {w}, data {g}"))
        .collect();
    if !bad.is_empty() {
        return Err(CoreError::Compat(bad.join("; ")));
    }
    Ok(())
}

/// Train from `config.seed`. The last `val_fraction` of `data` is held out
/// for checkpoint selection; with no held-out data the training loss is used.
pub fn train(config: &TrainConfig, data: &[MotionSequence]) -> Result<TrainOutcome> {
    config.validate()?;
    check_data(config, data)?;
    let mut model = Model::new(config)?;
    let (train_set, val_set) = split_validation(data, config.val_fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut opt = Adam::new(config.lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut smoothed: Option<f64> = None;
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Checkpoint)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&MotionSequence> = idx.iter().map(|&i| &train_set[i]).collect();
            let noise = StartNoise::sample(batch.len(), config.d_model, &mut rng);
            let mut tape = Tape::new();
            let loss = batch_loss(&model, &mut tape, &batch, &noise, &mut rng)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(CoreError::Numeric { context: format!("loss at epoch {epoch}, step {}", step + 1) });
            }
            tape.backward(loss)?;
            opt.step(&mut model.store, &tape);
            sum += value;
            batches += 1;
            smoothed = Some(match smoothed {
                Some(s) => SMOOTHING * s + (1.0 - SMOOTHING) * value,
                None => value,
            });
        }
        let train_loss = sum / batches as f64;
        let val_loss = if val_set.is_empty() { train_loss } else { validation_loss(&model, val_set)? };
        if !val_loss.is_finite() {
            return Err(CoreError::Numeric { context: format!("validation loss at epoch {epoch}") });
        }
        log.push(EpochLog { epoch, train_loss, smoothed_loss: smoothed.unwrap_or(train_loss), val_loss });
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, Checkpoint::from_model(&model, epoch as u32, RngState::capture(&rng))));
        }
    }
    let (best_epoch, checkpoint) = match best {
        Some((_, e, c)) => (e, c),
        None => (0, Checkpoint::from_model(&model, 0, RngState::capture(&rng))),
    };
    let model = checkpoint.to_model()?;
    Ok(TrainOutcome { model, best_epoch, log, checkpoint })
}
