//! Scoring predictions against ground truth.

use crate::body::{DatasetHeader, MotionSequence};
use crate::error::CoreError;
use crate::metrics::{accel_error, mpjpe, mpvpe, pa_mpjpe, MetricsReport};
use crate::Result;

use super::config::TrainConfig;
use super::model::{Model, Prediction};

/// Fails with every field on which the configuration and dataset disagree.
pub fn check_compat(config: &TrainConfig, header: &DatasetHeader) -> Result<()> {
    let pairs = [
        ("frames", config.frames, header.frames),
        ("joints", config.joints, header.joints),
        ("vertices", config.vertices, header.vertices),
        ("d_feat", config.d_feat, header.d_feat),
    ];
    let bad: Vec<String> = pairs
        .iter()
        .filter(|(_, c, d)| c != d)
        .map(|(k, c, d)| format!("{k}: checkpoint {c}, dataset {d}"))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CoreError::Compat(bad.join("; ")))
    }
}

/// Ground truth repackaged as predictions.
pub fn oracle_predictions(seqs: &[MotionSequence]) -> Vec<Prediction> {
    seqs.iter().map(|s| Prediction { joints: s.joints.clone(), vertices: s.vertices.clone() }).collect()
}

/// All four metrics over every frame. Frame-level means are weighted by
/// frame count; acceleration by the number of interior frames.
pub fn score(preds: &[Prediction], seqs: &[MotionSequence], fps: Option<f64>) -> Result<MetricsReport> {
    if preds.len() != seqs.len() {
        return Err(CoreError::Contract(format!("{} predictions for {} sequences", preds.len(), seqs.len())));
    }
    let (mut frames, mut acc_frames) = (0usize, 0usize);
    let mut sums = [0.0; 4];
    for (p, s) in preds.iter().zip(seqs) {
        let t = s.frames();
        let inner = t.saturating_sub(2);
        sums[0] += mpjpe(&p.joints, &s.joints, true)? * t as f64;
        sums[1] += pa_mpjpe(&p.joints, &s.joints)? * t as f64;
        sums[2] += mpvpe(&p.vertices, &s.vertices, Some((&p.joints, &s.joints)))? * t as f64;
        sums[3] += accel_error(&p.joints, &s.joints, fps)? * inner as f64;
        frames += t;
        acc_frames += inner;
    }
    let div = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
    Ok(MetricsReport {
        mpjpe: div(sums[0], frames),
        pa_mpjpe: div(sums[1], frames),
        mpvpe: div(sums[2], frames),
        acc_err: div(sums[3], acc_frames),
        frames_evaluated: frames,
    })
}

/// Predict every sequence with its own start noise (`eval_seed + index`)
/// and score the result.
pub fn evaluate(model: &Model, seqs: &[MotionSequence], fps: f64) -> Result<MetricsReport> {
    let cfg = &model.config;
    let mut preds = Vec::with_capacity(seqs.len());
    for (c, chunk) in seqs.chunks(cfg.batch_size.max(1)).enumerate() {
        let refs: Vec<&MotionSequence> = chunk.iter().collect();
        let seeds: Vec<u64> =
            (0..chunk.len()).map(|i| cfg.eval_seed.wrapping_add((c * cfg.batch_size + i) as u64)).collect();
        preds.extend(model.predict(&refs, &seeds)?);
    }
    score(&preds, seqs, cfg.fps_scaling.then_some(fps))
}

/// [`evaluate`] after checking the dataset header against the model.
pub fn evaluate_dataset(model: &Model, header: &DatasetHeader, seqs: &[MotionSequence]) -> Result<MetricsReport> {
    check_compat(&model.config, header)?;
    evaluate(model, seqs, header.fps as f64)
}
