//! Per-frame inference timing for one window versus a sliding window.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ddt_tensor::{Tape, Tensor};

use super::model::{start_noise, Model};
use crate::error::CoreError;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchMode {
    /// One pass yields every frame of the window.
    ManyToMany,
    /// One pass per output frame over a window centered on it.
    ManyToOne,
}

impl FromStr for BenchMode {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m2m" | "many_to_many" => Ok(BenchMode::ManyToMany),
            "m2o" | "many_to_one_sim" => Ok(BenchMode::ManyToOne),
            _ => Err(CoreError::Config(format!("unknown benchmark mode '{s}'"))),
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchMode::ManyToMany => "many_to_many",
            BenchMode::ManyToOne => "many_to_one_sim",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub mode: BenchMode,
    pub frames: usize,
    pub repeats: usize,
    /// Full passes needed to produce all frames of one window.
    pub passes: usize,
    pub decoder_invocations: usize,
    pub median_ms_per_frame: f64,
    pub mean_ms_per_frame: f64,
    pub std_ms_per_frame: f64,
    pub min_ms_per_frame: f64,
    pub max_ms_per_frame: f64,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode={}", self.mode)?;
        writeln!(f, "frames={}", self.frames)?;
        writeln!(f, "repeats={}", self.repeats)?;
        writeln!(f, "passes={}", self.passes)?;
        writeln!(f, "decoder_invocations={}", self.decoder_invocations)?;
        writeln!(f, "median_ms_per_frame={}", self.median_ms_per_frame)?;
        writeln!(f, "mean_ms_per_frame={}", self.mean_ms_per_frame)?;
        writeln!(f, "std_ms_per_frame={}", self.std_ms_per_frame)?;
        writeln!(f, "min_ms_per_frame={}", self.min_ms_per_frame)?;
        writeln!(f, "max_ms_per_frame={}", self.max_ms_per_frame)
    }
}

/// Windows of `window` frames, one per output frame, centered on it and
/// padded by repeating the edge frames.
pub fn sliding_windows(features: &Tensor, window: usize) -> Result<Vec<Tensor>> {
    let (t, d) = match features.shape() {
        [t, d] => (*t, *d),
        other => return Err(CoreError::Contract(format!("features must be [T, d], got {other:?}"))),
    };
    let half = window / 2;
    Ok((0..t)
        .map(|f| {
            let mut data = Vec::with_capacity(window * d);
            for k in 0..window {
                let src = (f + k).saturating_sub(half).min(t - 1);
                data.extend_from_slice(&features.data()[src * d..(src + 1) * d]);
            }
            Tensor::new(&[1, window, d], data).expect("sized above")
        })
        .collect())
}

/// Returns decoder invocations.
fn pass(model: &Model, window: &Tensor, seed: u64) -> Result<usize> {
    let mut tape = Tape::new();
    let f = tape.constant(window.clone());
    let noise = start_noise(&[seed], model.config.d_model)?;
    let (out, mesh) = model.ddt_forward(&mut tape, f, &noise)?;
    model.pose_batch(&mut tape, mesh.theta, mesh.beta)?;
    Ok(out.invocations)
}

/// One window's worth of output: its passes and decoder invocations.
fn run_window(model: &Model, windows: &[Tensor], seed: u64) -> Result<(usize, usize)> {
    let mut invocations = 0;
    for w in windows {
        invocations += pass(model, w, seed)?;
    }
    Ok((windows.len(), invocations))
}

/// Time producing all frames of `features: [T, d_feat]`.
pub fn benchmark(model: &Model, features: &Tensor, mode: BenchMode, repeats: usize, warmup: usize) -> Result<BenchReport> {
    let t = features.shape()[0];
    let d = features.shape().get(1).copied().unwrap_or(0);
    let windows = match mode {
        BenchMode::ManyToMany => vec![features.reshape(&[1, t, d])?],
        BenchMode::ManyToOne => sliding_windows(features, t)?,
    };
    let seed = model.config.eval_seed;
    for _ in 0..warmup {
        run_window(model, &windows, seed)?;
    }
    let mut per_frame = Vec::with_capacity(repeats);
    let mut counts = (0, 0);
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        counts = run_window(model, &windows, seed)?;
        per_frame.push(start.elapsed().as_secs_f64() * 1e3 / t as f64);
    }
    let n = per_frame.len() as f64;
    let mean = per_frame.iter().sum::<f64>() / n;
    let var = per_frame.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let mut sorted = per_frame.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 { sorted[m / 2] } else { 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]) };
    Ok(BenchReport {
        mode,
        frames: t,
        repeats: m,
        passes: counts.0,
        decoder_invocations: counts.1,
        median_ms_per_frame: median,
        mean_ms_per_frame: mean,
        std_ms_per_frame: var.sqrt(),
        min_ms_per_frame: sorted[0],
        max_ms_per_frame: sorted[m - 1],
    })
}
