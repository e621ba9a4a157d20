//! Synthetic motion sequences: smooth joint-angle trajectories, the posed
//! body they produce, and noisy per-frame feature vectors standing in for a
//! frozen image backbone.

use ddt_tensor::Tensor;
use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{pose, rotmat_to_rot6d, skin_posed, ToyBody};
use crate::error::CoreError;
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceConfig {
    pub frames: usize,
    pub joints: usize,
    pub vertices: usize,
    pub d_feat: usize,
    pub noise_level: f64,
    pub fps: f64,
    /// Seed of the frozen feature embedding, shared by every sequence.
    pub embedding_seed: u64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            frames: 16,
            joints: 8,
            vertices: 24,
            d_feat: 64,
            noise_level: 0.1,
            fps: 25.0,
            embedding_seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    /// Bone lengths in mm, shared by every frame.
    pub beta: Vec<f64>,
    /// `[T, K, 6]`
    pub theta: Tensor,
    /// `[T, K, 3]`, mm
    pub joints: Tensor,
    /// `[T, V, 3]`, mm
    pub vertices: Tensor,
    /// `[T, d_feat]`
    pub features: Tensor,
}

impl MotionSequence {
    pub fn frames(&self) -> usize {
        self.theta.shape()[0]
    }
}

/// Frozen embedding `[d_feat, K*6 + K*3]` with entries of variance `1/in`.
fn embedding(config: &SequenceConfig) -> Vec<f64> {
    let width = config.joints * 9;
    let mut rng = ChaCha8Rng::seed_from_u64(config.embedding_seed);
    let dist = Normal::new(0.0, 1.0 / (width as f64).sqrt()).expect("positive std");
    (0..config.d_feat * width).map(|_| dist.sample(&mut rng)).collect()
}

struct Wave {
    amplitude: f64,
    freq_hz: f64,
    phase: f64,
}

fn angle_track<R: Rng>(rng: &mut R, root: bool) -> (f64, Vec<Wave>) {
    let base = if root { rng.random_range(-0.5..0.5) } else { rng.random_range(-0.8..0.8) };
    let count = rng.random_range(2..=3);
    let waves = (0..count)
        .map(|_| Wave {
            amplitude: rng.random_range(0.1..0.4),
            freq_hz: rng.random_range(0.3..2.0),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        })
        .collect();
    (base, waves)
}

fn generate_with<R: Rng>(config: &SequenceConfig, embed: &[f64], rng: &mut R) -> Result<MotionSequence> {
    let SequenceConfig { frames, joints: k, vertices, d_feat, noise_level, fps, .. } = *config;
    if frames < 2 {
        return Err(CoreError::Contract(format!("sequences need at least 2 frames, got {frames}")));
    }
    if !(noise_level >= 0.0) || !(fps > 0.0) {
        return Err(CoreError::Config(format!("noise {noise_level} and fps {fps} out of range")));
    }
    let template = ToyBody::standard(k, vertices)?;
    let beta: Vec<f64> = template
        .bone_lengths
        .iter()
        .map(|l| l * (1.0 + rng.random_range(-0.1..0.1)))
        .collect();
    let body = template.with_lengths(&beta)?;
    let tracks: Vec<[(f64, Vec<Wave>); 3]> = (0..k)
        .map(|j| [angle_track(rng, j == 0), angle_track(rng, j == 0), angle_track(rng, j == 0)])
        .collect();

    let width = k * 9;
    let mut theta = Vec::with_capacity(frames * k * 6);
    let mut joints = Vec::with_capacity(frames * k * 3);
    let mut verts = Vec::with_capacity(frames * vertices * 3);
    let mut features = Vec::with_capacity(frames * d_feat);
    for f in 0..frames {
        let time = f as f64 / fps;
        let mut frame_theta = Vec::with_capacity(k * 6);
        for axes in &tracks {
            let w = axes.each_ref().map(|(base, waves)| {
                base + waves
                    .iter()
                    .map(|w| w.amplitude * (std::f64::consts::TAU * w.freq_hz * time + w.phase).sin())
                    .sum::<f64>()
            });
            let r = Rotation3::new(Vector3::new(w[0], w[1], w[2]));
            frame_theta.extend_from_slice(&rotmat_to_rot6d(r.matrix()));
        }
        let posed = pose(&body, &frame_theta)?;
        let frame_verts = skin_posed(&body, &posed);

        let mut input = frame_theta.clone();
        for p in &posed.joints {
            input.extend(p.iter().map(|c| c / 100.0));
        }
        for row in embed.chunks(width) {
            let clean: f64 = row.iter().zip(&input).map(|(a, b)| a * b).sum();
            let noise: f64 = rng.sample(StandardNormal);
            features.push(clean + noise_level * noise);
        }
        theta.extend_from_slice(&frame_theta);
        joints.extend(posed.joints.iter().flat_map(|p| p.iter().copied()));
        verts.extend(frame_verts.iter().flat_map(|p| p.iter().copied()));
    }
    Ok(MotionSequence {
        beta,
        theta: Tensor::new(&[frames, k, 6], theta)?,
        joints: Tensor::new(&[frames, k, 3], joints)?,
        vertices: Tensor::new(&[frames, vertices, 3], verts)?,
        features: Tensor::new(&[frames, d_feat], features)?,
    })
}

/// One sequence, fully determined by `(config, seed)`.
pub fn generate_sequence(config: &SequenceConfig, seed: u64) -> Result<MotionSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with(config, &embedding(config), &mut rng)
}

/// `count` sequences; sequence `i` draws from stream `i` of the seeded generator.
pub fn generate_dataset(config: &SequenceConfig, count: usize, seed: u64) -> Result<Vec<MotionSequence>> {
    let embed = embedding(config);
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            generate_with(config, &embed, &mut rng)
        })
        .collect()
}
