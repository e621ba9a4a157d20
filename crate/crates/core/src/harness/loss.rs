//! Training objectives.

use ddt_tensor::{Tape, Var};

use super::config::LossNorm;
use crate::body::project_weak_perspective_tape;
use crate::error::CoreError;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Bone lengths.
    pub w1: f64,
    /// Pose.
    pub w2: f64,
    /// Joints.
    pub w3: f64,
    /// Forward/backward consistency.
    pub w4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w1: 0.06, w2: 60.0, w3: 300.0, w4: 100.0 }
    }
}

/// One side of the parameter loss. Lengths and joints should be in meters.
#[derive(Clone, Copy, Debug)]
pub struct MeshTargets {
    pub theta: Var,
    pub beta: Var,
    pub joints: Var,
}

fn check(tape: &Tape, what: &str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(CoreError::Contract(format!(
            "{what}: prediction {:?} vs target {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

fn residual_norm(tape: &mut Tape, pred: Var, gt: Var, norm: LossNorm) -> Result<Var> {
    let r = tape.sub(pred, gt)?;
    Ok(match norm {
        LossNorm::Rms => tape.rms(r),
        LossNorm::Sum => {
            let sq = tape.square(r)?;
            let s = tape.sum(sq);
            tape.sqrt(s)?
        }
    })
}

/// `w1·‖β̂−β*‖ + w2·‖θ̂−θ*‖ + w3·‖Ĵ−J*‖`.
pub fn loss_tcmr(tape: &mut Tape, pred: &MeshTargets, gt: &MeshTargets, w: &LossWeights, norm: LossNorm) -> Result<Var> {
    check(tape, "beta", pred.beta, gt.beta)?;
    check(tape, "theta", pred.theta, gt.theta)?;
    check(tape, "joints", pred.joints, gt.joints)?;
    let lb = residual_norm(tape, pred.beta, gt.beta, norm)?;
    let lt = residual_norm(tape, pred.theta, gt.theta, norm)?;
    let lj = residual_norm(tape, pred.joints, gt.joints, norm)?;
    let lb = tape.scale(lb, w.w1);
    let lt = tape.scale(lt, w.w2);
    let lj = tape.scale(lj, w.w3);
    let s = tape.add(lb, lt)?;
    Ok(tape.add(s, lj)?)
}

/// `w4 · mean((y_F − y_B)²)`.
pub fn loss_aug(tape: &mut Tape, y_f: Var, y_b: Var, w4: f64) -> Result<Var> {
    check(tape, "augmentation", y_f, y_b)?;
    let d = tape.sub(y_f, y_b)?;
    let sq = tape.square(d)?;
    let m = tape.mean(sq);
    Ok(tape.scale(m, w4))
}

/// The parameter loss plus, when present, the consistency loss.
pub fn loss_overall(tape: &mut Tape, tcmr: Var, aug: Option<Var>) -> Result<Var> {
    match aug {
        Some(a) => Ok(tape.add(tcmr, a)?),
        None => Ok(tcmr),
    }
}

/// Mean squared 2D distance between projected `joints: [N, K, 3]` and
/// `gt2d: [N, K, 2]` under cameras `[N, 3]`.
pub fn reprojection_loss(tape: &mut Tape, joints: Var, cam: Var, gt2d: Var) -> Result<Var> {
    let proj = project_weak_perspective_tape(tape, joints, cam)?;
    check(tape, "reprojection", proj, gt2d)?;
    let count = tape.shape(proj)[..2].iter().product::<usize>().max(1);
    let d = tape.sub(proj, gt2d)?;
    let sq = tape.square(d)?;
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / count as f64))
}
