//! Mesh regressor: mesh feature to pose, bone lengths and camera.

use ddt_nn::LinearLayer;
use ddt_tensor::{ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::body::IDENTITY_6D;
use crate::error::CoreError;
use crate::Result;

/// Regressor outputs for `N` flattened frames.
#[derive(Clone, Copy, Debug)]
pub struct MeshParams {
    /// `[N, K, 6]`
    pub theta: Var,
    /// `[N, K-1]`, mm
    pub beta: Var,
    /// `[N, 3]` as `(s, t_x, t_y)`, `s > 0`
    pub cam: Var,
}

/// Two linear layers with a GELU between them. Pose is predicted as an
/// offset from the identity rotation, bone lengths as a relative change to
/// the template, and the camera scale through `exp`.
#[derive(Clone, Debug)]
pub struct RegressorHead {
    hidden: LinearLayer,
    out: LinearLayer,
    pub joints: usize,
    template: Vec<f64>,
}

impl RegressorHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        template: &[f64],
        rng: &mut R,
    ) -> Self {
        let joints = template.len() + 1;
        RegressorHead {
            hidden: LinearLayer::new(store, &format!("{name}.hidden"), d_model, d_model, rng),
            out: LinearLayer::new(store, &format!("{name}.out"), d_model, Self::width(joints), rng),
            joints,
            template: template.to_vec(),
        }
    }

    pub fn width(joints: usize) -> usize {
        joints * 6 + joints - 1 + 3
    }

    /// `y: [..., d_model]`; leading axes are flattened into `N`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, y: Var) -> Result<MeshParams> {
        let shape = tape.shape(y).to_vec();
        let d = *shape.last().ok_or_else(|| CoreError::Contract("regressor input is a scalar".into()))?;
        let n = shape[..shape.len() - 1].iter().product();
        let k = self.joints;
        let y = tape.reshape(y, &[n, d])?;
        let h = self.hidden.forward(tape, store, y)?;
        let h = tape.gelu(h)?;
        let raw = self.out.forward(tape, store, h)?;

        let th = tape.narrow(raw, 1, 0, k * 6)?;
        let th = tape.reshape(th, &[n, k, 6])?;
        let ident = tape.constant(Tensor::new(&[6], IDENTITY_6D.to_vec())?);
        let theta = tape.add(th, ident)?;

        let rb = tape.narrow(raw, 1, k * 6, k - 1)?;
        let rb = tape.scale(rb, 0.1);
        let rb = tape.offset(rb, 1.0);
        let template = tape.constant(Tensor::new(&[k - 1], self.template.clone())?);
        let beta = tape.mul(rb, template)?;

        let rs = tape.narrow(raw, 1, k * 6 + k - 1, 1)?;
        let s = tape.exp(rs)?;
        let t = tape.narrow(raw, 1, k * 6 + k, 2)?;
        let cam = tape.concat(&[s, t], 1)?;
        Ok(MeshParams { theta, beta, cam })
    }
}
