//! Tape versions of the body functions so losses on joints reach the pose
//! and shape predictions.

use ddt_tensor::{Tape, Tensor, Var};

use super::ToyBody;
use crate::error::CoreError;
use crate::Result;

fn row_norm(tape: &mut Tape, v: Var, axis: usize) -> Result<Var> {
    let sq = tape.square(v)?;
    let s = tape.sum_axis(sq, axis, true)?;
    Ok(tape.sqrt(s)?)
}

fn component(tape: &mut Tape, v: Var, axis: usize, i: usize) -> Result<Var> {
    Ok(tape.narrow(v, axis, i, 1)?)
}

/// `[.., 6] -> [.., 3, 3]`, columns `e1, e2, e3` as in [`super::rot6d_to_rotmat`].
pub fn rot6d_to_rotmat_tape(tape: &mut Tape, r6: Var) -> Result<Var> {
    let shape = tape.shape(r6).to_vec();
    if shape.last() != Some(&6) {
        return Err(CoreError::Contract(format!("6D rotations need a trailing 6, got {shape:?}")));
    }
    let axis = shape.len() - 1;
    let a = tape.narrow(r6, axis, 0, 3)?;
    let b = tape.narrow(r6, axis, 3, 3)?;
    let na = row_norm(tape, a, axis)?;
    let e1 = tape.div(a, na)?;
    let proj = tape.mul(b, e1)?;
    let proj = tape.sum_axis(proj, axis, true)?;
    let along = tape.mul(proj, e1)?;
    let u = tape.sub(b, along)?;
    let nu = row_norm(tape, u, axis)?;
    let e2 = tape.div(u, nu)?;

    let [x1, y1, z1] = [0, 1, 2].map(|i| component(tape, e1, axis, i));
    let [x2, y2, z2] = [0, 1, 2].map(|i| component(tape, e2, axis, i));
    let (x1, y1, z1, x2, y2, z2) = (x1?, y1?, z1?, x2?, y2?, z2?);
    let mut cross = |p: Var, q: Var, r: Var, s: Var| -> Result<Var> {
        let l = tape.mul(p, q)?;
        let rr = tape.mul(r, s)?;
        Ok(tape.sub(l, rr)?)
    };
    let cx = cross(y1, z2, z1, y2)?;
    let cy = cross(z1, x2, x1, z2)?;
    let cz = cross(x1, y2, y1, x2)?;
    let e3 = tape.concat(&[cx, cy, cz], axis)?;

    let mut col_shape = shape.clone();
    col_shape[axis] = 3;
    col_shape.push(1);
    let cols: Vec<Var> = [e1, e2, e3]
        .into_iter()
        .map(|e| tape.reshape(e, &col_shape))
        .collect::<std::result::Result<_, _>>()?;
    Ok(tape.concat(&cols, axis + 1)?)
}

/// Posed joints `[N, K, 3]` and, optionally, vertices `[N, V, 3]` for a batch
/// of `N` poses `theta: [N, K, 6]` with bone lengths `lengths: [N, K-1]`.
pub fn body_forward(
    tape: &mut Tape,
    body: &ToyBody,
    theta: Var,
    lengths: Var,
    with_vertices: bool,
) -> Result<(Var, Option<Var>)> {
    let k = body.joint_count();
    let ts = tape.shape(theta).to_vec();
    if ts.len() != 3 || ts[1] != k || ts[2] != 6 {
        return Err(CoreError::Contract(format!("pose batch must be [N, {k}, 6], got {ts:?}")));
    }
    let n = ts[0];
    if tape.shape(lengths) != [n, k - 1] {
        return Err(CoreError::Contract(format!(
            "bone lengths must be [{n}, {}], got {:?}",
            k - 1,
            tape.shape(lengths)
        )));
    }
    let rot = rot6d_to_rotmat_tape(tape, theta)?;
    let mut joints: Vec<Var> = Vec::with_capacity(k);
    let mut frames: Vec<Var> = Vec::with_capacity(k);
    for j in 0..k {
        let local = tape.narrow(rot, 1, j, 1)?;
        let local = tape.reshape(local, &[n, 3, 3])?;
        match body.parent(j) {
            None => {
                joints.push(tape.constant(Tensor::zeros(&[n, 3, 1])));
                frames.push(local);
            }
            Some(p) => {
                let len = tape.narrow(lengths, 1, j - 1, 1)?;
                let len = tape.reshape(len, &[n, 1, 1])?;
                let d = body.direction(j);
                let dir = tape.constant(Tensor::new(&[3, 1], vec![d.x, d.y, d.z])?);
                let bone = tape.mul(len, dir)?;
                let step = tape.matmul(frames[p], bone)?;
                joints.push(tape.add(joints[p], step)?);
                let g = tape.matmul(frames[p], local)?;
                frames.push(g);
            }
        }
    }
    let rows: Vec<Var> = joints
        .iter()
        .map(|&j| tape.reshape(j, &[n, 1, 3]))
        .collect::<std::result::Result<_, _>>()?;
    let joint_var = tape.concat(&rows, 1)?;
    if !with_vertices {
        return Ok((joint_var, None));
    }
    let mut groups = Vec::new();
    for j in 0..k {
        let range = body.vertex_range(j);
        if range.is_empty() {
            continue;
        }
        let count = range.len();
        let mut offsets = vec![0.0; 3 * count];
        for (c, v) in range.enumerate() {
            let o = body.vertex_offset(v);
            for r in 0..3 {
                offsets[r * count + c] = o[r];
            }
        }
        let offsets = tape.constant(Tensor::new(&[3, count], offsets)?);
        let moved = tape.matmul(frames[j], offsets)?;
        let placed = tape.add(moved, joints[j])?;
        groups.push(tape.permute(placed, &[0, 2, 1])?);
    }
    let vertices = tape.concat(&groups, 1)?;
    Ok((joint_var, Some(vertices)))
}

/// Weak-perspective projection of `[N, P, 3]` points with per-pose cameras
/// `[N, 3]` laid out as `(s, t_x, t_y)`.
pub fn project_weak_perspective_tape(tape: &mut Tape, points: Var, cam: Var) -> Result<Var> {
    let ps = tape.shape(points).to_vec();
    if ps.len() != 3 || ps[2] != 3 || tape.shape(cam) != [ps[0], 3] {
        return Err(CoreError::Contract(format!(
            "projection needs [N, P, 3] points and [N, 3] cameras, got {ps:?} and {:?}",
            tape.shape(cam)
        )));
    }
    let n = ps[0];
    let xy = tape.narrow(points, 2, 0, 2)?;
    let s = tape.narrow(cam, 1, 0, 1)?;
    let s = tape.reshape(s, &[n, 1, 1])?;
    let t = tape.narrow(cam, 1, 1, 2)?;
    let t = tape.reshape(t, &[n, 1, 2])?;
    let scaled = tape.mul(xy, s)?;
    Ok(tape.add(scaled, t)?)
}
