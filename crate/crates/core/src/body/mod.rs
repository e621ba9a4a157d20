//! Toy articulated body: a branching kinematic tree with rigidly attached
//! surface points, driven by per-joint 6D rotations.
//!
//! Coordinates are millimeters. Joint 0 is the root and sits at the origin.

mod dataset;
mod differentiable;
mod motion;

pub use dataset::{dataset_load, dataset_save, read_dataset, write_dataset, DatasetHeader, DATASET_MAGIC, HEADER_BYTES};
pub use differentiable::{body_forward, project_weak_perspective_tape, rot6d_to_rotmat_tape};
pub use motion::{generate_dataset, generate_sequence, MotionSequence, SequenceConfig};

use nalgebra::{Matrix3, Vector3};

use crate::error::CoreError;
use crate::Result;

/// The 6D encoding of the identity rotation.
pub const IDENTITY_6D: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

const MAIN_BONE_MM: f64 = 150.0;
const BRANCH_BONE_MM: f64 = 120.0;
const SURFACE_RADIUS_MM: f64 = 40.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyBody {
    parents: Vec<Option<usize>>,
    /// Unit bone axis in the parent frame, indexed by child joint.
    directions: Vec<Vector3<f64>>,
    /// Length of the bone ending at joint `k` is stored at `k - 1`.
    pub bone_lengths: Vec<f64>,
    vertex_joint: Vec<usize>,
    vertex_offsets: Vec<Vector3<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

impl ToyBody {
    /// General constructor. Parents must precede children; the root has no parent.
    pub fn new(
        parents: Vec<Option<usize>>,
        directions: Vec<Vector3<f64>>,
        bone_lengths: Vec<f64>,
        vertex_joint: Vec<usize>,
        vertex_offsets: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        let k = parents.len();
        if k < 2 || parents[0].is_some() {
            return Err(CoreError::Config("a body needs a root and at least one bone".into()));
        }
        for (j, p) in parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => return Err(CoreError::Config(format!("joint {j} has no earlier parent"))),
            }
        }
        if directions.len() != k || bone_lengths.len() != k - 1 {
            return Err(CoreError::Config(format!(
                "expected {k} directions and {} bone lengths",
                k - 1
            )));
        }
        if let Some(l) = bone_lengths.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(CoreError::Config(format!("bone length {l} must be positive")));
        }
        if vertex_joint.is_empty()
            || vertex_joint.len() != vertex_offsets.len()
            || vertex_joint.windows(2).any(|w| w[0] > w[1])
            || vertex_joint.iter().any(|j| *j >= k)
        {
            return Err(CoreError::Config(
                "vertices must be grouped by joint in ascending order".into(),
            ));
        }
        if vertex_offsets.iter().any(|o| !o.iter().all(|v| v.is_finite())) {
            return Err(CoreError::Config("vertex offsets must be finite".into()));
        }
        let directions = directions.into_iter().map(|d| d.normalize()).collect();
        Ok(ToyBody { parents, directions, bone_lengths, vertex_joint, vertex_offsets })
    }

    /// Serial chain with every bone along `axis` and one zero-offset vertex per joint.
    pub fn chain(lengths: &[f64], axis: Vector3<f64>) -> Result<Self> {
        let k = lengths.len() + 1;
        ToyBody::new(
            (0..k).map(|j| j.checked_sub(1)).collect(),
            vec![axis; k],
            lengths.to_vec(),
            (0..k).collect(),
            vec![Vector3::zeros(); k],
        )
    }

    /// The default toy skeleton: a main chain along +y with a branch along +x
    /// hanging off its middle joint, and `vertices` surface points spread
    /// around the joints.
    pub fn standard(joints: usize, vertices: usize) -> Result<Self> {
        if joints < 2 || vertices == 0 {
            return Err(CoreError::Config(format!(
                "standard body needs at least 2 joints and 1 vertex, got {joints} and {vertices}"
            )));
        }
        let branch = (joints - 2) / 2;
        let main = joints - branch;
        let mut parents = vec![None];
        let mut directions = vec![Vector3::y()];
        let mut lengths = Vec::new();
        for j in 1..main {
            parents.push(Some(j - 1));
            directions.push(Vector3::y());
            lengths.push(MAIN_BONE_MM);
        }
        for b in 0..branch {
            parents.push(Some(if b == 0 { main / 2 } else { main + b - 1 }));
            directions.push(Vector3::x());
            lengths.push(BRANCH_BONE_MM);
        }
        let vertex_joint: Vec<usize> = (0..vertices).map(|v| v * joints / vertices).collect();
        let vertex_offsets = vertex_joint
            .iter()
            .enumerate()
            .map(|(v, &j)| {
                let first = vertex_joint.iter().position(|&x| x == j).unwrap_or(v);
                let count = vertex_joint.iter().filter(|&&x| x == j).count();
                let i = v - first;
                let phi = std::f64::consts::TAU * i as f64 / count as f64 + j as f64;
                let lift = if i % 2 == 0 { 0.5 } else { -0.5 };
                SURFACE_RADIUS_MM * Vector3::new(phi.cos(), lift, phi.sin())
            })
            .collect();
        ToyBody::new(parents, directions, lengths, vertex_joint, vertex_offsets)
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_joint.len()
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn direction(&self, joint: usize) -> Vector3<f64> {
        self.directions[joint]
    }

    pub fn vertex_joint(&self, vertex: usize) -> usize {
        self.vertex_joint[vertex]
    }

    pub fn vertex_offset(&self, vertex: usize) -> Vector3<f64> {
        self.vertex_offsets[vertex]
    }

    /// Same topology and surface with different bone lengths.
    pub fn with_lengths(&self, lengths: &[f64]) -> Result<Self> {
        ToyBody::new(
            self.parents.clone(),
            self.directions.clone(),
            lengths.to_vec(),
            self.vertex_joint.clone(),
            self.vertex_offsets.clone(),
        )
    }

    /// Vertex indices attached to `joint`, as a contiguous range.
    pub(crate) fn vertex_range(&self, joint: usize) -> std::ops::Range<usize> {
        let start = self.vertex_joint.partition_point(|&j| j < joint);
        let end = self.vertex_joint.partition_point(|&j| j <= joint);
        start..end
    }
}

/// Gram-Schmidt on the two 3-vectors of a 6D rotation; the results are the
/// columns of a right-handed rotation matrix.
pub fn rot6d_to_rotmat(r6: &[f64]) -> Result<Matrix3<f64>> {
    if r6.len() != 6 {
        return Err(CoreError::Contract(format!("6D rotation has {} entries", r6.len())));
    }
    let a = Vector3::new(r6[0], r6[1], r6[2]);
    let b = Vector3::new(r6[3], r6[4], r6[5]);
    let na = a.norm();
    if !(na > 1e-8) {
        return Err(CoreError::Singular(format!("first 6D column has norm {na:e}")));
    }
    let e1 = a / na;
    let u = b - b.dot(&e1) * e1;
    let nu = u.norm();
    if !(nu > 1e-8) {
        return Err(CoreError::Singular(format!(
            "second 6D column is parallel to the first (orthogonal residual {nu:e})"
        )));
    }
    let e2 = u / nu;
    Ok(Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]))
}

/// First two columns of `r`.
pub fn rotmat_to_rot6d(r: &Matrix3<f64>) -> [f64; 6] {
    [r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 1)], r[(1, 1)], r[(2, 1)]]
}

/// Joint positions and cumulative rotations for one pose.
#[derive(Clone, Debug)]
pub struct Posed {
    pub joints: Vec<Vector3<f64>>,
    pub rotations: Vec<Matrix3<f64>>,
}

/// `theta` holds `K * 6` numbers, one 6D rotation per joint.
pub fn pose(body: &ToyBody, theta: &[f64]) -> Result<Posed> {
    let k = body.joint_count();
    if theta.len() != k * 6 {
        return Err(CoreError::Contract(format!("pose has {} values, body needs {}", theta.len(), k * 6)));
    }
    let mut joints = Vec::with_capacity(k);
    let mut rotations: Vec<Matrix3<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let local = rot6d_to_rotmat(&theta[j * 6..j * 6 + 6])?;
        match body.parent(j) {
            None => {
                joints.push(Vector3::zeros());
                rotations.push(local);
            }
            Some(p) => {
                let g = rotations[p];
                joints.push(joints[p] + g * (body.bone_lengths[j - 1] * body.direction(j)));
                rotations.push(g * local);
            }
        }
    }
    Ok(Posed { joints, rotations })
}

/// Joint positions, one row per joint.
pub fn forward_kinematics(body: &ToyBody, theta: &[f64]) -> Result<Vec<Vector3<f64>>> {
    Ok(pose(body, theta)?.joints)
}

/// Rigid skinning: each vertex rides on its joint's frame.
pub fn skin_vertices(body: &ToyBody, theta: &[f64]) -> Result<Vec<Vector3<f64>>> {
    let posed = pose(body, theta)?;
    Ok(skin_posed(body, &posed))
}

pub(crate) fn skin_posed(body: &ToyBody, posed: &Posed) -> Vec<Vector3<f64>> {
    (0..body.vertex_count())
        .map(|v| {
            let j = body.vertex_joint(v);
            posed.joints[j] + posed.rotations[j] * body.vertex_offset(v)
        })
        .collect()
}

/// `(u, v) = s·(x, y) + (t_x, t_y)`; depth is dropped.
pub fn project_weak_perspective(points: &[Vector3<f64>], cam: Camera) -> Result<Vec<[f64; 2]>> {
    if !(cam.scale > 0.0) {
        return Err(CoreError::Contract(format!("camera scale {} must be positive", cam.scale)));
    }
    Ok(points
        .iter()
        .map(|p| [cam.scale * p.x + cam.tx, cam.scale * p.y + cam.ty])
        .collect())
}
