//! Pose and mesh error metrics: MPJPE, PA-MPJPE, MPVPE and acceleration error.
//!
//! Sequences are `[T, P, 3]` tensors in millimeters. Root centering subtracts
//! joint 0 of each frame.

use std::fmt;
use std::str::FromStr;

use ddt_tensor::Tensor;
use nalgebra::{Matrix3, MatrixXx3, Vector3};

use crate::error::CoreError;
use crate::Result;

fn check_seq(name: &'static str, a: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    if a.shape() != b.shape() || a.rank() != 3 || a.shape()[2] != 3 {
        return Err(ddt_tensor::TensorError::Dimension {
            op: name,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }
        .into());
    }
    Ok((a.shape()[0], a.shape()[1]))
}

fn point(t: &Tensor, f: usize, p: usize) -> Vector3<f64> {
    let base = (f * t.shape()[1] + p) * 3;
    let d = &t.data()[base..base + 3];
    Vector3::new(d[0], d[1], d[2])
}

/// Per-frame mean distance, optionally after subtracting a per-frame root.
fn mean_distance(
    pred: &Tensor,
    gt: &Tensor,
    roots: Option<(&Tensor, &Tensor)>,
    subset: Option<&[usize]>,
) -> Result<f64> {
    let (t, p) = check_seq("position error", pred, gt)?;
    let all: Vec<usize>;
    let points = match subset {
        Some(s) => {
            if let Some(bad) = s.iter().find(|&&i| i >= p) {
                return Err(CoreError::Contract(format!("point index {bad} out of range {p}")));
            }
            s
        }
        None => {
            all = (0..p).collect();
            &all
        }
    };
    if points.is_empty() {
        return Err(CoreError::Contract("empty point subset".into()));
    }
    let mut total = 0.0;
    for f in 0..t {
        let (rp, rg) = match roots {
            Some((a, b)) => (point(a, f, 0), point(b, f, 0)),
            None => (Vector3::zeros(), Vector3::zeros()),
        };
        for &i in points {
            total += ((point(pred, f, i) - rp) - (point(gt, f, i) - rg)).norm();
        }
    }
    Ok(total / (t * points.len()) as f64)
}

/// Mean per-joint position error. With `root_center`, joint 0 is subtracted
/// from every joint of the same frame first.
pub fn mpjpe(pred: &Tensor, gt: &Tensor, root_center: bool) -> Result<f64> {
    mpjpe_subset(pred, gt, root_center, None)
}

/// [`mpjpe`] restricted to a joint subset.
pub fn mpjpe_subset(pred: &Tensor, gt: &Tensor, root_center: bool, joints: Option<&[usize]>) -> Result<f64> {
    let roots = root_center.then_some((pred, gt));
    mean_distance(pred, gt, roots, joints)
}

/// Mean per-vertex position error. `roots` carries the joint sequences whose
/// joint 0 is subtracted per frame.
pub fn mpvpe(pred_v: &Tensor, gt_v: &Tensor, roots: Option<(&Tensor, &Tensor)>) -> Result<f64> {
    if let Some((a, b)) = roots {
        check_seq("mpvpe roots", a, b)?;
        if a.shape()[0] != pred_v.shape().first().copied().unwrap_or(0) {
            return Err(CoreError::Contract("root sequence length differs from vertex sequence".into()));
        }
    }
    mean_distance(pred_v, gt_v, roots, None)
}

fn to_points(t: &Tensor, frame: usize) -> MatrixXx3<f64> {
    let p = t.shape()[1];
    MatrixXx3::from_fn(p, |r, c| t.data()[(frame * p + r) * 3 + c])
}

/// Similarity transform `s·R·x + c` that best maps `pred` onto `gt`
/// (`[K, 3]` each), applied to `pred`.
pub fn procrustes_align(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    if pred.rank() != 2 || pred.shape() != gt.shape() || pred.shape()[1] != 3 {
        return Err(ddt_tensor::TensorError::Dimension {
            op: "procrustes",
            lhs: pred.shape().to_vec(),
            rhs: gt.shape().to_vec(),
        }
        .into());
    }
    let k = pred.shape()[0];
    let a = pred.reshape(&[1, k, 3])?;
    let b = gt.reshape(&[1, k, 3])?;
    let aligned = align_points(&to_points(&a, 0), &to_points(&b, 0))?;
    Ok(Tensor::new(&[k, 3], aligned.transpose().iter().copied().collect())?)
}

fn align_points(x: &MatrixXx3<f64>, y: &MatrixXx3<f64>) -> Result<MatrixXx3<f64>> {
    let k = x.nrows();
    if k < 3 {
        return Err(CoreError::Singular(format!("procrustes needs 3 points, got {k}")));
    }
    let mu_x = x.row_mean();
    let mu_y = y.row_mean();
    let xc = MatrixXx3::from_fn(k, |r, c| x[(r, c)] - mu_x[c]);
    let yc = MatrixXx3::from_fn(k, |r, c| y[(r, c)] - mu_y[c]);
    let var_x = xc.norm_squared();
    let scale_ref = var_x.max(yc.norm_squared()).max(1.0);
    let cov: Matrix3<f64> = xc.transpose() * &yc;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let sv = svd.singular_values;
    // Rank below 2 means the cloud is collinear (or a point) and the rotation
    // about that line is unconstrained.
    if !(var_x > 1e-12 * scale_ref) || sv[1] <= 1e-10 * sv[0].max(f64::MIN_POSITIVE) {
        return Err(CoreError::Singular(format!(
            "degenerate point cloud (variance {var_x:e}, singular values {:?})",
            sv.as_slice()
        )));
    }
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    // x_c·R maps rows of x onto y with R = U·D·Vᵀ.
    let r = u * d * v_t;
    let scale = (sv[0] + sv[1] + d[(2, 2)] * sv[2]) / var_x;
    let mut out = &xc * r * scale;
    for mut row in out.row_iter_mut() {
        row += mu_y;
    }
    Ok(out)
}

/// Mean joint error after per-frame Procrustes alignment.
pub fn pa_mpjpe(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let (t, k) = check_seq("pa-mpjpe", pred, gt)?;
    let mut total = 0.0;
    for f in 0..t {
        let y = to_points(gt, f);
        let aligned = align_points(&to_points(pred, f), &y)?;
        total += (0..k).map(|r| (aligned.row(r) - y.row(r)).norm()).sum::<f64>();
    }
    Ok(total / (t * k) as f64)
}

/// Mean norm of the difference of second temporal differences, over interior
/// frames and all joints. `fps = Some(f)` scales to mm/s²; `None` reports
/// mm/frame².
pub fn accel_error(pred: &Tensor, gt: &Tensor, fps: Option<f64>) -> Result<f64> {
    let (t, k) = check_seq("acceleration error", pred, gt)?;
    if t < 3 {
        return Err(CoreError::Contract(format!("acceleration needs 3 frames, got {t}")));
    }
    let factor = fps.map_or(1.0, |f| f * f);
    let accel = |s: &Tensor, f: usize, j: usize| point(s, f + 1, j) - 2.0 * point(s, f, j) + point(s, f - 1, j);
    let mut total = 0.0;
    for f in 1..t - 1 {
        for j in 0..k {
            total += ((accel(pred, f, j) - accel(gt, f, j)) * factor).norm();
        }
    }
    Ok(total / ((t - 2) * k) as f64)
}

/// Aggregate metrics of one evaluation run. Errors in mm, acceleration in
/// mm/s² (or mm/frame² when fps scaling is off).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub mpvpe: f64,
    pub acc_err: f64,
    pub frames_evaluated: usize,
}

impl MetricsReport {
    pub const KEYS: [&'static str; 5] = ["mpjpe", "pa_mpjpe", "mpvpe", "acc_err", "frames_evaluated"];

    pub fn zero() -> Self {
        MetricsReport { mpjpe: 0.0, pa_mpjpe: 0.0, mpvpe: 0.0, acc_err: 0.0, frames_evaluated: 0 }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.mpjpe, self.pa_mpjpe, self.mpvpe, self.acc_err]
    }

    /// One `metric=value` per line. Floats use Rust's shortest round-trip form.
    pub fn to_kv(&self) -> String {
        self.to_string()
    }

    pub fn csv_header() -> &'static str {
        "mpjpe,pa_mpjpe,mpvpe,acc_err,frames_evaluated"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.mpjpe, self.pa_mpjpe, self.mpvpe, self.acc_err, self.frames_evaluated
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mpjpe={}", self.mpjpe)?;
        writeln!(f, "pa_mpjpe={}", self.pa_mpjpe)?;
        writeln!(f, "mpvpe={}", self.mpvpe)?;
        writeln!(f, "acc_err={}", self.acc_err)?;
        writeln!(f, "frames_evaluated={}", self.frames_evaluated)
    }
}

impl FromStr for MetricsReport {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        let mut r = MetricsReport::zero();
        let mut seen = [false; 5];
        for line in s.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Format(format!("report line without '=': {line}")))?;
            let bad = |e: &dyn fmt::Display| CoreError::Format(format!("{k}: {e}"));
            let idx = Self::KEYS.iter().position(|key| *key == k.trim());
            match idx {
                Some(4) => r.frames_evaluated = v.trim().parse().map_err(|e| bad(&e))?,
                Some(i) => {
                    let x: f64 = v.trim().parse().map_err(|e| bad(&e))?;
                    match i {
                        0 => r.mpjpe = x,
                        1 => r.pa_mpjpe = x,
                        2 => r.mpvpe = x,
                        _ => r.acc_err = x,
                    }
                }
                None => continue,
            }
            seen[idx.expect("matched")] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(CoreError::Format(format!("report lacks {}", Self::KEYS[i])));
        }
        Ok(r)
    }
}
