//! Rotation algebra for joint poses: axis-angle, rotation matrices, and the
//! continuous 6D representation (first two matrix columns).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum ∞-norm deviation of `R·Rᵀ` from identity (and of `det R` from 1).
pub const ROTATION_TOLERANCE: f64 = 1e-6;

const DEGENERATE_NORM: f64 = 1e-8;

/// Axis-angle rotation: direction is the axis, magnitude the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    /// Equivalent axis-angle with magnitude in `[0, π]`.
    pub fn canonical(&self) -> Result<Self> {
        let angle = self.angle();
        if !angle.is_finite() {
            return Err(Error::InvalidArgument("axis-angle is not finite".into()));
        }
        if angle == 0.0 {
            return Ok(*self);
        }
        let axis = self.0 / angle;
        let wrapped = (angle + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)
            - std::f64::consts::PI;
        Ok(if wrapped < 0.0 {
            Self(-axis * -wrapped)
        } else {
            Self(axis * wrapped)
        })
    }
}

/// A validated element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormality and unit determinant within [`ROTATION_TOLERANCE`].
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("rotation matrix is not finite".into()));
        }
        let dev = (m * m.transpose() - Matrix3::identity()).amax();
        if dev > ROTATION_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "matrix is not orthonormal (deviation {dev:.3e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "matrix determinant {det} is not 1"
            )));
        }
        Ok(Self(m))
    }

    #[cfg(test)]
    pub(crate) fn new_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }
}

/// First two columns of a rotation matrix, column-major: `(c0x, c0y, c0z, c1x, c1y, c1z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rep6D(pub [f64; 6]);

impl Rep6D {
    pub fn from_f32(v: &[f32]) -> Self {
        let mut out = [0.0; 6];
        for (o, x) in out.iter_mut().zip(v) {
            *o = f64::from(*x);
        }
        Self(out)
    }

    pub fn to_f32(&self) -> [f32; 6] {
        self.0.map(|v| v as f32)
    }
}

/// Rodrigues' formula.
pub fn axis_angle_to_matrix(a: &AxisAngle) -> Result<RotationMatrix> {
    if a.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("axis-angle is not finite".into()));
    }
    let theta = a.angle();
    if theta == 0.0 {
        return Ok(RotationMatrix::identity());
    }
    let k = a.0 / theta;
    let skew = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    let m = Matrix3::identity() + skew * theta.sin() + skew * skew * (1.0 - theta.cos());
    Ok(RotationMatrix(m))
}

pub fn matrix_to_6d(r: &RotationMatrix) -> Result<Rep6D> {
    let r = RotationMatrix::new(r.0)?;
    let m = r.0;
    Ok(Rep6D([
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]))
}

/// Gram–Schmidt recovery of a right-handed orthonormal frame.
pub fn six_d_to_matrix(v: &Rep6D) -> Result<RotationMatrix> {
    if v.0.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("6D vector is not finite".into()));
    }
    let a = Vector3::new(v.0[0], v.0[1], v.0[2]);
    let b = Vector3::new(v.0[3], v.0[4], v.0[5]);
    let na = a.norm();
    if na <= DEGENERATE_NORM {
        return Err(Error::Degenerate6d("first column has near-zero norm".into()));
    }
    let c0 = a / na;
    let ortho = b - c0 * c0.dot(&b);
    let no = ortho.norm();
    if no <= DEGENERATE_NORM {
        return Err(Error::Degenerate6d(
            "second column is parallel to the first".into(),
        ));
    }
    let c1 = ortho / no;
    let c2 = c0.cross(&c1);
    Ok(RotationMatrix(Matrix3::from_columns(&[c0, c1, c2])))
}

/// Geodesic distance on SO(3) in radians, in `[0, π]`.
///
/// Computed from the relative rotation `R1ᵀR2` as `atan2(sin θ, cos θ)` where
/// `cos θ = (tr − 1)/2` (clamped) and `sin θ` comes from the skew part. This
/// agrees with `arccos((tr − 1)/2)` but stays accurate near 0 and π and is
/// exactly zero for identical inputs.
pub fn geodesic_angle(r1: &RotationMatrix, r2: &RotationMatrix) -> f64 {
    let rel = r1.0.transpose() * r2.0;
    let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sx = rel[(2, 1)] - rel[(1, 2)];
    let sy = rel[(0, 2)] - rel[(2, 0)];
    let sz = rel[(1, 0)] - rel[(0, 1)];
    let sin = (0.5 * (sx * sx + sy * sy + sz * sz).sqrt()).clamp(0.0, 1.0);
    sin.atan2(cos)
}

/// Time-major sequence of per-joint 6D rotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence {
    frames: usize,
    joints: usize,
    fps: f64,
    /// Row-major `(frames, joints, 6)`.
    data: Vec<f32>,
}

impl PoseSequence {
    pub fn new(frames: usize, joints: usize, fps: f64, data: Vec<f32>) -> Result<Self> {
        if joints == 0 {
            return Err(Error::InvalidArgument("pose sequence needs at least one joint".into()));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidArgument(format!("fps must be positive, got {fps}")));
        }
        if data.len() != frames * joints * 6 {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for ({frames}, {joints}, 6), got {}",
                frames * joints * 6,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("pose data is not finite".into()));
        }
        Ok(Self { frames, joints, fps, data })
    }

    /// Sequence with every joint at the identity rotation.
    pub fn rest(frames: usize, joints: usize, fps: f64) -> Result<Self> {
        let mut data = Vec::with_capacity(frames * joints * 6);
        for _ in 0..frames * joints {
            data.extend_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        }
        Self::new(frames, joints, fps, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn frame_width(&self) -> usize {
        self.joints * 6
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let w = self.frame_width();
        &self.data[t * w..(t + 1) * w]
    }

    pub fn joint(&self, t: usize, j: usize) -> Rep6D {
        let off = (t * self.joints + j) * 6;
        Rep6D::from_f32(&self.data[off..off + 6])
    }

    /// Frames `[start, end)`; `end` is clamped to the sequence length.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        let end = end.min(self.frames);
        let start = start.min(end);
        let w = self.frame_width();
        Self::new(
            end - start,
            self.joints,
            self.fps,
            self.data[start * w..end * w].to_vec(),
        )
    }

    /// Right-pads by repeating the last frame, or crops, to exactly `frames`.
    pub fn fit_length(&self, frames: usize) -> Result<Self> {
        if frames <= self.frames {
            return self.slice(0, frames);
        }
        if self.frames == 0 {
            return Self::rest(frames, self.joints, self.fps);
        }
        let mut data = self.data.clone();
        let last = self.frame(self.frames - 1).to_vec();
        for _ in self.frames..frames {
            data.extend_from_slice(&last);
        }
        Self::new(frames, self.joints, self.fps, data)
    }

    pub fn concat(parts: &[&PoseSequence]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let mut data = Vec::new();
        let mut frames = 0;
        for p in parts {
            if p.joints != first.joints || p.fps != first.fps {
                return Err(Error::ShapeMismatch(
                    "concatenated sequences differ in joints or fps".into(),
                ));
            }
            data.extend_from_slice(&p.data);
            frames += p.frames;
        }
        Self::new(frames, first.joints, first.fps, data)
    }
}

/// Mean geodesic angle over all `T×J` joint pairs.
pub fn pose_angle_error(pred: &PoseSequence, reference: &PoseSequence) -> Result<f64> {
    if pred.frames != reference.frames
        || pred.joints != reference.joints
        || pred.fps != reference.fps
    {
        return Err(Error::ShapeMismatch(format!(
            "pred ({}, {}, {} fps) vs reference ({}, {}, {} fps)",
            pred.frames, pred.joints, pred.fps, reference.frames, reference.joints, reference.fps
        )));
    }
    let n = pred.frames * pred.joints;
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for t in 0..pred.frames {
        for j in 0..pred.joints {
            let a = six_d_to_matrix(&pred.joint(t, j))?;
            let b = six_d_to_matrix(&reference.joint(t, j))?;
            total += geodesic_angle(&a, &b);
        }
    }
    Ok(total / n as f64)
}
