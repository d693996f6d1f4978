//! Six-joint serial arm in standard Denavit–Hartenberg form.
//!
//! Link `i` transform: `Rz(θᵢ + offsetᵢ) · Tz(dᵢ) · Tx(aᵢ) · Rx(αᵢ)`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Matrix4, Matrix6, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::SortlineError;

pub const IK_DAMPING: f64 = 0.05;
pub const IK_MAX_ITERATIONS: usize = 500;
pub const IK_POSITION_TOL: f64 = 1e-6;
pub const IK_ORIENTATION_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DhRow {
    /// m.
    pub a: f64,
    /// rad.
    pub alpha: f64,
    /// m.
    pub d: f64,
    /// rad.
    pub theta_offset: f64,
}

impl DhRow {
    const fn new(a: f64, alpha: f64, d: f64) -> Self {
        Self { a, alpha, d, theta_offset: 0.0 }
    }

    fn transform(&self, theta: f64) -> Matrix4<f64> {
        let (st, ct) = (theta + self.theta_offset).sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        Matrix4::new(
            ct, -st * ca, st * sa, self.a * ct,
            st, ct * ca, -ct * sa, self.a * st,
            0.0, sa, ca, self.d,
            0.0, 0.0, 0.0, 1.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmModel {
    pub dh: [DhRow; 6],
    /// `[min, max]` per joint, rad.
    pub joint_limits: [[f64; 2]; 6],
    /// rad/s.
    pub max_joint_speed: f64,
}

impl Default for ArmModel {
    /// A synthetic desk-scale 6R arm with an offset wrist, about 0.5 m of
    /// total link length.
    fn default() -> Self {
        let lim = 165f64.to_radians();
        let wrist = 175f64.to_radians();
        Self {
            dh: [
                DhRow::new(0.0, FRAC_PI_2, 0.1316),
                DhRow::new(-0.1104, 0.0, 0.0),
                DhRow::new(-0.0960, 0.0, 0.0),
                DhRow::new(0.0, FRAC_PI_2, 0.0634),
                DhRow::new(0.0, -FRAC_PI_2, 0.0755),
                DhRow::new(0.0, 0.0, 0.0456),
            ],
            joint_limits: [[-lim, lim], [-lim, lim], [-lim, lim], [-lim, lim], [-lim, lim], [-wrist, wrist]],
            max_joint_speed: 2.0,
        }
    }
}

impl ArmModel {
    pub fn validate(&self) -> Result<(), SortlineError> {
        for (i, row) in self.dh.iter().enumerate() {
            if ![row.a, row.alpha, row.d, row.theta_offset].iter().all(|v| v.is_finite()) {
                return Err(SortlineError::Config(format!("arm.dh[{i}] has non-finite entries")));
            }
        }
        for (i, [lo, hi]) in self.joint_limits.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(SortlineError::Config(format!(
                    "arm.joint_limits[{i}] must satisfy min < max, got [{lo}, {hi}]"
                )));
            }
        }
        if !(self.max_joint_speed.is_finite() && self.max_joint_speed > 0.0) {
            return Err(SortlineError::Config("arm.max_joint_speed must be > 0".into()));
        }
        Ok(())
    }

    /// Upper bound on the distance from the base origin to the tool.
    pub fn reach(&self) -> f64 {
        self.dh.iter().map(|r| r.a.abs() + r.d.abs()).sum()
    }

    pub fn within_limits(&self, q: &[f64; 6]) -> bool {
        q.iter().zip(&self.joint_limits).all(|(v, [lo, hi])| (lo..=hi).contains(&v))
    }

    pub fn project(&self, q: &mut [f64; 6]) {
        for (v, [lo, hi]) in q.iter_mut().zip(&self.joint_limits) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn midpoint(&self) -> [f64; 6] {
        self.joint_limits.map(|[lo, hi]| 0.5 * (lo + hi))
    }

    fn check_limits(&self, q: &[f64; 6]) -> Result<(), SortlineError> {
        for (joint, (&value, &[min, max])) in q.iter().zip(&self.joint_limits).enumerate() {
            if !(min..=max).contains(&value) {
                return Err(SortlineError::JointLimit { joint, value, min, max });
            }
        }
        Ok(())
    }

    /// Frames `T₀ … T₆`, with `T₀` the identity.
    fn frames(&self, q: &[f64; 6]) -> [Matrix4<f64>; 7] {
        let mut out = [Matrix4::identity(); 7];
        for i in 0..6 {
            out[i + 1] = out[i] * self.dh[i].transform(q[i]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// m.
    pub position: [f64; 3],
    /// Row-major rotation matrix.
    pub rotation: [[f64; 3]; 3],
}

impl Pose {
    fn from_transform(t: &Matrix4<f64>) -> Self {
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = t[(i, j)];
            }
        }
        Self {
            position: [t[(0, 3)], t[(1, 3)], t[(2, 3)]],
            rotation,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rotation[i][j])
    }

    pub fn position_vector(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    /// Position error (m) and rotation-vector error (rad) towards `target`,
    /// both in the base frame.
    fn error_to(&self, target: &Pose) -> (Vector3<f64>, Vector3<f64>) {
        let dp = target.position_vector() - self.position_vector();
        let r = target.rotation_matrix() * self.rotation_matrix().transpose();
        (dp, rotation_vector(&r))
    }
}

/// Axis times angle of a rotation matrix. Uses the skew part with `atan2`,
/// which stays accurate for small angles where `acos` of the trace does not.
fn rotation_vector(r: &Matrix3<f64>) -> Vector3<f64> {
    let v = 0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = v.norm();
    let c = 0.5 * (r.trace() - 1.0);
    if s < 1e-6 && c < 0.0 {
        // Near a half turn the skew part vanishes.
        return Rotation3::from_matrix_unchecked(*r).scaled_axis();
    }
    let angle = s.atan2(c);
    if s == 0.0 {
        v
    } else {
        v * (angle / s)
    }
}

pub fn forward_kinematics(arm: &ArmModel, q: &[f64; 6]) -> Result<Pose, SortlineError> {
    arm.check_limits(q)?;
    Ok(Pose::from_transform(&arm.frames(q)[6]))
}

/// Geometric Jacobian in the base frame: rows 0–2 linear, 3–5 angular.
pub fn jacobian(arm: &ArmModel, q: &[f64; 6]) -> Matrix6<f64> {
    let f = arm.frames(q);
    let p_e = f[6].fixed_view::<3, 1>(0, 3).into_owned();
    let mut j = Matrix6::zeros();
    for i in 0..6 {
        let z = f[i].fixed_view::<3, 1>(0, 2).into_owned();
        let p = f[i].fixed_view::<3, 1>(0, 3).into_owned();
        let lin = z.cross(&(p_e - p));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
    }
    j
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkSolution {
    pub joints: [f64; 6],
    pub iterations: usize,
    pub position_error: f64,
    pub orientation_error: f64,
}

/// Damped least squares from `seed`, projecting onto the joint limits after
/// every update.
///
/// The damping is `IK_DAMPING · min(1, ‖e‖)` for the stacked residual
/// `e = [Δp (m); Δω (rad)]`: full damping far from the target, vanishing
/// near it. A fixed 0.05 on a desk-scale arm stalls whenever a singular
/// value of the Jacobian falls below it.
pub fn inverse_kinematics(arm: &ArmModel, target: &Pose, seed: &[f64; 6]) -> Result<IkSolution, SortlineError> {
    let distance = target.position_vector().norm();
    let reach = arm.reach();
    if !(distance <= reach) {
        return Err(SortlineError::Unreachable { distance, reach });
    }
    let mut q = *seed;
    arm.project(&mut q);
    let mut best = (f64::INFINITY, f64::INFINITY, q);
    for iteration in 0..=IK_MAX_ITERATIONS {
        let pose = Pose::from_transform(&arm.frames(&q)[6]);
        let (dp, dr) = pose.error_to(target);
        let (pe, oe) = (dp.norm(), dr.norm());
        if pe < IK_POSITION_TOL && oe < IK_ORIENTATION_TOL {
            return Ok(IkSolution {
                joints: q,
                iterations: iteration,
                position_error: pe,
                orientation_error: oe,
            });
        }
        if pe + oe < best.0 + best.1 {
            best = (pe, oe, q);
        }
        if iteration == IK_MAX_ITERATIONS {
            break;
        }
        let j = jacobian(arm, &q);
        let e = Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z);
        let lambda = IK_DAMPING * e.norm().min(1.0);
        let Some(inv) = (j * j.transpose() + Matrix6::identity() * (lambda * lambda)).try_inverse() else {
            break;
        };
        let dq = j.transpose() * inv * e;
        for (v, d) in q.iter_mut().zip(dq.iter()) {
            *v += d;
        }
        arm.project(&mut q);
    }
    Err(SortlineError::NoConvergence {
        iterations: IK_MAX_ITERATIONS,
        position_error: best.0,
        orientation_error: best.1,
        best: best.2,
    })
}

/// Slowest joint sets the move time, s.
pub fn move_time(arm: &ArmModel, from: &[f64; 6], to: &[f64; 6]) -> f64 {
    from.iter()
        .zip(to)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / arm.max_joint_speed
}
