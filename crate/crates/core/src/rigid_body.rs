//! Single-rigid-body model of the quadruped trunk.
//!
//! State layout is `[p, θ, v, ω]`: inertial position, ZYX Euler angles
//! (roll, pitch, yaw), inertial linear velocity and body-frame angular rate.
//! Foot forces are expressed in the body frame; the linear equation rotates
//! their sum by `R(θ)`, the rotational equation takes `r_i × f_i` in the body
//! frame. Unknown residual forces act in the inertial frame and residual
//! torques in the body frame.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3, Vector6};

use crate::error::{Error, Result};

pub type StateVector = SVector<f64, 12>;
pub type InputVector = SVector<f64, 12>;
pub type StateMatrix = SMatrix<f64, 12, 12>;
pub type WrenchMap = SMatrix<f64, 6, 12>;

pub const NUM_LEGS: usize = 4;
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Distance from ±π/2 pitch inside which the Euler-rate map is refused.
pub const GIMBAL_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    pub p: Vector3<f64>,
    pub theta: Vector3<f64>,
    pub v: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl BodyState {
    pub fn zeros() -> Self {
        Self {
            p: Vector3::zeros(),
            theta: Vector3::zeros(),
            v: Vector3::zeros(),
            omega: Vector3::zeros(),
        }
    }

    pub fn at_position(p: Vector3<f64>) -> Self {
        Self { p, ..Self::zeros() }
    }

    pub fn to_vector(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.p);
        x.fixed_rows_mut::<3>(3).copy_from(&self.theta);
        x.fixed_rows_mut::<3>(6).copy_from(&self.v);
        x.fixed_rows_mut::<3>(9).copy_from(&self.omega);
        x
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self {
            p: x.fixed_rows::<3>(0).into_owned(),
            theta: x.fixed_rows::<3>(3).into_owned(),
            v: x.fixed_rows::<3>(6).into_owned(),
            omega: x.fixed_rows::<3>(9).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }

    /// Velocity and angular rate stacked, the rows that carry the residual.
    pub fn rates(&self) -> Vector6<f64> {
        let mut r = Vector6::zeros();
        r.fixed_rows_mut::<3>(0).copy_from(&self.v);
        r.fixed_rows_mut::<3>(3).copy_from(&self.omega);
        r
    }
}

/// Mass properties of the trunk. The inertia inverse is cached at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyParams {
    mass: f64,
    inertia: Matrix3<f64>,
    inertia_inv: Matrix3<f64>,
    gravity: Vector3<f64>,
}

impl BodyParams {
    pub fn new(mass: f64, inertia: Matrix3<f64>, gravity: Vector3<f64>) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidConfig(format!("mass must be positive, got {mass}")));
        }
        if !inertia.iter().chain(gravity.iter()).all(|c| c.is_finite()) {
            return Err(Error::NonFinite("body parameters"));
        }
        if (inertia - inertia.transpose()).abs().max() > 1e-9 {
            return Err(Error::InvalidConfig("inertia must be symmetric".into()));
        }
        if inertia.symmetric_eigenvalues().min() <= 1e-9 {
            return Err(Error::InvalidConfig("inertia must be positive definite".into()));
        }
        let inertia_inv = inertia
            .try_inverse()
            .ok_or_else(|| Error::InvalidConfig("inertia is not invertible".into()))?;
        Ok(Self {
            mass,
            inertia,
            inertia_inv,
            gravity,
        })
    }

    /// Trunk mass and inertia close to a 15 kg Go2-class quadruped.
    pub fn quadruped_default() -> Self {
        Self::new(
            15.0,
            Matrix3::from_diagonal(&Vector3::new(0.07, 0.26, 0.24)),
            Vector3::new(0.0, 0.0, -STANDARD_GRAVITY),
        )
        .expect("default parameters are valid")
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn inertia(&self) -> &Matrix3<f64> {
        &self.inertia
    }

    pub fn inertia_inv(&self) -> &Matrix3<f64> {
        &self.inertia_inv
    }

    pub fn gravity(&self) -> &Vector3<f64> {
        &self.gravity
    }

    /// Parameters with a rigidly attached payload at the center of mass.
    pub fn with_payload(&self, payload_mass: f64, payload_inertia: &Matrix3<f64>) -> Result<Self> {
        Self::new(self.mass + payload_mass, self.inertia + payload_inertia, self.gravity)
    }
}

/// Foot positions relative to the center of mass, expressed in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StanceGeometry {
    pub foot_positions_body: [Vector3<f64>; NUM_LEGS],
}

impl StanceGeometry {
    pub fn new(foot_positions_body: [Vector3<f64>; NUM_LEGS]) -> Self {
        Self { foot_positions_body }
    }

    /// Body-frame lever arms for feet planted at the given inertial positions.
    pub fn from_world(x: &BodyState, feet_world: &[Vector3<f64>; NUM_LEGS]) -> Self {
        let rt = rotation_matrix(&x.theta).transpose();
        Self {
            foot_positions_body: feet_world.map(|f| rt * (f - x.p)),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.foot_positions_body.iter().all(|r| r.iter().all(|c| c.is_finite()))
    }
}

/// Stacked ground-reaction forces, body frame, one 3-vector per leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootForces {
    pub forces: [Vector3<f64>; NUM_LEGS],
}

impl FootForces {
    pub fn zeros() -> Self {
        Self {
            forces: [Vector3::zeros(); NUM_LEGS],
        }
    }

    pub fn to_vector(&self) -> InputVector {
        let mut u = InputVector::zeros();
        for (leg, f) in self.forces.iter().enumerate() {
            u.fixed_rows_mut::<3>(3 * leg).copy_from(f);
        }
        u
    }

    pub fn from_vector(u: &InputVector) -> Self {
        Self {
            forces: std::array::from_fn(|leg| u.fixed_rows::<3>(3 * leg).into_owned()),
        }
    }

    pub fn total(&self) -> Vector3<f64> {
        self.forces.iter().sum()
    }

    /// Equal vertical split of the weight over the legs flagged in stance.
    pub fn gravity_compensation(params: &BodyParams, stance: &[bool; NUM_LEGS]) -> Self {
        let n = stance.iter().filter(|s| **s).count();
        let mut out = Self::zeros();
        if n == 0 {
            return out;
        }
        let fz = params.mass() * params.gravity().norm() / n as f64;
        for leg in 0..NUM_LEGS {
            if stance[leg] {
                out.forces[leg] = Vector3::new(0.0, 0.0, fz);
            }
        }
        out
    }
}

/// Unknown wrench: inertial-frame force and body-frame torque.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualWrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl ResidualWrench {
    pub fn zeros() -> Self {
        Self {
            force: Vector3::zeros(),
            torque: Vector3::zeros(),
        }
    }

    pub fn new(force: Vector3<f64>, torque: Vector3<f64>) -> Self {
        Self { force, torque }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut w = Vector6::zeros();
        w.fixed_rows_mut::<3>(0).copy_from(&self.force);
        w.fixed_rows_mut::<3>(3).copy_from(&self.torque);
        w
    }

    pub fn from_vector(w: &Vector6<f64>) -> Self {
        Self {
            force: w.fixed_rows::<3>(0).into_owned(),
            torque: w.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }
}

impl std::ops::Add for ResidualWrench {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.force + rhs.force, self.torque + rhs.torque)
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Body-to-inertial rotation `R = Rz(yaw) · Ry(pitch) · Rx(roll)`.
pub fn rotation_matrix(theta: &Vector3<f64>) -> Matrix3<f64> {
    rot_z(theta.z) * rot_y(theta.y) * rot_x(theta.x)
}

/// Partial derivatives of [`rotation_matrix`] with respect to roll, pitch, yaw.
pub fn rotation_partials(theta: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (rx, ry, rz) = (rot_x(theta.x), rot_y(theta.y), rot_z(theta.z));
    [
        rz * ry * d_rot_x(theta.x),
        rz * d_rot_y(theta.y) * rx,
        d_rot_z(theta.z) * ry * rx,
    ]
}

fn check_pitch(theta: &Vector3<f64>) -> Result<()> {
    let pitch = theta.y;
    if !pitch.is_finite() || pitch.abs() >= std::f64::consts::FRAC_PI_2 - GIMBAL_MARGIN {
        return Err(Error::GimbalLock { pitch });
    }
    Ok(())
}

/// Map from body angular rate to ZYX Euler-angle rates, `θ̇ = T(θ) ω`.
pub fn euler_rate_matrix(theta: &Vector3<f64>) -> Result<Matrix3<f64>> {
    check_pitch(theta)?;
    let (sr, cr) = theta.x.sin_cos();
    let (sp, cp) = theta.y.sin_cos();
    let tp = sp / cp;
    Ok(Matrix3::new(1.0, sr * tp, cr * tp, 0.0, cr, -sr, 0.0, sr / cp, cr / cp))
}

/// Partial derivatives of [`euler_rate_matrix`] with respect to roll, pitch, yaw.
pub fn euler_rate_partials(theta: &Vector3<f64>) -> Result<[Matrix3<f64>; 3]> {
    check_pitch(theta)?;
    let (sr, cr) = theta.x.sin_cos();
    let (sp, cp) = theta.y.sin_cos();
    let tp = sp / cp;
    let sec2 = 1.0 / (cp * cp);
    let d_roll = Matrix3::new(0.0, cr * tp, -sr * tp, 0.0, -sr, -cr, 0.0, cr / cp, -sr / cp);
    let d_pitch = Matrix3::new(
        0.0,
        sr * sec2,
        cr * sec2,
        0.0,
        0.0,
        0.0,
        0.0,
        sr * sp * sec2,
        cr * sp * sec2,
    );
    Ok([d_roll, d_pitch, Matrix3::zeros()])
}

/// Map from stacked body-frame foot forces to `[R Σ f_i ; Σ r_i × f_i]`.
pub fn contact_wrench_map(x: &BodyState, geom: &StanceGeometry) -> WrenchMap {
    let rot = rotation_matrix(&x.theta);
    let mut map = WrenchMap::zeros();
    for (leg, r) in geom.foot_positions_body.iter().enumerate() {
        map.fixed_view_mut::<3, 3>(0, 3 * leg).copy_from(&rot);
        map.fixed_view_mut::<3, 3>(3, 3 * leg).copy_from(&r.cross_matrix());
    }
    map
}

/// Contact wrench divided through by mass and inertia: `[R Σ f / m ; 𝒥⁻¹ Σ r × f]`.
pub fn normalized_contact_wrench(
    x: &BodyState,
    u: &FootForces,
    geom: &StanceGeometry,
    params: &BodyParams,
) -> Vector6<f64> {
    let w = contact_wrench_map(x, geom) * u.to_vector();
    let mut out = Vector6::zeros();
    out.fixed_rows_mut::<3>(0)
        .copy_from(&(w.fixed_rows::<3>(0) / params.mass()));
    out.fixed_rows_mut::<3>(3)
        .copy_from(&(params.inertia_inv() * w.fixed_rows::<3>(3)));
    out
}

/// Time derivative of the state under foot forces `u` and residual wrench `h`.
pub fn continuous_dynamics(
    x: &BodyState,
    u: &FootForces,
    geom: &StanceGeometry,
    params: &BodyParams,
    h: &ResidualWrench,
) -> Result<StateVector> {
    let t = euler_rate_matrix(&x.theta)?;
    let rot = rotation_matrix(&x.theta);
    let mut net_force = Vector3::zeros();
    let mut net_torque = Vector3::zeros();
    for (f, r) in u.forces.iter().zip(geom.foot_positions_body.iter()) {
        net_force += f;
        net_torque += r.cross(f);
    }
    let j = params.inertia();
    let v_dot = params.gravity() + (rot * net_force + h.force) / params.mass();
    let omega_dot = params.inertia_inv() * (-x.omega.cross(&(j * x.omega)) + net_torque + h.torque);

    let mut dx = StateVector::zeros();
    dx.fixed_rows_mut::<3>(0).copy_from(&x.v);
    dx.fixed_rows_mut::<3>(3).copy_from(&(t * x.omega));
    dx.fixed_rows_mut::<3>(6).copy_from(&v_dot);
    dx.fixed_rows_mut::<3>(9).copy_from(&omega_dot);
    Ok(dx)
}

/// One forward-Euler step: `x⁺ = x + dt · ẋ`.
pub fn discrete_step(
    x: &BodyState,
    u: &FootForces,
    geom: &StanceGeometry,
    params: &BodyParams,
    h: &ResidualWrench,
    dt: f64,
) -> Result<BodyState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
    }
    let dx = continuous_dynamics(x, u, geom, params, h)?;
    Ok(BodyState::from_vector(&(x.to_vector() + dt * dx)))
}

/// Analytic Jacobians `(∂ẋ/∂x, ∂ẋ/∂u)` of [`continuous_dynamics`] with `h` held fixed.
pub fn continuous_jacobians(
    x: &BodyState,
    u: &FootForces,
    geom: &StanceGeometry,
    params: &BodyParams,
) -> Result<(StateMatrix, StateMatrix)> {
    let t = euler_rate_matrix(&x.theta)?;
    let dt_partials = euler_rate_partials(&x.theta)?;
    let rot = rotation_matrix(&x.theta);
    let dr_partials = rotation_partials(&x.theta);
    let net_force = u.total();
    let m = params.mass();
    let j = params.inertia();
    let j_inv = params.inertia_inv();

    let mut a = StateMatrix::zeros();
    a.fixed_view_mut::<3, 3>(0, 6).copy_from(&Matrix3::identity());
    for k in 0..3 {
        a.fixed_view_mut::<3, 1>(3, 3 + k)
            .copy_from(&(dt_partials[k] * x.omega));
        a.fixed_view_mut::<3, 1>(6, 3 + k)
            .copy_from(&(dr_partials[k] * net_force / m));
    }
    a.fixed_view_mut::<3, 3>(3, 9).copy_from(&t);
    let gyro = (j * x.omega).cross_matrix() - x.omega.cross_matrix() * j;
    a.fixed_view_mut::<3, 3>(9, 9).copy_from(&(j_inv * gyro));

    let mut b = StateMatrix::zeros();
    for (leg, r) in geom.foot_positions_body.iter().enumerate() {
        b.fixed_view_mut::<3, 3>(6, 3 * leg).copy_from(&(rot / m));
        b.fixed_view_mut::<3, 3>(9, 3 * leg)
            .copy_from(&(j_inv * r.cross_matrix()));
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn symmetric_stance() -> StanceGeometry {
        StanceGeometry::new([
            Vector3::new(0.19, 0.11, -0.3),
            Vector3::new(0.19, -0.11, -0.3),
            Vector3::new(-0.19, 0.11, -0.3),
            Vector3::new(-0.19, -0.11, -0.3),
        ])
    }

    #[test]
    fn euler_rate_identity_at_level() {
        let t = euler_rate_matrix(&Vector3::zeros()).unwrap();
        assert_eq!(t, Matrix3::identity());
    }

    #[test]
    fn euler_rate_rejects_gimbal_lock() {
        let err = euler_rate_matrix(&Vector3::new(0.0, FRAC_PI_2 - 1e-4, 0.0)).unwrap_err();
        assert!(matches!(err, Error::GimbalLock { .. }));
        assert!(euler_rate_matrix(&Vector3::new(0.0, -FRAC_PI_2 + 1e-4, 0.0)).is_err());
    }

    /// Integrates the rotation of a frame spinning at constant body rate with
    /// Rodrigues updates, converts back to ZYX angles and differentiates.
    #[test]
    fn euler_rate_matches_rotating_frame_finite_difference() {
        let theta = Vector3::new(0.1, 0.2, 0.3);
        let omega = Vector3::new(0.3, -0.5, 0.7);
        let r0 = rotation_matrix(&theta);
        let euler_of = |r: &Matrix3<f64>| {
            let pitch = (-r[(2, 0)]).asin();
            let roll = r[(2, 1)].atan2(r[(2, 2)]);
            let yaw = r[(1, 0)].atan2(r[(0, 0)]);
            Vector3::new(roll, pitch, yaw)
        };
        let h = 1e-6;
        let step = |sign: f64| {
            let rot = nalgebra::Rotation3::from_scaled_axis(omega * sign * h);
            r0 * rot.matrix()
        };
        let rate = (euler_of(&step(1.0)) - euler_of(&step(-1.0))) / (2.0 * h);
        let expected = euler_rate_matrix(&theta).unwrap() * omega;
        assert!((rate - expected).norm() < 1e-8, "{rate} vs {expected}");
    }

    #[test]
    fn pure_yaw_maps_x_to_y() {
        let r = rotation_matrix(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        assert!((r * Vector3::x() - Vector3::y()).norm() < 1e-15);
        assert_eq!(rotation_matrix(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn hover_is_static_equilibrium() {
        let params = BodyParams::quadruped_default();
        let geom = symmetric_stance();
        let u = FootForces::gravity_compensation(&params, &[true; 4]);
        let mut x = BodyState::at_position(Vector3::new(0.0, 0.0, 0.3));
        x.v = Vector3::new(0.2, 0.0, 0.0);
        let dx = continuous_dynamics(&x, &u, &geom, &params, &ResidualWrench::zeros()).unwrap();
        assert!((dx.fixed_rows::<3>(0) - x.v).norm() < 1e-15);
        assert!(dx.rows(3, 9).norm() < 1e-12);
    }

    #[test]
    fn free_fall_step() {
        let params = BodyParams::quadruped_default();
        let x = BodyState::zeros();
        let next = discrete_step(
            &x,
            &FootForces::zeros(),
            &symmetric_stance(),
            &params,
            &ResidualWrench::zeros(),
            0.03,
        )
        .unwrap();
        assert!((next.v.z + 0.2943).abs() < 1e-15);
        assert_eq!(next.p, x.p);
    }

    #[test]
    fn zero_lever_arm_gives_no_torque() {
        let mut geom = symmetric_stance();
        geom.foot_positions_body[0] = Vector3::zeros();
        let map = contact_wrench_map(&BodyState::zeros(), &geom);
        assert_eq!(map.fixed_view::<3, 3>(3, 0).into_owned(), Matrix3::zeros());
    }

    #[test]
    fn symmetric_vertical_forces_give_zero_torque() {
        let geom = symmetric_stance();
        let u = FootForces {
            forces: [Vector3::new(0.0, 0.0, 30.0); 4],
        };
        let w = contact_wrench_map(&BodyState::zeros(), &geom) * u.to_vector();
        assert!(w.fixed_rows::<3>(3).norm() < 1e-13);
        assert!((w[2] - 120.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let g = Vector3::new(0.0, 0.0, -9.81);
        assert!(BodyParams::new(0.0, Matrix3::identity(), g).is_err());
        let asym = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(BodyParams::new(1.0, asym, g).is_err());
        assert!(BodyParams::new(1.0, -Matrix3::identity(), g).is_err());
    }

    #[test]
    fn non_positive_step_is_rejected() {
        let params = BodyParams::quadruped_default();
        let r = discrete_step(
            &BodyState::zeros(),
            &FootForces::zeros(),
            &symmetric_stance(),
            &params,
            &ResidualWrench::zeros(),
            0.0,
        );
        assert!(r.is_err());
    }
}
