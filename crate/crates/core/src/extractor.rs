//! Recovers the realized residual wrench from an observed transition by
//! inverting one forward-Euler step of the nominal model.

use crate::error::{Error, Result};
use crate::rigid_body::{discrete_step, BodyParams, BodyState, FootForces, ResidualWrench, StanceGeometry};

/// Residual that makes the nominal step land on `x_next` in the velocity and
/// angular-rate rows. Position and attitude rows carry no residual and are
/// not used.
pub fn residual_from_transition(
    x_t: &BodyState,
    u_t: &FootForces,
    x_next: &BodyState,
    geom: &StanceGeometry,
    params: &BodyParams,
    dt: f64,
) -> Result<ResidualWrench> {
    if !x_t.is_finite() || !x_next.is_finite() {
        return Err(Error::NonFinite("transition states"));
    }
    if !u_t.to_vector().iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("foot forces"));
    }
    if !geom.is_finite() {
        return Err(Error::NonFinite("stance geometry"));
    }
    let nominal = discrete_step(x_t, u_t, geom, params, &ResidualWrench::zeros(), dt)?;
    let force = params.mass() * (x_next.v - nominal.v) / dt;
    let torque = params.inertia() * (x_next.omega - nominal.omega) / dt;
    Ok(ResidualWrench::new(force, torque))
}

/// Mismatch of the kinematic rows (`p`, `θ`) between the observed state and
/// the nominal step, which the residual cannot explain.
pub fn kinematic_mismatch(
    x_t: &BodyState,
    u_t: &FootForces,
    x_next: &BodyState,
    geom: &StanceGeometry,
    params: &BodyParams,
    dt: f64,
) -> Result<f64> {
    let nominal = discrete_step(x_t, u_t, geom, params, &ResidualWrench::zeros(), dt)?;
    Ok(((x_next.p - nominal.p).norm_squared() + (x_next.theta - nominal.theta).norm_squared()).sqrt())
}
