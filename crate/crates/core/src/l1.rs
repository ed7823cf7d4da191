//! L1-style adaptive baseline: a state predictor on the velocity and
//! angular-rate rows, a piecewise-constant adaptation law and a first-order
//! low-pass filter. The filtered estimate is held constant over the horizon.

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::{ConstantWrench, MpcController, MpcProblem, MpcSolution};
use crate::rigid_body::{BodyParams, BodyState, FootForces, ResidualWrench};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L1Config {
    /// Predictor pole (s⁻¹).
    pub a_s: f64,
    /// Low-pass cutoff (rad/s).
    pub omega_c: f64,
}

impl Default for L1Config {
    fn default() -> Self {
        Self {
            a_s: -10.0,
            omega_c: 20.0,
        }
    }
}

impl L1Config {
    pub fn validate(&self, dt: f64) -> Result<()> {
        if !(self.a_s < 0.0 && self.a_s.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "predictor pole must be negative, got {}",
                self.a_s
            )));
        }
        if !(self.omega_c > 0.0 && self.omega_c * dt < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "cutoff must satisfy 0 < ω_c·dt < 1, got ω_c = {} with dt = {dt}",
                self.omega_c
            )));
        }
        Ok(())
    }
}

/// Estimator state. All 6-vectors are in rate units: `[v̇; ω̇]`.
#[derive(Debug, Clone, PartialEq)]
pub struct L1Estimator {
    config: L1Config,
    dt: f64,
    predictor_state: Vector6<f64>,
    prediction_error: Vector6<f64>,
    sigma_hat: Vector6<f64>,
    h_bar: Vector6<f64>,
}

impl L1Estimator {
    /// Starts with the predictor on the measurement and zero estimates.
    pub fn new(config: L1Config, dt: f64, measured: &Vector6<f64>) -> Result<Self> {
        config.validate(dt)?;
        Ok(Self {
            config,
            dt,
            predictor_state: *measured,
            prediction_error: Vector6::zeros(),
            sigma_hat: Vector6::zeros(),
            h_bar: Vector6::zeros(),
        })
    }

    pub fn sigma_hat(&self) -> &Vector6<f64> {
        &self.sigma_hat
    }

    pub fn h_bar(&self) -> &Vector6<f64> {
        &self.h_bar
    }

    pub fn predictor_state(&self) -> &Vector6<f64> {
        &self.predictor_state
    }

    /// Advances the predictor over the last period with the nominal rate
    /// derivative of the applied input, compares against the new
    /// measurement, and updates the estimate.
    ///
    /// `σ̂` is chosen so the discretized prediction error would have followed
    /// the stable pole exactly; `h̄` is the Tustin-discretized low-pass of `σ̂`.
    pub fn update(&mut self, measured: &Vector6<f64>, nominal_derivative: &Vector6<f64>) {
        let dt = self.dt;
        let a_s = self.config.a_s;
        let e = self.prediction_error;
        self.predictor_state += (nominal_derivative + self.sigma_hat + e * a_s) * dt;
        let e_next = self.predictor_state - measured;
        let sigma_next = self.sigma_hat - (e_next - e * (1.0 + a_s * dt)) / dt;

        let wc = self.config.omega_c * dt;
        let pole = (2.0 - wc) / (2.0 + wc);
        let gain = wc / (2.0 + wc);
        self.h_bar = self.h_bar * pole + (sigma_next + self.sigma_hat) * gain;
        self.sigma_hat = sigma_next;
        self.prediction_error = e_next;
    }

    /// `h̄` converted to a wrench with the nominal mass and inertia.
    pub fn wrench(&self, params: &BodyParams) -> ResidualWrench {
        ResidualWrench::new(
            self.h_bar.fixed_rows::<3>(0) * params.mass(),
            params.inertia() * self.h_bar.fixed_rows::<3>(3),
        )
    }
}

/// Solves the MPC with `ĥ` held at the current filtered estimate.
pub fn l1_mpc_step(
    controller: &mut MpcController,
    x_t: &BodyState,
    problem: &MpcProblem,
    l1: &L1Estimator,
) -> Result<(FootForces, MpcSolution)> {
    let predictor = ConstantWrench(l1.wrench(&problem.params));
    controller.control_step(x_t, problem, &predictor)
}
