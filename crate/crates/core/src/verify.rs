//! Self-checks runnable from the command line: derivative checks against
//! finite differences, optimality conditions of solved QPs, residual
//! round-trips, zero-disturbance equivalence and run determinism.

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::extractor::residual_from_transition;
use crate::features::{ResidualInput, ResidualModel};
use crate::harness::config::{ControllerVariant, ScenarioConfig};
use crate::harness::export::write_csv_log;
use crate::harness::run::run_scenario;
use crate::learner::{gradient, loss};
use crate::mpc::{linearize_dynamics, ZeroResidual};
use crate::plant::DisturbanceScenario;
use crate::qp::{solve_qp, stationarity_residual, Qp, QpSettings, QpStatus};
use crate::rigid_body::{
    discrete_step, BodyParams, BodyState, FootForces, InputVector, ResidualWrench, StanceGeometry, StateVector,
};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error, in the units of `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub instances: usize,
}

impl CheckResult {
    fn new(name: &'static str, worst: f64, tolerance: f64, instances: usize) -> Self {
        Self {
            name,
            passed: worst.is_finite() && worst <= tolerance,
            worst,
            tolerance,
            instances,
        }
    }
}

fn uniform3(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    )
}

fn random_state(rng: &mut ChaCha8Rng) -> BodyState {
    BodyState {
        p: uniform3(rng, -1.0, 1.0),
        theta: Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-3.0..3.0),
        ),
        v: uniform3(rng, -1.0, 1.0),
        omega: uniform3(rng, -2.0, 2.0),
    }
}

fn random_geometry(rng: &mut ChaCha8Rng) -> StanceGeometry {
    StanceGeometry::new(std::array::from_fn(|leg| {
        let sx = if leg < 2 { 1.0 } else { -1.0 };
        let sy = if leg % 2 == 0 { 1.0 } else { -1.0 };
        Vector3::new(
            sx * rng.random_range(0.1..0.3),
            sy * rng.random_range(0.05..0.2),
            rng.random_range(-0.35..-0.2),
        )
    }))
}

fn random_forces(rng: &mut ChaCha8Rng) -> FootForces {
    FootForces {
        forces: std::array::from_fn(|_| {
            Vector3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(0.0..80.0),
            )
        }),
    }
}

/// Analytic OGD gradient against central differences of the loss. The loss
/// is quadratic in the coefficients, so the step only trades off rounding.
pub fn check_gradient(seed: u64, instances: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-3;
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let mut model = ResidualModel::new(12, 15, 0.5, seed.wrapping_add(k as u64), None)?;
        for a in model.alpha_mut() {
            *a = Vector6::from_fn(|_, _| rng.random_range(-5.0..5.0));
        }
        let z = ResidualInput(DVector::from_fn(15, |_, _| rng.random_range(-2.0..2.0)));
        let target = ResidualWrench::from_vector(&Vector6::from_fn(|_, _| rng.random_range(-50.0..50.0)));
        let analytic = gradient(&model, &z, &target);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..model.num_features() {
            for c in 0..6 {
                let base = model.alpha()[i][c];
                model.alpha_mut()[i][c] = base + eps;
                let up = loss(&model, &z, &target);
                model.alpha_mut()[i][c] = base - eps;
                let down = loss(&model, &z, &target);
                model.alpha_mut()[i][c] = base;
                let fd = (up - down) / (2.0 * eps);
                num += (analytic[i][c] - fd).powi(2);
                den += fd * fd;
            }
        }
        worst = worst.max((num / f64::max(den, 1e-24)).sqrt());
    }
    Ok(CheckResult::new("ogd_gradient", worst, 1e-6, instances))
}

/// `extract(forward(h)) = h` on random transitions.
pub fn check_residual_round_trip(seed: u64, instances: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = BodyParams::quadruped_default();
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let x = random_state(&mut rng);
        let u = random_forces(&mut rng);
        let geom = random_geometry(&mut rng);
        let h = ResidualWrench::new(uniform3(&mut rng, -100.0, 100.0), uniform3(&mut rng, -10.0, 10.0));
        let dt = rng.random_range(0.001..0.03);
        let next = discrete_step(&x, &u, &geom, &params, &h, dt)?;
        let back = residual_from_transition(&x, &u, &next, &geom, &params, dt)?;
        worst = worst.max((back.to_vector() - h.to_vector()).amax());
    }
    Ok(CheckResult::new("residual_round_trip", worst, 1e-9, instances))
}

/// Linearized discrete dynamics against central differences of the step.
pub fn check_linearization(seed: u64, instances: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = BodyParams::quadruped_default();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let x = random_state(&mut rng);
        let u = random_forces(&mut rng);
        let geom = random_geometry(&mut rng);
        let dt = 0.03;
        let lin = linearize_dynamics(&x, &u, &geom, &params, &ZeroResidual, 0.0, dt, false, eps)?;
        let step = |xv: &StateVector, uv: &InputVector| -> Result<StateVector> {
            let s = BodyState::from_vector(xv);
            Ok(discrete_step(
                &s,
                &FootForces::from_vector(uv),
                &geom,
                &params,
                &ResidualWrench::zeros(),
                dt,
            )?
            .to_vector())
        };
        let (xv, uv) = (x.to_vector(), u.to_vector());
        for i in 0..12 {
            let mut xp = xv;
            let mut xm = xv;
            xp[i] += eps;
            xm[i] -= eps;
            let col = (step(&xp, &uv)? - step(&xm, &uv)?) / (2.0 * eps);
            worst = worst.max((col - lin.a.column(i)).amax());
            let mut up = uv;
            let mut um = uv;
            up[i] += eps;
            um[i] -= eps;
            let col = (step(&xv, &up)? - step(&xv, &um)?) / (2.0 * eps);
            worst = worst.max((col - lin.b.column(i)).amax());
        }
    }
    Ok(CheckResult::new("linearization", worst, 1e-6, instances))
}

/// Karush-Kuhn-Tucker residuals of solved random strictly convex QPs with
/// a known feasible point.
pub fn check_qp_optimality(seed: u64, instances: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(2..16);
        let m_eq = rng.random_range(0..n / 2 + 1);
        let m_in = rng.random_range(0..2 * n);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let hessian = a.transpose() * &a + DMatrix::identity(n, n) * 0.1;
        let gradient = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let eq = DMatrix::from_fn(m_eq, n, |_, _| rng.random_range(-1.0..1.0));
        let ineq = DMatrix::from_fn(m_in, n, |_, _| rng.random_range(-1.0..1.0));
        let slack = DVector::from_fn(m_in, |_, _| rng.random_range(0.0..0.5));
        let qp = Qp {
            eq_rhs: &eq * &x0,
            eq_matrix: eq,
            ineq_rhs: &ineq * &x0 + slack,
            ineq_matrix: ineq,
            hessian,
            gradient,
        };
        let sol = solve_qp(&qp, &QpSettings::default())?;
        if sol.status != QpStatus::Optimal {
            return Ok(CheckResult::new("qp_optimality", f64::INFINITY, 1e-8, instances));
        }
        let scale = 1.0 + qp.gradient.amax();
        let lam_in = sol.multipliers.rows(m_eq, m_in);
        let slack_at = &qp.ineq_rhs - &qp.ineq_matrix * &sol.x;
        let complementarity = lam_in
            .iter()
            .zip(slack_at.iter())
            .map(|(l, s)| (l * s).abs())
            .fold(0.0, f64::max);
        let dual = lam_in.iter().map(|l| -l).fold(0.0, f64::max);
        worst = worst
            .max(stationarity_residual(&qp, &sol) / scale)
            .max(qp.max_violation(&sol.x))
            .max(complementarity / scale)
            .max(dual);
    }
    Ok(CheckResult::new("qp_optimality", worst, 1e-8, instances))
}

/// Learning from zero coefficients with no disturbance reproduces the
/// nominal run.
pub fn check_zero_disturbance(duration_s: f64) -> Result<CheckResult> {
    let mut cfg = ScenarioConfig {
        duration_s,
        scenario: DisturbanceScenario::None,
        ..ScenarioConfig::default()
    };
    cfg.plant.substeps = 1;
    let nominal = run_scenario(&cfg.with_variant(ControllerVariant::Nominal))?;
    let learned = run_scenario(&cfg.with_variant(ControllerVariant::Rff))?;
    let worst = if nominal.records.len() == learned.records.len() {
        nominal
            .records
            .iter()
            .zip(&learned.records)
            .map(|(a, b)| (a.x.to_vector() - b.x.to_vector()).amax())
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    Ok(CheckResult::new(
        "zero_disturbance_equivalence",
        worst,
        1e-9,
        nominal.records.len(),
    ))
}

/// Two runs of the same configuration write identical CSV bytes.
pub fn check_determinism(duration_s: f64) -> Result<CheckResult> {
    let mut cfg = ScenarioConfig {
        duration_s,
        ..ScenarioConfig::default()
    };
    cfg.plant.measurement_noise = 1e-4;
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let log = run_scenario(&cfg)?;
        let mut buf = Vec::new();
        write_csv_log(&log.records, &mut buf)?;
        bytes.push(buf);
    }
    let differ = if bytes[0] == bytes[1] { 0.0 } else { 1.0 };
    Ok(CheckResult::new("determinism", differ, 0.0, 2))
}

/// Every check with default instance counts.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_gradient(seed, 100)?,
        check_residual_round_trip(seed, 100)?,
        check_linearization(seed, 20)?,
        check_qp_optimality(seed, 50)?,
        check_zero_disturbance(1.0)?,
        check_determinism(0.5)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_checks_pass() {
        for r in [
            check_gradient(3, 5).unwrap(),
            check_residual_round_trip(3, 10).unwrap(),
            check_linearization(3, 2).unwrap(),
            check_qp_optimality(3, 10).unwrap(),
            check_zero_disturbance(0.05).unwrap(),
            check_determinism(0.05).unwrap(),
        ] {
            assert!(r.passed, "{r:?}");
        }
    }
}
