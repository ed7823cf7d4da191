//! Receding-horizon controller: sequential linearization of the discrete
//! dynamics (with the residual predictor inside), a condensed QP over the
//! stance-leg forces, and a dual active-set solve.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ResidualInput, ResidualModel};
use crate::qp::{solve_qp, Qp, QpSettings, QpStatus};
use crate::rigid_body::{
    continuous_jacobians, discrete_step, rotation_matrix, BodyParams, BodyState, FootForces, InputVector,
    ResidualWrench, StanceGeometry, StateMatrix, StateVector, NUM_LEGS,
};

/// Diagonal quadratic weights of the stage cost
/// `‖x − x_ref‖²_Q + ‖u − u_ff‖²_R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub q_p: [f64; 3],
    pub q_theta: [f64; 3],
    pub q_v: [f64; 3],
    pub q_omega: [f64; 3],
    pub r_u: [f64; 12],
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            q_p: [12.5; 3],
            q_theta: [0.5, 0.5, 2.5],
            q_v: [0.2, 0.2, 0.4],
            q_omega: [0.1, 0.1, 0.4],
            r_u: [5e-5; 12],
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let q_ok = self.state_diag().iter().all(|q| q.is_finite() && *q >= 0.0);
        let r_ok = self.r_u.iter().all(|r| r.is_finite() && *r > 0.0);
        if !(q_ok && r_ok) {
            return Err(Error::InvalidConfig(
                "state weights must be ≥ 0 and input weights > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn state_diag(&self) -> StateVector {
        let mut q = StateVector::zeros();
        for i in 0..3 {
            q[i] = self.q_p[i];
            q[3 + i] = self.q_theta[i];
            q[6 + i] = self.q_v[i];
            q[9 + i] = self.q_omega[i];
        }
        q
    }

    pub fn input_diag(&self) -> InputVector {
        InputVector::from_column_slice(&self.r_u)
    }

    pub fn state_cost(&self, x: &BodyState, x_ref: &BodyState) -> f64 {
        let e = x.to_vector() - x_ref.to_vector();
        e.component_mul(&e).dot(&self.state_diag())
    }

    pub fn input_cost(&self, u: &FootForces, u_ff: &FootForces) -> f64 {
        let e = u.to_vector() - u_ff.to_vector();
        e.component_mul(&e).dot(&self.input_diag())
    }

    pub fn stage_cost(&self, x: &BodyState, x_ref: &BodyState, u: &FootForces, u_ff: &FootForces) -> f64 {
        self.state_cost(x, x_ref) + self.input_cost(u, u_ff)
    }
}

/// Forces that balance gravity plus a world-frame residual force, split
/// equally over the stance legs and expressed in the body frame.
pub fn feedforward_forces(
    theta: &Vector3<f64>,
    params: &BodyParams,
    stance: &[bool; NUM_LEGS],
    residual_force: &Vector3<f64>,
) -> FootForces {
    let n = stance.iter().filter(|s| **s).count();
    let mut out = FootForces::zeros();
    if n == 0 {
        return out;
    }
    let world = -(params.gravity() * params.mass() + residual_force);
    let body = rotation_matrix(theta).transpose() * world / n as f64;
    for leg in 0..NUM_LEGS {
        if stance[leg] {
            out.forces[leg] = body;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputConstraintSet {
    pub mu: f64,
    pub f_z_min: f64,
    pub f_z_max: f64,
    /// Stance flags for each of the `N` inputs of the horizon.
    pub contact_flags: Vec<[bool; NUM_LEGS]>,
}

impl InputConstraintSet {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu.is_finite()
            && self.mu > 0.0
            && self.f_z_min.is_finite()
            && self.f_z_min >= 0.0
            && self.f_z_max >= self.f_z_min;
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "friction/force bounds invalid: mu {}, f_z in [{}, {}]",
                self.mu, self.f_z_min, self.f_z_max
            )));
        }
        Ok(())
    }
}

/// Largest violation of the friction pyramid and normal-force bounds for
/// stance legs, and the largest force magnitude on swing legs.
pub fn constraint_violation(u: &FootForces, stance: &[bool; NUM_LEGS], mu: f64, f_z_min: f64, f_z_max: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for leg in 0..NUM_LEGS {
        let f = u.forces[leg];
        if stance[leg] {
            worst = worst
                .max(f.x.abs() - mu * f.z)
                .max(f.y.abs() - mu * f.z)
                .max(f_z_min - f.z)
                .max(f.z - f_z_max);
        } else {
            worst = worst.max(f.amax());
        }
    }
    worst
}

/// Euclidean projection of one stance force onto the pyramid-with-bounds.
pub fn project_stance_force(f: &Vector3<f64>, mu: f64, f_z_min: f64, f_z_max: f64) -> Vector3<f64> {
    let mut qp = Qp::unconstrained(DMatrix::identity(3, 3), DVector::from_iterator(3, f.iter().map(|c| -c)));
    qp.ineq_matrix = pyramid_rows(mu);
    qp.ineq_rhs = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, -f_z_min, f_z_max]);
    match solve_qp(&qp, &QpSettings::default()) {
        Ok(sol) if sol.status == QpStatus::Optimal => Vector3::new(sol.x[0], sol.x[1], sol.x[2]),
        _ => Vector3::new(0.0, 0.0, f_z_min),
    }
}

fn pyramid_rows(mu: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        6,
        3,
        &[
            1.0, 0.0, -mu, //
            -1.0, 0.0, -mu, //
            0.0, 1.0, -mu, //
            0.0, -1.0, -mu, //
            0.0, 0.0, -1.0, //
            0.0, 0.0, 1.0,
        ],
    )
}

/// Zeroes swing legs and projects stance legs that violate the constraint
/// set by more than `tol`.
pub fn enforce_constraints(
    u: &FootForces,
    stance: &[bool; NUM_LEGS],
    mu: f64,
    f_z_min: f64,
    f_z_max: f64,
    tol: f64,
) -> FootForces {
    let mut out = *u;
    for leg in 0..NUM_LEGS {
        if !stance[leg] {
            out.forces[leg] = Vector3::zeros();
            continue;
        }
        let f = out.forces[leg];
        let single = [true, false, false, false];
        let probe = FootForces {
            forces: [f, Vector3::zeros(), Vector3::zeros(), Vector3::zeros()],
        };
        if constraint_violation(&probe, &single, mu, f_z_min, f_z_max) > tol {
            out.forces[leg] = project_stance_force(&f, mu, f_z_min, f_z_max);
        }
    }
    out
}

/// Everything the residual term may look at when predicting a wrench.
#[derive(Debug, Clone, Copy)]
pub struct PredictionContext<'a> {
    pub x: &'a BodyState,
    pub u: &'a FootForces,
    pub geom: &'a StanceGeometry,
    pub params: &'a BodyParams,
    pub t: f64,
}

/// Source of the residual wrench `ĥ` used inside the MPC prediction model.
pub trait ResidualPredictor {
    fn predict(&self, ctx: &PredictionContext<'_>) -> ResidualWrench;

    /// Whether the prediction can change with the state.
    fn depends_on_state(&self) -> bool {
        true
    }

    /// Whether the prediction can change with the input.
    fn depends_on_input(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ZeroResidual;

impl ResidualPredictor for ZeroResidual {
    fn predict(&self, _ctx: &PredictionContext<'_>) -> ResidualWrench {
        ResidualWrench::zeros()
    }
    fn depends_on_state(&self) -> bool {
        false
    }
    fn depends_on_input(&self) -> bool {
        false
    }
}

/// The same wrench at every stage of the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantWrench(pub ResidualWrench);

impl ResidualPredictor for ConstantWrench {
    fn predict(&self, _ctx: &PredictionContext<'_>) -> ResidualWrench {
        self.0
    }
    fn depends_on_state(&self) -> bool {
        false
    }
    fn depends_on_input(&self) -> bool {
        false
    }
}

impl ResidualPredictor for ResidualModel {
    fn predict(&self, ctx: &PredictionContext<'_>) -> ResidualWrench {
        let z = ResidualInput::from_state(ctx.x, ctx.u, ctx.geom, ctx.params);
        ResidualModel::predict(self, &z)
    }
}

/// One horizon of the finite-horizon optimal control problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub horizon: usize,
    pub dt: f64,
    /// `N + 1` targets; index 0 is the current time and is not penalized.
    pub reference: Vec<BodyState>,
    pub weights: CostWeights,
    pub constraints: InputConstraintSet,
    /// Foot positions used for the input at each of the `N` stages.
    pub geometry: Vec<StanceGeometry>,
    pub params: BodyParams,
    /// Time of stage 0, passed to time-aware predictors.
    pub t0: f64,
}

impl MpcProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.horizon;
        if n == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "MPC step must be positive, got {}",
                self.dt
            )));
        }
        if self.reference.len() != n + 1 || self.geometry.len() != n || self.constraints.contact_flags.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "horizon {n}: {} references, {} geometries, {} contact flags",
                self.reference.len(),
                self.geometry.len(),
                self.constraints.contact_flags.len()
            )));
        }
        self.weights.validate()?;
        self.constraints.validate()
    }

    fn stage_time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }
}

/// Affine model `x⁺ ≈ A x + B u + c` valid near the expansion point.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub a: StateMatrix,
    pub b: StateMatrix,
    pub c: StateVector,
}

/// Residual wrench as a state-derivative contribution `[0; 0; f/m; 𝒥⁻¹τ]`.
fn residual_rates(h: &ResidualWrench, params: &BodyParams) -> StateVector {
    let mut out = StateVector::zeros();
    out.fixed_rows_mut::<3>(6).copy_from(&(h.force / params.mass()));
    out.fixed_rows_mut::<3>(9).copy_from(&(params.inertia_inv() * h.torque));
    out
}

/// First-order expansion of one step of the discrete dynamics with the
/// residual predictor inside, about `(x̄, ū)`. Rigid-body terms are
/// differentiated analytically; the predictor by central differences.
#[allow(clippy::too_many_arguments)]
pub fn linearize_dynamics(
    x_bar: &BodyState,
    u_bar: &FootForces,
    geom: &StanceGeometry,
    params: &BodyParams,
    predictor: &dyn ResidualPredictor,
    t: f64,
    dt: f64,
    freeze_input_features: bool,
    fd_step: f64,
) -> Result<Linearization> {
    let (ac, bc) = continuous_jacobians(x_bar, u_bar, geom, params)?;
    let ctx = PredictionContext {
        x: x_bar,
        u: u_bar,
        geom,
        params,
        t,
    };
    let h_bar = predictor.predict(&ctx);
    let next = discrete_step(x_bar, u_bar, geom, params, &h_bar, dt)?;

    let mut a = StateMatrix::identity() + ac * dt;
    let mut b = bc * dt;

    if predictor.depends_on_state() {
        let xv = x_bar.to_vector();
        for i in 0..12 {
            let mut plus = xv;
            let mut minus = xv;
            plus[i] += fd_step;
            minus[i] -= fd_step;
            let xp = BodyState::from_vector(&plus);
            let xm = BodyState::from_vector(&minus);
            let hp = predictor.predict(&PredictionContext { x: &xp, ..ctx });
            let hm = predictor.predict(&PredictionContext { x: &xm, ..ctx });
            let col = (residual_rates(&hp, params) - residual_rates(&hm, params)) * (dt / (2.0 * fd_step));
            let mut dst = a.column_mut(i);
            dst += col;
        }
    }
    if predictor.depends_on_input() && !freeze_input_features {
        let uv = u_bar.to_vector();
        for i in 0..12 {
            let mut plus = uv;
            let mut minus = uv;
            plus[i] += fd_step;
            minus[i] -= fd_step;
            let up = FootForces::from_vector(&plus);
            let um = FootForces::from_vector(&minus);
            let hp = predictor.predict(&PredictionContext { u: &up, ..ctx });
            let hm = predictor.predict(&PredictionContext { u: &um, ..ctx });
            let col = (residual_rates(&hp, params) - residual_rates(&hm, params)) * (dt / (2.0 * fd_step));
            let mut dst = b.column_mut(i);
            dst += col;
        }
    }

    let c = next.to_vector() - a * x_bar.to_vector() - b * u_bar.to_vector();
    Ok(Linearization { a, b, c })
}

/// Condensed QP over the stance-leg force components.
#[derive(Debug, Clone)]
pub struct CondensedQp {
    pub qp: Qp,
    /// Index into the stacked `12N` input vector for each QP variable.
    pub columns: Vec<usize>,
    /// Predicted states `x_1..x_N` when every input is zero.
    pub free_response: DVector<f64>,
    /// Sensitivity of `x_1..x_N` to the QP variables.
    pub sensitivity: DMatrix<f64>,
}

/// Full-input prediction matrix: stacked `x_1..x_N` equals
/// `S [u_0; …; u_{N−1}] + w`.
pub fn prediction_matrices(x0: &BodyState, lins: &[Linearization]) -> (DMatrix<f64>, DVector<f64>) {
    let n = lins.len();
    let mut s = DMatrix::zeros(12 * n, 12 * n);
    let mut w = DVector::zeros(12 * n);
    let mut state = x0.to_vector();
    for (k, lin) in lins.iter().enumerate() {
        state = lin.a * state + lin.c;
        w.fixed_rows_mut::<12>(12 * k).copy_from(&state);
    }
    for j in 0..n {
        let mut block = lins[j].b;
        s.fixed_view_mut::<12, 12>(12 * j, 12 * j).copy_from(&block);
        for k in j + 1..n {
            block = lins[k].a * block;
            s.fixed_view_mut::<12, 12>(12 * k, 12 * j).copy_from(&block);
        }
    }
    (s, w)
}

/// Builds the condensed QP for the linearized problem. `u_ff` holds the
/// input references of the `N` stages.
pub fn assemble_qp(
    problem: &MpcProblem,
    x0: &BodyState,
    lins: &[Linearization],
    u_ff: &[FootForces],
) -> Result<CondensedQp> {
    problem.validate()?;
    let n = problem.horizon;
    if lins.len() != n || u_ff.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "horizon {n}: {} linearizations, {} input references",
            lins.len(),
            u_ff.len()
        )));
    }
    let flags = &problem.constraints.contact_flags;
    let columns: Vec<usize> = (0..n)
        .flat_map(|k| {
            (0..NUM_LEGS)
                .filter(move |&leg| flags[k][leg])
                .flat_map(move |leg| (0..3).map(move |axis| 12 * k + 3 * leg + axis))
        })
        .collect();
    let nv = columns.len();

    let (s_full, w) = prediction_matrices(x0, lins);
    let mut s = DMatrix::zeros(12 * n, nv);
    for (col, &full) in columns.iter().enumerate() {
        s.set_column(col, &s_full.column(full));
    }

    let q = problem.weights.state_diag();
    let r = problem.weights.input_diag();
    let mut x_ref = DVector::zeros(12 * n);
    let mut q_stack = DVector::zeros(12 * n);
    for k in 0..n {
        x_ref
            .fixed_rows_mut::<12>(12 * k)
            .copy_from(&problem.reference[k + 1].to_vector());
        q_stack.fixed_rows_mut::<12>(12 * k).copy_from(&q);
    }

    let mut weighted = s.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= q_stack[i];
    }
    let mut hessian = s.transpose() * &weighted * 2.0;
    let offset = &w - &x_ref;
    let mut gradient = weighted.transpose() * offset * 2.0;
    for (col, &full) in columns.iter().enumerate() {
        let (k, i) = (full / 12, full % 12);
        hessian[(col, col)] += 2.0 * r[i];
        gradient[col] -= 2.0 * r[i] * u_ff[k].to_vector()[i];
    }
    // Exact symmetry keeps the Cholesky factor well defined.
    let hessian = (&hessian + hessian.transpose()) * 0.5;

    let legs = nv / 3;
    let mut ineq_matrix = DMatrix::zeros(6 * legs, nv);
    let mut ineq_rhs = DVector::zeros(6 * legs);
    let rows = pyramid_rows(problem.constraints.mu);
    for leg in 0..legs {
        ineq_matrix.view_mut((6 * leg, 3 * leg), (6, 3)).copy_from(&rows);
        ineq_rhs[6 * leg + 4] = -problem.constraints.f_z_min;
        ineq_rhs[6 * leg + 5] = problem.constraints.f_z_max;
    }

    Ok(CondensedQp {
        qp: Qp {
            hessian,
            gradient,
            eq_matrix: DMatrix::zeros(0, nv),
            eq_rhs: DVector::zeros(0),
            ineq_matrix,
            ineq_rhs,
        },
        columns,
        free_response: w,
        sensitivity: s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub sqp_iters: usize,
    pub freeze_input_features: bool,
    pub fd_step: f64,
    pub qp_max_iter: usize,
    pub qp_feasibility_tol: f64,
    /// Violation above which the first input is projected onto the constraints.
    pub projection_tol: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            sqp_iters: 1,
            freeze_input_features: false,
            fd_step: 1e-6,
            qp_max_iter: 2000,
            qp_feasibility_tol: 1e-10,
            projection_tol: 1e-8,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sqp_iters == 0 || self.qp_max_iter == 0 {
            return Err(Error::InvalidConfig("SQP and QP iteration counts must be ≥ 1".into()));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "finite-difference step must be positive, got {}",
                self.fd_step
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub inputs: Vec<FootForces>,
    pub predicted_states: Vec<BodyState>,
    pub objective: f64,
    pub solver_status: QpStatus,
    pub iterations: usize,
    pub solve_time_s: f64,
    /// Whether the first input had to be projected or replaced.
    pub projected: bool,
}

/// Stateful controller holding the warm start between calls.
#[derive(Debug, Clone)]
pub struct MpcController {
    config: MpcConfig,
    warm: Option<(f64, Vec<FootForces>)>,
    last_input: FootForces,
}

impl MpcController {
    pub fn new(config: MpcConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            warm: None,
            last_input: FootForces::zeros(),
        })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    pub fn reset(&mut self) {
        self.warm = None;
        self.last_input = FootForces::zeros();
    }

    /// Initial input guess: the previous plan shifted to the current time,
    /// with swing legs zeroed and newly touching-down legs given their share
    /// of the weight.
    fn initial_inputs(&self, problem: &MpcProblem) -> Vec<FootForces> {
        let n = problem.horizon;
        let flags = &problem.constraints.contact_flags;
        let shift = self
            .warm
            .as_ref()
            .map(|(t_prev, _)| ((problem.t0 - t_prev) / problem.dt).round().max(0.0) as usize);
        (0..n)
            .map(|k| {
                let gravity = feedforward_forces(
                    &problem.reference[k].theta,
                    &problem.params,
                    &flags[k],
                    &Vector3::zeros(),
                );
                let previous = match (&self.warm, shift) {
                    (Some((_, plan)), Some(s)) if !plan.is_empty() => Some(plan[(k + s).min(plan.len() - 1)]),
                    _ => None,
                };
                let mut u = FootForces::zeros();
                for leg in 0..NUM_LEGS {
                    if !flags[k][leg] {
                        continue;
                    }
                    u.forces[leg] = match previous {
                        Some(p) if p.forces[leg].z > 0.0 => p.forces[leg],
                        _ => gravity.forces[leg],
                    };
                }
                u
            })
            .collect()
    }

    /// Runs the configured number of linearize → assemble → solve rounds and
    /// returns the first input of the final plan.
    pub fn control_step(
        &mut self,
        x_t: &BodyState,
        problem: &MpcProblem,
        predictor: &dyn ResidualPredictor,
    ) -> Result<(FootForces, MpcSolution)> {
        problem.validate()?;
        let start = Instant::now();
        let n = problem.horizon;
        let cons = &problem.constraints;
        let mut inputs = self.initial_inputs(problem);
        let settings = QpSettings {
            max_iter: self.config.qp_max_iter,
            feasibility_tol: self.config.qp_feasibility_tol,
        };
        let mut status = QpStatus::Optimal;
        let mut iterations = 0;
        let mut predicted = vec![*x_t; n + 1];
        let mut objective = 0.0;

        for _ in 0..self.config.sqp_iters {
            let (lins, u_ff) = self.expand(x_t, problem, predictor, &inputs)?;
            let condensed = assemble_qp(problem, x_t, &lins, &u_ff)?;
            let sol = solve_qp(&condensed.qp, &settings)?;
            iterations += sol.iterations;
            status = sol.status;
            if status == QpStatus::Infeasible {
                break;
            }
            let mut stacked = DVector::zeros(12 * n);
            for (col, &full) in condensed.columns.iter().enumerate() {
                stacked[full] = sol.x[col];
            }
            inputs = (0..n)
                .map(|k| FootForces::from_vector(&stacked.fixed_rows::<12>(12 * k).into_owned()))
                .collect();
            let states = &condensed.sensitivity * &sol.x + &condensed.free_response;
            predicted[0] = *x_t;
            for k in 0..n {
                predicted[k + 1] = BodyState::from_vector(&states.fixed_rows::<12>(12 * k).into_owned());
            }
            objective = (0..n)
                .map(|k| {
                    problem.weights.state_cost(&predicted[k + 1], &problem.reference[k + 1])
                        + problem.weights.input_cost(&inputs[k], &u_ff[k])
                })
                .sum();
        }

        let flags0 = &cons.contact_flags[0];
        let (u0, projected) = if status == QpStatus::Infeasible {
            let fallback = enforce_constraints(&self.last_input, flags0, cons.mu, cons.f_z_min, cons.f_z_max, 0.0);
            (fallback, true)
        } else {
            let raw = inputs[0];
            let viol = constraint_violation(&raw, flags0, cons.mu, cons.f_z_min, cons.f_z_max);
            if viol > self.config.projection_tol {
                (
                    enforce_constraints(
                        &raw,
                        flags0,
                        cons.mu,
                        cons.f_z_min,
                        cons.f_z_max,
                        self.config.projection_tol,
                    ),
                    true,
                )
            } else {
                (raw, false)
            }
        };
        if status != QpStatus::Infeasible {
            self.warm = Some((problem.t0, inputs.clone()));
        }
        self.last_input = u0;
        let solution = MpcSolution {
            inputs,
            predicted_states: predicted,
            objective,
            solver_status: status,
            iterations,
            solve_time_s: start.elapsed().as_secs_f64(),
            projected,
        };
        Ok((u0, solution))
    }

    /// Rolls the guess forward and linearizes about the resulting trajectory.
    fn expand(
        &self,
        x_t: &BodyState,
        problem: &MpcProblem,
        predictor: &dyn ResidualPredictor,
        inputs: &[FootForces],
    ) -> Result<(Vec<Linearization>, Vec<FootForces>)> {
        let n = problem.horizon;
        let mut lins = Vec::with_capacity(n);
        let mut u_ff = Vec::with_capacity(n);
        let mut x_bar = *x_t;
        for k in 0..n {
            let geom = &problem.geometry[k];
            let t = problem.stage_time(k);
            let lin = linearize_dynamics(
                &x_bar,
                &inputs[k],
                geom,
                &problem.params,
                predictor,
                t,
                problem.dt,
                self.config.freeze_input_features,
                self.config.fd_step,
            )?;
            let h = predictor.predict(&PredictionContext {
                x: &x_bar,
                u: &inputs[k],
                geom,
                params: &problem.params,
                t,
            });
            u_ff.push(feedforward_forces(
                &problem.reference[k].theta,
                &problem.params,
                &problem.constraints.contact_flags[k],
                &h.force,
            ));
            let next = BodyState::from_vector(&(lin.a * x_bar.to_vector() + lin.b * inputs[k].to_vector() + lin.c));
            lins.push(lin);
            // Fall back to the reference if the open-loop guess leaves the
            // region where the Euler-angle chart is valid.
            x_bar = if next.is_finite() && next.theta.y.abs() < 1.2 {
                next
            } else {
                problem.reference[k + 1]
            };
        }
        Ok((lins, u_ff))
    }
}
