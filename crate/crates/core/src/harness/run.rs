//! Closed-loop execution of one scenario: measure, plan, act, extract the
//! residual, learn, log.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::residual_from_transition;
use crate::features::{ResidualInput, ResidualModel, CONTROL_FEATURE_DIM};
use crate::gait::{reference_at, stance_geometry_over_horizon, FootholdLatch};
use crate::harness::config::{ControllerVariant, ScenarioConfig};
use crate::l1::L1Estimator;
use crate::learner::{ogd_step, LearnerConfig};
use crate::mpc::{
    feedforward_forces, ConstantWrench, InputConstraintSet, MpcController, MpcProblem, PredictionContext,
    ResidualPredictor, ZeroResidual,
};
use crate::plant::{Plant, ScenarioOracle};
use crate::qp::QpStatus;
use crate::rigid_body::{continuous_dynamics, BodyState, FootForces, ResidualWrench, NUM_LEGS};

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub x: BodyState,
    pub x_ref: BodyState,
    pub u: FootForces,
    /// Residual extracted from the observed transition.
    pub h_true: ResidualWrench,
    /// Residual the controller predicted for `(x_t, u_t)` before learning.
    pub h_hat: ResidualWrench,
    pub loss: f64,
    pub cost: f64,
    pub solver_status: QpStatus,
    pub solver_iters: usize,
    pub clip_events: usize,
    pub stance: [bool; NUM_LEGS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { step: usize, reason: String },
}

impl RunStatus {
    pub fn is_failed(&self) -> bool {
        matches!(self, Self::Failed { .. })
    }
}

/// Wall-clock measurements; kept out of the CSV so logs stay reproducible.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub control_steps: usize,
    pub control_total_s: f64,
    pub control_max_s: f64,
    pub learn_steps: usize,
    pub learn_total_s: f64,
    pub learn_max_s: f64,
}

impl TimingStats {
    pub fn mean_control_s(&self) -> f64 {
        self.control_total_s / self.control_steps.max(1) as f64
    }

    pub fn mean_learn_s(&self) -> f64 {
        self.learn_total_s / self.learn_steps.max(1) as f64
    }

    fn record_control(&mut self, s: f64) {
        self.control_steps += 1;
        self.control_total_s += s;
        self.control_max_s = self.control_max_s.max(s);
    }

    fn record_learn(&mut self, s: f64) {
        self.learn_steps += 1;
        self.learn_total_s += s;
        self.learn_max_s = self.learn_max_s.max(s);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub name: String,
    pub variant: ControllerVariant,
    pub fingerprint: String,
    pub records: Vec<StepRecord>,
    pub status: RunStatus,
    pub timing: TimingStats,
    pub clamped_footholds: usize,
    pub projected_inputs: usize,
    /// Final learned model, for the RFF variant.
    pub model: Option<ResidualModel>,
}

impl RunLog {
    pub fn stage_costs(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.cost)
    }
}

enum Adapter {
    None,
    Rff(ResidualModel, LearnerConfig),
    L1(L1Estimator),
    Oracle(ScenarioOracle),
}

/// Runs the closed loop described by `cfg`. Plant failures end the run with
/// a `Failed` status; configuration problems are returned as errors.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunLog> {
    cfg.validate()?;
    let nominal = cfg.body.params()?;
    let scenario = cfg.resolved_scenario();
    let x0 = reference_at(&cfg.task, 0.0);
    let mut plant = Plant::new(cfg.plant, scenario.clone(), nominal.clone(), x0)?;
    let mut controller = MpcController::new(cfg.mpc.controller_config())?;
    let tc = cfg.control_period_s;
    let n = cfg.mpc.horizon;
    let dt = cfg.mpc.dt_s;

    let mut adapter = match cfg.variant {
        ControllerVariant::Nominal => Adapter::None,
        ControllerVariant::Rff => {
            let l = &cfg.learner;
            let model = ResidualModel::new(
                l.num_features,
                CONTROL_FEATURE_DIM,
                l.sigma_w,
                l.seed,
                l.projection_bound,
            )?;
            let mut learner = LearnerConfig::new(l.resolved_eta())?;
            if let Some(b) = l.projection_bound {
                learner = learner.with_projection(b)?;
            }
            Adapter::Rff(model, learner)
        }
        ControllerVariant::L1 => Adapter::L1(L1Estimator::new(cfg.l1, tc, &x0.rates())?),
        ControllerVariant::Clairvoyant => Adapter::Oracle(ScenarioOracle {
            scenario: scenario.clone(),
        }),
    };

    let mut log = RunLog {
        name: cfg.name.clone(),
        variant: cfg.variant,
        fingerprint: cfg.fingerprint(),
        records: Vec::with_capacity(cfg.num_steps()),
        status: RunStatus::Completed,
        timing: TimingStats::default(),
        clamped_footholds: 0,
        projected_inputs: 0,
        model: None,
    };

    let mut latch = FootholdLatch::default();
    for step in 0..cfg.num_steps() {
        let t = step as f64 * tc;
        let x_t = plant.measure();
        log.clamped_footholds += latch.update(t, &cfg.gait, &cfg.planner, &cfg.task, &x_t);
        let reference: Vec<BodyState> = (0..=n).map(|k| reference_at(&cfg.task, t + k as f64 * dt)).collect();
        let horizon =
            stance_geometry_over_horizon(&cfg.gait, &cfg.planner, &cfg.task, &x_t, &latch, &reference, t, dt, n)?;
        log.clamped_footholds += horizon.clamped_footholds;
        let stance = horizon.contact_flags[0];
        let geom = horizon.geometry[0];
        let problem = MpcProblem {
            horizon: n,
            dt,
            reference: reference.clone(),
            weights: cfg.mpc.weights,
            constraints: InputConstraintSet {
                mu: cfg.mpc.mu,
                f_z_min: cfg.mpc.f_z_min_n,
                f_z_max: cfg.mpc.f_z_max_n,
                contact_flags: horizon.contact_flags,
            },
            geometry: horizon.geometry,
            params: nominal.clone(),
            t0: t,
        };

        let l1_wrench;
        let predictor: &dyn ResidualPredictor = match &adapter {
            Adapter::None => &ZeroResidual,
            Adapter::Rff(model, _) => model,
            Adapter::L1(est) => {
                l1_wrench = ConstantWrench(est.wrench(&nominal));
                &l1_wrench
            }
            Adapter::Oracle(o) => o,
        };
        let started = Instant::now();
        let (u_t, solution) = match controller.control_step(&x_t, &problem, predictor) {
            Ok(r) => r,
            Err(e @ (Error::GimbalLock { .. } | Error::NonFinite(_))) => {
                log.status = RunStatus::Failed {
                    step,
                    reason: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        log.timing.record_control(started.elapsed().as_secs_f64());
        log.projected_inputs += usize::from(solution.projected);
        let h_hat = predictor.predict(&PredictionContext {
            x: &x_t,
            u: &u_t,
            geom: &geom,
            params: &nominal,
            t,
        });

        let report = match plant.step(&u_t, &geom, tc) {
            Ok(r) => r,
            Err(e) => {
                log.status = RunStatus::Failed {
                    step,
                    reason: e.to_string(),
                };
                break;
            }
        };
        let x_next = plant.measure();
        let h_true = match residual_from_transition(&x_t, &u_t, &x_next, &geom, &nominal, tc) {
            Ok(h) => h,
            Err(e) => {
                log.status = RunStatus::Failed {
                    step,
                    reason: e.to_string(),
                };
                break;
            }
        };

        let started = Instant::now();
        let loss = match &mut adapter {
            Adapter::Rff(model, learner) => {
                let z = ResidualInput::from_state(&x_t, &u_t, &geom, &nominal);
                let l = ogd_step(model, &z, &h_true, learner);
                log.timing.record_learn(started.elapsed().as_secs_f64());
                l
            }
            Adapter::L1(est) => {
                let derivative = continuous_dynamics(&x_t, &u_t, &geom, &nominal, &ResidualWrench::zeros())?;
                let rates = derivative.fixed_rows::<6>(6).into_owned();
                est.update(&x_next.rates(), &rates);
                log.timing.record_learn(started.elapsed().as_secs_f64());
                (h_true.to_vector() - h_hat.to_vector()).norm_squared()
            }
            _ => (h_true.to_vector() - h_hat.to_vector()).norm_squared(),
        };

        let x_ref = reference[0];
        let u_ff = feedforward_forces(&x_ref.theta, &nominal, &stance, &nalgebra::Vector3::zeros());
        log.records.push(StepRecord {
            t,
            x: x_t,
            x_ref,
            u: u_t,
            h_true,
            h_hat,
            loss,
            cost: cfg.mpc.weights.stage_cost(&x_t, &x_ref, &u_t, &u_ff),
            solver_status: solution.solver_status,
            solver_iters: solution.iterations,
            clip_events: report.clip_events,
            stance,
        });

        let next_ref = reference_at(&cfg.task, t + tc);
        let pos_err = (x_next.p - next_ref.p).norm();
        let tilt = x_next.theta.x.abs().max(x_next.theta.y.abs());
        if pos_err > cfg.limits.max_position_error_m || tilt > cfg.limits.max_tilt_rad {
            log.status = RunStatus::Failed {
                step,
                reason: format!("tracking lost: position error {pos_err:.3} m, tilt {tilt:.3} rad"),
            };
            break;
        }
    }
    if let Adapter::Rff(model, _) = adapter {
        log.model = Some(model);
    }
    Ok(log)
}
