//! Ground-truth plant: true parameters, disturbance scenarios, friction
//! clipping and sub-stepped integration.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::{PredictionContext, ResidualPredictor};
use crate::rigid_body::{
    continuous_dynamics, discrete_step, rotation_matrix, BodyParams, BodyState, FootForces, ResidualWrench,
    StanceGeometry,
};

/// State norm beyond which a run is declared numerically failed.
pub const BLOWUP_NORM: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeProfile {
    /// `offset + amplitude · sin(2π f t + phase)`.
    Sinusoid {
        #[serde(rename = "offset_N")]
        offset_n: [f64; 3],
        #[serde(rename = "amplitude_N")]
        amplitude_n: [f64; 3],
        frequency_hz: f64,
        phase_rad: f64,
    },
    Step {
        time_s: f64,
        #[serde(rename = "before_N")]
        before_n: [f64; 3],
        #[serde(rename = "after_N")]
        after_n: [f64; 3],
    },
}

impl TimeProfile {
    pub fn force_at(&self, t: f64) -> Vector3<f64> {
        match *self {
            Self::Sinusoid {
                offset_n,
                amplitude_n,
                frequency_hz,
                phase_rad,
            } => {
                let s = (std::f64::consts::TAU * frequency_hz * t + phase_rad).sin();
                Vector3::from(offset_n) + Vector3::from(amplitude_n) * s
            }
            Self::Step {
                time_s,
                before_n,
                after_n,
            } => Vector3::from(if t < time_s { before_n } else { after_n }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrictionSegment {
    pub start_s: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceScenario {
    #[default]
    None,
    /// Inertial-frame force at the centre of mass plus a body-frame torque.
    ConstantForce {
        #[serde(rename = "force_N")]
        force_n: [f64; 3],
        #[serde(default, rename = "torque_Nm")]
        torque_nm: [f64; 3],
    },
    TimeVaryingForce {
        profile: TimeProfile,
    },
    /// Rigidly attached mass at the centre of mass with extra inertia.
    Payload {
        mass_kg: f64,
        inertia_kgm2: [f64; 3],
    },
    FrictionSchedule {
        timeline: Vec<FrictionSegment>,
    },
    Composite {
        parts: Vec<DisturbanceScenario>,
    },
}

/// How a "k·g" force label is turned into Newtons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GravityMultipleUnit {
    /// `k · 9.81 N`, i.e. the weight of `k` kilograms.
    #[default]
    KilogramEquivalent,
    /// `k · m · 9.81 N`, i.e. `k` body weights.
    BodyWeight,
}

impl GravityMultipleUnit {
    pub fn newtons(&self, k: f64, body_mass: f64) -> f64 {
        match self {
            Self::KilogramEquivalent => k * crate::rigid_body::STANDARD_GRAVITY,
            Self::BodyWeight => k * body_mass * crate::rigid_body::STANDARD_GRAVITY,
        }
    }
}

impl DisturbanceScenario {
    /// Constant force `k` gravity-multiples along the gravity direction.
    pub fn downward_force(k: f64, unit: GravityMultipleUnit, body_mass: f64) -> Self {
        Self::ConstantForce {
            force_n: [0.0, 0.0, -unit.newtons(k, body_mass)],
            torque_nm: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match self {
            Self::None => Ok(()),
            Self::ConstantForce { force_n, torque_nm } => {
                if force_n.iter().chain(torque_nm).all(|c| c.is_finite()) {
                    Ok(())
                } else {
                    bad("constant force must be finite".into())
                }
            }
            Self::TimeVaryingForce { profile } => {
                let ok = match *profile {
                    TimeProfile::Sinusoid {
                        offset_n,
                        amplitude_n,
                        frequency_hz,
                        phase_rad,
                    } => {
                        offset_n.iter().chain(&amplitude_n).all(|c| c.is_finite())
                            && frequency_hz.is_finite()
                            && phase_rad.is_finite()
                    }
                    TimeProfile::Step {
                        time_s,
                        before_n,
                        after_n,
                    } => time_s.is_finite() && before_n.iter().chain(&after_n).all(|c| c.is_finite()),
                };
                if ok {
                    Ok(())
                } else {
                    bad("time profile must be finite".into())
                }
            }
            Self::Payload { mass_kg, inertia_kgm2 } => {
                if mass_kg.is_finite() && *mass_kg >= 0.0 && inertia_kgm2.iter().all(|c| c.is_finite() && *c >= 0.0) {
                    Ok(())
                } else {
                    bad(format!("invalid payload {mass_kg} kg / {inertia_kgm2:?}"))
                }
            }
            Self::FrictionSchedule { timeline } => {
                if !timeline.is_empty()
                    && timeline
                        .iter()
                        .all(|s| s.start_s.is_finite() && s.mu.is_finite() && s.mu > 0.0)
                {
                    Ok(())
                } else {
                    bad("friction timeline must be non-empty with positive coefficients".into())
                }
            }
            Self::Composite { parts } => parts.iter().try_for_each(|p| p.validate()),
        }
    }

    /// True parameters: nominal ones plus every payload.
    pub fn true_params(&self, nominal: &BodyParams) -> Result<BodyParams> {
        let mut params = nominal.clone();
        self.visit(&mut |s| {
            if let Self::Payload { mass_kg, inertia_kgm2 } = s {
                params = params.with_payload(*mass_kg, &Matrix3::from_diagonal(&Vector3::from(*inertia_kgm2)))?;
            }
            Ok(())
        })?;
        Ok(params)
    }

    /// Sum of all externally applied forces and torques at time `t`.
    pub fn external_wrench(&self, t: f64) -> ResidualWrench {
        let mut total = ResidualWrench::zeros();
        let _ = self.visit(&mut |s| {
            match s {
                Self::ConstantForce { force_n, torque_nm } => {
                    total = total + ResidualWrench::new(Vector3::from(*force_n), Vector3::from(*torque_nm));
                }
                Self::TimeVaryingForce { profile } => {
                    total = total + ResidualWrench::new(profile.force_at(t), Vector3::zeros());
                }
                _ => {}
            }
            Ok(())
        });
        total
    }

    /// Friction coefficient in force at `t`, if any schedule is present.
    pub fn friction_at(&self, t: f64) -> Option<f64> {
        let mut mu = None;
        let _ = self.visit(&mut |s| {
            if let Self::FrictionSchedule { timeline } = s {
                let active = timeline.iter().rfind(|seg| seg.start_s <= t).unwrap_or(&timeline[0]);
                mu = Some(active.mu);
            }
            Ok(())
        });
        mu
    }

    fn visit(&self, f: &mut dyn FnMut(&Self) -> Result<()>) -> Result<()> {
        match self {
            Self::Composite { parts } => parts.iter().try_for_each(|p| p.visit(f)),
            other => f(other),
        }
    }
}

/// Residual wrench, relative to the nominal model, that reproduces the true
/// accelerations: payload inertia effects plus external forces.
pub fn realized_disturbance(
    scenario: &DisturbanceScenario,
    x: &BodyState,
    u: &FootForces,
    geom: &StanceGeometry,
    t: f64,
    nominal: &BodyParams,
) -> Result<ResidualWrench> {
    let truth = scenario.true_params(nominal)?;
    let external = scenario.external_wrench(t);
    if truth == *nominal {
        return Ok(external);
    }
    let dx = continuous_dynamics(x, u, geom, &truth, &external)?;
    let v_dot = dx.fixed_rows::<3>(6).into_owned();
    let omega_dot = dx.fixed_rows::<3>(9).into_owned();
    let rot = rotation_matrix(&x.theta);
    let mut net_force = Vector3::zeros();
    let mut net_torque = Vector3::zeros();
    for (f, r) in u.forces.iter().zip(&geom.foot_positions_body) {
        net_force += f;
        net_torque += r.cross(f);
    }
    let j = nominal.inertia();
    let force = nominal.mass() * (v_dot - nominal.gravity()) - rot * net_force;
    let torque = j * omega_dot + x.omega.cross(&(j * x.omega)) - net_torque;
    Ok(ResidualWrench::new(force, torque))
}

/// Clairvoyant predictor: evaluates the true scenario wrench at the
/// predicted state and input.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOracle {
    pub scenario: DisturbanceScenario,
}

impl ResidualPredictor for ScenarioOracle {
    fn predict(&self, ctx: &PredictionContext<'_>) -> ResidualWrench {
        realized_disturbance(&self.scenario, ctx.x, ctx.u, ctx.geom, ctx.t, ctx.params)
            .unwrap_or_else(|_| self.scenario.external_wrench(ctx.t))
    }
}

/// Violations at or below this size are corrected but not counted.
pub const CLIP_EVENT_TOL: f64 = 1e-8;

/// Limits stance forces to the circular friction cone `‖f_t‖ ≤ μ f_z`,
/// `f_z ≥ 0`, in the body frame. Returns the applied forces and the number
/// of legs clipped by more than [`CLIP_EVENT_TOL`].
pub fn clip_to_friction_cone(u: &FootForces, mu: f64) -> (FootForces, usize) {
    let mut out = *u;
    let mut events = 0;
    for f in out.forces.iter_mut() {
        if f.z < 0.0 {
            events += usize::from(f.z < -CLIP_EVENT_TOL || f.xy().norm() > CLIP_EVENT_TOL);
            *f = Vector3::zeros();
            continue;
        }
        let tangential = f.xy().norm();
        let limit = mu * f.z;
        if tangential > limit {
            events += usize::from(tangential - limit > CLIP_EVENT_TOL);
            let scale = limit / tangential;
            f.x *= scale;
            f.y *= scale;
        }
    }
    (out, events)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub substeps: usize,
    /// Sliding friction when no schedule is active.
    pub friction_mu: f64,
    /// Half-width of uniform measurement noise on the reported state.
    pub measurement_noise: f64,
    pub noise_seed: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            substeps: 6,
            friction_mu: 0.9,
            measurement_noise: 0.0,
            noise_seed: 0,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.substeps >= 1
            && self.friction_mu.is_finite()
            && self.friction_mu > 0.0
            && self.measurement_noise.is_finite()
            && self.measurement_noise >= 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid plant config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: BodyState,
    pub params: BodyParams,
    pub mu: f64,
    pub t: f64,
}

/// What happened during one control period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub applied: FootForces,
    pub clip_events: usize,
    /// Realized disturbance at the start of the period.
    pub disturbance: ResidualWrench,
}

#[derive(Debug, Clone)]
pub struct Plant {
    config: PlantConfig,
    scenario: DisturbanceScenario,
    nominal: BodyParams,
    state: PlantState,
    rng: ChaCha8Rng,
}

impl Plant {
    pub fn new(config: PlantConfig, scenario: DisturbanceScenario, nominal: BodyParams, x0: BodyState) -> Result<Self> {
        config.validate()?;
        scenario.validate()?;
        let params = scenario.true_params(&nominal)?;
        let mu = scenario.friction_at(0.0).unwrap_or(config.friction_mu);
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.noise_seed),
            config,
            scenario,
            nominal,
            state: PlantState {
                x: x0,
                params,
                mu,
                t: 0.0,
            },
        })
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    /// State as seen by the controller.
    pub fn measure(&mut self) -> BodyState {
        let x = self.state.x;
        if self.config.measurement_noise == 0.0 {
            return x;
        }
        let w = self.config.measurement_noise;
        let mut v = x.to_vector();
        for c in v.iter_mut() {
            *c += self.rng.random_range(-w..=w);
        }
        BodyState::from_vector(&v)
    }

    /// Advances one control period of length `dt` with forces and foot
    /// geometry held fixed.
    pub fn step(&mut self, u: &FootForces, geom: &StanceGeometry, dt: f64) -> Result<StepReport> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "control period must be positive, got {dt}"
            )));
        }
        let n = self.config.substeps;
        let h = dt / n as f64;
        self.state.mu = self
            .scenario
            .friction_at(self.state.t)
            .unwrap_or(self.config.friction_mu);
        let (applied, clip_events) = clip_to_friction_cone(u, self.state.mu);
        let mut first = None;
        for i in 0..n {
            let t = self.state.t + i as f64 * h;
            let w = realized_disturbance(&self.scenario, &self.state.x, &applied, geom, t, &self.nominal)?;
            first.get_or_insert(w);
            let next = discrete_step(&self.state.x, &applied, geom, &self.nominal, &w, h)?;
            let norm = next.to_vector().norm();
            if !norm.is_finite() || norm > BLOWUP_NORM {
                return Err(Error::NumericalBlowup { norm });
            }
            self.state.x = next;
        }
        self.state.t += dt;
        Ok(StepReport {
            applied,
            clip_events,
            disturbance: first.unwrap_or_else(ResidualWrench::zeros),
        })
    }
}
