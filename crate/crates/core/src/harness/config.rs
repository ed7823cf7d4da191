//! Scenario configuration: one JSON document per run, units in key names.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gait::{ContactSchedule, FootholdPlanner, ReferencePlan, Terrain};
use crate::l1::L1Config;
use crate::mpc::{CostWeights, MpcConfig};
use crate::plant::{DisturbanceScenario, GravityMultipleUnit, PlantConfig};
use crate::rigid_body::BodyParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerVariant {
    Nominal,
    L1,
    Rff,
    Clairvoyant,
}

impl ControllerVariant {
    pub const ALL: [Self; 4] = [Self::Nominal, Self::L1, Self::Rff, Self::Clairvoyant];

    pub fn label(&self) -> &'static str {
        match self {
            Self::Nominal => "nominal",
            Self::L1 => "l1-style",
            Self::Rff => "rff-ogd",
            Self::Clairvoyant => "clairvoyant",
        }
    }
}

impl std::str::FromStr for ControllerVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal" => Ok(Self::Nominal),
            "l1" | "l1-style" => Ok(Self::L1),
            "rff" | "rff-ogd" => Ok(Self::Rff),
            "clairvoyant" => Ok(Self::Clairvoyant),
            other => Err(Error::InvalidConfig(format!("unknown controller variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyConfig {
    pub mass_kg: f64,
    pub inertia_kgm2: [f64; 3],
}

impl Default for BodyConfig {
    fn default() -> Self {
        Self {
            mass_kg: 15.0,
            inertia_kgm2: [0.07, 0.26, 0.24],
        }
    }
}

impl BodyConfig {
    pub fn params(&self) -> Result<BodyParams> {
        BodyParams::new(
            self.mass_kg,
            Matrix3::from_diagonal(&Vector3::from(self.inertia_kgm2)),
            Vector3::new(0.0, 0.0, -crate::rigid_body::STANDARD_GRAVITY),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSettings {
    pub num_features: usize,
    pub sigma_w: f64,
    /// Step size on the coefficients. `None` selects `0.003 · M²`.
    #[serde(default)]
    pub eta: Option<f64>,
    pub seed: u64,
    /// Per-block ball radius for projection; `None` disables projection.
    #[serde(default)]
    pub projection_bound: Option<f64>,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        Self {
            num_features: 50,
            sigma_w: 0.01,
            eta: None,
            seed: 1,
            projection_bound: None,
        }
    }
}

impl LearnerSettings {
    pub const BASE_RATE: f64 = 0.003;

    pub fn resolved_eta(&self) -> f64 {
        self.eta
            .unwrap_or(Self::BASE_RATE * (self.num_features * self.num_features) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSettings {
    pub horizon: usize,
    pub dt_s: f64,
    pub weights: CostWeights,
    pub mu: f64,
    pub f_z_min_n: f64,
    pub f_z_max_n: f64,
    pub sqp_iters: usize,
    #[serde(default)]
    pub freeze_input_features: bool,
    pub qp_max_iter: usize,
}

impl Default for MpcSettings {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt_s: 0.03,
            weights: CostWeights::default(),
            mu: 0.6,
            f_z_min_n: 0.0,
            f_z_max_n: 250.0,
            sqp_iters: 1,
            freeze_input_features: false,
            qp_max_iter: 2000,
        }
    }
}

impl MpcSettings {
    pub fn controller_config(&self) -> MpcConfig {
        MpcConfig {
            sqp_iters: self.sqp_iters,
            freeze_input_features: self.freeze_input_features,
            qp_max_iter: self.qp_max_iter,
            ..MpcConfig::default()
        }
    }
}

/// A force given in multiples of gravity, per inertial axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GravityMultipleForce {
    /// Multiples of `‖g‖` along x, y, z; `[0, 0, -8]` is "8g" downward.
    pub k: [f64; 3],
    #[serde(default)]
    pub unit: GravityMultipleUnit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingLimits {
    /// Position error beyond which the run is declared lost.
    pub max_position_error_m: f64,
    /// Roll or pitch magnitude beyond which the run is declared lost.
    pub max_tilt_rad: f64,
}

impl Default for TrackingLimits {
    fn default() -> Self {
        Self {
            max_position_error_m: 0.5,
            max_tilt_rad: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub variant: ControllerVariant,
    pub duration_s: f64,
    pub control_period_s: f64,
    #[serde(default)]
    pub body: BodyConfig,
    #[serde(default)]
    pub task: ReferencePlan,
    #[serde(default)]
    pub gait: ContactSchedule,
    #[serde(default)]
    pub planner: FootholdPlanner,
    #[serde(default)]
    pub scenario: DisturbanceScenario,
    /// Extra constant force added on top of `scenario`.
    #[serde(default)]
    pub gravity_multiple: Option<GravityMultipleForce>,
    #[serde(default)]
    pub learner: LearnerSettings,
    #[serde(default)]
    pub mpc: MpcSettings,
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub l1: L1Config,
    #[serde(default)]
    pub limits: TrackingLimits,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "flat".into(),
            variant: ControllerVariant::Rff,
            duration_s: 10.0,
            control_period_s: 0.005,
            body: BodyConfig::default(),
            task: ReferencePlan::default(),
            gait: ContactSchedule::trot(),
            planner: FootholdPlanner::default(),
            scenario: DisturbanceScenario::None,
            gravity_multiple: None,
            learner: LearnerSettings::default(),
            mpc: MpcSettings::default(),
            plant: PlantConfig::default(),
            l1: L1Config::default(),
            limits: TrackingLimits::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn with_variant(&self, variant: ControllerVariant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn with_terrain(mut self, terrain: Terrain) -> Self {
        self.task.terrain = terrain;
        self
    }

    /// Number of control periods in the run.
    pub fn num_steps(&self) -> usize {
        (self.duration_s / self.control_period_s).round() as usize
    }

    /// Scenario with the gravity-multiple shorthand folded in.
    pub fn resolved_scenario(&self) -> DisturbanceScenario {
        let Some(extra) = self.gravity_multiple else {
            return self.scenario.clone();
        };
        let newtons = |k| extra.unit.newtons(k, self.body.mass_kg);
        let force = DisturbanceScenario::ConstantForce {
            force_n: [newtons(extra.k[0]), newtons(extra.k[1]), newtons(extra.k[2])],
            torque_nm: [0.0; 3],
        };
        match &self.scenario {
            DisturbanceScenario::None => force,
            other => DisturbanceScenario::Composite {
                parts: vec![other.clone(), force],
            },
        }
    }

    /// Everything but the controller variant, serialized; runs with equal
    /// fingerprints see identical plants and references.
    pub fn fingerprint(&self) -> String {
        let mut canonical = self.clone();
        canonical.variant = ControllerVariant::Nominal;
        serde_json::to_string(&canonical).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration_s));
        }
        if !(self.control_period_s.is_finite() && self.control_period_s > 0.0) {
            return bad(format!(
                "control period must be positive, got {}",
                self.control_period_s
            ));
        }
        if self.num_steps() == 0 {
            return bad("duration shorter than one control period".into());
        }
        if self.num_steps() > 10_000_000 {
            return bad(format!("{} control periods is too many", self.num_steps()));
        }
        self.body.params()?;
        self.task.validate()?;
        self.gait.validate()?;
        if !(self.planner.reach_radius_m > 0.0 && self.planner.hips_body.iter().flatten().all(|c| c.is_finite())) {
            return bad("foothold planner needs a positive reach and finite hips".into());
        }
        self.resolved_scenario().validate()?;
        let l = &self.learner;
        if l.num_features == 0 || l.num_features > 4096 {
            return bad(format!("feature count must be in 1..=4096, got {}", l.num_features));
        }
        if !(l.sigma_w.is_finite() && l.sigma_w > 0.0) {
            return bad(format!("feature scale must be positive, got {}", l.sigma_w));
        }
        if !(l.resolved_eta().is_finite() && l.resolved_eta() > 0.0) {
            return bad(format!("learning rate must be positive, got {}", l.resolved_eta()));
        }
        if l.projection_bound.is_some_and(|b| !(b.is_finite() && b > 0.0)) {
            return bad("projection bound must be positive".into());
        }
        let m = &self.mpc;
        if m.horizon == 0 || m.horizon > 200 {
            return bad(format!("horizon must be in 1..=200, got {}", m.horizon));
        }
        if !(m.dt_s.is_finite() && m.dt_s > 0.0) {
            return bad(format!("MPC step must be positive, got {}", m.dt_s));
        }
        m.weights.validate()?;
        crate::mpc::InputConstraintSet {
            mu: m.mu,
            f_z_min: m.f_z_min_n,
            f_z_max: m.f_z_max_n,
            contact_flags: Vec::new(),
        }
        .validate()?;
        m.controller_config().validate()?;
        self.plant.validate()?;
        self.l1.validate(self.control_period_s)?;
        let lim = &self.limits;
        if !(lim.max_position_error_m > 0.0 && lim.max_tilt_rad > 0.0) {
            return bad("tracking limits must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_json() {
        let cfg = ScenarioConfig::default();
        let back = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn minimal_document_fills_defaults() {
        let cfg = ScenarioConfig::from_json(
            r#"{"name":"x","variant":"nominal","duration_s":1.0,"control_period_s":0.005,
               "gravity_multiple":{"k":[0,0,-12]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.mpc.horizon, 20);
        assert_eq!(cfg.learner.resolved_eta(), 0.003 * 2500.0);
        assert_eq!(
            cfg.resolved_scenario(),
            DisturbanceScenario::ConstantForce {
                force_n: [0.0, 0.0, -117.72],
                torque_nm: [0.0; 3]
            }
        );
    }

    #[test]
    fn body_weight_unit() {
        let cfg = ScenarioConfig {
            gravity_multiple: Some(GravityMultipleForce {
                k: [0.0, 0.0, -1.0],
                unit: GravityMultipleUnit::BodyWeight,
            }),
            ..ScenarioConfig::default()
        };
        let DisturbanceScenario::ConstantForce { force_n, .. } = cfg.resolved_scenario() else {
            panic!("expected constant force");
        };
        assert!((force_n[2] + 15.0 * 9.81).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_values() {
        let cfg = ScenarioConfig {
            duration_s: -1.0,
            ..ScenarioConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ScenarioConfig::from_json("{").is_err());
        assert!(ScenarioConfig::from_json(
            r#"{"name":"x","variant":"rff","duration_s":1,"control_period_s":0.005,"bogus":1}"#
        )
        .is_err());
    }

    #[test]
    fn fingerprint_ignores_variant_only() {
        let a = ScenarioConfig::default();
        assert_eq!(a.fingerprint(), a.with_variant(ControllerVariant::L1).fingerprint());
        let mut b = a.clone();
        b.learner.seed = 9;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
