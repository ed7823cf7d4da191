//! Scenario × controller matrices run in parallel, with a tabular report.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gait::Terrain;
use crate::harness::config::{ControllerVariant, GravityMultipleForce, ScenarioConfig};
use crate::harness::metrics::{constraint_audit, tracking_metrics, ConstraintAudit, TrackingMetrics};
use crate::harness::run::{run_scenario, RunLog};
use crate::plant::GravityMultipleUnit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCase {
    pub name: String,
    pub terrain: Terrain,
    pub speed_mps: f64,
    /// Extra constant force as gravity multiples; `None` leaves the base
    /// scenario untouched.
    #[serde(default)]
    pub gravity_multiple: Option<GravityMultipleForce>,
    /// Overrides the base duration.
    #[serde(default)]
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub cases: Vec<SweepCase>,
    pub variants: Vec<ControllerVariant>,
}

fn downward(k: f64) -> Option<GravityMultipleForce> {
    (k != 0.0).then_some(GravityMultipleForce {
        k: [0.0, 0.0, -k],
        unit: GravityMultipleUnit::KilogramEquivalent,
    })
}

impl SweepSpec {
    /// A 6 m walk on flat and 20° slope at 0.75 m/s with 0/4/8/12
    /// kg-equivalent loads, and on rough ground at 0.5 m/s with none, a
    /// forward-and-down push, and 4. Each run lasts one second past the goal.
    pub fn benchmark(mut base: ScenarioConfig) -> Self {
        const GOAL_M: f64 = 6.0;
        base.task.goal_distance_m = Some(GOAL_M);
        let mut cases = Vec::new();
        for (label, terrain) in [("flat", Terrain::Flat), ("slope", Terrain::Slope { angle_deg: 20.0 })] {
            for k in [0.0, 4.0, 8.0, 12.0] {
                cases.push(SweepCase {
                    name: format!("{label}_{k}g"),
                    terrain,
                    speed_mps: 0.75,
                    gravity_multiple: downward(k),
                    duration_s: Some(GOAL_M / 0.75 + 1.0),
                });
            }
        }
        let rough = Terrain::Rough {
            max_height_m: 0.25,
            cell_size_m: 0.2,
            seed: 7,
        };
        for (name, gm) in [
            ("rough_0g", None),
            (
                "rough_2g_fwd_down",
                Some(GravityMultipleForce {
                    k: [2.0, 0.0, -2.0],
                    unit: GravityMultipleUnit::KilogramEquivalent,
                }),
            ),
            ("rough_4g", downward(4.0)),
        ] {
            cases.push(SweepCase {
                name: name.into(),
                terrain: rough,
                speed_mps: 0.5,
                gravity_multiple: gm,
                duration_s: Some(GOAL_M / 0.5 + 1.0),
            });
        }
        Self {
            base,
            cases,
            variants: vec![
                ControllerVariant::Nominal,
                ControllerVariant::L1,
                ControllerVariant::Rff,
            ],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cases.is_empty() || self.variants.is_empty() {
            return Err(Error::InvalidConfig(
                "sweep needs at least one case and one variant".into(),
            ));
        }
        self.configs().iter().try_for_each(ScenarioConfig::validate)
    }

    /// One configuration per (case, variant), case-major.
    pub fn configs(&self) -> Vec<ScenarioConfig> {
        let mut out = Vec::with_capacity(self.cases.len() * self.variants.len());
        for case in &self.cases {
            let mut cfg = self.base.clone().with_terrain(case.terrain);
            cfg.name = case.name.clone();
            let dir = {
                let v = cfg.task.velocity_mps;
                let n = v[0].hypot(v[1]);
                if n > 0.0 {
                    [v[0] / n, v[1] / n]
                } else {
                    [1.0, 0.0]
                }
            };
            cfg.task.velocity_mps = [dir[0] * case.speed_mps, dir[1] * case.speed_mps];
            if case.gravity_multiple.is_some() {
                cfg.gravity_multiple = case.gravity_multiple;
            }
            if let Some(d) = case.duration_s {
                cfg.duration_s = d;
            }
            for v in &self.variants {
                out.push(cfg.with_variant(*v));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub config: ScenarioConfig,
    pub log: RunLog,
    pub tracking: Option<TrackingMetrics>,
    pub constraints: ConstraintAudit,
}

impl SweepRun {
    /// Failed runs are reported as "-" in the table.
    pub fn completed_metrics(&self) -> Option<&TrackingMetrics> {
        (!self.log.status.is_failed())
            .then_some(self.tracking.as_ref())
            .flatten()
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub runs: Vec<SweepRun>,
}

impl SweepReport {
    pub fn any_failed(&self) -> bool {
        self.runs.iter().any(|r| r.log.status.is_failed())
    }

    pub fn constraints_clean(&self) -> bool {
        self.runs.iter().all(|r| r.constraints.is_clean())
    }

    pub fn find(&self, case: &str, variant: ControllerVariant) -> Option<&SweepRun> {
        self.runs
            .iter()
            .find(|r| r.config.name == case && r.config.variant == variant)
    }

    /// Mean absolute x/y/z error and the overall norm per case and variant,
    /// in centimetres.
    pub fn table(&self) -> String {
        let mut variants: Vec<ControllerVariant> = Vec::new();
        let mut cases: Vec<&str> = Vec::new();
        for r in &self.runs {
            if !variants.contains(&r.config.variant) {
                variants.push(r.config.variant);
            }
            if !cases.contains(&r.config.name.as_str()) {
                cases.push(&r.config.name);
            }
        }
        let mut s = String::new();
        let _ = write!(s, "{:<20}", "case");
        for axis in ["x", "y", "z", "overall"] {
            for v in &variants {
                let _ = write!(s, " {:>14}", format!("{axis}:{}", v.label()));
            }
        }
        s.push('\n');
        for case in cases {
            let _ = write!(s, "{case:<20}");
            for axis in 0..4 {
                for v in &variants {
                    let cell = self
                        .find(case, *v)
                        .and_then(SweepRun::completed_metrics)
                        .map(|m| {
                            let value = if axis < 3 { m.mean_abs_cm[axis] } else { m.overall_cm };
                            format!("{value:.2}")
                        })
                        .unwrap_or_else(|| "-".into());
                    let _ = write!(s, " {cell:>14}");
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Runs every configuration of `spec` in parallel; each run is independent.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport> {
    spec.validate()?;
    let runs = spec
        .configs()
        .into_par_iter()
        .map(|config| {
            let log = run_scenario(&config)?;
            let m = &config.mpc;
            Ok(SweepRun {
                tracking: tracking_metrics(&log.records).ok(),
                constraints: constraint_audit(&log.records, m.mu, m.f_z_min_n, m.f_z_max_n),
                config,
                log,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { runs })
}
