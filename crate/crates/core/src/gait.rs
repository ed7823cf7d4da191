//! Contact schedule, terrain, body reference trajectory and foothold
//! planning.

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rigid_body::{euler_rate_matrix, rotation_matrix, BodyState, StanceGeometry, NUM_LEGS};

/// Leg order used throughout: front-left, front-right, rear-left, rear-right.
pub const LEG_NAMES: [&str; NUM_LEGS] = ["FL", "FR", "RL", "RR"];

/// Hip locations in the body frame.
pub const DEFAULT_HIPS: [[f64; 3]; NUM_LEGS] = [
    [0.19, 0.11, 0.0],
    [0.19, -0.11, 0.0],
    [-0.19, 0.11, 0.0],
    [-0.19, -0.11, 0.0],
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactSchedule {
    pub gait_period_s: f64,
    pub duty_factor: f64,
    pub phase_offsets: [f64; NUM_LEGS],
}

impl Default for ContactSchedule {
    fn default() -> Self {
        Self::trot()
    }
}

impl ContactSchedule {
    pub fn trot() -> Self {
        Self {
            gait_period_s: 0.3,
            duty_factor: 0.5,
            phase_offsets: [0.0, 0.5, 0.5, 0.0],
        }
    }

    pub fn standing() -> Self {
        Self {
            gait_period_s: 0.3,
            duty_factor: 1.0,
            phase_offsets: [0.0; NUM_LEGS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.gait_period_s.is_finite()
            && self.gait_period_s > 0.0
            && self.duty_factor > 0.0
            && self.duty_factor <= 1.0
            && self.phase_offsets.iter().all(|o| (0.0..1.0).contains(o));
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid contact schedule {self:?}")));
        }
        Ok(())
    }

    /// Fraction of the gait cycle elapsed since the leg's last touchdown.
    pub fn phase(&self, t: f64, leg: usize) -> f64 {
        (t / self.gait_period_s + self.phase_offsets[leg]).rem_euclid(1.0)
    }

    pub fn query(&self, t: f64, leg: usize) -> bool {
        self.phase(t, leg) < self.duty_factor
    }

    pub fn stance_flags(&self, t: f64) -> [bool; NUM_LEGS] {
        std::array::from_fn(|leg| self.query(t, leg))
    }

    pub fn stance_duration(&self) -> f64 {
        self.duty_factor * self.gait_period_s
    }

    /// Start of the stance phase containing `t` (meaningful when the leg is
    /// in stance at `t`).
    pub fn touchdown_time(&self, t: f64, leg: usize) -> f64 {
        t - self.phase(t, leg) * self.gait_period_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Terrain {
    #[default]
    Flat,
    /// Plane rising along +x.
    Slope { angle_deg: f64 },
    /// Square cells of independent uniform height in `[0, max_height_m]`.
    Rough {
        max_height_m: f64,
        cell_size_m: f64,
        seed: u64,
    },
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Terrain {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Flat => true,
            Self::Slope { angle_deg } => angle_deg.is_finite() && angle_deg.abs() < 60.0,
            Self::Rough {
                max_height_m,
                cell_size_m,
                ..
            } => max_height_m.is_finite() && max_height_m >= 0.0 && cell_size_m.is_finite() && cell_size_m > 0.0,
        };
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid terrain {self:?}")));
        }
        Ok(())
    }

    fn cell_height(max_height: f64, seed: u64, i: i64, j: i64) -> f64 {
        let h = splitmix64(seed ^ splitmix64((i as u64).wrapping_mul(0x1f1f_1f1f) ^ splitmix64(j as u64)));
        max_height * (h >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Ground height where feet land.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        match *self {
            Self::Flat => 0.0,
            Self::Slope { angle_deg } => angle_deg.to_radians().tan() * x,
            Self::Rough {
                max_height_m,
                cell_size_m,
                seed,
            } => Self::cell_height(
                max_height_m,
                seed,
                (x / cell_size_m).floor() as i64,
                (y / cell_size_m).floor() as i64,
            ),
        }
    }

    /// Smoothed surface used for the body reference: bilinear interpolation
    /// of cell heights at cell centres on rough terrain.
    pub fn smooth_height(&self, x: f64, y: f64) -> f64 {
        match *self {
            Self::Rough {
                max_height_m,
                cell_size_m,
                seed,
            } => {
                let gx = x / cell_size_m - 0.5;
                let gy = y / cell_size_m - 0.5;
                let (i, j) = (gx.floor(), gy.floor());
                let (fx, fy) = (gx - i, gy - j);
                let (i, j) = (i as i64, j as i64);
                let h = |a, b| Self::cell_height(max_height_m, seed, a, b);
                (1.0 - fx) * (1.0 - fy) * h(i, j)
                    + fx * (1.0 - fy) * h(i + 1, j)
                    + (1.0 - fx) * fy * h(i, j + 1)
                    + fx * fy * h(i + 1, j + 1)
            }
            _ => self.height(x, y),
        }
    }

    /// Gradient of [`Terrain::smooth_height`].
    pub fn smooth_gradient(&self, x: f64, y: f64) -> Vector2<f64> {
        match *self {
            Self::Flat => Vector2::zeros(),
            Self::Slope { angle_deg } => Vector2::new(angle_deg.to_radians().tan(), 0.0),
            Self::Rough { cell_size_m, .. } => {
                let e = 1e-6 * cell_size_m;
                Vector2::new(
                    (self.smooth_height(x + e, y) - self.smooth_height(x - e, y)) / (2.0 * e),
                    (self.smooth_height(x, y + e) - self.smooth_height(x, y - e)) / (2.0 * e),
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePlan {
    /// Horizontal velocity command in the heading frame.
    pub velocity_mps: [f64; 2],
    /// Vertical clearance between body and smoothed ground.
    pub height_m: f64,
    pub yaw_rate_radps: f64,
    /// Stop once this path length has been covered.
    pub goal_distance_m: Option<f64>,
    pub terrain: Terrain,
}

impl Default for ReferencePlan {
    fn default() -> Self {
        Self {
            velocity_mps: [0.75, 0.0],
            height_m: 0.3,
            yaw_rate_radps: 0.0,
            goal_distance_m: None,
            terrain: Terrain::Flat,
        }
    }
}

impl ReferencePlan {
    pub fn validate(&self) -> Result<()> {
        let finite = self.velocity_mps.iter().all(|v| v.is_finite())
            && self.height_m.is_finite()
            && self.height_m > 0.0
            && self.yaw_rate_radps.is_finite()
            && self.goal_distance_m.is_none_or(|g| g.is_finite() && g >= 0.0);
        if !finite {
            return Err(Error::InvalidConfig(format!("invalid reference plan {self:?}")));
        }
        self.terrain.validate()
    }
}

/// Reference body state at time `t` (clamped to `t ≥ 0`).
pub fn reference_at(plan: &ReferencePlan, t: f64) -> BodyState {
    let t = t.max(0.0);
    let cmd = Vector2::new(plan.velocity_mps[0], plan.velocity_mps[1]);
    let speed = cmd.norm();
    let (t_move, moving) = match plan.goal_distance_m {
        Some(goal) if speed > 0.0 && speed * t >= goal => (goal / speed, false),
        _ => (t, true),
    };
    let r = plan.yaw_rate_radps;
    let yaw = r * t;
    let travelled = if r.abs() < 1e-12 {
        cmd * t_move
    } else {
        let (s, c) = (r * t_move).sin_cos();
        Matrix2::new(s, c - 1.0, 1.0 - c, s) * cmd / r
    };
    let heading = Matrix2::new(yaw.cos(), -yaw.sin(), yaw.sin(), yaw.cos());
    let v_xy = if moving { heading * cmd } else { Vector2::zeros() };

    let (x, y) = (travelled.x, travelled.y);
    let grad = plan.terrain.smooth_gradient(x, y);
    let z = plan.terrain.smooth_height(x, y) + plan.height_m;
    let v_z = grad.dot(&v_xy);

    let (roll, pitch) = match plan.terrain {
        Terrain::Slope { .. } => {
            let forward = Vector2::new(yaw.cos(), yaw.sin());
            let lateral = Vector2::new(-yaw.sin(), yaw.cos());
            (grad.dot(&lateral).atan(), -grad.dot(&forward).atan())
        }
        _ => (0.0, 0.0),
    };
    let theta = Vector3::new(roll, pitch, yaw);
    let omega = match euler_rate_matrix(&theta).ok().and_then(|m| m.try_inverse()) {
        Some(inv) => inv * Vector3::new(0.0, 0.0, r),
        None => Vector3::zeros(),
    };
    BodyState {
        p: Vector3::new(x, y, z),
        theta,
        v: Vector3::new(v_xy.x, v_xy.y, v_z),
        omega,
    }
}

/// Raibert-style foothold selection with a reach limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FootholdPlanner {
    pub hips_body: [[f64; 3]; NUM_LEGS],
    pub reach_radius_m: f64,
}

impl Default for FootholdPlanner {
    fn default() -> Self {
        Self {
            hips_body: DEFAULT_HIPS,
            reach_radius_m: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Foothold {
    pub position: Vector3<f64>,
    /// The raw target was outside the reach radius and has been pulled in.
    pub clamped: bool,
}

impl FootholdPlanner {
    pub fn hip_world(&self, x: &BodyState, leg: usize) -> Vector3<f64> {
        x.p + rotation_matrix(&x.theta) * Vector3::from(self.hips_body[leg])
    }

    /// Hip projection plus half a stance duration of velocity feed-forward,
    /// placed on the terrain surface.
    pub fn foothold_for(&self, leg: usize, schedule: &ContactSchedule, x: &BodyState, terrain: &Terrain) -> Foothold {
        let hip = self.hip_world(x, leg);
        let shift = x.v.xy() * (schedule.stance_duration() / 2.0);
        let target_xy = hip.xy() + shift;
        let mut foot = Vector3::new(target_xy.x, target_xy.y, terrain.height(target_xy.x, target_xy.y));
        let clamped = (foot - hip).norm() > self.reach_radius_m;
        if clamped {
            let drop = hip.z - foot.z;
            let max_radius = (self.reach_radius_m.powi(2) - drop * drop).max(0.0).sqrt();
            let offset = target_xy - hip.xy();
            let pulled = hip.xy() + offset * (max_radius / offset.norm().max(f64::MIN_POSITIVE));
            foot = Vector3::new(pulled.x, pulled.y, terrain.height(pulled.x, pulled.y));
        }
        Foothold {
            position: foot,
            clamped,
        }
    }

    /// Foothold of the stance phase of `leg` that contains `t`, planned from
    /// the reference pose at its touchdown moved horizontally by `offset`.
    pub fn stance_foothold(
        &self,
        leg: usize,
        t: f64,
        schedule: &ContactSchedule,
        plan: &ReferencePlan,
        offset: &Vector2<f64>,
    ) -> Foothold {
        let touchdown = shifted(reference_at(plan, schedule.touchdown_time(t, leg)), offset);
        self.foothold_for(leg, schedule, &touchdown, &plan.terrain)
    }

    /// World foot positions at time `t`: latched footholds for legs already
    /// on the ground, planned ones for later touchdowns, hip projections onto
    /// the ground for swing legs.
    pub fn feet_at(
        &self,
        t: f64,
        schedule: &ContactSchedule,
        plan: &ReferencePlan,
        pose: &BodyState,
        latch: &FootholdLatch,
        offset: &Vector2<f64>,
    ) -> ([Vector3<f64>; NUM_LEGS], usize) {
        let mut clamped = 0;
        let feet = std::array::from_fn(|leg| {
            if schedule.query(t, leg) {
                if let Some(p) = latch.get(leg, schedule.touchdown_time(t, leg)) {
                    return p;
                }
                let f = self.stance_foothold(leg, t, schedule, plan, offset);
                clamped += usize::from(f.clamped);
                f.position
            } else {
                let hip = self.hip_world(pose, leg);
                Vector3::new(hip.x, hip.y, plan.terrain.height(hip.x, hip.y))
            }
        });
        (feet, clamped)
    }
}

fn shifted(mut x: BodyState, offset: &Vector2<f64>) -> BodyState {
    x.p.x += offset.x;
    x.p.y += offset.y;
    x
}

/// Footholds fixed at touchdown from the measured state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FootholdLatch {
    feet: [Option<(f64, Vector3<f64>)>; NUM_LEGS],
}

impl FootholdLatch {
    /// Latches a foothold for every leg that touched down since the last
    /// call and releases swing legs. Returns the number of clamped targets.
    pub fn update(
        &mut self,
        t: f64,
        schedule: &ContactSchedule,
        planner: &FootholdPlanner,
        plan: &ReferencePlan,
        measured: &BodyState,
    ) -> usize {
        let mut clamped = 0;
        for leg in 0..NUM_LEGS {
            if !schedule.query(t, leg) {
                self.feet[leg] = None;
                continue;
            }
            let td = schedule.touchdown_time(t, leg);
            if self.get(leg, td).is_none() {
                let f = planner.foothold_for(leg, schedule, measured, &plan.terrain);
                clamped += usize::from(f.clamped);
                self.feet[leg] = Some((td, f.position));
            }
        }
        clamped
    }

    pub fn get(&self, leg: usize, touchdown: f64) -> Option<Vector3<f64>> {
        self.feet[leg].and_then(|(td, p)| ((td - touchdown).abs() < 1e-9).then_some(p))
    }
}

/// Per-stage stance geometry and contact flags over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonGeometry {
    pub geometry: Vec<StanceGeometry>,
    pub contact_flags: Vec<[bool; NUM_LEGS]>,
    pub clamped_footholds: usize,
}

/// Stage 0 uses the measured state. Later stages use the reference poses
/// moved by the current horizontal tracking error, so lever arms to latched
/// feet stay consistent with where the body actually is. Lever arms are
/// evaluated half a stage ahead of the pose.
pub fn stance_geometry_over_horizon(
    schedule: &ContactSchedule,
    planner: &FootholdPlanner,
    plan: &ReferencePlan,
    x_t: &BodyState,
    latch: &FootholdLatch,
    reference: &[BodyState],
    t0: f64,
    dt: f64,
    horizon: usize,
) -> Result<HorizonGeometry> {
    if reference.len() < horizon {
        return Err(Error::DimensionMismatch(format!(
            "need {horizon} reference poses, got {}",
            reference.len()
        )));
    }
    let mut out = HorizonGeometry {
        geometry: Vec::with_capacity(horizon),
        contact_flags: Vec::with_capacity(horizon),
        clamped_footholds: 0,
    };
    let offset = x_t.p.xy() - reference[0].p.xy();
    for k in 0..horizon {
        let t = t0 + k as f64 * dt;
        let pose = if k == 0 { *x_t } else { shifted(reference[k], &offset) };
        let (feet, clamped) = planner.feet_at(t, schedule, plan, &pose, latch, &offset);
        out.clamped_footholds += clamped;
        // Inputs are held over the whole stage while the body moves, so lever
        // arms are taken at the stage midpoint.
        let mut lever_pose = pose;
        if k == 0 {
            lever_pose.p += x_t.v * (dt / 2.0);
        } else if k + 1 < reference.len() {
            lever_pose.p += (reference[k + 1].p - reference[k].p) / 2.0;
        }
        out.geometry.push(StanceGeometry::from_world(&lever_pose, &feet));
        out.contact_flags.push(schedule.stance_flags(t));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trot_has_two_diagonal_stance_legs() {
        let s = ContactSchedule::trot();
        for i in 0..300 {
            let flags = s.stance_flags(i as f64 * 0.001 + 0.0005);
            assert_eq!(flags.iter().filter(|f| **f).count(), 2);
            assert_eq!(flags[0], flags[3]);
            assert_eq!(flags[1], flags[2]);
        }
    }

    #[test]
    fn flat_reference_at_two_seconds() {
        let r = reference_at(&ReferencePlan::default(), 2.0);
        assert!((r.p - Vector3::new(1.5, 0.0, 0.3)).norm() < 1e-12);
        assert!((r.v - Vector3::new(0.75, 0.0, 0.0)).norm() < 1e-12);
        let start = reference_at(&ReferencePlan::default(), 0.0);
        assert!((start.p - Vector3::new(0.0, 0.0, 0.3)).norm() < 1e-15);
    }

    #[test]
    fn slope_reference_uses_vertical_clearance() {
        let plan = ReferencePlan {
            terrain: Terrain::Slope { angle_deg: 20.0 },
            ..ReferencePlan::default()
        };
        let r = reference_at(&plan, 1.0 / 0.75);
        let expected = 20f64.to_radians().tan() + 0.3;
        assert!((r.p.x - 1.0).abs() < 1e-12 && (r.p.z - expected).abs() < 1e-12);
        assert!((r.theta.y + 20f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn goal_stops_the_reference() {
        let plan = ReferencePlan {
            goal_distance_m: Some(6.0),
            ..ReferencePlan::default()
        };
        let r = reference_at(&plan, 20.0);
        assert!((r.p.x - 6.0).abs() < 1e-12 && r.v.norm() == 0.0);
    }

    #[test]
    fn foothold_examples() {
        let planner = FootholdPlanner::default();
        let sched = ContactSchedule::trot();
        let mut x = BodyState::at_position(Vector3::new(0.0, 0.0, 0.3));
        let still = planner.foothold_for(0, &sched, &x, &Terrain::Flat);
        assert!((still.position - Vector3::new(0.19, 0.11, 0.0)).norm() < 1e-15);
        x.v.x = 0.75;
        let moving = planner.foothold_for(0, &sched, &x, &Terrain::Flat);
        assert!((moving.position.x - 0.19 - 0.05625).abs() < 1e-12);
        assert!(!moving.clamped);
    }

    #[test]
    fn foothold_on_rough_cell_takes_cell_height() {
        let terrain = Terrain::Rough {
            max_height_m: 0.25,
            cell_size_m: 0.2,
            seed: 3,
        };
        let planner = FootholdPlanner::default();
        let x = BodyState::at_position(Vector3::new(0.33, -0.41, 0.4));
        let f = planner.foothold_for(1, &ContactSchedule::trot(), &x, &terrain);
        assert_eq!(f.position.z, terrain.height(f.position.x, f.position.y));
        assert!((0.0..=0.25).contains(&f.position.z));
    }

    #[test]
    fn far_foothold_is_clamped() {
        let planner = FootholdPlanner::default();
        let mut x = BodyState::at_position(Vector3::new(0.0, 0.0, 0.3));
        x.v.x = 10.0;
        let f = planner.foothold_for(0, &ContactSchedule::trot(), &x, &Terrain::Flat);
        assert!(f.clamped);
        let hip = planner.hip_world(&x, 0);
        assert!((f.position - hip).norm() <= 0.5 + 1e-12);
    }

    #[test]
    fn standing_geometry_is_constant() {
        let plan = ReferencePlan {
            velocity_mps: [0.0, 0.0],
            ..ReferencePlan::default()
        };
        let sched = ContactSchedule::standing();
        let reference: Vec<_> = (0..=10).map(|k| reference_at(&plan, 0.03 * k as f64)).collect();
        let g = stance_geometry_over_horizon(
            &sched,
            &FootholdPlanner::default(),
            &plan,
            &reference[0],
            &FootholdLatch::default(),
            &reference,
            0.0,
            0.03,
            10,
        )
        .unwrap();
        assert!(g.geometry.iter().all(|s| *s == g.geometry[0]));
        assert!(g.contact_flags.iter().all(|f| *f == [true; 4]));
    }
}
