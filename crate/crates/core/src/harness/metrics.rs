//! Tracking error and regret measures over run logs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::run::{RunLog, StepRecord};
use crate::mpc::constraint_violation;

/// Position tracking error in centimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub steps: usize,
    /// Mean absolute error per axis.
    pub mean_abs_cm: [f64; 3],
    /// Mean Euclidean norm of the position error.
    pub overall_cm: f64,
    /// Sum of the per-axis means.
    pub axis_sum_cm: f64,
    /// Largest absolute height error, in metres.
    pub peak_height_error_m: f64,
}

pub const OVERALL_DEFINITION: &str =
    "overall_cm = mean over steps of ||p - p_ref||; axis_sum_cm = sum of per-axis mean |error|";

pub fn tracking_metrics(records: &[StepRecord]) -> Result<TrackingMetrics> {
    if records.is_empty() {
        return Err(Error::EmptyLog);
    }
    let n = records.len() as f64;
    let mut axis = [0.0; 3];
    let mut overall = 0.0;
    let mut peak: f64 = 0.0;
    for r in records {
        let e = r.x.p - r.x_ref.p;
        for (acc, c) in axis.iter_mut().zip(e.iter()) {
            *acc += c.abs();
        }
        overall += e.norm();
        peak = peak.max(e.z.abs());
    }
    let mean_abs_cm = axis.map(|a| 100.0 * a / n);
    Ok(TrackingMetrics {
        steps: records.len(),
        mean_abs_cm,
        overall_cm: 100.0 * overall / n,
        axis_sum_cm: mean_abs_cm.iter().sum(),
        peak_height_error_m: peak,
    })
}

fn check_comparable(log: &RunLog, comparator: &RunLog) -> Result<()> {
    if log.fingerprint != comparator.fingerprint {
        return Err(Error::MismatchedRuns(format!(
            "'{}' and '{}' differ in more than the controller variant",
            log.name, comparator.name
        )));
    }
    if log.records.len() != comparator.records.len() {
        return Err(Error::MismatchedRuns(format!(
            "{} vs {} logged steps",
            log.records.len(),
            comparator.records.len()
        )));
    }
    Ok(())
}

/// Cumulative stage cost of `log` minus that of the clairvoyant run.
pub fn dynamic_regret(log: &RunLog, clairvoyant: &RunLog) -> Result<f64> {
    check_comparable(log, clairvoyant)?;
    Ok(log.stage_costs().sum::<f64>() - clairvoyant.stage_costs().sum::<f64>())
}

/// Running regret `Regret_t` for every `t`.
pub fn cumulative_regret(log: &RunLog, clairvoyant: &RunLog) -> Result<Vec<f64>> {
    check_comparable(log, clairvoyant)?;
    let mut acc = 0.0;
    Ok(log
        .stage_costs()
        .zip(clairvoyant.stage_costs())
        .map(|(a, b)| {
            acc += a - b;
            acc
        })
        .collect())
}

/// `Regret_T / T` evaluated at the end of each of `parts` equal windows.
pub fn average_regret_at_checkpoints(cumulative: &[f64], parts: usize) -> Vec<f64> {
    let n = cumulative.len();
    (1..=parts)
        .filter_map(|q| {
            let end = q * n / parts;
            (end > 0).then(|| cumulative[end - 1] / end as f64)
        })
        .collect()
}

/// Violations above this size count against the constraint audit.
pub const CONSTRAINT_TOL: f64 = 1e-8;

/// Commanded inputs checked against the pyramid, normal-force bounds and
/// zero swing forces.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintAudit {
    pub max_violation: f64,
    pub violating_steps: usize,
    pub max_swing_force_n: f64,
}

impl ConstraintAudit {
    pub fn is_clean(&self) -> bool {
        self.violating_steps == 0
    }
}

pub fn constraint_audit(records: &[StepRecord], mu: f64, f_z_min: f64, f_z_max: f64) -> ConstraintAudit {
    let mut audit = ConstraintAudit::default();
    for r in records {
        let v = constraint_violation(&r.u, &r.stance, mu, f_z_min, f_z_max);
        audit.max_violation = audit.max_violation.max(v);
        audit.violating_steps += usize::from(v > CONSTRAINT_TOL);
        for (f, on) in r.u.forces.iter().zip(r.stance) {
            if !on {
                audit.max_swing_force_n = audit.max_swing_force_n.max(f.amax());
            }
        }
    }
    audit
}
