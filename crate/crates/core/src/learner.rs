//! Online least-squares estimation of the feature coefficients by projected
//! online gradient descent, plus the hindsight comparator used to measure
//! estimation regret.

use nalgebra::{DMatrix, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ResidualInput, ResidualModel, WRENCH_DIM};
use crate::rigid_body::ResidualWrench;

/// Relative ridge applied to the comparator normal equations.
pub const COMPARATOR_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub eta: f64,
    pub projection_enabled: bool,
    pub b_h: f64,
}

impl LearnerConfig {
    pub fn new(eta: f64) -> Result<Self> {
        let cfg = Self {
            eta,
            projection_enabled: false,
            b_h: f64::INFINITY,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_projection(mut self, b_h: f64) -> Result<Self> {
        self.projection_enabled = true;
        self.b_h = b_h;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.eta
            )));
        }
        if self.projection_enabled && !(self.b_h > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "projection bound must be positive, got {}",
                self.b_h
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub t: usize,
    pub loss: f64,
}

/// Squared prediction error `‖h − ĥ(z)‖²`.
pub fn loss(model: &ResidualModel, z: &ResidualInput, target: &ResidualWrench) -> f64 {
    (target.to_vector() - model.predict_vector(z)).norm_squared()
}

/// Gradient of [`loss`] with respect to every coefficient block:
/// block `i` is `−(2/M) φᵢ(z) (h − ĥ(z))`.
pub fn gradient(model: &ResidualModel, z: &ResidualInput, target: &ResidualWrench) -> Vec<Vector6<f64>> {
    let error = target.to_vector() - model.predict_vector(z);
    let scale = -2.0 / model.num_features() as f64;
    model.features(z).iter().map(|phi| error * (scale * phi)).collect()
}

/// Euclidean projection onto the ball `‖a‖ ≤ bound`.
pub fn project_block(a: &Vector6<f64>, bound: f64) -> Vector6<f64> {
    let n = a.norm();
    if n <= bound {
        *a
    } else {
        a * (bound / n)
    }
}

/// One gradient step on the instantaneous loss, followed by per-block
/// projection when enabled. Returns the loss evaluated before the step.
pub fn ogd_step(model: &mut ResidualModel, z: &ResidualInput, target: &ResidualWrench, cfg: &LearnerConfig) -> f64 {
    let phi = model.features(z);
    let m = model.num_features() as f64;
    let prediction = model
        .alpha()
        .iter()
        .zip(phi.iter())
        .fold(Vector6::zeros(), |acc, (a, p)| acc + a * *p)
        / m;
    let error = target.to_vector() - prediction;
    let loss = error.norm_squared();
    let scale = 2.0 * cfg.eta / m;
    for (a, p) in model.alpha_mut().iter_mut().zip(phi.iter()) {
        *a += error * (scale * p);
        if cfg.projection_enabled {
            *a = project_block(a, cfg.b_h);
        }
    }
    loss
}

/// Learning-rate schedule for replaying a stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EtaSchedule {
    Constant {
        eta: f64,
    },
    /// `η = scale / √T` for the whole replay of length `T`.
    InverseSqrtHorizon {
        scale: f64,
    },
    /// `η_t = scale / √t`, `t = 1, 2, …`.
    InverseSqrtStep {
        scale: f64,
    },
}

impl EtaSchedule {
    pub fn eta(&self, t: usize, horizon: usize) -> f64 {
        match *self {
            Self::Constant { eta } => eta,
            Self::InverseSqrtHorizon { scale } => scale / (horizon as f64).sqrt(),
            Self::InverseSqrtStep { scale } => scale / ((t + 1) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationRegret {
    pub online_loss: f64,
    pub comparator_loss: f64,
    pub regret: f64,
    /// Absolute ridge that was added to the comparator normal equations.
    pub ridge: f64,
    pub comparator: Vec<Vector6<f64>>,
}

/// Best fixed coefficients in hindsight: ridge-regularized normal equations
/// over the whole stream. Returns the blocks and the absolute ridge used.
pub fn fit_comparator(
    model: &ResidualModel,
    stream: &[(ResidualInput, ResidualWrench)],
) -> Result<(Vec<Vector6<f64>>, f64)> {
    let m = model.num_features();
    let t = stream.len();
    let mut design = DMatrix::zeros(t, m);
    let mut targets = DMatrix::zeros(t, WRENCH_DIM);
    for (row, (z, h)) in stream.iter().enumerate() {
        let phi = model.features(z) / m as f64;
        design.row_mut(row).copy_from(&phi.transpose());
        targets.row_mut(row).copy_from(&h.to_vector().transpose());
    }
    let mut gram = design.transpose() * &design;
    let ridge = COMPARATOR_RIDGE * (gram.trace() / m as f64).max(f64::MIN_POSITIVE);
    for i in 0..m {
        gram[(i, i)] += ridge;
    }
    let rhs = design.transpose() * targets;
    let chol = gram.cholesky().ok_or(Error::SingularComparator)?;
    let solution = chol.solve(&rhs);
    if solution.iter().any(|c| !c.is_finite()) {
        return Err(Error::SingularComparator);
    }
    let blocks = (0..m)
        .map(|i| Vector6::from_iterator(solution.row(i).iter().copied()))
        .collect();
    Ok((blocks, ridge))
}

/// Replays OGD from `initial` over the stream and compares the cumulative
/// online loss with that of the hindsight comparator.
pub fn estimation_regret(
    initial: &ResidualModel,
    stream: &[(ResidualInput, ResidualWrench)],
    schedule: EtaSchedule,
    projection: Option<f64>,
) -> Result<EstimationRegret> {
    if stream.is_empty() {
        return Err(Error::EmptyLog);
    }
    let horizon = stream.len();
    let mut model = initial.clone();
    let mut online_loss = 0.0;
    for (t, (z, h)) in stream.iter().enumerate() {
        let mut cfg = LearnerConfig::new(schedule.eta(t, horizon))?;
        if let Some(bound) = projection {
            cfg = cfg.with_projection(bound)?;
        }
        online_loss += ogd_step(&mut model, z, h, &cfg);
    }
    let (comparator, ridge) = fit_comparator(initial, stream)?;
    let mut fitted = initial.clone();
    fitted.alpha_mut().copy_from_slice(&comparator);
    let comparator_loss: f64 = stream.iter().map(|(z, h)| loss(&fitted, z, h)).sum();
    Ok(EstimationRegret {
        online_loss,
        comparator_loss,
        regret: online_loss - comparator_loss,
        ridge,
        comparator,
    })
}
