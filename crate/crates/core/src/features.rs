//! Vector-valued random Fourier feature model of the residual wrench.
//!
//! `ĥ(z; α) = (1/M) Σᵢ cos(wᵢᵀz + bᵢ) αᵢ` with `αᵢ ∈ ℝ⁶`. The feature
//! parameters are drawn once from a seed and never change; only the
//! coefficient blocks are learned.

use std::f64::consts::TAU;

use nalgebra::{DVector, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rigid_body::{normalized_contact_wrench, BodyParams, BodyState, FootForces, ResidualWrench, StanceGeometry};

/// Output dimension of every coefficient block.
pub const WRENCH_DIM: usize = 6;

/// Feature input used in closed loop: `[v, θ, ω, Jᵀu]`.
pub const CONTROL_FEATURE_DIM: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample {
    pub w: DVector<f64>,
    pub b: f64,
}

/// Feature input vector `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualInput(pub DVector<f64>);

impl ResidualInput {
    /// Builds `z = [v, θ, ω, Jᵀu]`, where `Jᵀu` is the contact wrench divided
    /// through by mass and inertia.
    pub fn from_state(x: &BodyState, u: &FootForces, geom: &StanceGeometry, params: &BodyParams) -> Self {
        let wrench = normalized_contact_wrench(x, u, geom, params);
        let mut z = DVector::zeros(CONTROL_FEATURE_DIM);
        z.fixed_rows_mut::<3>(0).copy_from(&x.v);
        z.fixed_rows_mut::<3>(3).copy_from(&x.theta);
        z.fixed_rows_mut::<3>(6).copy_from(&x.omega);
        z.fixed_rows_mut::<6>(9).copy_from(&wrench);
        Self(z)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Draws `m` i.i.d. feature parameters: `w ~ N(0, σ² I)`, `b ~ U[0, 2π)`.
pub fn sample_features(m: usize, d_z: usize, sigma_w: f64, seed: u64) -> Result<Vec<FeatureSample>> {
    if m == 0 {
        return Err(Error::InvalidConfig("number of features must be at least 1".into()));
    }
    if d_z == 0 {
        return Err(Error::InvalidConfig("feature dimension must be at least 1".into()));
    }
    if !(sigma_w.is_finite() && sigma_w > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "feature standard deviation must be positive, got {sigma_w}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma_w).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok((0..m)
        .map(|_| {
            let w = DVector::from_iterator(d_z, (0..d_z).map(|_| normal.sample(&mut rng)));
            let b = rng.random_range(0.0..TAU);
            FeatureSample { w, b }
        })
        .collect())
}

/// Scalar feature `cos(wᵀz + b)`.
pub fn feature_value(z: &ResidualInput, s: &FeatureSample) -> f64 {
    (s.w.dot(&z.0) + s.b).cos()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualModel {
    samples: Vec<FeatureSample>,
    alpha: Vec<Vector6<f64>>,
    b_h: Option<f64>,
    d_z: usize,
    sigma_w: f64,
    seed: u64,
}

impl ResidualModel {
    /// Samples fresh features and starts from `α = 0`.
    pub fn new(m: usize, d_z: usize, sigma_w: f64, seed: u64, b_h: Option<f64>) -> Result<Self> {
        if let Some(bound) = b_h {
            if !(bound.is_finite() && bound > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "coefficient bound must be positive, got {bound}"
                )));
            }
        }
        let samples = sample_features(m, d_z, sigma_w, seed)?;
        Ok(Self {
            alpha: vec![Vector6::zeros(); m],
            samples,
            b_h,
            d_z,
            sigma_w,
            seed,
        })
    }

    /// Model over explicitly given features, for tests and synthetic targets.
    pub fn from_samples(samples: Vec<FeatureSample>, alpha: Vec<Vector6<f64>>) -> Result<Self> {
        if samples.is_empty() || samples.len() != alpha.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature samples for {} coefficient blocks",
                samples.len(),
                alpha.len()
            )));
        }
        let d_z = samples[0].w.len();
        if samples.iter().any(|s| s.w.len() != d_z) {
            return Err(Error::DimensionMismatch("feature directions differ in length".into()));
        }
        Ok(Self {
            samples,
            alpha,
            b_h: None,
            d_z,
            sigma_w: 0.0,
            seed: 0,
        })
    }

    pub fn num_features(&self) -> usize {
        self.samples.len()
    }

    pub fn d_z(&self) -> usize {
        self.d_z
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn b_h(&self) -> Option<f64> {
        self.b_h
    }

    pub fn set_b_h(&mut self, b_h: Option<f64>) {
        self.b_h = b_h;
    }

    pub fn samples(&self) -> &[FeatureSample] {
        &self.samples
    }

    pub fn alpha(&self) -> &[Vector6<f64>] {
        &self.alpha
    }

    pub fn alpha_mut(&mut self) -> &mut [Vector6<f64>] {
        &mut self.alpha
    }

    /// All scalar features at `z`.
    pub fn features(&self, z: &ResidualInput) -> DVector<f64> {
        DVector::from_iterator(self.samples.len(), self.samples.iter().map(|s| feature_value(z, s)))
    }

    /// Prediction as a raw 6-vector `(1/M) Σ φᵢ αᵢ`.
    pub fn predict_vector(&self, z: &ResidualInput) -> Vector6<f64> {
        debug_assert_eq!(z.dim(), self.d_z);
        let mut acc = Vector6::zeros();
        for (s, a) in self.samples.iter().zip(&self.alpha) {
            acc += a * feature_value(z, s);
        }
        acc / self.samples.len() as f64
    }

    pub fn predict(&self, z: &ResidualInput) -> ResidualWrench {
        ResidualWrench::from_vector(&self.predict_vector(z))
    }

    /// Flat single-row CSV record: `seed,m,d_z,sigma_w,b_h,alpha_0,…`.
    ///
    /// Features are regenerated from the seed when the record is read back.
    pub fn to_record(&self) -> String {
        let mut header = vec![
            "seed".to_string(),
            "m".into(),
            "d_z".into(),
            "sigma_w".into(),
            "b_h".into(),
        ];
        let mut row = vec![
            self.seed.to_string(),
            self.samples.len().to_string(),
            self.d_z.to_string(),
            self.sigma_w.to_string(),
            self.b_h.map(|b| b.to_string()).unwrap_or_default(),
        ];
        for (i, a) in self.alpha.iter().enumerate() {
            for (k, c) in a.iter().enumerate() {
                header.push(format!("alpha_{i}_{k}"));
                row.push(c.to_string());
            }
        }
        format!("{}\n{}\n", header.join(","), row.join(","))
    }

    /// Parses a record written by [`ResidualModel::to_record`].
    pub fn from_record(text: &str) -> Result<Self> {
        /// Guards feature regeneration against absurd sizes in untrusted records.
        const MAX_FEATURE_COUNT: usize = 1 << 16;
        const MAX_FEATURE_DIM: usize = 1 << 10;

        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        let expected = ["seed", "m", "d_z", "sigma_w", "b_h"];
        if header.len() < expected.len() || header.iter().zip(expected).any(|(got, want)| got != want) {
            return Err(Error::Parse("model record header is malformed".into()));
        }
        let mut records = reader.records();
        let row = records
            .next()
            .ok_or_else(|| Error::Parse("model record has no data row".into()))?
            .map_err(|e| Error::Parse(e.to_string()))?;
        if records.next().is_some() {
            return Err(Error::Parse("model record has more than one data row".into()));
        }
        let field = |i: usize| row.get(i).unwrap_or("");
        let parse_err = |name: &str| Error::Parse(format!("bad `{name}` field"));
        let seed: u64 = field(0).parse().map_err(|_| parse_err("seed"))?;
        let m: usize = field(1).parse().map_err(|_| parse_err("m"))?;
        let d_z: usize = field(2).parse().map_err(|_| parse_err("d_z"))?;
        let sigma_w: f64 = field(3).parse().map_err(|_| parse_err("sigma_w"))?;
        let b_h = match field(4) {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| parse_err("b_h"))?),
        };
        if m > MAX_FEATURE_COUNT || d_z > MAX_FEATURE_DIM {
            return Err(Error::Parse(format!("model size m={m}, d_z={d_z} out of range")));
        }
        let n_alpha = m
            .checked_mul(WRENCH_DIM)
            .ok_or_else(|| Error::Parse("feature count overflows".into()))?;
        if row.len() != expected.len() + n_alpha || header.len() != row.len() {
            return Err(Error::Parse(format!(
                "expected {} coefficient columns, found {}",
                n_alpha,
                row.len().saturating_sub(expected.len())
            )));
        }
        let mut coeffs = Vec::with_capacity(n_alpha);
        for i in 0..n_alpha {
            let c: f64 = field(expected.len() + i).parse().map_err(|_| parse_err("alpha"))?;
            if !c.is_finite() {
                return Err(Error::NonFinite("model coefficients"));
            }
            coeffs.push(c);
        }
        let mut model = Self::new(m, d_z, sigma_w, seed, b_h)?;
        for (i, block) in model.alpha.iter_mut().enumerate() {
            *block = Vector6::from_column_slice(&coeffs[WRENCH_DIM * i..WRENCH_DIM * (i + 1)]);
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sample(w: Vec<f64>, b: f64) -> FeatureSample {
        FeatureSample {
            w: DVector::from_vec(w),
            b,
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_features(50, 15, 0.01, 7).unwrap();
        let b = sample_features(50, 15, 0.01, 7).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(a, b);
        assert_ne!(a, sample_features(50, 15, 0.01, 8).unwrap());
        assert!(a.iter().all(|s| (0.0..TAU).contains(&s.b)));
    }

    #[test]
    fn sampled_direction_spread_matches_sigma() {
        let samples = sample_features(50, 15, 0.01, 7).unwrap();
        let all: Vec<f64> = samples.iter().flat_map(|s| s.w.iter().copied()).collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        assert!((sd - 0.01).abs() <= 0.15 * 0.01, "sample sd {sd}");
    }

    #[test]
    fn invalid_sampling_config() {
        assert!(matches!(sample_features(0, 15, 0.01, 1), Err(Error::InvalidConfig(_))));
        assert!(sample_features(5, 15, 0.0, 1).is_err());
        assert!(sample_features(5, 15, -1.0, 1).is_err());
    }

    #[test]
    fn feature_value_edges() {
        let z = ResidualInput(DVector::from_vec(vec![3.0, -2.0]));
        assert_eq!(feature_value(&z, &sample(vec![0.0, 0.0], 0.0)), 1.0);
        assert_eq!(feature_value(&z, &sample(vec![0.0, 0.0], PI)), -1.0);
    }

    #[test]
    fn zero_coefficients_predict_zero() {
        let model = ResidualModel::new(20, 15, 0.5, 3, None).unwrap();
        let z = ResidualInput(DVector::from_fn(15, |i, _| i as f64 - 4.0));
        assert_eq!(model.predict(&z), ResidualWrench::zeros());
    }

    #[test]
    fn single_constant_feature() {
        let model = ResidualModel::from_samples(
            vec![sample(vec![0.0; 15], 0.0)],
            vec![Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)],
        )
        .unwrap();
        let h = model.predict(&ResidualInput(DVector::from_element(15, 0.7)));
        assert_eq!(h.force, nalgebra::Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(h.torque, nalgebra::Vector3::zeros());
    }

    #[test]
    fn record_round_trip() {
        let mut model = ResidualModel::new(4, 15, 0.01, 11, Some(3.5)).unwrap();
        for (i, a) in model.alpha_mut().iter_mut().enumerate() {
            *a = Vector6::from_fn(|k, _| (i * 6 + k) as f64 * 0.1 - 1.0 / 3.0);
        }
        let text = model.to_record();
        let back = ResidualModel::from_record(&text).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn record_rejects_garbage() {
        assert!(ResidualModel::from_record("").is_err());
        assert!(ResidualModel::from_record("seed,m,d_z,sigma_w,b_h\n1,1,1,0.1,\n").is_err());
        assert!(ResidualModel::from_record("seed,m,d_z,sigma_w,b_h\n1,99999999,1,0.1,\n").is_err());
    }
}
