//! Dense strictly convex QP solver (Goldfarb–Idnani dual active set).
//!
//! ```text
//!     minimize     ½ xᵀ H x + gᵀ x
//!     subject to   A_eq x  = b_eq
//!                  A_in x <= b_in
//! ```
//!
//! The method starts from the unconstrained minimizer and adds violated
//! constraints one at a time while keeping dual feasibility, so every
//! iterate is optimal for the constraints in its active set. It terminates
//! in a finite number of steps and needs `H` positive definite.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Qp {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl Qp {
    pub fn unconstrained(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let n = gradient.len();
        Self {
            hessian,
            gradient,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.gradient.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let shape_ok = self.hessian.shape() == (n, n)
            && self.eq_matrix.ncols() == n
            && self.eq_matrix.nrows() == self.eq_rhs.len()
            && self.ineq_matrix.ncols() == n
            && self.ineq_matrix.nrows() == self.ineq_rhs.len();
        if !shape_ok {
            return Err(Error::DimensionMismatch(format!(
                "QP with {n} variables: H {:?}, A_eq {:?}/{}, A_in {:?}/{}",
                self.hessian.shape(),
                self.eq_matrix.shape(),
                self.eq_rhs.len(),
                self.ineq_matrix.shape(),
                self.ineq_rhs.len()
            )));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x)
    }

    /// Largest violation of any equality or inequality at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let eq = (&self.eq_matrix * x - &self.eq_rhs).amax();
        let ineq = (&self.ineq_matrix * x - &self.ineq_rhs)
            .iter()
            .fold(0.0_f64, |m, v| m.max(*v));
        eq.max(ineq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// Multipliers for `[equalities; inequalities]`, in the sign convention
    /// `H x + g + A_eqᵀ λ_eq + A_inᵀ λ_in = 0` with `λ_in ≥ 0`.
    pub multipliers: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iter: usize,
    /// Relative tolerance on constraint violation.
    pub feasibility_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            feasibility_tol: 1e-10,
        }
    }
}

/// Working factorization: `J` with `J Jᵀ = H⁻¹`, and upper-triangular `R`
/// with `J₁ᵀ N_A = R` for the active normals `N_A`.
struct Factorization {
    n: usize,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    q: usize,
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    (a / h, b / h, h)
}

impl Factorization {
    fn new(hessian: &DMatrix<f64>) -> Option<Self> {
        let n = hessian.nrows();
        let chol = hessian.clone().cholesky()?;
        let l_t = chol.l().transpose();
        let j = l_t.solve_upper_triangular(&DMatrix::identity(n, n))?;
        Some(Self {
            n,
            j,
            r: DMatrix::zeros(n, n),
            q: 0,
        })
    }

    fn rotate_j(&mut self, k: usize, c: f64, s: f64) {
        for row in 0..self.n {
            let a = self.j[(row, k)];
            let b = self.j[(row, k + 1)];
            self.j[(row, k)] = c * a + s * b;
            self.j[(row, k + 1)] = -s * a + c * b;
        }
    }

    /// Appends the normal whose transformed image is `d = Jᵀ n`.
    fn add(&mut self, mut d: DVector<f64>) {
        let q = self.q;
        for k in (q + 1..self.n).rev() {
            if d[k] == 0.0 {
                continue;
            }
            let (c, s, h) = givens(d[k - 1], d[k]);
            d[k - 1] = h;
            d[k] = 0.0;
            self.rotate_j(k - 1, c, s);
        }
        for row in 0..=q {
            self.r[(row, q)] = d[row];
        }
        self.q += 1;
    }

    /// Removes active constraint `l` and restores triangularity.
    fn drop(&mut self, l: usize) {
        let q = self.q;
        for col in l..q - 1 {
            for row in 0..=col + 1 {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        for k in l..q - 1 {
            let a = self.r[(k, k)];
            let b = self.r[(k + 1, k)];
            if b == 0.0 {
                continue;
            }
            let (c, s, h) = givens(a, b);
            self.r[(k, k)] = h;
            self.r[(k + 1, k)] = 0.0;
            for col in k + 1..q - 1 {
                let top = self.r[(k, col)];
                let bottom = self.r[(k + 1, col)];
                self.r[(k, col)] = c * top + s * bottom;
                self.r[(k + 1, col)] = -s * top + c * bottom;
            }
            self.rotate_j(k, c, s);
        }
        self.q -= 1;
    }

    /// Primal step `z = J₂ d₂` and dual step `r = R⁻¹ d₁` for `d = Jᵀ n`.
    fn directions(&self, d: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let q = self.q;
        let z = self.j.columns(q, self.n - q) * d.rows(q, self.n - q);
        let mut r = d.rows(0, q).into_owned();
        for k in (0..q).rev() {
            let mut acc = r[k];
            for col in k + 1..q {
                acc -= self.r[(k, col)] * r[col];
            }
            r[k] = acc / self.r[(k, k)];
        }
        (z, r)
    }
}

/// Solves the QP. Returns an error only for malformed input or a Hessian
/// that is not positive definite; infeasibility and iteration limits are
/// reported through [`QpStatus`].
pub fn solve_qp(qp: &Qp, settings: &QpSettings) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.num_vars();
    let m_eq = qp.eq_rhs.len();
    let m_in = qp.ineq_rhs.len();
    let m = m_eq + m_in;

    // Constraints in the form nᵢᵀ x ≥ cᵢ, one normal per column.
    let mut normals = DMatrix::zeros(n, m);
    let mut rhs = DVector::zeros(m);
    for i in 0..m_eq {
        normals.set_column(i, &qp.eq_matrix.row(i).transpose());
        rhs[i] = qp.eq_rhs[i];
    }
    for i in 0..m_in {
        normals.set_column(m_eq + i, &(-qp.ineq_matrix.row(i).transpose()));
        rhs[m_eq + i] = -qp.ineq_rhs[i];
    }
    let normal_norms: Vec<f64> = (0..m).map(|i| normals.column(i).norm()).collect();

    let mut fac = Factorization::new(&qp.hessian)
        .ok_or_else(|| Error::InvalidConfig("QP Hessian is not positive definite".into()))?;
    let mut x = -(&fac.j * (fac.j.transpose() * &qp.gradient));

    // Active constraints with their (sign-adjusted) multipliers. Equality
    // normals may be flipped so the violated side is always "≥".
    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut duals: Vec<f64> = Vec::with_capacity(n);
    let mut flipped = vec![false; m_eq];
    let mut is_active = vec![false; m];
    let mut iterations = 0;

    let normal_of = |i: usize, flipped: &[bool]| -> (DVector<f64>, f64) {
        let mut nvec = normals.column(i).into_owned();
        let mut c = rhs[i];
        if i < m_eq && flipped[i] {
            nvec.neg_mut();
            c = -c;
        }
        (nvec, c)
    };

    let status = 'outer: loop {
        let x_scale = 1.0 + x.amax();
        let slacks = normals.transpose() * &x - &rhs;
        let tol = |i: usize| settings.feasibility_tol * (1.0 + rhs[i].abs() + normal_norms[i] * x_scale);

        let mut chosen = None;
        for i in 0..m_eq {
            if !is_active[i] && slacks[i].abs() > tol(i) {
                flipped[i] = slacks[i] > 0.0;
                chosen = Some(i);
                break;
            }
        }
        if chosen.is_none() {
            let mut worst = 0.0;
            for i in m_eq..m {
                if is_active[i] {
                    continue;
                }
                let scaled = slacks[i] / normal_norms[i].max(f64::MIN_POSITIVE);
                if slacks[i] < -tol(i) && scaled < worst {
                    worst = scaled;
                    chosen = Some(i);
                }
            }
        }
        let Some(p) = chosen else {
            break QpStatus::Optimal;
        };

        let (np, cp) = normal_of(p, &flipped);
        let mut dual_p = 0.0;
        loop {
            iterations += 1;
            if iterations > settings.max_iter {
                break 'outer QpStatus::MaxIter;
            }
            let d = fac.j.transpose() * &np;
            let (z, r) = fac.directions(&d);
            let curvature = z.dot(&np);

            let mut partial: Option<(f64, usize)> = None;
            for (k, &idx) in active.iter().enumerate() {
                if idx >= m_eq && r[k] > 0.0 {
                    let t = duals[k] / r[k];
                    if partial.is_none_or(|(best, _)| t < best) {
                        partial = Some((t, k));
                    }
                }
            }
            let full = if curvature > 1e-14 * d.norm_squared() {
                Some(-(np.dot(&x) - cp) / curvature)
            } else {
                None
            };

            match (partial, full) {
                (None, None) => break 'outer QpStatus::Infeasible,
                (Some((t, l)), None) => {
                    for (k, u) in duals.iter_mut().enumerate() {
                        *u -= t * r[k];
                    }
                    dual_p += t;
                    remove_active(&mut fac, &mut active, &mut duals, &mut is_active, l);
                }
                (partial, Some(t_full)) => {
                    let (t, drop_index) = match partial {
                        Some((t_part, l)) if t_part < t_full => (t_part, Some(l)),
                        _ => (t_full, None),
                    };
                    x += &z * t;
                    for (k, u) in duals.iter_mut().enumerate() {
                        *u -= t * r[k];
                    }
                    dual_p += t;
                    match drop_index {
                        None => {
                            fac.add(d);
                            active.push(p);
                            duals.push(dual_p);
                            is_active[p] = true;
                            continue 'outer;
                        }
                        Some(l) => {
                            remove_active(&mut fac, &mut active, &mut duals, &mut is_active, l);
                        }
                    }
                }
            }
        }
    };

    let mut multipliers = DVector::zeros(m);
    for (&idx, &u) in active.iter().zip(&duals) {
        // Active constraints satisfy H x + g = Σ u nᵢ.
        multipliers[idx] = if idx < m_eq {
            if flipped[idx] {
                u
            } else {
                -u
            }
        } else {
            u
        };
    }
    Ok(QpSolution {
        objective: qp.objective(&x),
        x,
        status,
        iterations,
        multipliers,
    })
}

fn remove_active(
    fac: &mut Factorization,
    active: &mut Vec<usize>,
    duals: &mut Vec<f64>,
    is_active: &mut [bool],
    l: usize,
) {
    fac.drop(l);
    is_active[active[l]] = false;
    active.remove(l);
    duals.remove(l);
}

/// Norm of the Lagrangian gradient `H x + g + A_eqᵀ λ_eq + A_inᵀ λ_in`.
pub fn stationarity_residual(qp: &Qp, sol: &QpSolution) -> f64 {
    let m_eq = qp.eq_rhs.len();
    let lam_eq = sol.multipliers.rows(0, m_eq);
    let lam_in = sol.multipliers.rows(m_eq, qp.ineq_rhs.len());
    let grad =
        &qp.hessian * &sol.x + &qp.gradient + qp.eq_matrix.transpose() * lam_eq + qp.ineq_matrix.transpose() * lam_in;
    grad.amax()
}
