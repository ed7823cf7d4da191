//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the library's dynamics, assembly or solver code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use olmpc_core::mpc::{CostWeights, InputConstraintSet, Linearization, MpcProblem};
use olmpc_core::rigid_body::{BodyParams, BodyState, FootForces, StanceGeometry, NUM_LEGS};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// random instances

pub fn uniform3(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    )
}

pub fn random_state(rng: &mut ChaCha8Rng) -> BodyState {
    BodyState {
        p: uniform3(rng, -2.0, 2.0),
        theta: Vector3::new(
            rng.random_range(-0.6..0.6),
            rng.random_range(-1.2..1.2),
            rng.random_range(-3.1..3.1),
        ),
        v: uniform3(rng, -1.5, 1.5),
        omega: uniform3(rng, -3.0, 3.0),
    }
}

pub fn random_geometry(rng: &mut ChaCha8Rng) -> StanceGeometry {
    StanceGeometry::new(std::array::from_fn(|_| uniform3(rng, -0.4, 0.4)))
}

pub fn random_forces(rng: &mut ChaCha8Rng) -> FootForces {
    FootForces {
        forces: std::array::from_fn(|_| uniform3(rng, -60.0, 60.0)),
    }
}

pub fn random_params(rng: &mut ChaCha8Rng) -> BodyParams {
    let a = Matrix3::from_fn(|_, _| rng.random_range(-0.2..0.2));
    let inertia = a * a.transpose() + Matrix3::from_diagonal(&uniform3(rng, 0.05, 0.4));
    BodyParams::new(rng.random_range(5.0..25.0), inertia, Vector3::new(0.0, 0.0, -9.81)).unwrap()
}

pub fn random_weights(rng: &mut ChaCha8Rng) -> CostWeights {
    let mut w = || -> [f64; 3] { std::array::from_fn(|_| rng.random_range(0.05..15.0)) };
    CostWeights {
        q_p: w(),
        q_theta: w(),
        q_v: w(),
        q_omega: w(),
        r_u: std::array::from_fn(|_| rng.random_range(1e-4..1e-2)),
    }
}

// ---------------------------------------------------------------------------
// rigid-body dynamics written out term by term

/// `R = Rz(ψ) Ry(θ) Rx(φ)` expanded entry by entry.
pub fn rotation_entries(roll: f64, pitch: f64, yaw: f64) -> [[f64; 3]; 3] {
    let (sr, cr) = (roll.sin(), roll.cos());
    let (sp, cp) = (pitch.sin(), pitch.cos());
    let (sy, cy) = (yaw.sin(), yaw.cos());
    [
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ]
}

/// Euler-angle rates from body rates for the ZYX convention.
pub fn euler_rates(roll: f64, pitch: f64, w: [f64; 3]) -> [f64; 3] {
    let (sr, cr) = (roll.sin(), roll.cos());
    let (tp, cp) = (pitch.tan(), pitch.cos());
    [
        w[0] + sr * tp * w[1] + cr * tp * w[2],
        cr * w[1] - sr * w[2],
        (sr * w[1] + cr * w[2]) / cp,
    ]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

/// Inverse by the adjugate over the determinant.
pub fn cramer_inverse(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
        [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
        [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
    ];
    adj.map(|row| row.map(|e| e / det))
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// State derivative assembled from each physical term separately.
pub fn dynamics_oracle(
    x: &BodyState,
    u: &FootForces,
    geom: &StanceGeometry,
    mass: f64,
    inertia: &Matrix3<f64>,
    gravity: &Vector3<f64>,
    force: &Vector3<f64>,
    torque: &Vector3<f64>,
) -> [f64; 12] {
    let rot = rotation_entries(x.theta.x, x.theta.y, x.theta.z);
    let j: [[f64; 3]; 3] = std::array::from_fn(|r| std::array::from_fn(|c| inertia[(r, c)]));
    let j_inv = cramer_inverse(&j);
    let w = arr(&x.omega);

    let mut f_body = [0.0; 3];
    let mut tau = [0.0; 3];
    for leg in 0..NUM_LEGS {
        let f = arr(&u.forces[leg]);
        let r = arr(&geom.foot_positions_body[leg]);
        let rxf = cross(r, f);
        for i in 0..3 {
            f_body[i] += f[i];
            tau[i] += rxf[i];
        }
    }
    let f_world = mat_vec(&rot, f_body);
    let jw = mat_vec(&j, w);
    let gyro = cross(w, jw);
    let mut net = [0.0; 3];
    for i in 0..3 {
        net[i] = -gyro[i] + tau[i] + torque[i];
    }
    let w_dot = mat_vec(&j_inv, net);
    let theta_dot = euler_rates(x.theta.x, x.theta.y, w);

    let mut out = [0.0; 12];
    for i in 0..3 {
        out[i] = x.v[i];
        out[3 + i] = theta_dot[i];
        out[6 + i] = gravity[i] + f_world[i] / mass + force[i] / mass;
        out[9 + i] = w_dot[i];
    }
    out
}

// ---------------------------------------------------------------------------
// prediction matrices by solving the stacked dynamics

/// `S = (I − 𝒜)⁻¹ ℬ` and `w = (I − 𝒜)⁻¹ (e₀ A₀ x₀ + c)` with the block
/// lower-shift `𝒜`, formed densely and solved with a full LU.
pub fn naive_prediction(x0: &BodyState, lins: &[Linearization]) -> (DMatrix<f64>, DVector<f64>) {
    let n = lins.len();
    let dim = 12 * n;
    let mut lhs = DMatrix::<f64>::identity(dim, dim);
    let mut big_b = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for (k, lin) in lins.iter().enumerate() {
        for r in 0..12 {
            for c in 0..12 {
                big_b[(12 * k + r, 12 * k + c)] = lin.b[(r, c)];
                if k > 0 {
                    lhs[(12 * k + r, 12 * (k - 1) + c)] = -lin.a[(r, c)];
                }
            }
            rhs[12 * k + r] = lin.c[r];
        }
    }
    let ax0 = lins[0].a * x0.to_vector();
    for r in 0..12 {
        rhs[r] += ax0[r];
    }
    let lu = lhs.lu();
    (lu.solve(&big_b).unwrap(), lu.solve(&rhs).unwrap())
}

// ---------------------------------------------------------------------------
// dense active-set QP on the multistage (uncondensed) form

/// `min ½ yᵀ H y + gᵀ y` subject to `E y = e`, `C y ≤ d`.
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub e_mat: DMatrix<f64>,
    pub e_rhs: DVector<f64>,
    pub c_mat: DMatrix<f64>,
    pub c_rhs: DVector<f64>,
}

/// Primal active-set method started from a feasible point. Each iteration
/// solves the equality-constrained subproblem on the working set, takes the
/// longest feasible step, and drops the constraint with the most negative
/// multiplier at a stationary point.
pub fn active_set_solve(qp: &DenseQp, start: DVector<f64>) -> DVector<f64> {
    let n = qp.h.nrows();
    let me = qp.e_mat.nrows();
    let mut y = start;
    let mut working: Vec<usize> = Vec::new();
    for _ in 0..2000 {
        let m = me + working.len();
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
        let mut rows = DMatrix::zeros(m, n);
        rows.view_mut((0, 0), (me, n)).copy_from(&qp.e_mat);
        for (i, &c) in working.iter().enumerate() {
            rows.row_mut(me + i).copy_from(&qp.c_mat.row(c));
        }
        kkt.view_mut((n, 0), (m, n)).copy_from(&rows);
        kkt.view_mut((0, n), (n, m)).copy_from(&rows.transpose());
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-(&qp.h * &y + &qp.g)));
        let sol = kkt.lu().solve(&rhs).expect("working-set KKT system is nonsingular");
        let p = sol.rows(0, n).into_owned();
        let lambda = sol.rows(n, m).into_owned();

        if p.amax() <= 1e-11 * (1.0 + y.amax()) {
            let most_negative = (0..working.len())
                .map(|i| (i, lambda[me + i]))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match most_negative {
                Some((i, l)) if l < -1e-10 => {
                    working.remove(i);
                }
                _ => return y,
            }
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for c in 0..qp.c_mat.nrows() {
            if working.contains(&c) {
                continue;
            }
            let cp = qp.c_mat.row(c).dot(&p.transpose());
            if cp > 1e-14 {
                let slack = qp.c_rhs[c] - qp.c_mat.row(c).dot(&y.transpose());
                let step = slack.max(0.0) / cp;
                if step < alpha {
                    alpha = step;
                    blocking = Some(c);
                }
            }
        }
        y += alpha * p;
        if let Some(c) = blocking {
            working.push(c);
        }
    }
    panic!("dense active-set oracle did not converge");
}

/// Multistage problem with variables `[x_1..x_N, u_0..u_{N−1}]`, dynamics
/// and swing legs as equalities, and pyramid rows per stance leg.
pub struct Multistage {
    pub qp: DenseQp,
    pub constant: f64,
    pub start: DVector<f64>,
    pub n: usize,
}

impl Multistage {
    pub fn inputs(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(12 * self.n, 12 * self.n).into_owned()
    }
}

pub fn multistage_problem(
    problem: &MpcProblem,
    x0: &BodyState,
    lins: &[Linearization],
    u_ff: &[FootForces],
) -> Multistage {
    let n = problem.horizon;
    let nx = 12 * n;
    let nvar = 2 * nx;
    let q = problem.weights.state_diag();
    let r = problem.weights.input_diag();
    let cons: &InputConstraintSet = &problem.constraints;

    let mut h = DMatrix::zeros(nvar, nvar);
    let mut g = DVector::zeros(nvar);
    let mut constant = 0.0;
    for k in 0..n {
        let xr = problem.reference[k + 1].to_vector();
        let uf = u_ff[k].to_vector();
        for i in 0..12 {
            h[(12 * k + i, 12 * k + i)] = 2.0 * q[i];
            g[12 * k + i] = -2.0 * q[i] * xr[i];
            constant += q[i] * xr[i] * xr[i];
            h[(nx + 12 * k + i, nx + 12 * k + i)] = 2.0 * r[i];
            g[nx + 12 * k + i] = -2.0 * r[i] * uf[i];
            constant += r[i] * uf[i] * uf[i];
        }
    }

    let swing: Vec<(usize, usize)> = (0..n)
        .flat_map(|k| {
            (0..NUM_LEGS)
                .filter(move |&l| !cons.contact_flags[k][l])
                .map(move |l| (k, l))
        })
        .collect();
    let mut e_mat = DMatrix::zeros(nx + 3 * swing.len(), nvar);
    let mut e_rhs = DVector::zeros(nx + 3 * swing.len());
    for (k, lin) in lins.iter().enumerate() {
        for i in 0..12 {
            e_mat[(12 * k + i, 12 * k + i)] = 1.0;
            for j in 0..12 {
                e_mat[(12 * k + i, nx + 12 * k + j)] = -lin.b[(i, j)];
                if k > 0 {
                    e_mat[(12 * k + i, 12 * (k - 1) + j)] = -lin.a[(i, j)];
                }
            }
            e_rhs[12 * k + i] = lin.c[i];
        }
    }
    let ax0 = lins[0].a * x0.to_vector();
    for i in 0..12 {
        e_rhs[i] += ax0[i];
    }
    for (s, &(k, leg)) in swing.iter().enumerate() {
        for a in 0..3 {
            e_mat[(nx + 3 * s + a, nx + 12 * k + 3 * leg + a)] = 1.0;
        }
    }

    let stance: Vec<(usize, usize)> = (0..n)
        .flat_map(|k| {
            (0..NUM_LEGS)
                .filter(move |&l| cons.contact_flags[k][l])
                .map(move |l| (k, l))
        })
        .collect();
    let mu = cons.mu;
    let mut c_mat = DMatrix::zeros(6 * stance.len(), nvar);
    let mut c_rhs = DVector::zeros(6 * stance.len());
    for (s, &(k, leg)) in stance.iter().enumerate() {
        let col = nx + 12 * k + 3 * leg;
        let row = 6 * s;
        // fx − μfz ≤ 0, −fx − μfz ≤ 0, fy − μfz ≤ 0, −fy − μfz ≤ 0
        for (i, (axis, sign)) in [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)].into_iter().enumerate() {
            c_mat[(row + i, col + axis)] = sign;
            c_mat[(row + i, col + 2)] = -mu;
        }
        c_mat[(row + 4, col + 2)] = -1.0;
        c_rhs[row + 4] = -cons.f_z_min;
        c_mat[(row + 5, col + 2)] = 1.0;
        c_rhs[row + 5] = cons.f_z_max;
    }

    // Feasible start: stance legs push straight down at mid-range, states
    // rolled out through the affine dynamics.
    let mut start = DVector::zeros(nvar);
    let mut state = x0.to_vector();
    for (k, lin) in lins.iter().enumerate() {
        let mut u = FootForces::zeros();
        for leg in 0..NUM_LEGS {
            if cons.contact_flags[k][leg] {
                u.forces[leg].z = 0.5 * (cons.f_z_min + cons.f_z_max);
            }
        }
        let uv = u.to_vector();
        state = lin.a * state + lin.b * uv + lin.c;
        start.rows_mut(12 * k, 12).copy_from(&state);
        start.rows_mut(nx + 12 * k, 12).copy_from(&uv);
    }

    Multistage {
        qp: DenseQp {
            h,
            g,
            e_mat,
            e_rhs,
            c_mat,
            c_rhs,
        },
        constant,
        start,
        n,
    }
}

/// Stage-cost sum over `x_1..x_N` and `u_0..u_{N−1}`, evaluated directly.
pub fn horizon_cost(problem: &MpcProblem, states: &[DVector<f64>], inputs: &DVector<f64>, u_ff: &[FootForces]) -> f64 {
    let q = problem.weights.state_diag();
    let r = problem.weights.input_diag();
    let mut total = 0.0;
    for k in 0..problem.horizon {
        let xr = problem.reference[k + 1].to_vector();
        let uf = u_ff[k].to_vector();
        for i in 0..12 {
            total += q[i] * (states[k][i] - xr[i]).powi(2);
            total += r[i] * (inputs[12 * k + i] - uf[i]).powi(2);
        }
    }
    total
}

/// Rolls `x_{k+1} = A_k x_k + B_k u_k + c_k` forward.
pub fn rollout(x0: &BodyState, lins: &[Linearization], inputs: &DVector<f64>) -> Vec<DVector<f64>> {
    let mut state = DVector::from_column_slice(x0.to_vector().as_slice());
    let mut out = Vec::with_capacity(lins.len());
    for (k, lin) in lins.iter().enumerate() {
        let a = DMatrix::from_column_slice(12, 12, lin.a.as_slice());
        let b = DMatrix::from_column_slice(12, 12, lin.b.as_slice());
        let c = DVector::from_column_slice(lin.c.as_slice());
        state = a * &state + b * inputs.rows(12 * k, 12) + c;
        out.push(state.clone());
    }
    out
}

/// A random horizon built from linearizations of the nominal dynamics about
/// random states, with random contact flags and weights.
pub fn random_horizon(rng: &mut ChaCha8Rng, n: usize) -> (MpcProblem, BodyState, Vec<Linearization>, Vec<FootForces>) {
    use olmpc_core::mpc::{linearize_dynamics, ZeroResidual};
    let params = BodyParams::quadruped_default();
    let dt = 0.03;
    let x0 = BodyState {
        p: uniform3(rng, -0.1, 0.1) + Vector3::new(0.0, 0.0, 0.3),
        theta: uniform3(rng, -0.2, 0.2),
        v: uniform3(rng, -0.5, 0.5),
        omega: uniform3(rng, -0.5, 0.5),
    };
    let flags: Vec<[bool; NUM_LEGS]> = (0..n).map(|_| std::array::from_fn(|_| rng.random_bool(0.6))).collect();
    let geometry: Vec<StanceGeometry> = (0..n)
        .map(|_| {
            StanceGeometry::new(std::array::from_fn(|leg| {
                let sx = if leg < 2 { 0.2 } else { -0.2 };
                let sy = if leg % 2 == 0 { 0.12 } else { -0.12 };
                Vector3::new(sx, sy, -0.3) + uniform3(rng, -0.05, 0.05)
            }))
        })
        .collect();
    let mut lins = Vec::with_capacity(n);
    let mut u_ff = Vec::with_capacity(n);
    let mut state = x0;
    for k in 0..n {
        let stance = flags[k].iter().filter(|s| **s).count().max(1) as f64;
        let mut u = FootForces::zeros();
        for leg in 0..NUM_LEGS {
            if flags[k][leg] {
                u.forces[leg] = Vector3::new(0.0, 0.0, params.mass() * 9.81 / stance) + uniform3(rng, -3.0, 3.0);
            }
        }
        let lin = linearize_dynamics(&state, &u, &geometry[k], &params, &ZeroResidual, 0.0, dt, false, 1e-6).unwrap();
        state = BodyState::from_vector(&(lin.a * state.to_vector() + lin.b * u.to_vector() + lin.c));
        lins.push(lin);
        u_ff.push(u);
    }
    let reference: Vec<BodyState> = (0..=n)
        .map(|k| BodyState {
            p: Vector3::new(0.02 * k as f64, 0.0, 0.3) + uniform3(rng, -0.02, 0.02),
            theta: uniform3(rng, -0.05, 0.05),
            v: Vector3::new(0.5, 0.0, 0.0),
            omega: Vector3::zeros(),
        })
        .collect();
    let problem = MpcProblem {
        horizon: n,
        dt,
        reference,
        weights: random_weights(rng),
        constraints: InputConstraintSet {
            mu: rng.random_range(0.3..1.0),
            f_z_min: rng.random_range(1.0..10.0),
            f_z_max: rng.random_range(80.0..200.0),
            contact_flags: flags,
        },
        geometry,
        params,
        t0: 0.0,
    };
    (problem, x0, lins, u_ff)
}
