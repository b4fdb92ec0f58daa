//! Dense convex QPs of the form
//!
//! ```text
//! minimize   ½ zᵀHz + gᵀz
//! subject to lo ≤ z ≤ hi
//!            zᵀTz + 2tᵀz + t₀ ≤ 0        (optional, T ⪰ 0)
//! ```
//!
//! The box problem is solved by a primal active-set method. The single
//! quadratic constraint is handled by bisection on its multiplier, each
//! step being a box QP with Hessian `H + 2λT`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance on the quadratic constraint residual and feasibility certificate.
pub const CONSTRAINT_TOL: f64 = 1e-8;
/// Scaled KKT residual accepted from a solve.
pub const KKT_TOL: f64 = 1e-8;

const MAX_BISECTIONS: usize = 200;
const MAX_PROX_ITER: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundState {
    Free,
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct BoxQpSolution {
    pub z: DVector<f64>,
    pub working_set: Vec<BoundState>,
    pub iterations: usize,
    /// `‖z − Π(z − ∇f)‖∞ / (1 + ‖g‖∞ + ‖H‖∞)`.
    pub kkt_residual: f64,
}

fn matrix_scale(h: &DMatrix<f64>) -> f64 {
    h.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Scaled projected-gradient residual of a box QP at `z`.
pub fn box_kkt_residual(h: &DMatrix<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>, z: &DVector<f64>) -> f64 {
    let grad = h * z + g;
    let mut worst = 0.0_f64;
    for i in 0..z.len() {
        let projected = (z[i] - grad[i]).clamp(lo[i], hi[i]);
        worst = worst.max((z[i] - projected).abs());
    }
    worst / (1.0 + g.amax() + matrix_scale(h))
}

/// Minimizes `½zᵀHz + gᵀz` over `lo ≤ z ≤ hi` for `H ≻ 0`.
///
/// `warm` seeds the working set; without it the clamped unconstrained
/// minimizer is the starting point.
pub fn solve_box_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    warm: Option<&[BoundState]>,
) -> Result<BoxQpSolution> {
    let dim = g.len();
    if h.shape() != (dim, dim) || lo.len() != dim || hi.len() != dim {
        return Err(Error::invalid("box QP dimensions are inconsistent"));
    }
    if (0..dim).any(|i| lo[i] > hi[i]) {
        return Err(Error::invalid("box QP has an empty box"));
    }

    let mut state: Vec<BoundState>;
    let mut z: DVector<f64>;
    match warm {
        Some(ws) if ws.len() == dim => {
            state = ws.to_vec();
            z = DVector::zeros(dim);
            for i in 0..dim {
                z[i] = match state[i] {
                    BoundState::Lower => lo[i],
                    BoundState::Upper => hi[i],
                    BoundState::Free => 0.0_f64.clamp(lo[i], hi[i]),
                };
            }
        }
        _ => {
            let chol = h
                .clone()
                .cholesky()
                .ok_or_else(|| Error::numerical("box QP", "Hessian is not positive definite", f64::NAN))?;
            let unconstrained = -chol.solve(g);
            state = vec![BoundState::Free; dim];
            z = unconstrained;
            for i in 0..dim {
                if z[i] <= lo[i] {
                    z[i] = lo[i];
                    state[i] = BoundState::Lower;
                } else if z[i] >= hi[i] {
                    z[i] = hi[i];
                    state[i] = BoundState::Upper;
                }
            }
        }
    }

    let scale = 1.0 + g.amax() + matrix_scale(h) * (1.0 + lo.amax().max(hi.amax()));
    let mult_tol = 1e-13 * scale;
    let max_iter = 10 * dim + 100;

    for iter in 0..max_iter {
        let free: Vec<usize> = (0..dim).filter(|&i| state[i] == BoundState::Free).collect();
        if !free.is_empty() {
            let fixed: Vec<usize> = (0..dim).filter(|&i| state[i] != BoundState::Free).collect();
            let h_ff = h.select_rows(&free).select_columns(&free);
            let mut rhs = -g.select_rows(&free);
            if !fixed.is_empty() {
                let h_fb = h.select_rows(&free).select_columns(&fixed);
                rhs -= h_fb * z.select_rows(&fixed);
            }
            let target = h_ff
                .cholesky()
                .ok_or_else(|| Error::numerical("box QP", "reduced Hessian is not positive definite", f64::NAN))?
                .solve(&rhs);

            // longest feasible step towards the subspace minimizer
            let mut alpha = 1.0;
            let mut blocking: Option<(usize, BoundState)> = None;
            for (pos, &i) in free.iter().enumerate() {
                let p = target[pos] - z[i];
                if p < 0.0 {
                    let a = (lo[i] - z[i]) / p;
                    if a < alpha {
                        alpha = a.max(0.0);
                        blocking = Some((i, BoundState::Lower));
                    }
                } else if p > 0.0 {
                    let a = (hi[i] - z[i]) / p;
                    if a < alpha {
                        alpha = a.max(0.0);
                        blocking = Some((i, BoundState::Upper));
                    }
                }
            }
            match blocking {
                None => {
                    for (pos, &i) in free.iter().enumerate() {
                        z[i] = target[pos];
                    }
                }
                Some((bi, side)) => {
                    for (pos, &i) in free.iter().enumerate() {
                        z[i] += alpha * (target[pos] - z[i]);
                        z[i] = z[i].clamp(lo[i], hi[i]);
                    }
                    z[bi] = if side == BoundState::Lower { lo[bi] } else { hi[bi] };
                    state[bi] = side;
                    continue;
                }
            }
        }

        // multipliers of the fixed variables
        let grad = h * &z + g;
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..dim {
            let mu = match state[i] {
                BoundState::Free => continue,
                BoundState::Lower => grad[i],
                BoundState::Upper => -grad[i],
            };
            if mu < -mult_tol && worst.is_none_or(|(_, w)| mu < w) {
                worst = Some((i, mu));
            }
        }
        match worst {
            Some((i, _)) => state[i] = BoundState::Free,
            None => {
                let kkt_residual = box_kkt_residual(h, g, lo, hi, &z);
                if kkt_residual > KKT_TOL {
                    return Err(Error::numerical(
                        "box QP",
                        "active set terminated with a large KKT residual",
                        kkt_residual,
                    ));
                }
                return Ok(BoxQpSolution {
                    z,
                    working_set: state,
                    iterations: iter + 1,
                    kkt_residual,
                });
            }
        }
    }
    Err(Error::numerical(
        "box QP",
        format!("active set did not terminate in {max_iter} iterations"),
        box_kkt_residual(h, g, lo, hi, &z),
    ))
}

/// `c(z) = zᵀTz + 2tᵀz + t₀`, feasible when `c(z) ≤ 0`.
#[derive(Debug, Clone)]
pub struct QuadraticConstraint {
    pub t: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub offset: f64,
}

impl QuadraticConstraint {
    pub fn value(&self, z: &DVector<f64>) -> f64 {
        z.dot(&(&self.t * z)) + 2.0 * self.lin.dot(z) + self.offset
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        (&self.t * z + &self.lin) * 2.0
    }
}

#[derive(Debug, Clone)]
pub enum QcqpOutcome {
    Optimal {
        z: DVector<f64>,
        /// Multiplier of the quadratic constraint.
        lambda: f64,
        kkt_residual: f64,
        constraint_value: f64,
    },
    Infeasible {
        /// Certified lower bound on `min c(z)` over the box.
        lower_bound: f64,
    },
}

/// Decides whether `min_{box} c(z) ≤ tol` by proximal-point iterations,
/// each a strictly convex box QP. Returns `Ok(None)` when a point with
/// `c ≤ tol` is found, `Ok(Some(lb))` when the Frank–Wolfe lower bound
/// `lb` certifies `min c > tol`.
fn terminal_feasibility(
    con: &QuadraticConstraint,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    start: &DVector<f64>,
) -> Result<Option<f64>> {
    let dim = start.len();
    let hess = &con.t * 2.0;
    let rho = 1e-6 * matrix_scale(&hess).max(1e-12);
    let prox_h = &hess + DMatrix::<f64>::identity(dim, dim) * rho;
    let mut z = start.clone();
    let mut warm: Option<Vec<BoundState>> = None;
    let mut last = f64::INFINITY;
    for _ in 0..MAX_PROX_ITER {
        let value = con.value(&z);
        if value <= CONSTRAINT_TOL {
            return Ok(None);
        }
        let grad = con.gradient(&z);
        let linear_min: f64 = (0..dim)
            .map(|i| (grad[i] * (lo[i] - z[i])).min(grad[i] * (hi[i] - z[i])))
            .sum();
        let lower_bound = value + linear_min;
        if lower_bound > CONSTRAINT_TOL {
            return Ok(Some(lower_bound));
        }
        if (last - value).abs() <= 1e-15 * value.abs().max(1.0) && linear_min.abs() <= 1e-14 * value.abs().max(1.0) {
            // stationary: the minimum is `value` to round-off
            return Ok(Some(value));
        }
        last = value;
        let prox_g = &con.lin * 2.0 - &z * rho;
        let sol = solve_box_qp(&prox_h, &prox_g, lo, hi, warm.as_deref())?;
        warm = Some(sol.working_set);
        z = sol.z;
    }
    Err(Error::numerical(
        "terminal feasibility",
        format!("undecided after {MAX_PROX_ITER} proximal iterations"),
        con.value(&z),
    ))
}

/// Minimizes the box QP subject to one convex quadratic constraint.
pub fn solve_qcqp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    con: &QuadraticConstraint,
) -> Result<QcqpOutcome> {
    let free = solve_box_qp(h, g, lo, hi, None)?;
    let c0 = con.value(&free.z);
    if c0 <= CONSTRAINT_TOL {
        return Ok(QcqpOutcome::Optimal {
            kkt_residual: free.kkt_residual,
            constraint_value: c0,
            z: free.z,
            lambda: 0.0,
        });
    }
    if let Some(lower_bound) = terminal_feasibility(con, lo, hi, &free.z)? {
        return Ok(QcqpOutcome::Infeasible { lower_bound });
    }

    let inner = |lambda: f64, warm: Option<&[BoundState]>| -> Result<BoxQpSolution> {
        let hl = h + &con.t * (2.0 * lambda);
        let gl = g + &con.lin * (2.0 * lambda);
        solve_box_qp(&hl, &gl, lo, hi, warm)
    };

    // bracket the multiplier
    let mut lo_lambda = 0.0;
    let mut hi_lambda = (matrix_scale(h) / matrix_scale(&con.t).max(1e-300)).max(1e-12);
    let mut warm = free.working_set.clone();
    let mut hi_sol = loop {
        let sol = inner(hi_lambda, Some(&warm))?;
        warm = sol.working_set.clone();
        if con.value(&sol.z) <= CONSTRAINT_TOL {
            break sol;
        }
        lo_lambda = hi_lambda;
        hi_lambda *= 4.0;
        if !hi_lambda.is_finite() || hi_lambda > 1e300 {
            return Err(Error::numerical(
                "terminal constraint",
                "multiplier bracket diverged",
                con.value(&sol.z),
            ));
        }
    };

    for _ in 0..MAX_BISECTIONS {
        let c_hi = con.value(&hi_sol.z);
        if c_hi >= -CONSTRAINT_TOL || hi_lambda - lo_lambda <= 1e-15 * hi_lambda {
            break;
        }
        let mid = 0.5 * (lo_lambda + hi_lambda);
        let sol = inner(mid, Some(&hi_sol.working_set))?;
        if con.value(&sol.z) <= CONSTRAINT_TOL {
            hi_lambda = mid;
            hi_sol = sol;
        } else {
            lo_lambda = mid;
        }
    }

    let constraint_value = con.value(&hi_sol.z);
    let complementarity = hi_lambda * constraint_value.abs() / (1.0 + g.amax() + matrix_scale(h));
    let kkt_residual = hi_sol.kkt_residual.max(if constraint_value < -CONSTRAINT_TOL {
        complementarity
    } else {
        0.0
    });
    Ok(QcqpOutcome::Optimal {
        z: hi_sol.z,
        lambda: hi_lambda,
        kkt_residual,
        constraint_value,
    })
}
