//! Terminal ingredients: local gain `K`, terminal weight `P_f` and level `ε`
//! so that on `Φ = {x : xᵀP_f x ≤ ε}` the feedback `u = Kx` is admissible and
//!
//! ```text
//! (A_cl x)ᵀ P_f (A_cl x) − xᵀ P_f x ≤ −F(x, Kx, δ),   A_cl = A_δ + B_δ K.
//! ```
//!
//! `K` is the discrete LQR gain for the δ-sampled plant under the cost
//! `[x; u]ᵀ Γ(δ) [x; u]` (cross term included), and `P_f` the matching
//! Riccati solution, so the decrease holds with equality.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::discretization::{stage_cost, DiscretizationTable};
use crate::error::{Error, Result};
use crate::linalg::{max_abs, max_eigenvalue, min_eigenvalue, quad_form, spectral_radius, symmetrize};

pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITER: usize = 100_000;
pub const LYAPUNOV_TOL: f64 = 1e-10;
/// Relative slack on the input-admissibility margin.
pub const ADMISSIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalIngredients {
    /// m×n feedback gain, `κ(x) = Kx`.
    pub k: DMatrix<f64>,
    pub p_f: DMatrix<f64>,
    pub epsilon: f64,
    /// Base step the ingredients were synthesized for.
    pub delta: f64,
}

impl TerminalIngredients {
    pub fn feedback(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.k * x
    }

    pub fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        quad_form(&self.p_f, x)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.terminal_cost(x) <= self.epsilon + tol
    }

    pub fn check_dims(&self, n: usize, m: usize) -> Result<()> {
        if self.k.shape() != (m, n) || self.p_f.shape() != (n, n) {
            return Err(Error::invalid(format!(
                "terminal ingredients have K {}x{} and P_f {}x{}, expected K {m}x{n} and P_f {n}x{n}",
                self.k.nrows(),
                self.k.ncols(),
                self.p_f.nrows(),
                self.p_f.ncols()
            )));
        }
        Ok(())
    }
}

/// Serializable mirror of [`TerminalIngredients`] with row-major matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalRecord {
    pub k: Vec<Vec<f64>>,
    pub p_f: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub delta: f64,
}

impl From<&TerminalIngredients> for TerminalRecord {
    fn from(t: &TerminalIngredients) -> Self {
        let rows = |m: &DMatrix<f64>| {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect()
        };
        Self {
            k: rows(&t.k),
            p_f: rows(&t.p_f),
            epsilon: t.epsilon,
            delta: t.delta,
        }
    }
}

impl TryFrom<&TerminalRecord> for TerminalIngredients {
    type Error = Error;

    fn try_from(r: &TerminalRecord) -> Result<Self> {
        Ok(Self {
            k: crate::config::matrix_from_rows("terminal.k", &r.k)?,
            p_f: crate::config::matrix_from_rows("terminal.p_f", &r.p_f)?,
            epsilon: r.epsilon,
            delta: r.delta,
        })
    }
}

struct GammaBlocks {
    xx: DMatrix<f64>,
    xu: DMatrix<f64>,
    uu: DMatrix<f64>,
}

fn gamma_blocks(gamma: &DMatrix<f64>, n: usize, m: usize) -> GammaBlocks {
    GammaBlocks {
        xx: gamma.view((0, 0), (n, n)).into_owned(),
        xu: gamma.view((0, n), (n, m)).into_owned(),
        uu: gamma.view((n, n), (m, m)).into_owned(),
    }
}

/// PBH test of `(A_δ, B_δ)` on every eigenvalue outside the open unit disc.
pub fn check_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    let m = b.ncols();
    for lambda in a.complex_eigenvalues().iter() {
        if lambda.norm() < 1.0 - 1e-9 {
            continue;
        }
        // real form of the complex matrix [λI − A, B]
        let mut re = DMatrix::<f64>::zeros(n, n + m);
        let mut im = DMatrix::<f64>::zeros(n, n + m);
        re.view_mut((0, 0), (n, n)).copy_from(&(-a));
        for i in 0..n {
            re[(i, i)] += lambda.re;
            im[(i, i)] = lambda.im;
        }
        re.view_mut((0, n), (n, m)).copy_from(b);
        let real_form = crate::linalg::block2(&re, &(-&im), &im, &re);
        let sv = real_form.singular_values();
        let smax = sv.iter().copied().fold(0.0, f64::max).max(1e-300);
        let rank = sv.iter().filter(|s| **s > 1e-9 * smax.max(1.0)).count();
        if rank < 2 * n {
            return Err(Error::SynthesisFailure(format!(
                "(A_δ, B_δ) is not stabilizable: mode λ = {} is uncontrollable and not strictly stable",
                fmt_complex(lambda)
            )));
        }
    }
    Ok(())
}

fn fmt_complex(z: &Complex<f64>) -> String {
    if z.im.abs() < 1e-12 {
        format!("{:.6}", z.re)
    } else {
        format!("{:.6}{:+.6}i", z.re, z.im)
    }
}

/// Stabilizing solution of the discrete Riccati equation with cross term,
/// by value iteration. Returns `(P, K)` with the convention `u = Kx`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    s: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let gain = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let g = r + b.transpose() * p * b;
        let rhs = b.transpose() * p * a + s.transpose();
        let chol = g
            .cholesky()
            .ok_or_else(|| Error::numerical("riccati", "R + BᵀPB lost definiteness", f64::NAN))?;
        Ok(-chol.solve(&rhs))
    };
    let mut p = q.clone();
    let mut last_change = f64::INFINITY;
    for _ in 0..RICCATI_MAX_ITER {
        let k = gain(&p)?;
        let next = symmetrize(&(q + a.transpose() * &p * a + (a.transpose() * &p * b + s) * &k));
        last_change = max_abs(&(&next - &p));
        let scale = max_abs(&next).max(1.0);
        p = next;
        if !last_change.is_finite() {
            break;
        }
        if last_change <= RICCATI_TOL * scale {
            let k = gain(&p)?;
            return Ok((p, k));
        }
    }
    Err(Error::numerical(
        "riccati",
        format!("value iteration did not converge in {RICCATI_MAX_ITER} iterations"),
        last_change,
    ))
}

/// Solves `P = A_clᵀ P A_cl + M` by vectorization (small n only).
pub fn solve_discrete_lyapunov(a_cl: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a_cl.nrows();
    let at = a_cl.transpose();
    let kron = at.kronecker(&at);
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - kron;
    let rhs = DVector::from_iterator(n * n, m.iter().copied());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("lyapunov", "closed loop has an eigenvalue on the unit circle", f64::NAN))?;
    Ok(symmetrize(&DMatrix::from_iterator(n, n, sol.iter().copied())))
}

/// `[I; K]ᵀ Γ [I; K]`.
pub fn closed_loop_weight(gamma: &DMatrix<f64>, k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.ncols();
    let m = k.nrows();
    let mut ik = DMatrix::<f64>::zeros(n + m, n);
    ik.view_mut((0, 0), (n, n)).fill_with_identity();
    ik.view_mut((n, 0), (m, n)).copy_from(k);
    symmetrize(&(ik.transpose() * gamma * ik))
}

/// Largest `ε` with `|k_j x| ≤ ū_j` for every `x` in `{xᵀPx ≤ ε}`, using
/// `max_{xᵀPx≤ε} k_j x = sqrt(ε · k_j P⁻¹ k_jᵀ)`.
pub fn admissible_level(k: &DMatrix<f64>, p_f: &DMatrix<f64>, u_max: &DVector<f64>) -> Result<f64> {
    let p_inv = p_f
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SynthesisFailure("P_f is not positive definite".into()))?
        .inverse();
    let mut eps = f64::INFINITY;
    for j in 0..k.nrows() {
        let row = k.row(j).transpose();
        let spread = quad_form(&p_inv, &row);
        if spread > 0.0 {
            eps = eps.min(u_max[j] * u_max[j] / spread);
        }
    }
    if !eps.is_finite() {
        return Err(Error::SynthesisFailure(
            "feedback gain is identically zero, no input channel bounds the terminal set".into(),
        ));
    }
    Ok(eps)
}

pub fn synthesize_terminal(table: &DiscretizationTable) -> Result<TerminalIngredients> {
    let (n, m) = (table.state_dim(), table.input_dim());
    let a = table.a(1);
    let b = table.b(1);
    check_stabilizable(a, b)?;
    let blocks = gamma_blocks(table.gamma(1), n, m);
    let (_, k) = solve_dare(a, b, &blocks.xx, &blocks.xu, &blocks.uu)?;
    let a_cl = a + b * &k;
    if spectral_radius(&a_cl) >= 1.0 {
        return Err(Error::numerical(
            "riccati",
            "gain from value iteration is not stabilizing",
            spectral_radius(&a_cl),
        ));
    }
    // Polish P_f against the final gain so the decrease holds to round-off.
    let p_f = solve_discrete_lyapunov(&a_cl, &closed_loop_weight(table.gamma(1), &k))?;
    let epsilon = admissible_level(&k, &p_f, &table.system().u_max)?;
    Ok(TerminalIngredients {
        k,
        p_f,
        epsilon,
        delta: table.delta(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalReport {
    /// max eig of `A_clᵀ P_f A_cl − P_f + [I; K]ᵀΓ(δ)[I; K]`.
    pub lyapunov_max_eig: f64,
    /// `min_j (ū_j − max_{x∈Φ} |k_j x|) / ū_j`.
    pub input_margin: f64,
    pub p_f_min_eig: f64,
    pub closed_loop_radius: f64,
    pub passed: bool,
}

pub fn verify_terminal(ing: &TerminalIngredients, table: &DiscretizationTable) -> TerminalReport {
    let (n, m) = (table.state_dim(), table.input_dim());
    if ing.check_dims(n, m).is_err() {
        return TerminalReport {
            lyapunov_max_eig: f64::NAN,
            input_margin: f64::NAN,
            p_f_min_eig: f64::NAN,
            closed_loop_radius: f64::NAN,
            passed: false,
        };
    }
    let a_cl = table.a(1) + table.b(1) * &ing.k;
    let lyap = a_cl.transpose() * &ing.p_f * &a_cl - &ing.p_f + closed_loop_weight(table.gamma(1), &ing.k);
    let lyapunov_max_eig = max_eigenvalue(&lyap);
    let p_f_min_eig = min_eigenvalue(&ing.p_f);

    let u_max = &table.system().u_max;
    let input_margin = match ing.p_f.clone().cholesky() {
        Some(chol) if ing.epsilon.is_finite() && ing.epsilon > 0.0 => {
            let p_inv = chol.inverse();
            (0..m)
                .map(|j| {
                    let row = ing.k.row(j).transpose();
                    let reach = (ing.epsilon * quad_form(&p_inv, &row)).sqrt();
                    (u_max[j] - reach) / u_max[j]
                })
                .fold(f64::INFINITY, f64::min)
        }
        _ => f64::NEG_INFINITY,
    };
    let closed_loop_radius = spectral_radius(&a_cl);
    let passed = p_f_min_eig > 0.0
        && ing.epsilon > 0.0
        && lyapunov_max_eig <= LYAPUNOV_TOL
        && input_margin >= -ADMISSIBILITY_TOL
        && (ing.delta - table.delta()).abs() <= 1e-12 * table.delta();
    TerminalReport {
        lyapunov_max_eig,
        input_margin,
        p_f_min_eig,
        closed_loop_radius,
        passed,
    }
}

/// Worst residuals of the terminal conditions over sampled points of Φ.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTerminalCheck {
    pub points: usize,
    /// max of `(A_cl x)ᵀP(A_cl x) − xᵀPx + F(x, Kx, δ)`.
    pub worst_decrease: f64,
    /// max of `|k_j x| − ū_j`.
    pub worst_input_excess: f64,
    /// max of `(A_cl x)ᵀP(A_cl x) − ε`.
    pub worst_invariance_excess: f64,
}

/// Samples `count` points of Φ, alternating between the boundary and the
/// interior.
pub fn sample_terminal_conditions<R: Rng>(
    ing: &TerminalIngredients,
    table: &DiscretizationTable,
    rng: &mut R,
    count: usize,
) -> Result<SampledTerminalCheck> {
    let n = table.state_dim();
    let chol = ing
        .p_f
        .clone()
        .cholesky()
        .ok_or_else(|| Error::invalid("P_f is not positive definite"))?;
    // x = L⁻ᵀ w with ‖w‖² ≤ ε gives xᵀPx = ‖w‖²
    let l_t = chol.l().transpose();
    let a_cl = table.a(1) + table.b(1) * &ing.k;
    let u_max = &table.system().u_max;
    let mut out = SampledTerminalCheck {
        points: count,
        worst_decrease: f64::NEG_INFINITY,
        worst_input_excess: f64::NEG_INFINITY,
        worst_invariance_excess: f64::NEG_INFINITY,
    };
    for idx in 0..count {
        let mut w = DVector::from_fn(n, |_, _| gaussian(rng));
        let norm = w.norm().max(1e-300);
        let radius = if idx % 2 == 0 {
            1.0
        } else {
            rng.gen::<f64>().powf(1.0 / n as f64)
        };
        w *= ing.epsilon.sqrt() * radius / norm;
        let x = l_t
            .clone()
            .solve_upper_triangular(&w)
            .ok_or_else(|| Error::numerical("terminal sampling", "singular factor", f64::NAN))?;
        let u = &ing.k * &x;
        let next = &a_cl * &x;
        let decrease = quad_form(&ing.p_f, &next) - quad_form(&ing.p_f, &x) + stage_cost(&x, &u, table.gamma(1))?;
        out.worst_decrease = out.worst_decrease.max(decrease);
        for j in 0..u.len() {
            out.worst_input_excess = out.worst_input_excess.max(u[j].abs() - u_max[j]);
        }
        out.worst_invariance_excess = out
            .worst_invariance_excess
            .max(quad_form(&ing.p_f, &next) - ing.epsilon);
    }
    Ok(out)
}

/// Standard normal draw via Box–Muller.
pub(crate) fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
