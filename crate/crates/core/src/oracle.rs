//! Reference computations that take a different numerical route from the
//! production code: truncated Taylor series, dense trapezoid quadrature,
//! implicit Gauss collocation and classical Runge–Kutta. Used by the test
//! suites and by the `verify` command.

use nalgebra::{DMatrix, DVector};

use crate::discretization::{CostWeights, LinearSystem};
use crate::quadrature::gauss_legendre;

/// Truncated Taylor series of `e^{At}`, summed until the increment drops
/// below `1e-16` relative to the running sum (or 200 terms).
pub fn taylor_exp(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let at = a * t;
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..200 {
        term = &term * &at / k as f64;
        sum += &term;
        let inc = term.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let scale = sum.iter().fold(1e-300_f64, |m, v| m.max(v.abs()));
        if inc < 1e-16 * scale {
            break;
        }
    }
    sum
}

/// `[A_s, B_s]` on a uniform grid `s_j = j·h/panels`, propagated with a
/// Taylor step.
fn grid_transitions(sys: &LinearSystem, h: f64, panels: usize) -> Vec<DMatrix<f64>> {
    let n = sys.state_dim();
    let step = taylor_exp(&sys.augmented(), h / panels as f64);
    let mut e = DMatrix::<f64>::identity(step.nrows(), step.ncols());
    let mut out = Vec::with_capacity(panels + 1);
    for _ in 0..=panels {
        out.push(e.rows(0, n).into_owned());
        e = &e * &step;
    }
    out
}

fn kernel_integrand(c: &DMatrix<f64>, weights: &CostWeights) -> DMatrix<f64> {
    c.transpose() * &weights.q * c
}

fn add_input_weight(mut g: DMatrix<f64>, weights: &CostWeights, h: f64) -> DMatrix<f64> {
    let n = weights.q.nrows();
    let m = weights.r.nrows();
    let mut uu = g.view_mut((n, n), (m, m));
    uu += &weights.r * h;
    g
}

/// Composite trapezoid approximation of Γ(h) with `panels` panels.
pub fn trapezoid_kernel(sys: &LinearSystem, weights: &CostWeights, h: f64, panels: usize) -> DMatrix<f64> {
    let grid = grid_transitions(sys, h, panels);
    let ds = h / panels as f64;
    let k = sys.state_dim() + sys.input_dim();
    let mut acc = DMatrix::<f64>::zeros(k, k);
    for (j, c) in grid.iter().enumerate() {
        let w = if j == 0 || j == panels { 0.5 } else { 1.0 };
        acc += kernel_integrand(c, weights) * (w * ds);
    }
    add_input_weight(acc, weights, h)
}

/// Trapezoid rule with the first Euler–Maclaurin endpoint correction
/// `-(Δ²/12)(f'(h) - f'(0))`. The derivative of the integrand is exact:
/// `d/ds [A_s, B_s] = A[A_s, B_s] + [0, B]`.
pub fn corrected_trapezoid_kernel(
    sys: &LinearSystem,
    weights: &CostWeights,
    h: f64,
    panels: usize,
) -> DMatrix<f64> {
    let grid = grid_transitions(sys, h, panels);
    let ds = h / panels as f64;
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let mut shift = DMatrix::<f64>::zeros(n, n + m);
    shift.view_mut((0, n), (n, m)).copy_from(&sys.b);
    let deriv = |c: &DMatrix<f64>| {
        let dc = &sys.a * c + &shift;
        dc.transpose() * &weights.q * c + c.transpose() * &weights.q * dc
    };
    let plain = trapezoid_kernel(sys, weights, h, panels);
    let correction = (deriv(&grid[panels]) - deriv(&grid[0])) * (ds * ds / 12.0);
    plain - correction
}

struct Collocation {
    a: DMatrix<f64>,
    b: Vec<f64>,
}

fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

fn poly_integral(p: &[f64], upper: f64) -> f64 {
    p.iter()
        .enumerate()
        .map(|(k, c)| c * upper.powi(k as i32 + 1) / (k as f64 + 1.0))
        .sum()
}

/// Butcher tableau of the `stages`-stage Gauss collocation method (order 2s).
fn gauss_collocation(stages: usize) -> Collocation {
    let (x, _) = gauss_legendre(stages);
    let c: Vec<f64> = x.iter().map(|v| 0.5 * (v + 1.0)).collect();
    let mut a = DMatrix::zeros(stages, stages);
    let mut b = vec![0.0; stages];
    for j in 0..stages {
        let mut lj = vec![1.0];
        for k in 0..stages {
            if k != j {
                let d = c[j] - c[k];
                lj = poly_mul(&lj, &[-c[k] / d, 1.0 / d]);
            }
        }
        for i in 0..stages {
            a[(i, j)] = poly_integral(&lj, c[i]);
        }
        b[j] = poly_integral(&lj, 1.0);
    }
    Collocation { a, b }
}

fn collocation_step(
    tab: &Collocation,
    a: &DMatrix<f64>,
    forcing: &DVector<f64>,
    x: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let n = x.len();
    let s = tab.b.len();
    let mut lhs = DMatrix::<f64>::identity(s * n, s * n);
    let mut rhs = DVector::zeros(s * n);
    let base = a * x + forcing;
    for i in 0..s {
        for j in 0..s {
            let mut blk = lhs.view_mut((i * n, j * n), (n, n));
            blk -= a * (h * tab.a[(i, j)]);
        }
        rhs.rows_mut(i * n, n).copy_from(&base);
    }
    let k = lhs.lu().solve(&rhs).expect("collocation system is regular for small h");
    let mut out = x.clone();
    for j in 0..s {
        out += k.rows(j * n, n) * (h * tab.b[j]);
    }
    out
}

/// Integrates `ẋ = Ax + Bu` (constant `u`) over `[0, t]` with the 4-stage
/// Gauss collocation method (order 8) and step-doubling error control.
pub fn integrate_lti(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    tol: f64,
) -> DVector<f64> {
    let tab = gauss_collocation(4);
    let forcing = b * u;
    let mut x = x0.clone();
    let mut elapsed = 0.0;
    let mut h = (t / 8.0).clamp(1e-6, 0.05);
    while elapsed < t {
        let step = h.min(t - elapsed);
        let full = collocation_step(&tab, a, &forcing, &x, step);
        let half = collocation_step(&tab, a, &forcing, &x, 0.5 * step);
        let two_halves = collocation_step(&tab, a, &forcing, &half, 0.5 * step);
        let err = (&two_halves - &full).amax() / 255.0;
        let allowed = tol * two_halves.amax().max(1.0);
        if err <= allowed || step < 1e-10 {
            x = two_halves;
            elapsed += step;
        }
        let factor = if err == 0.0 {
            4.0
        } else {
            (0.9 * (allowed / err).powf(1.0 / 9.0)).clamp(0.2, 4.0)
        };
        h = step * factor;
    }
    x
}

/// Running cost `∫_0^t xᵀQx + uᵀRu` under a constant input, by fixed-step
/// classical RK4 on the state augmented with the cost accumulator.
/// Returns `(x(t), cost)`.
pub fn rk4_running_cost(
    sys: &LinearSystem,
    weights: &CostWeights,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    steps: usize,
) -> (DVector<f64>, f64) {
    let input_cost = u.dot(&(&weights.r * u));
    let f = |x: &DVector<f64>| -> (DVector<f64>, f64) {
        (&sys.a * x + &sys.b * u, x.dot(&(&weights.q * x)) + input_cost)
    };
    let h = t / steps as f64;
    let mut x = x0.clone();
    let mut cost = 0.0;
    for _ in 0..steps {
        let (k1, c1) = f(&x);
        let (k2, c2) = f(&(&x + &k1 * (0.5 * h)));
        let (k3, c3) = f(&(&x + &k2 * (0.5 * h)));
        let (k4, c4) = f(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        cost += (c1 + 2.0 * c2 + 2.0 * c3 + c4) * (h / 6.0);
    }
    (x, cost)
}
