//! Gauss–Legendre rules and an adaptive composite integrator for
//! matrix-valued integrands.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::max_abs;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Adaptive composite Gauss–Legendre integration of a matrix-valued
/// function over `[a, b]`.
///
/// A panel is accepted when the single-panel rule and the two-half-panel
/// rule agree to `abs_tol` (entrywise max), scaled by the panel's share of
/// the interval.
pub struct AdaptiveGaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    pub abs_tol: f64,
    pub max_depth: usize,
}

impl AdaptiveGaussLegendre {
    pub fn new(order: usize, abs_tol: f64) -> Self {
        let (nodes, weights) = gauss_legendre(order);
        Self {
            nodes,
            weights,
            abs_tol,
            max_depth: 30,
        }
    }

    fn panel<F>(&self, f: &mut F, a: f64, b: f64) -> Result<DMatrix<f64>>
    where
        F: FnMut(f64) -> Result<DMatrix<f64>>,
    {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc: Option<DMatrix<f64>> = None;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let v = f(mid + half * x)? * (w * half);
            acc = Some(match acc {
                Some(s) => s + v,
                None => v,
            });
        }
        Ok(acc.expect("rule has nodes"))
    }

    pub fn integrate<F>(&self, mut f: F, a: f64, b: f64) -> Result<DMatrix<f64>>
    where
        F: FnMut(f64) -> Result<DMatrix<f64>>,
    {
        let whole = self.panel(&mut f, a, b)?;
        let total_width = b - a;
        self.refine(&mut f, a, b, whole, total_width, 0)
    }

    fn refine<F>(
        &self,
        f: &mut F,
        a: f64,
        b: f64,
        whole: DMatrix<f64>,
        total_width: f64,
        depth: usize,
    ) -> Result<DMatrix<f64>>
    where
        F: FnMut(f64) -> Result<DMatrix<f64>>,
    {
        let mid = 0.5 * (a + b);
        let left = self.panel(f, a, mid)?;
        let right = self.panel(f, mid, b)?;
        let split = &left + &right;
        let err = max_abs(&(&split - &whole));
        let budget = self.abs_tol * (b - a) / total_width;
        if err <= budget {
            return Ok(split);
        }
        if depth >= self.max_depth {
            return Err(Error::numerical(
                "adaptive quadrature",
                format!("no convergence on [{a}, {b}] after {depth} refinements"),
                err,
            ));
        }
        let l = self.refine(f, a, mid, left, total_width, depth + 1)?;
        let r = self.refine(f, mid, b, right, total_width, depth + 1)?;
        Ok(l + r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(5);
        // degree 9 is the highest exact degree for 5 nodes
        let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((approx - 2.0 / 9.0).abs() < 1e-15);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_integrates_oscillatory_scalar() {
        let quad = AdaptiveGaussLegendre::new(8, 1e-13);
        let v = quad
            .integrate(|s| Ok(DMatrix::from_element(1, 1, (5.0 * s).cos())), 0.0, 3.0)
            .unwrap();
        assert!((v[(0, 0)] - (15.0_f64).sin() / 5.0).abs() < 1e-13);
    }
}
