//! Exact zero-order-hold discretization of `ẋ = Ax + Bu` and the integrated
//! stage-cost kernel Γ(h).
//!
//! For a hold of length `h` starting from `(x, u)` the running cost
//! `∫_0^h x(s)ᵀQx(s) + uᵀRu ds` is the quadratic form `[x; u]ᵀ Γ(h) [x; u]`
//! where
//!
//! ```text
//! Γ(h) = ∫_0^h [A_sᵀQA_s   A_sᵀQB_s      ] ds,   A_s = e^{As},
//!              [B_sᵀQA_s   B_sᵀQB_s + R  ]      B_s = ∫_0^s e^{Aτ}dτ B.
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_spd, is_finite, quad_form, stack, symmetrize};
use crate::quadrature::AdaptiveGaussLegendre;

/// Absolute tolerance of the adaptive kernel quadrature.
pub const KERNEL_ABS_TOL: f64 = 1e-11;
const KERNEL_RULE_ORDER: usize = 10;

/// Continuous-time plant `ẋ = Ax + Bu` with the box input set
/// `|u_j| ≤ u_max[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub u_max: DVector<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, u_max: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::invalid(format!(
                "A must be a non-empty square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::invalid(format!(
                "B must be {n}xm with m >= 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if u_max.len() != b.ncols() {
            return Err(Error::invalid(format!(
                "expected {} input bounds, got {}",
                b.ncols(),
                u_max.len()
            )));
        }
        if !is_finite(&a) || !is_finite(&b) {
            return Err(Error::invalid("A and B must be finite"));
        }
        if u_max.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::invalid("input bounds must be finite and strictly positive"));
        }
        Ok(Self { a, b, u_max })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `[[A, B], [0, 0]]`, whose exponential carries `(A_h, B_h)` in its top rows.
    pub fn augmented(&self) -> DMatrix<f64> {
        let (n, m) = (self.state_dim(), self.input_dim());
        let mut aug = DMatrix::zeros(n + m, n + m);
        aug.view_mut((0, 0), (n, n)).copy_from(&self.a);
        aug.view_mut((0, n), (n, m)).copy_from(&self.b);
        aug
    }

    pub fn input_admissible(&self, u: &DVector<f64>, tol: f64) -> bool {
        u.iter().zip(self.u_max.iter()).all(|(v, bound)| v.abs() <= bound + tol)
    }
}

/// Running-cost weights `Q ≻ 0`, `R ≻ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        check_spd("Q", &q)?;
        check_spd("R", &r)?;
        Ok(Self { q, r })
    }

    pub fn check_against(&self, sys: &LinearSystem) -> Result<()> {
        if self.q.nrows() != sys.state_dim() || self.r.nrows() != sys.input_dim() {
            return Err(Error::invalid(format!(
                "weights are {}x{} / {}x{} but the system has n = {}, m = {}",
                self.q.nrows(),
                self.q.ncols(),
                self.r.nrows(),
                self.r.ncols(),
                sys.state_dim(),
                sys.input_dim()
            )));
        }
        Ok(())
    }
}

// Padé(13) coefficients and the scaling threshold θ₁₃.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// `e^{At}` by scaling and squaring with the degree-13 Padé approximant.
pub fn matrix_exponential(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::invalid("matrix exponential needs a square matrix"));
    }
    if !is_finite(a) || !t.is_finite() {
        return Err(Error::invalid("matrix exponential of non-finite input"));
    }
    if t < 0.0 {
        return Err(Error::invalid(format!("negative time {t} in matrix exponential")));
    }
    let n = a.nrows();
    let at = a * t;
    let norm1 = (0..n)
        .map(|j| at.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let x = at * 0.5_f64.powi(squarings);

    let ident = DMatrix::<f64>::identity(n, n);
    let x2 = &x * &x;
    let x4 = &x2 * &x2;
    let x6 = &x4 * &x2;
    let b = &PADE13;
    let inner_u = &x6 * (&x6 * b[13] + &x4 * b[11] + &x2 * b[9]);
    let u = &x * (inner_u + &x6 * b[7] + &x4 * b[5] + &x2 * b[3] + &ident * b[1]);
    let inner_v = &x6 * (&x6 * b[12] + &x4 * b[10] + &x2 * b[8]);
    let v = inner_v + &x6 * b[6] + &x4 * b[4] + &x2 * b[2] + &ident * b[0];

    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .ok_or_else(|| Error::numerical("matrix exponential", "singular Padé denominator", f64::NAN))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// Exact ZOH discretization over a hold of length `h`: `(A_h, B_h)`.
pub fn discretize(sys: &LinearSystem, h: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid(format!("discretization step must be positive, got {h}")));
    }
    Ok(split_augmented(sys, &matrix_exponential(&sys.augmented(), h)?))
}

fn split_augmented(sys: &LinearSystem, e: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (sys.state_dim(), sys.input_dim());
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

/// Integrated stage-cost kernel Γ(h), symmetrized.
pub fn stage_cost_kernel(sys: &LinearSystem, weights: &CostWeights, h: f64) -> Result<DMatrix<f64>> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid(format!("kernel length must be positive, got {h}")));
    }
    weights.check_against(sys)?;
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let aug = sys.augmented();
    let quad = AdaptiveGaussLegendre::new(KERNEL_RULE_ORDER, KERNEL_ABS_TOL);
    let integral = quad.integrate(
        |s| {
            // top n rows of exp(aug s) are [A_s, B_s]
            let e = matrix_exponential(&aug, s)?;
            let c = e.rows(0, n).into_owned();
            Ok(c.transpose() * &weights.q * c)
        },
        0.0,
        h,
    )?;
    let mut gamma = integral;
    let mut uu = gamma.view_mut((n, n), (m, m));
    uu += &weights.r * h;
    Ok(symmetrize(&gamma))
}

/// `F(x, u, h) = [x; u]ᵀ Γ(h) [x; u]`.
pub fn stage_cost(x: &DVector<f64>, u: &DVector<f64>, gamma: &DMatrix<f64>) -> Result<f64> {
    if x.len() + u.len() != gamma.nrows() || !gamma.is_square() {
        return Err(Error::invalid(format!(
            "stage cost: [x; u] has length {} but Γ is {}x{}",
            x.len() + u.len(),
            gamma.nrows(),
            gamma.ncols()
        )));
    }
    Ok(quad_form(gamma, &stack(x, u)))
}

/// Precomputed `(A_h, B_h, Γ(h))` for `h ∈ {δ, 2δ, …, Mδ}`.
#[derive(Debug, Clone)]
pub struct DiscretizationTable {
    delta: f64,
    horizon_steps: usize,
    patterns: usize,
    a_h: Vec<DMatrix<f64>>,
    b_h: Vec<DMatrix<f64>>,
    gamma: Vec<DMatrix<f64>>,
    sys: LinearSystem,
    weights: CostWeights,
}

impl DiscretizationTable {
    /// `horizon_steps` is N_p (so T_p = N_p·δ) and `patterns` is M < N_p.
    pub fn new(
        sys: &LinearSystem,
        weights: &CostWeights,
        delta: f64,
        horizon_steps: usize,
        patterns: usize,
    ) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::invalid(format!("δ must be positive, got {delta}")));
        }
        if patterns == 0 || patterns >= horizon_steps {
            return Err(Error::invalid(format!(
                "need 1 <= M < N_p, got M = {patterns}, N_p = {horizon_steps}"
            )));
        }
        weights.check_against(sys)?;
        let mut a_h = Vec::with_capacity(patterns);
        let mut b_h = Vec::with_capacity(patterns);
        let mut gamma = Vec::with_capacity(patterns);
        for i in 1..=patterns {
            let h = i as f64 * delta;
            let (a, b) = discretize(sys, h)?;
            a_h.push(a);
            b_h.push(b);
            gamma.push(stage_cost_kernel(sys, weights, h)?);
        }
        Ok(Self {
            delta,
            horizon_steps,
            patterns,
            a_h,
            b_h,
            gamma,
            sys: sys.clone(),
            weights: weights.clone(),
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// N_p.
    pub fn horizon_steps(&self) -> usize {
        self.horizon_steps
    }

    /// T_p = N_p·δ.
    pub fn horizon(&self) -> f64 {
        self.horizon_steps as f64 * self.delta
    }

    /// M.
    pub fn patterns(&self) -> usize {
        self.patterns
    }

    pub fn system(&self) -> &LinearSystem {
        &self.sys
    }

    pub fn weights(&self) -> &CostWeights {
        &self.weights
    }

    pub fn state_dim(&self) -> usize {
        self.sys.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.sys.input_dim()
    }

    fn index(&self, multiple: usize) -> usize {
        assert!(
            (1..=self.patterns).contains(&multiple),
            "hold multiple {multiple} outside 1..={}",
            self.patterns
        );
        multiple - 1
    }

    /// `A_{iδ}`.
    pub fn a(&self, multiple: usize) -> &DMatrix<f64> {
        &self.a_h[self.index(multiple)]
    }

    /// `B_{iδ}`.
    pub fn b(&self, multiple: usize) -> &DMatrix<f64> {
        &self.b_h[self.index(multiple)]
    }

    /// `Γ(iδ)`.
    pub fn gamma(&self, multiple: usize) -> &DMatrix<f64> {
        &self.gamma[self.index(multiple)]
    }

    /// One hold of `multiple·δ` from `x` under the constant input `u`.
    pub fn step(&self, multiple: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.a(multiple) * x + self.b(multiple) * u
    }
}
