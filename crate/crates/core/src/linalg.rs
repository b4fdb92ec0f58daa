//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `m - m^T`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::NAN)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NAN)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// `x^T M x`.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

/// Checks that `m` is square, symmetric and positive definite.
pub fn check_spd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::invalid(format!(
            "{name} must be a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !is_finite(m) {
        return Err(Error::invalid(format!("{name} has non-finite entries")));
    }
    let scale = max_abs(m).max(1.0);
    if asymmetry(m) > 1e-12 * scale {
        return Err(Error::invalid(format!("{name} is not symmetric")));
    }
    let lmin = min_eigenvalue(m);
    if lmin <= 1e-12 {
        return Err(Error::invalid(format!(
            "{name} is not positive definite (min eigenvalue {lmin:.3e})"
        )));
    }
    Ok(())
}

/// Builds the block matrix `[[a, b], [c, d]]`.
pub fn block2(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (r0, c0) = a.shape();
    let (r1, c1) = d.shape();
    let mut out = DMatrix::zeros(r0 + r1, c0 + c1);
    out.view_mut((0, 0), (r0, c0)).copy_from(a);
    out.view_mut((0, c0), (r0, c1)).copy_from(b);
    out.view_mut((r0, 0), (r1, c0)).copy_from(c);
    out.view_mut((r0, c0), (r1, c1)).copy_from(d);
    out
}

/// Concatenates `x` and `u` into a single column.
pub fn stack(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(x.len() + u.len());
    out.rows_mut(0, x.len()).copy_from(x);
    out.rows_mut(x.len(), u.len()).copy_from(u);
    out
}

/// Relative difference with an absolute floor of one.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn mat_rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = max_abs(a).max(max_abs(b)).max(1.0);
    max_abs(&(a - b)) / scale
}
