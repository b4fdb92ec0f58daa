//! Brute-force reference for the scalar integrator `ẋ = u` with unit
//! weights, `|u| ≤ 1` and a terminal interval `p_f x² ≤ ε`.
//!
//! All inputs but the last are enumerated on a grid; the cost is quadratic
//! in the last input, which is minimized exactly over the box intersected
//! with the terminal interval.

/// Grid search over the first inputs of one sampling pattern.
#[derive(Debug, Clone, Copy)]
pub struct IntegratorGrid {
    pub delta: f64,
    pub p_f: f64,
    pub epsilon: f64,
    pub step: f64,
}

impl IntegratorGrid {
    /// `Γ(h)` entries `(xx, xu, uu)` for unit weights.
    pub fn gamma(h: f64) -> [f64; 3] {
        [h, h * h / 2.0, h * h * h / 3.0 + h]
    }

    pub fn stage(x: f64, u: f64, h: f64) -> f64 {
        let g = Self::gamma(h);
        g[0] * x * x + 2.0 * g[1] * x * u + g[2] * u * u
    }

    fn hold(&self, pattern: usize, j: usize) -> f64 {
        if j == 0 {
            pattern as f64 * self.delta
        } else {
            self.delta
        }
    }

    /// Accumulated stage cost and state after the inputs `u`.
    pub fn prefix(&self, pattern: usize, x0: f64, u: &[f64]) -> (f64, f64) {
        let mut x = x0;
        let mut cost = 0.0;
        for (j, &v) in u.iter().enumerate() {
            let h = self.hold(pattern, j);
            cost += Self::stage(x, v, h);
            x += h * v;
        }
        (cost, x)
    }

    /// Exact minimum over the last input, or `None` if no admissible last
    /// input reaches the terminal interval.
    pub fn last_step(&self, prefix_cost: f64, x: f64, h: f64) -> Option<f64> {
        let total = |v: f64| Self::stage(x, v, h) + self.p_f * (x + h * v).powi(2);
        let r = (self.epsilon / self.p_f).sqrt();
        let lo = ((-r - x) / h).max(-1.0);
        let hi = ((r - x) / h).min(1.0);
        if lo > hi {
            return None;
        }
        let (f0, f1, fm) = (total(0.0), total(1.0), total(-1.0));
        let a = 0.5 * (f1 + fm) - f0;
        let b = 0.5 * (f1 - fm);
        let v = if a > 0.0 { (-b / (2.0 * a)).clamp(lo, hi) } else { lo };
        Some(prefix_cost + total(v))
    }

    /// Minimum cost of pattern `pattern` with `inputs` decision inputs
    /// (at most three), or `None` when infeasible.
    pub fn minimum(&self, pattern: usize, inputs: usize, x0: f64) -> Option<f64> {
        assert!((1..=3).contains(&inputs), "grid search supports one to three inputs");
        let steps = (2.0 / self.step).round() as usize;
        let grid: Vec<f64> = (0..=steps).map(|k| -1.0 + k as f64 * self.step).collect();
        let last_h = self.hold(pattern, inputs - 1);
        let mut best: Option<f64> = None;
        let mut visit = |prefix: &[f64]| {
            let (c, x) = self.prefix(pattern, x0, prefix);
            if let Some(v) = self.last_step(c, x, last_h) {
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        };
        match inputs {
            1 => visit(&[]),
            2 => grid.iter().for_each(|&a| visit(&[a])),
            _ => {
                for &a in &grid {
                    for &b in &grid {
                        visit(&[a, b]);
                    }
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_state_costs_nothing() {
        let g = IntegratorGrid { delta: 0.5, p_f: 1.0, epsilon: 1.0, step: 1e-2 };
        assert_eq!(g.minimum(1, 2, 0.0), Some(0.0));
    }

    #[test]
    fn unreachable_terminal_set_is_infeasible() {
        let g = IntegratorGrid { delta: 0.5, p_f: 1.0, epsilon: 0.01, step: 1e-2 };
        // two holds of 0.5 move the state by at most 1
        assert_eq!(g.minimum(1, 2, 1.5), None);
    }

    #[test]
    fn single_input_matches_hand_computation() {
        let g = IntegratorGrid { delta: 1.0, p_f: 1.0, epsilon: 100.0, step: 1e-2 };
        // J(v) = 1 + v + (4/3) v² + (1 + v)², minimized at v = -9/14
        let v = -9.0 / 14.0;
        let expected = 1.0 + v + 4.0 / 3.0 * v * v + (1.0 + v) * (1.0 + v);
        assert!((g.minimum(1, 1, 1.0).unwrap() - expected).abs() < 1e-12);
    }
}
