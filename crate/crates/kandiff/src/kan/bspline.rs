//! Uniform B-spline basis via the Cox-de Boor recursion.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Uniform knot grid over [t_min, t_max] with `grid_size` intervals and
/// `order` extra knots replicated (extended, not clamped) per side. A
/// degree-`order` spline over it has `grid_size + order` basis functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub grid_size: usize,
    pub order: usize,
}

impl SplineGrid {
    pub fn new(t_min: f64, t_max: f64, grid_size: usize, order: usize) -> Result<Self> {
        if t_min >= t_max {
            return Err(Error::DegenerateGrid { t_min, t_max });
        }
        assert!(grid_size >= 1 && order >= 1, "G >= 1, k >= 1");
        Ok(SplineGrid {
            t_min,
            t_max,
            grid_size,
            order,
        })
    }

    /// Default grid from the original KAN convention: G=5, k=3, [-1, 1].
    pub fn standard() -> Self {
        SplineGrid::new(-1.0, 1.0, 5, 3).expect("valid")
    }

    pub fn basis_count(&self) -> usize {
        self.grid_size + self.order
    }

    fn step(&self) -> f64 {
        (self.t_max - self.t_min) / self.grid_size as f64
    }

    /// Extended knot vector, grid_size + 2*order + 1 entries.
    pub fn knots(&self) -> Vec<f64> {
        let h = self.step();
        let k = self.order as isize;
        (0..=(self.grid_size as isize + 2 * k))
            .map(|i| self.t_min + (i - k) as f64 * h)
            .collect()
    }

    /// Knot-interval index for clamped x: half-open [t_j, t_{j+1}),
    /// closed at the final knot.
    fn interval(&self, x: f64) -> usize {
        let k = self.order;
        let g = self.grid_size;
        let rel = (x - self.t_min) / self.step();
        let cell = (rel.floor() as isize).clamp(0, g as isize - 1) as usize;
        k + cell
    }

    /// All basis values B_j(x), j = 0..G+k. Inputs are clamped to the
    /// grid domain.
    pub fn basis<T: Scalar>(&self, x: T) -> Vec<T> {
        let mut vals = vec![T::zero(); self.basis_count()];
        self.basis_into(x, &mut vals, None);
        vals
    }

    /// Basis values and optionally the derivatives B_j'(x). The spline
    /// branch is constant outside the clamped domain, so derivatives are
    /// zero there.
    pub fn basis_into<T: Scalar>(&self, x: T, vals: &mut [T], derivs: Option<&mut [T]>) {
        let count = self.basis_count();
        debug_assert_eq!(vals.len(), count);
        let xin = x.as_f64();
        let in_domain = xin >= self.t_min && xin <= self.t_max;
        let xf = xin.clamp(self.t_min, self.t_max);
        let k = self.order;
        let j = self.interval(xf);
        let knots = self.knots();

        // Cox-de Boor triangle: nonzero degree-k basis B_{j-k..=j}.
        let mut n = vec![0.0f64; k + 1];
        let mut left = vec![0.0f64; k + 1];
        let mut right = vec![0.0f64; k + 1];
        n[0] = 1.0;
        for d in 1..=k {
            left[d] = xf - knots[j + 1 - d];
            right[d] = knots[j + d] - xf;
            let mut saved = 0.0;
            for r in 0..d {
                let tmp = n[r] / (right[r + 1] + left[d - r]);
                n[r] = saved + right[r + 1] * tmp;
                saved = left[d - r] * tmp;
            }
            n[d] = saved;
        }

        for v in vals.iter_mut() {
            *v = T::zero();
        }
        for (r, nv) in n.iter().enumerate() {
            vals[j - k + r] = T::fl(*nv);
        }

        if let Some(derivs) = derivs {
            debug_assert_eq!(derivs.len(), count);
            for d in derivs.iter_mut() {
                *d = T::zero();
            }
            if !in_domain || k == 0 {
                return;
            }
            // Degree k-1 triangle for the derivative formula
            // B'_{m,k} = k * (B_{m,k-1}/(t_{m+k}-t_m) - B_{m+1,k-1}/(t_{m+k+1}-t_{m+1})).
            let mut nl = vec![0.0f64; k];
            nl[0] = 1.0;
            for d in 1..k {
                let mut saved = 0.0;
                for r in 0..d {
                    let tmp = nl[r] / ((knots[j + r + 1] - xf) + (xf - knots[j + 1 - (d - r)]));
                    nl[r] = saved + (knots[j + r + 1] - xf) * tmp;
                    saved = (xf - knots[j + 1 - (d - r)]) * tmp;
                }
                nl[d] = saved;
            }
            // nl[r] = B_{j-(k-1)+r, k-1}(x), r = 0..k-1
            let lower = |m: isize| -> f64 {
                let r = m - (j as isize - (k as isize - 1));
                if r < 0 || r >= k as isize {
                    0.0
                } else {
                    nl[r as usize]
                }
            };
            let kf = k as f64;
            for m in (j - k)..=j {
                let mi = m as isize;
                let denom1 = knots[m + k] - knots[m];
                let denom2 = knots[m + k + 1] - knots[m + 1];
                let d = kf * (lower(mi) / denom1 - lower(mi + 1) / denom2);
                derivs[m] = T::fl(d);
            }
        }
    }
}
