//! Uniform B-spline bases on `[-1, 1]`.

use crate::error::{invalid, Result};

/// `G` uniform intervals on `[-1, 1]`, extended by `k` knots on each side,
/// giving `G + 2k + 1` knots and `G + k` basis functions of order `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplineGrid {
    intervals: usize,
    order: usize,
}

impl SplineGrid {
    pub fn new(intervals: usize, order: usize) -> Result<Self> {
        if intervals == 0 {
            return invalid("spline grid needs at least one interval");
        }
        if order > 7 {
            return invalid(format!("spline order {order} is not supported (max 7)"));
        }
        Ok(SplineGrid { intervals, order })
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_basis(&self) -> usize {
        self.intervals + self.order
    }

    pub fn step(&self) -> f64 {
        2.0 / self.intervals as f64
    }

    pub fn knot(&self, i: usize) -> f64 {
        -1.0 + (i as f64 - self.order as f64) * self.step()
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..self.intervals + 2 * self.order + 1).map(|i| self.knot(i)).collect()
    }

    /// Index `m` of the knot interval `[t_m, t_{m+1})` holding `x ∈ [-1, 1]`.
    /// The right end `x = 1` is assigned to the last interval of `[-1, 1]`
    /// when `k = 0`, so the order-0 basis stays a partition of unity there.
    fn interval(&self, x: f64) -> usize {
        let k = self.order;
        let last = self.intervals + k - usize::from(k == 0);
        let mut m = (((x + 1.0) / self.step()).floor() as isize + k as isize).clamp(k as isize, last as isize) as usize;
        while m > k && self.knot(m) > x {
            m -= 1;
        }
        while m < last && self.knot(m + 1) <= x {
            m += 1;
        }
        m
    }

    /// Evaluate the `k + 1` possibly non-zero bases at `x` (clamped to
    /// `[-1, 1]`). Returns the index of the first one; `values[..=k]` and,
    /// when given, `derivs[..=k]` (d/dx of the clamped input) are filled.
    pub fn eval_local(&self, x: f64, values: &mut [f64], derivs: Option<&mut [f64]>) -> usize {
        let k = self.order;
        let xc = x.clamp(-1.0, 1.0);
        let m = self.interval(xc);
        let h = self.step();
        // b[r] holds B_{m-p+r, p} while p rises from 0 to k.
        let mut b = [0.0f64; 8];
        b[0] = 1.0;
        let mut lower = [0.0f64; 8];
        for p in 1..=k {
            if p == k {
                lower[..k].copy_from_slice(&b[..k]);
            }
            let mut next = [0.0f64; 8];
            for r in 0..=p {
                let j = m + r - p;
                let left = if r > 0 { (xc - self.knot(j)) / (p as f64 * h) * b[r - 1] } else { 0.0 };
                let right = if r < p { (self.knot(j + p + 1) - xc) / (p as f64 * h) * b[r] } else { 0.0 };
                next[r] = left + right;
            }
            b = next;
        }
        values[..=k].copy_from_slice(&b[..=k]);
        if let Some(d) = derivs {
            let inside = (-1.0..=1.0).contains(&x);
            for r in 0..=k {
                d[r] = if k == 0 || !inside {
                    0.0
                } else {
                    // B_{j,k}' = (B_{j,k-1} − B_{j+1,k-1}) / h with j = m − k + r.
                    let a = if r > 0 { lower[r - 1] } else { 0.0 };
                    let c = if r < k { lower[r] } else { 0.0 };
                    (a - c) / h
                };
            }
        }
        m - k
    }

    /// Dense basis vector of length `G + k`.
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let mut local = [0.0; 8];
        let start = self.eval_local(x, &mut local, None);
        let mut out = vec![0.0; self.n_basis()];
        for (r, v) in local[..=self.order].iter().enumerate() {
            if let Some(o) = out.get_mut(start + r) {
                *o = *v;
            }
        }
        out
    }

    /// Dense derivative of the basis vector with respect to `x`.
    pub fn basis_derivative(&self, x: f64) -> Vec<f64> {
        let (mut local, mut d) = ([0.0; 8], [0.0; 8]);
        let start = self.eval_local(x, &mut local, Some(&mut d));
        let mut out = vec![0.0; self.n_basis()];
        for (r, v) in d[..=self.order].iter().enumerate() {
            if let Some(o) = out.get_mut(start + r) {
                *o = *v;
            }
        }
        out
    }
}
