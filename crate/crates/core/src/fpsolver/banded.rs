//! Banded LU factorization without pivoting.
//!
//! Used for `I - dt A` where `A` is the discrete generator: the matrix is a
//! nonsingular M-matrix and column diagonally dominant, so elimination needs
//! no pivoting and keeps the sign pattern (nonpositive multipliers and
//! off-diagonals). Both triangular solves then only add nonnegative terms,
//! and a nonnegative right-hand side yields a nonnegative solution even in
//! floating point.

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    lower: usize,
    upper: usize,
    width: usize,
    /// Row `r` holds columns `r - lower ..= r + upper`.
    band: Vec<f64>,
}

impl BandLu {
    /// Factorizes `I - dt A`.
    pub fn shifted(a: &CsrMatrix, dt: f64) -> Result<Self> {
        let (lower, upper) = a.bandwidths();
        let n = a.n;
        let width = lower + upper + 1;
        let mut band = vec![0.0; n * width];
        for r in 0..n {
            band[r * width + lower] = 1.0;
            for (c, v) in a.row(r) {
                band[r * width + c + lower - r] -= dt * v;
            }
        }
        let mut lu = Self { n, lower, upper, width, band };
        lu.factor()?;
        Ok(lu)
    }

    fn factor(&mut self) -> Result<()> {
        let (n, lower, upper, w) = (self.n, self.lower, self.upper, self.width);
        for k in 0..n {
            let pivot = self.band[k * w + lower];
            if !(pivot > 0.0) {
                return Err(Error::Singular(k));
            }
            let c_end = (k + upper).min(n - 1);
            let (head, tail) = self.band.split_at_mut((k + 1) * w);
            let pivot_row = &head[k * w + lower..k * w + lower + (c_end - k) + 1];
            for r in k + 1..=(k + lower).min(n - 1) {
                let row = &mut tail[(r - k - 1) * w..(r - k) * w];
                let at = k + lower - r;
                let l = row[at] / pivot;
                row[at] = l;
                if l == 0.0 {
                    continue;
                }
                // Columns k+1..=c_end of row r sit at offsets at+1.. .
                let dst = &mut row[at + 1..at + 1 + (c_end - k)];
                for (d, u) in dst.iter_mut().zip(&pivot_row[1..]) {
                    *d -= l * u;
                }
            }
        }
        Ok(())
    }

    /// Solves `(I - dt A) x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, lower, upper, w) = (self.n, self.lower, self.upper, self.width);
        for r in 0..n {
            let c0 = r.saturating_sub(lower);
            let row = &self.band[r * w..(r + 1) * w];
            let acc = dot(&row[c0 + lower - r..lower], &x[c0..r]);
            x[r] -= acc;
        }
        for r in (0..n).rev() {
            let c1 = (r + upper).min(n - 1);
            let row = &self.band[r * w..(r + 1) * w];
            let acc = dot(&row[lower + 1..lower + 1 + (c1 - r)], &x[r + 1..=c1]);
            x[r] = (x[r] - acc) / row[lower];
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }
}

/// Dot product with four fixed-order partial sums.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, ra) = a.split_at(a.len() - a.len() % 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
