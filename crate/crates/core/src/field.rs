//! Cell grids over the state space and cell-averaged densities on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Uniform cell grid over `[v_lo, v_hi) x [0, g_max]`.
///
/// Cells are stored g-major: cell `(i, j)` (voltage index `i`, conductance
/// index `j`) lives at `j * n_v + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_v: usize,
    pub n_g: usize,
    pub g_max: f64,
    pub v_lo: f64,
    pub v_hi: f64,
}

impl GridSpec {
    /// Grid over the model's voltage range.
    pub fn new(params: &ModelParams, n_v: usize, n_g: usize, g_max: f64) -> Result<Self> {
        Self::with_voltage_range(params.v_r, params.v_f, n_v, n_g, g_max)
    }

    pub fn with_voltage_range(v_lo: f64, v_hi: f64, n_v: usize, n_g: usize, g_max: f64) -> Result<Self> {
        if n_v == 0 || n_g == 0 {
            return Err(Error::InvalidGrid(format!("empty grid {n_v}x{n_g}")));
        }
        if !(g_max > 0.0) || !g_max.is_finite() {
            return Err(Error::InvalidGrid(format!("g_max must be positive, got {g_max}")));
        }
        if !(v_hi > v_lo) {
            return Err(Error::InvalidGrid(format!("empty voltage range [{v_lo}, {v_hi})")));
        }
        Ok(Self { n_v, n_g, g_max, v_lo, v_hi })
    }

    /// Checks the stricter requirements of the finite-volume solver: at least
    /// 8 cells per axis, a truncation level at least `g_in + 6 sqrt(a)`, and a
    /// cell face exactly at `g_F` whenever `g_F` falls inside the grid.
    pub fn validate_for_solver(&self, params: &ModelParams) -> Result<()> {
        if self.n_v < 8 || self.n_g < 8 {
            return Err(Error::InvalidGrid(format!("need n_v, n_g >= 8, got {}x{}", self.n_v, self.n_g)));
        }
        let floor = params.g_in + 6.0 * params.a.sqrt();
        if self.g_max < floor {
            return Err(Error::InvalidGrid(format!("g_max = {} is below g_in + 6 sqrt(a) = {floor}", self.g_max)));
        }
        if (self.v_lo - params.v_r).abs() > 1e-12 || (self.v_hi - params.v_f).abs() > 1e-12 {
            return Err(Error::InvalidGrid("voltage range must be [V_R, V_F)".into()));
        }
        if self.critical_face(params).is_none() {
            let g_f = params.g_f();
            let k = g_f / self.dg();
            return Err(Error::InvalidGrid(format!(
                "no cell face at g_F = {g_f}: g_F / dg = {k} is not an integer; \
                 choose g_max so that n_g * g_F / g_max is a whole number"
            )));
        }
        Ok(())
    }

    /// Index of the face at `g_F` (number of cells below it), if aligned.
    /// `g_F >= g_max` counts as aligned at `n_g`.
    pub fn critical_face(&self, params: &ModelParams) -> Option<usize> {
        let g_f = params.g_f();
        if g_f >= self.g_max {
            return Some(self.n_g);
        }
        let k = g_f / self.dg();
        let r = k.round();
        if (k - r).abs() <= 1e-9 * k.max(1.0) {
            Some(r as usize)
        } else {
            None
        }
    }

    #[inline]
    pub fn dv(&self) -> f64 {
        (self.v_hi - self.v_lo) / self.n_v as f64
    }

    #[inline]
    pub fn dg(&self) -> f64 {
        self.g_max / self.n_g as f64
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dv() * self.dg()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_v * self.n_g
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n_v + i
    }

    #[inline]
    pub fn v_center(&self, i: usize) -> f64 {
        self.v_lo + (i as f64 + 0.5) * self.dv()
    }

    #[inline]
    pub fn g_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dg()
    }

    /// Cell containing `(v, g)`; `None` when `g > g_max` (overflow) or `v`
    /// lies outside the voltage range.
    pub fn locate(&self, v: f64, g: f64) -> Option<(usize, usize)> {
        if !(v >= self.v_lo && v < self.v_hi) || !(g >= 0.0 && g <= self.g_max) {
            return None;
        }
        let i = (((v - self.v_lo) / self.dv()) as usize).min(self.n_v - 1);
        let j = ((g / self.dg()) as usize).min(self.n_g - 1);
        Some((i, j))
    }

    /// Grid with `fv x fg` blocks of cells merged into one.
    pub fn coarsen(&self, fv: usize, fg: usize) -> Result<Self> {
        if fv == 0 || fg == 0 || !self.n_v.is_multiple_of(fv) || !self.n_g.is_multiple_of(fg) {
            return Err(Error::GridMismatch(format!("cannot coarsen {}x{} by {fv}x{fg}", self.n_v, self.n_g)));
        }
        Ok(Self { n_v: self.n_v / fv, n_g: self.n_g / fg, ..*self })
    }

    pub fn same_as(&self, other: &GridSpec) -> bool {
        self.n_v == other.n_v
            && self.n_g == other.n_g
            && (self.g_max - other.g_max).abs() <= 1e-12 * self.g_max
            && (self.v_lo - other.v_lo).abs() <= 1e-12
            && (self.v_hi - other.v_hi).abs() <= 1e-12
    }
}

/// Cell-averaged probability density at time `t`.
///
/// `overflow` holds mass above `g_max` (empirical histograms only) and
/// `overflow_g` its mean conductance.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub t: f64,
    pub overflow: f64,
    pub overflow_g: f64,
}

impl DensityField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, values: vec![0.0; grid.len()], t: 0.0, overflow: 0.0, overflow_g: 0.0 }
    }

    /// Field from per-cell masses (must match the grid length).
    pub fn from_masses(grid: GridSpec, masses: &[f64]) -> Result<Self> {
        if masses.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} masses for {} cells", masses.len(), grid.len())));
        }
        let area = grid.cell_area();
        Ok(Self { values: masses.iter().map(|m| m / area).collect(), ..Self::zeros(grid) })
    }

    /// Unit mass in the cell containing `(v, g)`.
    pub fn point_mass(grid: GridSpec, v: f64, g: f64) -> Result<Self> {
        let (i, j) =
            grid.locate(v, g).ok_or_else(|| Error::InvalidGrid(format!("point ({v}, {g}) is outside the grid")))?;
        let mut f = Self::zeros(grid);
        f.values[grid.index(i, j)] = 1.0 / grid.cell_area();
        Ok(f)
    }

    /// Uniform probability on the box `[v0, v1) x [g0, g1]` with exact
    /// cell-overlap fractions.
    pub fn uniform_box(grid: GridSpec, v0: f64, v1: f64, g0: f64, g1: f64) -> Result<Self> {
        if !(v1 > v0) || !(g1 > g0) || v0 < grid.v_lo || v1 > grid.v_hi || g0 < 0.0 || g1 > grid.g_max {
            return Err(Error::InvalidGrid(format!("box [{v0},{v1})x[{g0},{g1}] not inside grid")));
        }
        let overlap = |lo: f64, hi: f64, a: f64, b: f64| (hi.min(b) - lo.max(a)).max(0.0);
        let total = (v1 - v0) * (g1 - g0);
        let (dv, dg) = (grid.dv(), grid.dg());
        let mut masses = vec![0.0; grid.len()];
        for j in 0..grid.n_g {
            let og = overlap(j as f64 * dg, (j + 1) as f64 * dg, g0, g1);
            if og == 0.0 {
                continue;
            }
            for i in 0..grid.n_v {
                let lo = grid.v_lo + i as f64 * dv;
                let ov = overlap(lo, lo + dv, v0, v1);
                masses[grid.index(i, j)] = ov * og / total;
            }
        }
        Self::from_masses(grid, &masses)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn cell_masses(&self) -> Vec<f64> {
        let area = self.grid.cell_area();
        self.values.iter().map(|p| p * area).collect()
    }

    /// Total probability including overflow.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area() + self.overflow
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Conductance marginal as a density per g-cell, `q_j = sum_i p_ij dv`.
    pub fn g_marginal(&self) -> Vec<f64> {
        let dv = self.grid.dv();
        self.values.chunks_exact(self.grid.n_v).map(|row| row.iter().sum::<f64>() * dv).collect()
    }

    /// Voltage marginal as a density per v-cell.
    pub fn v_marginal(&self) -> Vec<f64> {
        let dg = self.grid.dg();
        let mut out = vec![0.0; self.grid.n_v];
        for row in self.values.chunks_exact(self.grid.n_v) {
            for (o, p) in out.iter_mut().zip(row) {
                *o += p * dg;
            }
        }
        out
    }

    /// Merge `fv x fg` blocks, preserving mass.
    pub fn coarsen(&self, fv: usize, fg: usize) -> Result<Self> {
        let coarse = self.grid.coarsen(fv, fg)?;
        let mut masses = vec![0.0; coarse.len()];
        let area = self.grid.cell_area();
        for j in 0..self.grid.n_g {
            for i in 0..self.grid.n_v {
                masses[coarse.index(i / fv, j / fg)] += self.at(i, j) * area;
            }
        }
        let mut out = Self::from_masses(coarse, &masses)?;
        out.t = self.t;
        out.overflow = self.overflow;
        out.overflow_g = self.overflow_g;
        Ok(out)
    }

    pub fn check_same_grid(&self, other: &DensityField) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{}x{} (g_max {}) vs {}x{} (g_max {})",
                self.grid.n_v, self.grid.n_g, self.grid.g_max, other.grid.n_v, other.grid.n_g, other.grid.g_max
            )))
        }
    }

    /// Total-variation distance `sup_A |mu(A) - nu(A)|` between the two
    /// histograms, i.e. half the L1 distance of cell masses (overflow included).
    pub fn tv_distance(&self, other: &DensityField) -> Result<f64> {
        self.check_same_grid(other)?;
        let area = self.grid.cell_area();
        let cells: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * area;
        Ok(0.5 * (cells + (self.overflow - other.overflow).abs()))
    }

    /// `sum_i |A p|_i dv dg`-style L1 norm of an arbitrary cell vector.
    pub fn l1_mass_norm(grid: &GridSpec, values: &[f64]) -> f64 {
        values.iter().map(|x| x.abs()).sum::<f64>() * grid.cell_area()
    }
}

/// Half the L1 distance between two probability vectors.
pub fn tv_of_masses(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
