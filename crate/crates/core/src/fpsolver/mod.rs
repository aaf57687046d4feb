//! Finite-volume solver for the voltage-conductance Fokker-Planck equation.
//!
//! Unknowns are cell averages of `p` on a [`GridSpec`]. Voltage fluxes are
//! first-order upwind in the sign of `J` at each face. Conductance fluxes use
//! the Chang-Cooper (Scharfetter-Gummel) exponential fitting for the drift
//! `-(g - g_in)` and diffusion `a`, with walls at `g = 0` and `g = g_max`.
//! On rows above `g_F` the flux leaving through `v = V_F` re-enters the same
//! row through `v = V_R`; below `g_F` the threshold face carries nothing.
//!
//! All fluxes are written once and added to the two cells they connect, so
//! every column of the operator sums to zero and mass is conserved.

mod banded;
mod sparse;

pub use banded::BandLu;
pub use sparse::CsrMatrix;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{DensityField, GridSpec};
use crate::model::ModelParams;

/// Time integration scheme for transient solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Implicit,
    Explicit,
}

/// Solver knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub scheme: Scheme,
    /// Steady-state residual tolerance on `sum |A p| dv dg`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { dt: 0.01, scheme: Scheme::Implicit, tol: 1e-10, max_iter: 200 }
    }
}

/// Shift used by the steady-state inverse iteration.
const STEADY_SHIFT: f64 = 1.0e3;

/// `B(x) = x / (e^x - 1)`, the Bernoulli weight of the exponential fitting.
#[inline]
pub fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0 - 0.5 * x
    } else {
        x / x.exp_m1()
    }
}

/// Which voltage face a flux profile refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    Reset,
    Threshold,
}

/// Assembled discrete generator acting on cell values.
#[derive(Debug, Clone)]
pub struct FpOperator {
    pub params: ModelParams,
    pub grid: GridSpec,
    pub matrix: CsrMatrix,
    /// First g-row strictly above `g_F` (rows `>= critical_row` reinject).
    pub critical_row: usize,
    /// Outflow speed `J(V_F, g_j)` per row, zero where the face is closed.
    pub threshold_speed: Vec<f64>,
}

/// Builds the discrete operator `A` with `dp/dt = A p`.
pub fn assemble(params: &ModelParams, grid: &GridSpec) -> Result<FpOperator> {
    params.validate()?;
    grid.validate_for_solver(params)?;
    let (n_v, n_g) = (grid.n_v, grid.n_g);
    let (dv, dg) = (grid.dv(), grid.dg());
    let critical_row = grid.critical_face(params).expect("validated");
    let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(grid.len() * 7);

    // Voltage advection, interior faces.
    for j in 0..n_g {
        let g = grid.g_center(j);
        for i in 0..n_v - 1 {
            let u = params.velocity(grid.v_lo + (i + 1) as f64 * dv, g);
            let (left, right) = (grid.index(i, j), grid.index(i + 1, j));
            let out_right = u.max(0.0) / dv;
            let out_left = (-u).max(0.0) / dv;
            if out_right > 0.0 {
                t.push((left, left, -out_right));
                t.push((right, left, out_right));
            }
            if out_left > 0.0 {
                t.push((right, right, -out_left));
                t.push((left, right, out_left));
            }
        }
    }

    // Threshold face: outflow above g_F is reinjected at the reset face.
    let mut threshold_speed = vec![0.0; n_g];
    for (j, speed) in threshold_speed.iter_mut().enumerate().skip(critical_row) {
        let u = params.velocity(params.v_f, grid.g_center(j));
        debug_assert!(u > 0.0);
        *speed = u;
        let (last, first) = (grid.index(n_v - 1, j), grid.index(0, j));
        t.push((last, last, -u / dv));
        t.push((first, last, u / dv));
    }

    // Conductance drift-diffusion, interior faces.
    let coef = params.a / (dg * dg);
    for j in 0..n_g - 1 {
        let g_face = (j + 1) as f64 * dg;
        let w = -(g_face - params.g_in) * dg / params.a;
        let up = coef * bernoulli(-w);
        let down = coef * bernoulli(w);
        for i in 0..n_v {
            let (lo, hi) = (grid.index(i, j), grid.index(i, j + 1));
            t.push((lo, lo, -up));
            t.push((hi, lo, up));
            t.push((hi, hi, -down));
            t.push((lo, hi, down));
        }
    }

    Ok(FpOperator {
        params: *params,
        grid: *grid,
        matrix: CsrMatrix::from_triplets(grid.len(), t),
        critical_row,
        threshold_speed,
    })
}

/// Cached implicit stepper: factorizes `I - dt A` once.
#[derive(Debug, Clone)]
pub struct ImplicitStepper {
    lu: BandLu,
    pub dt: f64,
}

impl ImplicitStepper {
    pub fn new(op: &FpOperator, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid("dt", format!("must be > 0, got {dt}")));
        }
        Ok(Self { lu: BandLu::shifted(&op.matrix, dt)?, dt })
    }

    pub fn step(&self, field: &mut DensityField) {
        self.lu.solve_in_place(&mut field.values);
        field.t += self.dt;
    }
}

impl FpOperator {
    pub fn n_reinjecting_rows(&self) -> usize {
        self.threshold_speed.iter().filter(|&&u| u > 0.0).count()
    }

    /// `A p`.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(values)
    }

    /// Largest stable explicit step: keeps `I + dt A` entrywise nonnegative.
    pub fn cfl_bound(&self) -> f64 {
        let max_out = self.matrix.diagonal().iter().fold(0.0f64, |m, d| m.max(-d));
        1.0 / max_out
    }

    /// `sum |A p| dv dg`.
    pub fn residual(&self, field: &DensityField) -> f64 {
        DensityField::l1_mass_norm(&self.grid, &self.apply(&field.values))
    }

    fn check_field(&self, field: &DensityField) -> Result<()> {
        if field.grid.same_as(&self.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch("field grid differs from operator grid".into()))
        }
    }

    /// One step of size `dt`. Builds a fresh factorization in implicit mode;
    /// use [`ImplicitStepper`] for repeated steps.
    pub fn step(&self, field: &DensityField, dt: f64, scheme: Scheme) -> Result<DensityField> {
        self.check_field(field)?;
        let mut next = field.clone();
        match scheme {
            Scheme::Implicit => ImplicitStepper::new(self, dt)?.step(&mut next),
            Scheme::Explicit => {
                let bound = self.cfl_bound();
                if !(dt > 0.0) || dt > bound {
                    return Err(Error::CflViolation { dt, bound });
                }
                let ap = self.apply(&field.values);
                for (p, d) in next.values.iter_mut().zip(ap) {
                    *p += dt * d;
                }
                next.t += dt;
            }
        }
        Ok(next)
    }

    /// Stationary density by inverse iteration on `I - s A` from a uniform
    /// seed field.
    pub fn steady_state(&self, tol: f64, max_iter: usize) -> Result<DensityField> {
        let seed = DensityField::uniform_box(self.grid, self.grid.v_lo, self.grid.v_hi, 0.0, self.grid.g_max)?;
        self.steady_state_from(seed, tol, max_iter)
    }

    pub fn steady_state_from(&self, seed: DensityField, tol: f64, max_iter: usize) -> Result<DensityField> {
        self.check_field(&seed)?;
        let stepper = ImplicitStepper::new(self, STEADY_SHIFT)?;
        let area = self.grid.cell_area();
        let mut field = seed;
        field.overflow = 0.0;
        normalize(&mut field.values, area);
        let mut residual = f64::INFINITY;
        for _ in 0..max_iter {
            let prev = field.values.clone();
            stepper.lu.solve_in_place(&mut field.values);
            normalize(&mut field.values, area);
            let change: f64 = prev.iter().zip(&field.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * area;
            residual = self.residual(&field);
            if residual <= tol && change <= tol {
                field.t = f64::INFINITY;
                return Ok(field);
            }
        }
        Err(Error::NotConverged { iterations: max_iter, residual })
    }

    /// Discrete face fluxes `J p` per g-row at the reset or threshold face.
    ///
    /// The threshold profile is the upwind outflow; the reset profile is read
    /// back from the reinjection entries of the assembled matrix.
    pub fn boundary_flux_profile(&self, field: &DensityField, face: Face) -> Result<Vec<f64>> {
        self.check_field(field)?;
        let grid = &self.grid;
        let dv = grid.dv();
        let last = grid.n_v - 1;
        Ok((0..grid.n_g)
            .map(|j| match face {
                Face::Threshold => self.threshold_speed[j] * field.at(last, j),
                Face::Reset => self.matrix.get(grid.index(0, j), grid.index(last, j)) * dv * field.at(last, j),
            })
            .collect())
    }

    /// Probability flux through the threshold: spikes per neuron per unit time.
    pub fn firing_rate(&self, field: &DensityField) -> Result<f64> {
        let dg = self.grid.dg();
        Ok(self.boundary_flux_profile(field, Face::Threshold)?.iter().sum::<f64>() * dg)
    }
}

fn normalize(values: &mut [f64], area: f64) {
    let mass: f64 = values.iter().sum::<f64>() * area;
    for p in values.iter_mut() {
        *p /= mass;
    }
}
