//! Cross-checks between the particle and finite-volume solvers and against
//! structural identities of the model: boundary-flux matching, the closed
//! conductance-marginal equation, and the firing rate.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{tv_of_masses, DensityField, GridSpec};
use crate::fpsolver::{assemble, Face, FpOperator, ImplicitStepper};
use crate::io::float;
use crate::model::ModelParams;
use crate::particle::{empirical_measure, firing_rate, simulate_ensemble, InitialSampler, SimConfig, SpikeRecord};

/// One named check with its measured value and explicit tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Which runs produced `value`.
    pub provenance: String,
    pub detail: String,
}

impl Check {
    /// Passes iff `value <= tolerance` (a NaN value fails).
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64, provenance: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
            provenance: provenance.into(),
            detail: String::new(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

/// A list of checks; globally failed if any check failed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn extend(&mut self, checks: impl IntoIterator<Item = Check>) {
        self.checks.extend(checks);
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Flat `key = value` lines, one block per check.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut out = vec![("passed".to_string(), self.passed().to_string())];
        for c in &self.checks {
            out.push((format!("{}.value", c.name), float(c.value)));
            out.push((format!("{}.tolerance", c.name), float(c.tolerance)));
            out.push((format!("{}.passed", c.name), c.passed.to_string()));
            out.push((format!("{}.provenance", c.name), c.provenance.clone()));
            if !c.detail.is_empty() {
                out.push((format!("{}.detail", c.name), c.detail.clone()));
            }
        }
        out
    }
}

/// Smooth bump supported in `(lo, hi)`, equal to 1 at the midpoint.
pub fn bump(g: f64, lo: f64, hi: f64) -> f64 {
    let x = (2.0 * g - lo - hi) / (hi - lo);
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - x * x)).exp()
    }
}

fn weighted_flux(profile: &[f64], grid: &GridSpec, lo: f64, hi: f64) -> f64 {
    let dg = grid.dg();
    profile.iter().enumerate().map(|(j, f)| bump(grid.g_center(j), lo, hi) * f * dg).sum()
}

/// Weak form of the boundary conditions at a steady state.
///
/// * above `g_F`: per-row equality of the threshold outflow and the reset
///   inflow, and of their bump-weighted integrals;
/// * below `g_F`: bump-weighted flux integrals at both faces vanish.
pub fn check_boundary_fluxes(op: &FpOperator, steady: &DensityField, tol: f64) -> Result<Vec<Check>> {
    let grid = &op.grid;
    let out = op.boundary_flux_profile(steady, Face::Threshold)?;
    let inflow = op.boundary_flux_profile(steady, Face::Reset)?;
    let g_f = op.params.g_f().min(grid.g_max);
    let prov = format!("fpsolver {}x{} steady state", grid.n_v, grid.n_g);

    let scale = out.iter().fold(0.0f64, |m, f| m.max(f.abs())).max(f64::MIN_POSITIVE);
    let per_row = (op.critical_row..grid.n_g).map(|j| (out[j] - inflow[j]).abs()).fold(0.0, f64::max) / scale;
    let above = (weighted_flux(&out, grid, g_f, grid.g_max) - weighted_flux(&inflow, grid, g_f, grid.g_max)).abs();
    let below_out = weighted_flux(&out, grid, 0.0, g_f).abs();
    let below_in = weighted_flux(&inflow, grid, 0.0, g_f).abs();
    Ok(vec![
        Check::at_most("flux_match_rows", per_row, tol, prov.clone())
            .with_detail("max_j |outflow_j - inflow_j| / max_j outflow_j over g > g_F"),
        Check::at_most("flux_match_weighted", above, tol, prov.clone())
            .with_detail("bump test function on (g_F, g_max)"),
        Check::at_most("flux_below_critical", below_out.max(below_in), tol, prov)
            .with_detail("bump test function on (0, g_F), both faces"),
    ])
}

/// Normalized threshold-flux profile of the PDE and normalized histogram of
/// spike conductances on the rows of `op.grid`, merged `fg` rows at a time.
pub fn reinjection_profiles(
    op: &FpOperator,
    steady: &DensityField,
    spikes: &[SpikeRecord],
    window: (f64, f64),
    fg: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if fg == 0 || !op.grid.n_g.is_multiple_of(fg) {
        return Err(invalid("fg", format!("{fg} does not divide n_g = {}", op.grid.n_g)));
    }
    let bins = op.grid.n_g / fg;
    let mut pde = vec![0.0; bins];
    for (j, f) in op.boundary_flux_profile(steady, Face::Threshold)?.iter().enumerate() {
        pde[j / fg] += f;
    }
    let mut mc = vec![0.0; bins];
    let dg = op.grid.dg();
    for s in spikes.iter().filter(|s| s.spike_time >= window.0 && s.spike_time < window.1) {
        let j = ((s.g_at_spike / dg) as usize).min(op.grid.n_g - 1);
        mc[j / fg] += 1.0;
    }
    for v in [&mut pde, &mut mc] {
        let total: f64 = v.iter().sum();
        if total <= 0.0 {
            return Err(crate::error::Error::InsufficientData("no threshold flux to normalize".into()));
        }
        v.iter_mut().for_each(|x| *x /= total);
    }
    Ok((pde, mc))
}

pub fn check_reinjection_profile(
    op: &FpOperator,
    steady: &DensityField,
    spikes: &[SpikeRecord],
    window: (f64, f64),
    fg: usize,
    tol: f64,
) -> Result<Check> {
    let (pde, mc) = reinjection_profiles(op, steady, spikes, window, fg)?;
    let n = spikes.iter().filter(|s| s.spike_time >= window.0 && s.spike_time < window.1).count();
    Ok(Check::at_most(
        "reinjection_profile_tv",
        tv_of_masses(&pde, &mc),
        tol,
        format!("{n} spikes in [{}, {}) vs fpsolver threshold flux", window.0, window.1),
    ))
}

/// Implicit-Euler solver for the reflected OU law on `[0, g_max]`, built
/// independently of the two-dimensional assembly with the same exponential
/// fitting and solved by the Thomas algorithm.
#[derive(Debug, Clone)]
pub struct OuMarginal {
    pub n_g: usize,
    pub dg: f64,
    /// Rate from cell `j` to `j + 1` across face `j + 1`.
    up: Vec<f64>,
    /// Rate from cell `j + 1` to `j` across face `j + 1`.
    down: Vec<f64>,
}

impl OuMarginal {
    pub fn new(params: &ModelParams, n_g: usize, g_max: f64) -> Result<Self> {
        params.validate()?;
        if n_g < 2 || !(g_max > 0.0) {
            return Err(invalid("n_g", format!("need n_g >= 2 and g_max > 0, got {n_g}, {g_max}")));
        }
        let dg = g_max / n_g as f64;
        let c = params.a / (dg * dg);
        let fitted = |x: f64| if x == 0.0 { 1.0 } else { x / x.exp_m1() };
        let (mut up, mut down) = (Vec::with_capacity(n_g - 1), Vec::with_capacity(n_g - 1));
        for k in 1..n_g {
            let peclet = (k as f64 * dg - params.g_in) * dg / params.a;
            up.push(c * fitted(peclet));
            down.push(c * fitted(-peclet));
        }
        Ok(Self { n_g, dg, up, down })
    }

    /// One implicit step on per-cell densities.
    pub fn step(&self, q: &mut [f64], dt: f64) {
        let n = self.n_g;
        // Row k of (I - dt B): sub = -dt up[k-1], diag = 1 + dt (up[k] + down[k-1]), sup = -dt down[k].
        let mut c_prime = vec![0.0; n];
        let mut d_prime = vec![0.0; n];
        let out = |k: usize| (if k + 1 < n { self.up[k] } else { 0.0 }) + (if k > 0 { self.down[k - 1] } else { 0.0 });
        let diag0 = 1.0 + dt * out(0);
        c_prime[0] = if n > 1 { -dt * self.down[0] / diag0 } else { 0.0 };
        d_prime[0] = q[0] / diag0;
        for k in 1..n {
            let sub = -dt * self.up[k - 1];
            let denom = 1.0 + dt * out(k) - sub * c_prime[k - 1];
            c_prime[k] = if k + 1 < n { -dt * self.down[k] / denom } else { 0.0 };
            d_prime[k] = (q[k] - sub * d_prime[k - 1]) / denom;
        }
        q[n - 1] = d_prime[n - 1];
        for k in (0..n - 1).rev() {
            q[k] = d_prime[k] - c_prime[k] * q[k + 1];
        }
    }

    /// Stationary cell masses from detailed balance across every face.
    pub fn stationary_masses(&self) -> Vec<f64> {
        let mut m = vec![1.0; self.n_g];
        for k in 1..self.n_g {
            m[k] = m[k - 1] * self.up[k - 1] / self.down[k - 1];
        }
        let total: f64 = m.iter().sum();
        m.iter().map(|x| x / total).collect()
    }
}

/// Steps the one-dimensional OU solver from the conductance marginal of
/// `fields[0]` with `substeps` implicit steps between consecutive fields
/// and reports the largest TV gap to the marginals of the later fields.
///
/// When the fields were produced by implicit steps of the same size the two
/// series agree up to linear-solver rounding.
pub fn check_marginal_equation(
    params: &ModelParams,
    fields: &[DensityField],
    substeps: usize,
    tol: f64,
) -> Result<Check> {
    if fields.len() < 2 || substeps == 0 {
        return Err(invalid("fields", "need at least two fields and one substep"));
    }
    let grid = fields[0].grid;
    let spacing = fields[1].t - fields[0].t;
    for w in fields.windows(2) {
        w[0].check_same_grid(&w[1])?;
        if ((w[1].t - w[0].t) - spacing).abs() > 1e-9 * spacing.abs().max(1.0) || !(spacing > 0.0) {
            return Err(invalid("fields", "snapshot times must be uniformly spaced and increasing"));
        }
    }
    let ou = OuMarginal::new(params, grid.n_g, grid.g_max)?;
    let dt = spacing / substeps as f64;
    let mut q = fields[0].g_marginal();
    let mut worst: f64 = 0.0;
    for f in &fields[1..] {
        for _ in 0..substeps {
            ou.step(&mut q, dt);
        }
        let gap = 0.5 * q.iter().zip(f.g_marginal()).map(|(a, b)| (a - b).abs()).sum::<f64>() * ou.dg;
        worst = worst.max(gap);
    }
    Ok(Check::at_most(
        "marginal_equation_tv",
        worst,
        tol,
        format!("{} fpsolver snapshots vs 1-D OU solver, dt = {dt}", fields.len()),
    ))
}

/// TV between the particle conductance histogram on the rows of `grid` and
/// one-dimensional cell densities `q` on the same rows.
pub fn particle_marginal_tv(particles: &[crate::particle::ParticleState], grid: GridSpec, q: &[f64]) -> f64 {
    let h = empirical_measure(particles, grid);
    let dg = grid.dg();
    let hq = h.g_marginal();
    0.5 * (hq.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() * dg + h.overflow)
}

/// Frozen budget of [`cross_validate`]:
/// `tol = min(c1 * S + c2 * (dv + dg), ceiling)` where `S` is the expected TV
/// of an `n`-sample histogram drawn from the PDE field on the comparison grid
/// and `dv, dg` are the PDE cell sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossBudget {
    pub c1: f64,
    pub c2: f64,
    pub ceiling: f64,
}

impl CrossBudget {
    /// `c1` leaves more than three standard deviations of the TV fluctuation
    /// on 400 comparison cells; `c2` is twice the discretization coefficient
    /// measured by `examples/calibrate.rs`.
    pub const REFERENCE: Self = Self { c1: 1.25, c2: 0.15, ceiling: 0.05 };

    pub fn tolerance(&self, shot: f64, grid: &GridSpec) -> f64 {
        (self.c1 * shot + self.c2 * (grid.dv() + grid.dg())).min(self.ceiling)
    }
}

/// `sum_k sqrt(m_k (1 - m_k) / (2 pi n))`: the expected TV between a law with
/// cell masses `m_k` and an `n`-sample histogram of it, to leading order.
pub fn expected_shot_tv(masses: &[f64], n: usize) -> f64 {
    let n = n as f64;
    masses.iter().map(|m| (m * (1.0 - m) / (2.0 * std::f64::consts::PI * n)).sqrt()).sum()
}

/// Run settings for [`cross_validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSettings {
    pub n_particles: usize,
    pub particle_dt: f64,
    pub pde_dt: f64,
    pub seed: u64,
    /// Approximate number of comparison cells per axis; the PDE grid is
    /// coarsened by `n / cells` whenever that divides evenly.
    pub comparison_cells: usize,
    pub budget: CrossBudget,
}

impl Default for CrossSettings {
    fn default() -> Self {
        Self {
            n_particles: 100_000,
            particle_dt: 0.01,
            pde_dt: 0.01,
            seed: 1,
            comparison_cells: 20,
            budget: CrossBudget::REFERENCE,
        }
    }
}

/// Coarsening factor mapping `n` cells to about `target` comparison cells.
pub fn comparison_factor(n: usize, target: usize) -> usize {
    let f = (n / target.max(1)).max(1);
    if n.is_multiple_of(f) {
        f
    } else {
        (1..=f).rev().find(|d| n.is_multiple_of(*d)).unwrap_or(1)
    }
}

/// Evolves `initial` with both solvers and compares them at each time in
/// `times` on the coarsened grid. One check per time.
pub fn cross_validate(
    params: &ModelParams,
    initial: &InitialSampler,
    times: &[f64],
    grid: &GridSpec,
    settings: &CrossSettings,
) -> Result<Vec<Check>> {
    let op = assemble(params, grid)?;
    cross_validate_with(&op, initial, times, settings)
}

/// [`cross_validate`] on an assembled operator.
pub fn cross_validate_with(
    op: &FpOperator,
    initial: &InitialSampler,
    times: &[f64],
    settings: &CrossSettings,
) -> Result<Vec<Check>> {
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) || times[0] < 0.0 {
        return Err(invalid("times", "need increasing nonnegative comparison times"));
    }
    let grid = op.grid;
    let fv = comparison_factor(grid.n_v, settings.comparison_cells);
    let fg = comparison_factor(grid.n_g, settings.comparison_cells);

    let horizon = *times.last().unwrap();
    let mut cfg = SimConfig::new(
        settings.particle_dt,
        horizon.max(settings.particle_dt),
        settings.n_particles,
        settings.seed,
        times.to_vec(),
    );
    cfg.record_spikes = false;
    let run = simulate_ensemble(&op.params, &cfg, initial)?;

    let stepper = ImplicitStepper::new(op, settings.pde_dt)?;
    let mut field = initial.to_field(grid)?;
    let mut step = 0usize;
    let mut out = Vec::with_capacity(times.len());
    for (snap, &t) in run.snapshots.iter().zip(times) {
        let target = (t / settings.pde_dt).round() as usize;
        if ((target as f64) * settings.pde_dt - t).abs() > 1e-9 * t.max(1.0) {
            return Err(invalid("times", format!("{t} is not a multiple of pde_dt = {}", settings.pde_dt)));
        }
        while step < target {
            stepper.step(&mut field);
            step += 1;
        }
        let pde = field.coarsen(fv, fg)?;
        let hist = empirical_measure(&snap.particles, pde.grid);
        let tv = hist.tv_distance(&pde)?;
        let shot = expected_shot_tv(&pde.cell_masses(), settings.n_particles);
        let tol = settings.budget.tolerance(shot, &grid);
        out.push(
            Check::at_most(
                format!("cross_tv_t{t}"),
                tv,
                tol,
                format!(
                    "particles n={} dt={} seed={}; fpsolver {}x{} dt={}; compared on {}x{}",
                    settings.n_particles,
                    settings.particle_dt,
                    settings.seed,
                    grid.n_v,
                    grid.n_g,
                    settings.pde_dt,
                    pde.grid.n_v,
                    pde.grid.n_g
                ),
            )
            .with_detail(format!(
                "budget = min({} * {shot:.6} + {} * ({:.6} + {:.6}), {}) = {tol:.6}",
                settings.budget.c1,
                settings.budget.c2,
                grid.dv(),
                grid.dg(),
                settings.budget.ceiling
            )),
        );
    }
    Ok(out)
}

/// Compares the empirical spike rate on `window` with the PDE threshold flux
/// of `steady`. Relative to the PDE rate; both zero counts as agreement.
pub fn check_firing_rate(
    op: &FpOperator,
    steady: &DensityField,
    spikes: &[SpikeRecord],
    window: (f64, f64),
    n_particles: usize,
    tol: f64,
) -> Result<Check> {
    let pde = op.firing_rate(steady)?;
    let mc = firing_rate(spikes, window, n_particles)?;
    let rel = if pde == 0.0 && mc == 0.0 { 0.0 } else { (mc - pde).abs() / pde.abs() };
    Ok(Check::at_most(
        "firing_rate_rel",
        rel,
        tol,
        format!("spikes of {n_particles} particles in [{}, {}) vs fpsolver threshold flux", window.0, window.1),
    )
    .with_detail(format!("pde = {pde}, particles = {mc}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particle::ParticleState;

    fn fig2() -> ModelParams {
        ModelParams::default()
    }

    fn small_op() -> FpOperator {
        let p = fig2();
        assemble(&p, &GridSpec::new(&p, 20, 40, 8.0).unwrap()).unwrap()
    }

    #[test]
    fn bump_is_compactly_supported() {
        assert_eq!(bump(0.0, 0.0, 1.0), 0.0);
        assert_eq!(bump(1.0, 0.0, 1.0), 0.0);
        assert_eq!(bump(0.5, 0.0, 1.0), 1.0);
        assert!(bump(0.25, 0.0, 1.0) > 0.0 && bump(0.25, 0.0, 1.0) < 1.0);
    }

    #[test]
    fn steady_state_satisfies_boundary_identities() {
        let op = small_op();
        let ss = op.steady_state(1e-12, 200).unwrap();
        let checks = check_boundary_fluxes(&op, &ss, 1e-12).unwrap();
        assert!(checks.iter().all(|c| c.passed), "{checks:?}");
    }

    #[test]
    fn ou_marginal_matches_two_dimensional_assembly() {
        let op = small_op();
        let stepper = ImplicitStepper::new(&op, 0.05).unwrap();
        let mut f = DensityField::point_mass(op.grid, 0.1, 3.3).unwrap();
        let mut fields = vec![f.clone()];
        for _ in 0..10 {
            stepper.step(&mut f);
            stepper.step(&mut f);
            fields.push(f.clone());
        }
        let c = check_marginal_equation(&op.params, &fields, 2, 1e-12).unwrap();
        assert!(c.passed, "{c:?}");
    }

    #[test]
    fn detailed_balance_marginal_is_stationary() {
        let ou = OuMarginal::new(&fig2(), 64, 8.0).unwrap();
        let m = ou.stationary_masses();
        let mut q: Vec<f64> = m.iter().map(|x| x / ou.dg).collect();
        ou.step(&mut q, 0.3);
        for (a, b) in q.iter().zip(&m) {
            assert!((a * ou.dg - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_rate_when_nothing_fires() {
        // g_F = 20 lies above the grid and far above any reachable conductance.
        let p = ModelParams { v_e: 1.05, ..fig2() };
        let grid = GridSpec::new(&p, 8, 8, 8.0).unwrap();
        let op = assemble(&p, &grid).unwrap();
        assert_eq!(op.n_reinjecting_rows(), 0);
        let ss = op.steady_state(1e-12, 200).unwrap();
        let cfg = SimConfig::new(0.01, 5.0, 200, 3, vec![]);
        let run = simulate_ensemble(&p, &cfg, &InitialSampler::PointMass { v: 0.9, g: 2.0 }).unwrap();
        assert!(run.spikes.is_empty());
        let c = check_firing_rate(&op, &ss, &run.spikes, (0.0, 5.0), 200, 0.05).unwrap();
        assert!(c.passed);
        assert_eq!(c.value, 0.0);
    }

    #[test]
    fn comparison_factor_divides() {
        assert_eq!(comparison_factor(200, 20), 10);
        assert_eq!(comparison_factor(16, 20), 1);
        assert_eq!(comparison_factor(50, 20), 2);
        assert_eq!(comparison_factor(70, 20), 2);
    }

    #[test]
    fn shot_noise_of_point_mass_is_zero() {
        assert_eq!(expected_shot_tv(&[1.0, 0.0], 10), 0.0);
        let two = expected_shot_tv(&[0.5, 0.5], 100);
        assert!((two - 2.0 * (0.25 / (200.0 * std::f64::consts::PI)).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn report_fails_when_any_check_fails() {
        let mut r = ValidationReport::default();
        r.push(Check::at_most("a", 0.1, 0.2, "x"));
        assert!(r.passed());
        r.push(Check::at_most("b", f64::NAN, 0.2, "x"));
        assert!(!r.passed());
        assert_eq!(r.failed().count(), 1);
        assert!(r.key_values().iter().any(|(k, v)| k == "b.passed" && v == "false"));
    }

    #[test]
    fn particle_marginal_counts_overflow() {
        let grid = GridSpec::new(&fig2(), 2, 2, 2.0).unwrap();
        let ps = [ParticleState::at(0.1, 0.5), ParticleState::at(0.1, 5.0)];
        let q = vec![1.0, 0.0];
        assert!((particle_marginal_tv(&ps, grid, &q) - 0.5).abs() < 1e-15);
    }
}
