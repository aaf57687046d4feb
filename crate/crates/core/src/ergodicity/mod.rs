//! Measurable versions of the Harris-theorem ingredients: the weighted
//! total-variation norm, the Lyapunov drift bound, a minorization probe on
//! the small set `C(R)`, and exponential-rate fits of `||mu_t - pi||_beta`.

mod probes;
mod rate;

pub use probes::{
    lyapunov_probe, minorization_probe, probe_lattice, LyapunovReport, LyapunovViolation, MinorizationReport,
    MinorizationSettings, MinorizationStatus, ProbeSettings,
};
pub use rate::{fit_log_linear, linear_regression, FitStatus, LogLinearFit};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{DensityField, GridSpec};
use crate::fpsolver::{FpOperator, ImplicitStepper};
use crate::particle::{empirical_measure, simulate_ensemble, InitialSampler, SimConfig};

/// Weight `1 + beta (g - center)^2` of the norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedTvConfig {
    pub beta: f64,
    /// Conductance where the Lyapunov weight vanishes (`g_in`).
    pub center: f64,
}

impl Default for WeightedTvConfig {
    fn default() -> Self {
        Self { beta: 1.0, center: 1.0 }
    }
}

impl WeightedTvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(invalid("beta", format!("must be > 0, got {}", self.beta)));
        }
        Ok(())
    }

    #[inline]
    pub fn weight(&self, g: f64) -> f64 {
        let d = g - self.center;
        1.0 + self.beta * d * d
    }
}

/// `sum (1 + beta W(g_j)) |h1 - h2| dv dg`, plus the overflow bins weighted at
/// their mass-averaged conductance.
///
/// Only `beta >= 0` is required here so that plain TV (`beta = 0`) remains
/// available; [`WeightedTvConfig::validate`] enforces `beta > 0` for the
/// diagnostics.
pub fn weighted_tv(h1: &DensityField, h2: &DensityField, cfg: &WeightedTvConfig) -> Result<f64> {
    h1.check_same_grid(h2)?;
    if !(cfg.beta >= 0.0) {
        return Err(invalid("beta", format!("must be >= 0, got {}", cfg.beta)));
    }
    let grid = &h1.grid;
    let mut total = 0.0;
    for j in 0..grid.n_g {
        let w = cfg.weight(grid.g_center(j));
        let row = j * grid.n_v..(j + 1) * grid.n_v;
        let diff: f64 = h1.values[row.clone()].iter().zip(&h2.values[row]).map(|(a, b)| (a - b).abs()).sum();
        total += w * diff;
    }
    total *= grid.cell_area();
    let overflow_mass = h1.overflow + h2.overflow;
    if overflow_mass > 0.0 {
        let g_bar = (h1.overflow * h1.overflow_g + h2.overflow * h2.overflow_g) / overflow_mass;
        total += cfg.weight(g_bar) * (h1.overflow - h2.overflow).abs();
    }
    Ok(total)
}

/// Which solver evolves the initial law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    Particle,
    Pde,
    Both,
}

/// Settings shared by all runs of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSettings {
    pub horizon: f64,
    /// Spacing of the recorded distances.
    pub sample_every: f64,
    pub norm: WeightedTvConfig,
    /// Leading fraction of the horizon excluded from the fit.
    pub transient_fraction: f64,
    pub pde_dt: f64,
    pub particle_dt: f64,
    pub n_particles: usize,
    pub seed: u64,
    /// Particle histograms are compared on the PDE grid coarsened by these
    /// factors.
    pub coarsen: (usize, usize),
    pub n_boot: usize,
    /// Time scale used to report `theta = exp(-lambda T)`.
    pub harris_t: f64,
    /// Distances at or below this are treated as zero for the PDE solver.
    pub pde_floor: f64,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self {
            horizon: 10.0,
            sample_every: 0.2,
            norm: WeightedTvConfig::default(),
            transient_fraction: 0.2,
            pde_dt: 0.02,
            particle_dt: 0.01,
            n_particles: 100_000,
            seed: 1,
            coarsen: (10, 10),
            n_boot: 400,
            harris_t: 1.0,
            pde_floor: 1e-10,
        }
    }
}

/// Decay curve of one initial law under one solver, with its rate fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFitReport {
    pub label: String,
    pub solver: SolverMode,
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    /// Fit window `[t_start, t_end]`.
    pub window: (f64, f64),
    /// Distances below this were excluded from the fit.
    pub noise_floor: f64,
    pub status: FitStatus,
    pub fit: Option<LogLinearFit>,
    /// `exp(-lambda T)` for the configured `T`.
    pub theta: Option<f64>,
    /// Largest relative increase between consecutive samples after the
    /// transient (0 when the curve is non-increasing).
    pub max_relative_increase: f64,
}

impl RateFitReport {
    pub fn lambda(&self) -> Option<f64> {
        self.fit.map(|f| f.lambda)
    }

    pub fn is_non_increasing(&self, tol: f64) -> bool {
        self.max_relative_increase <= tol
    }
}

fn analyse_curve(
    label: String,
    solver: SolverMode,
    times: Vec<f64>,
    distances: Vec<f64>,
    noise_floor: f64,
    settings: &ConvergenceSettings,
) -> RateFitReport {
    let t_start = settings.transient_fraction * settings.horizon;
    let mut max_rel: f64 = 0.0;
    for k in 1..times.len() {
        if times[k - 1] >= t_start - 1e-12 && distances[k - 1] > noise_floor {
            max_rel = max_rel.max((distances[k] - distances[k - 1]) / distances[k - 1]);
        }
    }

    let mut report = RateFitReport {
        label,
        solver,
        window: (t_start, settings.horizon),
        noise_floor,
        status: FitStatus::Inconclusive,
        fit: None,
        theta: None,
        max_relative_increase: max_rel,
        times,
        distances,
    };
    if report.distances.iter().all(|&d| d <= noise_floor) {
        report.status = FitStatus::AlreadyStationary;
        return report;
    }
    let (ft, fd): (Vec<f64>, Vec<f64>) = report
        .times
        .iter()
        .zip(&report.distances)
        .filter(|(t, d)| **t >= t_start - 1e-12 && **d > noise_floor)
        .map(|(t, d)| (*t, *d))
        .unzip();
    if ft.len() < 5 {
        return report;
    }
    report.window = (ft[0], *ft.last().unwrap());
    let fit = fit_log_linear(&ft, &fd, settings.n_boot, settings.seed ^ 0x5eed);
    report.fit = Some(fit);
    report.theta = Some((-fit.lambda * settings.harris_t).exp());
    if fit.r2 >= 0.9 && fit.lambda > 0.0 {
        report.status = FitStatus::Fitted;
    }
    report
}

/// Evolves `initial` with the implicit PDE stepper and records
/// `||mu_t - pi||_beta` every `sample_every`.
pub fn pde_decay_curve(
    op: &FpOperator,
    stationary: &DensityField,
    initial: &DensityField,
    settings: &ConvergenceSettings,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let stepper = ImplicitStepper::new(op, settings.pde_dt)?;
    let per_sample = steps_per(settings.sample_every, settings.pde_dt)?;
    let n_samples = steps_per(settings.horizon, settings.sample_every)?;
    let mut field = initial.clone();
    field.t = 0.0;
    let mut times = vec![0.0];
    let mut dist = vec![weighted_tv(&field, stationary, &settings.norm)?];
    for k in 1..=n_samples {
        for _ in 0..per_sample {
            stepper.step(&mut field);
        }
        times.push(k as f64 * settings.sample_every);
        dist.push(weighted_tv(&field, stationary, &settings.norm)?);
    }
    Ok((times, dist))
}

/// Particle estimate of the same curve, on the PDE grid coarsened by
/// `settings.coarsen`.
pub fn particle_decay_curve(
    op: &FpOperator,
    stationary: &DensityField,
    initial: &InitialSampler,
    settings: &ConvergenceSettings,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let (fv, fg) = settings.coarsen;
    let coarse_pi = stationary.coarsen(fv, fg)?;
    let n_samples = steps_per(settings.horizon, settings.sample_every)?;
    let times: Vec<f64> = (0..=n_samples).map(|k| k as f64 * settings.sample_every).collect();
    let mut cfg =
        SimConfig::new(settings.particle_dt, settings.horizon, settings.n_particles, settings.seed, times.clone());
    cfg.record_spikes = false;
    let run = simulate_ensemble(&op.params, &cfg, initial)?;
    let dist = run
        .snapshots
        .iter()
        .map(|s| weighted_tv(&empirical_measure(&s.particles, coarse_pi.grid), &coarse_pi, &settings.norm))
        .collect::<Result<Vec<_>>>()?;
    let floor = shot_noise_floor(&coarse_pi, &settings.norm, settings.n_particles);
    Ok((times, dist, floor))
}

/// Three times the expected weighted TV between `pi` and an `n`-particle
/// histogram drawn from it, `sum w_k sqrt(2 m_k / (pi n))`.
pub fn shot_noise_floor(pi: &DensityField, norm: &WeightedTvConfig, n: usize) -> f64 {
    let grid: &GridSpec = &pi.grid;
    let area = grid.cell_area();
    let mut s = 0.0;
    for j in 0..grid.n_g {
        let w = norm.weight(grid.g_center(j));
        for i in 0..grid.n_v {
            s += w * (2.0 * pi.at(i, j) * area / (std::f64::consts::PI * n as f64)).sqrt();
        }
    }
    3.0 * s
}

fn steps_per(span: f64, step: f64) -> Result<usize> {
    let k = (span / step).round();
    if !(step > 0.0) || (k * step - span).abs() > 1e-9 * span.max(1.0) {
        return Err(invalid("sample_every", format!("{span} is not a multiple of {step}")));
    }
    Ok(k as usize)
}

/// Runs the decay study for each `(label, initial law)` under the requested
/// solver(s). PDE runs start from the law projected on the operator grid.
pub fn convergence_study(
    op: &FpOperator,
    stationary: &DensityField,
    initial: &[(String, InitialSampler)],
    settings: &ConvergenceSettings,
    solver: SolverMode,
) -> Result<Vec<RateFitReport>> {
    settings.norm.validate()?;
    let mut out = Vec::new();
    for (label, law) in initial {
        if matches!(solver, SolverMode::Pde | SolverMode::Both) {
            let field = law.to_field(op.grid)?;
            let (t, d) = pde_decay_curve(op, stationary, &field, settings)?;
            out.push(analyse_curve(label.clone(), SolverMode::Pde, t, d, settings.pde_floor, settings));
        }
        if matches!(solver, SolverMode::Particle | SolverMode::Both) {
            let (t, d, floor) = particle_decay_curve(op, stationary, law, settings)?;
            out.push(analyse_curve(label.clone(), SolverMode::Particle, t, d, floor, settings));
        }
    }
    Ok(out)
}

/// Decay study from a field that is already given on the operator grid.
pub fn pde_study_from_field(
    op: &FpOperator,
    stationary: &DensityField,
    label: &str,
    initial: &DensityField,
    settings: &ConvergenceSettings,
) -> Result<RateFitReport> {
    let (t, d) = pde_decay_curve(op, stationary, initial, settings)?;
    Ok(analyse_curve(label.to_string(), SolverMode::Pde, t, d, settings.pde_floor, settings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpsolver::assemble;
    use crate::model::ModelParams;
    use crate::particle::ParticleState;
    use proptest::prelude::*;

    fn grid() -> GridSpec {
        GridSpec::new(&ModelParams::default(), 4, 8, 8.0).unwrap()
    }

    #[test]
    fn identical_histograms_have_zero_distance() {
        let h = DensityField::uniform_box(grid(), 0.0, 1.0, 0.0, 3.0).unwrap();
        assert_eq!(weighted_tv(&h, &h, &WeightedTvConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn plain_tv_of_singular_atoms_is_two() {
        let a = DensityField::point_mass(grid(), 0.1, 0.5).unwrap();
        let b = DensityField::point_mass(grid(), 0.9, 6.5).unwrap();
        let cfg = WeightedTvConfig { beta: 0.0, center: 1.0 };
        assert!((weighted_tv(&a, &b, &cfg).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn weighted_atoms() {
        // Cells of height 1 centred at g = 1.5 and g = 3.5 would shift the
        // weights, so use a grid whose centres sit on g = 1 and g = 3.
        let g = GridSpec::new(&ModelParams::default(), 1, 4, 8.0).unwrap();
        assert_eq!((g.g_center(0), g.g_center(1)), (1.0, 3.0));
        let a = DensityField::point_mass(g, 0.5, 3.0).unwrap();
        let b = DensityField::point_mass(g, 0.5, 1.0).unwrap();
        let cfg = WeightedTvConfig { beta: 1.0, center: 1.0 };
        assert!((weighted_tv(&a, &b, &cfg).unwrap() - 6.0).abs() < 1e-14);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let a = DensityField::zeros(grid());
        let b = DensityField::zeros(GridSpec::new(&ModelParams::default(), 4, 16, 8.0).unwrap());
        assert!(weighted_tv(&a, &b, &WeightedTvConfig::default()).is_err());
        assert!(WeightedTvConfig { beta: 0.0, center: 1.0 }.validate().is_err());
    }

    #[test]
    fn overflow_weighted_at_centroid() {
        let g = GridSpec::new(&ModelParams::default(), 2, 2, 2.0).unwrap();
        let a = empirical_measure(&[ParticleState::at(0.5, 4.0)], g);
        let b = empirical_measure(&[ParticleState::at(0.5, 0.5)], g);
        let cfg = WeightedTvConfig { beta: 1.0, center: 1.0 };
        // (1 + 9) * 1 + (1 + 0.25) * 1
        assert!((weighted_tv(&a, &b, &cfg).unwrap() - 11.25).abs() < 1e-12);
    }

    fn random_field(masses: Vec<f64>) -> DensityField {
        let total: f64 = masses.iter().sum();
        let m: Vec<f64> = masses.iter().map(|x| x / total).collect();
        DensityField::from_masses(grid(), &m).unwrap()
    }

    proptest! {
        #[test]
        fn metric_axioms(
            a in proptest::collection::vec(0.01f64..1.0, 32),
            b in proptest::collection::vec(0.01f64..1.0, 32),
            c in proptest::collection::vec(0.01f64..1.0, 32),
            beta in 0.0f64..5.0,
        ) {
            let (a, b, c) = (random_field(a), random_field(b), random_field(c));
            let cfg = WeightedTvConfig { beta, center: 1.0 };
            let ab = weighted_tv(&a, &b, &cfg).unwrap();
            let ba = weighted_tv(&b, &a, &cfg).unwrap();
            let ac = weighted_tv(&a, &c, &cfg).unwrap();
            let cb = weighted_tv(&c, &b, &cfg).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-14 * ab.max(1.0));
            prop_assert!(ab <= ac + cb + 1e-12);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(weighted_tv(&a, &a, &cfg).unwrap(), 0.0);
        }

        #[test]
        fn monotone_in_beta(
            a in proptest::collection::vec(0.01f64..1.0, 32),
            b in proptest::collection::vec(0.01f64..1.0, 32),
            b1 in 0.0f64..3.0,
            extra in 0.0f64..3.0,
        ) {
            let (a, b) = (random_field(a), random_field(b));
            let lo = weighted_tv(&a, &b, &WeightedTvConfig { beta: b1, center: 1.0 }).unwrap();
            let hi = weighted_tv(&a, &b, &WeightedTvConfig { beta: b1 + extra, center: 1.0 }).unwrap();
            prop_assert!(lo <= hi + 1e-14);
        }
    }

    #[test]
    fn stationary_start_reports_already_stationary() {
        let p = ModelParams::default();
        let op = assemble(&p, &GridSpec::new(&p, 16, 32, 8.0).unwrap()).unwrap();
        let pi = op.steady_state(1e-12, 100).unwrap();
        let settings = ConvergenceSettings { horizon: 2.0, sample_every: 0.5, ..Default::default() };
        let rep = pde_study_from_field(&op, &pi, "pi", &pi, &settings).unwrap();
        assert_eq!(rep.status, FitStatus::AlreadyStationary);
        assert!(rep.lambda().is_none());
    }

    #[test]
    fn too_few_points_is_inconclusive() {
        let p = ModelParams::default();
        let op = assemble(&p, &GridSpec::new(&p, 16, 32, 8.0).unwrap()).unwrap();
        let pi = op.steady_state(1e-12, 100).unwrap();
        let settings = ConvergenceSettings { horizon: 2.0, sample_every: 0.5, ..Default::default() };
        let start = DensityField::point_mass(op.grid, 0.1, 0.2).unwrap();
        let rep = pde_study_from_field(&op, &pi, "point", &start, &settings).unwrap();
        assert_eq!(rep.status, FitStatus::Inconclusive);
    }
}
