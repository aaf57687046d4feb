use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use vcfp_core::ergodicity::{
    convergence_study, lyapunov_probe, minorization_probe, pde_study_from_field, probe_lattice, FitStatus,
    MinorizationStatus, RateFitReport,
};
use vcfp_core::fpsolver::{assemble, FpOperator, ImplicitStepper, Scheme};
use vcfp_core::io::{self, row, ArtifactHeader};
use vcfp_core::particle::{
    derive_seed, simulate_ensemble, simulate_particle, InitialSampler, NoiseSource, StreamNoise,
};
use vcfp_core::validate::{
    check_boundary_fluxes, check_firing_rate, check_marginal_equation, check_reinjection_profile, comparison_factor,
    cross_validate_with, reinjection_profiles, ValidationReport,
};
use vcfp_core::{DensityField, SimConfig};

use crate::config::{InitialConfig, RunConfig};
use crate::CliError;

pub struct Context {
    pub config: RunConfig,
    pub hash: String,
    pub out: PathBuf,
}

impl Context {
    fn header(&self) -> ArtifactHeader {
        ArtifactHeader::new(self.hash.clone(), self.config.seed)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        fs::create_dir_all(&self.out)?;
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn key_values(&self, name: &str, pairs: &[(String, String)]) -> Result<(), CliError> {
        io::write_key_values(self.create(name)?, &self.header(), pairs)?;
        Ok(())
    }

    fn operator(&self) -> Result<FpOperator, CliError> {
        Ok(assemble(&self.config.model, &self.config.grid()?)?)
    }

    fn steady(&self, op: &FpOperator) -> Result<DensityField, CliError> {
        Ok(op.steady_state(self.config.pde.tol, self.config.pde.max_iter)?)
    }
}

/// Summary value formatting: floats round-trip, everything else as shown.
trait Show {
    fn show(&self) -> String;
}

impl Show for f64 {
    fn show(&self) -> String {
        io::float(*self)
    }
}

macro_rules! show_display {
    ($($t:ty),*) => {$(
        impl Show for $t {
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
show_display!(usize, u64, bool, str, String);

impl<T: Show + ?Sized> Show for &T {
    fn show(&self) -> String {
        (**self).show()
    }
}

fn kv(key: impl Into<String>, value: impl Show) -> (String, String) {
    (key.into(), value.show())
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let sampler = c.particle.initial.sampler().expect("validated");
    let run = simulate_ensemble(&c.model, &c.sim_config(), &sampler)?;
    io::write_snapshots(ctx.create("snapshots.csv")?, &ctx.header(), &run.snapshots)?;
    io::write_spikes(ctx.create("spikes.csv")?, &ctx.header(), &run.spikes)?;

    // Particle 0 replayed from its own stream at every step.
    let mut path_cfg = c.sim_config();
    path_cfg.n_particles = 1;
    path_cfg.snapshot_times = (0..=path_cfg.n_steps()).map(|k| k as f64 * c.particle.dt).collect();
    let mut noise = StreamNoise::new(c.seed, 0);
    let start = sampler.sample(0, &mut noise);
    let path = simulate_particle(&c.model, &path_cfg, start, 0, &mut noise)?;
    if let Some(e) = path.aborted {
        return Err(e.into());
    }
    let rows = path_cfg.snapshot_times.iter().zip(&path.snapshots).map(|(t, s)| row([*t, s.v, s.g]));
    io::write_table(ctx.create("trajectory.csv")?, &ctx.header(), &["t", "v", "g"], rows)?;
    eprintln!(
        "simulated {} particles to t = {}: {} spikes, max g = {}",
        run.n_particles,
        c.particle.horizon,
        run.spikes.len(),
        run.max_g
    );
    Ok(())
}

fn initial_field(
    init: &InitialConfig,
    op: &FpOperator,
    steady: Option<&DensityField>,
) -> Result<DensityField, CliError> {
    match (init.sampler(), steady) {
        (Some(s), _) => Ok(s.to_field(op.grid)?),
        (None, Some(ss)) => {
            let mut f = ss.clone();
            f.t = 0.0;
            Ok(f)
        }
        (None, None) => Err(CliError::Config("pde.initial: stationary start needs the steady state".into())),
    }
}

pub fn solve(ctx: &Context, steady_flag: bool, transient_flag: bool) -> Result<(), CliError> {
    let c = &ctx.config;
    let (steady, transient) = if steady_flag || transient_flag {
        (steady_flag, transient_flag)
    } else {
        (c.pde.steady, c.pde.transient_steps > 0)
    };
    let op = ctx.operator()?;
    let mut summary = vec![kv("n_v", op.grid.n_v), kv("n_g", op.grid.n_g), kv("g_max", op.grid.g_max)];
    let ss = if steady || matches!(c.pde.initial, InitialConfig::Stationary) { Some(ctx.steady(&op)?) } else { None };

    if transient {
        let mut field = initial_field(&c.pde.initial, &op, ss.as_ref())?;
        let mass0 = field.mass();
        let mut log = vec![row([0.0, 0.0, mass0, 0.0, field.min_value()])];
        let implicit = match c.pde.scheme {
            Scheme::Implicit => Some(ImplicitStepper::new(&op, c.pde.dt)?),
            Scheme::Explicit => None,
        };
        let mut worst: f64 = 0.0;
        for k in 1..=c.pde.transient_steps {
            match &implicit {
                Some(st) => st.step(&mut field),
                None => field = op.step(&field, c.pde.dt, Scheme::Explicit)?,
            }
            let drift = field.mass() - mass0;
            worst = worst.max(drift.abs());
            log.push(row([k as f64, field.t, field.mass(), drift, field.min_value()]));
        }
        io::write_table(
            ctx.create("mass_drift.csv")?,
            &ctx.header(),
            &["step", "t", "mass", "drift", "min_density"],
            log,
        )?;
        io::write_density(ctx.create("transient_density.csv")?, &ctx.header(), &field)?;
        summary.push(kv("transient_steps", c.pde.transient_steps));
        summary.push(kv("transient_t", field.t));
        summary.push(kv("max_mass_drift", worst));
        summary.push(kv("transient_min_density", field.min_value()));
    }
    if let (true, Some(ss)) = (steady, &ss) {
        io::write_density(ctx.create("steady_density.csv")?, &ctx.header(), ss)?;
        io::write_flux(ctx.create("steady_flux.csv")?, &ctx.header(), &op, ss)?;
        summary.push(kv("steady_residual", op.residual(ss)));
        summary.push(kv("steady_min_density", ss.min_value()));
        summary.push(kv("steady_mass", ss.mass()));
        summary.push(kv("firing_rate", op.firing_rate(ss)?));
    }
    ctx.key_values("solve_summary.txt", &summary)?;
    for (k, v) in &summary {
        eprintln!("{k} = {v}");
    }
    Ok(())
}

fn label(init: &InitialConfig) -> String {
    match init {
        InitialConfig::Point { v, g } => format!("point({v},{g})"),
        InitialConfig::Uniform { v0, v1, g0, g1 } => format!("uniform({v0},{v1},{g0},{g1})"),
        InitialConfig::Stationary => "stationary".into(),
    }
}

/// `n` i.i.d. draws from a cell density, uniform within each cell.
fn sample_field(field: &DensityField, n: usize, seed: u64) -> Vec<(f64, f64)> {
    let grid = field.grid;
    let masses = field.cell_masses();
    let mut cdf = Vec::with_capacity(masses.len());
    let mut acc = 0.0;
    for m in &masses {
        acc += m;
        cdf.push(acc);
    }
    let (dv, dg) = (grid.dv(), grid.dg());
    (0..n as u64)
        .map(|i| {
            let mut noise = StreamNoise::new(derive_seed(seed, 0x5a4d_0001), i);
            let u = noise.uniform() * acc;
            let c = cdf.partition_point(|&x| x <= u).min(masses.len() - 1);
            let (ci, cj) = (c % grid.n_v, c / grid.n_v);
            (grid.v_lo + (ci as f64 + noise.uniform()) * dv, (cj as f64 + noise.uniform()) * dg)
        })
        .collect()
}

fn fit_pairs(prefix: &str, r: &RateFitReport) -> Vec<(String, String)> {
    let status = match r.status {
        FitStatus::Fitted => "fitted",
        FitStatus::AlreadyStationary => "already_stationary",
        FitStatus::Inconclusive => "inconclusive",
    };
    let mut out = vec![
        kv(format!("{prefix}.label"), &r.label),
        kv(format!("{prefix}.status"), status),
        kv(format!("{prefix}.window_start"), r.window.0),
        kv(format!("{prefix}.window_end"), r.window.1),
        kv(format!("{prefix}.noise_floor"), r.noise_floor),
        kv(format!("{prefix}.max_relative_increase"), r.max_relative_increase),
    ];
    if let Some(f) = r.fit {
        out.push(kv(format!("{prefix}.lambda"), f.lambda));
        out.push(kv(format!("{prefix}.lambda_ci_low"), f.lambda_ci.0));
        out.push(kv(format!("{prefix}.lambda_ci_high"), f.lambda_ci.1));
        out.push(kv(format!("{prefix}.prefactor"), f.prefactor));
        out.push(kv(format!("{prefix}.r2"), f.r2));
        out.push(kv(format!("{prefix}.n_points"), f.n_points));
    }
    if let Some(theta) = r.theta {
        out.push(kv(format!("{prefix}.theta"), theta));
    }
    out
}

pub fn ergodicity(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let e = &c.ergodicity;
    let mut failures = Vec::new();

    if e.lyapunov {
        let h = c.harris(e.lyapunov_r)?;
        let points = probe_lattice(&c.model, &h, e.lyapunov_points[0], e.lyapunov_points[1]);
        let rep = lyapunov_probe(&c.model, &c.lyapunov_settings()?, &points)?;
        let mut rows = Vec::new();
        for (k, &(v, g)) in rep.points.iter().enumerate() {
            for (m, &t) in rep.times.iter().enumerate() {
                rows.push(row([k as f64, v, g, t, rep.estimates[k][m], rep.standard_errors[k][m], rep.bounds[k][m]]));
            }
        }
        io::write_table(
            ctx.create("lyapunov.csv")?,
            &ctx.header(),
            &["point", "v0", "g0", "t", "mean_w", "se", "bound"],
            rows,
        )?;
        let mut kvs = vec![
            kv("R", e.lyapunov_r),
            kv("points", rep.points.len()),
            kv("times", rep.times.len()),
            kv("se_factor", rep.se_factor),
            kv("margin", rep.margin),
            kv("passed", rep.passed()),
            kv("violations", rep.violations.len()),
        ];
        if let Some((a1, a2)) = rep.alphas {
            kvs.push(kv("T", c.lyapunov_settings()?.harris_t));
            kvs.push(kv("alpha1", a1));
            kvs.push(kv("alpha2", a2));
        }
        for (i, v) in rep.violations.iter().enumerate() {
            kvs.push(kv(
                format!("violation{i}"),
                format!("({}, {}) t={} mean={} bound={} se={}", v.point.0, v.point.1, v.t, v.estimate, v.bound, v.se),
            ));
        }
        ctx.key_values("lyapunov.txt", &kvs)?;
        if !rep.passed() {
            failures.push(format!("Lyapunov drift bound violated at {} point(s)", rep.violations.len()));
        }
    }

    if e.minorization {
        let mut kvs = Vec::new();
        let mut levels: Vec<f64> = e.r.clone();
        levels.sort_by(f64::total_cmp);
        let mut prev: Option<f64> = None;
        let mut monotone = true;
        for &r in &levels {
            let h = c.harris(r)?;
            let rep = minorization_probe(&c.model, &h, &c.minorization_settings())?;
            let rows = rep.points.iter().zip(&rep.point_minima).map(|(&(v, g), &m)| row([v, g, m]));
            io::write_table(
                ctx.create(&format!("minorization_R{r}.csv"))?,
                &ctx.header(),
                &["v0", "g0", "min_cell_mass"],
                rows,
            )?;
            let status = match rep.status {
                MinorizationStatus::Pass => "pass",
                MinorizationStatus::Insufficient => "insufficient",
                MinorizationStatus::Structural => "structural",
            };
            let ((v0, v1), (g0, g1)) = rep.block_bounds;
            let p = format!("R{r}");
            kvs.extend([
                kv(format!("{p}.T"), rep.t),
                kv(format!("{p}.points"), rep.points.len()),
                kv(format!("{p}.eta"), rep.eta),
                kv(format!("{p}.eta_lower"), rep.eta_lower),
                kv(format!("{p}.status"), status),
                kv(format!("{p}.block"), format!("[{v0}, {v1}) x [{g0}, {g1})")),
                kv(format!("{p}.block_cells"), rep.block_cells()),
                kv(format!("{p}.worst_point"), format!("({}, {})", rep.worst_point.0, rep.worst_point.1)),
            ]);
            if let Some(p) = prev {
                monotone &= rep.eta <= p;
            }
            prev = Some(rep.eta);
            if !rep.passed() {
                failures.push(format!("minorization at R = {r} is {status}"));
            }
        }
        kvs.push(kv("eta_non_increasing_in_R", monotone));
        ctx.key_values("minorization.txt", &kvs)?;
        if !monotone {
            failures.push("eta is not non-increasing in R".into());
        }
    }

    if e.convergence {
        let op = ctx.operator()?;
        let ss = ctx.steady(&op)?;
        let settings = c.convergence_settings()?;
        let mut reports = Vec::new();
        for init in &e.initial {
            let name = label(init);
            let sampler = match init.sampler() {
                Some(s) => s,
                None => InitialSampler::Samples(sample_field(&ss, e.n_particles, c.seed)),
            };
            if matches!(init, InitialConfig::Stationary) && e.solver != vcfp_core::ergodicity::SolverMode::Particle {
                reports.push(pde_study_from_field(&op, &ss, &name, &initial_field(init, &op, Some(&ss))?, &settings)?);
                if e.solver == vcfp_core::ergodicity::SolverMode::Both {
                    let mut r = convergence_study(
                        &op,
                        &ss,
                        &[(name.clone(), sampler)],
                        &settings,
                        vcfp_core::ergodicity::SolverMode::Particle,
                    )?;
                    reports.append(&mut r);
                }
            } else {
                reports.append(&mut convergence_study(&op, &ss, &[(name, sampler)], &settings, e.solver)?);
            }
        }
        let mut kvs = vec![kv("beta", e.beta), kv("curves", reports.len())];
        for (k, r) in reports.iter().enumerate() {
            let solver = format!("{:?}", r.solver).to_lowercase();
            let rows = r.times.iter().zip(&r.distances).map(|(t, d)| row([*t, *d]));
            io::write_table(ctx.create(&format!("decay_{k}_{solver}.csv"))?, &ctx.header(), &["t", "distance"], rows)?;
            kvs.push(kv(format!("curve{k}.solver"), solver));
            kvs.extend(fit_pairs(&format!("curve{k}"), r));
        }
        ctx.key_values("rate_fit.txt", &kvs)?;
        for r in &reports {
            eprintln!(
                "{} [{:?}]: {:?}{}",
                r.label,
                r.solver,
                r.status,
                r.fit.map(|f| format!(" lambda = {} R2 = {}", f.lambda, f.r2)).unwrap_or_default()
            );
        }
    }

    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(failures.join("; ")))
    }
}

pub fn validate(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let op = ctx.operator()?;
    let ss = ctx.steady(&op)?;
    let mut report = ValidationReport::default();
    report.extend(check_boundary_fluxes(&op, &ss, c.validate.flux_tol)?);

    // Closed conductance-marginal equation along a short implicit transient.
    let stepper = ImplicitStepper::new(&op, c.pde.dt)?;
    let mut field = initial_field(&c.pde.initial, &op, Some(&ss))?;
    let mut fields = vec![field.clone()];
    for _ in 0..20 {
        stepper.step(&mut field);
        fields.push(field.clone());
    }
    report.push(check_marginal_equation(&c.model, &fields, 1, c.validate.marginal_tol)?);

    let sampler = c.particle.initial.sampler().expect("validated");
    let cross = cross_validate_with(&op, &sampler, &c.validate.cross_times, &c.cross_settings())?;
    let rows: Vec<Vec<String>> =
        c.validate.cross_times.iter().zip(&cross).map(|(t, ch)| row([*t, ch.value, ch.tolerance])).collect();
    io::write_table(ctx.create("cross_tv.csv")?, &ctx.header(), &["t", "tv", "budget"], rows)?;
    report.extend(cross);

    let cfg = SimConfig::new(c.particle.dt, c.particle.horizon, c.particle.n_particles, c.seed, vec![]);
    let run = simulate_ensemble(&c.model, &cfg, &sampler)?;
    let window = (c.particle.rate_window[0], c.particle.rate_window[1]);
    report.push(check_firing_rate(&op, &ss, &run.spikes, window, c.particle.n_particles, c.validate.rate_tol)?);
    let fg = comparison_factor(op.grid.n_g, c.validate.comparison_cells);
    match reinjection_profiles(&op, &ss, &run.spikes, window, fg) {
        Ok((pde, mc)) => {
            let dg = op.grid.dg() * fg as f64;
            let rows = pde.iter().zip(&mc).enumerate().map(|(k, (a, b))| row([k as f64 * dg, *a, *b]));
            io::write_table(
                ctx.create("reinjection_profile.csv")?,
                &ctx.header(),
                &["g_lo", "pde", "particles"],
                rows,
            )?;
            report.push(check_reinjection_profile(&op, &ss, &run.spikes, window, fg, c.validate.reinjection_tol)?);
        }
        // No threshold flux at all (subthreshold regime): nothing to compare.
        Err(vcfp_core::Error::InsufficientData(_)) => {}
        Err(e) => return Err(e.into()),
    }

    ctx.key_values("validation.txt", &report.key_values())?;
    for ch in &report.checks {
        eprintln!(
            "{} {}: {} (tolerance {}){}",
            if ch.passed { "PASS" } else { "FAIL" },
            ch.name,
            io::float(ch.value),
            io::float(ch.tolerance),
            if ch.detail.is_empty() { String::new() } else { format!(" [{}]", ch.detail) }
        );
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<String> = report
            .failed()
            .map(|c| format!("{} = {} > {}", c.name, io::float(c.value), io::float(c.tolerance)))
            .collect();
        Err(CliError::Validation(failed.join("; ")))
    }
}

pub fn constants(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    writeln!(w, "{}", ctx.header().line())?;
    writeln!(w, "g_F = {}", io::float(c.model.critical_conductance()?))?;
    for &r in &c.ergodicity.r {
        let h = c.harris(r)?;
        writeln!(w, "[R = {}]", io::float(r))?;
        for (k, v) in [
            ("v_star", h.v_star),
            ("g_star", h.g_star),
            ("v_r", h.v_r),
            ("g_r", h.g_r),
            ("J_star", h.j_star),
            ("T1", h.t1),
            ("T2", h.t2),
            ("T3", h.t3),
            ("T", h.t),
            ("M_of_R", h.m_of_r),
            ("g_low", h.g_low),
            ("beta", h.beta),
        ] {
            writeln!(w, "{k} = {}", io::float(v))?;
        }
    }
    Ok(())
}
