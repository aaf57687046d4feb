//! TOML run configuration: one section per module, unknown keys rejected.

use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use vcfp_core::ergodicity::{ConvergenceSettings, MinorizationSettings, ProbeSettings, SolverMode, WeightedTvConfig};
use vcfp_core::fpsolver::{Scheme, SolverConfig};
use vcfp_core::particle::InitialSampler;
use vcfp_core::validate::{CrossBudget, CrossSettings};
use vcfp_core::{harris_constants, GridSpec, HarrisConstants, ModelParams, SimConfig};

use crate::CliError;

/// Initial law as written in a config file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Point {
        v: f64,
        g: f64,
    },
    Uniform {
        v0: f64,
        v1: f64,
        g0: f64,
        g1: f64,
    },
    /// The PDE steady state.
    Stationary,
}

impl InitialConfig {
    pub fn sampler(&self) -> Option<InitialSampler> {
        match *self {
            Self::Point { v, g } => Some(InitialSampler::PointMass { v, g }),
            Self::Uniform { v0, v1, g0, g1 } => Some(InitialSampler::Uniform { v0, v1, g0, g1 }),
            Self::Stationary => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticleSection {
    pub dt: f64,
    pub horizon: f64,
    pub n_particles: usize,
    pub snapshot_times: Vec<f64>,
    pub initial: InitialConfig,
    /// Window over which the empirical firing rate is measured.
    pub rate_window: [f64; 2],
}

impl Default for ParticleSection {
    fn default() -> Self {
        Self {
            dt: 0.01,
            horizon: 20.0,
            n_particles: 100_000,
            snapshot_times: vec![1.0, 5.0, 20.0],
            initial: InitialConfig::Uniform { v0: 0.0, v1: 1.0, g0: 0.0, g1: 2.0 },
            rate_window: [10.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeSection {
    pub n_v: usize,
    pub n_g: usize,
    pub g_max: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub tol: f64,
    pub max_iter: usize,
    pub steady: bool,
    /// Transient steps taken by `solve` (0 disables the transient solve).
    pub transient_steps: usize,
    pub initial: InitialConfig,
}

impl Default for PdeSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            n_v: 200,
            n_g: 200,
            g_max: 8.0,
            dt: s.dt,
            scheme: s.scheme,
            tol: s.tol,
            max_iter: s.max_iter,
            steady: true,
            transient_steps: 100,
            initial: InitialConfig::Uniform { v0: 0.0, v1: 1.0, g0: 0.0, g1: 2.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErgodicitySection {
    pub beta: f64,
    pub lyapunov: bool,
    #[serde(rename = "lyapunov_R")]
    pub lyapunov_r: f64,
    /// Probe lattice `[n_v, n_g]` on `C(lyapunov_R)`.
    pub lyapunov_points: [usize; 2],
    pub lyapunov_horizon: f64,
    pub lyapunov_times: usize,
    pub minorization: bool,
    /// Lyapunov levels probed for minorization.
    #[serde(rename = "R")]
    pub r: Vec<f64>,
    pub probe_grid: [usize; 2],
    pub n_per_point: usize,
    pub v_half: Option<f64>,
    pub g_half: Option<f64>,
    pub convergence: bool,
    pub solver: SolverMode,
    pub horizon: f64,
    pub sample_every: f64,
    pub initial: Vec<InitialConfig>,
    pub n_particles: usize,
}

impl Default for ErgodicitySection {
    fn default() -> Self {
        Self {
            beta: 1.0,
            lyapunov: true,
            lyapunov_r: 9.0,
            lyapunov_points: [4, 4],
            lyapunov_horizon: 5.0,
            lyapunov_times: 20,
            minorization: true,
            r: vec![1.0, 4.0],
            probe_grid: [8, 8],
            n_per_point: 10_000,
            v_half: None,
            g_half: None,
            convergence: true,
            solver: SolverMode::Pde,
            horizon: 10.0,
            sample_every: 0.2,
            initial: vec![
                InitialConfig::Point { v: 0.1, g: 0.2 },
                InitialConfig::Uniform { v0: 0.0, v1: 1.0, g0: 0.0, g1: 3.0 },
            ],
            n_particles: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    pub cross_times: Vec<f64>,
    pub comparison_cells: usize,
    pub c1: f64,
    pub c2: f64,
    pub ceiling: f64,
    pub flux_tol: f64,
    pub marginal_tol: f64,
    pub rate_tol: f64,
    pub reinjection_tol: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        let b = CrossBudget::REFERENCE;
        Self {
            cross_times: vec![1.0, 5.0, 20.0],
            comparison_cells: 20,
            c1: b.c1,
            c2: b.c2,
            ceiling: b.ceiling,
            flux_tol: 1e-12,
            marginal_tol: 1e-8,
            rate_tol: 0.05,
            reinjection_tol: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<String>,
    pub model: ModelParams,
    pub particle: ParticleSection,
    pub pde: PdeSection,
    pub ergodicity: ErgodicitySection,
    pub validate: ValidateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: None,
            model: ModelParams::default(),
            particle: ParticleSection::default(),
            pde: PdeSection::default(),
            ergodicity: ErgodicitySection::default(),
            validate: ValidateSection::default(),
        }
    }
}

/// Parsed configuration plus the SHA-256 of the file bytes.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub hash: String,
}

pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Loaded, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut config: RunConfig =
        toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    config.validate()?;
    let hash = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    Ok(Loaded { config, hash })
}

fn check(ok: bool, key: &str, reason: impl std::fmt::Display) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("{key}: {reason}")))
    }
}

impl RunConfig {
    /// Validates every section, whatever the subcommand.
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(CliError::config)?;
        let p = &self.particle;
        self.sim_config().validate().map_err(CliError::config)?;
        self.sim_config().snapshot_steps().map_err(CliError::config)?;
        check(p.rate_window[1] > p.rate_window[0], "particle.rate_window", "must be an increasing pair")?;
        check(p.rate_window[1] <= p.horizon + 1e-9, "particle.rate_window", "must end by the horizon")?;
        if let Some(s) = p.initial.sampler() {
            s.validate(&self.model).map_err(CliError::config)?;
        } else {
            return Err(CliError::Config(
                "particle.initial: kind = \"stationary\" is only available for pde runs".into(),
            ));
        }

        self.grid()?.validate_for_solver(&self.model).map_err(CliError::config)?;
        check(self.pde.dt > 0.0, "pde.dt", "must be > 0")?;
        check(self.pde.tol > 0.0, "pde.tol", "must be > 0")?;
        check(self.pde.max_iter > 0, "pde.max_iter", "must be >= 1")?;
        if let Some(s) = self.pde.initial.sampler() {
            s.validate(&self.model).map_err(CliError::config)?;
        }

        let e = &self.ergodicity;
        WeightedTvConfig { beta: e.beta, center: self.model.g_in }.validate().map_err(CliError::config)?;
        check(e.lyapunov_r >= 1.0, "ergodicity.lyapunov_R", "must be >= 1")?;
        check(e.lyapunov_points.iter().all(|&n| n >= 1), "ergodicity.lyapunov_points", "must be >= 1")?;
        check(e.lyapunov_times >= 1, "ergodicity.lyapunov_times", "must be >= 1")?;
        check(e.n_per_point >= 2, "ergodicity.n_per_point", "must be >= 2")?;
        check(!e.r.is_empty(), "ergodicity.R", "need at least one level")?;
        for &r in &e.r {
            self.harris(r)?;
        }
        self.harris(e.lyapunov_r)?;
        check(e.probe_grid[0] >= 1 && e.probe_grid[1] >= 2, "ergodicity.probe_grid", "need [n_v >= 1, n_g >= 2]")?;
        check(e.horizon > 0.0 && e.sample_every > 0.0, "ergodicity.horizon", "horizon and sample_every must be > 0")?;
        check(!e.initial.is_empty(), "ergodicity.initial", "need at least one initial law")?;
        for init in &e.initial {
            if let Some(s) = init.sampler() {
                s.validate(&self.model).map_err(CliError::config)?;
            }
        }

        let v = &self.validate;
        check(!v.cross_times.is_empty(), "validate.cross_times", "need at least one time")?;
        check(v.cross_times.windows(2).all(|w| w[1] > w[0]), "validate.cross_times", "must be increasing")?;
        check(v.c1 >= 0.0 && v.c2 >= 0.0 && v.ceiling > 0.0, "validate.c1", "budget constants must be >= 0")?;
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        let p = &self.particle;
        SimConfig::new(p.dt, p.horizon, p.n_particles, self.seed, p.snapshot_times.clone())
    }

    pub fn grid(&self) -> Result<GridSpec, CliError> {
        GridSpec::new(&self.model, self.pde.n_v, self.pde.n_g, self.pde.g_max).map_err(CliError::config)
    }

    pub fn harris(&self, r: f64) -> Result<HarrisConstants, CliError> {
        let (dv, dg) = HarrisConstants::default_half_widths(&self.model);
        let e = &self.ergodicity;
        let mut h = harris_constants(&self.model, r, e.v_half.unwrap_or(dv), e.g_half.unwrap_or(dg))
            .map_err(CliError::config)?;
        h.beta = e.beta;
        Ok(h)
    }

    pub fn lyapunov_settings(&self) -> Result<ProbeSettings, CliError> {
        let e = &self.ergodicity;
        Ok(ProbeSettings {
            n_per_point: e.n_per_point,
            dt: self.particle.dt,
            horizon: e.lyapunov_horizon,
            n_times: e.lyapunov_times,
            seed: self.seed,
            se_factor: 4.0,
            harris_t: self.harris(e.lyapunov_r)?.t,
        })
    }

    pub fn minorization_settings(&self) -> MinorizationSettings {
        let e = &self.ergodicity;
        MinorizationSettings {
            probe_grid: (e.probe_grid[0], e.probe_grid[1]),
            n_per_point: e.n_per_point,
            dt: self.particle.dt,
            seed: self.seed,
            ..Default::default()
        }
    }

    pub fn convergence_settings(&self) -> Result<ConvergenceSettings, CliError> {
        let e = &self.ergodicity;
        Ok(ConvergenceSettings {
            horizon: e.horizon,
            sample_every: e.sample_every,
            norm: WeightedTvConfig { beta: e.beta, center: self.model.g_in },
            pde_dt: self.pde.dt,
            particle_dt: self.particle.dt,
            n_particles: e.n_particles,
            seed: self.seed,
            harris_t: self.harris(e.r[0])?.t,
            ..Default::default()
        })
    }

    pub fn cross_settings(&self) -> CrossSettings {
        let v = &self.validate;
        CrossSettings {
            n_particles: self.particle.n_particles,
            particle_dt: self.particle.dt,
            pde_dt: self.pde.dt,
            seed: self.seed,
            comparison_cells: v.comparison_cells,
            budget: CrossBudget { c1: v.c1, c2: v.c2, ceiling: v.ceiling },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[model]\ng_X = 1.0\n").is_err());
        assert!(toml::from_str::<RunConfig>("[pde]\nnv = 10\n").is_err());
        assert!(toml::from_str::<RunConfig>("colour = 1\n").is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c: RunConfig = toml::from_str("seed = 5\n[model]\nV_E = 3.0\n").unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.model.v_e, 3.0);
        assert_eq!(c.model.g_l, 1.0);
        assert_eq!(c.pde.n_v, 200);
    }

    #[test]
    fn initial_laws_parse() {
        let c: RunConfig = toml::from_str(
            "[particle]\ninitial = { kind = \"point\", v = 0.2, g = 0.5 }\n\
             [ergodicity]\ninitial = [{ kind = \"stationary\" }]\n",
        )
        .unwrap();
        assert_eq!(c.particle.initial, InitialConfig::Point { v: 0.2, g: 0.5 });
        assert_eq!(c.ergodicity.initial, vec![InitialConfig::Stationary]);
    }

    #[test]
    fn bad_model_names_the_key() {
        let c: RunConfig = toml::from_str("[model]\nV_E = 0.5\n").unwrap();
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("V_E"), "{msg}");
    }
}
