use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rng::{NoiseSource, StreamNoise};
use super::{run_particle, ParticleState, SimConfig, SpikeRecord};
use crate::error::{invalid, Error, Result};
use crate::field::{DensityField, GridSpec};
use crate::model::ModelParams;

/// Initial law of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialSampler {
    PointMass {
        v: f64,
        g: f64,
    },
    /// Product of uniforms on `[v0, v1) x [g0, g1]`.
    Uniform {
        v0: f64,
        v1: f64,
        g0: f64,
        g1: f64,
    },
    /// Particle `i` starts at `samples[i % len]`.
    Samples(Vec<(f64, f64)>),
}

impl InitialSampler {
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        let inside = |v: f64, g: f64| v >= params.v_r && v < params.v_f && g >= 0.0 && g.is_finite();
        match self {
            Self::PointMass { v, g } if !inside(*v, *g) => {
                Err(invalid("initial", format!("point ({v}, {g}) outside the state space")))
            }
            Self::Uniform { v0, v1, g0, g1 }
                if !(v1 > v0) || !(g1 > g0) || *v0 < params.v_r || *v1 > params.v_f || *g0 < 0.0 =>
            {
                Err(invalid("initial", format!("box [{v0},{v1})x[{g0},{g1}] outside the state space")))
            }
            Self::Samples(s) if s.is_empty() => Err(invalid("initial", "empty sample list")),
            Self::Samples(s) => match s.iter().find(|(v, g)| !inside(*v, *g)) {
                Some((v, g)) => Err(invalid("initial", format!("sample ({v}, {g}) outside the state space"))),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Draws the starting point of `particle_id` from its own stream.
    pub fn sample<N: NoiseSource>(&self, particle_id: u64, noise: &mut N) -> ParticleState {
        match self {
            Self::PointMass { v, g } => ParticleState::at(*v, *g),
            Self::Uniform { v0, v1, g0, g1 } => {
                let v = v0 + (v1 - v0) * noise.uniform();
                let g = g0 + (g1 - g0) * noise.uniform();
                ParticleState::at(v, g)
            }
            Self::Samples(s) => {
                let (v, g) = s[(particle_id % s.len() as u64) as usize];
                ParticleState::at(v, g)
            }
        }
    }

    /// The same law as a cell density on `grid` (point masses fill the cell
    /// that contains them).
    pub fn to_field(&self, grid: GridSpec) -> Result<DensityField> {
        match self {
            Self::PointMass { v, g } => DensityField::point_mass(grid, *v, *g),
            Self::Uniform { v0, v1, g0, g1 } => DensityField::uniform_box(grid, *v0, *v1, *g0, *g1),
            Self::Samples(s) => {
                let states: Vec<ParticleState> = s.iter().map(|&(v, g)| ParticleState::at(v, g)).collect();
                Ok(empirical_measure(&states, grid))
            }
        }
    }
}

/// Ensemble at one observation time.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub t: f64,
    pub particles: Vec<ParticleState>,
}

/// Result of [`simulate_ensemble`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    pub snapshots: Vec<EnsembleState>,
    /// Spikes ordered by particle, then time.
    pub spikes: Vec<SpikeRecord>,
    pub n_particles: usize,
    pub max_g: f64,
}

/// Runs `config.n_particles` independent copies in parallel. Particle `i`
/// draws only from stream `(master_seed, i)`, so the output does not depend
/// on scheduling. Any aborted particle fails the whole run.
pub fn simulate_ensemble(params: &ModelParams, config: &SimConfig, initial: &InitialSampler) -> Result<EnsembleRun> {
    params.validate_dynamics()?;
    config.validate()?;
    initial.validate(params)?;
    let snap_steps = config.snapshot_steps()?;

    let runs: Vec<_> = (0..config.n_particles as u64)
        .into_par_iter()
        .map(|id| {
            let mut noise = StreamNoise::new(config.master_seed, id);
            let start = initial.sample(id, &mut noise);
            run_particle(params, config, &snap_steps, start, id, &mut noise)
        })
        .collect();

    let aborted: Vec<&Error> = runs.iter().filter_map(|r| r.aborted.as_ref()).collect();
    if let Some(first) = aborted.first() {
        return Err(Error::EnsembleAborted { count: aborted.len(), first: first.to_string() });
    }

    let mut snapshots: Vec<EnsembleState> = config
        .snapshot_times
        .iter()
        .map(|&t| EnsembleState { t, particles: Vec::with_capacity(config.n_particles) })
        .collect();
    let mut spikes = Vec::new();
    let mut max_g: f64 = 0.0;
    for run in runs {
        for (snap, state) in snapshots.iter_mut().zip(run.snapshots) {
            snap.particles.push(state);
        }
        spikes.extend(run.spikes);
        max_g = max_g.max(run.max_g);
    }
    Ok(EnsembleRun { snapshots, spikes, n_particles: config.n_particles, max_g })
}

/// Histogram of particle positions on `grid`. Particles above `g_max` go to
/// the overflow bin.
pub fn empirical_measure(particles: &[ParticleState], grid: GridSpec) -> DensityField {
    let mut counts = vec![0u64; grid.len()];
    let mut overflow = 0u64;
    let mut overflow_g = 0.0;
    for s in particles {
        match grid.locate(s.v, s.g) {
            Some((i, j)) => counts[grid.index(i, j)] += 1,
            None => {
                overflow += 1;
                overflow_g += s.g;
            }
        }
    }
    let n = particles.len().max(1) as f64;
    let area = grid.cell_area();
    DensityField {
        grid,
        values: counts.iter().map(|&c| c as f64 / n / area).collect(),
        t: 0.0,
        overflow: overflow as f64 / n,
        overflow_g: if overflow > 0 { overflow_g / overflow as f64 } else { 0.0 },
    }
}

/// Spikes per neuron per unit time in `[t0, t1)`.
pub fn firing_rate(spikes: &[SpikeRecord], window: (f64, f64), n_particles: usize) -> Result<f64> {
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(invalid("window", format!("empty window [{t0}, {t1})")));
    }
    if n_particles == 0 {
        return Err(invalid("n_particles", "must be >= 1"));
    }
    let count = spikes.iter().filter(|s| s.spike_time >= t0 && s.spike_time < t1).count();
    Ok(count as f64 / (n_particles as f64 * (t1 - t0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particle::{simulate_particle, ZeroNoise};

    fn fig2() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn ensemble_of_one_matches_single_particle() {
        let p = fig2();
        let cfg = SimConfig::new(0.01, 3.0, 1, 42, vec![0.0, 1.0, 3.0]);
        let init = InitialSampler::Uniform { v0: 0.0, v1: 1.0, g0: 0.0, g1: 2.0 };
        let ens = simulate_ensemble(&p, &cfg, &init).unwrap();
        let mut noise = StreamNoise::new(42, 0);
        let start = init.sample(0, &mut noise);
        let single = simulate_particle(&p, &cfg, start, 0, &mut noise).unwrap();
        for (snap, s) in ens.snapshots.iter().zip(&single.snapshots) {
            assert_eq!(snap.particles[0], *s);
        }
        assert_eq!(ens.spikes, single.spikes);
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let p = fig2();
        let cfg = SimConfig::new(0.01, 2.0, 300, 9, vec![1.0, 2.0]);
        let init = InitialSampler::PointMass { v: 0.5, g: 0.5 };
        let run_with = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_ensemble(&p, &cfg, &init).unwrap())
        };
        assert_eq!(run_with(1), run_with(4));
    }

    #[test]
    fn single_cell_histogram() {
        let grid = GridSpec::new(&fig2(), 10, 10, 5.0).unwrap();
        let states = vec![ParticleState::at(0.55, 1.2); 17];
        let h = empirical_measure(&states, grid);
        let masses = h.cell_masses();
        let (i, j) = grid.locate(0.55, 1.2).unwrap();
        assert!((masses[grid.index(i, j)] - 1.0).abs() < 1e-15);
        assert!((h.mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn overflow_bin_collects_high_conductance() {
        let grid = GridSpec::new(&fig2(), 4, 4, 2.0).unwrap();
        let states = vec![ParticleState::at(0.1, 0.5), ParticleState::at(0.1, 3.0), ParticleState::at(0.1, 5.0)];
        let h = empirical_measure(&states, grid);
        assert!((h.overflow - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(h.overflow_g, 4.0);
        assert!((h.mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_histogram_within_binomial_band() {
        let grid = GridSpec::new(&fig2(), 8, 8, 2.0).unwrap();
        let n = 64_000;
        let mut noise = StreamNoise::new(5, 0);
        let init = InitialSampler::Uniform { v0: 0.0, v1: 1.0, g0: 0.0, g1: 2.0 };
        let states: Vec<_> = (0..n).map(|i| init.sample(i, &mut noise)).collect();
        let h = empirical_measure(&states, grid);
        let p = 1.0 / 64.0;
        let band = 4.0 * (p * (1.0 - p) / n as f64).sqrt();
        for m in h.cell_masses() {
            assert!((m - p).abs() <= band, "{m}");
        }
    }

    #[test]
    fn firing_rate_examples() {
        assert_eq!(firing_rate(&[], (0.0, 1.0), 10).unwrap(), 0.0);
        assert!(firing_rate(&[], (1.0, 1.0), 10).is_err());

        let p = ModelParams { a: 0.0, g_in: 2.0, ..fig2() };
        let period = 4.0f64.ln() / 3.0;
        let horizon = 100.0;
        let cfg = SimConfig::new(0.01, horizon, 1, 0, vec![]);
        let run = simulate_particle(&p, &cfg, ParticleState::at(0.0, 2.0), 0, &mut ZeroNoise).unwrap();
        // Window spanning exactly 200 periods, offset to avoid boundary spikes.
        let t0 = 0.5 * period;
        let t1 = t0 + 200.0 * period;
        let rate = firing_rate(&run.spikes, (t0, t1), 1).unwrap();
        assert!((rate - 3.0 / 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sampler_validation() {
        let p = fig2();
        assert!(InitialSampler::PointMass { v: 1.0, g: 0.0 }.validate(&p).is_err());
        assert!(InitialSampler::Samples(vec![]).validate(&p).is_err());
        assert!(InitialSampler::Uniform { v0: 0.0, v1: 1.0, g0: -1.0, g1: 1.0 }.validate(&p).is_err());
        assert!(InitialSampler::Samples(vec![(0.2, 0.3)]).validate(&p).is_ok());
    }
}
