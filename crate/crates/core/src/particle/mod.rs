//! Particle simulation of the jump-reset SDE.
//!
//! The conductance follows an exactly sampled Ornstein-Uhlenbeck transition
//! folded back onto `g >= 0`; the folded amount is booked as local time.
//! Within a step the voltage flows along the linear ODE `dv/dt = J(v, g)`
//! with the freshly updated `g` frozen, which has a closed-form solution, so
//! threshold crossings are located exactly and reset to `V_R` without
//! overshoot.

mod ensemble;
pub mod rng;

pub use ensemble::{empirical_measure, firing_rate, simulate_ensemble, EnsembleRun, EnsembleState, InitialSampler};
pub use rng::{derive_seed, mix64, NoiseSource, StreamNoise, ZeroNoise};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::ModelParams;

/// State of one neuron.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub v: f64,
    pub g: f64,
    pub local_time: f64,
    pub spike_count: u64,
}

impl ParticleState {
    pub fn at(v: f64, g: f64) -> Self {
        Self { v, g, local_time: 0.0, spike_count: 0 }
    }

    pub fn check(&self, params: &ModelParams) -> Result<()> {
        if !(self.v >= params.v_r && self.v < params.v_f) {
            return Err(invalid("v", format!("{} outside [V_R, V_F)", self.v)));
        }
        if !(self.g >= 0.0) || !self.g.is_finite() {
            return Err(invalid("g", format!("{} must be finite and >= 0", self.g)));
        }
        Ok(())
    }
}

/// One threshold crossing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeRecord {
    pub particle_id: u64,
    pub spike_time: f64,
    pub g_at_spike: f64,
    /// Largest conductance seen since the previous spike (or the start).
    pub interval_g_max: f64,
}

/// Time stepping and output schedule for particle runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_particles: usize,
    pub master_seed: u64,
    pub snapshot_times: Vec<f64>,
    /// Keep the spike log (set false for probes that only need snapshots).
    pub record_spikes: bool,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, n_particles: usize, master_seed: u64, snapshot_times: Vec<f64>) -> Self {
        Self { dt, horizon, n_particles, master_seed, snapshot_times, record_spikes: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(invalid("horizon", format!("must be >= 0, got {}", self.horizon)));
        }
        if self.n_particles == 0 {
            return Err(invalid("n_particles", "must be >= 1"));
        }
        if self.snapshot_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("snapshot_times", "must be sorted"));
        }
        if let Some(&last) = self.snapshot_times.last() {
            if last > self.horizon + 1e-9 * self.horizon.max(1.0) {
                return Err(invalid("snapshot_times", format!("{last} exceeds horizon {}", self.horizon)));
            }
        }
        if self.snapshot_times.first().is_some_and(|&t| t < 0.0) {
            return Err(invalid("snapshot_times", "must be >= 0"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Step index of each snapshot; snapshot times must sit on the step lattice.
    pub fn snapshot_steps(&self) -> Result<Vec<usize>> {
        self.snapshot_times
            .iter()
            .map(|&t| {
                let k = (t / self.dt).round();
                if (k * self.dt - t).abs() > 1e-9 * t.max(1.0) {
                    Err(invalid("snapshot_times", format!("{t} is not a multiple of dt = {}", self.dt)))
                } else {
                    Ok(k as usize)
                }
            })
            .collect()
    }
}

/// Precomputed exact OU transition over a fixed step.
#[derive(Debug, Clone, Copy)]
pub struct OuStep {
    decay: f64,
    sd: f64,
    g_in: f64,
}

impl OuStep {
    pub fn new(params: &ModelParams, dt: f64) -> Self {
        Self { decay: (-dt).exp(), sd: (params.a * -(-2.0 * dt).exp_m1()).sqrt(), g_in: params.g_in }
    }

    /// Unreflected proposal `g_in + (g - g_in) e^{-dt} + sd * noise`.
    #[inline]
    pub fn propose(&self, g: f64, noise: f64) -> f64 {
        self.g_in + (g - self.g_in) * self.decay + self.sd * noise
    }

    /// Returns `(g_next, local_time_increment)`.
    #[inline]
    pub fn step(&self, g: f64, noise: f64) -> (f64, f64) {
        let proposal = self.propose(g, noise);
        if proposal < 0.0 {
            (-proposal, -proposal)
        } else {
            (proposal, 0.0)
        }
    }
}

/// Reflected OU step: exact Gaussian proposal, then fold at zero.
pub fn step_conductance(params: &ModelParams, g: f64, dt: f64, noise: f64) -> (f64, f64) {
    OuStep::new(params, dt).step(g, noise)
}

/// Outcome of one frozen-conductance voltage flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageStep {
    pub v_next: f64,
    /// Time into the step at which `V_F` is reached, if it is.
    pub crossing_offset: Option<f64>,
}

impl VoltageStep {
    pub fn crossed(&self) -> bool {
        self.crossing_offset.is_some()
    }
}

/// Exact flow of `dv/dt = g_L (V_R - v) + g (V_E - v)` over `dt` with `g`
/// frozen. Stops at the first arrival at `V_F`; then `v_next` is `V_F`.
pub fn step_voltage(params: &ModelParams, v: f64, g_frozen: f64, dt: f64) -> VoltageStep {
    let kappa = params.g_l + g_frozen;
    let v_inf = (params.g_l * params.v_r + g_frozen * params.v_e) / kappa;
    if v_inf > params.v_f {
        let offset = ((v_inf - v) / (v_inf - params.v_f)).ln() / kappa;
        if offset <= dt {
            return VoltageStep { v_next: params.v_f, crossing_offset: Some(offset.max(0.0)) };
        }
    }
    let v_next = v_inf + (v - v_inf) * (-kappa * dt).exp();
    // Rounding can land exactly on the threshold when the true crossing is
    // a hair beyond dt.
    let v_next = if v_next >= params.v_f { params.v_f.next_down() } else { v_next };
    VoltageStep { v_next, crossing_offset: None }
}

/// Outcome of one particle trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleRun {
    /// State at each snapshot time.
    pub snapshots: Vec<ParticleState>,
    pub spikes: Vec<SpikeRecord>,
    /// Final state (at the horizon or at the abort).
    pub last: ParticleState,
    pub max_g: f64,
    pub aborted: Option<Error>,
}

/// Mutable single-particle integrator.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    params: &'a ModelParams,
    ou: OuStep,
    dt: f64,
    /// `(V_E - V_R) / (V_F - V_R)`: inverse of the shortest possible
    /// inter-spike gap per unit conductance.
    gap_factor: f64,
}

impl<'a> Stepper<'a> {
    pub fn new(params: &'a ModelParams, dt: f64) -> Self {
        Self { params, ou: OuStep::new(params, dt), dt, gap_factor: (params.v_e - params.v_r) / params.voltage_span() }
    }

    /// Crossing budget for one step when the conductance never exceeded
    /// `g_guard`: consecutive spikes are at least
    /// `(V_F - V_R) / ((V_E - V_R) g_guard)` apart.
    pub fn crossing_guard(&self, g_guard: f64) -> u64 {
        (self.dt * self.gap_factor * g_guard).floor() as u64 + 1
    }

    /// Advance `state` from `t0` by one step. Spikes are appended to `spikes`
    /// (when given) and `interval_g_max` tracks the running maximum of `g`
    /// since the last spike.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub fn advance<N: NoiseSource>(
        &self,
        state: &mut ParticleState,
        t0: f64,
        noise: &mut N,
        particle_id: u64,
        max_g: &mut f64,
        interval_g_max: &mut f64,
        mut spikes: Option<&mut Vec<SpikeRecord>>,
    ) -> Result<()> {
        let (g, dl) = self.ou.step(state.g, noise.standard_normal());
        state.g = g;
        state.local_time += dl;
        *max_g = max_g.max(g);
        *interval_g_max = interval_g_max.max(g);

        let mut elapsed = 0.0;
        let mut remaining = self.dt;
        let mut crossings = 0u64;
        let guard = self.crossing_guard(*max_g);
        loop {
            let out = step_voltage(self.params, state.v, g, remaining);
            match out.crossing_offset {
                None => {
                    state.v = out.v_next;
                    return Ok(());
                }
                Some(offset) => {
                    crossings += 1;
                    if crossings > guard {
                        return Err(Error::ParticleAborted {
                            particle: particle_id,
                            time: t0 + elapsed,
                            crossings,
                            guard,
                        });
                    }
                    elapsed += offset;
                    remaining -= offset;
                    state.v = self.params.v_r;
                    state.spike_count += 1;
                    if let Some(log) = spikes.as_deref_mut() {
                        log.push(SpikeRecord {
                            particle_id,
                            spike_time: t0 + elapsed,
                            g_at_spike: g,
                            interval_g_max: *interval_g_max,
                        });
                    }
                    *interval_g_max = g;
                    if remaining <= 0.0 {
                        return Ok(());
                    }
                }
            }
        }
    }
}

/// Simulates one particle over `config.horizon`, recording its state at every
/// snapshot time. `noise` supplies all randomness.
pub fn simulate_particle<N: NoiseSource>(
    params: &ModelParams,
    config: &SimConfig,
    initial: ParticleState,
    particle_id: u64,
    noise: &mut N,
) -> Result<ParticleRun> {
    params.validate_dynamics()?;
    config.validate()?;
    initial.check(params)?;
    let snap_steps = config.snapshot_steps()?;
    Ok(run_particle(params, config, &snap_steps, initial, particle_id, noise))
}

pub(crate) fn run_particle<N: NoiseSource>(
    params: &ModelParams,
    config: &SimConfig,
    snap_steps: &[usize],
    initial: ParticleState,
    particle_id: u64,
    noise: &mut N,
) -> ParticleRun {
    let stepper = Stepper::new(params, config.dt);
    let n_steps = config.n_steps();
    let mut state = initial;
    let mut snapshots = Vec::with_capacity(snap_steps.len());
    let mut spikes = Vec::new();
    let mut max_g = state.g;
    let mut interval_g_max = state.g;
    let mut next_snap = 0;
    let mut aborted = None;

    for step in 0..=n_steps {
        while next_snap < snap_steps.len() && snap_steps[next_snap] == step {
            snapshots.push(state);
            next_snap += 1;
        }
        if step == n_steps {
            break;
        }
        let t0 = step as f64 * config.dt;
        let log = config.record_spikes.then_some(&mut spikes);
        if let Err(e) = stepper.advance(&mut state, t0, noise, particle_id, &mut max_g, &mut interval_g_max, log) {
            aborted = Some(e);
            break;
        }
    }
    ParticleRun { snapshots, spikes, last: state, max_g, aborted }
}
