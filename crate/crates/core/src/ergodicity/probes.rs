use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::GridSpec;
use crate::model::{HarrisConstants, ModelParams};
use crate::particle::{derive_seed, empirical_measure, mix64, simulate_ensemble, InitialSampler, SimConfig};

/// Monte Carlo settings of the Lyapunov probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub n_per_point: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Number of equally spaced sample times in `(0, horizon]`.
    pub n_times: usize,
    pub seed: u64,
    /// Multiple of the standard error allowed above the bound.
    pub se_factor: f64,
    /// Time at which `(alpha_1, alpha_2)` are reported.
    pub harris_t: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { n_per_point: 10_000, dt: 0.01, horizon: 5.0, n_times: 20, seed: 1, se_factor: 4.0, harris_t: 1.0 }
    }
}

impl ProbeSettings {
    fn sample_times(&self) -> Result<Vec<f64>> {
        if self.n_per_point < 2 {
            return Err(invalid("n_per_point", "need at least 2 samples per point"));
        }
        if self.n_times == 0 {
            return Err(invalid("n_times", "must be >= 1"));
        }
        if !(self.horizon > 0.0) || !(self.dt > 0.0) {
            return Err(invalid("horizon", format!("horizon {} and dt {} must be > 0", self.horizon, self.dt)));
        }
        let steps = (self.horizon / self.dt).round() as usize;
        if !steps.is_multiple_of(self.n_times) {
            return Err(invalid("n_times", format!("{} sample times do not divide {steps} steps", self.n_times)));
        }
        let every = steps / self.n_times;
        Ok((1..=self.n_times).map(|k| (k * every) as f64 * self.dt).collect())
    }
}

/// First sampled time at which a probe point exceeded the drift bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovViolation {
    pub point: (f64, f64),
    pub t: f64,
    pub estimate: f64,
    pub bound: f64,
    pub se: f64,
}

/// Monte Carlo evidence for `E W(G_t) <= e^{-2t} W(g_0) + a (1 - e^{-2t})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub points: Vec<(f64, f64)>,
    pub times: Vec<f64>,
    /// `estimates[k][m]`: sample mean of `W` for point `k` at `times[m]`.
    pub estimates: Vec<Vec<f64>>,
    pub standard_errors: Vec<Vec<f64>>,
    pub bounds: Vec<Vec<f64>>,
    /// Smallest `bound + se_factor * SE - estimate` over all points and times.
    pub margin: f64,
    pub se_factor: f64,
    pub violations: Vec<LyapunovViolation>,
    /// `(e^{-2T}, a (1 - e^{-2T}))`, present only when no violation occurred.
    pub alphas: Option<(f64, f64)>,
}

impl LyapunovReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Analytic drift bound at time `t` from `W(g_0) = w0`.
pub fn lyapunov_bound(params: &ModelParams, w0: f64, t: f64) -> f64 {
    let decay = (-2.0 * t).exp();
    decay * w0 + params.a * (1.0 - decay)
}

/// Simulates `n_per_point` particles from each probe point and compares the
/// sample mean of `W` with the drift bound at every sample time.
pub fn lyapunov_probe(params: &ModelParams, settings: &ProbeSettings, points: &[(f64, f64)]) -> Result<LyapunovReport> {
    params.validate()?;
    let times = settings.sample_times()?;
    if points.is_empty() {
        return Err(invalid("probe_points", "empty probe set"));
    }
    let mut report = LyapunovReport {
        points: points.to_vec(),
        times: times.clone(),
        estimates: Vec::new(),
        standard_errors: Vec::new(),
        bounds: Vec::new(),
        margin: f64::INFINITY,
        se_factor: settings.se_factor,
        violations: Vec::new(),
        alphas: None,
    };
    let n = settings.n_per_point as f64;
    for (k, &(v, g)) in points.iter().enumerate() {
        let init = InitialSampler::PointMass { v, g };
        init.validate(params)?;
        let mut cfg = SimConfig::new(
            settings.dt,
            *times.last().unwrap(),
            settings.n_per_point,
            derive_seed(settings.seed, k as u64),
            times.clone(),
        );
        cfg.record_spikes = false;
        let run = simulate_ensemble(params, &cfg, &init)?;
        let w0 = params.lyapunov(g);
        let (mut est, mut ses, mut bds) = (Vec::new(), Vec::new(), Vec::new());
        let mut violated = false;
        for snap in &run.snapshots {
            let (mut s, mut s2) = (0.0, 0.0);
            for p in &snap.particles {
                let w = params.lyapunov(p.g);
                s += w;
                s2 += w * w;
            }
            let mean = s / n;
            let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
            let se = (var / n).sqrt();
            let bound = lyapunov_bound(params, w0, snap.t);
            let slack = bound + settings.se_factor * se - mean;
            report.margin = report.margin.min(slack);
            if slack < 0.0 && !violated {
                violated = true;
                report.violations.push(LyapunovViolation { point: (v, g), t: snap.t, estimate: mean, bound, se });
            }
            est.push(mean);
            ses.push(se);
            bds.push(bound);
        }
        report.estimates.push(est);
        report.standard_errors.push(ses);
        report.bounds.push(bds);
    }
    if report.passed() {
        let decay = (-2.0 * settings.harris_t).exp();
        report.alphas = Some((decay, params.a * (1.0 - decay)));
    }
    Ok(report)
}

/// `n_v x n_g` lattice covering `C(R)`: voltages `V_R + i span / n_v` and
/// conductances equally spaced on `[g_low, M(R)]`.
pub fn probe_lattice(params: &ModelParams, harris: &HarrisConstants, n_v: usize, n_g: usize) -> Vec<(f64, f64)> {
    let span = params.voltage_span();
    let mut out = Vec::with_capacity(n_v * n_g);
    for j in 0..n_g {
        let g = if n_g == 1 {
            harris.g_low
        } else {
            harris.g_low + (harris.m_of_r - harris.g_low) * j as f64 / (n_g - 1) as f64
        };
        for i in 0..n_v {
            out.push((params.v_r + span * i as f64 / n_v as f64, g));
        }
    }
    out
}

/// Settings of the minorization probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinorizationSettings {
    /// Probe lattice `(n_v, n_g)` on `C(1)`; larger small sets extend the
    /// same conductance spacing.
    pub probe_grid: (usize, usize),
    pub n_per_point: usize,
    pub dt: f64,
    pub seed: u64,
    /// Histogram cells `(n_v, n_g)` on `[V_R, V_F) x [0, g_in + 3 sqrt(a)]`.
    pub histogram: (usize, usize),
    /// One-sided normal quantile of the lower confidence bound.
    pub z: f64,
    /// Replaces `harris.t` when set.
    pub time_override: Option<f64>,
}

impl Default for MinorizationSettings {
    fn default() -> Self {
        Self {
            probe_grid: (8, 8),
            n_per_point: 10_000,
            dt: 0.01,
            seed: 1,
            histogram: (10, 10),
            z: 1.645,
            time_override: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinorizationStatus {
    /// The lower confidence bound on `eta` is positive.
    Pass,
    /// `eta_hat > 0` but the data cannot exclude zero.
    Insufficient,
    /// Some probe point put no mass on any candidate block.
    Structural,
}

/// Empirical minorization pair `(eta, nu)` on `C(R)` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinorizationReport {
    pub r: f64,
    pub t: f64,
    pub points: Vec<(f64, f64)>,
    pub histogram: GridSpec,
    /// Cell ranges `[i0, i1) x [j0, j1)` of the block `K`; `nu` is uniform on it.
    pub block: ((usize, usize), (usize, usize)),
    /// `[v0, v1) x [g0, g1)` covered by `K`.
    pub block_bounds: ((f64, f64), (f64, f64)),
    pub eta: f64,
    pub eta_lower: f64,
    /// Smallest mass any cell of `K` received, per probe point.
    pub point_minima: Vec<f64>,
    /// Probe point attaining the overall minimum.
    pub worst_point: (f64, f64),
    pub status: MinorizationStatus,
}

impl MinorizationReport {
    pub fn passed(&self) -> bool {
        self.status == MinorizationStatus::Pass
    }

    pub fn block_cells(&self) -> usize {
        let ((i0, i1), (j0, j1)) = self.block;
        (i1 - i0) * (j1 - j0)
    }
}

/// Nested probe set: the conductance spacing is fixed by `C(1)` so that the
/// set for a larger `R` contains the set for a smaller one, point for point.
fn nested_lattice(params: &ModelParams, harris: &HarrisConstants, n_v: usize, n_g: usize) -> Result<Vec<(f64, f64)>> {
    if n_v == 0 || n_g < 2 {
        return Err(invalid("probe_grid", format!("need n_v >= 1 and n_g >= 2, got ({n_v}, {n_g})")));
    }
    let base_lo = (params.g_in - 1.0).max(0.0);
    let base_hi = params.g_in + 1.0;
    let h = (base_hi - base_lo) / (n_g - 1) as f64;
    let k_lo = ((harris.g_low - base_lo) / h - 1e-9).ceil() as i64;
    let k_hi = ((harris.m_of_r - base_lo) / h + 1e-9).floor() as i64;
    let mut gs: Vec<f64> = (k_lo..=k_hi).map(|k| base_lo + k as f64 * h).collect();
    if gs.last().is_none_or(|&g| g < harris.m_of_r - 1e-9 * h) {
        gs.push(harris.m_of_r);
    }
    let span = params.voltage_span();
    Ok(gs.iter().flat_map(|&g| (0..n_v).map(move |i| (params.v_r + span * i as f64 / n_v as f64, g))).collect())
}

/// Runs `n_per_point` particles from every probe point of `C(R)` for time
/// `T`, histograms the endpoints and picks the cell block `K` maximizing
/// `|K| min_{x, cell in K} P^T(x, cell) / |cell|`.
pub fn minorization_probe(
    params: &ModelParams,
    harris: &HarrisConstants,
    settings: &MinorizationSettings,
) -> Result<MinorizationReport> {
    params.validate()?;
    if settings.n_per_point == 0 {
        return Err(invalid("n_per_point", "must be >= 1"));
    }
    if !(harris.j_star > 0.0) {
        return Err(invalid("J_star", format!("must be > 0, got {}", harris.j_star)));
    }
    let t_raw = settings.time_override.unwrap_or(harris.t);
    if !(t_raw > 0.0) || !(settings.dt > 0.0) {
        return Err(invalid("T", format!("time {t_raw} and dt {} must be > 0", settings.dt)));
    }
    let t = (t_raw / settings.dt).round().max(1.0) * settings.dt;
    let (hv, hg) = settings.histogram;
    let hist_grid = GridSpec::new(params, hv, hg, params.g_in + 3.0 * params.a.sqrt())?;
    let points = nested_lattice(params, harris, settings.probe_grid.0, settings.probe_grid.1)?;

    let n = settings.n_per_point as f64;
    let mut masses: Vec<Vec<f64>> = Vec::with_capacity(points.len());
    for &(v, g) in &points {
        let key = mix64(v.to_bits()) ^ g.to_bits();
        let mut cfg = SimConfig::new(settings.dt, t, settings.n_per_point, derive_seed(settings.seed, key), vec![t]);
        cfg.record_spikes = false;
        let run = simulate_ensemble(params, &cfg, &InitialSampler::PointMass { v, g })?;
        masses.push(empirical_measure(&run.snapshots[0].particles, hist_grid).cell_masses());
    }

    let cells = hist_grid.len();
    let mut cell_min = vec![f64::INFINITY; cells];
    let mut cell_lcb = vec![f64::INFINITY; cells];
    for m in &masses {
        for c in 0..cells {
            let p = m[c];
            cell_min[c] = cell_min[c].min(p);
            cell_lcb[c] = cell_lcb[c].min(p - settings.z * (p * (1.0 - p) / n).sqrt());
        }
    }

    let mut best = (0.0, ((0, 1), (0, 1)));
    for i0 in 0..hv {
        for i1 in i0 + 1..=hv {
            for j0 in 0..hg {
                let mut floor = f64::INFINITY;
                for j1 in j0 + 1..=hg {
                    for i in i0..i1 {
                        floor = floor.min(cell_min[hist_grid.index(i, j1 - 1)]);
                    }
                    let score = ((i1 - i0) * (j1 - j0)) as f64 * floor;
                    if score > best.0 {
                        best = (score, ((i0, i1), (j0, j1)));
                    }
                }
            }
        }
    }
    let (eta, block) = best;
    let block = if eta > 0.0 {
        block
    } else {
        // No block works; report the cell with the largest average mass.
        let avg = |c: usize| masses.iter().map(|m| m[c]).sum::<f64>();
        let c = (0..cells).max_by(|&a, &b| avg(a).total_cmp(&avg(b))).unwrap_or(0);
        let (i, j) = (c % hv, c / hv);
        ((i, i + 1), (j, j + 1))
    };
    let ((i0, i1), (j0, j1)) = block;
    let in_block: Vec<usize> = (j0..j1).flat_map(|j| (i0..i1).map(move |i| hist_grid.index(i, j))).collect();
    let n_cells = in_block.len() as f64;
    let point_minima: Vec<f64> =
        masses.iter().map(|m| in_block.iter().map(|&c| m[c]).fold(f64::INFINITY, f64::min)).collect();
    let worst = (0..points.len()).min_by(|&a, &b| point_minima[a].total_cmp(&point_minima[b])).unwrap();
    let eta_lower = n_cells * in_block.iter().map(|&c| cell_lcb[c]).fold(f64::INFINITY, f64::min);

    let status = if eta <= 0.0 {
        MinorizationStatus::Structural
    } else if eta_lower > 0.0 {
        MinorizationStatus::Pass
    } else {
        MinorizationStatus::Insufficient
    };
    let (dv, dg) = (hist_grid.dv(), hist_grid.dg());
    Ok(MinorizationReport {
        r: harris.r,
        t,
        worst_point: points[worst],
        points,
        histogram: hist_grid,
        block,
        block_bounds: (
            (hist_grid.v_lo + i0 as f64 * dv, hist_grid.v_lo + i1 as f64 * dv),
            (j0 as f64 * dg, j1 as f64 * dg),
        ),
        eta,
        eta_lower,
        point_minima,
        status,
    })
}

impl MinorizationReport {
    /// The report itself when it passed, otherwise an error naming the worst
    /// probe point.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            return Ok(self);
        }
        Err(Error::InsufficientData(format!(
            "minorization at R = {}: eta = {}, lower bound = {}, worst probe point ({}, {})",
            self.r, self.eta, self.eta_lower, self.worst_point.0, self.worst_point.1
        )))
    }
}
