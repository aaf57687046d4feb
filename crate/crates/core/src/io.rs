//! Plain-text artifacts: CSV tables and flat `key = value` summaries.
//!
//! Every file starts with one `#` comment line naming the tool version, the
//! configuration hash and the seed. Floats are written with Rust's shortest
//! round-trip formatting ([`float`]), so equal values always produce equal
//! bytes and parse back to the same `f64`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::field::DensityField;
use crate::fpsolver::{Face, FpOperator};
use crate::particle::{EnsembleState, SpikeRecord};

/// Provenance line written at the top of each artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactHeader {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl ArtifactHeader {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self { tool: "vcfp".into(), version: env!("CARGO_PKG_VERSION").into(), config_hash: config_hash.into(), seed }
    }

    pub fn line(&self) -> String {
        format!("# {} {} config_sha256={} seed={}", self.tool, self.version, self.config_hash, self.seed)
    }
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Io(e.to_string())
}

/// Writes a header line, a column row and one record per row.
pub fn write_table<W, I, R>(mut w: W, header: &ArtifactHeader, columns: &[&str], rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    writeln!(w, "{}", header.line()).map_err(io_err)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(columns).map_err(io_err)?;
    for row in rows {
        csv.write_record(row).map_err(io_err)?;
    }
    csv.flush().map_err(io_err)
}

/// Shortest round-trip representation, with an exponent for tiny or huge
/// magnitudes (`1e-12`, `0.5`, `2.0`).
pub fn float(x: f64) -> String {
    format!("{x:?}")
}

/// Formats a float row.
pub fn row<const N: usize>(values: [f64; N]) -> Vec<String> {
    values.iter().map(|&v| float(v)).collect()
}

pub fn write_key_values<W: Write>(mut w: W, header: &ArtifactHeader, pairs: &[(String, String)]) -> Result<()> {
    writeln!(w, "{}", header.line()).map_err(io_err)?;
    for (k, v) in pairs {
        writeln!(w, "{k} = {v}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// `t, particle, v, g, local_time, spike_count` for every snapshot.
pub fn write_snapshots<W: Write>(w: W, header: &ArtifactHeader, snapshots: &[EnsembleState]) -> Result<()> {
    let rows = snapshots.iter().flat_map(|s| {
        s.particles.iter().enumerate().map(move |(id, p)| {
            vec![float(s.t), id.to_string(), float(p.v), float(p.g), float(p.local_time), p.spike_count.to_string()]
        })
    });
    write_table(w, header, &["time", "particle_id", "v", "g", "local_time", "spike_count"], rows)
}

pub fn write_spikes<W: Write>(w: W, header: &ArtifactHeader, spikes: &[SpikeRecord]) -> Result<()> {
    let rows = spikes
        .iter()
        .map(|s| vec![s.particle_id.to_string(), float(s.spike_time), float(s.g_at_spike), float(s.interval_g_max)]);
    write_table(w, header, &["particle_id", "spike_time", "g_at_spike", "interval_g_max"], rows)
}

/// Cell centres and densities, g-major.
pub fn write_density<W: Write>(w: W, header: &ArtifactHeader, field: &DensityField) -> Result<()> {
    let g = field.grid;
    let rows = (0..g.n_g).flat_map(|j| (0..g.n_v).map(move |i| row([g.v_center(i), g.g_center(j), field.at(i, j)])));
    write_table(w, header, &["v", "g", "p"], rows)
}

/// Threshold outflow and reset inflow per conductance row.
pub fn write_flux<W: Write>(w: W, header: &ArtifactHeader, op: &FpOperator, field: &DensityField) -> Result<()> {
    let out = op.boundary_flux_profile(field, Face::Threshold)?;
    let inflow = op.boundary_flux_profile(field, Face::Reset)?;
    let rows = (0..op.grid.n_g).map(|j| row([op.grid.g_center(j), out[j], inflow[j]]));
    write_table(w, header, &["g", "threshold_flux", "reset_flux"], rows)
}
