//! Reference run behind `CrossBudget::REFERENCE`.
//!
//! With 10^6 particles the shot-noise term is small enough to expose the
//! discretization error of the 200x200 solve. The printed coefficient
//! `(tv - shot) / (dv + dg)` peaked at 0.075; `c2` is twice that.

use vcfp_core::field::GridSpec;
use vcfp_core::model::ModelParams;
use vcfp_core::particle::InitialSampler;
use vcfp_core::validate::{cross_validate, CrossBudget, CrossSettings};

fn main() {
    let p = ModelParams::default();
    let init = InitialSampler::Uniform { v0: 0.0, v1: 1.0, g0: 0.0, g1: 2.0 };
    let grid = GridSpec::new(&p, 200, 200, 8.0).unwrap();
    let settings = CrossSettings {
        n_particles: 1_000_000,
        budget: CrossBudget { c1: 1.0, c2: 0.0, ceiling: f64::INFINITY },
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    for c in cross_validate(&p, &init, &[0.0, 1.0, 5.0, 20.0], &grid, &settings).unwrap() {
        let shot = c.tolerance;
        let k = (c.value - shot) / (grid.dv() + grid.dg());
        worst = worst.max(k);
        println!("{}: tv = {:.5} shot = {:.5} coefficient = {:.4}", c.name, c.value, shot, k);
    }
    println!("c2 = 2 * {worst:.4} = {:.4}", 2.0 * worst);
}
