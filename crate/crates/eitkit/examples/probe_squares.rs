//! Topology probe for the piecewise-constant phantoms: runs the full
//! coarse-to-fine schedule and reports the realized contrast and the
//! component count at the half-contrast detection threshold.
//!
//! This is the companion to `alpha_sweep`: the sweep ranks weights by
//! relative error on the coarse mesh alone, while this probe confirms the
//! chosen weight sits inside the window where the thresholded
//! reconstruction has the right number of inclusions on the full
//! schedule. Too little regularization speckles the thresholded set into
//! extra components; too much merges neighboring inclusions into one.
//!
//! Run with an optional phantom name:
//! `cargo run --release --example probe_squares -- two_squares`.

use eitkit::mesh::Mesh;
use eitkit::recon::{
    count_components_above, half_contrast_threshold, reconstruct, Experiment,
};
use std::time::Instant;

fn main() {
    let only = std::env::args().nth(1);
    for name in ["two_squares", "four_squares"] {
        if let Some(pick) = &only {
            if pick != name {
                continue;
            }
        }
        for alpha in [1e-5, 3e-5, 5e-5, 1e-4, 3e-4] {
            let mut exp = Experiment::preset(name).unwrap();
            exp.alpha = alpha;
            let clock = Instant::now();
            let rec = reconstruct(&exp).unwrap();
            let level = rec.levels.last().unwrap();
            let mesh = Mesh::uniform(level.n_subdiv);
            let max = level
                .sigma
                .values
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let cut = half_contrast_threshold(&level.sigma, 1.0);
            let last = level.records.last().unwrap();
            println!(
                "{name} alpha={alpha:.0e}: F={:.3e} rel_err={:.4} max={:.3} components@{cut:.3}={} [{:.1} s]",
                last.value,
                last.rel_err.unwrap(),
                max,
                count_components_above(&mesh, &level.sigma, cut),
                clock.elapsed().as_secs_f64()
            );
        }
    }
}
