//! Logarithmic sweep of the regularization weight for the bundled
//! experiments, reconstructing on the 1/32 mesh against 1/128 data. For
//! each catalog field it reports the final relative error and the
//! phantom-specific localization metrics per weight.
//!
//! This coarse-mesh ranking picked the ramp default directly; the blob
//! and square-phantom defaults were then confirmed on their full
//! coarse-to-fine schedules by the companion probes (`probe_blob`,
//! `probe_squares`), which resolve what the single-level sweep cannot:
//! fine-level localization under noise and thresholded topology.
//!
//! Run with `cargo run --release --example alpha_sweep`.

use eitkit::mesh::Mesh;
use eitkit::recon::{
    count_components_above, half_contrast_threshold, reconstruct, top_decile_centroid,
    Experiment, LevelSpec,
};
use std::time::Instant;

fn main() {
    let alphas = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];
    for name in ["linear_ramp", "gaussian_blob", "two_squares", "four_squares"] {
        for epsilon in [0.0, 0.001] {
            // Only the ramp is rerun under noise; the phantoms sweep clean.
            if epsilon > 0.0 && name != "linear_ramp" {
                continue;
            }
            for alpha in alphas {
                let mut exp = Experiment::preset(name).unwrap();
                exp.alpha = alpha;
                exp.epsilon = epsilon;
                exp.schedule = vec![LevelSpec { n_subdiv: 32, iters: 200 }];
                let clock = Instant::now();
                let rec = reconstruct(&exp).unwrap();
                let level = rec.levels.last().unwrap();
                let mesh = Mesh::uniform(level.n_subdiv);
                let extra = match name {
                    "two_squares" | "four_squares" => {
                        let cut = half_contrast_threshold(&level.sigma, 1.0);
                        format!(
                            " components@{cut:.3}={}",
                            count_components_above(&mesh, &level.sigma, cut)
                        )
                    }
                    "gaussian_blob" => {
                        let c = top_decile_centroid(&mesh, &level.sigma);
                        format!(" centroid=({:.3},{:.3})", c[0], c[1])
                    }
                    _ => String::new(),
                };
                println!(
                    "{name} eps={epsilon} alpha={alpha:.0e} rel_err={:.4} F={:.4e}{extra} [{:.1} s]",
                    level.rel_err.unwrap(),
                    level.records.last().unwrap().value,
                    clock.elapsed().as_secs_f64()
                );
            }
        }
    }
}
