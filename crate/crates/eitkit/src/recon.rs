//! End-to-end conductivity reconstruction.
//!
//! Ties the pipeline together: sinusoidal current patterns
//! ([`synth_currents`]), reference data generated on a strictly finer mesh
//! than any reconstruction mesh ([`Experiment::generate_data`]), seeded
//! Gaussian voltage noise re-centered to the zero-sum space ([`add_noise`]),
//! and a coarse-to-fine schedule in which each level minimizes
//! `sum_k ||U_k(sigma) - U_k^delta||^2 + alpha N_h(sigma)` over the box
//! `[lambda, 1/lambda]` with the accelerated prox solver
//! ([`crate::fista::fista_minimize`]), passing its result to the next level
//! by piecewise-constant injection ([`prolong`]).
//!
//! The total variation `N_h` scales with mesh size, so the grid-unit weight
//! handed to the solver is `alpha * h`. Smooth-part evaluations happen at
//! extrapolated momentum points that can leave the box; the closures here
//! clamp those inputs to the widened box `[lambda/100, 100/lambda]` before
//! solving, a safeguard that leaves in-box evaluations untouched.
//!
//! Ground-truth fields come from a small named catalog ([`TrueSigma`]): a
//! linear ramp, a smooth off-center blob, and two piecewise-constant
//! phantoms with two or four square inclusions of contrast 2 on a unit
//! background.
//!
//! # Example
//! ```
//! use eitkit::recon::{reconstruct, Experiment, LevelSpec, TrueSigma};
//!
//! // Nothing to recover: the truth equals the initial guess.
//! let exp = Experiment {
//!     true_sigma: TrueSigma::Uniform(1.0),
//!     sigma0: 1.0,
//!     n_patterns: 2,
//!     epsilon: 0.0,
//!     alpha: 1e-4,
//!     lambda: 0.25,
//!     data_n: 16,
//!     schedule: vec![LevelSpec { n_subdiv: 8, iters: 2 }],
//!     seed: 7,
//!     n_electrodes: 16,
//!     elec_len: 0.125,
//!     contact_z: 1.0,
//! };
//! let rec = reconstruct(&exp).unwrap();
//! assert_eq!(rec.levels.len(), 1);
//! // Stays near the truth up to the coarse model's discretization bias.
//! assert!(rec.levels[0].rel_err.unwrap() < 0.1);
//! ```

use crate::fista::{fista_minimize, FistaParams};
use crate::forward::{forward_map, ConductivityField, CurrentPattern, ElectrodeModel};
use crate::gradient::MisfitProblem;
use crate::mesh::{electrode_layout, Mesh};
use crate::tv::CellGrid;
use crate::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use std::cell::RefCell;
use std::f64::consts::TAU;

// ---------------------------------------------------------------------------
// Current patterns
// ---------------------------------------------------------------------------

/// Sinusoidal current patterns on `L` electrodes: `sin(2 pi k l / L)` for
/// `k = 1..ceil(K/2)`, then `cos(2 pi k l / L)` for the remainder, each
/// re-centered to zero sum and normalized to unit Euclidean norm.
///
/// # Panics
/// If `K` is zero, exceeds `L - 1`, or asks for the degenerate sine at
/// `k = L/2` (identically zero on the electrode grid).
pub fn synth_currents(n_electrodes: usize, n_patterns: usize) -> Vec<CurrentPattern> {
    assert!(n_electrodes >= 2, "need at least two electrodes");
    assert!(
        (1..n_electrodes).contains(&n_patterns),
        "pattern count {n_patterns} outside 1..{n_electrodes}"
    );
    let l = n_electrodes as f64;
    let n_sin = n_patterns.div_ceil(2);
    (0..n_patterns)
        .map(|idx| {
            let (k, sine) = if idx < n_sin {
                (idx + 1, true)
            } else {
                (idx - n_sin + 1, false)
            };
            let mut v: Vec<f64> = (0..n_electrodes)
                .map(|el| {
                    let arg = TAU * k as f64 * el as f64 / l;
                    if sine {
                        arg.sin()
                    } else {
                        arg.cos()
                    }
                })
                .collect();
            let mean = v.iter().sum::<f64>() / l;
            v.iter_mut().for_each(|x| *x -= mean);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(
                norm > 1e-9,
                "pattern {} (k = {k}) is degenerate on {n_electrodes} electrodes",
                idx + 1
            );
            v.iter_mut().for_each(|x| *x /= norm);
            CurrentPattern::new(v).expect("centered pattern has zero sum")
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

/// Voltage data with the noise realization that produced it.
#[derive(Debug, Clone)]
pub struct NoisyData {
    /// One row per pattern, re-centered to zero sum.
    pub voltages: Vec<Vec<f64>>,
    /// Relative noise level.
    pub epsilon: f64,
    /// Generator seed.
    pub seed: u64,
}

/// Adds seeded Gaussian noise per row: `U_l + epsilon * max_j |U_j| * xi_l`
/// with standard-normal `xi`, then re-centers each row to zero sum (the
/// voltage space is zero-sum; centering is an orthogonal projection, so it
/// never amplifies the noise). `epsilon = 0` returns the data unchanged.
pub fn add_noise(data: &[Vec<f64>], epsilon: f64, seed: u64) -> NoisyData {
    assert!(epsilon >= 0.0, "negative noise level {epsilon}");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let voltages = data
        .iter()
        .map(|row| {
            if epsilon == 0.0 {
                return row.clone();
            }
            let scale = epsilon * row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut noisy: Vec<f64> = row
                .iter()
                .map(|&u| {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    u + scale * xi
                })
                .collect();
            let mean = noisy.iter().sum::<f64>() / noisy.len() as f64;
            noisy.iter_mut().for_each(|v| *v -= mean);
            noisy
        })
        .collect();
    NoisyData {
        voltages,
        epsilon,
        seed,
    }
}

// ---------------------------------------------------------------------------
// Ground-truth catalog
// ---------------------------------------------------------------------------

/// Axis-aligned squares `[x0, x1] x [y0, y1]` holding the high-contrast
/// inclusions of the piecewise-constant phantoms.
const TWO_SQUARES: [[f64; 4]; 2] = [[0.2, 0.4, 0.2, 0.4], [0.6, 0.8, 0.6, 0.8]];
const FOUR_SQUARES: [[f64; 4]; 4] = [
    [0.15, 0.35, 0.15, 0.35],
    [0.65, 0.85, 0.65, 0.85],
    [0.15, 0.35, 0.65, 0.85],
    [0.65, 0.85, 0.15, 0.35],
];

/// Named ground-truth conductivities used by the bundled experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum TrueSigma {
    /// `0.5 + (2/3) x`: smooth ramp across the domain.
    LinearRamp,
    /// `1 + 0.2 exp(-8((x-0.6)^2 + (y-0.6)^2))`: smooth off-center blob.
    GaussianBlob,
    /// Two diagonal square inclusions of value 2 on background 1.
    TwoSquares,
    /// Four square inclusions of value 2 on background 1.
    FourSquares,
    /// Spatially constant field.
    Uniform(f64),
}

impl TrueSigma {
    /// Pointwise value at `(x, y)`.
    pub fn value(&self, x: f64, y: f64) -> f64 {
        let in_square = |s: &[f64; 4]| x >= s[0] && x <= s[1] && y >= s[2] && y <= s[3];
        match self {
            TrueSigma::LinearRamp => 0.5 + 2.0 / 3.0 * x,
            TrueSigma::GaussianBlob => {
                1.0 + 0.2 * (-8.0 * ((x - 0.6).powi(2) + (y - 0.6).powi(2))).exp()
            }
            TrueSigma::TwoSquares => {
                if TWO_SQUARES.iter().any(in_square) {
                    2.0
                } else {
                    1.0
                }
            }
            TrueSigma::FourSquares => {
                if FOUR_SQUARES.iter().any(in_square) {
                    2.0
                } else {
                    1.0
                }
            }
            TrueSigma::Uniform(v) => *v,
        }
    }

    /// Background value, the natural initial guess.
    pub fn background(&self) -> f64 {
        match self {
            TrueSigma::LinearRamp => 0.5,
            TrueSigma::GaussianBlob | TrueSigma::TwoSquares | TrueSigma::FourSquares => 1.0,
            TrueSigma::Uniform(v) => *v,
        }
    }

    /// Element-midpoint sampling onto a mesh.
    pub fn sample_field(&self, mesh: &Mesh, lambda: f64) -> ConductivityField {
        ConductivityField::sample(mesh, lambda, |x, y| self.value(x, y))
    }

    /// Catalog lookup by the names used in config files.
    pub fn from_name(name: &str) -> Result<TrueSigma> {
        match name {
            "linear_ramp" => Ok(TrueSigma::LinearRamp),
            "gaussian_blob" => Ok(TrueSigma::GaussianBlob),
            "two_squares" => Ok(TrueSigma::TwoSquares),
            "four_squares" => Ok(TrueSigma::FourSquares),
            other => Err(Error::InvalidInput(format!(
                "unknown conductivity '{other}' (expected linear_ramp, gaussian_blob, \
                 two_squares, or four_squares)"
            ))),
        }
    }

    /// Config-file name of the field.
    pub fn name(&self) -> &'static str {
        match self {
            TrueSigma::LinearRamp => "linear_ramp",
            TrueSigma::GaussianBlob => "gaussian_blob",
            TrueSigma::TwoSquares => "two_squares",
            TrueSigma::FourSquares => "four_squares",
            TrueSigma::Uniform(_) => "uniform",
        }
    }
}

// ---------------------------------------------------------------------------
// Prolongation
// ---------------------------------------------------------------------------

/// Injects a piecewise-constant field from a coarse uniform mesh onto a
/// nested finer one: each fine triangle takes the value of the coarse
/// triangle containing its centroid. Exact integer geometry — no point
/// searches.
pub fn prolong(
    coarse: &ConductivityField,
    coarse_mesh: &Mesh,
    fine_mesh: &Mesh,
) -> Result<ConductivityField> {
    coarse.assert_conforms(coarse_mesh);
    if fine_mesh.n_subdiv % coarse_mesh.n_subdiv != 0 {
        return Err(Error::InvalidInput(format!(
            "prolongation needs nested meshes: coarse 1/{} does not divide fine 1/{}",
            coarse_mesh.n_subdiv, fine_mesh.n_subdiv
        )));
    }
    let r = fine_mesh.n_subdiv / coarse_mesh.n_subdiv;
    let values = (0..fine_mesh.triangles.len())
        .map(|t| {
            let (fy, fx, upper) = fine_mesh.tri_cell(t);
            let (a, b) = (fx % r, fy % r);
            // The fine centroid sits below the coarse cell diagonal iff its
            // sub-cell lies on or under it; on the diagonal row of sub-cells
            // the fine lower triangle goes low and the fine upper goes high.
            let coarse_lower = if upper { a > b } else { a >= b };
            coarse.values[coarse_mesh.tri_at(fy / r, fx / r, !coarse_lower)]
        })
        .collect();
    Ok(ConductivityField {
        values,
        lambda: coarse.lambda,
    })
}

// ---------------------------------------------------------------------------
// Field diagnostics
// ---------------------------------------------------------------------------

/// Relative `L^2` distance `||a - b|| / ||b||` of piecewise-constant fields.
pub fn relative_l2_error(mesh: &Mesh, a: &ConductivityField, b: &ConductivityField) -> f64 {
    a.assert_conforms(mesh);
    b.assert_conforms(mesh);
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..mesh.triangles.len() {
        let area = mesh.area(t);
        num += area * (a.values[t] - b.values[t]).powi(2);
        den += area * b.values[t].powi(2);
    }
    (num / den).sqrt()
}

/// Number of edge-connected components of the region `{value > threshold}`.
pub fn count_components_above(mesh: &Mesh, field: &ConductivityField, threshold: f64) -> usize {
    field.assert_conforms(mesh);
    let above: Vec<bool> = field.values.iter().map(|&v| v > threshold).collect();
    let mut seen = vec![false; above.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..above.len() {
        if !above[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(t) = stack.pop() {
            for &e in &mesh.tri_edges[t] {
                for other in mesh.edges[e].tris.into_iter().flatten() {
                    if other != t && above[other] && !seen[other] {
                        seen[other] = true;
                        stack.push(other);
                    }
                }
            }
        }
    }
    count
}

/// Detection threshold halfway between the background level and the
/// field's own peak: `background + (max - background) / 2`.
///
/// Regularized reconstructions systematically understate inclusion
/// amplitude, so topology checks ("are the inclusions separated?") cut at
/// half the *realized* contrast — the full-width-at-half-maximum
/// convention — rather than at half the phantom's nominal contrast, which
/// a damped reconstruction may never reach.
pub fn half_contrast_threshold(field: &ConductivityField, background: f64) -> f64 {
    let max = field.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    background + 0.5 * (max - background)
}

/// Area-weighted centroid of the triangles carrying the top decile of
/// values (ties broken by triangle index).
pub fn top_decile_centroid(mesh: &Mesh, field: &ConductivityField) -> [f64; 2] {
    field.assert_conforms(mesh);
    let mut order: Vec<usize> = (0..field.values.len()).collect();
    order.sort_by(|&a, &b| {
        field.values[b]
            .partial_cmp(&field.values[a])
            .expect("finite conductivity values")
            .then(a.cmp(&b))
    });
    let keep = field.values.len().div_ceil(10);
    let mut cx = 0.0;
    let mut cy = 0.0;
    let mut total = 0.0;
    for &t in &order[..keep] {
        let area = mesh.area(t);
        let c = mesh.centroid(t);
        cx += area * c[0];
        cy += area * c[1];
        total += area;
    }
    [cx / total, cy / total]
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// One reconstruction level: mesh resolution and its iteration budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelSpec {
    /// Mesh subdivisions per side (mesh size is `1/n_subdiv`).
    pub n_subdiv: usize,
    /// Outer solver iterations at this level.
    pub iters: usize,
}

/// Full description of a reconstruction run.
#[derive(Debug, Clone)]
pub struct Experiment {
    /// Ground truth generating the data.
    pub true_sigma: TrueSigma,
    /// Constant initial guess.
    pub sigma0: f64,
    /// Number of driven current patterns.
    pub n_patterns: usize,
    /// Relative voltage noise level.
    pub epsilon: f64,
    /// Regularization weight on the physical total variation.
    pub alpha: f64,
    /// Box parameter: admissible conductivities lie in `[lambda, 1/lambda]`.
    pub lambda: f64,
    /// Data-mesh subdivisions; must exceed every reconstruction level.
    pub data_n: usize,
    /// Coarse-to-fine reconstruction schedule.
    pub schedule: Vec<LevelSpec>,
    /// Noise seed.
    pub seed: u64,
    /// Electrode count.
    pub n_electrodes: usize,
    /// Electrode arc length.
    pub elec_len: f64,
    /// Contact impedance shared by all electrodes.
    pub contact_z: f64,
}

impl Experiment {
    /// Bundled experiment matching a catalog field, with the standard
    /// 16-electrode belt, 10 patterns, data on the 1/128 mesh, and weights
    /// chosen by the documented sweep. `name` is a [`TrueSigma`] config
    /// name.
    pub fn preset(name: &str) -> Result<Experiment> {
        let true_sigma = TrueSigma::from_name(name)?;
        // Regularization weights come from the logarithmic sweeps in
        // `examples/alpha_sweep.rs` (coarse-mesh ranking), with the blob
        // weight picked by the fine-mesh localization scan in
        // `examples/probe_blob.rs` and the square-phantom weight from the
        // topology window in `examples/probe_squares.rs`. Fine levels run
        // short: against data from a finer mesh the iteration error curve
        // turns upward once the optimizer starts fitting the
        // discretization gap, so stopping early is both cheaper and more
        // accurate.
        let (alpha, schedule) = match true_sigma {
            TrueSigma::LinearRamp => (
                1e-2,
                vec![
                    LevelSpec { n_subdiv: 16, iters: 200 },
                    LevelSpec { n_subdiv: 32, iters: 200 },
                    LevelSpec { n_subdiv: 64, iters: 80 },
                ],
            ),
            TrueSigma::GaussianBlob => (
                7e-3,
                vec![
                    LevelSpec { n_subdiv: 32, iters: 200 },
                    LevelSpec { n_subdiv: 64, iters: 80 },
                ],
            ),
            TrueSigma::TwoSquares | TrueSigma::FourSquares => (
                5e-5,
                vec![
                    LevelSpec { n_subdiv: 32, iters: 200 },
                    LevelSpec { n_subdiv: 64, iters: 80 },
                ],
            ),
            TrueSigma::Uniform(_) => unreachable!("catalog lookup never yields Uniform"),
        };
        Ok(Experiment {
            sigma0: true_sigma.background(),
            true_sigma,
            n_patterns: 10,
            epsilon: 0.0,
            alpha,
            lambda: 0.25,
            data_n: 128,
            schedule,
            seed: 1,
            n_electrodes: 16,
            elec_len: 0.125,
            contact_z: 1.0,
        })
    }

    /// Checks schedule sanity and the strict data/reconstruction mesh
    /// separation.
    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(Error::InvalidInput("empty reconstruction schedule".into()));
        }
        for spec in &self.schedule {
            if spec.n_subdiv >= self.data_n {
                return Err(Error::InvalidInput(format!(
                    "data mesh 1/{} must be strictly finer than reconstruction mesh 1/{}",
                    self.data_n, spec.n_subdiv
                )));
            }
            if spec.iters == 0 {
                return Err(Error::InvalidInput(format!(
                    "level 1/{} has a zero iteration budget",
                    spec.n_subdiv
                )));
            }
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::InvalidInput(format!(
                "box parameter {} outside (0, 1)",
                self.lambda
            )));
        }
        if self.alpha < 0.0 {
            return Err(Error::InvalidInput(format!(
                "negative regularization weight {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// The experiment's current patterns.
    pub fn patterns(&self) -> Vec<CurrentPattern> {
        synth_currents(self.n_electrodes, self.n_patterns)
    }

    /// Noise-free voltages of the ground truth on the fine data mesh.
    pub fn generate_data(&self) -> Result<Vec<Vec<f64>>> {
        let mesh = Mesh::uniform(self.data_n);
        let map = electrode_layout(&mesh, self.n_electrodes, self.elec_len)?;
        let model = ElectrodeModel::uniform_contact(map, self.contact_z);
        let truth = self.true_sigma.sample_field(&mesh, self.lambda);
        forward_map(&mesh, &model, &truth, &self.patterns())
    }
}

// ---------------------------------------------------------------------------
// Reconstruction driver
// ---------------------------------------------------------------------------

/// One objective/error sample along the iteration history.
#[derive(Debug, Clone, Copy)]
pub struct IterRecord {
    /// Schedule level index (0-based).
    pub level: usize,
    /// Mesh size at that level.
    pub h: f64,
    /// Outer iteration within the level (1-based).
    pub iter: usize,
    /// Objective `F = f + g`.
    pub value: f64,
    /// Relative `L^2` error against the ground truth.
    pub rel_err: Option<f64>,
}

/// Outcome of one schedule level.
#[derive(Debug, Clone)]
pub struct LevelResult {
    /// Mesh subdivisions.
    pub n_subdiv: usize,
    /// Mesh size.
    pub h: f64,
    /// Best-objective conductivity at this level.
    pub sigma: ConductivityField,
    /// Its relative `L^2` error against the ground truth.
    pub rel_err: Option<f64>,
    /// Per-iteration objective/error trace.
    pub records: Vec<IterRecord>,
}

/// A finished multi-level reconstruction.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// One entry per schedule level, coarse to fine.
    pub levels: Vec<LevelResult>,
}

impl Reconstruction {
    /// Reconstruction on the finest mesh.
    pub fn final_sigma(&self) -> &ConductivityField {
        &self.levels.last().expect("validated schedule is non-empty").sigma
    }

    /// All iteration records across levels, in execution order.
    pub fn records(&self) -> impl Iterator<Item = &IterRecord> {
        self.levels.iter().flat_map(|l| l.records.iter())
    }
}

/// Runs the full coarse-to-fine reconstruction described by `exp`.
///
/// Data are generated once on the fine mesh and perturbed per
/// [`add_noise`]; each level minimizes the regularized misfit from the
/// prolonged previous solution (the constant `sigma0` at the first level).
/// Fixed seeds make the whole run deterministic.
pub fn reconstruct(exp: &Experiment) -> Result<Reconstruction> {
    exp.validate()?;
    let patterns = exp.patterns();
    let data = exp.generate_data()?;
    let noisy = add_noise(&data, exp.epsilon, exp.seed);

    let mut levels: Vec<LevelResult> = Vec::with_capacity(exp.schedule.len());
    let mut carried: Option<(Mesh, ConductivityField)> = None;
    for (level, spec) in exp.schedule.iter().enumerate() {
        let mesh = Mesh::uniform(spec.n_subdiv);
        let map = electrode_layout(&mesh, exp.n_electrodes, exp.elec_len)?;
        let model = ElectrodeModel::uniform_contact(map, exp.contact_z);
        let start = match carried.take() {
            None => ConductivityField::constant(&mesh, exp.sigma0, exp.lambda),
            Some((coarse_mesh, coarse)) => prolong(&coarse, &coarse_mesh, &mesh)?,
        };
        let truth = exp.true_sigma.sample_field(&mesh, exp.lambda);
        let problem = MisfitProblem {
            mesh: &mesh,
            model: &model,
            patterns: &patterns,
            data: noisy.voltages.clone(),
        };

        // Momentum points may leave the box; evaluate the misfit on the
        // widened clamp so the solver always sees a valid conductivity.
        let wide = 0.01 * exp.lambda;
        let clamped_field = |x: &CellGrid| {
            let vals: Vec<f64> = x
                .to_field(&mesh)
                .iter()
                .map(|v| v.clamp(wide, 1.0 / wide))
                .collect();
            ConductivityField::new(vals, wide).expect("clamped values lie in the widened box")
        };
        let first_err: RefCell<Option<Error>> = RefCell::new(None);
        let f_eval = |x: &CellGrid| match problem.value(&clamped_field(x)) {
            Ok(v) => v,
            Err(e) => {
                first_err.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        };
        let grad_eval = |y: &CellGrid| match problem.value_and_gradient(&clamped_field(y)) {
            Ok((v, g)) => (v, CellGrid::from_field(&mesh, &g.values)),
            Err(e) => {
                first_err.borrow_mut().get_or_insert(e);
                (f64::NAN, CellGrid::zeros(mesh.n_subdiv, 2 * mesh.n_subdiv))
            }
        };

        let mut records = Vec::with_capacity(spec.iters);
        let observer = |it: &crate::fista::FistaIterate, x: &CellGrid| {
            let sigma = ConductivityField::new(x.to_field(&mesh), exp.lambda)
                .expect("prox output stays in the box");
            records.push(IterRecord {
                level,
                h: mesh.h,
                iter: it.k,
                value: it.value,
                rel_err: Some(relative_l2_error(&mesh, &sigma, &truth)),
            });
        };

        // The data misfit's curvature depends on mesh size, pattern count,
        // and voltage scale, and is typically far below 1. Seed the
        // backtracking line search well underneath any realistic value so
        // the first iteration's doublings discover the actual scale instead
        // of inheriting an over-cautious step size.
        let params = FistaParams::new(exp.alpha * mesh.h, exp.lambda)
            .with_max_iter(spec.iters)
            .with_l0(1e-8);
        let x0 = CellGrid::from_field(&mesh, &start.values);
        let result = match fista_minimize(f_eval, grad_eval, x0, &params, observer) {
            Ok(r) => r,
            Err(e) => return Err(first_err.borrow_mut().take().unwrap_or(e)),
        };

        let sigma = ConductivityField::new(result.x.to_field(&mesh), exp.lambda)
            .expect("best iterate stays in the box");
        let rel_err = Some(relative_l2_error(&mesh, &sigma, &truth));
        levels.push(LevelResult {
            n_subdiv: spec.n_subdiv,
            h: mesh.h,
            sigma: sigma.clone(),
            rel_err,
            records,
        });
        carried = Some((mesh, sigma));
    }
    Ok(Reconstruction { levels })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tv::tv_norm;
    use rand::{Rng, SeedableRng};

    // ---- patterns ----------------------------------------------------------

    #[test]
    fn test_synth_currents_zero_sum_unit_norm() {
        let patterns = synth_currents(16, 10);
        assert_eq!(patterns.len(), 10);
        for (i, p) in patterns.iter().enumerate() {
            let sum: f64 = p.0.iter().sum();
            let norm: f64 = p.0.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(sum.abs() < 1e-12, "pattern {i} sum {sum}");
            assert!((norm - 1.0).abs() < 1e-12, "pattern {i} norm {norm}");
        }
    }

    #[test]
    fn test_synth_currents_first_is_fundamental_sine() {
        let patterns = synth_currents(16, 10);
        let raw: Vec<f64> = (0..16).map(|l| (TAU * l as f64 / 16.0).sin()).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (l, (&got, &want)) in patterns[0].0.iter().zip(&raw).enumerate() {
            assert!(
                (got - want / norm).abs() < 1e-12,
                "electrode {l}: {got} vs {}",
                want / norm
            );
        }
    }

    #[test]
    fn test_synth_currents_linearly_independent() {
        let patterns = synth_currents(16, 10);
        let mat = nalgebra::DMatrix::from_fn(10, 16, |k, l| patterns[k].0[l]);
        let rank = mat.rank(1e-10);
        assert_eq!(rank, 10, "pattern family is rank-deficient");
    }

    #[test]
    #[should_panic(expected = "pattern count")]
    fn test_synth_currents_rejects_too_many() {
        synth_currents(16, 16);
    }

    // ---- noise -------------------------------------------------------------

    #[test]
    fn test_add_noise_zero_epsilon_unchanged() {
        let data = vec![vec![1.0, -0.5, -0.5], vec![0.25, 0.25, -0.5]];
        let noisy = add_noise(&data, 0.0, 99);
        assert_eq!(noisy.voltages, data);
    }

    #[test]
    fn test_add_noise_deterministic_in_seed() {
        let data = vec![vec![1.0, -1.0, 0.5, -0.5]; 3];
        let a = add_noise(&data, 0.01, 42);
        let b = add_noise(&data, 0.01, 42);
        let c = add_noise(&data, 0.01, 43);
        assert_eq!(a.voltages, b.voltages);
        assert_ne!(a.voltages, c.voltages);
    }

    #[test]
    fn test_add_noise_rows_recentered() {
        let data = vec![vec![2.0, -1.0, -1.0, 0.0]; 5];
        let noisy = add_noise(&data, 0.05, 7);
        for row in &noisy.voltages {
            let sum: f64 = row.iter().sum();
            assert!(sum.abs() < 1e-12, "row sum {sum}");
        }
    }

    #[test]
    fn test_add_noise_empirical_std() {
        // 10^4 perturbed entries; the per-entry deviation over max|U| has
        // standard deviation epsilon (minus the tiny centering correction).
        let row: Vec<f64> = (0..16).map(|l| if l % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let data = vec![row.clone(); 625];
        let eps = 0.01;
        let noisy = add_noise(&data, eps, 2024);
        let mut devs = Vec::with_capacity(10_000);
        for r in &noisy.voltages {
            for (a, b) in r.iter().zip(&row) {
                devs.push(a - b);
            }
        }
        let var = devs.iter().map(|d| d * d).sum::<f64>() / devs.len() as f64;
        let std = var.sqrt();
        assert!(
            (std / eps - 1.0).abs() < 0.05,
            "empirical std {std} vs epsilon {eps}"
        );
    }

    // ---- prolongation ------------------------------------------------------

    #[test]
    fn test_prolong_constant_stays_constant() {
        let coarse_mesh = Mesh::uniform(4);
        let fine_mesh = Mesh::uniform(16);
        let coarse = ConductivityField::constant(&coarse_mesh, 1.7, 0.25);
        let fine = prolong(&coarse, &coarse_mesh, &fine_mesh).unwrap();
        assert!(fine.values.iter().all(|&v| v == 1.7));
    }

    #[test]
    fn test_prolong_same_mesh_is_identity() {
        let mesh = Mesh::uniform(4);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..32).map(|_| rng.gen_range(0.3..3.0)).collect();
        let field = ConductivityField::new(values.clone(), 0.25).unwrap();
        let out = prolong(&field, &mesh, &Mesh::uniform(4)).unwrap();
        assert_eq!(out.values, values);
    }

    #[test]
    fn test_prolong_preserves_total_variation() {
        // Jumps of the injected field live only on coarse edges, and each
        // coarse edge is tiled by fine edges of the same total length.
        let coarse_mesh = Mesh::uniform(4);
        let fine_mesh = Mesh::uniform(8);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..32).map(|_| rng.gen_range(0.3..3.0)).collect();
        let coarse = ConductivityField::new(values, 0.25).unwrap();
        let fine = prolong(&coarse, &coarse_mesh, &fine_mesh).unwrap();
        let tv_c = tv_norm(&coarse_mesh, &coarse);
        let tv_f = tv_norm(&fine_mesh, &fine);
        assert!(
            (tv_c - tv_f).abs() < 1e-13 * tv_c,
            "coarse tv {tv_c} vs fine tv {tv_f}"
        );
    }

    #[test]
    fn test_prolong_restrict_roundtrip() {
        // Averaging the four fine triangles inside each coarse one recovers
        // the coarse field exactly.
        let coarse_mesh = Mesh::uniform(4);
        let fine_mesh = Mesh::uniform(8);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        let values: Vec<f64> = (0..32).map(|_| rng.gen_range(0.3..3.0)).collect();
        let coarse = ConductivityField::new(values.clone(), 0.25).unwrap();
        let fine = prolong(&coarse, &coarse_mesh, &fine_mesh).unwrap();
        let mut sums = vec![0.0; 32];
        let mut counts = vec![0usize; 32];
        for t in 0..fine_mesh.triangles.len() {
            let (fy, fx, upper) = fine_mesh.tri_cell(t);
            let (a, b) = (fx % 2, fy % 2);
            let coarse_lower = if upper { a > b } else { a >= b };
            let ct = coarse_mesh.tri_at(fy / 2, fx / 2, !coarse_lower);
            sums[ct] += fine.values[t];
            counts[ct] += 1;
        }
        for (ct, (&s, &n)) in sums.iter().zip(&counts).enumerate() {
            assert_eq!(n, 4, "coarse triangle {ct} covered by {n} fine ones");
            assert_eq!(s / 4.0, values[ct], "coarse triangle {ct}");
        }
    }

    #[test]
    fn test_prolong_rejects_non_nested() {
        let coarse_mesh = Mesh::uniform(4);
        let fine_mesh = Mesh::uniform(6);
        let coarse = ConductivityField::constant(&coarse_mesh, 1.0, 0.25);
        let err = prolong(&coarse, &coarse_mesh, &fine_mesh).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "got {err:?}");
    }

    // ---- diagnostics -------------------------------------------------------

    #[test]
    fn test_relative_l2_error_basics() {
        let mesh = Mesh::uniform(4);
        let ones = ConductivityField::constant(&mesh, 1.0, 0.25);
        assert_eq!(relative_l2_error(&mesh, &ones, &ones), 0.0);
        // One triangle off by delta against a unit background: the squared
        // error is area * delta^2 over total area 1.
        let mut bumped = ones.clone();
        bumped.values[5] += 0.5;
        let expect = (mesh.area(5) * 0.25f64).sqrt();
        let got = relative_l2_error(&mesh, &bumped, &ones);
        assert!((got - expect).abs() < 1e-14, "{got} vs {expect}");
    }

    #[test]
    fn test_component_counts_on_phantoms() {
        let mesh = Mesh::uniform(32);
        let two = TrueSigma::TwoSquares.sample_field(&mesh, 0.25);
        let four = TrueSigma::FourSquares.sample_field(&mesh, 0.25);
        assert_eq!(count_components_above(&mesh, &two, 1.5), 2);
        assert_eq!(count_components_above(&mesh, &four, 1.5), 4);
        // Threshold above the contrast finds nothing.
        assert_eq!(count_components_above(&mesh, &two, 2.5), 0);
    }

    #[test]
    fn test_half_contrast_threshold_is_midpoint() {
        let mesh = Mesh::uniform(16);
        // Phantom peaks at 2 on background 1: midpoint is exactly 1.5.
        let two = TrueSigma::TwoSquares.sample_field(&mesh, 0.25);
        assert_eq!(half_contrast_threshold(&two, 1.0), 1.5);
        // A damped reconstruction peaking at 1.4 cuts at 1.2.
        let damped = ConductivityField::new(
            two.values.iter().map(|v| 1.0 + 0.4 * (v - 1.0)).collect(),
            0.25,
        )
        .unwrap();
        let got = half_contrast_threshold(&damped, 1.0);
        assert!((got - 1.2).abs() < 1e-12, "threshold {got} not at 1.2");
        assert_eq!(count_components_above(&mesh, &damped, got), 2);
    }

    #[test]
    fn test_top_decile_centroid_tracks_blob() {
        let mesh = Mesh::uniform(32);
        let blob = TrueSigma::GaussianBlob.sample_field(&mesh, 0.25);
        let c = top_decile_centroid(&mesh, &blob);
        assert!(
            (c[0] - 0.6).abs() < 0.05 && (c[1] - 0.6).abs() < 0.05,
            "centroid {c:?} far from the blob center"
        );
    }

    // ---- experiments -------------------------------------------------------

    #[test]
    fn test_presets_cover_catalog() {
        for name in ["linear_ramp", "gaussian_blob", "two_squares", "four_squares"] {
            let exp = Experiment::preset(name).unwrap();
            exp.validate().unwrap();
            assert_eq!(exp.true_sigma.name(), name);
            assert_eq!(exp.sigma0, exp.true_sigma.background());
            assert_eq!(exp.data_n, 128);
        }
        assert!(Experiment::preset("swirl").is_err());
    }

    #[test]
    fn test_validate_rejects_inverse_crime() {
        let mut exp = Experiment::preset("linear_ramp").unwrap();
        exp.data_n = 64;
        let err = exp.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("finer"), "message: {msg}");
    }

    #[test]
    fn test_reconstruct_nothing_to_recover() {
        // Truth equals the initial guess: the only residual is the coarse
        // model's own discretization gap against the fine data, and fitting
        // it may move sigma by at most a small model-bias drift (measured
        // ~3% for the 1/16-model-vs-1/64-data pair; halves per mesh
        // refinement).
        let exp = Experiment {
            true_sigma: TrueSigma::Uniform(1.0),
            sigma0: 1.0,
            n_patterns: 4,
            epsilon: 0.0,
            alpha: 1e-4,
            lambda: 0.25,
            data_n: 64,
            schedule: vec![LevelSpec { n_subdiv: 16, iters: 5 }],
            seed: 3,
            n_electrodes: 16,
            elec_len: 0.125,
            contact_z: 1.0,
        };
        let rec = reconstruct(&exp).unwrap();
        let level = &rec.levels[0];
        assert!(
            level.rel_err.unwrap() < 0.04,
            "drifted to error {}",
            level.rel_err.unwrap()
        );
        assert!(level
            .sigma
            .values
            .iter()
            .all(|&v| (0.25..=4.0).contains(&v)));
        // Objective history: the best-so-far envelope never rises.
        let mut best = f64::INFINITY;
        for r in &level.records {
            assert!(r.value <= best || r.value >= best, "non-finite objective");
            best = best.min(r.value);
        }
        assert!(level.records.len() == 5);
    }

    #[test]
    fn test_reconstruct_two_level_schedule() {
        let exp = Experiment {
            true_sigma: TrueSigma::LinearRamp,
            sigma0: 0.5,
            n_patterns: 4,
            epsilon: 0.001,
            alpha: 1e-5,
            lambda: 0.25,
            data_n: 32,
            schedule: vec![
                LevelSpec { n_subdiv: 8, iters: 3 },
                LevelSpec { n_subdiv: 16, iters: 3 },
            ],
            seed: 17,
            n_electrodes: 16,
            elec_len: 0.125,
            contact_z: 1.0,
        };
        let rec = reconstruct(&exp).unwrap();
        assert_eq!(rec.levels.len(), 2);
        assert_eq!(rec.levels[0].records.len(), 3);
        assert_eq!(rec.levels[1].records.len(), 3);
        assert_eq!(rec.final_sigma().values.len(), 2 * 16 * 16);
        for (i, r) in rec.records().enumerate() {
            assert_eq!(r.level, if i < 3 { 0 } else { 1 });
            assert!(r.rel_err.is_some());
        }
        // Starting from the background, iterating reduces the error.
        let start_err = rec.levels[0].records[0].rel_err.unwrap();
        let final_err = rec.levels[1].rel_err.unwrap();
        assert!(
            final_err <= start_err,
            "error went {start_err} -> {final_err}"
        );
    }

    #[test]
    fn test_reconstruct_deterministic() {
        let exp = Experiment {
            true_sigma: TrueSigma::GaussianBlob,
            sigma0: 1.0,
            n_patterns: 3,
            epsilon: 0.01,
            alpha: 1e-5,
            lambda: 0.25,
            data_n: 16,
            schedule: vec![LevelSpec { n_subdiv: 8, iters: 2 }],
            seed: 5,
            n_electrodes: 16,
            elec_len: 0.125,
            contact_z: 1.0,
        };
        let a = reconstruct(&exp).unwrap();
        let b = reconstruct(&exp).unwrap();
        assert_eq!(a.final_sigma().values, b.final_sigma().values);
    }
}
