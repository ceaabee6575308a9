//! Weak Galerkin discretization of the complete electrode model.
//!
//! The continuous model drives a current pattern `I` through `L` boundary
//! electrodes with contact impedances `z_l` and measures electrode voltages:
//! conduction `-div(sigma grad u) = 0` inside, Robin coupling
//! `u + z_l sigma du/dn = U_l` on each electrode, prescribed total current
//! through each electrode, and zero flux on the gaps. Currents and voltages
//! are zero-sum vectors.
//!
//! Discrete unknowns are ordered `[interior | traces | voltages]`:
//!
//! * 3 interior coefficients per triangle (discontinuous linears),
//! * one trace value per edge,
//! * `L - 1` voltage coefficients in an orthonormal zero-sum basis, which
//!   keeps the system symmetric positive definite.
//!
//! The bilinear form is `a_s = (sigma grad_w u, grad_w v) + sum_l z_l^{-1}
//! <u_b - U_l, v_b - V_l>_{e_l} + s(u, v)` with the stabilizer `s` from
//! [`crate::wg`]. Two representations are assembled side by side:
//!
//! * the **full** sparse matrix over all unknowns, kept for residual
//!   certificates and iterative solves;
//! * a **condensed** system over traces and voltages only. Interior unknowns
//!   couple to nothing but their own element's traces (through `s`), and for
//!   this element the elimination is exact and structure-free: the local
//!   trace-midpoint matrix `R` is invertible, the Schur complement of the
//!   stabilizer block vanishes identically, and interior recovery reduces to
//!   `u_0 = R^{-1} u_b + K_II^{-1} b_0`. What remains is banded (edge
//!   numbering keeps element neighborhoods contiguous) plus `L - 1` dense
//!   border columns, factorized by [`crate::solver::BorderedSpd`].
//!
//! Every solve reports its relative residual against the full matrix, so the
//! condensation algebra is certified on each call rather than trusted.

use rayon::prelude::*;

use crate::mesh::{ElectrodeMap, Mesh};
use crate::solver::{BorderedFactor, BorderedSpd, Csr, ZeroSumBasis};
use crate::wg::WgField;
use crate::{quad, Error, Result};

/// Relative residual ceiling certified by every successful solve.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Inverse of the local edge-midpoint matrix `R` (midpoints of a linear from
/// vertex values). Constant across elements because it never sees geometry.
const R_INV: [[f64; 3]; 3] = [[1.0, -1.0, 1.0], [1.0, 1.0, -1.0], [-1.0, 1.0, 1.0]];

// ---------------------------------------------------------------------------
// Model types
// ---------------------------------------------------------------------------

/// Electrode layout plus per-electrode contact impedances.
#[derive(Debug, Clone)]
pub struct ElectrodeModel {
    /// Geometric placement.
    pub map: ElectrodeMap,
    /// Contact impedances, all positive.
    pub z: Vec<f64>,
}

impl ElectrodeModel {
    /// Validates one impedance per electrode, all positive.
    pub fn new(map: ElectrodeMap, z: Vec<f64>) -> Result<ElectrodeModel> {
        if z.len() != map.n_electrodes {
            return Err(Error::InvalidInput(format!(
                "{} impedances for {} electrodes",
                z.len(),
                map.n_electrodes
            )));
        }
        if let Some(bad) = z.iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "contact impedance must be positive, got {bad}"
            )));
        }
        Ok(ElectrodeModel { map, z })
    }

    /// All electrodes share the contact impedance `z`.
    pub fn uniform_contact(map: ElectrodeMap, z: f64) -> ElectrodeModel {
        let l = map.n_electrodes;
        ElectrodeModel::new(map, vec![z; l]).expect("positive uniform impedance")
    }

    /// Electrode count.
    pub fn n_electrodes(&self) -> usize {
        self.map.n_electrodes
    }
}

/// A zero-sum current pattern.
#[derive(Debug, Clone)]
pub struct CurrentPattern(pub Vec<f64>);

impl CurrentPattern {
    /// Validates charge conservation: the entries must sum to zero relative
    /// to their magnitude.
    pub fn new(i: Vec<f64>) -> Result<CurrentPattern> {
        let sum: f64 = i.iter().sum();
        let scale = i.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        if sum.abs() > 1e-12 * scale.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "current pattern must be zero-sum, sums to {sum:.3e}"
            )));
        }
        Ok(CurrentPattern(i))
    }

    /// Re-centers an arbitrary vector onto the zero-sum subspace.
    pub fn centered(mut i: Vec<f64>) -> CurrentPattern {
        let mean = i.iter().sum::<f64>() / i.len() as f64;
        i.iter_mut().for_each(|v| *v -= mean);
        CurrentPattern(i)
    }
}

/// Piecewise-constant conductivity confined to the box `[lambda, 1/lambda]`.
#[derive(Debug, Clone)]
pub struct ConductivityField {
    /// One value per triangle.
    pub values: Vec<f64>,
    /// Box parameter in `(0, 1)`.
    pub lambda: f64,
}

impl ConductivityField {
    /// Validates the box constraint on every element.
    pub fn new(values: Vec<f64>, lambda: f64) -> Result<ConductivityField> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidInput(format!(
                "box parameter must lie in (0,1), got {lambda}"
            )));
        }
        if let Some((t, &v)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v >= lambda && v <= 1.0 / lambda))
        {
            return Err(Error::InvalidInput(format!(
                "conductivity {v} on element {t} outside [{lambda}, {}]",
                1.0 / lambda
            )));
        }
        Ok(ConductivityField { values, lambda })
    }

    /// Homogeneous field.
    pub fn constant(mesh: &Mesh, value: f64, lambda: f64) -> ConductivityField {
        ConductivityField::new(vec![value; mesh.triangles.len()], lambda)
            .expect("constant inside the box")
    }

    /// Samples `f` at element centroids, clamping into the box.
    pub fn sample(mesh: &Mesh, lambda: f64, f: impl Fn(f64, f64) -> f64) -> ConductivityField {
        let values = (0..mesh.triangles.len())
            .map(|t| {
                let c = mesh.centroid(t);
                f(c[0], c[1]).clamp(lambda, 1.0 / lambda)
            })
            .collect();
        ConductivityField { values, lambda }
    }

    /// Panics unless the field has one value per mesh triangle.
    pub fn assert_conforms(&self, mesh: &Mesh) {
        assert_eq!(
            self.values.len(),
            mesh.triangles.len(),
            "conductivity has {} values for {} triangles",
            self.values.len(),
            mesh.triangles.len()
        );
    }
}

/// Result of one forward solve.
#[derive(Debug, Clone)]
pub struct ForwardSolution {
    /// Potential as a weak function.
    pub u: WgField,
    /// Electrode voltages, zero-sum.
    pub voltages: Vec<f64>,
    /// Relative residual of the full linear system at the returned solution.
    pub residual: f64,
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

/// How linear systems are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStrategy {
    /// Direct when the factorization fits comfortably in memory, else PCG.
    Auto,
    /// Banded-plus-border Cholesky on the condensed system.
    Direct,
    /// Jacobi-preconditioned conjugate gradients on the full system.
    Pcg,
}

/// Assembled discretization: full and condensed representations plus the
/// per-element data needed to restore eliminated interior unknowns.
pub struct LinearSystem {
    /// Triangle count.
    pub n_tri: usize,
    /// Edge (trace unknown) count.
    pub n_edge: usize,
    /// Voltage coefficient count `L - 1`.
    pub n_volt: usize,
    /// Zero-sum voltage basis.
    pub basis: ZeroSumBasis,
    /// Full sparse matrix over `[interior | traces | voltages]`.
    pub full: Csr,
    cond: BorderedSpd,
    /// Per element: `K_II^{-1}` of the stabilizer interior block.
    kii_inv: Vec<[[f64; 3]; 3]>,
    /// Per element: its three edge indices (copied out of the mesh so that
    /// solves need no mesh reference).
    tri_edges: Vec<[usize; 3]>,
    strategy: SolveStrategy,
}

/// Either a reusable direct factorization or the marker that solves should
/// iterate on the full matrix.
pub enum Factorization {
    /// Cholesky factors of the condensed system.
    Direct(BorderedFactor),
    /// No factorization; solve by PCG.
    Iterative,
}

/// Builds the full and condensed systems for `a_s` at the given conductivity.
///
/// The result is symmetric positive definite; symmetry is exact by
/// construction (each off-diagonal entry is pushed in both orientations from
/// the same product) and definiteness follows from the uniqueness argument
/// for the scheme (checked by factorization pivots at solve time).
pub fn assemble(mesh: &Mesh, model: &ElectrodeModel, sigma: &ConductivityField) -> LinearSystem {
    sigma.assert_conforms(mesh);
    assert_eq!(
        model.map.edge_assignment.len(),
        mesh.edges.len(),
        "electrode map was built for a different mesh"
    );
    let n_tri = mesh.triangles.len();
    let n_edge = mesh.edges.len();
    let l = model.n_electrodes();
    let n_volt = l - 1;
    let basis = ZeroSumBasis::new(l);
    let (t0, w0) = (3 * n_tri, 3 * n_tri + n_edge);

    // Bandwidth of the condensed trace block: widest edge-index window of
    // any single element (electrode terms are edge-diagonal).
    let bw = mesh
        .tri_edges
        .iter()
        .map(|e| e.iter().max().unwrap() - e.iter().min().unwrap())
        .max()
        .unwrap_or(0);

    let mut cond = BorderedSpd::zeros(n_edge, bw, n_volt);
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(45 * n_tri + 40 * l);
    let mut kii_inv = Vec::with_capacity(n_tri);

    for t in 0..n_tri {
        let area = mesh.area(t);
        let h_t = mesh.h_t(t);
        let sig = sigma.values[t];
        let le = mesh.tri_edges[t];
        let lens = [
            mesh.edges[le[0]].length,
            mesh.edges[le[1]].length,
            mesh.edges[le[2]].length,
        ];
        let g: [[f64; 2]; 3] = std::array::from_fn(|k| mesh.scaled_normal(t, k));

        // Weak-gradient energy couples only traces:
        // (sigma grad_w u, grad_w v)_T = sigma/|T| * (sum u_e g_e).(sum v_f g_f).
        for k in 0..3 {
            for k2 in 0..3 {
                let v = sig * (g[k][0] * g[k2][0] + g[k][1] * g[k2][1]) / area;
                trip.push((t0 + le[k], t0 + le[k2], v));
                if le[k] >= le[k2] {
                    cond.band.add(le[k], le[k2], v);
                }
            }
        }

        // Stabilizer: h_T^{-1} |e_k| (mid_k(u0) - ub_k)(mid_k(v0) - vb_k),
        // with mid_k = (a_k + a_{k+1})/2. Expanded entry by entry. Its exact
        // Schur complement onto the traces is zero, so the condensed system
        // receives nothing here.
        for k in 0..3 {
            let w = lens[k] / h_t;
            let ia = 3 * t + k;
            let ib = 3 * t + (k + 1) % 3;
            let be = t0 + le[k];
            trip.push((ia, ia, 0.25 * w));
            trip.push((ib, ib, 0.25 * w));
            trip.push((ia, ib, 0.25 * w));
            trip.push((ib, ia, 0.25 * w));
            trip.push((ia, be, -0.5 * w));
            trip.push((be, ia, -0.5 * w));
            trip.push((ib, be, -0.5 * w));
            trip.push((be, ib, -0.5 * w));
            trip.push((be, be, w));
        }

        // K_II^{-1} = h_T R^{-1} D^{-1} R^{-T} for interior recovery.
        let mut inv = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += R_INV[i][k] * R_INV[j][k] / lens[k];
                }
                inv[i][j] = h_t * acc;
            }
        }
        kii_inv.push(inv);
    }

    // Electrode coupling: z_l^{-1} <u_b - U_l, v_b - V_l>_{e_l} with
    // U = B w expanded over the zero-sum basis.
    for (le, edges) in model.map.electrode_edges.iter().enumerate() {
        let z_inv = 1.0 / model.z[le];
        let mut covered = 0.0;
        for &e in edges {
            let len = mesh.edges[e].length;
            covered += len;
            trip.push((t0 + e, t0 + e, z_inv * len));
            cond.band.add(e, e, z_inv * len);
            for j in 0..n_volt {
                let b = basis.entry(le, j);
                if b == 0.0 {
                    continue;
                }
                trip.push((t0 + e, w0 + j, -z_inv * len * b));
                trip.push((w0 + j, t0 + e, -z_inv * len * b));
                cond.add_border(e, j, -z_inv * len * b);
            }
        }
        for j in 0..n_volt {
            let bj = basis.entry(le, j);
            if bj == 0.0 {
                continue;
            }
            for j2 in 0..n_volt {
                let b2 = basis.entry(le, j2);
                if b2 == 0.0 {
                    continue;
                }
                trip.push((w0 + j, w0 + j2, z_inv * covered * bj * b2));
                cond.add_corner(j, j2, z_inv * covered * bj * b2);
            }
        }
    }

    LinearSystem {
        n_tri,
        n_edge,
        n_volt,
        basis,
        full: Csr::from_triplets(w0 + n_volt, &trip),
        cond,
        kii_inv,
        tri_edges: mesh.tri_edges.clone(),
        strategy: SolveStrategy::Auto,
    }
}

impl LinearSystem {
    /// Total unknown count `3 * tris + edges + (L - 1)`.
    pub fn dim(&self) -> usize {
        3 * self.n_tri + self.n_edge + self.n_volt
    }

    /// Overrides the solve strategy (the default resolves to direct
    /// factorization whenever it fits in memory).
    pub fn with_strategy(mut self, strategy: SolveStrategy) -> LinearSystem {
        self.strategy = strategy;
        self
    }

    fn effective_strategy(&self) -> SolveStrategy {
        match self.strategy {
            SolveStrategy::Auto => {
                // The banded factor is the memory hog; cap it at 2 GiB.
                let bytes = crate::solver::BandedSpd::storage_bytes(
                    self.n_edge,
                    self.cond.band.bw,
                );
                if bytes <= 2 << 30 {
                    SolveStrategy::Direct
                } else {
                    SolveStrategy::Pcg
                }
            }
            s => s,
        }
    }

    /// Prepares the system for repeated solves.
    pub fn factorize(&self) -> Result<Factorization> {
        match self.effective_strategy() {
            SolveStrategy::Pcg => Ok(Factorization::Iterative),
            _ => Ok(Factorization::Direct(self.cond.clone().factorize()?)),
        }
    }

    /// Relative residual of the full system.
    pub fn residual(&self, x: &[f64], b: &[f64]) -> f64 {
        self.full.residual_rel(x, b)
    }
}

// ---------------------------------------------------------------------------
// Loads and solves
// ---------------------------------------------------------------------------

/// Element-wise volume load: moments `(f, psi_i)_T` of a source against the
/// three interior basis functions of each triangle.
#[derive(Debug, Clone)]
pub struct ElementLoads(pub Vec<[f64; 3]>);

/// Integrates a source `f` into element moments with the degree-6 rule
/// (manufactured sources are far from polynomial).
pub fn volume_loads(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> ElementLoads {
    ElementLoads(
        (0..mesh.triangles.len())
            .map(|t| {
                let v = mesh.tri_vertices(t);
                std::array::from_fn(|i| {
                    quad::tri_deg6(&v, |x, y| {
                        let b = barycentric(&v, x, y);
                        f(x, y) * b[i]
                    })
                })
            })
            .collect(),
    )
}

/// Barycentric coordinates in a CCW triangle.
fn barycentric(v: &[[f64; 2]; 3], x: f64, y: f64) -> [f64; 3] {
    let area2 = 2.0 * quad::triangle_area(v);
    let part = |a: [f64; 2], b: [f64; 2]| {
        ((b[0] - a[0]) * (y - a[1]) - (x - a[0]) * (b[1] - a[1])) / area2
    };
    [part(v[1], v[2]), part(v[2], v[0]), part(v[0], v[1])]
}

/// Fully general right-hand side: interior moments, per-edge trace loads,
/// and the electrode current functional.
#[derive(Debug, Clone)]
pub struct GeneralLoad {
    /// Moments against each element's interior basis (empty means zero).
    pub interior: Vec<[f64; 3]>,
    /// Load paired with each edge trace (empty means zero).
    pub traces: Vec<f64>,
    /// Electrode current functional `sum_l I_l V_l`; only its zero-sum part
    /// can act on zero-sum voltages.
    pub currents: Vec<f64>,
}

impl GeneralLoad {
    /// Pure current drive.
    pub fn from_currents(i: &[f64]) -> GeneralLoad {
        GeneralLoad {
            interior: Vec::new(),
            traces: Vec::new(),
            currents: i.to_vec(),
        }
    }
}

/// Solves `a_s(u, v) = load(v)` and certifies the residual on the full
/// system.
pub fn solve_with_load(
    sys: &LinearSystem,
    factor: &Factorization,
    load: &GeneralLoad,
) -> Result<ForwardSolution> {
    let (n_tri, n_edge, n_volt) = (sys.n_tri, sys.n_edge, sys.n_volt);
    let (t0, w0) = (3 * n_tri, 3 * n_tri + n_edge);
    if !load.interior.is_empty() {
        assert_eq!(load.interior.len(), n_tri, "interior load length");
    }
    if !load.traces.is_empty() {
        assert_eq!(load.traces.len(), n_edge, "trace load length");
    }
    assert_eq!(load.currents.len(), n_volt + 1, "one current per electrode");

    // Full right-hand side (kept for the residual certificate).
    let mut b = vec![0.0; sys.dim()];
    for (t, m) in load.interior.iter().enumerate() {
        b[3 * t] = m[0];
        b[3 * t + 1] = m[1];
        b[3 * t + 2] = m[2];
    }
    for (e, v) in load.traces.iter().enumerate() {
        b[t0 + e] = *v;
    }
    let bw = sys.basis.apply_t(&load.currents);
    b[w0..].copy_from_slice(&bw);

    let x = match factor {
        Factorization::Direct(f) => {
            // Condense: fold interior moments onto the traces with R^{-T},
            // solve the trace/voltage system, then restore interiors via
            // u_0 = R^{-1} u_b + K_II^{-1} b_0.
            let mut rhs = vec![0.0; n_edge + n_volt];
            for e in 0..n_edge {
                rhs[e] = b[t0 + e];
            }
            if !load.interior.is_empty() {
                for (t, m) in load.interior.iter().enumerate() {
                    let le = sys.tri_edges[t];
                    for k in 0..3 {
                        let mut acc = 0.0;
                        for i in 0..3 {
                            acc += R_INV[i][k] * m[i];
                        }
                        rhs[le[k]] += acc;
                    }
                }
            }
            rhs[n_edge..].copy_from_slice(&bw);
            f.solve(&mut rhs);

            let mut x = vec![0.0; sys.dim()];
            for t in 0..n_tri {
                let le = sys.tri_edges[t];
                let ub = [rhs[le[0]], rhs[le[1]], rhs[le[2]]];
                for i in 0..3 {
                    let mut v = R_INV[i][0] * ub[0] + R_INV[i][1] * ub[1] + R_INV[i][2] * ub[2];
                    if !load.interior.is_empty() {
                        let m = &load.interior[t];
                        let inv = &sys.kii_inv[t];
                        v += inv[i][0] * m[0] + inv[i][1] * m[1] + inv[i][2] * m[2];
                    }
                    x[3 * t + i] = v;
                }
            }
            for e in 0..n_edge {
                x[t0 + e] = rhs[e];
            }
            x[w0..].copy_from_slice(&rhs[n_edge..]);
            x
        }
        Factorization::Iterative => {
            let diag = sys.full.diagonal();
            let max_iter = 40 * sys.dim();
            let (x, _iters) = crate::solver::pcg(&sys.full, &b, &diag, 1e-12, max_iter)?;
            x
        }
    };

    let residual = sys.residual(&x, &b);
    if !(residual <= RESIDUAL_TOL) {
        return Err(Error::NoConvergence {
            solver: "forward",
            iters: 1,
            residual,
        });
    }

    let w = &x[w0..];
    let voltages = sys.basis.apply(w);
    debug_assert!(voltages.iter().sum::<f64>().abs() < 1e-12);
    let u = WgField {
        interior: (0..n_tri)
            .map(|t| [x[3 * t], x[3 * t + 1], x[3 * t + 2]])
            .collect(),
        traces: x[t0..w0].to_vec(),
    };
    Ok(ForwardSolution {
        u,
        voltages,
        residual,
    })
}

/// Standard forward solve: drive `pattern`, optionally with a volume source.
pub fn solve_forward(
    sys: &LinearSystem,
    factor: &Factorization,
    pattern: &CurrentPattern,
    source: Option<&ElementLoads>,
) -> Result<ForwardSolution> {
    let load = GeneralLoad {
        interior: source.map(|s| s.0.clone()).unwrap_or_default(),
        traces: Vec::new(),
        currents: pattern.0.clone(),
    };
    solve_with_load(sys, factor, &load)
}

/// Solves all `patterns` against one assembly/factorization; returns the
/// `K x L` matrix of electrode voltages, one row per pattern.
pub fn forward_map(
    mesh: &Mesh,
    model: &ElectrodeModel,
    sigma: &ConductivityField,
    patterns: &[CurrentPattern],
) -> Result<Vec<Vec<f64>>> {
    let sys = assemble(mesh, model, sigma);
    let factor = sys.factorize()?;
    patterns
        .par_iter()
        .map(|p| solve_forward(&sys, &factor, p, None).map(|s| s.voltages))
        .collect()
}

// ---------------------------------------------------------------------------
// Manufactured solutions
// ---------------------------------------------------------------------------

/// A smooth reference solution with the data that makes the discrete scheme
/// reproduce it: volume source, gap fluxes, electrode residuals, currents.
pub struct Manufactured {
    /// Reference potential.
    pub u: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    /// Its gradient.
    pub grad_u: Box<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>,
    /// Volume source `-div(sigma grad u)` (unit conductivity here).
    pub source: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl Manufactured {
    /// Radial bump supported strictly inside the square, normalized to unit
    /// height: `u = exp(4 - 1/(1/4 - r^2))` for `r < 1/2` around the center,
    /// extended by zero. All derivatives vanish on the boundary, so the
    /// electrode data are exactly zero and only the volume source drives the
    /// problem.
    pub fn bump() -> Manufactured {
        let s_of = |x: f64, y: f64| (x - 0.5).powi(2) + (y - 0.5).powi(2);
        let u_of = move |x: f64, y: f64| {
            let w = 0.25 - s_of(x, y);
            if w > 1e-3 {
                (4.0 - 1.0 / w).exp()
            } else {
                0.0
            }
        };
        Manufactured {
            u: Box::new(u_of),
            grad_u: Box::new(move |x, y| {
                let w = 0.25 - s_of(x, y);
                if w > 1e-3 {
                    let du_ds = -u_of(x, y) / (w * w);
                    [2.0 * (x - 0.5) * du_ds, 2.0 * (y - 0.5) * du_ds]
                } else {
                    [0.0, 0.0]
                }
            }),
            source: Box::new(move |x, y| {
                let s = s_of(x, y);
                let w = 0.25 - s;
                if w > 1e-3 {
                    u_of(x, y) * (4.0 / (w * w) + 8.0 * s / w.powi(3) - 4.0 * s / w.powi(4))
                } else {
                    0.0
                }
            }),
        }
    }

    /// Affine reference `u = a x + b y + c`; the discrete scheme reproduces
    /// it exactly, which pins the whole load construction to roundoff.
    pub fn linear(a: f64, b: f64, c: f64) -> Manufactured {
        Manufactured {
            u: Box::new(move |x, y| a * x + b * y + c),
            grad_u: Box::new(move |_, _| [a, b]),
            source: Box::new(|_, _| 0.0),
        }
    }

    /// Builds the discrete load and exact reference data on a given mesh.
    ///
    /// The electrode voltage attached to the reference is the electrode
    /// average of `u + z sigma du/dn`; the whole reference is then shifted
    /// by a common constant so the voltages are zero-sum (the model only
    /// determines potentials up to that constant).
    pub fn setup(&self, mesh: &Mesh, model: &ElectrodeModel) -> ManufacturedSetup<'_> {
        let map = &model.map;
        let l = model.n_electrodes();
        // Outward flux sigma du/dn integrated over each boundary edge, and
        // the per-electrode averages of u + z * flux density.
        let mut trace_loads = vec![0.0; mesh.edges.len()];
        let mut raw_voltages = vec![0.0; l];
        let mut currents = vec![0.0; l];
        for e in mesh.boundary_edges() {
            let t = mesh.edges[e].tris[0].expect("boundary edge has an element");
            let k = mesh.tri_edges[t]
                .iter()
                .position(|&le| le == e)
                .expect("edge listed by its element");
            let sn = mesh.scaled_normal(t, k);
            let len = mesh.edges[e].length;
            let n = [sn[0] / len, sn[1] / len];
            let [a, b] = mesh.edges[e].v;
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            let flux = |x: f64, y: f64| {
                let g = (self.grad_u)(x, y);
                g[0] * n[0] + g[1] * n[1]
            };
            let flux_int = quad::edge_gauss3(pa, pb, flux);
            match map.edge_assignment[e] {
                crate::mesh::EdgeKind::Gap => {
                    // <flux, v_b> lands on the trace unknown.
                    trace_loads[e] += flux_int;
                }
                crate::mesh::EdgeKind::Electrode(le) => {
                    currents[le] += flux_int;
                    let z = model.z[le];
                    let robin_int =
                        quad::edge_gauss3(pa, pb, |x, y| (self.u)(x, y) + z * flux(x, y));
                    raw_voltages[le] += robin_int;
                    // The mean-free Robin residual z^{-1}<u + z flux - U_l, v_b>
                    // is finished below once U_l is known.
                    trace_loads[e] += robin_int / z;
                }
                crate::mesh::EdgeKind::Interior => unreachable!("boundary edge"),
            }
        }
        for le in 0..l {
            raw_voltages[le] /= map.elec_len;
        }
        // Subtract z^{-1} U_l |e| from each electrode edge's accumulated
        // Robin integral to finish <u + z flux - U_l, v_b>.
        for (le, edges) in map.electrode_edges.iter().enumerate() {
            for &e in edges {
                trace_loads[e] -= raw_voltages[le] * mesh.edges[e].length / model.z[le];
            }
        }
        let shift = raw_voltages.iter().sum::<f64>() / l as f64;
        let voltages: Vec<f64> = raw_voltages.iter().map(|v| v - shift).collect();
        let interior = {
            let ElementLoads(m) = volume_loads(mesh, &self.source);
            m
        };
        ManufacturedSetup {
            case: self,
            shift,
            load: GeneralLoad {
                interior,
                traces: trace_loads,
                currents,
            },
            voltages,
        }
    }
}

/// Mesh-specific load and reference data produced by [`Manufactured::setup`].
pub struct ManufacturedSetup<'a> {
    case: &'a Manufactured,
    shift: f64,
    /// Discrete right-hand side.
    pub load: GeneralLoad,
    /// Zero-sum reference voltages.
    pub voltages: Vec<f64>,
}

impl ManufacturedSetup<'_> {
    /// The reference potential in the same zero-sum normalization as the
    /// discrete solution.
    pub fn exact_u(&self, x: f64, y: f64) -> f64 {
        (self.case.u)(x, y) - self.shift
    }
}

// ---------------------------------------------------------------------------
// Convergence study
// ---------------------------------------------------------------------------

/// One row of a convergence table.
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    /// Mesh size.
    pub h: f64,
    /// `L^2` error of the interior potential against the projected reference.
    pub err_u: f64,
    /// Observed order from the previous row, if any.
    pub order_u: Option<f64>,
    /// Euclidean error of the electrode voltages.
    pub err_volt: f64,
    /// Observed order from the previous row, if any.
    pub order_volt: Option<f64>,
}

/// Squared `L^2` norm over one triangle of the linear with vertex values `g`.
fn p1_l2_sq(area: f64, g: &[f64; 3]) -> f64 {
    area / 6.0
        * (g[0] * g[0]
            + g[1] * g[1]
            + g[2] * g[2]
            + g[0] * g[1]
            + g[1] * g[2]
            + g[0] * g[2])
}

/// Runs the manufactured case over a list of mesh resolutions with the
/// standard electrode configuration and tabulates errors and orders.
///
/// Errors follow the projection convention: the interior error is
/// `u_h - Q_h u` measured element-wise in `L^2`, the voltage error is
/// Euclidean. Orders are ratios of consecutive rows on a log scale.
pub fn convergence_study(
    case: &Manufactured,
    resolutions: &[usize],
    n_electrodes: usize,
    elec_len: f64,
    z: f64,
) -> Result<Vec<ConvergenceRow>> {
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(resolutions.len());
    for &n in resolutions {
        let mesh = Mesh::uniform(n);
        let map = crate::mesh::electrode_layout(&mesh, n_electrodes, elec_len)?;
        let model = ElectrodeModel::uniform_contact(map, z);
        let sigma = ConductivityField::constant(&mesh, 1.0, 0.25);
        let sys = assemble(&mesh, &model, &sigma);
        let factor = sys.factorize()?;
        let setup = case.setup(&mesh, &model);
        let sol = solve_with_load(&sys, &factor, &setup.load)?;

        let proj = crate::wg::project_q0(&mesh, |x, y| setup.exact_u(x, y));
        let mut err_sq = 0.0;
        for t in 0..mesh.triangles.len() {
            let d: [f64; 3] = std::array::from_fn(|i| sol.u.interior[t][i] - proj[t][i]);
            err_sq += p1_l2_sq(mesh.area(t), &d);
        }
        let err_u = err_sq.sqrt();
        let err_volt = sol
            .voltages
            .iter()
            .zip(&setup.voltages)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();

        let (order_u, order_volt) = match rows.last() {
            Some(prev) => {
                let scale = (prev.h / mesh.h).ln();
                (
                    Some((prev.err_u / err_u).ln() / scale),
                    Some((prev.err_volt / err_volt).ln() / scale),
                )
            }
            None => (None, None),
        };
        rows.push(ConvergenceRow {
            h: mesh.h,
            err_u,
            order_u,
            err_volt,
            order_volt,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
