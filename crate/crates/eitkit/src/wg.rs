//! Lowest-order weak Galerkin function space on a triangulation.
//!
//! A weak function `v = {v0, vb}` has two parts:
//!
//! * `v0`: a linear polynomial **per element**, fully discontinuous across
//!   elements, stored as the three vertex values in local order;
//! * `vb`: one constant **per edge**, single-valued (shared by the two
//!   elements meeting at an interior edge).
//!
//! The weak gradient of `v` on an element `T` is the constant vector
//! satisfying `(grad_w v, q)_T = <vb, q . n>_{dT}` for constant test vectors
//! `q`, which evaluates in closed form to
//!
//! ```text
//!   grad_w v |_T = (1/|T|) * sum over edges e of T of  vb_e * |e| * n_e
//! ```
//!
//! Notably `v0` does not enter the weak gradient at all at this order; the
//! interior and trace parts are tied together only by the stabilizer
//! `s(u,v) = sum_T h_T^{-1} <Qb u0 - ub, Qb v0 - vb>_{dT}`, where `Qb`
//! averages the interior linear over each edge (its midpoint value).
//!
//! # Example
//!
//! ```
//! use eitkit::mesh::Mesh;
//! use eitkit::wg::{project_qh, weak_gradient, mean_gradient};
//!
//! // The weak gradient commutes with projection: projecting a smooth field
//! // and taking its weak gradient equals projecting the gradient.
//! let mesh = Mesh::uniform(4);
//! let field = project_qh(&mesh, |x, y| x * x + y);
//! let lhs = weak_gradient(&mesh, &field);
//! let rhs = mean_gradient(&mesh, |x, _| [2.0 * x, 1.0]);
//! for (a, b) in lhs.iter().zip(&rhs) {
//!     assert!((a[0] - b[0]).abs() < 1e-13 && (a[1] - b[1]).abs() < 1e-13);
//! }
//! ```

use crate::mesh::{ElectrodeMap, Mesh};
use crate::quad;

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

/// A discrete weak function `{v0, vb}`.
#[derive(Debug, Clone)]
pub struct WgField {
    /// Vertex values of the interior linear on each triangle, in the
    /// triangle's local vertex order.
    pub interior: Vec<[f64; 3]>,
    /// One value per mesh edge.
    pub traces: Vec<f64>,
}

impl WgField {
    /// The zero field on `mesh`.
    pub fn zeros(mesh: &Mesh) -> WgField {
        WgField {
            interior: vec![[0.0; 3]; mesh.triangles.len()],
            traces: vec![0.0; mesh.edges.len()],
        }
    }

    /// Panics unless the field's dimensions match `mesh`.
    pub fn assert_conforms(&self, mesh: &Mesh) {
        assert_eq!(
            self.interior.len(),
            mesh.triangles.len(),
            "interior part has {} elements, mesh has {} triangles",
            self.interior.len(),
            mesh.triangles.len()
        );
        assert_eq!(
            self.traces.len(),
            mesh.edges.len(),
            "trace part has {} values, mesh has {} edges",
            self.traces.len(),
            mesh.edges.len()
        );
    }
}

/// Edge averages of a linear given by vertex values: local edge `k` connects
/// local vertices `k` and `k+1`, so the average is the midpoint value.
pub fn edge_averages_of_linear(a: &[f64; 3]) -> [f64; 3] {
    [
        0.5 * (a[0] + a[1]),
        0.5 * (a[1] + a[2]),
        0.5 * (a[2] + a[0]),
    ]
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

/// Closed-form weak gradient on one triangle from its vertex coordinates and
/// the trace values on its three local edges.
pub fn weak_gradient_tri(v: &[[f64; 2]; 3], traces: &[f64; 3]) -> [f64; 2] {
    let area = quad::triangle_area(v);
    let mut g = [0.0f64; 2];
    for k in 0..3 {
        let a = v[k];
        let b = v[(k + 1) % 3];
        // |e| * outward normal of a CCW triangle's directed edge a -> b.
        g[0] += traces[k] * (b[1] - a[1]);
        g[1] += traces[k] * (a[0] - b[0]);
    }
    [g[0] / area, g[1] / area]
}

/// Weak gradient of `field`, one constant vector per triangle.
pub fn weak_gradient(mesh: &Mesh, field: &WgField) -> Vec<[f64; 2]> {
    field.assert_conforms(mesh);
    (0..mesh.triangles.len())
        .map(|t| {
            let e = mesh.tri_edges[t];
            let traces = [
                field.traces[e[0]],
                field.traces[e[1]],
                field.traces[e[2]],
            ];
            weak_gradient_tri(&mesh.tri_vertices(t), &traces)
        })
        .collect()
}

/// Ordinary gradient of the interior linear of triangle `t` (a constant).
pub fn p1_gradient(mesh: &Mesh, t: usize, coeffs: &[f64; 3]) -> [f64; 2] {
    let area = mesh.area(t);
    let mut g = [0.0f64; 2];
    for i in 0..3 {
        // grad of the nodal basis at vertex i is the inward-pointing scaled
        // normal of the opposite edge (local edge i+1) over 2|T|.
        let n = mesh.scaled_normal(t, (i + 1) % 3);
        g[0] -= coeffs[i] * n[0];
        g[1] -= coeffs[i] * n[1];
    }
    [g[0] / (2.0 * area), g[1] / (2.0 * area)]
}

// ---------------------------------------------------------------------------
// Projections
// ---------------------------------------------------------------------------

/// Element-wise `L^2` projection onto linears: on each triangle the returned
/// vertex values describe the best linear fit of `f` in `L^2(T)`.
pub fn project_q0(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Vec<[f64; 3]> {
    (0..mesh.triangles.len())
        .map(|t| {
            let v = mesh.tri_vertices(t);
            let area = mesh.area(t);
            // Moments m_i = (f, psi_i)_T against the nodal basis.
            let m: [f64; 3] = std::array::from_fn(|i| {
                quad::tri_deg4_bary(&v, |bary, x, y| f(x, y) * bary[i])
            });
            // Invert the P1 mass matrix |T|/12 * (I + ones):
            // c_i = (3/|T|) (3 m_i - m_j - m_k).
            let sum = m[0] + m[1] + m[2];
            std::array::from_fn(|i| (3.0 / area) * (4.0 * m[i] - sum))
        })
        .collect()
}

/// Edge-wise `L^2` projection onto constants: the average of `f` over each
/// edge, by Gauss quadrature.
pub fn project_qb(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    (0..mesh.edges.len())
        .map(|e| {
            let [a, b] = mesh.edges[e].v;
            quad::edge_gauss3(mesh.vertices[a], mesh.vertices[b], &f) / mesh.edges[e].length
        })
        .collect()
}

/// Combined projection `Q_h f = {Q0 f, Qb f}` into the weak space.
pub fn project_qh(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> WgField {
    WgField {
        interior: project_q0(mesh, &f),
        traces: project_qb(mesh, &f),
    }
}

/// Element-wise mean of a smooth gradient field: the `L^2` projection of
/// `grad f` onto piecewise constants.
pub fn mean_gradient(mesh: &Mesh, grad: impl Fn(f64, f64) -> [f64; 2]) -> Vec<[f64; 2]> {
    (0..mesh.triangles.len())
        .map(|t| {
            let v = mesh.tri_vertices(t);
            let area = mesh.area(t);
            [
                quad::tri_deg4(&v, |x, y| grad(x, y)[0]) / area,
                quad::tri_deg4(&v, |x, y| grad(x, y)[1]) / area,
            ]
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Stabilizer and norms
// ---------------------------------------------------------------------------

/// The stabilizing bilinear form
/// `s(u,v) = sum_T h_T^{-1} <Qb u0 - ub, Qb v0 - vb>_{dT}`.
///
/// The mismatch `Qb v0 - vb` is constant on each edge, so each boundary term
/// is just `|e|` times a product of midpoint mismatches. Elements are summed
/// in triangle order for a deterministic result.
pub fn stabilizer_pairing(mesh: &Mesh, u: &WgField, v: &WgField) -> f64 {
    u.assert_conforms(mesh);
    v.assert_conforms(mesh);
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        let inv_ht = 1.0 / mesh.h_t(t);
        let mu = edge_averages_of_linear(&u.interior[t]);
        let mv = edge_averages_of_linear(&v.interior[t]);
        let e = mesh.tri_edges[t];
        let mut elem = 0.0;
        for k in 0..3 {
            let du = mu[k] - u.traces[e[k]];
            let dv = mv[k] - v.traces[e[k]];
            elem += mesh.edges[e[k]].length * du * dv;
        }
        total += inv_ht * elem;
    }
    total
}

/// Squared discrete `H^1`-type norm of a weak function paired with electrode
/// voltages: element gradients, scaled interior/trace mismatches, and the
/// trace-to-voltage mismatch on each electrode.
pub fn norm_1h_sq(mesh: &Mesh, map: &ElectrodeMap, field: &WgField, voltages: &[f64]) -> f64 {
    field.assert_conforms(mesh);
    assert_eq!(voltages.len(), map.n_electrodes, "one voltage per electrode");
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        let g = p1_gradient(mesh, t, &field.interior[t]);
        total += mesh.area(t) * (g[0] * g[0] + g[1] * g[1]);
        let mid = edge_averages_of_linear(&field.interior[t]);
        let e = mesh.tri_edges[t];
        let inv_ht = 1.0 / mesh.h_t(t);
        for k in 0..3 {
            let d = mid[k] - field.traces[e[k]];
            total += inv_ht * mesh.edges[e[k]].length * d * d;
        }
    }
    for (l, edges) in map.electrode_edges.iter().enumerate() {
        for &e in edges {
            let d = field.traces[e] - voltages[l];
            total += mesh.edges[e].length * d * d;
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_field(mesh: &Mesh, rng: &mut ChaCha20Rng) -> WgField {
        WgField {
            interior: (0..mesh.triangles.len())
                .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
                .collect(),
            traces: (0..mesh.edges.len())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        }
    }

    // ---- weak gradient -----------------------------------------------------

    #[test]
    fn test_weak_gradient_unit_right_triangle_hypotenuse() {
        // Trace 1 on the hypotenuse of the unit right triangle, 0 on the
        // legs: the defining integral gives exactly (2, 2).
        let v = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let g = weak_gradient_tri(&v, &[0.0, 1.0, 0.0]);
        assert!(
            (g[0] - 2.0).abs() < 1e-15 && (g[1] - 2.0).abs() < 1e-15,
            "got {g:?}, want (2, 2)"
        );
    }

    #[test]
    fn test_weak_gradient_constant_traces_vanish() {
        let mesh = Mesh::uniform(4);
        let mut field = WgField::zeros(&mesh);
        field.traces.iter_mut().for_each(|t| *t = 7.25);
        for (t, g) in weak_gradient(&mesh, &field).iter().enumerate() {
            assert!(
                g[0].abs() < 1e-12 && g[1].abs() < 1e-12,
                "triangle {t}: {g:?}"
            );
        }
    }

    #[test]
    fn test_weak_gradient_linearity() {
        let mesh = Mesh::uniform(3);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let field = random_field(&mesh, &mut rng);
        let doubled = WgField {
            interior: field.interior.clone(),
            traces: field.traces.iter().map(|t| 2.0 * t).collect(),
        };
        let g1 = weak_gradient(&mesh, &field);
        let g2 = weak_gradient(&mesh, &doubled);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a[0] - b[0]).abs() < 1e-14);
            assert!((2.0 * a[1] - b[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn test_p1_gradient_of_plane() {
        // v0 sampling the plane 3x - 2y + 1 has gradient (3, -2) everywhere.
        let mesh = Mesh::uniform(4);
        for t in 0..mesh.triangles.len() {
            let v = mesh.tri_vertices(t);
            let coeffs: [f64; 3] = std::array::from_fn(|i| 3.0 * v[i][0] - 2.0 * v[i][1] + 1.0);
            let g = p1_gradient(&mesh, t, &coeffs);
            assert!(
                (g[0] - 3.0).abs() < 1e-12 && (g[1] + 2.0).abs() < 1e-12,
                "triangle {t}: {g:?}"
            );
        }
    }

    // ---- projections -------------------------------------------------------

    #[test]
    fn test_project_q0_reproduces_linears() {
        let mesh = Mesh::uniform(2);
        let coeffs = project_q0(&mesh, |x, y| 2.0 * x - 0.5 * y + 0.25);
        for (t, c) in coeffs.iter().enumerate() {
            let v = mesh.tri_vertices(t);
            for i in 0..3 {
                let want = 2.0 * v[i][0] - 0.5 * v[i][1] + 0.25;
                assert!(
                    (c[i] - want).abs() < 1e-12,
                    "triangle {t} vertex {i}: got {}, want {want}",
                    c[i]
                );
            }
        }
    }

    #[test]
    fn test_project_q0_preserves_element_means() {
        // Orthogonality against constants: mean of the projection equals the
        // mean of the function on every element.
        let mesh = Mesh::uniform(2);
        let f = |x: f64, y: f64| x * x * y + y * y;
        let coeffs = project_q0(&mesh, f);
        for (t, c) in coeffs.iter().enumerate() {
            let v = mesh.tri_vertices(t);
            let mean_proj = (c[0] + c[1] + c[2]) / 3.0;
            let mean_f = crate::quad::tri_deg4(&v, f) / mesh.area(t);
            assert!(
                (mean_proj - mean_f).abs() < 1e-13,
                "triangle {t}: projection mean {mean_proj}, function mean {mean_f}"
            );
        }
    }

    #[test]
    fn test_project_q0_second_order_convergence() {
        // L2 error of the elementwise linear fit of a smooth field drops by
        // ~4x per mesh halving.
        let f = |x: f64, y: f64| (std::f64::consts::PI * x).sin() * (0.5 + y * y);
        let err = |n: usize| -> f64 {
            let mesh = Mesh::uniform(n);
            let coeffs = project_q0(&mesh, f);
            let mut sq = 0.0;
            for t in 0..mesh.triangles.len() {
                let v = mesh.tri_vertices(t);
                let c = coeffs[t];
                sq += crate::quad::tri_deg6(&v, |x, y| {
                    let bary = barycentric(&v, x, y);
                    let p = c[0] * bary[0] + c[1] * bary[1] + c[2] * bary[2];
                    (f(x, y) - p).powi(2)
                });
            }
            sq.sqrt()
        };
        let (e1, e2, e3) = (err(4), err(8), err(16));
        let (r1, r2) = (e1 / e2, e2 / e3);
        assert!(
            (3.0..5.0).contains(&r1) && (3.0..5.0).contains(&r2),
            "error ratios {r1:.2}, {r2:.2} should be near 4"
        );
    }

    /// Barycentric coordinates by solving the affine system (test helper).
    fn barycentric(v: &[[f64; 2]; 3], x: f64, y: f64) -> [f64; 3] {
        let area2 = 2.0 * crate::quad::triangle_area(v);
        let sub = |a: [f64; 2], b: [f64; 2]| {
            ((b[0] - a[0]) * (y - a[1]) - (x - a[0]) * (b[1] - a[1])) / area2
        };
        [sub(v[1], v[2]), sub(v[2], v[0]), sub(v[0], v[1])]
    }

    #[test]
    fn test_project_qb_known_values() {
        // On the edge [0, 1/2] of the x-axis, the average of x^2 is h^2/3.
        let mesh = Mesh::uniform(2);
        let traces = project_qb(&mesh, |x, _| x * x);
        let e0 = &mesh.edges[0];
        assert_eq!(
            mesh.vertices[e0.v[0]],
            [0.0, 0.0],
            "edge 0 should start at the origin"
        );
        assert!((traces[0] - 0.25 / 3.0).abs() < 1e-14, "got {}", traces[0]);
        // Constants project to themselves; linears to midpoint values.
        let c = project_qb(&mesh, |_, _| 4.5);
        assert!(c.iter().all(|&t| (t - 4.5).abs() < 1e-14));
        let lin = project_qb(&mesh, |x, y| x - 3.0 * y);
        for e in 0..mesh.edges.len() {
            let m = mesh.edge_midpoint(e);
            assert!((lin[e] - (m[0] - 3.0 * m[1])).abs() < 1e-13, "edge {e}");
        }
    }

    // ---- commutativity -----------------------------------------------------

    #[test]
    fn test_weak_gradient_commutes_with_projection_polynomial() {
        // For quartic f both quadratures are exact, so the identity
        // grad_w(Q_h f) = mean(grad f) holds to roundoff.
        let mesh = Mesh::uniform(4);
        let f = |x: f64, y: f64| x.powi(4) - 2.0 * x * x * y * y + 3.0 * y;
        let grad = |x: f64, y: f64| {
            [
                4.0 * x.powi(3) - 4.0 * x * y * y,
                -4.0 * x * x * y + 3.0,
            ]
        };
        let lhs = weak_gradient(&mesh, &project_qh(&mesh, f));
        let rhs = mean_gradient(&mesh, grad);
        for (t, (a, b)) in lhs.iter().zip(&rhs).enumerate() {
            assert!(
                (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12,
                "triangle {t}: weak {a:?} vs projected {b:?}"
            );
        }
    }

    #[test]
    fn test_weak_gradient_commutes_with_projection_smooth() {
        let mesh = Mesh::uniform(8);
        let f = |x: f64, y: f64| (2.0 * x).sin() * (-y).exp();
        let grad = |x: f64, y: f64| {
            [
                2.0 * (2.0 * x).cos() * (-y).exp(),
                -(2.0 * x).sin() * (-y).exp(),
            ]
        };
        let lhs = weak_gradient(&mesh, &project_qh(&mesh, f));
        let rhs = mean_gradient(&mesh, grad);
        for (t, (a, b)) in lhs.iter().zip(&rhs).enumerate() {
            // Sides differ only by their respective quadrature errors, a few
            // parts in 1e9 at h = 1/8 for this integrand.
            assert!(
                (a[0] - b[0]).abs() < 1e-7 && (a[1] - b[1]).abs() < 1e-7,
                "triangle {t}: weak {a:?} vs projected {b:?}"
            );
        }
    }

    // ---- stabilizer --------------------------------------------------------

    #[test]
    fn test_stabilizer_vanishes_on_conforming_traces() {
        // When every trace is the edge average of the interior linear, the
        // mismatch is identically zero.
        let mesh = Mesh::uniform(3);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut u = random_field(&mesh, &mut rng);
        // Make the interior single-valued per vertex first so the edge
        // averages from the two sides agree, then copy them into the traces.
        let nodal: Vec<f64> = (0..mesh.vertices.len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            u.interior[t] = [nodal[tri[0]], nodal[tri[1]], nodal[tri[2]]];
        }
        for (t, locals) in mesh.tri_edges.iter().enumerate() {
            let mid = edge_averages_of_linear(&u.interior[t]);
            for k in 0..3 {
                u.traces[locals[k]] = mid[k];
            }
        }
        let v = random_field(&mesh, &mut rng);
        let s = stabilizer_pairing(&mesh, &u, &v);
        assert!(s.abs() < 1e-13, "stabilizer should vanish, got {s}");
    }

    #[test]
    fn test_stabilizer_symmetric_and_nonnegative() {
        let mesh = Mesh::uniform(4);
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        for trial in 0..20 {
            let u = random_field(&mesh, &mut rng);
            let v = random_field(&mesh, &mut rng);
            let suv = stabilizer_pairing(&mesh, &u, &v);
            let svu = stabilizer_pairing(&mesh, &v, &u);
            assert!(
                (suv - svu).abs() < 1e-12 * suv.abs().max(1.0),
                "trial {trial}: s(u,v)={suv} but s(v,u)={svu}"
            );
            let suu = stabilizer_pairing(&mesh, &u, &u);
            assert!(suu >= 0.0, "trial {trial}: s(u,u)={suu} negative");
        }
    }

    #[test]
    fn test_norm_1h_positive_definite_on_nonconstant() {
        let mesh = Mesh::uniform(8);
        let map = crate::mesh::electrode_layout(&mesh, 16, 0.125).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let field = random_field(&mesh, &mut rng);
        let volts = vec![0.0; 16];
        assert!(norm_1h_sq(&mesh, &map, &field, &volts) > 0.0);
        // Constant field with matching voltages is in the kernel.
        let mut c = WgField::zeros(&mesh);
        c.interior.iter_mut().for_each(|a| *a = [2.0; 3]);
        c.traces.iter_mut().for_each(|t| *t = 2.0);
        let n = norm_1h_sq(&mesh, &map, &c, &vec![2.0; 16]);
        assert!(n.abs() < 1e-13, "constants have zero norm, got {n}");
    }
}
