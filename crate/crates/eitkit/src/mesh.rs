//! Uniform triangulations of the unit square and electrode placement.
//!
//! The square is divided into `n x n` cells of side `h = 1/n`; each cell is
//! split by the diagonal from its lower-left to its upper-right corner.
//! Triangles are numbered row-major over cells, lower triangle before upper:
//!
//! ```text
//!   UL ____ UR          lower = (LL, LR, UR)   triangle 2*(cy*n + cx)
//!     |  /|             upper = (LL, UR, UL)   triangle 2*(cy*n + cx) + 1
//!     | / |
//!     |/__|             both CCW, sharing the LL -> UR diagonal
//!   LL      LR
//! ```
//!
//! Edges are numbered by sweeping midpoints bottom-to-top, left-to-right
//! (lexicographic in `(y, x)`). This ordering keeps the trace unknowns of any
//! single element within an index window of `2n + 2`, which is what makes the
//! condensed stiffness matrix banded (see `solver`).
//!
//! Electrodes are flush arcs on the boundary, parameterized by arclength
//! walked counterclockwise from the origin: bottom side `[0,1)`, right
//! `[1,2)`, top `[2,3)`, left `[3,4)`.
//!
//! # Example
//!
//! ```
//! use eitkit::mesh::{build_uniform_mesh, electrode_layout};
//!
//! let mesh = build_uniform_mesh(8);
//! assert_eq!(mesh.triangles.len(), 128);
//! let map = electrode_layout(&mesh, 16, 0.125).unwrap();
//! // At h = 1/8 each electrode of length 1/8 covers exactly one edge.
//! assert!(map.electrode_edges.iter().all(|edges| edges.len() == 1));
//! ```

use std::collections::HashMap;
use std::io::{self, Write};

use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Mesh
// ---------------------------------------------------------------------------

/// One edge of the triangulation.
#[derive(Debug, Clone)]
pub struct Edge {
    /// Vertex indices with `v[0] < v[1]`.
    pub v: [usize; 2],
    /// Euclidean length.
    pub length: f64,
    /// Incident triangles; `tris[1]` is `None` on the boundary. When both are
    /// present, `tris[0] < tris[1]`.
    pub tris: [Option<usize>; 2],
}

impl Edge {
    /// True when exactly one triangle touches this edge.
    pub fn is_boundary(&self) -> bool {
        self.tris[1].is_none()
    }
}

/// Uniform triangulation of the unit square.
///
/// Immutable after construction; all query methods are `&self`.
#[derive(Debug, Clone)]
pub struct Mesh {
    /// Cells per side; the mesh size is `h = 1/n_subdiv`.
    pub n_subdiv: usize,
    /// Mesh size `1/n_subdiv`.
    pub h: f64,
    /// Vertex coordinates, row-major bottom-up: `(ix, iy) -> iy*(n+1) + ix`.
    pub vertices: Vec<[f64; 2]>,
    /// CCW vertex-index triples, numbered as in the module docs.
    pub triangles: Vec<[usize; 3]>,
    /// Edge table in midpoint `(y, x)` order.
    pub edges: Vec<Edge>,
    /// Per triangle, the edge indices of its local edges; local edge `k`
    /// connects local vertices `k` and `(k+1) % 3`.
    pub tri_edges: Vec<[usize; 3]>,
}

impl Mesh {
    /// Builds the uniform triangulation with `n` cells per side.
    ///
    /// Accepts any `n >= 1`; use [`build_uniform_mesh`] when the mesh must
    /// carry the standard 16-electrode layout.
    pub fn uniform(n: usize) -> Mesh {
        assert!(n >= 1, "subdivision count must be at least 1, got {n}");
        let h = 1.0 / n as f64;

        let vid = |ix: usize, iy: usize| iy * (n + 1) + ix;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for iy in 0..=n {
            for ix in 0..=n {
                vertices.push([ix as f64 * h, iy as f64 * h]);
            }
        }

        let mut triangles = Vec::with_capacity(2 * n * n);
        for cy in 0..n {
            for cx in 0..n {
                let ll = vid(cx, cy);
                let lr = vid(cx + 1, cy);
                let ur = vid(cx + 1, cy + 1);
                let ul = vid(cx, cy + 1);
                triangles.push([ll, lr, ur]);
                triangles.push([ll, ur, ul]);
            }
        }

        // Collect unique undirected edges, then order them by midpoint.
        let mut key_of = HashMap::new();
        let mut raw: Vec<[usize; 2]> = Vec::new();
        for tri in &triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = [a.min(b), a.max(b)];
                key_of.entry(key).or_insert_with(|| {
                    raw.push(key);
                    raw.len() - 1
                });
            }
        }
        let mut order: Vec<usize> = (0..raw.len()).collect();
        let midpoint = |e: &[usize; 2]| {
            let (a, b) = (vertices[e[0]], vertices[e[1]]);
            [0.5 * (a[1] + b[1]), 0.5 * (a[0] + b[0])] // (y, x)
        };
        order.sort_by(|&i, &j| {
            midpoint(&raw[i])
                .partial_cmp(&midpoint(&raw[j]))
                .expect("finite midpoints")
        });
        let mut rank = vec![0usize; raw.len()];
        for (new_idx, &old_idx) in order.iter().enumerate() {
            rank[old_idx] = new_idx;
        }

        let mut edges: Vec<Edge> = order
            .iter()
            .map(|&i| {
                let [a, b] = raw[i];
                let (pa, pb) = (vertices[a], vertices[b]);
                Edge {
                    v: [a, b],
                    length: ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt(),
                    tris: [None, None],
                }
            })
            .collect();

        let mut tri_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut local = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let e = rank[key_of[&[a.min(b), a.max(b)]]];
                local[k] = e;
                let slots = &mut edges[e].tris;
                if slots[0].is_none() {
                    slots[0] = Some(t);
                } else {
                    debug_assert!(slots[1].is_none(), "edge {e} touched by 3 triangles");
                    slots[1] = Some(t);
                }
            }
            tri_edges.push(local);
        }

        Mesh {
            n_subdiv: n,
            h,
            vertices,
            triangles,
            edges,
            tri_edges,
        }
    }

    /// Vertex coordinates of triangle `t` in CCW order.
    pub fn tri_vertices(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Area of triangle `t` (all triangles share `h^2 / 2`).
    pub fn area(&self, t: usize) -> f64 {
        crate::quad::triangle_area(&self.tri_vertices(t))
    }

    /// Local mesh size `h_T = |T|^{1/2}`.
    pub fn h_t(&self, t: usize) -> f64 {
        self.area(t).sqrt()
    }

    /// Centroid of triangle `t`.
    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let v = self.tri_vertices(t);
        [
            (v[0][0] + v[1][0] + v[2][0]) / 3.0,
            (v[0][1] + v[1][1] + v[2][1]) / 3.0,
        ]
    }

    /// Midpoint of edge `e`.
    pub fn edge_midpoint(&self, e: usize) -> [f64; 2] {
        let [a, b] = self.edges[e].v;
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
    }

    /// Outward normal of local edge `k` of triangle `t`, scaled by the edge
    /// length: returns `|e| * n_e`. Outwardness follows from CCW orientation.
    pub fn scaled_normal(&self, t: usize, k: usize) -> [f64; 2] {
        let tri = self.triangles[t];
        let a = self.vertices[tri[k]];
        let b = self.vertices[tri[(k + 1) % 3]];
        [b[1] - a[1], a[0] - b[0]]
    }

    /// Grid cell of triangle `t`: `(cell_y, cell_x, is_upper)`.
    pub fn tri_cell(&self, t: usize) -> (usize, usize, bool) {
        let cell = t / 2;
        (cell / self.n_subdiv, cell % self.n_subdiv, t % 2 == 1)
    }

    /// Triangle index of the given cell half; inverse of [`Mesh::tri_cell`].
    pub fn tri_at(&self, cell_y: usize, cell_x: usize, upper: bool) -> usize {
        debug_assert!(cell_y < self.n_subdiv && cell_x < self.n_subdiv);
        2 * (cell_y * self.n_subdiv + cell_x) + usize::from(upper)
    }

    /// Indices of boundary edges, in edge-table order.
    pub fn boundary_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.edges.len()).filter(|&e| self.edges[e].is_boundary())
    }
}

/// Builds the standard mesh for electrode work: `n_subdiv` must be a positive
/// multiple of 8 so that electrode endpoints at multiples of 1/8 land on mesh
/// nodes. Panics otherwise; use [`Mesh::uniform`] for unconstrained meshes.
pub fn build_uniform_mesh(n_subdiv: usize) -> Mesh {
    assert!(
        n_subdiv >= 8 && n_subdiv % 8 == 0,
        "subdivision count must be a positive multiple of 8, got {n_subdiv}"
    );
    Mesh::uniform(n_subdiv)
}

// ---------------------------------------------------------------------------
// Electrodes
// ---------------------------------------------------------------------------

/// Classification of a mesh edge relative to the electrode layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// Not on the boundary.
    Interior,
    /// On the boundary, between electrodes (zero-flux segment).
    Gap,
    /// Under electrode `l` (0-based).
    Electrode(usize),
}

/// Placement of `L` flush electrodes on the boundary of the unit square.
#[derive(Debug, Clone)]
pub struct ElectrodeMap {
    /// Number of electrodes `L`.
    pub n_electrodes: usize,
    /// Common electrode length.
    pub elec_len: f64,
    /// Arc `[start, end]` of each electrode in boundary arclength, walked
    /// counterclockwise from the origin (perimeter is `[0, 4)`).
    pub segments: Vec<[f64; 2]>,
    /// Classification of every mesh edge.
    pub edge_assignment: Vec<EdgeKind>,
    /// Mesh edges under each electrode, in edge-table order.
    pub electrode_edges: Vec<Vec<usize>>,
}

/// Arclength along the boundary of a boundary point, or `None` off-boundary.
fn boundary_arclength(p: [f64; 2]) -> Option<f64> {
    let eps = 1e-12;
    let [x, y] = p;
    if y.abs() < eps {
        Some(x)
    } else if (x - 1.0).abs() < eps {
        Some(1.0 + y)
    } else if (y - 1.0).abs() < eps {
        Some(2.0 + (1.0 - x))
    } else if x.abs() < eps {
        Some(3.0 + (1.0 - y))
    } else {
        None
    }
}

/// Places `n_electrodes` electrodes of length `elec_len` on the boundary,
/// `n_electrodes / 4` per side at side-local offsets `k * 4 / n_electrodes`.
///
/// With 16 electrodes of length 1/8 each side carries four electrodes at
/// side-local intervals `[0, 1/8]`, `[1/4, 3/8]`, `[1/2, 5/8]`, `[3/4, 7/8]`.
///
/// Fails when the counts do not fit (`n_electrodes` not a multiple of 4, or
/// electrodes longer than their pitch) or when an electrode endpoint misses
/// every mesh node; the error names the offending endpoint.
pub fn electrode_layout(mesh: &Mesh, n_electrodes: usize, elec_len: f64) -> Result<ElectrodeMap> {
    if n_electrodes == 0 || n_electrodes % 4 != 0 {
        return Err(Error::Layout(format!(
            "electrode count must be a positive multiple of 4 to cover the four sides, got {n_electrodes}"
        )));
    }
    let per_side = n_electrodes / 4;
    let pitch = 1.0 / per_side as f64;
    if !(elec_len > 0.0 && elec_len < pitch) {
        return Err(Error::Layout(format!(
            "electrode length {elec_len} must lie in (0, {pitch}) to keep {per_side} electrodes per side disjoint"
        )));
    }

    // Electrode arcs, and endpoint alignment with mesh nodes.
    let n = mesh.n_subdiv as f64;
    let mut segments = Vec::with_capacity(n_electrodes);
    for side in 0..4 {
        for k in 0..per_side {
            let start = side as f64 + k as f64 * pitch;
            let end = start + elec_len;
            for endpoint in [start, end] {
                // Side-local position; nodes sit at multiples of h = 1/n.
                let local = endpoint - side as f64;
                let scaled = local * n;
                if (scaled - scaled.round()).abs() > 1e-9 {
                    return Err(Error::Layout(format!(
                        "electrode endpoint at arclength {endpoint} (side {side}, local position {local}) does not coincide with a mesh node at resolution 1/{}",
                        mesh.n_subdiv
                    )));
                }
            }
            segments.push([start, end]);
        }
    }

    // Classify every edge by its midpoint: endpoints align with nodes, so an
    // edge midpoint is strictly inside or strictly outside each electrode.
    let mut edge_assignment = vec![EdgeKind::Interior; mesh.edges.len()];
    let mut electrode_edges = vec![Vec::new(); n_electrodes];
    for e in mesh.boundary_edges() {
        let s = boundary_arclength(mesh.edge_midpoint(e))
            .expect("midpoint of a boundary edge lies on the boundary");
        let hit = segments.iter().position(|&[a, b]| s > a && s < b);
        edge_assignment[e] = match hit {
            Some(l) => {
                electrode_edges[l].push(e);
                EdgeKind::Electrode(l)
            }
            None => EdgeKind::Gap,
        };
    }

    // Every electrode must be resolved by the mesh.
    for (l, edges) in electrode_edges.iter().enumerate() {
        let covered: f64 = edges.iter().map(|&e| mesh.edges[e].length).sum();
        if (covered - elec_len).abs() > 1e-9 {
            return Err(Error::Layout(format!(
                "electrode {l} covers boundary length {covered:.6}, expected {elec_len:.6}; the mesh does not resolve it"
            )));
        }
    }

    Ok(ElectrodeMap {
        n_electrodes,
        elec_len,
        segments,
        edge_assignment,
        electrode_edges,
    })
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

/// Writes the mesh in a plain-text tabular format: a `vertices` section
/// (`x y` per line), a `triangles` section (`i j k` per line, row-major over
/// cells with the lower triangle first), and a `boundary_edges` section
/// (`i j e` per line where `e` is the electrode index or -1 for a gap).
pub fn write_mesh(mesh: &Mesh, map: &ElectrodeMap, out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "vertices {}", mesh.vertices.len())?;
    for v in &mesh.vertices {
        writeln!(out, "{} {}", v[0], v[1])?;
    }
    writeln!(out, "triangles {}", mesh.triangles.len())?;
    for t in &mesh.triangles {
        writeln!(out, "{} {} {}", t[0], t[1], t[2])?;
    }
    let boundary: Vec<usize> = mesh.boundary_edges().collect();
    writeln!(out, "boundary_edges {}", boundary.len())?;
    for e in boundary {
        let idx = match map.edge_assignment[e] {
            EdgeKind::Electrode(l) => l as i64,
            _ => -1,
        };
        let [a, b] = mesh.edges[e].v;
        writeln!(out, "{a} {b} {idx}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
