//! Fixed quadrature rules on triangles and segments.
//!
//! Three rules cover every integral in the crate:
//!
//! * [`edge_gauss3`]: 3-point Gauss-Legendre on a segment, exact through
//!   degree 5 — used for edge averages and electrode boundary terms.
//! * [`tri_deg4`]: 6-point symmetric triangle rule, exact through degree 4 —
//!   used for interior `L^2` projections (products of `P1` and `P1` against
//!   smooth data are integrated essentially exactly at the mesh sizes used).
//! * [`tri_deg6`]: 12-point symmetric triangle rule, exact through degree 6 —
//!   used for volume load integrals of non-polynomial sources.
//!
//! Weights are normalized to sum to 1; integrals are the weighted mean of
//! point values scaled by the measure (`|T|` or `|e|`) of the domain.

/// Barycentric points and weights of the 6-point degree-4 triangle rule.
///
/// Two symmetry orbits of three points each; weights sum to 1.
const TRI_DEG4: [([f64; 3], f64); 6] = {
    const A1: f64 = 0.108_103_018_168_070;
    const B1: f64 = 0.445_948_490_915_965;
    const W1: f64 = 0.223_381_589_678_011;
    const A2: f64 = 0.816_847_572_980_459;
    const B2: f64 = 0.091_576_213_509_771;
    const W2: f64 = 0.109_951_743_655_322;
    [
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

/// Barycentric points and weights of the 12-point degree-6 triangle rule.
///
/// Two three-point orbits plus one six-point orbit; weights sum to 1.
const TRI_DEG6: [([f64; 3], f64); 12] = {
    const A1: f64 = 0.501_426_509_658_179;
    const B1: f64 = 0.249_286_745_170_910;
    const W1: f64 = 0.116_786_275_726_379;
    const A2: f64 = 0.873_821_971_016_996;
    const B2: f64 = 0.063_089_014_491_502;
    const W2: f64 = 0.050_844_906_370_207;
    const A3: f64 = 0.053_145_049_844_817;
    const B3: f64 = 0.310_352_451_033_784;
    const C3: f64 = 0.636_502_499_121_399;
    const W3: f64 = 0.082_851_075_618_374;
    [
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
        ([A3, B3, C3], W3),
        ([A3, C3, B3], W3),
        ([B3, A3, C3], W3),
        ([B3, C3, A3], W3),
        ([C3, A3, B3], W3),
        ([C3, B3, A3], W3),
    ]
};

/// Gauss-Legendre abscissae on `[-1, 1]` and weights (weights sum to 2).
const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
    (0.0, 0.888_888_888_888_888_9),
    (0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
];

// ---------------------------------------------------------------------------
// Rules
// ---------------------------------------------------------------------------

/// Integrates `f` over the triangle with vertices `v`, exactly for
/// polynomials of total degree <= 4.
pub fn tri_deg4(v: &[[f64; 2]; 3], f: impl Fn(f64, f64) -> f64) -> f64 {
    tri_rule(&TRI_DEG4, v, |_, x, y| f(x, y))
}

/// Like [`tri_deg4`], but also hands the integrand the barycentric
/// coordinates of each quadrature point — the natural way to integrate
/// against the linear nodal basis (whose values ARE the barycentrics).
pub fn tri_deg4_bary(v: &[[f64; 2]; 3], f: impl Fn([f64; 3], f64, f64) -> f64) -> f64 {
    tri_rule(&TRI_DEG4, v, f)
}

/// Integrates `f` over the triangle with vertices `v`, exactly for
/// polynomials of total degree <= 6.
pub fn tri_deg6(v: &[[f64; 2]; 3], f: impl Fn(f64, f64) -> f64) -> f64 {
    tri_rule(&TRI_DEG6, v, |_, x, y| f(x, y))
}

fn tri_rule(
    rule: &[([f64; 3], f64)],
    v: &[[f64; 2]; 3],
    f: impl Fn([f64; 3], f64, f64) -> f64,
) -> f64 {
    let area = triangle_area(v);
    let mean: f64 = rule
        .iter()
        .map(|&(bary, w)| {
            let x = bary[0] * v[0][0] + bary[1] * v[1][0] + bary[2] * v[2][0];
            let y = bary[0] * v[0][1] + bary[1] * v[1][1] + bary[2] * v[2][1];
            w * f(bary, x, y)
        })
        .sum();
    area * mean
}

/// Integrates `f` along the segment from `a` to `b`, exactly for polynomials
/// of degree <= 5 in the arclength parameter.
pub fn edge_gauss3(a: [f64; 2], b: [f64; 2], f: impl Fn(f64, f64) -> f64) -> f64 {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let half: f64 = GAUSS3
        .iter()
        .map(|&(t, w)| {
            // Map [-1, 1] -> segment.
            let s = 0.5 * (1.0 + t);
            let x = a[0] + s * (b[0] - a[0]);
            let y = a[1] + s * (b[1] - a[1]);
            w * f(x, y)
        })
        .sum();
    0.5 * len * half
}

/// Signed-area formula made positive; panics on degenerate triangles.
pub fn triangle_area(v: &[[f64; 2]; 3]) -> f64 {
    let area = 0.5
        * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1])
            - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]));
    assert!(area > 0.0, "triangle must be CCW with positive area, got {area}");
    area
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
