//! Accelerated proximal gradient loop with backtracking curvature search.
//!
//! Minimizes `F(x) = f(x) + g(x)` over the admissible box, where `f` is a
//! differentiable misfit supplied as closures and `g(x) = tv_weight *
//! TV_grid(x)` is handled through its proximal map ([`crate::tv::fgp_denoise`]).
//! Each outer iteration takes a gradient step from the momentum point `y_k`,
//! applies the TV prox, and doubles the curvature estimate `L` until the
//! accepted point satisfies the quadratic-model descent condition `F(x) <=
//! Q_L(x, y)`; `L` carries over between iterations and never decreases.
//! Momentum follows the classical scalar sequence `t_{k+1} = (1 +
//! sqrt(1 + 4 t_k^2)) / 2`, and the returned iterate is the best `F` seen
//! rather than the last (the accelerated sequence is not monotone).
//!
//! The smooth part is evaluated at extrapolated momentum points, which can
//! leave the box; callers whose `f` needs box-like inputs wrap their
//! closures with a widened clamp (see `recon`).
//!
//! # Example
//! ```
//! use eitkit::fista::{fista_minimize, FistaParams};
//! use eitkit::tv::CellGrid;
//!
//! // Projection problem: f = ||x - c||^2 with no TV term.
//! let c = CellGrid::from_data(2, 4, vec![1.0, 2.0, 0.5, 1.5, 0.9, 1.1, 2.0, 0.6]);
//! let f = |x: &CellGrid| x.dist_sq(&c);
//! let fg = |x: &CellGrid| {
//!     let grad = CellGrid::from_data(
//!         2,
//!         4,
//!         x.data.iter().zip(&c.data).map(|(a, b)| 2.0 * (a - b)).collect(),
//!     );
//!     (x.dist_sq(&c), grad)
//! };
//! let x0 = CellGrid::from_data(2, 4, vec![1.0; 8]);
//! let params = FistaParams::new(0.0, 0.25).with_max_iter(100);
//! let result = fista_minimize(f, fg, x0, &params, |_, _| {}).unwrap();
//! assert!(result.value < 1e-10);
//! ```

use crate::tv::{fgp_denoise, grid_tv, project_c, CellGrid};
use crate::{Error, Result};

/// Hard cap on curvature doublings within a single backtracking search.
pub const MAX_BACKTRACKS: usize = 60;

// ---------------------------------------------------------------------------
// Parameters and records
// ---------------------------------------------------------------------------

/// Tuning knobs for [`fista_minimize`].
#[derive(Debug, Clone)]
pub struct FistaParams {
    /// Weight on the grid total variation (already includes any mesh-size
    /// factor); zero turns `g` into the pure box projection.
    pub tv_weight: f64,
    /// Admissible box is `[lambda, 1/lambda]`.
    pub lambda: f64,
    /// Backtracking shrink factor in `(0, 1)`: each rejection updates
    /// `L <- L / eta`.
    pub eta: f64,
    /// Initial curvature estimate.
    pub l0: f64,
    /// Outer iteration budget.
    pub max_iter: usize,
    /// Stop once the momentum point moves less than this (Frobenius);
    /// zero never triggers.
    pub delta: f64,
    /// Iteration cap for the inner TV prox.
    pub fgp_iters: usize,
    /// Relative-change tolerance for the inner TV prox.
    pub fgp_tol: f64,
}

impl FistaParams {
    /// Defaults: `eta = 0.5`, `L0 = 1`, 100 outer iterations, no
    /// movement-based stop, prox capped at 50 iterations with tolerance 1e-5.
    pub fn new(tv_weight: f64, lambda: f64) -> FistaParams {
        assert!(tv_weight >= 0.0, "negative TV weight {tv_weight}");
        assert!(lambda > 0.0 && lambda < 1.0, "box parameter {lambda}");
        FistaParams {
            tv_weight,
            lambda,
            eta: 0.5,
            l0: 1.0,
            max_iter: 100,
            delta: 0.0,
            fgp_iters: crate::tv::FGP_DEFAULT_MAX_ITER,
            fgp_tol: crate::tv::FGP_DEFAULT_TOL,
        }
    }

    /// Replaces the outer iteration budget.
    pub fn with_max_iter(mut self, max_iter: usize) -> FistaParams {
        self.max_iter = max_iter;
        self
    }

    /// Replaces the movement-based stopping threshold.
    pub fn with_delta(mut self, delta: f64) -> FistaParams {
        self.delta = delta;
        self
    }

    /// Replaces the initial curvature estimate. Backtracking only grows
    /// `L`, so starting far below the true curvature costs a few extra
    /// objective evaluations on the first iteration and then lands at the
    /// problem's own scale; starting above it locks in needlessly small
    /// steps.
    pub fn with_l0(mut self, l0: f64) -> FistaParams {
        self.l0 = l0;
        self
    }
}

/// One accepted outer iteration.
#[derive(Debug, Clone)]
pub struct FistaIterate {
    /// Outer iteration index, starting at 1.
    pub k: usize,
    /// Smooth part `f(x_k)`.
    pub f: f64,
    /// Regularizer `g(x_k)`.
    pub g: f64,
    /// Objective `F(x_k) = f + g`.
    pub value: f64,
    /// Quadratic model `Q_{L_k}(x_k, y_k)` at acceptance; the descent
    /// certificate is `value <= model` (up to roundoff slack).
    pub model: f64,
    /// Curvature estimate the step was accepted with.
    pub l: f64,
    /// Doublings spent in this iteration's backtracking search.
    pub backtracks: usize,
}

impl FistaIterate {
    /// Log line `k,F,f,g,L_k,backtracks`.
    pub fn log_line(&self) -> String {
        format!(
            "{},{:.12e},{:.12e},{:.12e},{:.6e},{}",
            self.k, self.value, self.f, self.g, self.l, self.backtracks
        )
    }
}

/// Output of [`fista_minimize`].
#[derive(Debug, Clone)]
pub struct FistaResult {
    /// Iterate with the smallest objective seen.
    pub x: CellGrid,
    /// Its objective value.
    pub value: f64,
    /// All accepted iterations in order.
    pub history: Vec<FistaIterate>,
}

impl FistaResult {
    /// Running minimum of the objective history (non-increasing envelope).
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.history
            .iter()
            .map(|it| {
                best = best.min(it.value);
                best
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Algorithm
// ---------------------------------------------------------------------------

fn lin_comb(a: &CellGrid, ca: f64, b: &CellGrid, cb: f64) -> CellGrid {
    CellGrid::from_data(
        a.rows,
        a.cols,
        a.data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| ca * x + cb * y)
            .collect(),
    )
}

/// Accepts a step when the objective does not exceed the quadratic model
/// beyond roundoff.
fn descent_holds(value: f64, model: f64) -> bool {
    value <= model + 1e-12 * model.abs().max(1.0)
}

/// Runs the accelerated proximal gradient method.
///
/// `f_eval(x)` returns the smooth misfit; `grad_eval(y)` returns the misfit
/// and its gradient at `y` (one call per outer iteration, at the momentum
/// point). `x0` must lie in the admissible box. The observer sees every
/// accepted iterate and its point, in order.
///
/// Fails with [`Error::NoConvergence`] if a single backtracking search
/// exceeds [`MAX_BACKTRACKS`] doublings, which indicates a broken gradient
/// or non-finite objective rather than a hard problem.
pub fn fista_minimize<F, G, O>(
    mut f_eval: F,
    mut grad_eval: G,
    x0: CellGrid,
    params: &FistaParams,
    mut observer: O,
) -> Result<FistaResult>
where
    F: FnMut(&CellGrid) -> f64,
    G: FnMut(&CellGrid) -> (f64, CellGrid),
    O: FnMut(&FistaIterate, &CellGrid),
{
    assert!(params.max_iter >= 1, "need at least one iteration");
    assert!(
        params.eta > 0.0 && params.eta < 1.0,
        "backtracking factor {} outside (0, 1)",
        params.eta
    );
    assert!(params.l0 > 0.0, "initial curvature {}", params.l0);
    let lambda = params.lambda;
    let boxed = project_c(x0.clone(), lambda);
    assert!(
        x0.data
            .iter()
            .zip(&boxed.data)
            .all(|(a, b)| (a - b).abs() < 1e-12),
        "starting point leaves the box [{lambda}, {}]",
        1.0 / lambda
    );

    let w = params.tv_weight;
    let g_of = |x: &CellGrid| if w == 0.0 { 0.0 } else { w * grid_tv(x, 1.0) };

    let mut x_prev = boxed.clone();
    let mut y = boxed;
    let mut t = 1.0f64;
    let mut l = params.l0;
    let mut history = Vec::with_capacity(params.max_iter);
    let mut best_x = x_prev.clone();
    let mut best_value = f64::INFINITY;

    for k in 1..=params.max_iter {
        let (f_y, grad_y) = grad_eval(&y);

        // Backtracking: double L until the prox point passes the model test.
        let mut backtracks = 0;
        let (x_k, f_x, g_x, value, model) = loop {
            let d = lin_comb(&y, 1.0, &grad_y, -1.0 / l);
            let cand = fgp_denoise(&d, w / l, lambda, params.fgp_iters, params.fgp_tol);
            let f_c = f_eval(&cand);
            let g_c = g_of(&cand);
            let value = f_c + g_c;
            let mut quad = f_y + g_c;
            for ((cv, yv), gv) in cand.data.iter().zip(&y.data).zip(&grad_y.data) {
                let step = cv - yv;
                quad += step * gv + 0.5 * l * step * step;
            }
            if value.is_finite() && descent_holds(value, quad) {
                break (cand, f_c, g_c, value, quad);
            }
            backtracks += 1;
            if backtracks > MAX_BACKTRACKS {
                return Err(Error::NoConvergence {
                    solver: "objective backtracking",
                    iters: backtracks,
                    residual: value - quad,
                });
            }
            l /= params.eta;
        };

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let y_next = lin_comb(&x_k, 1.0 + (t - 1.0) / t_next, &x_prev, -(t - 1.0) / t_next);
        let moved = y_next.dist_sq(&y).sqrt();

        let iterate = FistaIterate {
            k,
            f: f_x,
            g: g_x,
            value,
            model,
            l,
            backtracks,
        };
        observer(&iterate, &x_k);
        history.push(iterate);
        if value < best_value {
            best_value = value;
            best_x = x_k.clone();
        }

        x_prev = x_k;
        y = y_next;
        t = t_next;
        if moved < params.delta {
            break;
        }
    }

    Ok(FistaResult {
        x: best_x,
        value: best_value,
        history,
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
