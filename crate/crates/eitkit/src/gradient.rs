//! Data-misfit evaluation and its gradient via adjoint solves.
//!
//! The misfit of a conductivity against measured electrode voltages is
//! `f(sigma) = sum_k ||U_h(sigma; I_k) - d_k||^2` over the driven current
//! patterns. Because the bilinear form is self-adjoint, the derivative with
//! respect to the conductivity on a single element comes out of one extra
//! solve per pattern: with the adjoint pair `(z, Z)` solving
//! `a_s(sigma; (z, Z), (v, V)) = <U_h - d, V>`, the gradient component on
//! element `T` is `-2 sum_k (grad_w u_k . grad_w z_k) |T|`.
//!
//! [`MisfitProblem`] bundles mesh, electrode model, patterns, and data so
//! that optimization loops can ask for values and gradients without
//! re-plumbing; [`fd_sweep`] produces the central-difference diagnostic rows
//! used to certify the gradient against an independent oracle.

use rayon::prelude::*;

use crate::forward::{
    assemble, solve_forward, solve_with_load, ConductivityField, CurrentPattern, ElectrodeModel,
    Factorization, ForwardSolution, GeneralLoad, LinearSystem,
};
use crate::mesh::Mesh;
use crate::wg::{weak_gradient, WgField};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Adjoint solve
// ---------------------------------------------------------------------------

/// Solution of the adjoint problem for one residual vector.
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    /// Adjoint potential.
    pub z: WgField,
    /// Adjoint electrode voltages, zero-sum.
    pub voltages: Vec<f64>,
    /// Relative residual of the full linear system at the returned solution.
    pub residual: f64,
}

/// Solves `a_s((z, Z), (v, V)) = <r, V>` against the forward factorization.
///
/// The right-hand side pairs only with the voltage component, so it occupies
/// the same slot as a current pattern; only the zero-sum part of `r` can act
/// on zero-sum voltages.
pub fn solve_adjoint(
    sys: &LinearSystem,
    factor: &Factorization,
    residual: &[f64],
) -> Result<AdjointSolution> {
    let load = GeneralLoad::from_currents(residual);
    let sol = solve_with_load(sys, factor, &load)?;
    Ok(AdjointSolution {
        z: sol.u,
        voltages: sol.voltages,
        residual: sol.residual,
    })
}

// ---------------------------------------------------------------------------
// Gradient assembly
// ---------------------------------------------------------------------------

/// Per-element derivative of the data misfit.
#[derive(Debug, Clone)]
pub struct MisfitGradient {
    /// One scalar per triangle.
    pub values: Vec<f64>,
}

/// Assembles the gradient from aligned forward/adjoint pairs:
/// component on `T` is `-2 sum_k (grad_w u_k . grad_w z_k) |T|`.
pub fn misfit_gradient(
    mesh: &Mesh,
    sigma: &ConductivityField,
    forward: &[ForwardSolution],
    adjoint: &[AdjointSolution],
) -> MisfitGradient {
    sigma.assert_conforms(mesh);
    assert_eq!(
        forward.len(),
        adjoint.len(),
        "{} forward vs {} adjoint solutions",
        forward.len(),
        adjoint.len()
    );
    let mut values = vec![0.0; mesh.triangles.len()];
    for (fwd, adj) in forward.iter().zip(adjoint) {
        let gu = weak_gradient(mesh, &fwd.u);
        let gz = weak_gradient(mesh, &adj.z);
        for t in 0..mesh.triangles.len() {
            values[t] -= 2.0 * mesh.area(t) * (gu[t][0] * gz[t][0] + gu[t][1] * gz[t][1]);
        }
    }
    MisfitGradient { values }
}

/// Sum of squared voltage misfits over all patterns.
pub fn misfit_value(predicted: &[Vec<f64>], measured: &[Vec<f64>]) -> f64 {
    assert_eq!(predicted.len(), measured.len(), "pattern count mismatch");
    predicted
        .iter()
        .zip(measured)
        .map(|(p, m)| {
            assert_eq!(p.len(), m.len(), "electrode count mismatch");
            p.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        })
        .sum()
}

// ---------------------------------------------------------------------------
// Misfit problem
// ---------------------------------------------------------------------------

/// A fixed measurement setup: everything needed to evaluate the misfit and
/// its gradient at any admissible conductivity.
pub struct MisfitProblem<'a> {
    /// Reconstruction mesh.
    pub mesh: &'a Mesh,
    /// Electrode model on that mesh.
    pub model: &'a ElectrodeModel,
    /// Driven current patterns.
    pub patterns: &'a [CurrentPattern],
    /// Measured voltages, one row per pattern.
    pub data: Vec<Vec<f64>>,
}

impl MisfitProblem<'_> {
    /// Forward-solves all patterns at `sigma`.
    fn solve_all(
        &self,
        sigma: &ConductivityField,
    ) -> Result<(LinearSystem, Factorization, Vec<ForwardSolution>)> {
        let sys = assemble(self.mesh, self.model, sigma);
        let factor = sys.factorize()?;
        let sols: Vec<ForwardSolution> = self
            .patterns
            .par_iter()
            .map(|p| solve_forward(&sys, &factor, p, None))
            .collect::<Result<_>>()?;
        Ok((sys, factor, sols))
    }

    /// Misfit value only (K forward solves).
    pub fn value(&self, sigma: &ConductivityField) -> Result<f64> {
        let (_, _, sols) = self.solve_all(sigma)?;
        let predicted: Vec<Vec<f64>> = sols.into_iter().map(|s| s.voltages).collect();
        Ok(misfit_value(&predicted, &self.data))
    }

    /// Misfit value and gradient (K forward + K adjoint solves sharing one
    /// factorization).
    pub fn value_and_gradient(
        &self,
        sigma: &ConductivityField,
    ) -> Result<(f64, MisfitGradient)> {
        let (sys, factor, sols) = self.solve_all(sigma)?;
        let residuals: Vec<Vec<f64>> = sols
            .iter()
            .zip(&self.data)
            .map(|(s, d)| s.voltages.iter().zip(d).map(|(a, b)| a - b).collect())
            .collect();
        let f = residuals
            .iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>())
            .sum();
        let adjoints: Vec<AdjointSolution> = residuals
            .par_iter()
            .map(|r| solve_adjoint(&sys, &factor, r))
            .collect::<Result<_>>()?;
        Ok((f, misfit_gradient(self.mesh, sigma, &sols, &adjoints)))
    }
}

// ---------------------------------------------------------------------------
// Finite-difference diagnostic
// ---------------------------------------------------------------------------

/// One row of the central-difference sweep.
#[derive(Debug, Clone)]
pub struct FdRow {
    /// Step size.
    pub t: f64,
    /// Central difference `(f(sigma + t a) - f(sigma - t a)) / 2t`.
    pub fd_value: f64,
    /// Adjoint-based directional derivative `<grad f, a>`.
    pub analytic_value: f64,
    /// `|fd - analytic| / |analytic|`.
    pub rel_err: f64,
}

/// Sweeps central differences of the misfit along `direction` over the given
/// steps, against the adjoint directional derivative.
///
/// Every probed conductivity must stay inside the admissible box, so pick
/// `sigma` away from the box faces or keep the steps small.
pub fn fd_sweep(
    problem: &MisfitProblem,
    sigma: &ConductivityField,
    direction: &[f64],
    steps: &[f64],
) -> Result<Vec<FdRow>> {
    assert_eq!(
        direction.len(),
        sigma.values.len(),
        "direction has {} components for {} elements",
        direction.len(),
        sigma.values.len()
    );
    let (_, grad) = problem.value_and_gradient(sigma)?;
    let analytic: f64 = grad
        .values
        .iter()
        .zip(direction)
        .map(|(g, d)| g * d)
        .sum();
    if analytic == 0.0 {
        return Err(Error::InvalidInput(
            "directional derivative is exactly zero; relative errors undefined".into(),
        ));
    }
    let shifted = |t: f64| -> Result<f64> {
        let values: Vec<f64> = sigma
            .values
            .iter()
            .zip(direction)
            .map(|(s, d)| s + t * d)
            .collect();
        problem.value(&ConductivityField::new(values, sigma.lambda)?)
    };
    steps
        .iter()
        .map(|&t| {
            let fd_value = (shifted(t)? - shifted(-t)?) / (2.0 * t);
            Ok(FdRow {
                t,
                fd_value,
                analytic_value: analytic,
                rel_err: (fd_value - analytic).abs() / analytic.abs(),
            })
        })
        .collect()
}

/// Least-squares slope of `log |fd - analytic|` against `log t`.
///
/// Rows whose difference sits at the floating-point floor are excluded:
/// central differencing cannot resolve errors below roughly
/// `eps * |f| / t`, and including saturated rows would flatten the slope.
pub fn fd_convergence_slope(rows: &[FdRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.rel_err > 1e-12)
        .map(|r| (r.t.ln(), ((r.fd_value - r.analytic_value).abs()).ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (sx, sy): (f64, f64) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / n, sy / n);
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(num / den)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
