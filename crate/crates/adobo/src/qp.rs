//! Dense convex QP solver: primal-dual interior point with a Mehrotra
//! predictor-corrector step.
//!
//! Solves `min 1/2 z' P z + q' z  s.t.  G z <= h` for PSD `P`. Every
//! inequality gets a positive slack and multiplier; the reduced Newton
//! system `(P + G' D G) dz = rhs` is factorized by Cholesky each iteration.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpOptions {
    /// Target infinity-norm KKT residual.
    pub tol: f64,
    /// Residual below which the solution is still accepted at the
    /// iteration cap.
    pub accept_tol: f64,
    pub max_iterations: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { tol: 1e-9, accept_tol: 1e-6, max_iterations: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Inequality multipliers (nonnegative).
    pub dual: DVector<f64>,
    /// Infinity-norm KKT residual: stationarity, primal feasibility and
    /// complementarity.
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Infinity-norm KKT residual at `(z, s, dual)`.
fn kkt_residual(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    z: &DVector<f64>,
    s: &DVector<f64>,
    dual: &DVector<f64>,
) -> f64 {
    let r_dual = p * z + q + g.transpose() * dual;
    let r_prim = g * z + s - h;
    let mut res = r_dual.amax().max(if s.is_empty() { 0.0 } else { r_prim.amax() });
    for i in 0..s.len() {
        res = res.max((s[i] * dual[i]).abs());
    }
    res
}

fn factorize_reduced(m: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let scale = m.diagonal().amax().max(1.0);
    let mut reg = 0.0;
    loop {
        let mut attempt = m.clone();
        if reg > 0.0 {
            for i in 0..attempt.nrows() {
                attempt[(i, i)] += reg;
            }
        }
        if let Some(chol) = nalgebra::Cholesky::new(attempt) {
            return Some(chol);
        }
        reg = if reg == 0.0 { 1e-12 * scale } else { reg * 100.0 };
        if reg > 1e-4 * scale {
            return None;
        }
    }
}

/// Solve the inequality-constrained QP. `z0` seeds the primal iterate.
pub fn solve_qp(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    z0: Option<&DVector<f64>>,
    opts: &QpOptions,
) -> Result<QpSolution> {
    let n = q.len();
    let m = h.len();
    assert_eq!(p.nrows(), n);
    assert_eq!(g.nrows(), m);
    if m > 0 {
        assert_eq!(g.ncols(), n);
    }

    // Unconstrained case: one positive-definite solve.
    if m == 0 {
        let chol = factorize_reduced(p.clone()).ok_or(Error::QpNotConverged {
            residual: f64::INFINITY,
            iterations: 0,
        })?;
        let z = chol.solve(&(-q));
        let residual = (p * &z + q).amax();
        if residual > opts.accept_tol {
            return Err(Error::QpNotConverged { residual, iterations: 1 });
        }
        return Ok(QpSolution { z, dual: DVector::zeros(0), kkt_residual: residual, iterations: 1 });
    }

    let mut z = z0.cloned().unwrap_or_else(|| DVector::zeros(n));
    let gz = g * &z;
    let mut s = DVector::from_fn(m, |i, _| (h[i] - gz[i]).max(1.0));
    let mut dual = DVector::from_element(m, 1.0);

    let gt = g.transpose();
    let mut best: Option<(DVector<f64>, DVector<f64>, DVector<f64>, f64)> = None;
    let mut iterations = 0;

    for iter in 0..opts.max_iterations {
        iterations = iter + 1;
        let residual = kkt_residual(p, q, g, h, &z, &s, &dual);
        if best.as_ref().map(|(.., r)| residual < *r).unwrap_or(true) {
            best = Some((z.clone(), s.clone(), dual.clone(), residual));
        }
        if residual <= opts.tol {
            break;
        }

        let r_dual = p * &z + q + &gt * &dual;
        let r_prim = g * &z + &s - h;
        let mu = s.dot(&dual) / m as f64;
        if !residual.is_finite() || mu < 1e-18 {
            break;
        }

        // Reduced matrix P + G' diag(dual/s) G.
        let d: DVector<f64> = DVector::from_fn(m, |i, _| dual[i] / s[i]);
        let mut reduced = p.clone();
        // reduced += G' D G, built row by row.
        for i in 0..m {
            let gi = g.row(i);
            let di = d[i];
            for a in 0..n {
                let gia = gi[a];
                if gia == 0.0 {
                    continue;
                }
                let w = di * gia;
                for b in 0..n {
                    reduced[(a, b)] += w * gi[b];
                }
            }
        }
        let chol = match factorize_reduced(reduced) {
            Some(c) => c,
            None => break,
        };

        let solve_direction = |rc: &DVector<f64>, chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>| {
            // rc is the complementarity target: Lambda ds + S dlambda = rc.
            let mut gather = DVector::zeros(m);
            for i in 0..m {
                gather[i] = rc[i] / s[i] + d[i] * r_prim[i];
            }
            let rhs = -(&r_dual) - &gt * gather;
            let dz = chol.solve(&rhs);
            let ds = -(&r_prim) - g * &dz;
            let mut dl = DVector::zeros(m);
            for i in 0..m {
                dl[i] = (rc[i] - dual[i] * ds[i]) / s[i];
            }
            (dz, ds, dl)
        };

        // Predictor (affine) direction.
        let rc_aff = DVector::from_fn(m, |i, _| -s[i] * dual[i]);
        let (_dz_a, ds_a, dl_a) = solve_direction(&rc_aff, &chol);
        let alpha_aff = step_length(&s, &ds_a).min(step_length(&dual, &dl_a)).min(1.0);
        let mut mu_aff = 0.0;
        for i in 0..m {
            mu_aff += (s[i] + alpha_aff * ds_a[i]) * (dual[i] + alpha_aff * dl_a[i]);
        }
        mu_aff /= m as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let rc = DVector::from_fn(m, |i, _| sigma * mu - s[i] * dual[i] - ds_a[i] * dl_a[i]);
        let (dz, ds, dl) = solve_direction(&rc, &chol);
        let alpha = 0.99 * step_length(&s, &ds).min(step_length(&dual, &dl));
        let alpha = alpha.min(1.0);
        if !alpha.is_finite() || alpha <= 1e-14 {
            break;
        }
        z += alpha * &dz;
        s += alpha * &ds;
        dual += alpha * &dl;
    }

    let final_residual = kkt_residual(p, q, g, h, &z, &s, &dual);
    if best.as_ref().map(|(.., r)| final_residual < *r).unwrap_or(true) {
        best = Some((z, s, dual, final_residual));
    }
    let (z, _s, dual, residual) = best.expect("at least one iterate recorded");
    if residual <= opts.accept_tol {
        Ok(QpSolution { z, dual, kkt_residual: residual, iterations })
    } else {
        Err(Error::QpNotConverged { residual, iterations })
    }
}

/// Largest alpha in (0, 1e30] keeping `v + alpha dv >= 0`.
fn step_length(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = 1e30f64;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn solve(
        p: &DMatrix<f64>,
        q: &DVector<f64>,
        g: &DMatrix<f64>,
        h: &DVector<f64>,
    ) -> QpSolution {
        solve_qp(p, q, g, h, None, &QpOptions::default()).unwrap()
    }

    #[test]
    fn unconstrained_quadratic() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let q = DVector::from_vec(vec![-2.0, -8.0]);
        let sol = solve(&p, &q, &DMatrix::zeros(0, 2), &DVector::zeros(0));
        assert_relative_eq!(sol.z[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(sol.z[1], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn active_bound() {
        // min (z-2)^2 s.t. z <= 1  => z = 1.
        let p = DMatrix::from_row_slice(1, 1, &[2.0]);
        let q = DVector::from_vec(vec![-4.0]);
        let g = DMatrix::from_row_slice(1, 1, &[1.0]);
        let h = DVector::from_vec(vec![1.0]);
        let sol = solve(&p, &q, &g, &h);
        assert_relative_eq!(sol.z[0], 1.0, epsilon = 1e-7);
        assert!(sol.kkt_residual <= 1e-6);
        // Multiplier matches the stationarity condition 2(z-2) + lambda = 0.
        assert_relative_eq!(sol.dual[0], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn inactive_bound_recovers_unconstrained() {
        let p = DMatrix::from_row_slice(1, 1, &[2.0]);
        let q = DVector::from_vec(vec![-4.0]);
        let g = DMatrix::from_row_slice(1, 1, &[1.0]);
        let h = DVector::from_vec(vec![10.0]);
        let sol = solve(&p, &q, &g, &h);
        assert_relative_eq!(sol.z[0], 2.0, epsilon = 1e-7);
        assert!(sol.dual[0].abs() < 1e-6);
    }

    #[test]
    fn psd_hessian_with_linear_slack_direction() {
        // min 1/2 u^2 + 10 t  s.t.  1 - u <= t, -t <= 0.
        // Optimal: u = 1, t = 0 (for slope 10 > marginal quadratic cost 1).
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let q = DVector::from_vec(vec![0.0, 10.0]);
        let g = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 0.0, -1.0]);
        let h = DVector::from_vec(vec![-1.0, 0.0]);
        let sol = solve(&p, &q, &g, &h);
        assert_relative_eq!(sol.z[0], 1.0, epsilon = 1e-6);
        assert!(sol.z[1].abs() < 1e-6);
        assert!(sol.kkt_residual <= 1e-6);
    }

    #[test]
    fn reports_residual_when_stuck() {
        // Degenerate: minimize a linear function with no binding curvature
        // and contradictory scaling still yields an Err with a residual.
        let p = DMatrix::zeros(1, 1);
        let q = DVector::from_vec(vec![-1.0]);
        let g = DMatrix::zeros(0, 1);
        let h = DVector::zeros(0);
        let err = solve_qp(&p, &q, &g, &h, None, &QpOptions::default()).unwrap_err();
        assert!(err.to_string().contains("QP not converged"));
    }
}
