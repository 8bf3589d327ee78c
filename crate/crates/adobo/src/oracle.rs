//! Best-achievable-cost oracle on the true plant.
//!
//! The regret metric needs the minimum cost any open-loop control sequence
//! can reach on the real system. Linear-quadratic cases are exact (Riccati
//! value); linear plants with hinge costs solve one convex program; the
//! nonlinear plants get a multistart quasi-Newton descent with
//! finite-difference gradients and a stationarity certificate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::control::{lqr_backward, mpc_solve_with_residual, Controller, ControllerKind};
use crate::error::{Error, Result};
use crate::plants::{jacobian_linearization, Plant};
use crate::types::{evaluate_cost, ControlVector, CostSpec, ParamBounds, StateVector};

/// Gradient-norm certificate required from the multistart descent.
pub const GRADIENT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    /// Exact Riccati value on a linear plant with quadratic cost.
    Riccati,
    /// One condensed convex solve on a linear plant with hinge cost.
    ConvexProgram,
    /// Multistart finite-difference descent on a nonlinear plant.
    Multistart,
}

impl OracleMethod {
    pub fn name(&self) -> &'static str {
        match self {
            OracleMethod::Riccati => "riccati",
            OracleMethod::ConvexProgram => "convex",
            OracleMethod::Multistart => "multistart",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub value: f64,
    /// Quality certificate: 0 for the exact path, the QP KKT residual for
    /// the convex path, the gradient norm for the multistart path.
    pub certificate: f64,
    pub method: OracleMethod,
    pub controls: Vec<ControlVector>,
}

/// Exact optimum for a linear plant under a purely quadratic cost.
pub fn oracle_linear(plant: &Plant, cost: &CostSpec, x0: &StateVector, n: usize) -> Result<f64> {
    let model = plant.exact_linear_model().ok_or_else(|| {
        Error::Config(format!("plant '{}' is not linear; use the nonlinear oracle", plant.name()))
    })?;
    if cost.has_soft_bounds() {
        return Err(Error::Config(
            "cost has soft bounds; use the convex or nonlinear oracle".into(),
        ));
    }
    let policy = lqr_backward(&model, cost, n)?;
    Ok(policy.value(x0))
}

/// Exact optimum for a linear plant under a convex quadratic+hinge cost:
/// the full-horizon condensed program solved once.
pub fn oracle_linear_convex(
    plant: &Plant,
    cost: &CostSpec,
    x0: &StateVector,
    n: usize,
) -> Result<OracleOutcome> {
    let model = plant.exact_linear_model().ok_or_else(|| {
        Error::Config(format!("plant '{}' is not linear; use the nonlinear oracle", plant.name()))
    })?;
    let (controls, residual) = mpc_solve_with_residual(&model, cost, x0, 0, n)?;
    let traj = plant.rollout(x0, &controls)?;
    let value = evaluate_cost(&traj, cost)?;
    Ok(OracleOutcome { value, certificate: residual, method: OracleMethod::ConvexProgram, controls })
}

/// Open-loop trajectory optimization on the true plant: multistart BFGS
/// with central finite-difference gradients. Starts from the zero sequence,
/// a closed-loop warm start synthesized from the Jacobian linearization,
/// and uniform random sequences from `input_bounds`.
///
/// Errors when no start reaches the gradient certificate.
pub fn oracle_nonlinear<R: Rng>(
    plant: &Plant,
    cost: &CostSpec,
    x0: &StateVector,
    n: usize,
    seeds: usize,
    input_bounds: &ParamBounds,
    rng: &mut R,
) -> Result<OracleOutcome> {
    let n_u = plant.control_dim();
    let dim = n * n_u;
    let objective = |u_flat: &DVector<f64>| -> f64 {
        let controls = split_controls(u_flat, n, n_u);
        match plant.rollout(x0, &controls) {
            Ok(traj) => evaluate_cost(&traj, cost).unwrap_or(f64::INFINITY),
            Err(_) => f64::INFINITY,
        }
    };

    let mut starts: Vec<DVector<f64>> = vec![DVector::zeros(dim)];
    if let Some(warm) = closed_loop_warm_start(plant, cost, x0, n) {
        starts.push(warm);
    }
    while starts.len() < seeds.max(2) {
        starts.push(DVector::from_fn(dim, |d, _| {
            let c = d % n_u;
            rng.gen_range(input_bounds.lo[c]..=input_bounds.hi[c])
        }));
    }

    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    for start in &starts {
        let (point, value, grad_norm) = bfgs_descent(&objective, start, GRADIENT_TOL, 400);
        if best
            .as_ref()
            .map(|(bv, bg, _)| (value, grad_norm) < (*bv, *bg))
            .unwrap_or(true)
        {
            best = Some((value, grad_norm, point));
        }
    }
    let (value, certificate, point) = best.expect("at least the zero start runs");
    if certificate > GRADIENT_TOL || !value.is_finite() {
        return Err(Error::OracleNotConverged { value, certificate });
    }
    Ok(OracleOutcome {
        value,
        certificate,
        method: OracleMethod::Multistart,
        controls: split_controls(&point, n, n_u),
    })
}

/// Dispatch to the cheapest exact oracle available for the problem class.
pub fn compute_oracle<R: Rng>(
    plant: &Plant,
    cost: &CostSpec,
    x0: &StateVector,
    n: usize,
    seeds: usize,
    input_bounds: &ParamBounds,
    rng: &mut R,
) -> Result<OracleOutcome> {
    if plant.is_linear() {
        if cost.has_soft_bounds() {
            oracle_linear_convex(plant, cost, x0, n)
        } else {
            let value = oracle_linear(plant, cost, x0, n)?;
            Ok(OracleOutcome {
                value,
                certificate: 0.0,
                method: OracleMethod::Riccati,
                controls: Vec::new(),
            })
        }
    } else {
        oracle_nonlinear(plant, cost, x0, n, seeds, input_bounds, rng)
    }
}

fn split_controls(u_flat: &DVector<f64>, n: usize, n_u: usize) -> Vec<ControlVector> {
    (0..n)
        .map(|k| DVector::from_fn(n_u, |a, _| u_flat[k * n_u + a]))
        .collect()
}

/// Controls collected by running the Jacobian-linearization controller in
/// closed loop on the true plant.
fn closed_loop_warm_start(
    plant: &Plant,
    cost: &CostSpec,
    x0: &StateVector,
    n: usize,
) -> Option<DVector<f64>> {
    let jac = jacobian_linearization(plant, &cost.x_ref, &cost.u_ref).ok()?;
    let kind = if cost.has_soft_bounds() { ControllerKind::Mpc } else { ControllerKind::Lqr };
    let controller = Controller::synthesize(&jac, cost, n, kind).ok()?;
    let mut x = x0.clone();
    let mut flat = Vec::with_capacity(n * plant.control_dim());
    for k in 0..n {
        let u = controller.first_control(&x, k).ok()?;
        if u.iter().any(|v| !v.is_finite()) {
            return None;
        }
        x = plant.step(&x, &u).ok()?;
        if x.iter().any(|v| !v.is_finite()) || x.norm() > crate::plants::DIVERGENCE_NORM {
            return None;
        }
        flat.extend(u.iter().copied());
    }
    Some(DVector::from_vec(flat))
}

/// Central finite-difference gradient with per-coordinate step
/// `h = 1e-6 (1 + |u|)`.
fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(f: &F, u: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(u.len());
    for d in 0..u.len() {
        let h = 1e-6 * (1.0 + u[d].abs());
        let mut up = u.clone();
        let mut um = u.clone();
        up[d] += h;
        um[d] -= h;
        g[d] = (f(&up) - f(&um)) / (2.0 * h);
    }
    g
}

/// Dense BFGS with Armijo backtracking. Returns (point, value, grad norm).
fn bfgs_descent<F: Fn(&DVector<f64>) -> f64>(
    f: &F,
    start: &DVector<f64>,
    gtol: f64,
    max_iters: usize,
) -> (DVector<f64>, f64, f64) {
    let dim = start.len();
    let mut x = start.clone();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return (x, fx, f64::INFINITY);
    }
    let mut g = fd_gradient(f, &x);
    let mut h_inv = DMatrix::<f64>::identity(dim, dim);

    for _ in 0..max_iters {
        let gnorm = g.norm();
        if gnorm <= gtol {
            return (x, fx, gnorm);
        }
        let mut dir = -(&h_inv * &g);
        if dir.dot(&g) >= 0.0 {
            // Not a descent direction; reset curvature.
            h_inv = DMatrix::identity(dim, dim);
            dir = -g.clone();
        }
        // Backtracking Armijo line search.
        let slope = g.dot(&dir);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let cand = &x + alpha * &dir;
            let fc = f(&cand);
            if fc.is_finite() && fc <= fx + 1e-4 * alpha * slope {
                let g_new = fd_gradient(f, &cand);
                let s = alpha * &dir;
                let y = &g_new - &g;
                let sy = s.dot(&y);
                if sy > 1e-12 * s.norm() * y.norm() {
                    // BFGS inverse update.
                    let rho = 1.0 / sy;
                    let hy = &h_inv * &y;
                    let yhy = y.dot(&hy);
                    let term = (&s * s.transpose()) * (rho * rho * yhy + rho);
                    let cross = (&hy * s.transpose()) * rho;
                    h_inv = h_inv + term - &cross - cross.transpose();
                }
                x = cand;
                fx = fc;
                g = g_new;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return (x, fx, g.norm());
        }
    }
    (x, fx, g.norm())
}
