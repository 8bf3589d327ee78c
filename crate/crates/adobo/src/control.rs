//! Controller synthesis for a hypothesized linear model: finite-horizon
//! time-varying LQR for quadratic costs, and a condensed convex MPC solve
//! for quadratic-plus-hinge costs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::qp::{solve_qp, QpOptions};
use crate::types::{ControlVector, CostSpec, LinearModel, StateVector};

/// Which synthesis path closed-loop evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    /// Pick LQR for quadratic costs, MPC when soft bounds are present.
    Auto,
    Lqr,
    Mpc,
}

impl ControllerKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "auto" => Ok(Self::Auto),
            "lqr" => Ok(Self::Lqr),
            "mpc" => Ok(Self::Mpc),
            other => Err(Error::Config(format!(
                "unknown controller '{other}' (expected auto|lqr|mpc)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Auto => "auto",
            Self::Lqr => "lqr",
            Self::Mpc => "mpc",
        }
    }
}

/// Time-varying finite-horizon LQR policy `u_k = u* + K_k (x_k - x*)`.
#[derive(Debug, Clone)]
pub struct LqrPolicy {
    /// Feedback gains `K_0 .. K_{N-1}`.
    pub gains: Vec<DMatrix<f64>>,
    /// Cost-to-go matrices `P_0 .. P_N` (with `P_N = Q_f`).
    pub value_mats: Vec<DMatrix<f64>>,
    pub x_ref: StateVector,
    pub u_ref: ControlVector,
}

impl LqrPolicy {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    /// Feedback law at step `k`.
    pub fn control(&self, x: &StateVector, k: usize) -> Result<ControlVector> {
        if k >= self.gains.len() {
            return Err(Error::DimensionMismatch(format!(
                "policy step {k} out of range (horizon {})",
                self.gains.len()
            )));
        }
        Ok(&self.u_ref + &self.gains[k] * (x - &self.x_ref))
    }

    /// Optimal cost-to-go from the initial error state.
    pub fn value(&self, x0: &StateVector) -> f64 {
        let dx = x0 - &self.x_ref;
        (&self.value_mats[0] * &dx).dot(&dx)
    }
}

/// Backward Riccati recursion over horizon `n`.
///
/// `P_N = Q_f`, `K_k = -(R + B' P_{k+1} B)^-1 B' P_{k+1} A`,
/// `P_k = Q + A' P_{k+1} A + A' P_{k+1} B K_k`.
pub fn lqr_backward(model: &LinearModel, cost: &CostSpec, n: usize) -> Result<LqrPolicy> {
    if cost.has_soft_bounds() {
        return Err(Error::Config(
            "LQR synthesis requires a purely quadratic cost (no soft bounds)".into(),
        ));
    }
    if model.state_dim() != cost.state_dim() || model.control_dim() != cost.control_dim() {
        return Err(Error::DimensionMismatch(
            "model and cost dimensions disagree".into(),
        ));
    }
    let a = &model.a;
    let b = &model.b;
    let mut p = cost.q_f.clone();
    let mut value_mats = vec![p.clone()];
    let mut gains_rev: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    for k in (0..n).rev() {
        let pb = &p * b;
        let m = &cost.r + b.transpose() * &pb;
        let chol = nalgebra::Cholesky::new(m).ok_or(Error::RiccatiBreakdown { step: k })?;
        let gain = -chol.solve(&(pb.transpose() * a));
        let mut p_new = &cost.q + a.transpose() * &p * a + a.transpose() * &pb * &gain;
        // Symmetrize to keep the recursion well conditioned.
        p_new = (&p_new + p_new.transpose()) * 0.5;
        if p_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::RiccatiBreakdown { step: k });
        }
        gains_rev.push(gain);
        value_mats.push(p_new.clone());
        p = p_new;
    }
    gains_rev.reverse();
    value_mats.reverse();
    Ok(LqrPolicy {
        gains: gains_rev,
        value_mats,
        x_ref: cost.x_ref.clone(),
        u_ref: cost.u_ref.clone(),
    })
}

/// Condensed open-loop solve over the tail horizon `{start, .., n-1}` for
/// the hypothesized model, from the measured state `x_init`.
///
/// Dynamics are eliminated by condensing; hinge terms become slack
/// variables with `s >= lower - x`, `s >= x - upper`, `s >= 0` and a linear
/// `weight * sum(s)` objective. The KKT residual of the underlying QP must
/// reach 1e-6 or the solve is rejected.
pub fn mpc_solve(
    model: &LinearModel,
    cost: &CostSpec,
    x_init: &StateVector,
    start: usize,
    n: usize,
) -> Result<Vec<ControlVector>> {
    mpc_solve_with_residual(model, cost, x_init, start, n).map(|(controls, _)| controls)
}

/// [`mpc_solve`] plus the achieved KKT residual of the condensed QP.
pub fn mpc_solve_with_residual(
    model: &LinearModel,
    cost: &CostSpec,
    x_init: &StateVector,
    start: usize,
    n: usize,
) -> Result<(Vec<ControlVector>, f64)> {
    if start >= n {
        return Err(Error::Config(format!(
            "mpc_solve needs start < horizon, got start={start}, horizon={n}"
        )));
    }
    if model.state_dim() != cost.state_dim() || model.control_dim() != cost.control_dim() {
        return Err(Error::DimensionMismatch(
            "model and cost dimensions disagree".into(),
        ));
    }
    let steps = n - start;
    let n_x = model.state_dim();
    let n_u = model.control_dim();
    let n_ctrl = steps * n_u;

    // Powers of A and the free response e_i = A^i x_init.
    let mut pow = Vec::with_capacity(steps + 1);
    pow.push(DMatrix::identity(n_x, n_x));
    for i in 1..=steps {
        pow.push(&model.a * &pow[i - 1]);
    }
    let free: Vec<DVector<f64>> = (0..=steps).map(|i| &pow[i] * x_init).collect();
    let apow_b: Vec<DMatrix<f64>> = (0..steps).map(|j| &pow[j] * &model.b).collect();

    // Explosive model predictions make the condensed system too badly
    // scaled to meet the KKT tolerance in f64; reject them up front.
    let scale = pow
        .iter()
        .map(|m| m.amax())
        .chain(free.iter().map(|v| v.amax()))
        .fold(0.0f64, f64::max);
    if !scale.is_finite() || scale > 1e8 {
        return Err(Error::QpNotConverged { residual: f64::INFINITY, iterations: 0 });
    }

    // Soft-bound bookkeeping: slack per (future state, constrained component).
    let soft = cost.soft_bounds.as_ref().filter(|_| cost.has_soft_bounds());
    let constrained: Vec<usize> = soft
        .map(|sb| {
            (0..n_x)
                .filter(|&c| sb.lower[c].is_finite() || sb.upper[c].is_finite())
                .collect()
        })
        .unwrap_or_default();
    let n_slack = steps * constrained.len();
    let dim = n_ctrl + n_slack;

    let mut p_qp = DMatrix::zeros(dim, dim);
    let mut q_qp = DVector::zeros(dim);

    // Control effort: block diagonal R and its reference term.
    for i in 0..steps {
        let off = i * n_u;
        for a in 0..n_u {
            for b in 0..n_u {
                p_qp[(off + a, off + b)] += 2.0 * cost.r[(a, b)];
            }
        }
        let ru = &cost.r * &cost.u_ref;
        for a in 0..n_u {
            q_qp[off + a] -= 2.0 * ru[a];
        }
    }

    // State terms: x_{start+i} = free[i] + sum_{j<i} A^{i-1-j} B u_j.
    // Accumulate G_i' Q_i G_i and G_i' Q_i (free_i - x_ref) block by block.
    for i in 1..=steps {
        let qi = if i < steps { &cost.q } else { &cost.q_f };
        let dx = &free[i] - &cost.x_ref;
        let blocks: Vec<&DMatrix<f64>> = (0..i).map(|j| &apow_b[i - 1 - j]).collect();
        // Cache Q_i * block_j.
        let qb: Vec<DMatrix<f64>> = blocks.iter().map(|gb| qi * *gb).collect();
        let qdx = qi * &dx;
        for j in 0..i {
            let contrib_lin = blocks[j].transpose() * &qdx;
            for a in 0..n_u {
                q_qp[j * n_u + a] += 2.0 * contrib_lin[a];
            }
            for l in 0..i {
                let contrib = blocks[j].transpose() * &qb[l];
                for a in 0..n_u {
                    for b in 0..n_u {
                        p_qp[(j * n_u + a, l * n_u + b)] += 2.0 * contrib[(a, b)];
                    }
                }
            }
        }
    }

    // Slack objective and inequality system.
    let mut g_rows: Vec<DVector<f64>> = Vec::new();
    let mut h_vals: Vec<f64> = Vec::new();
    if let Some(sb) = soft {
        for i in 1..=steps {
            for (ci, &c) in constrained.iter().enumerate() {
                let t = n_ctrl + (i - 1) * constrained.len() + ci;
                q_qp[t] += sb.weight;
                // s >= 0
                let mut row = DVector::zeros(dim);
                row[t] = -1.0;
                g_rows.push(row);
                h_vals.push(0.0);
                // State row c of G_i on the controls.
                let mut state_row = DVector::zeros(n_ctrl);
                for j in 0..i {
                    let gb = &apow_b[i - 1 - j];
                    for a in 0..n_u {
                        state_row[j * n_u + a] = gb[(c, a)];
                    }
                }
                if sb.lower[c].is_finite() {
                    // lower - x <= s  =>  -row.u - s <= free - lower
                    let mut row = DVector::zeros(dim);
                    for k in 0..n_ctrl {
                        row[k] = -state_row[k];
                    }
                    row[t] = -1.0;
                    g_rows.push(row);
                    h_vals.push(free[i][c] - sb.lower[c]);
                }
                if sb.upper[c].is_finite() {
                    // x - upper <= s  =>  row.u - s <= upper - free
                    let mut row = DVector::zeros(dim);
                    for k in 0..n_ctrl {
                        row[k] = state_row[k];
                    }
                    row[t] = -1.0;
                    g_rows.push(row);
                    h_vals.push(sb.upper[c] - free[i][c]);
                }
            }
        }
    }

    let m = g_rows.len();
    let mut g = DMatrix::zeros(m, dim);
    for (r, row) in g_rows.iter().enumerate() {
        g.set_row(r, &row.transpose());
    }
    let h = DVector::from_vec(h_vals);

    let opts = QpOptions::default();
    let sol = solve_qp(&p_qp, &q_qp, &g, &h, None, &opts)?;

    let controls = (0..steps)
        .map(|i| DVector::from_fn(n_u, |a, _| sol.z[i * n_u + a]))
        .collect();
    Ok((controls, sol.kkt_residual))
}

/// A synthesized controller for one hypothesized model.
#[derive(Debug, Clone)]
pub enum Controller {
    Lqr(LqrPolicy),
    Mpc { model: LinearModel, cost: CostSpec, horizon: usize },
    /// Fixed state feedback `u = u* + K (x - x*)`, used when the gain
    /// itself is the search parameter.
    Static { gain: DMatrix<f64>, x_ref: StateVector, u_ref: ControlVector },
}

impl Controller {
    /// Build the controller requested by `kind` (resolving `Auto` from the
    /// cost structure) for the full horizon `n`.
    pub fn synthesize(
        model: &LinearModel,
        cost: &CostSpec,
        n: usize,
        kind: ControllerKind,
    ) -> Result<Controller> {
        let resolved = match kind {
            ControllerKind::Auto => {
                if cost.has_soft_bounds() {
                    ControllerKind::Mpc
                } else {
                    ControllerKind::Lqr
                }
            }
            k => k,
        };
        match resolved {
            ControllerKind::Lqr => Ok(Controller::Lqr(lqr_backward(model, cost, n)?)),
            ControllerKind::Mpc => Ok(Controller::Mpc {
                model: model.clone(),
                cost: cost.clone(),
                horizon: n,
            }),
            ControllerKind::Auto => unreachable!(),
        }
    }

    /// First control of the tail-horizon plan at step `k` from state `x`.
    ///
    /// The LQR path reuses one backward pass: the gain for step `k` of the
    /// full recursion equals the gain for step 0 of the recursion restricted
    /// to `{k, .., N}`. The MPC path re-solves the tail problem.
    pub fn first_control(&self, x: &StateVector, k: usize) -> Result<ControlVector> {
        match self {
            Controller::Lqr(policy) => policy.control(x, k),
            Controller::Mpc { model, cost, horizon } => {
                let plan = mpc_solve(model, cost, x, k, *horizon)?;
                Ok(plan.into_iter().next().expect("mpc horizon is nonempty"))
            }
            Controller::Static { gain, x_ref, u_ref } => Ok(u_ref + gain * (x - x_ref)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SoftStateBounds;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_model() -> LinearModel {
        LinearModel::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0))
            .unwrap()
    }

    fn scalar_cost() -> CostSpec {
        CostSpec::regulation(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap()
    }

    fn lin2d_model() -> LinearModel {
        LinearModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn scalar_one_step_closed_form() {
        let policy = lqr_backward(&scalar_model(), &scalar_cost(), 1).unwrap();
        assert_relative_eq!(policy.gains[0][(0, 0)], -0.5, epsilon = 1e-12);
        assert_relative_eq!(policy.value_mats[0][(0, 0)], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn scalar_horizon_30_matches_reported_optimum() {
        let policy = lqr_backward(&scalar_model(), &scalar_cost(), 30).unwrap();
        let value = policy.value(&DVector::from_vec(vec![1.0]));
        // Fixed point of p = 1 + p - p^2/(1+p) is the golden ratio.
        assert_relative_eq!(value, (1.0 + 5.0f64.sqrt()) / 2.0, epsilon = 1e-6);
        assert!((value - 1.61).abs() < 0.01);
    }

    #[test]
    fn zero_input_matrix_gives_zero_gains() {
        let model =
            LinearModel::new(DMatrix::from_element(1, 1, 0.7), DMatrix::zeros(1, 1)).unwrap();
        let policy = lqr_backward(&model, &scalar_cost(), 10).unwrap();
        for k in &policy.gains {
            assert_eq!(k[(0, 0)], 0.0);
        }
    }

    #[test]
    fn lqr_rejects_soft_bounds() {
        let mut cost = scalar_cost();
        cost.soft_bounds = Some(
            SoftStateBounds::new(
                DVector::from_vec(vec![0.0]),
                DVector::from_vec(vec![f64::INFINITY]),
                10.0,
            )
            .unwrap(),
        );
        assert!(lqr_backward(&scalar_model(), &cost, 5).is_err());
    }

    fn random_model_cost(rng: &mut ChaCha8Rng) -> (LinearModel, CostSpec) {
        let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(2, 1, |_, _| rng.gen_range(-1.0..1.0));
        let q = DMatrix::identity(2, 2) * rng.gen_range(0.5..2.0);
        let r = DMatrix::identity(1, 1) * rng.gen_range(0.5..2.0);
        let qf = DMatrix::identity(2, 2) * rng.gen_range(0.5..2.0);
        (
            LinearModel::new(a, b).unwrap(),
            CostSpec::regulation(q, r, qf).unwrap(),
        )
    }

    #[test]
    fn value_mats_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (model, cost) = random_model_cost(&mut rng);
            let policy = lqr_backward(&model, &cost, 12).unwrap();
            for p in &policy.value_mats {
                assert!((p - p.transpose()).amax() < 1e-10);
                let eigs = p.clone().symmetric_eigenvalues();
                assert!(eigs.iter().all(|&e| e >= -1e-9), "P not PSD: {eigs:?}");
            }
        }
    }

    #[test]
    fn certainty_equivalence_value_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let (model, cost) = random_model_cost(&mut rng);
            let n = 15;
            let policy = lqr_backward(&model, &cost, n).unwrap();
            let x0 = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            // Simulate the hypothesized model under its own policy.
            let mut x = x0.clone();
            let mut cost_sum = 0.0;
            for k in 0..n {
                let u = policy.control(&x, k).unwrap();
                cost_sum += (&cost.q * &x).dot(&x) + (&cost.r * &u).dot(&u);
                x = model.step(&x, &u);
            }
            cost_sum += (&cost.q_f * &x).dot(&x);
            let value = policy.value(&x0);
            assert_relative_eq!(cost_sum, value, max_relative = 1e-8);
        }
    }

    #[test]
    fn shrinking_horizon_gain_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (model, cost) = random_model_cost(&mut rng);
        let n = 12;
        let full = lqr_backward(&model, &cost, n).unwrap();
        for k in 0..n {
            let tail = lqr_backward(&model, &cost, n - k).unwrap();
            assert!(
                (&full.gains[k] - &tail.gains[0]).amax() < 1e-10,
                "gain mismatch at step {k}"
            );
        }
    }

    #[test]
    fn mpc_without_bounds_matches_lqr_first_control() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let (model, cost) = random_model_cost(&mut rng);
            let n = 10;
            let policy = lqr_backward(&model, &cost, n).unwrap();
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            for k in [0usize, 3, 7] {
                let plan = mpc_solve(&model, &cost, &x, k, n).unwrap();
                let lqr_u = policy.control(&x, k).unwrap();
                assert!(
                    (&plan[0] - &lqr_u).amax() < 1e-5,
                    "MPC {:?} vs LQR {:?} at step {k}",
                    plan[0],
                    lqr_u
                );
            }
        }
    }

    #[test]
    fn mpc_scalar_single_step() {
        let plan =
            mpc_solve(&scalar_model(), &scalar_cost(), &DVector::from_vec(vec![1.0]), 0, 1)
                .unwrap();
        assert_relative_eq!(plan[0][0], -0.5, epsilon = 1e-6);
    }

    #[test]
    fn first_control_at_reference_is_reference_input() {
        let model = lin2d_model();
        let cost = CostSpec::regulation(
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let ctrl = Controller::synthesize(&model, &cost, 10, ControllerKind::Auto).unwrap();
        let u = ctrl.first_control(&DVector::zeros(2), 0).unwrap();
        assert!(u.amax() < 1e-12);
    }

    fn hinge_cost_2d() -> CostSpec {
        CostSpec::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DVector::zeros(1),
            Some(
                SoftStateBounds::new(
                    DVector::from_vec(vec![0.5, -0.4]),
                    DVector::from_vec(vec![f64::INFINITY, f64::INFINITY]),
                    100.0,
                )
                .unwrap(),
            ),
        )
        .unwrap()
    }

    /// Brute-force oracle: enumerate active sets of the same condensed QP
    /// and take the feasible optimum.
    fn enumerate_qp(
        p: &DMatrix<f64>,
        q: &DVector<f64>,
        g: &DMatrix<f64>,
        h: &DVector<f64>,
    ) -> DVector<f64> {
        let n = q.len();
        let m = h.len();
        assert!(m <= 14, "enumeration oracle limited to small systems");
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1 << m) {
            let active: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
            let na = active.len();
            let mut kkt = DMatrix::zeros(n + na, n + na);
            kkt.view_mut((0, 0), (n, n)).copy_from(p);
            for (row, &i) in active.iter().enumerate() {
                for col in 0..n {
                    kkt[(n + row, col)] = g[(i, col)];
                    kkt[(col, n + row)] = g[(i, col)];
                }
            }
            let mut rhs = DVector::zeros(n + na);
            for i in 0..n {
                rhs[i] = -q[i];
            }
            for (row, &i) in active.iter().enumerate() {
                rhs[n + row] = h[i];
            }
            let lu = kkt.clone().full_piv_lu();
            let Some(sol) = lu.solve(&rhs) else { continue };
            if (&kkt * &sol - &rhs).amax() > 1e-8 * (1.0 + rhs.amax()) {
                continue; // singular or inconsistent working set
            }
            let z = sol.rows(0, n).into_owned();
            let slack_ok = (0..m).all(|i| (g.row(i) * &z)[0] <= h[i] + 1e-9);
            if !slack_ok {
                continue;
            }
            let obj = 0.5 * (p * &z).dot(&z) + q.dot(&z);
            if best.as_ref().map(|(b, _)| obj < *b).unwrap_or(true) {
                best = Some((obj, z));
            }
        }
        best.expect("slack formulation is always feasible").1
    }

    #[test]
    fn mpc_matches_active_set_enumeration_small_horizon() {
        // Rebuild the exact condensed QP the solver sees for the 2D system
        // with lower bounds (0.5, -0.4), weight 100, horizon 3.
        let model = lin2d_model();
        let cost = hinge_cost_2d();
        let x0 = DVector::from_vec(vec![0.6, 0.0]);
        let n = 3;
        let plan = mpc_solve(&model, &cost, &x0, 0, n).unwrap();

        // Condense by hand for the oracle.
        let steps = n;
        let mut pow = vec![DMatrix::identity(2, 2)];
        for i in 1..=steps {
            pow.push(&model.a * &pow[i - 1]);
        }
        let free: Vec<DVector<f64>> = (0..=steps).map(|i| &pow[i] * &x0).collect();
        let gmat: Vec<DMatrix<f64>> = (1..=steps)
            .map(|i| {
                let mut gi = DMatrix::zeros(2, steps);
                for j in 0..i {
                    gi.set_column(j, &(&pow[i - 1 - j] * &model.b).column(0));
                }
                gi
            })
            .collect();
        let n_dec = steps + steps * 2; // controls + slacks for both components
        let mut p = DMatrix::zeros(n_dec, n_dec);
        let mut q = DVector::zeros(n_dec);
        for i in 0..steps {
            p[(i, i)] += 2.0;
        }
        for i in 1..=steps {
            let qi = DMatrix::<f64>::identity(2, 2);
            let gi = &gmat[i - 1];
            let quad = gi.transpose() * &qi * gi * 2.0;
            for a in 0..steps {
                for b in 0..steps {
                    p[(a, b)] += quad[(a, b)];
                }
            }
            let lin = gi.transpose() * &qi * &free[i] * 2.0;
            for a in 0..steps {
                q[a] += lin[a];
            }
        }
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut hs: Vec<f64> = Vec::new();
        let lower = [0.5, -0.4];
        for i in 1..=steps {
            for c in 0..2 {
                let t = steps + (i - 1) * 2 + c;
                q[t] += 100.0;
                let mut row = DVector::zeros(n_dec);
                row[t] = -1.0;
                rows.push(row);
                hs.push(0.0);
                let mut row = DVector::zeros(n_dec);
                for j in 0..steps {
                    row[j] = -gmat[i - 1][(c, j)];
                }
                row[t] = -1.0;
                rows.push(row);
                hs.push(free[i][c] - lower[c]);
            }
        }
        let mut g = DMatrix::zeros(rows.len(), n_dec);
        for (r, row) in rows.iter().enumerate() {
            g.set_row(r, &row.transpose());
        }
        let h = DVector::from_vec(hs);

        let z_star = enumerate_qp(&p, &q, &g, &h);
        for i in 0..steps {
            assert!(
                (plan[i][0] - z_star[i]).abs() < 1e-4,
                "u[{i}] = {} vs enumeration {}",
                plan[i][0],
                z_star[i]
            );
        }
        // The hinge should actually be active in this setup.
        let ipm_obj = {
            let u = DVector::from_fn(steps, |i, _| plan[i][0]);
            let mut full = DVector::zeros(n_dec);
            for i in 0..steps {
                full[i] = u[i];
            }
            for i in 1..=steps {
                for c in 0..2 {
                    let x_ic = free[i][c] + (gmat[i - 1].row(c) * &u)[0];
                    full[steps + (i - 1) * 2 + c] = (lower[c] - x_ic).max(0.0);
                }
            }
            0.5 * (&p * &full).dot(&full) + q.dot(&full)
        };
        let enum_obj = 0.5 * (&p * &z_star).dot(&z_star) + q.dot(&z_star);
        assert!((ipm_obj - enum_obj).abs() < 1e-4 * (1.0 + enum_obj.abs()));
    }

    #[test]
    fn mpc_objective_dominates_lqr_policy_under_active_constraints() {
        let model = lin2d_model();
        let cost = hinge_cost_2d();
        let x0 = DVector::from_vec(vec![0.6, 0.0]);
        let n = 6;

        let mpc_plan = mpc_solve(&model, &cost, &x0, 0, n).unwrap();
        let lqr = lqr_backward(&model, &cost.quadratic_part(), n).unwrap();

        let objective = |controls: &[ControlVector]| -> f64 {
            let mut x = x0.clone();
            let mut states = vec![x.clone()];
            for u in controls {
                x = model.step(&x, u);
                states.push(x.clone());
            }
            let traj = crate::types::Trajectory::new(states, controls.to_vec()).unwrap();
            crate::types::evaluate_cost(&traj, &cost).unwrap()
        };

        let mut x = x0.clone();
        let mut lqr_controls = Vec::new();
        for k in 0..n {
            let u = lqr.control(&x, k).unwrap();
            x = model.step(&x, &u);
            lqr_controls.push(u);
        }
        let mpc_obj = objective(&mpc_plan);
        let lqr_obj = objective(&lqr_controls);
        assert!(
            mpc_obj <= lqr_obj + 1e-8,
            "MPC objective {mpc_obj} should not exceed LQR objective {lqr_obj}"
        );

        // Without active constraints the two coincide.
        let far = DVector::from_vec(vec![5.0, 0.0]);
        let mpc_far = mpc_solve(&model, &cost.quadratic_part(), &far, 0, 3).unwrap();
        let lqr_far = lqr_backward(&model, &cost.quadratic_part(), 3).unwrap();
        assert!((&mpc_far[0] - &lqr_far.control(&far, 0).unwrap()).amax() < 1e-5);
    }
}
