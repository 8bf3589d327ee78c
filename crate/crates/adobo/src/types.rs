//! Shared domain types: states, trajectories, model parameter vectors and
//! quadratic(+hinge) cost specifications.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Plant state, a dense real vector of dimension `n_x`.
pub type StateVector = DVector<f64>;

/// Control input, a dense real vector of dimension `n_u`.
pub type ControlVector = DVector<f64>;

/// A finite-horizon state/control record: `N + 1` states and `N` controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<StateVector>,
    pub controls: Vec<ControlVector>,
}

impl Trajectory {
    pub fn new(states: Vec<StateVector>, controls: Vec<ControlVector>) -> Result<Self> {
        if states.len() != controls.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "trajectory needs N+1 states for N controls; got {} states, {} controls",
                states.len(),
                controls.len()
            )));
        }
        Ok(Self { states, controls })
    }

    /// Horizon `N` (number of controls).
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().all(|x| x.iter().all(|v| v.is_finite()))
            && self.controls.iter().all(|u| u.iter().all(|v| v.is_finite()))
    }
}

/// Per-dimension closed interval box `[lo_d, hi_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBounds {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl ParamBounds {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch(format!(
                "bounds lo/hi lengths differ: {} vs {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
            return Err(Error::Config("bounds require lo <= hi per dimension".into()));
        }
        Ok(Self { lo, hi })
    }

    /// Same interval `[lo, hi]` replicated over `dim` dimensions.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lo: DVector::from_element(dim, lo),
            hi: DVector::from_element(dim, hi),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_finite(&self) -> bool {
        self.lo.iter().all(|v| v.is_finite()) && self.hi.iter().all(|v| v.is_finite())
    }

    pub fn contains(&self, v: &DVector<f64>) -> bool {
        v.len() == self.dim()
            && v.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .all(|(x, (l, h))| *x >= *l && *x <= *h)
    }

    /// Project a point onto the box, componentwise.
    pub fn clamp(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |d, _| v[d].clamp(self.lo[d], self.hi[d]))
    }

    pub fn width(&self, d: usize) -> f64 {
        self.hi[d] - self.lo[d]
    }

    pub fn mean_width(&self) -> f64 {
        (&self.hi - &self.lo).mean()
    }
}

/// Packed search-space point: the parameter vector the optimizer moves
/// through, with optional box bounds attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: DVector<f64>,
    pub bounds: Option<ParamBounds>,
}

impl ParamVector {
    pub fn new(values: DVector<f64>) -> Self {
        Self { values, bounds: None }
    }

    pub fn with_bounds(mut self, bounds: ParamBounds) -> Result<Self> {
        if bounds.dim() != self.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "bounds dim {} != parameter dim {}",
                bounds.dim(),
                self.values.len()
            )));
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Linear time-invariant model hypothesis `x' = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "B rows {} must match A size {}",
                b.nrows(),
                a.nrows()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    /// One step of the model map.
    pub fn step(&self, x: &StateVector, u: &ControlVector) -> StateVector {
        &self.a * x + &self.b * u
    }
}

/// Number of parameters needed to pack an `n_x` x `n_x` A and `n_x` x `n_u` B.
pub fn model_param_dim(n_x: usize, n_u: usize) -> usize {
    n_x * (n_x + n_u)
}

/// Flatten `(A, B)` into a parameter vector: A's entries row-major, then B's.
pub fn pack_model(model: &LinearModel) -> ParamVector {
    let n_x = model.state_dim();
    let n_u = model.control_dim();
    let mut values = Vec::with_capacity(model_param_dim(n_x, n_u));
    for i in 0..n_x {
        for j in 0..n_x {
            values.push(model.a[(i, j)]);
        }
    }
    for i in 0..n_x {
        for j in 0..n_u {
            values.push(model.b[(i, j)]);
        }
    }
    ParamVector::new(DVector::from_vec(values))
}

/// Inverse of [`pack_model`].
pub fn unpack_model(theta: &DVector<f64>, n_x: usize, n_u: usize) -> Result<LinearModel> {
    let expected = model_param_dim(n_x, n_u);
    if theta.len() != expected {
        return Err(Error::ThetaShapeMismatch {
            expected,
            actual: theta.len(),
        });
    }
    let a = DMatrix::from_fn(n_x, n_x, |i, j| theta[i * n_x + j]);
    let off = n_x * n_x;
    let b = DMatrix::from_fn(n_x, n_u, |i, j| theta[off + i * n_u + j]);
    LinearModel::new(a, b)
}

/// Soft componentwise state box, penalized linearly with weight `lambda`.
///
/// Infinite entries disable the corresponding side.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftStateBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub weight: f64,
}

impl SoftStateBounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>, weight: f64) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(
                "soft bound lower/upper lengths differ".into(),
            ));
        }
        if lower.iter().zip(upper.iter()).any(|(l, h)| l > h) {
            return Err(Error::Config("soft bounds require lower <= upper".into()));
        }
        if !(weight >= 0.0) {
            return Err(Error::Config("soft bound weight must be >= 0".into()));
        }
        Ok(Self { lower, upper, weight })
    }

    /// Hinge penalty of a single state, summed over components.
    pub fn penalty(&self, x: &StateVector) -> f64 {
        let mut p = 0.0;
        for j in 0..x.len() {
            p += (self.lower[j] - x[j]).max(x[j] - self.upper[j]).max(0.0);
        }
        self.weight * p
    }
}

/// Quadratic stage/terminal penalties with references and optional soft
/// state bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_f: DMatrix<f64>,
    pub x_ref: StateVector,
    pub u_ref: ControlVector,
    pub soft_bounds: Option<SoftStateBounds>,
}

impl CostSpec {
    /// Pure quadratic regulation cost toward the origin.
    pub fn regulation(q: DMatrix<f64>, r: DMatrix<f64>, q_f: DMatrix<f64>) -> Result<Self> {
        let n_x = q.nrows();
        let n_u = r.nrows();
        Self::new(q, r, q_f, DVector::zeros(n_x), DVector::zeros(n_u), None)
    }

    pub fn new(
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        q_f: DMatrix<f64>,
        x_ref: StateVector,
        u_ref: ControlVector,
        soft_bounds: Option<SoftStateBounds>,
    ) -> Result<Self> {
        let n_x = x_ref.len();
        let n_u = u_ref.len();
        for (m, name, n) in [(&q, "Q", n_x), (&q_f, "Q_f", n_x), (&r, "R", n_u)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{name} must be {n}x{n}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        if let Some(sb) = &soft_bounds {
            if sb.lower.len() != n_x {
                return Err(Error::DimensionMismatch(
                    "soft bounds dim must match state dim".into(),
                ));
            }
        }
        Ok(Self { q, r, q_f, x_ref, u_ref, soft_bounds })
    }

    pub fn state_dim(&self) -> usize {
        self.x_ref.len()
    }

    pub fn control_dim(&self) -> usize {
        self.u_ref.len()
    }

    pub fn has_soft_bounds(&self) -> bool {
        self.soft_bounds
            .as_ref()
            .map(|sb| {
                sb.weight > 0.0
                    && (sb.lower.iter().any(|v| v.is_finite())
                        || sb.upper.iter().any(|v| v.is_finite()))
            })
            .unwrap_or(false)
    }

    /// Drop the hinge term, keeping the quadratic part.
    pub fn quadratic_part(&self) -> CostSpec {
        CostSpec { soft_bounds: None, ..self.clone() }
    }
}

fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (m * v).dot(v)
}

/// Total cost of a trajectory: stage quadratics, terminal quadratic, and the
/// hinge penalty over every state when soft bounds are present.
pub fn evaluate_cost(traj: &Trajectory, cost: &CostSpec) -> Result<f64> {
    let n = traj.horizon();
    if traj.states[0].len() != cost.state_dim() {
        return Err(Error::DimensionMismatch(format!(
            "state dim {} != cost dim {}",
            traj.states[0].len(),
            cost.state_dim()
        )));
    }
    if n > 0 && traj.controls[0].len() != cost.control_dim() {
        return Err(Error::DimensionMismatch(format!(
            "control dim {} != cost dim {}",
            traj.controls[0].len(),
            cost.control_dim()
        )));
    }
    let mut total = 0.0;
    for k in 0..n {
        let dx = &traj.states[k] - &cost.x_ref;
        let du = &traj.controls[k] - &cost.u_ref;
        total += quad_form(&cost.q, &dx) + quad_form(&cost.r, &du);
    }
    let dxn = &traj.states[n] - &cost.x_ref;
    total += quad_form(&cost.q_f, &dxn);
    if let Some(sb) = &cost.soft_bounds {
        for x in &traj.states {
            total += sb.penalty(x);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dm(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn pack_scalar_identity() {
        let m = LinearModel::new(dm(1, 1, &[1.0]), dm(1, 1, &[1.0])).unwrap();
        let theta = pack_model(&m);
        assert_eq!(theta.values.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn pack_zero_model() {
        let m = LinearModel::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1)).unwrap();
        let theta = pack_model(&m);
        assert_eq!(theta.dim(), 6);
        assert!(theta.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unpack_scalar() {
        let m = unpack_model(&DVector::from_vec(vec![1.0, 1.0]), 1, 1).unwrap();
        assert_eq!(m.a[(0, 0)], 1.0);
        assert_eq!(m.b[(0, 0)], 1.0);
    }

    #[test]
    fn unpack_wrong_length_errors() {
        let err = unpack_model(&DVector::from_vec(vec![1.0; 5]), 2, 1).unwrap_err();
        assert!(err.to_string().contains("theta/shape mismatch"));
    }

    #[test]
    fn unpack_15_dim_shapes() {
        let theta = DVector::from_iterator(15, (0..15).map(|i| i as f64));
        let m = unpack_model(&theta, 3, 2).unwrap();
        assert_eq!(m.a, dm(3, 3, &[0., 1., 2., 3., 4., 5., 6., 7., 8.]));
        assert_eq!(m.b, dm(3, 2, &[9., 10., 11., 12., 13., 14.]));
    }

    #[test]
    fn cost_zero_at_reference() {
        let cost = CostSpec::regulation(
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let traj = Trajectory::new(
            vec![DVector::zeros(2); 4],
            vec![DVector::zeros(1); 3],
        )
        .unwrap();
        assert_eq!(evaluate_cost(&traj, &cost).unwrap(), 0.0);
    }

    #[test]
    fn cost_scalar_one_step() {
        let cost = CostSpec::regulation(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let traj = Trajectory::new(
            vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![0.5])],
            vec![DVector::from_vec(vec![-0.5])],
        )
        .unwrap();
        assert_relative_eq!(evaluate_cost(&traj, &cost).unwrap(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn hinge_below_lower_bound() {
        let sb = SoftStateBounds::new(
            DVector::from_vec(vec![0.5]),
            DVector::from_vec(vec![f64::INFINITY]),
            100.0,
        )
        .unwrap();
        let p = sb.penalty(&DVector::from_vec(vec![0.3]));
        assert_relative_eq!(p, 20.0, epsilon = 1e-12);
    }

    #[test]
    fn hinge_vacuous_bounds_are_free() {
        let sb = SoftStateBounds::new(
            DVector::from_element(3, f64::NEG_INFINITY),
            DVector::from_element(3, f64::INFINITY),
            100.0,
        )
        .unwrap();
        assert_eq!(sb.penalty(&DVector::from_vec(vec![5.0, -9.0, 0.0])), 0.0);
    }

    proptest! {
        #[test]
        fn pack_unpack_roundtrip(entries in proptest::collection::vec(-10.0f64..10.0, 15)) {
            let theta = DVector::from_vec(entries);
            let m = unpack_model(&theta, 3, 2).unwrap();
            let repacked = pack_model(&m);
            prop_assert_eq!(repacked.values, theta);
        }

        #[test]
        fn cost_nonnegative(
            xs in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), 4),
            us in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 1), 3),
        ) {
            let cost = CostSpec::regulation(
                DMatrix::identity(2, 2),
                DMatrix::identity(1, 1),
                DMatrix::identity(2, 2),
            ).unwrap();
            let traj = Trajectory::new(
                xs.into_iter().map(DVector::from_vec).collect(),
                us.into_iter().map(DVector::from_vec).collect(),
            ).unwrap();
            prop_assert!(evaluate_cost(&traj, &cost).unwrap() >= 0.0);
        }

        #[test]
        fn hinge_zero_inside_box(x in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let sb = SoftStateBounds::new(
                DVector::from_element(3, -1.0),
                DVector::from_element(3, 1.0),
                50.0,
            ).unwrap();
            prop_assert_eq!(sb.penalty(&DVector::from_vec(x)), 0.0);
        }
    }
}
