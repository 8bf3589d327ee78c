//! Ground-truth simulators for the benchmark systems.
//!
//! The continuous plants (Dubins car, cart-pole) are discretized with a
//! forward-Euler step at a fixed rate; the linear plants are exact
//! one-step maps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{ControlVector, LinearModel, StateVector, Trajectory};

/// Default discretization period for the continuous plants (10 Hz).
pub const DEFAULT_DT: f64 = 0.1;

/// States with norm beyond this are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// Cart-pole physical parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleParams {
    /// Cart mass [kg].
    pub cart_mass: f64,
    /// Pendulum tip mass [kg].
    pub pole_mass: f64,
    /// Pendulum length [m].
    pub pole_length: f64,
    /// Gravity [m/s^2].
    pub gravity: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.5,
            pole_mass: 0.175,
            pole_length: 0.28,
            gravity: 9.81,
        }
    }
}

/// One of the benchmark plants.
#[derive(Debug, Clone, PartialEq)]
pub enum Plant {
    /// Unicycle: state (x, y, heading), control (speed, turn rate).
    Dubins { dt: f64 },
    /// Scalar integrator x' = x + u.
    Linear1d,
    /// Double integrator x' = x + y, y' = y + u.
    Linear2d,
    /// Cart with inverted pendulum: state (x, xdot, angle, angledot),
    /// control = horizontal force on the cart.
    CartPole { dt: f64, params: CartPoleParams },
}

impl Plant {
    pub fn dubins() -> Self {
        Plant::Dubins { dt: DEFAULT_DT }
    }

    pub fn cart_pole() -> Self {
        Plant::CartPole { dt: DEFAULT_DT, params: CartPoleParams::default() }
    }

    /// Parse the plant name used in experiment configs.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "dubins" => Ok(Plant::dubins()),
            "lin1d" => Ok(Plant::Linear1d),
            "lin2d" => Ok(Plant::Linear2d),
            "cartpole" => Ok(Plant::cart_pole()),
            other => Err(Error::Config(format!(
                "unknown plant '{other}' (expected dubins|lin1d|lin2d|cartpole)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Plant::Dubins { .. } => "dubins",
            Plant::Linear1d => "lin1d",
            Plant::Linear2d => "lin2d",
            Plant::CartPole { .. } => "cartpole",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Plant::Dubins { .. } => 3,
            Plant::Linear1d => 1,
            Plant::Linear2d => 2,
            Plant::CartPole { .. } => 4,
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            Plant::Dubins { .. } => 2,
            Plant::CartPole { .. } | Plant::Linear1d | Plant::Linear2d => 1,
        }
    }

    /// The exact `(A, B)` pair for the linear plants.
    pub fn exact_linear_model(&self) -> Option<LinearModel> {
        match self {
            Plant::Linear1d => Some(
                LinearModel::new(
                    DMatrix::from_element(1, 1, 1.0),
                    DMatrix::from_element(1, 1, 1.0),
                )
                .unwrap(),
            ),
            Plant::Linear2d => Some(
                LinearModel::new(
                    DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
                    DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
                )
                .unwrap(),
            ),
            _ => None,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Plant::Linear1d | Plant::Linear2d)
    }

    /// Advance the true plant one step.
    pub fn step(&self, x: &StateVector, u: &ControlVector) -> Result<StateVector> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} expects state dim {}, got {}",
                self.name(),
                self.state_dim(),
                x.len()
            )));
        }
        if u.len() != self.control_dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} expects control dim {}, got {}",
                self.name(),
                self.control_dim(),
                u.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control"));
        }
        match self {
            Plant::Dubins { dt } => {
                let (v, omega) = (u[0], u[1]);
                let heading = x[2];
                Ok(DVector::from_vec(vec![
                    x[0] + dt * v * heading.cos(),
                    x[1] + dt * v * heading.sin(),
                    x[2] + dt * omega,
                ]))
            }
            Plant::Linear1d => Ok(DVector::from_vec(vec![x[0] + u[0]])),
            Plant::Linear2d => Ok(DVector::from_vec(vec![x[0] + x[1], x[1] + u[0]])),
            Plant::CartPole { dt, params } => {
                let (xdot, angle, angledot) = (x[1], x[2], x[3]);
                let force = u[0];
                let (accel, angaccel) = cart_pole_accelerations(params, angle, angledot, force)?;
                Ok(DVector::from_vec(vec![
                    x[0] + dt * xdot,
                    x[1] + dt * accel,
                    x[2] + dt * angledot,
                    x[3] + dt * angaccel,
                ]))
            }
        }
    }

    /// Roll the plant forward under an open-loop control sequence.
    pub fn rollout(&self, x0: &StateVector, controls: &[ControlVector]) -> Result<Trajectory> {
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(x0.clone());
        for (k, u) in controls.iter().enumerate() {
            let next = self.step(states.last().unwrap(), u)?;
            if next.iter().any(|v| !v.is_finite()) || next.norm() > DIVERGENCE_NORM {
                return Err(Error::Diverged { step: k });
            }
            states.push(next);
        }
        Trajectory::new(states, controls.to_vec())
    }
}

/// Solve the coupled cart-pole force balance for the two accelerations.
///
/// The 2x2 system is
///   (M+m) xddot - m l cos(a) addot = F - m l adot^2 sin(a)
///   -cos(a) xddot + l addot        = g sin(a)
pub fn cart_pole_accelerations(
    params: &CartPoleParams,
    angle: f64,
    angledot: f64,
    force: f64,
) -> Result<(f64, f64)> {
    let CartPoleParams { cart_mass: m_cart, pole_mass: m_pole, pole_length: l, gravity: g } =
        *params;
    let c = angle.cos();
    let s = angle.sin();
    let a11 = m_cart + m_pole;
    let a12 = -m_pole * l * c;
    let a21 = -c;
    let a22 = l;
    let det = a11 * a22 - a12 * a21;
    // det = (M+m) l - m l cos^2 >= M l > 0 for physical parameters.
    if det.abs() < 1e-9 {
        return Err(Error::SingularConfiguration { det });
    }
    let b1 = force - m_pole * l * angledot * angledot * s;
    let b2 = g * s;
    let accel = (a22 * b1 - a12 * b2) / det;
    let angaccel = (a11 * b2 - a21 * b1) / det;
    Ok((accel, angaccel))
}

/// Central finite-difference Jacobian linearization of the discrete step map
/// around `(x_ref, u_ref)`.
pub fn jacobian_linearization(
    plant: &Plant,
    x_ref: &StateVector,
    u_ref: &ControlVector,
) -> Result<LinearModel> {
    let n_x = plant.state_dim();
    let n_u = plant.control_dim();
    let h = 1e-6;
    let mut a = DMatrix::zeros(n_x, n_x);
    for j in 0..n_x {
        let mut xp = x_ref.clone();
        let mut xm = x_ref.clone();
        xp[j] += h;
        xm[j] -= h;
        let fp = plant.step(&xp, u_ref)?;
        let fm = plant.step(&xm, u_ref)?;
        a.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    let mut b = DMatrix::zeros(n_x, n_u);
    for j in 0..n_u {
        let mut up = u_ref.clone();
        let mut um = u_ref.clone();
        up[j] += h;
        um[j] -= h;
        let fp = plant.step(x_ref, &up)?;
        let fm = plant.step(x_ref, &um)?;
        b.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    LinearModel::new(a, b)
}
