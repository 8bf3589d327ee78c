//! The closed-loop tuning loop: evaluate a hypothesized model on the real
//! plant, feed the measured cost to the surrogate, and query the next model.
//!
//! All search-based methods (model tuning and the BO baselines) run through
//! the same harness, [`run_bo_loop`]; they differ only in how a parameter
//! vector is decoded into a controller.

use nalgebra::DVector;

use crate::bo::{next_query, sample_uniform, AcquisitionConfig};
use crate::control::{Controller, ControllerKind};
use crate::error::{Error, Result};
use crate::gp::{fit_hyperparams, warp, GpModel, HyperFitOptions, KernelParams};
use crate::oracle::compute_oracle;
use crate::plants::{Plant, DIVERGENCE_NORM};
use crate::rng::{stream_rng, RngStream};
use crate::types::{
    evaluate_cost, model_param_dim, unpack_model, CostSpec, ParamBounds, SoftStateBounds,
    StateVector, Trajectory,
};

/// Fallback penalty when even the zero-control baseline diverges.
const FALLBACK_PENALTY: f64 = 1e9;

/// The experiment methods exposed by the harness and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Search over linear model parameters (the primary method).
    Adobo,
    /// Tune diagonal penalty matrices around a (noisy) known linearization.
    QrTuning,
    /// Directly search over a static feedback gain.
    KLearning,
    /// Iterative least-squares system identification.
    LsIdentification,
    /// Directly search over the open-loop control sequence.
    ControlSequence,
}

impl Method {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "adobo" => Ok(Method::Adobo),
            "qr" => Ok(Method::QrTuning),
            "klearn" => Ok(Method::KLearning),
            "ls" => Ok(Method::LsIdentification),
            "useq" => Ok(Method::ControlSequence),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected adobo|qr|klearn|ls|useq)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Adobo => "adobo",
            Method::QrTuning => "qr",
            Method::KLearning => "klearn",
            Method::LsIdentification => "ls",
            Method::ControlSequence => "useq",
        }
    }
}

/// Everything needed to reproduce one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub method: Method,
    pub plant: Plant,
    pub cost: CostSpec,
    pub x0: StateVector,
    /// Task horizon `N`.
    pub horizon: usize,
    /// Search box for the model parameters.
    pub bounds: ParamBounds,
    /// One-step control box (control-sequence search, oracle multistarts).
    pub input_bounds: ParamBounds,
    pub budget: usize,
    pub seed: u64,
    /// Model the log of the cost instead of the raw cost.
    pub warp: bool,
    pub controller: ControllerKind,
    /// Known best achievable cost; computed by the oracle when absent.
    pub oracle_value: Option<f64>,
    /// Seed for oracle multistarts (shared across runs so every seed
    /// compares against the same reference).
    pub oracle_seed: u64,
    /// Multistart count for the nonlinear oracle.
    pub oracle_multistarts: usize,
    /// Optional explicit initial parameter points (else one random draw).
    pub init_params: Vec<DVector<f64>>,
    pub acquisition: AcquisitionConfig,
    pub hyper: HyperFitOptions,
    /// Mixing weight for the noisy linearization of the penalty-tuning
    /// baseline.
    pub qr_alpha: f64,
    /// Seed for the fixed random matrices mixed into that linearization.
    pub noise_seed: u64,
}

impl ExperimentConfig {
    /// Canonical benchmark setup per plant name.
    pub fn preset(plant: &str) -> Result<Self> {
        match plant {
            "dubins" => Ok(Self::dubins()),
            "lin1d" => Ok(Self::lin1d()),
            "lin2d" => Ok(Self::lin2d_hinge()),
            "cartpole" => Ok(Self::cart_pole()),
            other => Err(Error::Config(format!(
                "no preset for plant '{other}' (expected dubins|lin1d|lin2d|cartpole)"
            ))),
        }
    }

    fn base(
        plant: Plant,
        cost: CostSpec,
        x0: StateVector,
        horizon: usize,
        bounds: ParamBounds,
        input_bounds: ParamBounds,
        budget: usize,
    ) -> Self {
        let width = bounds.mean_width();
        let hyper = HyperFitOptions {
            lengthscale_range: (0.01 * width, 10.0 * width),
            ..Default::default()
        };
        Self {
            method: Method::Adobo,
            plant,
            cost,
            x0,
            horizon,
            bounds,
            input_bounds,
            budget,
            seed: 0,
            warp: true,
            controller: ControllerKind::Auto,
            oracle_value: None,
            oracle_seed: 0,
            oracle_multistarts: 6,
            init_params: Vec::new(),
            acquisition: AcquisitionConfig::default(),
            hyper,
            qr_alpha: 0.0,
            noise_seed: 7,
        }
    }

    /// Unicycle regulation to the origin from (1.5, 1, pi/2) with identity
    /// penalties over 30 steps; 15 model parameters in [-2, 2].
    pub fn dubins() -> Self {
        let plant = Plant::dubins();
        let cost = CostSpec::regulation(
            nalgebra::DMatrix::identity(3, 3),
            nalgebra::DMatrix::identity(2, 2),
            nalgebra::DMatrix::identity(3, 3),
        )
        .unwrap();
        Self::base(
            plant,
            cost,
            DVector::from_vec(vec![1.5, 1.0, std::f64::consts::FRAC_PI_2]),
            30,
            ParamBounds::uniform(15, -2.0, 2.0),
            ParamBounds::uniform(2, -2.0, 2.0),
            150,
        )
    }

    /// Scalar integrator with unit penalties from x0 = 1 over 30 steps.
    pub fn lin1d() -> Self {
        let cost = CostSpec::regulation(
            nalgebra::DMatrix::identity(1, 1),
            nalgebra::DMatrix::identity(1, 1),
            nalgebra::DMatrix::identity(1, 1),
        )
        .unwrap();
        Self::base(
            Plant::Linear1d,
            cost,
            DVector::from_vec(vec![1.0]),
            30,
            ParamBounds::uniform(2, -2.0, 2.0),
            ParamBounds::uniform(1, -2.0, 2.0),
            100,
        )
    }

    /// Double integrator with identity penalties plus soft lower bounds
    /// (0.5, -0.4) at weight 100; the optimal controller rides the bound,
    /// so this is the hinge-cost benchmark.
    pub fn lin2d_hinge() -> Self {
        let soft = SoftStateBounds::new(
            DVector::from_vec(vec![0.5, -0.4]),
            DVector::from_vec(vec![f64::INFINITY, f64::INFINITY]),
            100.0,
        )
        .unwrap();
        let cost = CostSpec::new(
            nalgebra::DMatrix::identity(2, 2),
            nalgebra::DMatrix::identity(1, 1),
            nalgebra::DMatrix::identity(2, 2),
            DVector::zeros(2),
            DVector::zeros(1),
            Some(soft),
        )
        .unwrap();
        Self::base(
            Plant::Linear2d,
            cost,
            DVector::from_vec(vec![2.0, 0.0]),
            30,
            ParamBounds::uniform(6, -2.0, 2.0),
            ParamBounds::uniform(1, -2.0, 2.0),
            600,
        )
    }

    /// Same plant and start as [`Self::lin2d_hinge`] but purely quadratic.
    pub fn lin2d_quadratic() -> Self {
        let mut config = Self::lin2d_hinge();
        config.cost.soft_bounds = None;
        config.budget = 100;
        config
    }

    /// Cart-pole swing regulation from a 30-degree offset with heavy angle
    /// penalties, a cart-position box and an overshoot bound.
    pub fn cart_pole() -> Self {
        let q = nalgebra::DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 1.0, 100.0, 1.0]));
        let soft = SoftStateBounds::new(
            DVector::from_vec(vec![-2.0, f64::NEG_INFINITY, -0.1, f64::NEG_INFINITY]),
            DVector::from_vec(vec![2.0, f64::INFINITY, f64::INFINITY, f64::INFINITY]),
            100.0,
        )
        .unwrap();
        let cost = CostSpec::new(
            q.clone(),
            nalgebra::DMatrix::from_element(1, 1, 0.1),
            q,
            DVector::zeros(4),
            DVector::zeros(1),
            Some(soft),
        )
        .unwrap();
        Self::base(
            Plant::cart_pole(),
            cost,
            DVector::from_vec(vec![0.0, 0.0, std::f64::consts::FRAC_PI_6, 0.0]),
            30,
            ParamBounds::uniform(20, -2.0, 2.0),
            ParamBounds::uniform(1, -10.0, 10.0),
            250,
        )
    }

    /// Resolved controller kind for this cost.
    pub fn resolved_controller(&self) -> ControllerKind {
        match self.controller {
            ControllerKind::Auto => {
                if self.cost.has_soft_bounds() {
                    ControllerKind::Mpc
                } else {
                    ControllerKind::Lqr
                }
            }
            k => k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget < 1 {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        if !self.bounds.is_finite() || !self.input_bounds.is_finite() {
            return Err(Error::Config("search bounds must be finite".into()));
        }
        let n_x = self.plant.state_dim();
        let n_u = self.plant.control_dim();
        if self.x0.len() != n_x {
            return Err(Error::Config(format!(
                "x0 has dim {}, plant '{}' needs {}",
                self.x0.len(),
                self.plant.name(),
                n_x
            )));
        }
        if self.cost.state_dim() != n_x || self.cost.control_dim() != n_u {
            return Err(Error::Config("cost dimensions do not match the plant".into()));
        }
        if self.input_bounds.dim() != n_u {
            return Err(Error::Config("input bounds must have one entry per control".into()));
        }
        if self.method == Method::Adobo || self.method == Method::LsIdentification {
            let expected = model_param_dim(n_x, n_u);
            if self.bounds.dim() != expected {
                return Err(Error::Config(format!(
                    "model search bounds need dim {expected}, got {}",
                    self.bounds.dim()
                )));
            }
        }
        if let Some(v) = self.oracle_value {
            if !(v > 0.0) {
                return Err(Error::Config("oracle value must be positive".into()));
            }
        }
        if self.resolved_controller() == ControllerKind::Lqr && self.cost.has_soft_bounds() {
            return Err(Error::Config(
                "lqr controller requires a purely quadratic cost; use mpc".into(),
            ));
        }
        if self.method == Method::QrTuning && self.cost.has_soft_bounds() {
            return Err(Error::Config("penalty tuning requires a quadratic cost".into()));
        }
        if !(0.0..=1.0).contains(&self.qr_alpha) {
            return Err(Error::Config("qr_alpha must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Relative regret of the best cost against the oracle optimum, in percent.
pub fn eta(best_cost: f64, j_star: f64) -> f64 {
    100.0 * (best_cost - j_star) / j_star
}

/// One line of the per-iteration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// 1-based evaluation index.
    pub iteration: usize,
    /// The evaluated parameter vector.
    pub params: DVector<f64>,
    /// Measured closed-loop cost (or the divergence penalty).
    pub cost: f64,
    /// The value handed to the surrogate (log cost when warping).
    pub warped_cost: f64,
    /// Best cost seen so far.
    pub best_cost: f64,
    /// Regret of `best_cost` in percent.
    pub eta: f64,
    pub flag: Option<String>,
}

/// Result of evaluating one candidate on the true plant.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    /// The measured trajectory; partial (or `None`) when the run diverged.
    pub trajectory: Option<Trajectory>,
    pub cost: f64,
    pub flag: Option<String>,
}

impl EvalOutcome {
    fn penalized(trajectory: Option<Trajectory>, penalty: f64, reason: &str) -> Self {
        Self { trajectory, cost: penalty, flag: Some(reason.to_string()) }
    }
}

/// Cost charged to candidates whose evaluation diverges: ten times the
/// zero-control rollout cost.
pub fn divergence_penalty(plant: &Plant, cost: &CostSpec, x0: &StateVector, n: usize) -> f64 {
    let zeros = vec![DVector::zeros(plant.control_dim()); n];
    match plant.rollout(x0, &zeros) {
        Ok(traj) => match evaluate_cost(&traj, cost) {
            Ok(c) => 10.0 * c.max(1e-6),
            Err(_) => FALLBACK_PENALTY,
        },
        Err(_) => FALLBACK_PENALTY,
    }
}

/// Extra multiplier for failures that produced no measurement at all (the
/// controller could not even be run); keeps them ranked strictly worse than
/// any measured divergence so the surrogate is not drawn toward them.
const NO_INFORMATION_FACTOR: f64 = 1e13;

/// Penalty charged when an evaluation fails at some step: never below the
/// zero-control floor, but extrapolated from the measured partial cost so
/// the surrogate still sees how badly (and how fast) the candidate failed.
/// With no partial data the penalty is pushed above every measurable cost.
fn shaped_penalty(
    cost: &CostSpec,
    partial: Option<&Trajectory>,
    base_penalty: f64,
    n: usize,
) -> f64 {
    let extrapolated = partial
        .filter(|t| t.horizon() > 0)
        .and_then(|t| evaluate_cost(t, cost).ok())
        .filter(|c| c.is_finite())
        .map(|c| c * n as f64 / partial.map(|t| t.horizon()).unwrap_or(1).max(1) as f64);
    match extrapolated {
        Some(c) => base_penalty.max(c),
        None => base_penalty * NO_INFORMATION_FACTOR,
    }
}

/// Run `controller` in closed loop on the true plant for `n` steps,
/// recording states as they are measured. Divergence, non-finite controls
/// and failed per-step solves yield a penalized outcome built from the
/// partial trajectory.
pub fn run_closed_loop(
    plant: &Plant,
    cost: &CostSpec,
    x0: &StateVector,
    n: usize,
    controller: &Controller,
    penalty: f64,
) -> EvalOutcome {
    let mut states = vec![x0.clone()];
    let mut controls = Vec::with_capacity(n);
    let fail = |states: Vec<StateVector>, controls: Vec<DVector<f64>>| {
        let partial = Trajectory::new(states, controls).ok();
        let shaped = shaped_penalty(cost, partial.as_ref(), penalty, n);
        EvalOutcome::penalized(partial, shaped, "penalized")
    };
    for k in 0..n {
        let u = match controller.first_control(states.last().unwrap(), k) {
            Ok(u) if u.iter().all(|v| v.is_finite()) => u,
            _ => return fail(states, controls),
        };
        let next = match plant.step(states.last().unwrap(), &u) {
            Ok(x) if x.iter().all(|v| v.is_finite()) => x,
            _ => return fail(states, controls),
        };
        controls.push(u);
        states.push(next);
        if states.last().unwrap().norm() > DIVERGENCE_NORM {
            return fail(states, controls);
        }
    }
    let traj = Trajectory::new(states, controls).expect("lengths maintained");
    match evaluate_cost(&traj, cost) {
        Ok(c) if c.is_finite() => EvalOutcome { trajectory: Some(traj), cost: c, flag: None },
        _ => EvalOutcome::penalized(None, penalty, "penalized"),
    }
}

/// Open-loop analogue of [`run_closed_loop`] for control-sequence
/// candidates, with the same divergence handling.
pub fn open_loop_evaluate(
    plant: &Plant,
    cost: &CostSpec,
    x0: &StateVector,
    controls: &[DVector<f64>],
    penalty: f64,
) -> EvalOutcome {
    let mut states = vec![x0.clone()];
    let fail = |states: Vec<StateVector>, n_ctrl: usize, controls: &[DVector<f64>]| {
        let partial = Trajectory::new(states, controls[..n_ctrl].to_vec()).ok();
        let shaped = shaped_penalty(cost, partial.as_ref(), penalty, controls.len());
        EvalOutcome::penalized(partial, shaped, "penalized")
    };
    for (k, u) in controls.iter().enumerate() {
        let next = match plant.step(states.last().unwrap(), u) {
            Ok(x) if x.iter().all(|v| v.is_finite()) => x,
            _ => return fail(states, k, controls),
        };
        states.push(next);
        if states.last().unwrap().norm() > DIVERGENCE_NORM {
            return fail(states, k + 1, controls);
        }
    }
    let traj = Trajectory::new(states, controls.to_vec()).expect("lengths maintained");
    match evaluate_cost(&traj, cost) {
        Ok(c) if c.is_finite() => EvalOutcome { trajectory: Some(traj), cost: c, flag: None },
        _ => EvalOutcome::penalized(None, penalty, "penalized"),
    }
}

/// Decode a parameter vector as a model, synthesize its controller, run it
/// on the true plant and measure the task cost.
pub fn closed_loop_evaluate(config: &ExperimentConfig, theta: &DVector<f64>) -> EvalOutcome {
    let n_x = config.plant.state_dim();
    let n_u = config.plant.control_dim();
    let penalty = divergence_penalty(&config.plant, &config.cost, &config.x0, config.horizon);
    let model = match unpack_model(theta, n_x, n_u) {
        Ok(m) => m,
        Err(_) => return EvalOutcome::penalized(None, penalty, "penalized"),
    };
    let controller = match Controller::synthesize(
        &model,
        &config.cost,
        config.horizon,
        config.resolved_controller(),
    ) {
        Ok(c) => c,
        Err(_) => return EvalOutcome::penalized(None, penalty, "penalized"),
    };
    run_closed_loop(&config.plant, &config.cost, &config.x0, config.horizon, &controller, penalty)
}

/// Compute (or pass through) the best achievable cost used by the regret
/// column.
pub fn resolve_oracle_value(config: &ExperimentConfig) -> Result<f64> {
    if let Some(v) = config.oracle_value {
        return Ok(v);
    }
    let mut rng = stream_rng(config.oracle_seed, RngStream::Oracle);
    let outcome = compute_oracle(
        &config.plant,
        &config.cost,
        &config.x0,
        config.horizon,
        config.oracle_multistarts,
        &config.input_bounds,
        &mut rng,
    )?;
    Ok(outcome.value)
}

/// Shared settings for one BO-driven run.
pub struct HarnessSettings<'a> {
    pub bounds: &'a ParamBounds,
    pub budget: usize,
    pub seed: u64,
    pub warp: bool,
    pub acquisition: &'a AcquisitionConfig,
    pub hyper: &'a HyperFitOptions,
    pub init: &'a [DVector<f64>],
    pub j_star: f64,
}

/// The surrogate-driven search loop shared by every BO method.
///
/// Each iteration evaluates exactly one candidate: explicit init points
/// first, then one uniform draw if none were given, then acquisition
/// queries. Targets are centered before fitting (the surrogate has a zero
/// prior mean); hyperparameters are refit every iteration up to 100
/// observations and every 5th beyond that.
pub fn run_bo_loop<F>(settings: &HarnessSettings, mut evaluate: F) -> Result<Vec<RunRecord>>
where
    F: FnMut(&DVector<f64>) -> EvalOutcome,
{
    if settings.budget < 1 {
        return Err(Error::Config("budget must be at least 1".into()));
    }
    if !(settings.j_star > 0.0) {
        return Err(Error::Config("oracle value must be positive".into()));
    }
    let bounds = settings.bounds;
    let mut rng_init = stream_rng(settings.seed, RngStream::Init);
    let mut rng_acq = stream_rng(settings.seed, RngStream::Acquisition);
    let mut rng_hyp = stream_rng(settings.seed, RngStream::HyperFit);

    let mut kernel = KernelParams::isotropic(1.0, (bounds.mean_width() / 4.0).max(1e-3), 1e-3);
    let mut inputs: Vec<DVector<f64>> = Vec::with_capacity(settings.budget);
    let mut modeled: Vec<f64> = Vec::with_capacity(settings.budget);
    let mut records: Vec<RunRecord> = Vec::with_capacity(settings.budget);
    let mut best = f64::INFINITY;

    for iteration in 1..=settings.budget {
        let mut flag: Option<String> = None;
        let theta = if iteration <= settings.init.len() {
            bounds.clamp(&settings.init[iteration - 1])
        } else if inputs.is_empty() {
            sample_uniform(bounds, &mut rng_init)
        } else {
            let mean = modeled.iter().sum::<f64>() / modeled.len() as f64;
            let centered: Vec<f64> = modeled.iter().map(|y| y - mean).collect();
            let trace = std::env::var_os("ADOBO_TRACE").is_some();
            let t_fit = std::time::Instant::now();
            match GpModel::fit(kernel.clone(), inputs.clone(), centered) {
                Ok(mut gp) => {
                    if trace {
                        eprintln!("[trace] iter {iteration} gp fit {:.3}s", t_fit.elapsed().as_secs_f64());
                    }
                    let m = inputs.len();
                    if m >= 2 && (m <= 100 || m % 5 == 0) {
                        let t_hyp = std::time::Instant::now();
                        let (new_kernel, report) =
                            fit_hyperparams(&gp, settings.hyper, &mut rng_hyp);
                        if !report.all_failed {
                            if let Ok(refit) = gp.with_kernel(new_kernel.clone()) {
                                kernel = new_kernel;
                                gp = refit;
                            }
                        }
                        if trace {
                            eprintln!("[trace] iter {iteration} hyperfit {:.3}s", t_hyp.elapsed().as_secs_f64());
                        }
                    }
                    let t_acq = std::time::Instant::now();
                    let q = next_query(&gp, bounds, settings.acquisition, &mut rng_acq);
                    if trace {
                        eprintln!("[trace] iter {iteration} acquisition {:.3}s", t_acq.elapsed().as_secs_f64());
                    }
                    q
                }
                Err(_) => {
                    flag = Some("gp_failed".to_string());
                    sample_uniform(bounds, &mut rng_acq)
                }
            }
        };

        let outcome = evaluate(&theta);
        let cost = outcome.cost;
        let y = if settings.warp { warp(cost) } else { cost };
        inputs.push(theta.clone());
        modeled.push(y);
        best = best.min(cost);
        if let Some(f) = outcome.flag {
            flag = Some(match flag {
                Some(prev) => format!("{prev};{f}"),
                None => f,
            });
        }
        records.push(RunRecord {
            iteration,
            params: theta,
            cost,
            warped_cost: y,
            best_cost: best,
            eta: eta(best, settings.j_star),
            flag,
        });
    }
    Ok(records)
}

/// Run the model-tuning method end to end.
pub fn run_adobo(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let j_star = resolve_oracle_value(config)?;
    let settings = HarnessSettings {
        bounds: &config.bounds,
        budget: config.budget,
        seed: config.seed,
        warp: config.warp,
        acquisition: &config.acquisition,
        hyper: &config.hyper,
        init: &config.init_params,
        j_star,
    };
    run_bo_loop(&settings, |theta| closed_loop_evaluate(config, theta))
}

/// Dispatch a config to its method implementation.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    match config.method {
        Method::Adobo => run_adobo(config),
        Method::QrTuning => crate::baselines::run_qr_tuning(config),
        Method::KLearning => crate::baselines::run_k_learning(config),
        Method::LsIdentification => crate::baselines::run_ls_identification(config),
        Method::ControlSequence => crate::baselines::run_control_sequence_learning(config),
    }
}
