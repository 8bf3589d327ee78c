//! Zero-mean Gaussian-process regression with a Matern 5/2 kernel.
//!
//! Targets are modeled as-is (callers center and/or warp them first).
//! Hyperparameters are fitted by maximizing the log marginal likelihood with
//! a multistart Nelder-Mead search in log space.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Noise-std floor applied when factorizing; conditions the Cholesky for
/// deterministic (noise-free) observations.
pub const NOISE_STD_FLOOR: f64 = 1e-6;

/// Jitter escalation ladder applied to the kernel diagonal on factorization
/// failure.
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

const SQRT_5: f64 = 2.236_067_977_499_79;

/// Kernel lengthscales: one shared scalar or one per input dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum Lengthscales {
    Iso(f64),
    Ard(DVector<f64>),
}

/// Matern 5/2 hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub signal_std: f64,
    pub lengthscales: Lengthscales,
    pub noise_std: f64,
}

impl KernelParams {
    pub fn isotropic(signal_std: f64, lengthscale: f64, noise_std: f64) -> Self {
        Self {
            signal_std,
            lengthscales: Lengthscales::Iso(lengthscale),
            noise_std,
        }
    }

    /// Squared scaled distance `|| (a - b) / l ||^2`.
    fn scaled_dist2(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        match &self.lengthscales {
            Lengthscales::Iso(l) => {
                let mut s = 0.0;
                for d in 0..a.len() {
                    let diff = a[d] - b[d];
                    s += diff * diff;
                }
                s / (l * l)
            }
            Lengthscales::Ard(ls) => {
                let mut s = 0.0;
                for d in 0..a.len() {
                    let diff = (a[d] - b[d]) / ls[d];
                    s += diff * diff;
                }
                s
            }
        }
    }
}

fn matern52(signal_var: f64, r: f64) -> f64 {
    let sr = SQRT_5 * r;
    signal_var * (1.0 + sr + 5.0 / 3.0 * r * r) * (-sr).exp()
}

/// Matern 5/2 kernel value between two points.
pub fn kernel_eval(p: &KernelParams, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let r = p.scaled_dist2(a, b).sqrt();
    matern52(p.signal_std * p.signal_std, r)
}

/// Log-cost warp applied before GP modeling; strictly increasing, so argmins
/// are preserved.
pub fn warp(cost: f64) -> f64 {
    cost.max(1e-12).ln()
}

/// Inverse of [`warp`].
pub fn unwarp(y: f64) -> f64 {
    y.exp()
}

/// A fitted GP snapshot: immutable after construction.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelParams,
    inputs: Vec<DVector<f64>>,
    targets: DVector<f64>,
    /// Lower Cholesky factor of K + (noise_var + jitter) I.
    chol: DMatrix<f64>,
    /// (K + (noise_var + jitter) I)^-1 y.
    alpha: DVector<f64>,
    jitter: f64,
    /// Unscaled pairwise squared distances, cached for isotropic refits.
    dist2: DMatrix<f64>,
}

impl GpModel {
    /// Factorize the regularized kernel matrix and cache the solve against
    /// the targets.
    pub fn fit(kernel: KernelParams, inputs: Vec<DVector<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Config("GP needs at least one observation".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch(format!(
                "GP inputs ({}) vs targets ({})",
                inputs.len(),
                targets.len()
            )));
        }
        let n = inputs.len();
        let mut dist2 = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d2 = (&inputs[i] - &inputs[j]).norm_squared();
                dist2[(i, j)] = d2;
                dist2[(j, i)] = d2;
            }
        }
        Self::factorize(kernel, inputs, DVector::from_vec(targets), dist2)
    }

    /// Refit with new hyperparameters, reusing the cached distance matrix
    /// when the metric allows it.
    pub fn with_kernel(&self, kernel: KernelParams) -> Result<Self> {
        Self::factorize(kernel, self.inputs.clone(), self.targets.clone(), self.dist2.clone())
    }

    fn factorize(
        kernel: KernelParams,
        inputs: Vec<DVector<f64>>,
        targets: DVector<f64>,
        dist2: DMatrix<f64>,
    ) -> Result<Self> {
        let n = inputs.len();
        let signal_var = kernel.signal_std * kernel.signal_std;
        let noise_var = kernel.noise_std.max(NOISE_STD_FLOOR).powi(2);
        let mut base = DMatrix::zeros(n, n);
        let iso = match &kernel.lengthscales {
            Lengthscales::Iso(l) => Some(*l),
            Lengthscales::Ard(_) => None,
        };
        for i in 0..n {
            base[(i, i)] = signal_var;
            for j in (i + 1)..n {
                let r = match iso {
                    Some(l) => dist2[(i, j)].sqrt() / l,
                    None => kernel.scaled_dist2(&inputs[i], &inputs[j]).sqrt(),
                };
                let k = matern52(signal_var, r);
                base[(i, j)] = k;
                base[(j, i)] = k;
            }
        }
        for &jitter in &JITTER_LADDER {
            let mut kmat = base.clone();
            for i in 0..n {
                kmat[(i, i)] += noise_var + jitter;
            }
            if let Some(chol) = nalgebra::Cholesky::new(kmat) {
                let alpha = chol.solve(&targets);
                let chol = chol.unpack();
                return Ok(Self { kernel, inputs, targets, chol, alpha, jitter, dist2 });
            }
        }
        Err(Error::KernelNotPd)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    /// Smallest modeled target (the incumbent for minimization).
    pub fn min_target(&self) -> f64 {
        self.targets.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn kernel_vector(&self, query: &DVector<f64>) -> DVector<f64> {
        let signal_var = self.kernel.signal_std * self.kernel.signal_std;
        DVector::from_fn(self.len(), |i, _| {
            let r = self.kernel.scaled_dist2(&self.inputs[i], query).sqrt();
            matern52(signal_var, r)
        })
    }

    /// Predictive mean and variance at a query point; the variance is
    /// clamped at zero from below.
    pub fn posterior(&self, query: &DVector<f64>) -> (f64, f64) {
        let k = self.kernel_vector(query);
        let mean = k.dot(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&k)
            .expect("cholesky factor has positive diagonal");
        let prior_var = self.kernel.signal_std * self.kernel.signal_std;
        let var = (prior_var - v.norm_squared()).max(0.0);
        (mean, var)
    }

    /// `-1/2 y' K^-1 y - sum(log diag L) - n/2 log(2 pi)`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len() as f64;
        let data_fit = -0.5 * self.targets.dot(&self.alpha);
        let log_det_half: f64 = (0..self.len()).map(|i| self.chol[(i, i)].ln()).sum();
        data_fit - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Log-space search boxes and budget for hyperparameter fitting.
#[derive(Debug, Clone)]
pub struct HyperFitOptions {
    pub signal_std_range: (f64, f64),
    pub lengthscale_range: (f64, f64),
    pub noise_std_range: (f64, f64),
    /// Multistart count; the first start is the current kernel.
    pub restarts: usize,
    /// Nelder-Mead evaluation budget per start.
    pub max_evals: usize,
}

impl Default for HyperFitOptions {
    fn default() -> Self {
        Self {
            signal_std_range: (1e-3, 1e3),
            lengthscale_range: (1e-2, 1e2),
            noise_std_range: (NOISE_STD_FLOOR, 1.0),
            restarts: 2,
            max_evals: 60,
        }
    }
}

/// Diagnostics from a hyperparameter fit.
#[derive(Debug, Clone)]
pub struct HyperFitReport {
    /// LML at each multistart seed point.
    pub start_lmls: Vec<f64>,
    /// LML of the returned parameters.
    pub final_lml: f64,
    /// True when every start failed to produce a usable LML.
    pub all_failed: bool,
}

fn params_to_log(p: &KernelParams) -> Vec<f64> {
    let mut v = vec![p.signal_std.ln()];
    match &p.lengthscales {
        Lengthscales::Iso(l) => v.push(l.ln()),
        Lengthscales::Ard(ls) => v.extend(ls.iter().map(|l| l.ln())),
    }
    v.push(p.noise_std.ln());
    v
}

fn params_from_log(v: &[f64], ard_dims: Option<usize>) -> KernelParams {
    let signal_std = v[0].exp();
    let (lengthscales, noise_idx) = match ard_dims {
        None => (Lengthscales::Iso(v[1].exp()), 2),
        Some(d) => (
            Lengthscales::Ard(DVector::from_iterator(d, v[1..1 + d].iter().map(|x| x.exp()))),
            1 + d,
        ),
    };
    KernelParams { signal_std, lengthscales, noise_std: v[noise_idx].exp() }
}

fn log_box(opts: &HyperFitOptions, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![opts.signal_std_range.0.ln()];
    let mut hi = vec![opts.signal_std_range.1.ln()];
    for _ in 0..dim - 2 {
        lo.push(opts.lengthscale_range.0.ln());
        hi.push(opts.lengthscale_range.1.ln());
    }
    lo.push(opts.noise_std_range.0.ln());
    hi.push(opts.noise_std_range.1.ln());
    (lo, hi)
}

fn clamp_point(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for d in 0..x.len() {
        x[d] = x[d].clamp(lo[d], hi[d]);
    }
}

/// Nelder-Mead minimization with box projection. Returns (point, value).
fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let dim = start.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        f(x)
    };

    // Initial simplex around the (clamped) start.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let mut x0 = start.to_vec();
    clamp_point(&mut x0, lo, hi);
    let f0 = eval(&x0, &mut evals);
    simplex.push((x0.clone(), f0));
    for d in 0..dim {
        let mut xd = x0.clone();
        let step = 0.5 * (hi[d] - lo[d]).min(1.0).max(0.05);
        xd[d] = if xd[d] + step <= hi[d] { xd[d] + step } else { xd[d] - step };
        clamp_point(&mut xd, lo, hi);
        let fd = eval(&xd, &mut evals);
        simplex.push((xd, fd));
    }

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        if (worst - best).abs() < 1e-10 {
            break;
        }
        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; dim];
        for v in simplex.iter().take(dim) {
            for d in 0..dim {
                centroid[d] += v.0[d] / dim as f64;
            }
        }
        let worst_point = simplex[dim].0.clone();
        let mut reflect = vec![0.0; dim];
        for d in 0..dim {
            reflect[d] = centroid[d] + (centroid[d] - worst_point[d]);
        }
        clamp_point(&mut reflect, lo, hi);
        let fr = eval(&reflect, &mut evals);
        if fr < simplex[0].1 {
            // Expand.
            let mut expand = vec![0.0; dim];
            for d in 0..dim {
                expand[d] = centroid[d] + 2.0 * (centroid[d] - worst_point[d]);
            }
            clamp_point(&mut expand, lo, hi);
            let fe = eval(&expand, &mut evals);
            simplex[dim] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflect, fr);
        } else {
            // Contract toward the better of worst/reflected.
            let (toward, f_toward) = if fr < simplex[dim].1 {
                (reflect.clone(), fr)
            } else {
                (worst_point.clone(), simplex[dim].1)
            };
            let mut contract = vec![0.0; dim];
            for d in 0..dim {
                contract[d] = centroid[d] + 0.5 * (toward[d] - centroid[d]);
            }
            clamp_point(&mut contract, lo, hi);
            let fc = eval(&contract, &mut evals);
            if fc < f_toward {
                simplex[dim] = (contract, fc);
            } else {
                // Shrink toward the best vertex.
                let best_point = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    for d in 0..dim {
                        v.0[d] = best_point[d] + 0.5 * (v.0[d] - best_point[d]);
                    }
                    clamp_point(&mut v.0, lo, hi);
                    v.1 = eval(&v.0, &mut evals);
                    if evals >= max_evals {
                        break;
                    }
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    simplex.swap_remove(0).into()
}

/// Multistart maximization of the log marginal likelihood over the kernel
/// hyperparameters, in log space, within the configured boxes.
///
/// The first start is the model's current kernel; remaining starts are drawn
/// uniformly from the log box using `rng`. If every start fails (e.g. the
/// kernel matrix cannot be factorized anywhere), the current kernel is
/// returned unchanged and the report says so.
pub fn fit_hyperparams<R: Rng>(
    gp: &GpModel,
    opts: &HyperFitOptions,
    rng: &mut R,
) -> (KernelParams, HyperFitReport) {
    assert!(gp.len() >= 2, "hyperparameter fitting needs at least 2 observations");
    let ard_dims = match &gp.kernel.lengthscales {
        Lengthscales::Iso(_) => None,
        Lengthscales::Ard(ls) => Some(ls.len()),
    };
    let dim = params_to_log(&gp.kernel).len();
    let (lo, hi) = log_box(opts, dim);

    let mut objective = |x: &[f64]| -> f64 {
        let params = params_from_log(x, ard_dims);
        match gp.with_kernel(params) {
            Ok(model) => -model.log_marginal_likelihood(),
            Err(_) => f64::INFINITY,
        }
    };

    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(opts.restarts.max(1));
    let mut warm = params_to_log(&gp.kernel);
    clamp_point(&mut warm, &lo, &hi);
    starts.push(warm);
    for _ in 1..opts.restarts.max(1) {
        let point: Vec<f64> = (0..dim).map(|d| rng.gen_range(lo[d]..=hi[d])).collect();
        starts.push(point);
    }

    let mut start_lmls = Vec::with_capacity(starts.len());
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in &starts {
        start_lmls.push(-objective(start));
        let (point, value) = nelder_mead(&mut objective, start, &lo, &hi, opts.max_evals);
        if best.as_ref().map(|(_, bv)| value < *bv).unwrap_or(true) {
            best = Some((point, value));
        }
    }

    match best {
        Some((point, value)) if value.is_finite() => {
            let params = params_from_log(&point, ard_dims);
            (params, HyperFitReport { start_lmls, final_lml: -value, all_failed: false })
        }
        _ => (
            gp.kernel.clone(),
            HyperFitReport { start_lmls, final_lml: f64::NEG_INFINITY, all_failed: true },
        ),
    }
}
