//! Experiment configuration files.
//!
//! Flat key-value TOML with one section per concern (`run`, `plant`,
//! `cost`, `bo`, `gp`). Every field is optional: missing values come from
//! the plant's benchmark preset, so a config can be as short as a plant
//! name plus the fields it changes. Snapshots written next to run outputs
//! are fully resolved and replay bit-exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bo::AcquisitionConfig;
use crate::control::ControllerKind;
use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, Method};
use crate::gp::HyperFitOptions;
use crate::plants::{CartPoleParams, Plant};
use crate::types::{CostSpec, ParamBounds, SoftStateBounds};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub run: RunSection,
    pub plant: PlantSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub bo: BoSection,
    #[serde(default)]
    pub gp: GpSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warp: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controller: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_multistarts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qr_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cart_mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pole_mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pole_length: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gravity: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_diag: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_diag: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qf_diag: Option<Vec<f64>>,
    /// Full row-major matrices; take precedence over the diagonals.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_rows: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_rows: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qf_rows: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_ref: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_ref: Option<Vec<f64>>,
    /// Soft state box; `inf`/`-inf` entries disable a side.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_lower: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_upper: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty_weight: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_lo: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_hi: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_lo: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_hi: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_random: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_refine: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refine_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    /// Explicit initial parameter points.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal_std_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lengthscale_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_std_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_evals: Option<usize>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Merge onto the plant preset and build the runtime configuration.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::preset(&self.plant.kind)?;

        // Plant parameter overrides.
        match &mut config.plant {
            Plant::Dubins { dt } => {
                if let Some(v) = self.plant.dt {
                    *dt = v;
                }
            }
            Plant::CartPole { dt, params } => {
                if let Some(v) = self.plant.dt {
                    *dt = v;
                }
                let CartPoleParams { cart_mass, pole_mass, pole_length, gravity } = params;
                if let Some(v) = self.plant.cart_mass {
                    *cart_mass = v;
                }
                if let Some(v) = self.plant.pole_mass {
                    *pole_mass = v;
                }
                if let Some(v) = self.plant.pole_length {
                    *pole_length = v;
                }
                if let Some(v) = self.plant.gravity {
                    *gravity = v;
                }
            }
            Plant::Linear1d | Plant::Linear2d => {}
        }

        let n_x = config.plant.state_dim();

        // Cost overrides.
        if let Some(h) = self.cost.horizon {
            config.horizon = h;
        }
        if let Some(x0) = &self.cost.x0 {
            config.x0 = DVector::from_vec(x0.clone());
        }
        let q = matrix_override(&self.cost.q_rows, &self.cost.q_diag, &config.cost.q, "q")?;
        let r = matrix_override(&self.cost.r_rows, &self.cost.r_diag, &config.cost.r, "r")?;
        let qf = matrix_override(&self.cost.qf_rows, &self.cost.qf_diag, &config.cost.q_f, "qf")?;
        let x_ref = self
            .cost
            .x_ref
            .as_ref()
            .map(|v| DVector::from_vec(v.clone()))
            .unwrap_or_else(|| config.cost.x_ref.clone());
        let u_ref = self
            .cost
            .u_ref
            .as_ref()
            .map(|v| DVector::from_vec(v.clone()))
            .unwrap_or_else(|| config.cost.u_ref.clone());
        let soft = match (&self.cost.state_lower, &self.cost.state_upper, self.cost.penalty_weight)
        {
            (None, None, None) => config.cost.soft_bounds.clone(),
            (lower, upper, weight) => {
                let base = config.cost.soft_bounds.clone();
                let lower = lower
                    .clone()
                    .map(DVector::from_vec)
                    .or_else(|| base.as_ref().map(|sb| sb.lower.clone()))
                    .unwrap_or_else(|| DVector::from_element(n_x, f64::NEG_INFINITY));
                let upper = upper
                    .clone()
                    .map(DVector::from_vec)
                    .or_else(|| base.as_ref().map(|sb| sb.upper.clone()))
                    .unwrap_or_else(|| DVector::from_element(n_x, f64::INFINITY));
                let weight = weight
                    .or_else(|| base.as_ref().map(|sb| sb.weight))
                    .unwrap_or(0.0);
                Some(SoftStateBounds::new(lower, upper, weight)?)
            }
        };
        config.cost = CostSpec::new(q, r, qf, x_ref, u_ref, soft)?;

        // Run overrides.
        if let Some(m) = &self.run.method {
            config.method = Method::from_name(m)?;
        }
        if let Some(b) = self.run.budget {
            config.budget = b;
        }
        if let Some(s) = self.run.seed {
            config.seed = s;
        }
        if let Some(w) = self.run.warp {
            config.warp = w;
        }
        if let Some(c) = &self.run.controller {
            config.controller = ControllerKind::from_name(c)?;
        }
        if let Some(v) = self.run.oracle_value {
            config.oracle_value = Some(v);
        }
        if let Some(s) = self.run.oracle_seed {
            config.oracle_seed = s;
        }
        if let Some(k) = self.run.oracle_multistarts {
            config.oracle_multistarts = k;
        }
        if let Some(a) = self.run.qr_alpha {
            config.qr_alpha = a;
        }
        if let Some(s) = self.run.noise_seed {
            config.noise_seed = s;
        }

        // Search-space overrides.
        if self.bo.theta_lo.is_some() || self.bo.theta_hi.is_some() {
            let lo = self
                .bo
                .theta_lo
                .clone()
                .map(DVector::from_vec)
                .unwrap_or_else(|| config.bounds.lo.clone());
            let hi = self
                .bo
                .theta_hi
                .clone()
                .map(DVector::from_vec)
                .unwrap_or_else(|| config.bounds.hi.clone());
            config.bounds = ParamBounds::new(lo, hi)?;
        }
        if self.bo.input_lo.is_some() || self.bo.input_hi.is_some() {
            let lo = self
                .bo
                .input_lo
                .clone()
                .map(DVector::from_vec)
                .unwrap_or_else(|| config.input_bounds.lo.clone());
            let hi = self
                .bo
                .input_hi
                .clone()
                .map(DVector::from_vec)
                .unwrap_or_else(|| config.input_bounds.hi.clone());
            config.input_bounds = ParamBounds::new(lo, hi)?;
        }
        if let Some(v) = self.bo.n_random {
            config.acquisition.n_random = v;
        }
        if let Some(v) = self.bo.n_refine {
            config.acquisition.n_refine = v;
        }
        if let Some(v) = self.bo.refine_iters {
            config.acquisition.refine_iters = v;
        }
        if let Some(v) = self.bo.xi {
            config.acquisition.xi = v;
        }
        if let Some(init) = &self.bo.init {
            config.init_params = init.iter().map(|v| DVector::from_vec(v.clone())).collect();
        }

        // GP overrides.
        if let Some([lo, hi]) = self.gp.signal_std_range {
            config.hyper.signal_std_range = (lo, hi);
        }
        if let Some([lo, hi]) = self.gp.lengthscale_range {
            config.hyper.lengthscale_range = (lo, hi);
        }
        if let Some([lo, hi]) = self.gp.noise_std_range {
            config.hyper.noise_std_range = (lo, hi);
        }
        if let Some(v) = self.gp.restarts {
            config.hyper.restarts = v;
        }
        if let Some(v) = self.gp.max_evals {
            config.hyper.max_evals = v;
        }

        config.validate()?;
        Ok(config)
    }

    /// Fully resolved snapshot of a runtime configuration.
    pub fn from_experiment(config: &ExperimentConfig) -> ConfigFile {
        let (dt, cart) = match &config.plant {
            Plant::Dubins { dt } => (Some(*dt), None),
            Plant::CartPole { dt, params } => (Some(*dt), Some(*params)),
            _ => (None, None),
        };
        let sb = config.cost.soft_bounds.as_ref();
        ConfigFile {
            run: RunSection {
                method: Some(config.method.name().to_string()),
                budget: Some(config.budget),
                seed: Some(config.seed),
                warp: Some(config.warp),
                controller: Some(config.controller.name().to_string()),
                oracle_value: config.oracle_value,
                oracle_seed: Some(config.oracle_seed),
                oracle_multistarts: Some(config.oracle_multistarts),
                qr_alpha: Some(config.qr_alpha),
                noise_seed: Some(config.noise_seed),
            },
            plant: PlantSection {
                kind: config.plant.name().to_string(),
                dt,
                cart_mass: cart.map(|p| p.cart_mass),
                pole_mass: cart.map(|p| p.pole_mass),
                pole_length: cart.map(|p| p.pole_length),
                gravity: cart.map(|p| p.gravity),
            },
            cost: CostSection {
                horizon: Some(config.horizon),
                x0: Some(config.x0.iter().copied().collect()),
                q_rows: Some(matrix_rows(&config.cost.q)),
                r_rows: Some(matrix_rows(&config.cost.r)),
                qf_rows: Some(matrix_rows(&config.cost.q_f)),
                x_ref: Some(config.cost.x_ref.iter().copied().collect()),
                u_ref: Some(config.cost.u_ref.iter().copied().collect()),
                state_lower: sb.map(|s| s.lower.iter().copied().collect()),
                state_upper: sb.map(|s| s.upper.iter().copied().collect()),
                penalty_weight: sb.map(|s| s.weight),
                q_diag: None,
                r_diag: None,
                qf_diag: None,
            },
            bo: BoSection {
                theta_lo: Some(config.bounds.lo.iter().copied().collect()),
                theta_hi: Some(config.bounds.hi.iter().copied().collect()),
                input_lo: Some(config.input_bounds.lo.iter().copied().collect()),
                input_hi: Some(config.input_bounds.hi.iter().copied().collect()),
                n_random: Some(config.acquisition.n_random),
                n_refine: Some(config.acquisition.n_refine),
                refine_iters: Some(config.acquisition.refine_iters),
                xi: Some(config.acquisition.xi),
                init: if config.init_params.is_empty() {
                    None
                } else {
                    Some(
                        config
                            .init_params
                            .iter()
                            .map(|p| p.iter().copied().collect())
                            .collect(),
                    )
                },
            },
            gp: GpSection {
                signal_std_range: Some([
                    config.hyper.signal_std_range.0,
                    config.hyper.signal_std_range.1,
                ]),
                lengthscale_range: Some([
                    config.hyper.lengthscale_range.0,
                    config.hyper.lengthscale_range.1,
                ]),
                noise_std_range: Some([
                    config.hyper.noise_std_range.0,
                    config.hyper.noise_std_range.1,
                ]),
                restarts: Some(config.hyper.restarts),
                max_evals: Some(config.hyper.max_evals),
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn matrix_override(
    rows: &Option<Vec<Vec<f64>>>,
    diag: &Option<Vec<f64>>,
    fallback: &DMatrix<f64>,
    name: &str,
) -> Result<DMatrix<f64>> {
    if let Some(rows) = rows {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Config(format!("{name}_rows must be square")));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        return Ok(DMatrix::from_row_slice(n, n, &flat));
    }
    if let Some(diag) = diag {
        return Ok(DMatrix::from_diagonal(&DVector::from_vec(diag.clone())));
    }
    Ok(fallback.clone())
}

/// Touched by both the default acquisition and the CLI; re-exported for
/// completeness of the schema docs.
pub fn default_acquisition() -> AcquisitionConfig {
    AcquisitionConfig::default()
}

/// Default hyperparameter-fit options used when a preset is not involved.
pub fn default_hyper() -> HyperFitOptions {
    HyperFitOptions::default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_preset() {
        let cfg = ConfigFile::parse("[plant]\nkind = \"lin1d\"\n").unwrap();
        let config = cfg.resolve().unwrap();
        assert_eq!(config.horizon, 30);
        assert_eq!(config.budget, 100);
        assert_eq!(config.plant.name(), "lin1d");
        assert_eq!(config.bounds.dim(), 2);
    }

    #[test]
    fn overrides_apply() {
        let text = r#"
[run]
method = "klearn"
budget = 42
seed = 9
warp = false

[plant]
kind = "dubins"

[cost]
horizon = 20

[bo]
n_random = 500
"#;
        let config = ConfigFile::parse(text).unwrap().resolve().unwrap();
        assert_eq!(config.method.name(), "klearn");
        assert_eq!(config.budget, 42);
        assert_eq!(config.seed, 9);
        assert!(!config.warp);
        assert_eq!(config.horizon, 20);
        assert_eq!(config.acquisition.n_random, 500);
    }

    #[test]
    fn unknown_fields_are_rejected_with_diagnostics() {
        let err = ConfigFile::parse("[plant]\nkind = \"lin1d\"\nbogus = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus"), "missing field diagnostics: {msg}");
    }

    #[test]
    fn snapshot_roundtrip_is_lossless() {
        let mut config = ExperimentConfig::cart_pole();
        config.seed = 123;
        config.budget = 7;
        let snapshot = ConfigFile::from_experiment(&config);
        let text = snapshot.to_toml();
        let reparsed = ConfigFile::parse(&text).unwrap().resolve().unwrap();
        assert_eq!(reparsed.seed, 123);
        assert_eq!(reparsed.budget, 7);
        assert_eq!(reparsed.cost.q, config.cost.q);
        assert_eq!(reparsed.cost.soft_bounds, config.cost.soft_bounds);
        assert_eq!(reparsed.x0, config.x0);
        assert_eq!(reparsed.bounds, config.bounds);
    }

    #[test]
    fn infinities_survive_the_toml_roundtrip() {
        let config = ExperimentConfig::lin2d_hinge();
        let text = ConfigFile::from_experiment(&config).to_toml();
        assert!(text.contains("inf"));
        let reparsed = ConfigFile::parse(&text).unwrap().resolve().unwrap();
        let sb = reparsed.cost.soft_bounds.unwrap();
        assert_eq!(sb.upper[0], f64::INFINITY);
    }
}
