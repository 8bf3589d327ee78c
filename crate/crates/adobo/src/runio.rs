//! Run-directory persistence and cross-run comparison.
//!
//! Each run directory holds `config.toml` (fully resolved snapshot),
//! `records.csv` (one row per evaluation), `gp_data.csv` (the surrogate's
//! dataset, for search methods) and `summary.toml`. All CSV is
//! comma-separated UTF-8 with a header row and `.` decimals; floats are
//! written shortest-roundtrip so recomputation is exact.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ConfigFile;
use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, Method, RunRecord};
use crate::oracle::OracleOutcome;

/// Per-run metadata written after the run finishes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub plant: String,
    pub budget: usize,
    pub seed: u64,
    pub warp: bool,
    pub oracle_value: f64,
    pub final_eta: f64,
    pub best_cost: f64,
    pub best_params: Vec<f64>,
    pub wall_seconds: f64,
}

/// Write one finished run into `dir`.
pub fn write_run(
    dir: &Path,
    config: &ExperimentConfig,
    oracle_value: f64,
    records: &[RunRecord],
    wall_seconds: f64,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut snapshot = config.clone();
    snapshot.oracle_value = Some(oracle_value);
    std::fs::write(dir.join("config.toml"), ConfigFile::from_experiment(&snapshot).to_toml())?;

    write_records(&dir.join("records.csv"), config.method, records)?;
    if config.method != Method::LsIdentification {
        write_gp_data(&dir.join("gp_data.csv"), records)?;
    }

    let best = records
        .iter()
        .min_by(|a, b| a.cost.partial_cmp(&b.cost).unwrap_or(std::cmp::Ordering::Equal))
        .ok_or_else(|| Error::Config("cannot persist an empty run".into()))?;
    let last = records.last().expect("nonempty");
    let summary = RunSummary {
        method: config.method.name().to_string(),
        plant: config.plant.name().to_string(),
        budget: config.budget,
        seed: config.seed,
        warp: config.warp,
        oracle_value,
        final_eta: last.eta,
        best_cost: last.best_cost,
        best_params: best.params.iter().copied().collect(),
        wall_seconds,
    };
    std::fs::write(
        dir.join("summary.toml"),
        toml::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(())
}

fn write_records(path: &Path, method: Method, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = records.first().map(|r| r.params.len()).unwrap_or(0);
    let mut header = vec!["method".to_string(), "iter".to_string()];
    header.extend((1..=dim).map(|d| format!("param_{d}")));
    header.extend(
        ["cost", "warped_cost", "best_cost", "eta", "flag"].map(str::to_string),
    );
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![method.name().to_string(), r.iteration.to_string()];
        row.extend(r.params.iter().map(|v| format!("{v}")));
        row.push(format!("{}", r.cost));
        row.push(format!("{}", r.warped_cost));
        row.push(format!("{}", r.best_cost));
        row.push(format!("{}", r.eta));
        row.push(r.flag.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_gp_data(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = records.first().map(|r| r.params.len()).unwrap_or(0);
    let mut header: Vec<String> = (1..=dim).map(|d| format!("param_{d}")).collect();
    header.push("cost".to_string());
    header.push("warped_cost".to_string());
    w.write_record(&header)?;
    for r in records {
        let mut row: Vec<String> = r.params.iter().map(|v| format!("{v}")).collect();
        row.push(format!("{}", r.cost));
        row.push(format!("{}", r.warped_cost));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a run directory back: its summary and per-iteration records.
pub fn read_run(dir: &Path) -> Result<(RunSummary, Vec<RunRecord>)> {
    let summary: RunSummary = toml::from_str(
        &std::fs::read_to_string(dir.join("summary.toml"))
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", dir.display())))?,
    )
    .map_err(|e| Error::Config(format!("bad summary in {}: {e}", dir.display())))?;
    let records = read_records(&dir.join("records.csv"))?;
    Ok((summary, records))
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let dim = header.iter().filter(|h| h.starts_with("param_")).count();
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let fetch = |i: usize| -> Result<f64> {
            row.get(i)
                .ok_or_else(|| Error::Config("short record row".into()))?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number in records.csv: {e}")))
        };
        let iteration = row
            .get(1)
            .ok_or_else(|| Error::Config("short record row".into()))?
            .parse::<usize>()
            .map_err(|e| Error::Config(format!("bad iteration: {e}")))?;
        let params = DVector::from_fn(dim, |d, _| fetch(2 + d).unwrap_or(f64::NAN));
        let base = 2 + dim;
        let flag = row.get(base + 4).filter(|s| !s.is_empty()).map(str::to_string);
        records.push(RunRecord {
            iteration,
            params,
            cost: fetch(base)?,
            warped_cost: fetch(base + 1)?,
            best_cost: fetch(base + 2)?,
            eta: fetch(base + 3)?,
            flag,
        });
    }
    Ok(records)
}

/// Quartile summary of one method's regret at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaQuartiles {
    pub iteration: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Aggregated view of all runs of one method.
#[derive(Debug, Clone)]
pub struct MethodStats {
    pub method: String,
    pub runs: usize,
    pub min_budget: usize,
    /// Quartiles at every iteration up to the shortest budget.
    pub curve: Vec<EtaQuartiles>,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub plant: String,
    pub checkpoints: Vec<usize>,
    pub methods: Vec<MethodStats>,
}

fn quartiles(mut values: Vec<f64>) -> (f64, f64, f64) {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pick = |q: f64| -> f64 {
        let n = values.len();
        if n == 1 {
            return values[0];
        }
        let pos = q * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        values[lo] * (1.0 - frac) + values[hi] * frac
    };
    (pick(0.5), pick(0.25), pick(0.75))
}

/// Median regret of one method at a given iteration across record sets.
pub fn median_eta_at(runs: &[Vec<RunRecord>], iteration: usize) -> Option<f64> {
    let values: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.get(iteration - 1).map(|rec| rec.eta))
        .collect();
    if values.len() != runs.len() || values.is_empty() {
        return None;
    }
    Some(quartiles(values).0)
}

/// Aggregate completed runs into per-method regret curves and checkpoint
/// tables. All runs must be on the same plant, and every checkpoint must be
/// within every run's budget.
pub fn compare(dirs: &[PathBuf], checkpoints: &[usize]) -> Result<CompareReport> {
    if dirs.len() < 2 {
        return Err(Error::Config("compare needs at least two runs".into()));
    }
    let mut loaded: Vec<(RunSummary, Vec<RunRecord>)> = Vec::new();
    for dir in dirs {
        loaded.push(read_run(dir)?);
    }
    let plant = loaded[0].0.plant.clone();
    if loaded.iter().any(|(s, _)| s.plant != plant) {
        return Err(Error::Config(format!(
            "runs mix different plants: {:?}",
            loaded.iter().map(|(s, _)| s.plant.clone()).collect::<Vec<_>>()
        )));
    }
    let global_min_budget = loaded.iter().map(|(_, r)| r.len()).min().unwrap_or(0);
    for &c in checkpoints {
        if c == 0 || c > global_min_budget {
            return Err(Error::Config(format!(
                "checkpoint {c} is beyond the shortest run budget {global_min_budget}"
            )));
        }
    }

    let mut methods: Vec<MethodStats> = Vec::new();
    let mut names: Vec<String> = loaded.iter().map(|(s, _)| s.method.clone()).collect();
    names.sort();
    names.dedup();
    for name in names {
        let group: Vec<&Vec<RunRecord>> = loaded
            .iter()
            .filter(|(s, _)| s.method == name)
            .map(|(_, r)| r)
            .collect();
        let min_budget = group.iter().map(|r| r.len()).min().unwrap_or(0);
        let mut curve = Vec::with_capacity(min_budget);
        for it in 1..=min_budget {
            let (median, q25, q75) =
                quartiles(group.iter().map(|r| r[it - 1].eta).collect());
            curve.push(EtaQuartiles { iteration: it, median, q25, q75 });
        }
        methods.push(MethodStats { method: name, runs: group.len(), min_budget, curve });
    }
    Ok(CompareReport { plant, checkpoints: checkpoints.to_vec(), methods })
}

impl CompareReport {
    /// Checkpoint table as CSV text.
    pub fn checkpoint_csv(&self) -> String {
        let mut out = String::from("method,iteration,eta_median,eta_q25,eta_q75\n");
        for m in &self.methods {
            for &c in &self.checkpoints {
                let q = &m.curve[c - 1];
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    m.method, c, q.median, q.q25, q.q75
                ));
            }
        }
        out
    }

    /// Full per-iteration curves as CSV text (plot source data).
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("method,iteration,eta_median,eta_q25,eta_q75\n");
        for m in &self.methods {
            for q in &m.curve {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    m.method, q.iteration, q.median, q.q25, q.q75
                ));
            }
        }
        out
    }

    /// Human-readable checkpoint table.
    pub fn table(&self) -> String {
        let mut out = format!("plant: {}\n", self.plant);
        out.push_str(&format!(
            "{:<8} {:>6} {:>12} {:>12} {:>12}\n",
            "method", "iter", "eta_median", "eta_q25", "eta_q75"
        ));
        for m in &self.methods {
            for &c in &self.checkpoints {
                let q = &m.curve[c - 1];
                out.push_str(&format!(
                    "{:<8} {:>6} {:>12.3} {:>12.3} {:>12.3}\n",
                    m.method, c, q.median, q.q25, q.q75
                ));
            }
        }
        out
    }
}

/// Cached oracle values, keyed by a content hash of everything that defines
/// the optimization problem (plant, cost, start state, horizon, and the
/// multistart settings).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleCacheEntry {
    pub plant: String,
    pub horizon: usize,
    pub value: f64,
    pub certificate: f64,
    pub method: String,
}

pub fn oracle_cache_key(config: &ExperimentConfig) -> String {
    let mut hasher = Sha256::new();
    let mut feed = |label: &str, data: String| {
        hasher.update(label.as_bytes());
        hasher.update(b"=");
        hasher.update(data.as_bytes());
        hasher.update(b";");
    };
    feed("plant", format!("{:?}", config.plant));
    feed("q", format!("{:?}", config.cost.q));
    feed("r", format!("{:?}", config.cost.r));
    feed("qf", format!("{:?}", config.cost.q_f));
    feed("x_ref", format!("{:?}", config.cost.x_ref));
    feed("u_ref", format!("{:?}", config.cost.u_ref));
    feed("soft", format!("{:?}", config.cost.soft_bounds));
    feed("x0", format!("{:?}", config.x0));
    feed("n", config.horizon.to_string());
    feed("oracle_seed", config.oracle_seed.to_string());
    feed("multistarts", config.oracle_multistarts.to_string());
    format!("{:x}", hasher.finalize())
}

pub fn oracle_cache_load(cache_dir: &Path, key: &str) -> Option<OracleCacheEntry> {
    let path = cache_dir.join(format!("{key}.toml"));
    let text = std::fs::read_to_string(path).ok()?;
    toml::from_str(&text).ok()
}

pub fn oracle_cache_store(
    cache_dir: &Path,
    key: &str,
    config: &ExperimentConfig,
    outcome: &OracleOutcome,
) -> Result<()> {
    std::fs::create_dir_all(cache_dir)?;
    let entry = OracleCacheEntry {
        plant: config.plant.name().to_string(),
        horizon: config.horizon,
        value: outcome.value,
        certificate: outcome.certificate,
        method: outcome.method.name().to_string(),
    };
    std::fs::write(
        cache_dir.join(format!("{key}.toml")),
        toml::to_string_pretty(&entry).expect("entry serializes"),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_of_small_sets() {
        let (med, q25, q75) = quartiles(vec![3.0, 1.0, 2.0]);
        assert_eq!(med, 2.0);
        assert_eq!(q25, 1.5);
        assert_eq!(q75, 2.5);
        let (med, _, _) = quartiles(vec![5.0]);
        assert_eq!(med, 5.0);
    }

    #[test]
    fn records_roundtrip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            RunRecord {
                iteration: 1,
                params: DVector::from_vec(vec![0.25, -1.5]),
                cost: 3.7500000000000004,
                warped_cost: 1.3217558399823195,
                best_cost: 3.7500000000000004,
                eta: 12.5,
                flag: None,
            },
            RunRecord {
                iteration: 2,
                params: DVector::from_vec(vec![1.0, 2.0]),
                cost: 2.0,
                warped_cost: 0.6931471805599453,
                best_cost: 2.0,
                eta: 0.0,
                flag: Some("penalized".into()),
            },
        ];
        let path = dir.path().join("records.csv");
        write_records(&path, Method::Adobo, &records).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn oracle_cache_key_distinguishes_setups() {
        let a = oracle_cache_key(&ExperimentConfig::lin1d());
        let mut other = ExperimentConfig::lin1d();
        other.horizon = 31;
        let b = oracle_cache_key(&other);
        assert_ne!(a, b);
        assert_eq!(a, oracle_cache_key(&ExperimentConfig::lin1d()));
    }
}
