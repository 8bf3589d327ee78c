//! Model search on the scalar integrator: the smallest end-to-end run.
//!
//! The true plant is x' = x + u; the search moves over 2-parameter models
//! (a, b) in [-2, 2]^2 and converges to the exact optimal cost even though
//! the winning parameters need not match the true ones.
//!
//!     cargo run --release --example lin1d

use adobo::experiment::{resolve_oracle_value, run_adobo, ExperimentConfig};

fn main() {
    let mut config = ExperimentConfig::lin1d();
    config.budget = 100;
    config.seed = 1;
    let j_star = resolve_oracle_value(&config).unwrap();
    println!("best achievable cost: {j_star:.6}");

    let records = run_adobo(&config).unwrap();
    for r in records.iter().filter(|r| r.iteration % 10 == 0 || r.iteration == 1) {
        println!(
            "iter {:>3}  cost {:>10.4}  best {:>8.4}  eta {:>7.3}%",
            r.iteration, r.cost, r.best_cost, r.eta
        );
    }
    let last = records.last().unwrap();
    println!(
        "final: best cost {:.6} (eta {:.3}%) with parameters {:?}",
        last.best_cost,
        last.eta,
        records
            .iter()
            .min_by(|a, b| a.cost.partial_cmp(&b.cost).unwrap())
            .unwrap()
            .params
            .as_slice()
    );
}
