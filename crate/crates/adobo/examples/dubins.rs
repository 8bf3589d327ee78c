//! Model search on the Dubins car, with and without cost warping.
//!
//! Fifteen model parameters; the surrogate models log J by default, which
//! speeds up convergence noticeably. Prints the regret curve for both
//! settings.
//!
//!     cargo run --release --example dubins [seed]

use adobo::experiment::{resolve_oracle_value, run_adobo, ExperimentConfig};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut config = ExperimentConfig::dubins();
    config.budget = 150;
    config.seed = seed;
    let j_star = resolve_oracle_value(&config).unwrap();
    config.oracle_value = Some(j_star);
    println!("best achievable cost: {j_star:.6}");

    let t0 = std::time::Instant::now();
    let warped = run_adobo(&config).unwrap();
    println!("warped run: {:.1}s", t0.elapsed().as_secs_f64());

    config.warp = false;
    let t0 = std::time::Instant::now();
    let raw = run_adobo(&config).unwrap();
    println!("raw run: {:.1}s", t0.elapsed().as_secs_f64());

    println!("{:>6} {:>14} {:>14}", "iter", "eta (warped)", "eta (raw)");
    for i in (9..150).step_by(10) {
        println!("{:>6} {:>13.2}% {:>13.2}%", i + 1, warped[i].eta, raw[i].eta);
    }
}
