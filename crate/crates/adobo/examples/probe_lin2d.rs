use adobo::experiment::{resolve_oracle_value, run_adobo, ExperimentConfig};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let budget: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(600);
    let mut config = ExperimentConfig::lin2d_hinge();
    config.budget = budget;
    config.seed = seed;
    let j_star = resolve_oracle_value(&config).unwrap();
    config.oracle_value = Some(j_star);
    println!("J_star = {j_star:.6}");
    let t0 = std::time::Instant::now();
    let records = run_adobo(&config).unwrap();
    println!("run: {:.1}s", t0.elapsed().as_secs_f64());
    for i in (49..budget).step_by(50) {
        println!("iter {:>4} best {:>10.4} eta {:>8.2}%", i + 1, records[i].best_cost, records[i].eta);
    }
    let informative = records.iter().filter(|r| r.flag.is_none()).count();
    println!("informative evaluations: {informative}/{budget}");
}
