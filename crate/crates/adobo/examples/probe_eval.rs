use adobo::bo::sample_uniform;
use adobo::experiment::{closed_loop_evaluate, ExperimentConfig};
use adobo::rng::{stream_rng, RngStream};
use adobo::types::pack_model;

fn main() {
    let config = ExperimentConfig::lin2d_hinge();
    let truth = pack_model(&config.plant.exact_linear_model().unwrap()).values;
    let t0 = std::time::Instant::now();
    let out = closed_loop_evaluate(&config, &truth);
    println!("true model: cost {:.4} flag {:?} in {:.3}s", out.cost, out.flag, t0.elapsed().as_secs_f64());

    let mut rng = stream_rng(1, RngStream::Init);
    for i in 0..10 {
        let theta = sample_uniform(&config.bounds, &mut rng);
        let t0 = std::time::Instant::now();
        let out = closed_loop_evaluate(&config, &theta);
        println!("random {i}: cost {:>12.3} flag {:?} in {:.3}s", out.cost, out.flag, t0.elapsed().as_secs_f64());
    }
}
