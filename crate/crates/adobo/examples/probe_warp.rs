use adobo::experiment::{resolve_oracle_value, run_adobo, ExperimentConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

fn main() {
    let mut base = ExperimentConfig::dubins();
    base.budget = 150;
    let j_star = resolve_oracle_value(&base).unwrap();
    base.oracle_value = Some(j_star);
    let mut warped_100 = vec![];
    let mut raw_100 = vec![];
    let mut warped_150 = vec![];
    for seed in 1..=5u64 {
        let mut c = base.clone();
        c.seed = seed;
        let w = run_adobo(&c).unwrap();
        c.warp = false;
        let r = run_adobo(&c).unwrap();
        println!("seed {seed}: warped@100 {:.2}% raw@100 {:.2}% warped@150 {:.2}%",
                 w[99].eta, r[99].eta, w[149].eta);
        warped_100.push(w[99].eta);
        raw_100.push(r[99].eta);
        warped_150.push(w[149].eta);
    }
    println!("median warped@100 = {:.3}%", median(warped_100));
    println!("median raw@100    = {:.3}%", median(raw_100));
    println!("median warped@150 = {:.3}%", median(warped_150));
}
