use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use pilotsize::data::{LabeledDataset, SplitPlan};
use pilotsize::resample;

fn main() {
    let mut betas = Vec::new();
    for seed in 0..12u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7_700 + seed);
        let n = 100; let p = 200;
        let features = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
        let ds = LabeledDataset::new(labels, None, features, None, None).unwrap();
        let plan = SplitPlan::new(5, 30, 500 + seed).unwrap();
        match resample::rcs_cv(&ds, &plan) {
            Ok((slope, _)) => { println!("seed {seed}: beta_n = {:.3} (degenerate {})", slope.beta_n, slope.n_degenerate); betas.push(slope.beta_n); }
            Err(e) => println!("seed {seed}: {e}"),
        }
    }
    let mean = betas.iter().sum::<f64>() / betas.len() as f64;
    let sd = (betas.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (betas.len() - 1) as f64).sqrt();
    println!("across datasets: mean {:.3} sd {:.3}", mean, sd);
}
