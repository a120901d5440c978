//! Predictor-corrector separation with the exact score of a Gaussian source
//! prior. The samples should follow the posterior N(y/2, 1/2) per coordinate.
//!
//! cargo run --release --example gaussian_posterior_sampling

use mixdiff::oracle::{GaussianPrior, PosteriorScore};
use mixdiff::sampler::{separate_many, SamplerConfig};
use mixdiff::sde::SdeParams;

fn main() -> mixdiff::Result<()> {
    let (k, n, runs) = (2, 8, 2000);
    let p = SdeParams::new(k, n);
    let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() * 2.0).collect();
    let score = PosteriorScore::gaussian(&GaussianPrior::standard(k, n), p);
    let cfg = SamplerConfig::default();

    let workers = std::thread::available_parallelism().map_or(1, |w| w.get());
    let start = std::time::Instant::now();
    let samples = separate_many(&vec![y.clone(); runs], &score, &cfg, &p, workers)?;
    println!("{runs} runs of {} predictor steps in {:.2?}", cfg.n_predictor, start.elapsed());

    println!(" idx   y/2      mean     var");
    for (i, yi) in y.iter().enumerate() {
        let v: Vec<f64> = samples.iter().map(|s| s.block(0)[i]).collect();
        let mean = v.iter().sum::<f64>() / runs as f64;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        println!("{i:4}  {:7.3}  {mean:7.3}  {var:6.3}", yi / 2.0);
    }
    Ok(())
}
