//! Exact scores and source posteriors for Gaussian and GMM priors.
//!
//! cargo run --release --example oracle_scores

use mixdiff::mixing::StackedSignal;
use mixdiff::oracle::{marginal_of_prior, oracle_score_gaussian, oracle_score_gmm, posterior_sources_given_mixture, BlockGmm, GaussianPrior};
use mixdiff::sde::SdeParams;
use mixdiff::signal::toy_gmm_prior;

fn main() -> mixdiff::Result<()> {
    let (k, n) = (2, 8);
    let p = SdeParams::new(k, n);
    let prior = GaussianPrior::standard(k, n).to_block();
    let x = StackedSignal::from_blocks(&[[0.3, -1.0, 0.8, 0.0, 0.5, 0.2, -0.4, 1.1], [1.2, 0.4, -0.6, 0.1, -0.3, 0.9, 0.0, -0.7]])?;

    for t in [0.1, 0.5, 1.0] {
        let marginal = marginal_of_prior(&prior, t, &p);
        let score = oracle_score_gaussian(&x, t, &prior, &p)?;
        println!("t = {t}: log p = {:.4}, |score| = {:.4}", marginal.log_density(&x)?, score.norm());
    }

    let gmm = toy_gmm_prior(k, n)?.to_block()?;
    let score = oracle_score_gmm(&x, 0.5, &gmm, &p)?;
    println!("\ngmm score at t = 0.5: {:?}", score.unstack());

    // conditioning on the mixture
    let y = x.mix();
    let post = posterior_sources_given_mixture(&y, &BlockGmm::single(prior))?;
    let (_, g) = &post.components[0];
    println!("\nmixture {y:?}");
    println!("posterior mean of source 1: {:?}", g.mean.block(0));
    println!("posterior cross-source covariance:\n{}", g.cov);

    let post = posterior_sources_given_mixture(&y, &gmm)?;
    let weights: Vec<f64> = post.components.iter().map(|(w, _)| *w).collect();
    println!("gmm posterior component weights: {weights:.3?}");
    Ok(())
}
