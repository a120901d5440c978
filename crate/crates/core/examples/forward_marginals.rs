//! Simulates the forward mixing SDE and compares Monte-Carlo moments with the
//! closed-form marginal.
//!
//! cargo run --release --example forward_marginals

use mixdiff::mixing::StackedSignal;
use mixdiff::sde::SdeParams;
use mixdiff::verify::{lambda_curve, verify_marginals_mc, McSettings};

fn main() -> mixdiff::Result<()> {
    let p = SdeParams::new(2, 4);
    let s = StackedSignal::from_blocks(&[[1.0, -0.5, 0.25, 2.0], [-1.0, 0.5, 1.5, 0.0]])?;

    let report = verify_marginals_mc(&s, &[0.25, 0.5, 1.0], &p, McSettings::default())?;
    println!("   t   mean err   lambda1 (theory / mc)    lambda2 (theory / mc)");
    for r in &report.rows {
        println!(
            "{:5.2}  {:9.2e}   {:.5} / {:.5}        {:.5} / {:.5}",
            r.t, r.mean_rel_err, r.lambda1_theory, r.lambda1_mc, r.lambda2_theory, r.lambda2_mc
        );
    }

    // the mixture is preserved in the mean, the differences decay at rate γ
    let mu = p.marginal(1.0, &s).mu;
    println!("\nmean at T: {:?}", mu.unstack());
    println!("mixture of the mean: {:?} (sources mix to {:?})", mu.mix(), s.mix());

    println!("\n   t      g(t)   e^-γt   lambda1  lambda2");
    for pt in lambda_curve(&p, 6) {
        println!("{:5.2}  {:7.4}  {:6.4}  {:7.4}  {:7.4}", pt.t, pt.g, pt.decay, pt.lambda1, pt.lambda2);
    }
    Ok(())
}
