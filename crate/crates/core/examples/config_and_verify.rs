//! Builds a run configuration in code, shows its TOML form, and runs the
//! marginal verifier and a forward simulation through the command layer.
//!
//! cargo run --release --example config_and_verify

use mixdiff::cli::commands;
use mixdiff::cli::{Manifest, Overrides, RunConfig};

fn main() -> mixdiff::Result<()> {
    let mut cfg = RunConfig::from_toml("seed = 3\n[verify]\nn_paths = 5000\n")?;
    cfg.apply(&Overrides {
        out: Some(std::env::temp_dir().join("mixdiff_verify_example")),
        n: Some(8),
        ..Overrides::default()
    });
    let cfg = cfg.resolve()?;
    println!("{}", cfg.to_toml()?);

    let outcome = commands::verify(&cfg)?;
    outcome.lines.iter().for_each(|l| println!("{l}"));
    println!("exit code {}", outcome.exit_code());

    let outcome = commands::simulate_forward(&cfg)?;
    outcome.lines.iter().for_each(|l| println!("{l}"));

    let manifest = Manifest::new("verify", &cfg);
    println!("permutation set {:?}", manifest.permutation_set);
    Ok(())
}
