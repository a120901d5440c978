use clap::Parser;

fn main() {
    let cli = mixdiff::cli::Cli::parse();
    std::process::exit(mixdiff::cli::run(cli));
}
