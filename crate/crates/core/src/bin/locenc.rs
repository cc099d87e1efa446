use clap::Parser;

fn main() {
    let cli = locenc::cli::Cli::parse();
    std::process::exit(locenc::cli::run(cli));
}
