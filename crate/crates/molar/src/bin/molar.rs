use clap::Parser;

fn main() {
    let cli = molar::cli::Cli::parse();
    std::process::exit(molar::cli::run(cli));
}
