use clap::Parser;

fn main() {
    let cli = nrt::cli::Cli::parse();
    std::process::exit(nrt::cli::run(cli));
}
