use clap::Parser;

fn main() {
    let cli = mtwgeo::cli::Cli::parse();
    std::process::exit(mtwgeo::cli::main_with(cli));
}
