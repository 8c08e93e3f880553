use clap::Parser;

fn main() {
    std::process::exit(motsim::cli::main_with(motsim::cli::Cli::parse()));
}
