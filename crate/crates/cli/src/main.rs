use clap::Parser;
use palmrt_cli::Cli;

fn main() {
    std::process::exit(palmrt_cli::run(Cli::parse()));
}
