use clap::Parser;

fn main() {
    let code = hyplab::cli::main_with(hyplab::cli::Cli::parse());
    std::process::exit(code);
}
