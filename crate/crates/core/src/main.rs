use clap::Parser;

fn main() {
    let cli = germlab::cli::Cli::parse();
    std::process::exit(germlab::cli::execute(cli));
}
