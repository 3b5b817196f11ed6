use clap::Parser;

fn main() {
    let cli = virodyn::cli::Cli::parse();
    if let Err(e) = virodyn::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
