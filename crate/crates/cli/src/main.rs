use clap::Parser;
use mpenssar_cli::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = mpenssar_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
