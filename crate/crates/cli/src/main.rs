use clap::Parser;

fn main() {
    let cli = gimo_cli::Cli::parse();
    if let Err(e) = gimo_cli::run(cli) {
        eprintln!("gimo: {e}");
        std::process::exit(1);
    }
}
