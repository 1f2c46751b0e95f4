use clap::Parser;

fn main() {
    let cli = scape_cli::Cli::parse();
    if let Err(e) = scape_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
