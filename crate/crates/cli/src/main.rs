use clap::Parser;

fn main() {
    let cli = srgt_cli::Cli::parse();
    if let Err(e) = srgt_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(srgt_cli::exit_code(&e));
    }
}
