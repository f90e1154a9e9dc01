use clap::Parser;

fn main() {
    let cli = deixis::cli::Cli::parse();
    if let Err(err) = deixis::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
