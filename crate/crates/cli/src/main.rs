use clap::Parser;

fn main() {
    let cli = magging_cli::Cli::parse();
    let code = magging_cli::configure_threads()
        .and_then(|()| magging_cli::run(cli))
        .unwrap_or_else(|e| {
            eprintln!("error: {}", e.message);
            e.code
        });
    std::process::exit(code);
}
