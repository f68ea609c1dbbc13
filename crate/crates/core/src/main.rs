use clap::Parser;

fn main() {
    let cli = cnnpca::cli::Cli::parse();
    if let Err((code, msg)) = cnnpca::cli::run(cli) {
        eprintln!("error: {msg}");
        std::process::exit(code);
    }
}
