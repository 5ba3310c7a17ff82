use clap::Parser;
use dsrgan::cli::{exit_code, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
