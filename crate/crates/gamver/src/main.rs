use clap::Parser;
use gamver::cli::Cli;
use gamver::{commands, EXIT_OK};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GAMVER_LOG", "warn")).init();
    let cli = Cli::parse();
    let code = match commands::run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
