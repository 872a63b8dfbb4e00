use clap::Parser;

use cavity_heat::cli::{run, Cli, Command};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            if let Err(e) = run(&args) {
                eprintln!("error: {e}");
                std::process::exit(e.exit_code());
            }
        }
    }
}
