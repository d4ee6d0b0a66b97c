use clap::Parser;
use cpals::cli::{init_threads, run_command, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads(cli.threads).and_then(|()| run_command(&cli.command));
    if let Err(e) = result {
        let code = e.exit_code();
        eprintln!("error: {}", anyhow::Error::from(e));
        std::process::exit(code);
    }
}
