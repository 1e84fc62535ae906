use clap::Parser;

fn main() {
    let cli = tcgen_cli::Cli::parse();
    let default_level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level)).init();
    std::process::exit(tcgen_cli::run(&cli));
}
