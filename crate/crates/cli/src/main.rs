use clap::Parser;

use css_lab::commands::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli, &mut std::io::stdout().lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("css-lab: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
