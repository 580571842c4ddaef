use std::io;
use std::process::ExitCode;

use cnn_inte::{cli, config::SEED_ENV};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let seed = std::env::var(SEED_ENV).ok();
    let code = cli::run(std::env::args_os(), seed.as_deref(), &mut io::stdout().lock());
    ExitCode::from(code as u8)
}
