use std::io::{stderr, stdout};
use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = drsgt::cli::run(std::env::args_os(), &mut stdout(), &mut stderr());
    ExitCode::from(code)
}
