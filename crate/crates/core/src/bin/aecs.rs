use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(aecs_core::cli::run(std::env::args_os()))
}
