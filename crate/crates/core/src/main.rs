use std::process::ExitCode;

fn main() -> ExitCode {
    camelot::cli::run(std::env::args_os())
}
