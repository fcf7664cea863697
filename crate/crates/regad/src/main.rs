use std::process::ExitCode;

fn main() -> ExitCode {
    regad::cli::main_with_args(std::env::args_os())
}
