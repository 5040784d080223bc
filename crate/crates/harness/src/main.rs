use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(cylren_harness::run(std::env::args_os()))
}
