use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(metagrad_cli::run(std::env::args_os()))
}
