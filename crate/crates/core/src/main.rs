use std::process::ExitCode;

fn main() -> ExitCode {
    fhn_split::cli::run(std::env::args_os())
}
