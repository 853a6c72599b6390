use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(medaide::cli::main_from_env())
}
