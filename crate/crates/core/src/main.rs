use std::process::ExitCode;

fn main() -> ExitCode {
    jointsr::cli::main()
}
