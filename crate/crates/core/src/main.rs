use std::process::ExitCode;

fn main() -> ExitCode {
    vqpool::cli::main()
}
