use std::process::ExitCode;

fn main() -> ExitCode {
    flowcast::cli::main()
}
