use std::process::ExitCode;

fn main() -> ExitCode {
    toploc::cli::main()
}
