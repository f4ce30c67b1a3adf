use std::process::ExitCode;

fn main() -> ExitCode {
    otfpf::cli::run(std::env::args_os())
}
