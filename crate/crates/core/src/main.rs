use std::panic;
use std::process::ExitCode;

fn main() -> ExitCode {
    let code = panic::catch_unwind(|| legonet::cli::main_with_args(std::env::args_os()))
        .unwrap_or(70);
    ExitCode::from(code.clamp(0, 255) as u8)
}
