//! Binary entry point: exit 0 on success, 1 on runtime failure, 2 on
//! usage errors (which the argument parser reports itself).

use std::process::ExitCode;

fn main() -> ExitCode {
    match lanecast::cli::run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
