use std::process::ExitCode;

fn main() -> ExitCode {
    // Usage errors exit with code 2 inside the parser; anything the
    // subcommands report is a domain failure → exit code 1.
    match larlens::cli::run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
