use clap::Parser;

fn main() -> std::process::ExitCode {
    let cli = persona_select::cli::Cli::parse();
    match persona_select::cli::run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
