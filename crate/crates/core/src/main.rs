use clap::Parser;

use cocycle::cli::{run, to_json_17, Cli, EXIT_MALFORMED};

fn main() {
    let cli = Cli::parse();
    let outcome = run(&cli);
    let text = to_json_17(&outcome.report);
    let code = match &cli.common.out {
        Some(path) => match std::fs::write(path, &text) {
            Ok(()) => outcome.code,
            Err(e) => {
                eprintln!("cannot write {}: {e}", path.display());
                EXIT_MALFORMED
            }
        },
        None => {
            print!("{text}");
            outcome.code
        }
    };
    if let Some(err) = outcome.report.get("error") {
        eprintln!("error: {}", err.as_str().unwrap_or_default());
    }
    std::process::exit(code);
}
