use std::process::ExitCode;

use philab_core::cli;
use philab_core::Error;

fn hint(err: &Error) -> Option<&'static str> {
    let Error::MissingInput(path) = err else {
        return None;
    };
    let name = path.file_name()?.to_str()?;
    Some(match name {
        "dataset.jsonl" | "pools.json" => "run `philab gen-data` with the same --out first",
        "checkpoint.bin" => "run `philab train` with the same --out first, or pass --checkpoint",
        "records.jsonl" => "run `philab eval` with the same --out first",
        _ => "check the path",
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match cli::run(std::env::args().collect()) {
        Ok(code) => ExitCode::from(code.clamp(0, 255) as u8),
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(h) = hint(&e) {
                eprintln!("hint: {h}");
            }
            ExitCode::from(1)
        }
    }
}
