use std::path::PathBuf;
use std::process::ExitCode;

use distilkit_cli::{analyze, runner, CliError, EXIT_VALIDATION};

const USAGE: &str = "\
usage:
  distilkit run MANIFEST --out DIR [--seed N]
  distilkit analyze SPEC [SPEC...]

Exit codes: 0 success, 2 validation error, 3 runtime contract error.";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(args: &[String]) -> Result<(), CliError> {
    match args.first().map(String::as_str) {
        Some("run") => {
            let mut manifest: Option<PathBuf> = None;
            let mut out: Option<PathBuf> = None;
            let mut seed: Option<u64> = None;
            let mut rest = args[1..].iter();
            while let Some(arg) = rest.next() {
                match arg.as_str() {
                    "--out" => {
                        let value = rest.next().ok_or_else(|| {
                            CliError::Validation("--out requires a directory".into())
                        })?;
                        out = Some(PathBuf::from(value));
                    }
                    "--seed" => {
                        let value = rest.next().ok_or_else(|| {
                            CliError::Validation("--seed requires an integer".into())
                        })?;
                        seed = Some(value.parse().map_err(|_| {
                            CliError::Validation(format!("--seed: \"{value}\" is not an integer"))
                        })?);
                    }
                    flag if flag.starts_with("--") => {
                        return Err(CliError::Validation(format!(
                            "unknown flag \"{flag}\"\n{USAGE}"
                        )));
                    }
                    path if manifest.is_none() => manifest = Some(PathBuf::from(path)),
                    extra => {
                        return Err(CliError::Validation(format!(
                            "unexpected argument \"{extra}\"\n{USAGE}"
                        )));
                    }
                }
            }
            let manifest = manifest
                .ok_or_else(|| CliError::Validation(format!("run requires a manifest\n{USAGE}")))?;
            let out = out
                .ok_or_else(|| CliError::Validation(format!("run requires --out DIR\n{USAGE}")))?;
            runner::run_experiment(&manifest, &out, seed)
        }
        Some("analyze") => {
            let table = analyze::analyze_specs(&args[1..])?;
            print!("{table}");
            Ok(())
        }
        Some(other) => Err(CliError::Validation(format!(
            "unknown command \"{other}\"\n{USAGE}"
        ))),
        None => {
            eprintln!("{USAGE}");
            std::process::exit(EXIT_VALIDATION);
        }
    }
}
