use std::process::ExitCode;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let to_stdout = !argv.iter().any(|a| a == "--out" || a.starts_with("--out="));
    match kfp_cli::run_command(&argv) {
        Ok(artifact) => {
            for r in &artifact.reports {
                eprintln!("{}: {}", r.name(), if r.pass() { "pass" } else { "FAIL" });
            }
            if to_stdout {
                println!("{}", artifact.to_json());
            }
            ExitCode::from(artifact.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
