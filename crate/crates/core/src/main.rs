use std::process::ExitCode;

use clap::Parser;
use delay_orbit_atlas::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.common.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(out) => {
            print!("{}", out.summary);
            for g in out.report.verification.gates.iter().filter(|g| !g.pass) {
                eprintln!("FAIL {}: {:e} (tol {:e})", g.name, g.value, g.tol);
            }
            if out.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
