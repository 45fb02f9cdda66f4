use tmgan::checks::{grad_suite, nps_suite, theorem_suite};

use crate::{CheckArgs, CliError, CliResult, Suite};

pub fn run(args: &CheckArgs) -> CliResult<()> {
    let suites: &[Suite] = match args.suite {
        Suite::All => &[Suite::Grad, Suite::Theorem, Suite::Nps],
        Suite::Grad => &[Suite::Grad],
        Suite::Theorem => &[Suite::Theorem],
        Suite::Nps => &[Suite::Nps],
    };
    let mut failed = Vec::new();
    for &s in suites {
        let report = match s {
            Suite::Grad => grad_suite(args.seed)?,
            Suite::Theorem => theorem_suite(args.seed)?,
            Suite::Nps => nps_suite(args.seed)?,
            Suite::All => unreachable!("expanded above"),
        };
        print!("{}", report.render());
        if !report.pass() {
            failed.push(report.suite);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("failed suites: {}", failed.join(", "))))
    }
}
