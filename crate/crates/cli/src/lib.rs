//! Command-line front end for the `nestmdp` solvers.
//!
//! Exit codes: 0 success, 1 I/O, 2 validation, 3 shape mismatch,
//! 4 conversion precondition, 5 non-convergence. Failures print a one-line
//! JSON error record to stderr; timings also go to stderr so that every
//! file written under `--out` is reproducible byte for byte.

mod args;
mod commands;
mod error;
mod output;

pub use args::{Cli, Command, Common, Direction};
pub use error::{CliError, EXIT_IO, EXIT_NOT_CONVERGED, EXIT_PRECONDITION, EXIT_SHAPE, EXIT_VALIDATION};
pub use output::num;

use output::OutDir;

fn validate(c: &Common) -> Result<(), CliError> {
    if !(c.tol > 0.0 && c.tol.is_finite()) {
        return Err(CliError::Config(format!("--tol must be positive, got {}", c.tol)));
    }
    if c.max_iter == 0 {
        return Err(CliError::Config("--max-iter must be positive".into()));
    }
    if c.mc_samples == 0 {
        return Err(CliError::Config("--mc-samples must be positive".into()));
    }
    if c.trials == 0 {
        return Err(CliError::Config("--trials must be positive".into()));
    }
    Ok(())
}

fn positive(name: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {x}")))
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let c = &cli.common;
    validate(c)?;
    if let Command::Compare { eq_tol, .. } | Command::Figure1 { eq_tol } = &cli.command {
        positive("--eq-tol", *eq_tol)?;
    }
    let out = OutDir::prepare(&c.out)?;
    match &cli.command {
        Command::Solve { model } => commands::solve(c, &out, model),
        Command::Compare {
            x,
            y,
            offset,
            eq_tol,
            no_corners,
        } => commands::compare(c, &out, x, y, offset.as_deref(), *eq_tol, !no_corners),
        Command::Figure1 { eq_tol } => commands::figure1(c, &out, *eq_tol),
        Command::Convert { direction, model } => commands::convert(c, &out, *direction, model),
        Command::Gen {
            states,
            actions,
            discount,
            reward_lo,
            reward_hi,
        } => commands::gen(c, &out, *states, *actions, *discount, (*reward_lo, *reward_hi)),
    }
}
