//! Finite-difference checks of every network primitive and of the full
//! policy and discriminator networks.
//!
//! cargo run --release --example gradient_check -- [--inject-bug]

use instasim::cli::{gradcheck_suite, GRADCHECK_TOLERANCE};
use instasim::nn::GradCheckOptions;

fn main() -> instasim::Result<()> {
    let inject = std::env::args().any(|a| a == "--inject-bug");
    let cases = gradcheck_suite(&GradCheckOptions::default(), inject)?;
    for c in &cases {
        println!(
            "{} {:<22} max rel error {:.2e} (tol {GRADCHECK_TOLERANCE:.0e}), {} probes, {} at kinks",
            if c.passed() { "ok  " } else { "FAIL" },
            c.name,
            c.report.max_rel_error,
            c.report.checked,
            c.report.skipped
        );
    }
    Ok(())
}
