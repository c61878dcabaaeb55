//! Finite-difference check of every differentiable op and module.
//!
//!     cargo run --example gradient_check -- dsti

use dest_core::gradcheck::{run_gradcheck, GradCheckOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let opts = GradCheckOptions {
        only: std::env::args().nth(1),
        ..GradCheckOptions::default()
    };
    let report = run_gradcheck(&opts)?;
    print!("{report}");
    println!("{}", if report.passed() { "all checks pass" } else { "some checks FAILED" });
    Ok(())
}
