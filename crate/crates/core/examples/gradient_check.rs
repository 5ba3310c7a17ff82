//! Checks every differentiable operator against central finite differences.
//!
//! ```text
//! cargo run --release --example gradient_check -- 3
//! ```

use dsrgan::autodiff::{op_cases, GradCheckOptions};

fn main() -> dsrgan::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    for seed in 0..seeds {
        for mut case in op_cases(seed) {
            let r = case.check(GradCheckOptions::default())?;
            println!(
                "seed {seed} {:<22} {:>5} entries  max rel err {:.2e}  kinked {}",
                case.name, r.checked, r.max_rel_err, r.kinked
            );
        }
    }
    Ok(())
}
