//! Adversarial search over predictable contractions of a dyadic
//! martingale: how large can E sup||N||^p get relative to the source?
//! At p = 2 under the Euclidean norm the answer is capped at 4 by the
//! second-moment comparison.
//!
//! Run with: cargo run --example domination_search

use bdglab::experiments::domination_check;
use bdglab::norms::NormSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (norm, label) in [
        (NormSpec::lp(2.0, 2)?, "lp(2)"),
        (NormSpec::lp(1.0, 2)?, "lp(1)"),
        (NormSpec::lp(f64::INFINITY, 2)?, "lp(inf)"),
    ] {
        let report = domination_check(&norm, 2.0, 6, 2000, 99)?;
        println!(
            "{label:<7} p=2: worst ratio {:.4} over {} transforms (identity {:.4}, zero {:.1})",
            report.worst_ratio,
            report.transforms_searched,
            report.identity_ratio,
            report.zero_ratio
        );
    }
    Ok(())
}
