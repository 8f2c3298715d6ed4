//! Lower-bounding the sign-transform constant of a norm by adversarial
//! search over dyadic martingales: alternating ascent over predictable
//! sign patterns and tree increments, with exact leaf-sum expectations.
//!
//! The Hilbert norm at p = 2 gives exactly 1 (orthogonality); the l1
//! norm grows with dimension.
//!
//! Run with: cargo run --example umd_probe

use bdglab::experiments::{umd_probe, UmdProbeResult};
use bdglab::norms::NormSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let hilbert = NormSpec::lp(2.0, 1)?;
    let probe = umd_probe(&hilbert, 2.0, 5, 400, 42, None)?;
    println!("lp(2), d=1, p=2: probe value {:.6} (exactly 1 by orthogonality)", probe.value);

    let probe = umd_probe(&hilbert, 4.0, 5, 800, 42, None)?;
    println!("lp(2), d=1, p=4: probe value {:.6} (ceiling 3)", probe.value);

    // l1 in growing dimension, warm-starting each search from the
    // previous optimum embedded by zero-padding.
    let mut prev: Option<UmdProbeResult> = None;
    for d in [2usize, 4, 8] {
        let norm = NormSpec::lp(1.0, d)?;
        let probe = umd_probe(&norm, 2.0, 4, 1500, 42, prev.as_ref())?;
        println!(
            "lp(1), d={d}, p=2: probe value {:.6} ({} evaluations{})",
            probe.value,
            probe.evaluations,
            if probe.budget_exhausted { ", budget exhausted" } else { "" }
        );
        prev = Some(probe);
    }
    Ok(())
}
