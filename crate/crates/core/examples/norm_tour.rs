//! Tour of the finite-dimensional norms: plain, weighted, and mixed
//! lp norms, their duals, and aligned dual vectors.
//!
//! Run with: cargo run --example norm_tour

use bdglab::norms::NormSpec;
use nalgebra::DVector;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = DVector::from_column_slice(&[3.0, -4.0, 0.0, 1.0]);

    for spec in [
        NormSpec::lp(1.0, 4)?,
        NormSpec::lp(2.0, 4)?,
        NormSpec::lp(f64::INFINITY, 4)?,
        NormSpec::weighted_lp(2.0, vec![1.0, 2.0, 0.5, 1.0])?,
        NormSpec::mixed(1.0, 2.0, 2, 4)?,
    ] {
        let json = serde_json::to_string(&spec)?;
        println!("norm {json}");
        println!("  ||x||   = {:.6}", spec.norm(&x)?);
        let dual = spec.dual();
        println!("  dual    = {}", serde_json::to_string(&dual)?);
        println!("  ||x||_* = {:.6}", spec.dual_norm(&x)?);
        if let Some(xstar) = spec.dual_aligned(&x)? {
            // The aligned dual vector attains <x, x*> = ||x|| with
            // ||x*||_* = 1.
            println!(
                "  aligned pairing = {:.6} (dual norm {:.6})",
                x.dot(&xstar),
                spec.dual_norm(&xstar)?
            );
        }
    }
    Ok(())
}
