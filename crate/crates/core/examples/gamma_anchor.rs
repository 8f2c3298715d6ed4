//! The Gaussian characteristic of a covariance form: exact under the
//! Euclidean norm, Monte Carlo elsewhere, with the sup-norm closed form
//! gamma(I_2) = sqrt(1 + 2/pi) as an anchor.
//!
//! Run with: cargo run --example gamma_anchor

use bdglab::bilinear::SymBilinearForm;
use bdglab::gaussian::{gamma_general, gamma_psd};
use bdglab::norms::NormSpec;
use bdglab::rng::StreamId;
use nalgebra::DMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Euclidean branch: gamma(V) = sqrt(trace V), no sampling.
    let euclid = NormSpec::lp(2.0, 4)?;
    let g = gamma_psd(&SymBilinearForm::identity(4), &euclid, 2, StreamId::root(1))?;
    println!("gamma(I_4) under lp(2): {:.12} (exact: {})", g.value, g.exact);

    // Sup-norm branch: E max(g1^2, g2^2) = 1 + 2/pi.
    let sup = NormSpec::lp(f64::INFINITY, 2)?;
    let g = gamma_psd(&SymBilinearForm::identity(2), &sup, 1_000_000, StreamId::root(2))?;
    let target = (1.0 + 2.0 / std::f64::consts::PI).sqrt();
    println!(
        "gamma(I_2) under lp(inf): {:.6} +- {:.6} (closed form {target:.6})",
        g.value, g.stderr
    );

    // Indefinite forms split into positive and negative parts.
    let v = SymBilinearForm::from_matrix(DMatrix::from_row_slice(
        2,
        2,
        &[1.0, 0.5, 0.5, -2.0],
    ))?;
    let g = gamma_general(&v, &sup, 200_000, StreamId::root(3))?;
    println!("gamma of an indefinite form: {:.6} +- {:.6}", g.value, g.stderr);
    Ok(())
}
