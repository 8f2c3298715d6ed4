//! Elementary stochastic integration: the covariation of the integral
//! path equals the integrand-side form exactly, path by path, with the
//! rank-one quadratic-variation derivative.
//!
//! Run with: cargo run --example elementary_integral

use bdglab::quadvar::covariation_form;
use bdglab::rng::StreamId;
use bdglab::stochint::{integrand_form, integrate, DriverPath, ElementaryProcess};
use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_distr::StandardNormal;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = StreamId::root(11).rng();
    let driver = DriverPath::brownian(2, 128, 1.0, &mut rng)?;
    println!(
        "driver: k=2, 128 steps, max trace(q) excess {:.2e}",
        driver.max_trace_excess()
    );

    // A predictable integrand: each block reads the driver value at its
    // left endpoint.
    let breakpoints: Vec<f64> = (0..=4).map(|j| j as f64 / 4.0).collect();
    let phi = ElementaryProcess::new_adapted(
        breakpoints,
        Box::new(|_block, history: &[DVector<f64>]| {
            let last = history.last().unwrap();
            DMatrix::from_fn(3, 2, |r, c| (last[c] * (r + 1) as f64).tanh())
        }),
    )?;

    let integral = integrate(&phi, &driver)?;
    println!("integral terminal value: {:?}", integral.terminal().as_slice());

    let lhs = covariation_form(&integral, integral.steps())?;
    let rhs = integrand_form(&phi, &driver, driver.steps())?;
    let residual = (lhs.matrix() - rhs.matrix()).abs().max();
    println!("pathwise covariation identity residual: {residual:.3e}");

    // A fixed random two-block integrand for contrast.
    let mid = driver.path().times()[64];
    let blocks: Vec<DMatrix<f64>> = (0..2)
        .map(|_| DMatrix::from_fn(3, 2, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let phi = ElementaryProcess::new(vec![0.0, mid, 1.0], blocks)?;
    let integral = integrate(&phi, &driver)?;
    let lhs = covariation_form(&integral, integral.steps())?;
    let rhs = integrand_form(&phi, &driver, driver.steps())?;
    println!(
        "two-block integrand residual: {:.3e}",
        (lhs.matrix() - rhs.matrix()).abs().max()
    );
    Ok(())
}
