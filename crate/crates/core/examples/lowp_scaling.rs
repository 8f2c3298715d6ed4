//! Low-exponent ratios for the continuous proxy: the two-sided
//! comparison still behaves at p = 1/2, and both sides follow the
//! quarter-power time scaling (T -> 4T multiplies them by sqrt(2)).
//!
//! Run with: cargo run --example lowp_scaling

use bdglab::experiments::{lowp_continuous, lowp_scaling_check, ExperimentConfig, ExperimentKind};
use bdglab::martingales::Family;
use bdglab::norms::NormSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ExperimentConfig {
        name: "lowp".into(),
        kind: ExperimentKind::LowpContinuous,
        norm: NormSpec::lp(2.0, 2)?,
        family: Family::BrownianProxy,
        steps: 256,
        horizon: 1.0,
        lambda: 2.0,
        p_list: vec![0.5],
        replications: 3000,
        mc_samples: 4096,
        master_seed: 31,
        exhaustive: false,
        phi: vec![],
        driver_dim: None,
        q_mode: None,
        output: None,
    };

    let report = lowp_continuous(&config, &[256, 1024])?;
    for cell in &report.cells {
        println!(
            "{:<16} p={} ratio {:.4} +- {:.4}",
            cell.experiment, cell.p, cell.ratio, cell.ratio_stderr
        );
    }

    let (lr, ls, rr, rs) = lowp_scaling_check(&config, 0.5)?;
    println!("T -> 4T scaling (target sqrt(2) = {:.4}):", 2.0f64.sqrt());
    println!("  sup side:   {lr:.4} +- {ls:.4}");
    println!("  gamma side: {rr:.4} +- {rs:.4}");
    Ok(())
}
