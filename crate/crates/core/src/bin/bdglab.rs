//! Command-line front end: property verification, single experiment
//! runs from JSON configs, the unconditionality probe, and parameter
//! sweeps. Worker count comes from the `BDGLAB_WORKERS` environment
//! variable; everything else lives in the config.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bdglab::experiments::{
    bdg_ratio, norm_label, run_experiment, umd_probe, verify, with_workers, ExperimentConfig,
    ExperimentKind, UmdProbeResult,
};
use bdglab::martingales::Family;
use bdglab::norms::NormSpec;

#[derive(Parser)]
#[command(name = "bdglab", about = "Martingale inequality experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the property suite; exits nonzero on any violation.
    Verify {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Sample-count scale in (0, 1] for quick runs.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Run one experiment from a JSON config, writing CSV and JSON.
    Run { config: PathBuf },
    /// Lower-bound the sign-transform constant on dyadic martingales.
    ProbeUmd {
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, default_value_t = 5)]
        depth: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Norm exponent ("inf" for the sup norm).
        #[arg(long, default_value = "1")]
        norm_p: String,
        #[arg(long, default_value_t = 2000)]
        budget: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Probe each dimension up to `dim`, warm-starting from the
        /// previous optimum.
        #[arg(long)]
        sweep_dims: bool,
    },
    /// Cartesian ratio sweep over dimensions and exponents.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        dims: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        p: Vec<f64>,
        /// Norm exponent ("inf" for the sup norm).
        #[arg(long, default_value = "2")]
        norm_p: String,
        #[arg(long, default_value = "paley_walsh")]
        family: String,
        #[arg(long, default_value_t = 200)]
        replications: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn parse_exponent(s: &str) -> Result<f64, String> {
    if s.eq_ignore_ascii_case("inf") {
        Ok(f64::INFINITY)
    } else {
        s.parse::<f64>().map_err(|e| e.to_string())
    }
}

fn parse_family(s: &str) -> Result<Family, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown family {s}"))
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<ExitCode, Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    match cli.command {
        Command::Verify { seed, scale } => {
            let report = with_workers(|| verify(seed, scale))?;
            for c in &report.checks {
                let status = if c.pass { "PASS" } else { "FAIL" };
                println!("{status} {:<32} {}", c.name, c.detail);
            }
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Run { config } => {
            let text = std::fs::read_to_string(&config)?;
            let cfg: ExperimentConfig = serde_json::from_str(&text)?;
            cfg.validate()?;
            let report = with_workers(|| run_experiment(&cfg))?;
            let stem = cfg.output.clone().unwrap_or_else(|| cfg.name.clone());
            let csv_path = format!("{stem}.csv");
            let json_path = format!("{stem}.json");
            bdglab::experiments::write_csv(&report, BufWriter::new(File::create(&csv_path)?))?;
            bdglab::experiments::write_json(&report, BufWriter::new(File::create(&json_path)?))?;
            for cell in &report.cells {
                println!(
                    "{} p={} ratio={:.4} +- {:.4} envelope [{:.4}, {:.4}]",
                    cell.experiment, cell.p, cell.ratio, cell.ratio_stderr, cell.env_min,
                    cell.env_max
                );
            }
            for flag in &report.flags {
                println!("flag: {flag}");
            }
            println!("wrote {csv_path} and {json_path}");
            Ok(ExitCode::SUCCESS)
        }
        Command::ProbeUmd {
            p,
            depth,
            dim,
            norm_p,
            budget,
            seed,
            sweep_dims,
        } => {
            let np = parse_exponent(&norm_p)?;
            let dims: Vec<usize> = if sweep_dims {
                let mut d = 1;
                let mut out = Vec::new();
                while d <= dim {
                    out.push(d);
                    d *= 2;
                }
                out
            } else {
                vec![dim]
            };
            let mut prev: Option<UmdProbeResult> = None;
            for d in dims {
                let norm = NormSpec::lp(np, d)?;
                let probe =
                    with_workers(|| umd_probe(&norm, p, depth, budget, seed, prev.as_ref()))?;
                println!(
                    "norm={} d={} p={} depth={} value={:.6} evaluations={}{}",
                    norm_label(&norm),
                    d,
                    p,
                    depth,
                    probe.value,
                    probe.evaluations,
                    if probe.budget_exhausted {
                        " (budget exhausted)"
                    } else {
                        ""
                    }
                );
                prev = Some(probe);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            dims,
            p,
            norm_p,
            family,
            replications,
            seed,
            output,
        } => {
            let np = parse_exponent(&norm_p)?;
            let family = parse_family(&family)?;
            let mut cells = Vec::new();
            for &d in &dims {
                let cfg = ExperimentConfig {
                    name: format!("sweep[d={d}]"),
                    kind: ExperimentKind::Bdg,
                    norm: NormSpec::lp(np, d)?,
                    family,
                    steps: if family == Family::BrownianProxy { 256 } else { 8 },
                    horizon: 1.0,
                    lambda: 2.0,
                    p_list: p.clone(),
                    replications,
                    mc_samples: 4096,
                    master_seed: seed,
                    exhaustive: false,
                    phi: vec![],
                    driver_dim: None,
                    q_mode: None,
                    output: None,
                };
                cfg.validate()?;
                let report = with_workers(|| bdg_ratio(&cfg))?;
                cells.extend(report.cells);
            }
            let report = bdglab::experiments::ExperimentReport {
                config: ExperimentConfig {
                    name: "sweep".into(),
                    kind: ExperimentKind::Bdg,
                    norm: NormSpec::lp(np, dims[0])?,
                    family,
                    steps: 8,
                    horizon: 1.0,
                    lambda: 2.0,
                    p_list: p,
                    replications,
                    mc_samples: 4096,
                    master_seed: seed,
                    exhaustive: false,
                    phi: vec![],
                    driver_dim: None,
                    q_mode: None,
                    output: None,
                },
                run_id: format!("{seed:016x}"),
                wall_ms: 0,
                cells,
                flags: vec![],
            };
            match output {
                Some(path) => {
                    bdglab::experiments::write_csv(&report, BufWriter::new(File::create(&path)?))?;
                    println!("wrote {}", path.display());
                }
                None => bdglab::experiments::write_csv(&report, std::io::stdout().lock())?,
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
