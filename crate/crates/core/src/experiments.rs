//! Experiment harness: two-sided ratio estimates, adversarial searches,
//! the property-check suite behind `verify`, and report writers.
//!
//! Every estimator draws from substreams indexed by replication, and
//! replication results are merged in index order, so reports are
//! reproducible bit-for-bit across worker counts.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bilinear::{psd_gap, SymBilinearForm};
use crate::gaussian::{gamma_psd, GammaEstimate};
use crate::martingales::{
    gen_brownian_proxy, gen_compound_poisson, gen_gaussian_walk, DyadicTree, Family,
    MartingalePath, MAX_EXHAUSTIVE_DEPTH,
};
use crate::norms::{Exponent, NormKind, NormSpec};
use crate::quadvar::covariation_form;
use crate::rng::StreamId;
use crate::stochint::{integrand_form, integrate, DriverPath, ElementaryProcess, QMode};
use crate::{Error, Result};

/// Environment variable selecting the worker count for a run.
pub const WORKERS_ENV: &str = "BDGLAB_WORKERS";

/// Run `f` on a thread pool sized by [`WORKERS_ENV`] (global pool when
/// unset). Results do not depend on the worker count: all parallel maps
/// collect in index order.
pub fn with_workers<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
    {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
        _ => f(),
    }
}

fn default_steps() -> usize {
    8
}

fn default_horizon() -> f64 {
    1.0
}

fn default_lambda() -> f64 {
    2.0
}

fn default_mc() -> u64 {
    10_000
}

/// One block of an elementary integrand in config form: the value on
/// `(interval[0], interval[1]]`, row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhiBlock {
    pub interval: [f64; 2],
    pub matrix: Vec<Vec<f64>>,
}

/// Which ratio experiment a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    Bdg,
    Ito,
    LowpContinuous,
    IndependentIncrements,
}

/// Declarative description of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub kind: ExperimentKind,
    pub norm: NormSpec,
    pub family: Family,
    /// Tree depth for `paley_walsh`, grid steps otherwise.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Jump rate for `compound_poisson`.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub p_list: Vec<f64>,
    pub replications: usize,
    /// Inner Gaussian sample count per path (ignored on the exact
    /// Euclidean branch).
    #[serde(default = "default_mc")]
    pub mc_samples: u64,
    pub master_seed: u64,
    /// Exact leaf-sum expectations instead of sampling (trees only).
    #[serde(default)]
    pub exhaustive: bool,
    /// Integrand blocks for the integral experiment.
    #[serde(default)]
    pub phi: Vec<PhiBlock>,
    /// Driver coordinate count for the integral experiment.
    #[serde(default)]
    pub driver_dim: Option<usize>,
    #[serde(default)]
    pub q_mode: Option<QMode>,
    /// Output stem; the runner writes `<output>.csv` and `<output>.json`.
    #[serde(default)]
    pub output: Option<String>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p_list.is_empty() {
            return Err(Error::InvalidConfig("p_list must be non-empty".into()));
        }
        for &p in &self.p_list {
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::InvalidConfig(format!("exponent {p} must be in (0, inf)")));
            }
            if p < 1.0 && self.family != Family::BrownianProxy {
                return Err(Error::InvalidConfig(format!(
                    "exponent {p} < 1 requires the brownian_proxy family"
                )));
            }
        }
        if self.family == Family::Transformed {
            return Err(Error::InvalidConfig(
                "transformed is not a generator family".into(),
            ));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be positive".into()));
        }
        if self.exhaustive {
            if self.family != Family::PaleyWalsh {
                return Err(Error::InvalidConfig(
                    "exhaustive mode requires the paley_walsh family".into(),
                ));
            }
            if self.steps > MAX_EXHAUSTIVE_DEPTH {
                return Err(Error::InvalidConfig(format!(
                    "exhaustive depth {} exceeds cap {MAX_EXHAUSTIVE_DEPTH}",
                    self.steps
                )));
            }
        } else if self.replications < 2 {
            return Err(Error::InvalidConfig(
                "sampled mode needs at least 2 replications".into(),
            ));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        Ok(())
    }
}

/// One (p, variant) row of a report. Field order matches the CSV schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub experiment: String,
    pub norm: String,
    pub d: usize,
    pub p: f64,
    pub family: String,
    pub replications: usize,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub ratio: f64,
    pub ratio_stderr: f64,
    pub env_min: f64,
    pub env_max: f64,
    pub seed: u64,
    pub wall_ms: u64,
}

/// Full result of one experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub run_id: String,
    pub wall_ms: u64,
    pub cells: Vec<CellReport>,
    /// Degeneracies and caveats (e.g. a zero denominator).
    pub flags: Vec<String>,
}

/// Short label for report rows, e.g. `lp(2)`, `wlp(1.5)`, `mixed(1,inf,2)`.
pub fn norm_label(spec: &NormSpec) -> String {
    fn exp(e: Exponent) -> String {
        match e {
            Exponent::Infinity => "inf".into(),
            Exponent::Finite(p) => format!("{p}"),
        }
    }
    match spec.kind() {
        NormKind::Lp { p } => format!("lp({})", exp(*p)),
        NormKind::WeightedLp { p, .. } => format!("wlp({})", exp(*p)),
        NormKind::Mixed {
            outer_p,
            inner_p,
            block_dim,
        } => format!("mixed({},{},{})", exp(*outer_p), exp(*inner_p), block_dim),
    }
}

/// Paired per-replication samples of both sides of an inequality.
struct PairedSamples {
    lhs: Vec<f64>,
    rhs: Vec<f64>,
}

struct PairedStats {
    lhs: f64,
    lhs_stderr: f64,
    rhs: f64,
    rhs_stderr: f64,
    ratio: f64,
    ratio_stderr: f64,
    env_min: f64,
    env_max: f64,
}

impl PairedSamples {
    /// Delta-method ratio statistics with a sub-batch envelope.
    fn stats(&self) -> PairedStats {
        let n = self.lhs.len() as f64;
        let lm = self.lhs.iter().sum::<f64>() / n;
        let rm = self.rhs.iter().sum::<f64>() / n;
        let (mut vl, mut vr, mut cov) = (0.0, 0.0, 0.0);
        for (l, r) in self.lhs.iter().zip(&self.rhs) {
            vl += (l - lm) * (l - lm);
            vr += (r - rm) * (r - rm);
            cov += (l - lm) * (r - rm);
        }
        let denom = (n - 1.0).max(1.0);
        vl /= denom;
        vr /= denom;
        cov /= denom;
        let (ratio, ratio_stderr) = if rm > 0.0 {
            let ratio = lm / rm;
            let var = (vl / (rm * rm) + lm * lm * vr / (rm * rm * rm * rm)
                - 2.0 * lm * cov / (rm * rm * rm))
                .max(0.0)
                / n;
            (ratio, var.sqrt())
        } else {
            (f64::NAN, f64::NAN)
        };
        // Envelope over contiguous sub-batches.
        let nb = self.lhs.len().min(10).max(1);
        let mut env_min = f64::INFINITY;
        let mut env_max = f64::NEG_INFINITY;
        for b in 0..nb {
            let lo = b * self.lhs.len() / nb;
            let hi = (b + 1) * self.lhs.len() / nb;
            if hi == lo {
                continue;
            }
            let bl: f64 = self.lhs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            let br: f64 = self.rhs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            if br > 0.0 {
                env_min = env_min.min(bl / br);
                env_max = env_max.max(bl / br);
            }
        }
        if env_min > env_max {
            env_min = f64::NAN;
            env_max = f64::NAN;
        }
        PairedStats {
            lhs: lm,
            lhs_stderr: (vl.max(0.0) / n).sqrt(),
            rhs: rm,
            rhs_stderr: (vr.max(0.0) / n).sqrt(),
            ratio,
            ratio_stderr,
            env_min,
            env_max,
        }
    }
}

/// Path generator shared by the ratio experiments.
enum Generator {
    Tree(DyadicTree),
    GaussianWalk {
        steps: usize,
        dim: usize,
        step_cov: SymBilinearForm,
    },
    BrownianProxy {
        steps: usize,
        dim: usize,
        horizon: f64,
    },
    CompoundPoisson {
        lambda: f64,
        horizon: f64,
        grid: Vec<f64>,
        dim: usize,
    },
}

impl Generator {
    fn from_config(config: &ExperimentConfig) -> Result<Generator> {
        let d = config.norm.dim();
        Ok(match config.family {
            Family::PaleyWalsh => Generator::Tree(DyadicTree::random(
                config.steps,
                d,
                1.0,
                StreamId::root(config.master_seed).child(0),
            )?),
            Family::GaussianWalk => Generator::GaussianWalk {
                steps: config.steps,
                dim: d,
                step_cov: SymBilinearForm::identity(d)
                    .scale(config.horizon / config.steps as f64),
            },
            Family::BrownianProxy => Generator::BrownianProxy {
                steps: config.steps,
                dim: d,
                horizon: config.horizon,
            },
            Family::CompoundPoisson => {
                let k = config.steps;
                let grid = (0..=k)
                    .map(|j| config.horizon * j as f64 / k as f64)
                    .collect();
                Generator::CompoundPoisson {
                    lambda: config.lambda,
                    horizon: config.horizon,
                    grid,
                    dim: d,
                }
            }
            Family::Transformed => {
                return Err(Error::InvalidConfig(
                    "transformed is not a generator family".into(),
                ))
            }
        })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MartingalePath> {
        match self {
            Generator::Tree(tree) => Ok(tree.sample(rng)),
            Generator::GaussianWalk {
                steps,
                dim,
                step_cov,
            } => gen_gaussian_walk(*steps, *dim, std::slice::from_ref(step_cov), rng),
            Generator::BrownianProxy {
                steps,
                dim,
                horizon,
            } => gen_brownian_proxy(*steps, *dim, *horizon, rng),
            Generator::CompoundPoisson {
                lambda,
                horizon,
                grid,
                dim,
            } => {
                let d = *dim;
                let cp = gen_compound_poisson(
                    *lambda,
                    *horizon,
                    |r: &mut R| DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal)),
                    grid,
                    rng,
                )?;
                Ok(cp.path)
            }
        }
    }
}

/// `gamma([[M]]_T)` for one path, with a dedicated substream.
fn path_gamma(
    path: &MartingalePath,
    spec: &NormSpec,
    mc_samples: u64,
    stream: StreamId,
) -> Result<GammaEstimate> {
    let form = covariation_form(path, path.steps())?;
    gamma_psd(&form, spec, mc_samples, stream)
}

/// Per-path functionals `(sup-norm, gamma)` for every replication, in
/// replication order regardless of worker count.
fn sampled_pairs(
    config: &ExperimentConfig,
    generator: &Generator,
) -> Result<Vec<(f64, f64)>> {
    (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let rep_stream = StreamId::root(config.master_seed).child(1 + rep as u64);
            let mut rng = rep_stream.child(0).rng();
            let path = generator.sample(&mut rng)?;
            let sup = path.sup_norm(&config.norm)?;
            let gamma = path_gamma(&path, &config.norm, config.mc_samples, rep_stream.child(1))?;
            Ok((sup, gamma.value))
        })
        .collect()
}

/// The two-sided ratio experiment: `E sup_k ||M_{t_k}||^p` against
/// `E gamma([[M]]_T)^p`, per exponent in `p_list`.
pub fn bdg_ratio(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let generator = Generator::from_config(config)?;
    let mut cells = Vec::new();
    let mut flags = Vec::new();

    if config.exhaustive {
        let Generator::Tree(tree) = &generator else {
            unreachable!("validated: exhaustive implies a tree");
        };
        for &p in &config.p_list {
            let cell_start = Instant::now();
            let lhs = tree.expectation(|path| {
                path.sup_norm(&config.norm).expect("dims consistent").powf(p)
            })?;
            let rhs = tree.expectation(|path| {
                let leaf = path.leaf().expect("tree path") as u64;
                path_gamma(
                    path,
                    &config.norm,
                    config.mc_samples,
                    StreamId::root(config.master_seed).child(1).child(leaf),
                )
                .expect("dims consistent")
                .value
                .powf(p)
            })?;
            let ratio = if rhs > 0.0 { lhs / rhs } else { f64::NAN };
            if !(rhs > 0.0) {
                flags.push(format!("p={p}: zero denominator, ratio undefined"));
            }
            cells.push(CellReport {
                experiment: config.name.clone(),
                norm: norm_label(&config.norm),
                d: config.norm.dim(),
                p,
                family: config.family.to_string(),
                replications: tree.num_leaves(),
                lhs,
                lhs_stderr: 0.0,
                rhs,
                rhs_stderr: 0.0,
                ratio,
                ratio_stderr: 0.0,
                env_min: ratio,
                env_max: ratio,
                seed: config.master_seed,
                wall_ms: cell_start.elapsed().as_millis() as u64,
            });
        }
    } else {
        let cell_start = Instant::now();
        let pairs = sampled_pairs(config, &generator)?;
        for &p in &config.p_list {
            let samples = PairedSamples {
                lhs: pairs.iter().map(|(s, _)| s.powf(p)).collect(),
                rhs: pairs.iter().map(|(_, g)| g.powf(p)).collect(),
            };
            let stats = samples.stats();
            if stats.ratio.is_nan() {
                flags.push(format!("p={p}: zero denominator, ratio undefined"));
            }
            cells.push(CellReport {
                experiment: config.name.clone(),
                norm: norm_label(&config.norm),
                d: config.norm.dim(),
                p,
                family: config.family.to_string(),
                replications: config.replications,
                lhs: stats.lhs,
                lhs_stderr: stats.lhs_stderr,
                rhs: stats.rhs,
                rhs_stderr: stats.rhs_stderr,
                ratio: stats.ratio,
                ratio_stderr: stats.ratio_stderr,
                env_min: stats.env_min,
                env_max: stats.env_max,
                seed: config.master_seed,
                wall_ms: cell_start.elapsed().as_millis() as u64,
            });
        }
    }

    Ok(ExperimentReport {
        config: config.clone(),
        run_id: format!("{:016x}", StreamId::root(config.master_seed).child(0xC0).raw()),
        wall_ms: started.elapsed().as_millis() as u64,
        cells,
        flags,
    })
}

/// Build the elementary integrand from config blocks. Intervals must
/// chain contiguously from 0.
pub fn phi_from_blocks(blocks: &[PhiBlock], driver_dim: usize) -> Result<ElementaryProcess> {
    if blocks.is_empty() {
        return Err(Error::InvalidConfig("phi must have at least one block".into()));
    }
    let mut breakpoints = vec![blocks[0].interval[0]];
    let mut values = Vec::with_capacity(blocks.len());
    for b in blocks {
        if b.interval[0] != *breakpoints.last().unwrap() {
            return Err(Error::InvalidConfig(
                "phi intervals must chain contiguously".into(),
            ));
        }
        breakpoints.push(b.interval[1]);
        let rows = b.matrix.len();
        if rows == 0 || b.matrix.iter().any(|r| r.len() != driver_dim) {
            return Err(Error::InvalidConfig(format!(
                "phi matrices need {driver_dim} columns"
            )));
        }
        values.push(DMatrix::from_fn(rows, driver_dim, |i, j| b.matrix[i][j]));
    }
    ElementaryProcess::new(breakpoints, values)
}

/// Ratio experiment for elementary integrals: `E sup ||(Phi . M)||^p`
/// against `E gamma(sum Phi q Phi^T d[M])^p`.
pub fn ito_ratio(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let k = config.driver_dim.unwrap_or(1);
    let phi = phi_from_blocks(&config.phi, k)?;
    let q_mode = config.q_mode.unwrap_or(QMode::RankOne);
    let mut flags = Vec::new();

    let pairs: Vec<(f64, f64)> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let rep_stream = StreamId::root(config.master_seed).child(1 + rep as u64);
            let mut rng = rep_stream.child(0).rng();
            let driver =
                DriverPath::brownian_with_mode(k, config.steps, config.horizon, q_mode, &mut rng)?;
            let integral = integrate(&phi, &driver)?;
            let sup = integral.sup_norm(&config.norm)?;
            let form = integrand_form(&phi, &driver, driver.steps())?;
            let gamma = gamma_psd(&form, &config.norm, config.mc_samples, rep_stream.child(1))?;
            Ok((sup, gamma.value))
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for &p in &config.p_list {
        let cell_start = Instant::now();
        let samples = PairedSamples {
            lhs: pairs.iter().map(|(s, _)| s.powf(p)).collect(),
            rhs: pairs.iter().map(|(_, g)| g.powf(p)).collect(),
        };
        let stats = samples.stats();
        if stats.ratio.is_nan() {
            flags.push(format!("p={p}: zero denominator, ratio undefined"));
        }
        cells.push(CellReport {
            experiment: config.name.clone(),
            norm: norm_label(&config.norm),
            d: config.norm.dim(),
            p,
            family: "transformed".into(),
            replications: config.replications,
            lhs: stats.lhs,
            lhs_stderr: stats.lhs_stderr,
            rhs: stats.rhs,
            rhs_stderr: stats.rhs_stderr,
            ratio: stats.ratio,
            ratio_stderr: stats.ratio_stderr,
            env_min: stats.env_min,
            env_max: stats.env_max,
            seed: config.master_seed,
            wall_ms: cell_start.elapsed().as_millis() as u64,
        });
    }

    Ok(ExperimentReport {
        config: config.clone(),
        run_id: format!("{:016x}", StreamId::root(config.master_seed).child(0xC1).raw()),
        wall_ms: started.elapsed().as_millis() as u64,
        cells,
        flags,
    })
}

/// Result of the adversarial contraction search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominationReport {
    pub p: f64,
    pub transforms_searched: usize,
    /// Largest `E sup||N||^p / E sup||M||^p` found.
    pub worst_ratio: f64,
    pub identity_ratio: f64,
    pub zero_ratio: f64,
    pub wall_ms: u64,
}

/// Search predictable contractions of a dyadic martingale for the
/// largest sup-norm ratio, by sign-flip coordinate ascent with random
/// restarts. Expectations are exact leaf sums.
pub fn domination_check(
    norm: &NormSpec,
    p: f64,
    depth: usize,
    budget: usize,
    master_seed: u64,
) -> Result<DominationReport> {
    if !(p > 0.0) {
        return Err(Error::InvalidParameter("exponent must be positive".into()));
    }
    let started = Instant::now();
    let tree = DyadicTree::random(depth, norm.dim(), 1.0, StreamId::root(master_seed).child(0))?;
    let base = tree.expectation(|path| path.sup_norm(norm).expect("dims consistent").powf(p))?;
    if !(base > 0.0) {
        return Err(Error::InvalidParameter("degenerate base martingale".into()));
    }
    let eval = |signs: &[f64]| -> Result<f64> {
        Ok(tree.expectation_transformed(Some(signs), |path| {
            path.sup_norm(norm).expect("dims consistent").powf(p)
        })? / base)
    };

    let mut rng = StreamId::root(master_seed).child(1).rng();
    let n_nodes = tree.node_count();
    let mut searched = 0usize;
    let mut worst = f64::NEG_INFINITY;
    let identity_ratio = eval(&vec![1.0; n_nodes])?;
    searched += 1;
    worst = worst.max(identity_ratio);
    let zero_ratio = eval(&vec![0.0; n_nodes])?;
    searched += 1;
    worst = worst.max(zero_ratio);

    while searched < budget {
        let mut signs: Vec<f64> = (0..n_nodes)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let mut current = eval(&signs)?;
        searched += 1;
        worst = worst.max(current);
        let mut improved = true;
        while improved && searched < budget {
            improved = false;
            for i in 0..n_nodes {
                if searched >= budget {
                    break;
                }
                signs[i] = -signs[i];
                let candidate = eval(&signs)?;
                searched += 1;
                worst = worst.max(candidate);
                if candidate > current {
                    current = candidate;
                    improved = true;
                } else {
                    signs[i] = -signs[i];
                }
            }
        }
    }

    Ok(DominationReport {
        p,
        transforms_searched: searched,
        worst_ratio: worst,
        identity_ratio,
        zero_ratio,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

/// Result of the unconditionality-constant probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UmdProbeResult {
    pub p: f64,
    pub depth: usize,
    pub d: usize,
    pub norm: String,
    /// Best `(E||sum eps d||^p / E||sum d||^p)^{1/p}` found: a lower
    /// bound on the best sign-transform constant.
    pub value: f64,
    pub evaluations: usize,
    pub budget_exhausted: bool,
    #[serde(skip)]
    pub tree: Option<DyadicTree>,
    #[serde(skip)]
    pub signs: Vec<f64>,
}

/// Lower-bound the sign-transform constant by alternating ascent over
/// predictable sign patterns and tree increments. Exhaustive leaf-sum
/// expectations throughout. `warm_start` embeds a lower-dimensional
/// optimum (tree zero-padded, signs kept); for norms where zero-padding
/// is isometric (plain lp), the start value equals the previous optimum
/// and the probe is nondecreasing in dimension.
pub fn umd_probe(
    norm: &NormSpec,
    p: f64,
    depth: usize,
    budget: usize,
    master_seed: u64,
    warm_start: Option<&UmdProbeResult>,
) -> Result<UmdProbeResult> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter("probe exponent must be >= 1".into()));
    }
    if depth > MAX_EXHAUSTIVE_DEPTH {
        return Err(Error::InvalidParameter(format!(
            "depth {depth} exceeds exhaustive cap {MAX_EXHAUSTIVE_DEPTH}"
        )));
    }
    let d = norm.dim();
    let mut tree = match warm_start {
        Some(prev) => {
            let t = prev.tree.as_ref().ok_or(Error::InvalidParameter(
                "warm start carries no tree".into(),
            ))?;
            let padded = t.zero_padded(d)?;
            if padded.depth() != depth {
                return Err(Error::InvalidParameter(
                    "warm start depth must match probe depth".into(),
                ));
            }
            padded
        }
        None => DyadicTree::random(depth, d, 1.0, StreamId::root(master_seed).child(0))?,
    };
    let n_nodes = tree.node_count();
    let mut signs = match warm_start {
        Some(prev) if prev.signs.len() == n_nodes => prev.signs.clone(),
        _ => vec![1.0; n_nodes],
    };
    let mut evaluations = 0usize;

    let ratio = |tree: &DyadicTree, signs: &[f64]| -> Result<f64> {
        let num = tree.expectation_transformed(Some(signs), |path| {
            norm.norm(path.terminal()).expect("dims consistent").powf(p)
        })?;
        let den = tree.expectation(|path| {
            norm.norm(path.terminal()).expect("dims consistent").powf(p)
        })?;
        if den > 0.0 {
            Ok((num / den).powf(1.0 / p))
        } else {
            Ok(0.0)
        }
    };

    let mut best = ratio(&tree, &signs)?;
    evaluations += 1;
    let mut rng = StreamId::root(master_seed).child(1).rng();
    let mut stalled = false;
    while evaluations < budget && !stalled {
        stalled = true;
        // Sign sweep.
        for i in 0..n_nodes {
            if evaluations >= budget {
                break;
            }
            signs[i] = -signs[i];
            let candidate = ratio(&tree, &signs)?;
            evaluations += 1;
            if candidate > best + 1e-14 {
                best = candidate;
                stalled = false;
            } else {
                signs[i] = -signs[i];
            }
        }
        // Increment proposals: random node, random Gaussian nudge.
        for _ in 0..n_nodes {
            if evaluations >= budget {
                break;
            }
            let i = rng.random_range(0..n_nodes);
            let old = tree.node(i).clone();
            let step = 0.5 * rng.random::<f64>();
            let nudged =
                &old + DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)) * step;
            tree.set_node(i, nudged);
            let candidate = ratio(&tree, &signs)?;
            evaluations += 1;
            if candidate > best + 1e-14 {
                best = candidate;
                stalled = false;
            } else {
                tree.set_node(i, old);
            }
        }
    }

    Ok(UmdProbeResult {
        p,
        depth,
        d,
        norm: norm_label(norm),
        value: best,
        evaluations,
        budget_exhausted: evaluations >= budget,
        tree: Some(tree),
        signs,
    })
}

/// Low-exponent ratio experiment for the continuous proxy: runs the
/// ratio machinery at each grid resolution in `step_counts` and labels
/// cells by resolution.
pub fn lowp_continuous(config: &ExperimentConfig, step_counts: &[usize]) -> Result<ExperimentReport> {
    if config.family != Family::BrownianProxy {
        return Err(Error::InvalidConfig(
            "low-exponent experiment requires the brownian_proxy family".into(),
        ));
    }
    let started = Instant::now();
    let mut cells = Vec::new();
    let mut flags = Vec::new();
    for &k in step_counts {
        let mut sub = config.clone();
        sub.steps = k;
        sub.name = format!("{}[K={k}]", config.name);
        let report = bdg_ratio(&sub)?;
        cells.extend(report.cells);
        flags.extend(report.flags);
    }
    Ok(ExperimentReport {
        config: config.clone(),
        run_id: format!("{:016x}", StreamId::root(config.master_seed).child(0xC2).raw()),
        wall_ms: started.elapsed().as_millis() as u64,
        cells,
        flags,
    })
}

/// Time-scaling diagnostic at low exponents: both sides at horizon `t`
/// and `4t`. Returns `(lhs_4t/lhs_t, stderr, rhs_4t/rhs_t, stderr)`.
pub fn lowp_scaling_check(config: &ExperimentConfig, p: f64) -> Result<(f64, f64, f64, f64)> {
    let mut short = config.clone();
    short.p_list = vec![p];
    let mut long = short.clone();
    long.horizon = 4.0 * short.horizon;
    long.master_seed = short.master_seed.wrapping_add(1);
    let a = bdg_ratio(&short)?;
    let b = bdg_ratio(&long)?;
    let (ca, cb) = (&a.cells[0], &b.cells[0]);
    let lhs_ratio = cb.lhs / ca.lhs;
    let lhs_stderr = lhs_ratio
        * ((cb.lhs_stderr / cb.lhs).powi(2) + (ca.lhs_stderr / ca.lhs).powi(2)).sqrt();
    let rhs_ratio = cb.rhs / ca.rhs;
    let rhs_stderr = rhs_ratio
        * ((cb.rhs_stderr / cb.rhs).powi(2) + (ca.rhs_stderr / ca.rhs).powi(2)).sqrt();
    Ok((lhs_ratio, lhs_stderr, rhs_ratio, rhs_stderr))
}

/// Independent-increment contrast: the ratio experiment repeated across
/// dimensions with the same norm kind, for envelope-vs-dimension tables.
pub fn independent_increments_ratio(
    config: &ExperimentConfig,
    d_list: &[usize],
) -> Result<ExperimentReport> {
    if config.family != Family::GaussianWalk && config.family != Family::PaleyWalsh {
        return Err(Error::InvalidConfig(
            "independent-increment contrast needs gaussian_walk (or the tree contrast)".into(),
        ));
    }
    let started = Instant::now();
    let mut cells = Vec::new();
    let mut flags = Vec::new();
    for &d in d_list {
        let mut sub = config.clone();
        sub.norm = match config.norm.kind() {
            NormKind::Lp { p } => NormSpec::new(NormKind::Lp { p: *p }, d)?,
            _ => {
                return Err(Error::InvalidConfig(
                    "dimension sweep supports unweighted lp norms only".into(),
                ))
            }
        };
        sub.name = format!("{}[d={d}]", config.name);
        let report = bdg_ratio(&sub)?;
        cells.extend(report.cells);
        flags.extend(report.flags);
    }
    Ok(ExperimentReport {
        config: config.clone(),
        run_id: format!("{:016x}", StreamId::root(config.master_seed).child(0xC3).raw()),
        wall_ms: started.elapsed().as_millis() as u64,
        cells,
        flags,
    })
}

/// Write the fixed-column CSV rows of a report.
pub fn write_csv<W: std::io::Write>(report: &ExperimentReport, out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for cell in &report.cells {
        writer
            .serialize(cell)
            .map_err(|e| Error::InvalidConfig(format!("CSV write failed: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::InvalidConfig(format!("CSV flush failed: {e}")))?;
    Ok(())
}

/// Serialize the full report as JSON.
pub fn write_json<W: std::io::Write>(report: &ExperimentReport, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, report)
        .map_err(|e| Error::InvalidConfig(format!("JSON write failed: {e}")))
}

/// Dispatch a config to its experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    match config.kind {
        ExperimentKind::Bdg => bdg_ratio(config),
        ExperimentKind::Ito => ito_ratio(config),
        ExperimentKind::LowpContinuous => lowp_continuous(config, &[256, 1024]),
        ExperimentKind::IndependentIncrements => {
            independent_increments_ratio(config, &[1, 2, 4, 8])
        }
    }
}

/// One named property check with its numeric witness (witnesses are the
/// values compared across worker counts for determinism).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyCheck {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub master_seed: u64,
    pub checks: Vec<VerifyCheck>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// The property suite behind the `verify` subcommand. `scale` in (0, 1]
/// shrinks sample counts proportionally for quick runs.
pub fn verify(master_seed: u64, scale: f64) -> Result<VerifyReport> {
    let scale = scale.clamp(1e-3, 1.0);
    let n = |base: usize| ((base as f64 * scale).ceil() as usize).max(2);
    let nu = |base: u64| ((base as f64 * scale).ceil() as u64).max(16);
    let mut checks = Vec::new();
    let mut check = |name: &str, pass: bool, value: f64, detail: String| {
        checks.push(VerifyCheck {
            name: name.into(),
            pass,
            value,
            detail,
        });
    };

    // Euclidean gamma is the exact trace formula.
    {
        let spec = NormSpec::lp(2.0, 8)?;
        let g = gamma_psd(
            &SymBilinearForm::identity(8),
            &spec,
            2,
            StreamId::root(master_seed),
        )?;
        let err = (g.value - 8.0f64.sqrt()).abs();
        check(
            "gamma_euclidean_trace",
            err <= 1e-12 && g.exact,
            g.value,
            format!("|gamma(I_8) - sqrt(8)| = {err:.3e}"),
        );
    }

    // Sup-norm gamma anchor: gamma(I_2) under lp(inf) = sqrt(1 + 2/pi).
    {
        let spec = NormSpec::lp(f64::INFINITY, 2)?;
        let g = gamma_psd(
            &SymBilinearForm::identity(2),
            &spec,
            nu(200_000),
            StreamId::root(master_seed).child(10),
        )?;
        let target = (1.0 + 2.0 / std::f64::consts::PI).sqrt();
        let z = (g.value - target).abs() / g.stderr;
        check(
            "gamma_sup_norm_anchor",
            z <= 4.0,
            g.value,
            format!("target {target:.6}, z = {z:.2}"),
        );
    }

    // Covariation exactness and PSD step increments across families.
    {
        let config = ExperimentConfig {
            name: "verify".into(),
            kind: ExperimentKind::Bdg,
            norm: NormSpec::lp(2.0, 3)?,
            family: Family::GaussianWalk,
            steps: 16,
            horizon: 1.0,
            lambda: 2.0,
            p_list: vec![2.0],
            replications: n(200),
            mc_samples: 64,
            master_seed,
            exhaustive: false,
            phi: vec![],
            driver_dim: None,
            q_mode: None,
            output: None,
        };
        let mut max_resid: f64 = 0.0;
        let mut min_gap = f64::INFINITY;
        for family in [
            Family::PaleyWalsh,
            Family::GaussianWalk,
            Family::BrownianProxy,
            Family::CompoundPoisson,
        ] {
            let mut sub = config.clone();
            sub.family = family;
            if family == Family::PaleyWalsh {
                sub.steps = 8;
            }
            if family == Family::BrownianProxy {
                sub.steps = 64;
            }
            let generator = Generator::from_config(&sub)?;
            for rep in 0..n(50) {
                let stream = StreamId::root(master_seed).child(20).child(rep as u64);
                let mut rng = stream.rng();
                let path = generator.sample(&mut rng)?;
                let xstar = DVector::from_fn(path.dim(), |_, _| {
                    rng.sample::<f64, _>(StandardNormal)
                });
                let form = covariation_form(&path, path.steps())?;
                let direct: f64 = (1..=path.steps())
                    .map(|j| path.increment(j).dot(&xstar).powi(2))
                    .sum();
                let quad = form.quad(&xstar)?;
                let denom = direct.abs().max(1.0);
                max_resid = max_resid.max((quad - direct).abs() / denom);
                let mut prev = SymBilinearForm::zeros(path.dim());
                for k in 1..=path.steps() {
                    let current = covariation_form(&path, k)?;
                    min_gap = min_gap.min(psd_gap(&current, &prev)?);
                    prev = current;
                }
            }
        }
        check(
            "covariation_exactness",
            max_resid <= 1e-12,
            max_resid,
            format!("max relative residual {max_resid:.3e}"),
        );
        check(
            "covariation_psd_steps",
            min_gap >= -1e-10,
            min_gap,
            format!("min psd gap {min_gap:.3e}"),
        );
    }

    // Pathwise identity of the elementary integral.
    {
        let mut rng = StreamId::root(master_seed).child(30).rng();
        let mut max_resid: f64 = 0.0;
        for _ in 0..n(100) {
            let driver = DriverPath::brownian(2, 64, 1.0, &mut rng)?;
            let mid = driver.path().times()[32];
            let blocks: Vec<DMatrix<f64>> = (0..2)
                .map(|_| DMatrix::from_fn(3, 2, |_, _| rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let phi = ElementaryProcess::new(vec![0.0, mid, 1.0], blocks)?;
            let integral = integrate(&phi, &driver)?;
            let lhs = covariation_form(&integral, integral.steps())?;
            let rhs = integrand_form(&phi, &driver, driver.steps())?;
            max_resid = max_resid.max((lhs.matrix() - rhs.matrix()).abs().max());
        }
        check(
            "integral_covariation_identity",
            max_resid <= 1e-10,
            max_resid,
            format!("max residual {max_resid:.3e}"),
        );
    }

    // Exhaustive Hilbert identity at p = 2: terminal second moment
    // equals the covariation trace.
    {
        let tree = DyadicTree::random(8, 2, 1.0, StreamId::root(master_seed).child(40))?;
        let lhs = tree.expectation(|p| p.terminal().norm_squared())?;
        let rhs = tree.expectation(|p| {
            covariation_form(p, p.steps()).expect("grid consistent").trace()
        })?;
        let err = (lhs - rhs).abs() / lhs.max(1.0);
        check(
            "hilbert_terminal_identity",
            err <= 1e-12,
            lhs,
            format!("relative gap {err:.3e}"),
        );
        // Sign transforms preserve the second moment exactly.
        let mut rng = StreamId::root(master_seed).child(41).rng();
        let signs: Vec<f64> = (0..tree.node_count())
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let transformed = tree.expectation_transformed(Some(&signs), |p| {
            p.terminal().norm_squared()
        })?;
        let sign_err = (transformed - lhs).abs() / lhs.max(1.0);
        check(
            "hilbert_sign_invariance",
            sign_err <= 1e-12,
            transformed,
            format!("relative gap {sign_err:.3e}"),
        );
    }

    // Small ratio cell: d=1, p=2 exhaustive tree sits inside the
    // second-moment bracket [1, 4].
    {
        let config = ExperimentConfig {
            name: "verify_bdg".into(),
            kind: ExperimentKind::Bdg,
            norm: NormSpec::lp(2.0, 1)?,
            family: Family::PaleyWalsh,
            steps: 8,
            horizon: 1.0,
            lambda: 2.0,
            p_list: vec![2.0],
            replications: 0,
            mc_samples: 2,
            master_seed,
            exhaustive: true,
            phi: vec![],
            driver_dim: None,
            q_mode: None,
            output: None,
        };
        let report = bdg_ratio(&config)?;
        let ratio = report.cells[0].ratio;
        check(
            "bdg_doob_bracket",
            (1.0 - 1e-12..=4.0 + 1e-12).contains(&ratio),
            ratio,
            format!("exhaustive d=1 p=2 ratio {ratio:.6}"),
        );
    }

    // Quick adversarial contraction search at p = 2.
    {
        let report = domination_check(&NormSpec::lp(2.0, 2)?, 2.0, 6, n(200), master_seed)?;
        check(
            "domination_bound",
            report.worst_ratio <= 4.0 * (1.0 + 1e-6),
            report.worst_ratio,
            format!(
                "worst ratio {:.4} over {} transforms",
                report.worst_ratio, report.transforms_searched
            ),
        );
    }

    Ok(VerifyReport {
        master_seed,
        checks,
    })
}
