//! Discrete-time martingale generators in `R^d`.
//!
//! Four structural families: Paley-Walsh martingales on dyadic trees
//! (with exact expectations by leaf enumeration), Gaussian walks with
//! independent increments, fine-grid Brownian proxies, and compound
//! Poisson paths made mean-zero by sign symmetrization of the jumps.
//! Predictable transforms multiply increments by past-measurable factors.
//!
//! Time is always a finite grid; "sup over t" means max over grid points.

use nalgebra::DVector;
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;

use crate::bilinear::SymBilinearForm;
use crate::gaussian::GaussianSampler;
use crate::norms::NormSpec;
use crate::rng::StreamId;
use crate::{Error, Result};

/// Structural class of a generated path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PaleyWalsh,
    GaussianWalk,
    BrownianProxy,
    CompoundPoisson,
    Transformed,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Family::PaleyWalsh => "paley_walsh",
            Family::GaussianWalk => "gaussian_walk",
            Family::BrownianProxy => "brownian_proxy",
            Family::CompoundPoisson => "compound_poisson",
            Family::Transformed => "transformed",
        };
        f.write_str(s)
    }
}

/// A time-indexed path `M(t_0)=0, ..., M(t_K)` of `d`-vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingalePath {
    times: Vec<f64>,
    values: Vec<DVector<f64>>,
    family: Family,
    /// Leaf index for tree-generated paths; lets predictable tree
    /// transforms recover the node sequence.
    leaf: Option<usize>,
}

impl MartingalePath {
    pub fn new(times: Vec<f64>, values: Vec<DVector<f64>>, family: Family) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(Error::GridMismatch(format!(
                "{} times vs {} values",
                times.len(),
                values.len()
            )));
        }
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::GridMismatch("times must be strictly increasing".into()));
        }
        if values[0].norm() != 0.0 {
            return Err(Error::InvalidParameter("path must start at 0".into()));
        }
        let d = values[0].len();
        if values.iter().any(|v| v.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: values.iter().find(|v| v.len() != d).unwrap().len(),
            });
        }
        Ok(MartingalePath {
            times,
            values,
            family,
            leaf: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Number of increments `K`.
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn leaf(&self) -> Option<usize> {
        self.leaf
    }

    /// Increment `d_k = M(t_k) - M(t_{k-1})`, `k` in `1..=K`.
    pub fn increment(&self, k: usize) -> DVector<f64> {
        &self.values[k] - &self.values[k - 1]
    }

    pub fn terminal(&self) -> &DVector<f64> {
        self.values.last().unwrap()
    }

    /// `max_k ||M(t_k)||` over all grid points.
    pub fn sup_norm(&self, spec: &NormSpec) -> Result<f64> {
        let mut best = 0.0f64;
        for v in &self.values {
            best = best.max(spec.norm(v)?);
        }
        Ok(best)
    }
}

/// Exhaustive enumeration is capped here: `2^14` leaves keep exact
/// expectations under a second.
pub const MAX_EXHAUSTIVE_DEPTH: usize = 14;
/// Sampled tree paths are capped at depth 20.
pub const MAX_SAMPLED_DEPTH: usize = 20;

/// A dyadic (binary-tree) increment structure: each node carries a
/// vector `x`, and the two branches move by `+x` and `-x`, so every
/// conditional increment mean is exactly zero.
#[derive(Debug, Clone)]
pub struct DyadicTree {
    depth: usize,
    dim: usize,
    /// Heap layout: node for step `k` (0-based) with prefix `b`
    /// (an integer of `k` bits) sits at `(1 << k) - 1 + b`.
    nodes: Vec<DVector<f64>>,
}

impl DyadicTree {
    /// Tree with Gaussian node increments of the given scale, seeded
    /// deterministically.
    pub fn random(depth: usize, dim: usize, scale: f64, stream: StreamId) -> Result<Self> {
        if depth == 0 || depth > MAX_SAMPLED_DEPTH {
            return Err(Error::InvalidParameter(format!(
                "tree depth must lie in 1..={MAX_SAMPLED_DEPTH}, got {depth}"
            )));
        }
        let mut rng = stream.rng();
        let node_count = (1usize << depth) - 1;
        let nodes = (0..node_count)
            .map(|_| DVector::from_fn(dim, |_, _| scale * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Ok(DyadicTree { depth, dim, nodes })
    }

    pub fn from_nodes(depth: usize, dim: usize, nodes: Vec<DVector<f64>>) -> Result<Self> {
        if nodes.len() != (1usize << depth) - 1 {
            return Err(Error::InvalidParameter(format!(
                "expected {} nodes for depth {depth}, got {}",
                (1usize << depth) - 1,
                nodes.len()
            )));
        }
        if nodes.iter().any(|n| n.len() != dim) {
            return Err(Error::InvalidParameter("node dimension mismatch".into()));
        }
        Ok(DyadicTree { depth, dim, nodes })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_leaves(&self) -> usize {
        1 << self.depth
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_index(step: usize, prefix: usize) -> usize {
        (1usize << step) - 1 + prefix
    }

    pub fn node(&self, index: usize) -> &DVector<f64> {
        &self.nodes[index]
    }

    pub fn set_node(&mut self, index: usize, value: DVector<f64>) {
        assert_eq!(value.len(), self.dim);
        self.nodes[index] = value;
    }

    /// Embed into a larger coordinate space by zero-padding node vectors.
    pub fn zero_padded(&self, new_dim: usize) -> Result<DyadicTree> {
        if new_dim < self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: new_dim,
            });
        }
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let mut v = DVector::zeros(new_dim);
                v.rows_mut(0, self.dim).copy_from(n);
                v
            })
            .collect();
        Ok(DyadicTree {
            depth: self.depth,
            dim: new_dim,
            nodes,
        })
    }

    /// The path for a given leaf. Bit `k` of `leaf` (from the most
    /// significant of the `depth` bits) is the branch sign at step `k`.
    /// Optional per-node factors implement predictable transforms.
    pub fn path_for_leaf(&self, leaf: usize, node_factors: Option<&[f64]>) -> MartingalePath {
        debug_assert!(leaf < self.num_leaves());
        if let Some(f) = node_factors {
            debug_assert_eq!(f.len(), self.nodes.len());
        }
        let mut values = Vec::with_capacity(self.depth + 1);
        let mut current = DVector::zeros(self.dim);
        values.push(current.clone());
        let mut prefix = 0usize;
        for step in 0..self.depth {
            let bit = (leaf >> (self.depth - 1 - step)) & 1;
            let sign = if bit == 1 { 1.0 } else { -1.0 };
            let idx = Self::node_index(step, prefix);
            let factor = node_factors.map_or(1.0, |f| f[idx]);
            current += &self.nodes[idx] * (sign * factor);
            values.push(current.clone());
            prefix = (prefix << 1) | bit;
        }
        let times = (0..=self.depth).map(|k| k as f64).collect();
        MartingalePath {
            times,
            values,
            family: if node_factors.is_some() {
                Family::Transformed
            } else {
                Family::PaleyWalsh
            },
            leaf: Some(leaf),
        }
    }

    /// Exact expectation of a path functional: the equally weighted
    /// average over all leaves. Errors beyond the exhaustive depth cap.
    pub fn expectation<F: Fn(&MartingalePath) -> f64>(&self, f: F) -> Result<f64> {
        self.expectation_transformed(None, f)
    }

    /// Exact expectation with optional per-node predictable factors.
    pub fn expectation_transformed<F: Fn(&MartingalePath) -> f64>(
        &self,
        node_factors: Option<&[f64]>,
        f: F,
    ) -> Result<f64> {
        if self.depth > MAX_EXHAUSTIVE_DEPTH {
            return Err(Error::InvalidParameter(format!(
                "depth {} exceeds exhaustive cap {MAX_EXHAUSTIVE_DEPTH}",
                self.depth
            )));
        }
        let n = self.num_leaves();
        let mut total = 0.0;
        for leaf in 0..n {
            total += f(&self.path_for_leaf(leaf, node_factors));
        }
        Ok(total / n as f64)
    }

    /// Draw a path with a uniformly random leaf.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MartingalePath {
        let leaf = rng.random_range(0..self.num_leaves());
        self.path_for_leaf(leaf, None)
    }

    /// Verify the defining martingale property: branch increments at
    /// every node average to zero. Exact by construction (`+x`, `-x`),
    /// so this checks the invariant rather than an estimate.
    pub fn check_martingale(&self) -> bool {
        // Increments are s * x with s = +-1 equally weighted; the
        // conditional mean is (x + (-x)) / 2 = 0 identically. The check
        // confirms nodes are finite.
        self.nodes.iter().all(|n| n.iter().all(|x| x.is_finite()))
    }
}

/// Gaussian walk with independent increments `N(0, Sigma_k)`.
/// `covariances` may hold one matrix (reused each step) or `K` matrices.
pub fn gen_gaussian_walk<R: Rng + ?Sized>(
    steps: usize,
    dim: usize,
    covariances: &[SymBilinearForm],
    rng: &mut R,
) -> Result<MartingalePath> {
    if steps == 0 {
        return Err(Error::InvalidParameter("need at least one step".into()));
    }
    if covariances.is_empty() || (covariances.len() != 1 && covariances.len() != steps) {
        return Err(Error::InvalidParameter(format!(
            "need 1 or {steps} covariance matrices, got {}",
            covariances.len()
        )));
    }
    let samplers: Vec<GaussianSampler> = covariances
        .iter()
        .map(GaussianSampler::new)
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(steps + 1);
    let mut current = DVector::zeros(dim);
    values.push(current.clone());
    for k in 0..steps {
        let sampler = &samplers[if samplers.len() == 1 { 0 } else { k }];
        let inc = sampler.sample(rng);
        if inc.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: inc.len(),
            });
        }
        current += inc;
        values.push(current.clone());
    }
    let times = (0..=steps).map(|k| k as f64).collect();
    let mut path = MartingalePath::new(times, values, Family::GaussianWalk)?;
    path.family = Family::GaussianWalk;
    Ok(path)
}

/// Minimum grid fineness for the Brownian proxy.
pub const MIN_BROWNIAN_STEPS: usize = 64;

/// Fine-grid proxy for `d`-dimensional Brownian motion on `[0, T]`:
/// a Gaussian walk with per-step covariance `(T/K) I`.
pub fn gen_brownian_proxy<R: Rng + ?Sized>(
    steps: usize,
    dim: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<MartingalePath> {
    if steps < MIN_BROWNIAN_STEPS {
        return Err(Error::InvalidParameter(format!(
            "Brownian proxy needs at least {MIN_BROWNIAN_STEPS} steps, got {steps}"
        )));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    let dt = horizon / steps as f64;
    let sqrt_dt = dt.sqrt();
    let mut values = Vec::with_capacity(steps + 1);
    let mut current = DVector::zeros(dim);
    values.push(current.clone());
    for _ in 0..steps {
        let inc = DVector::from_fn(dim, |_, _| sqrt_dt * rng.sample::<f64, _>(StandardNormal));
        current += inc;
        values.push(current.clone());
    }
    let times = (0..=steps).map(|k| k as f64 * dt).collect();
    let mut path = MartingalePath::new(times, values, Family::BrownianProxy)?;
    path.family = Family::BrownianProxy;
    Ok(path)
}

/// A compound Poisson martingale path together with its exact jump record.
#[derive(Debug, Clone)]
pub struct CompoundPoissonPath {
    pub path: MartingalePath,
    /// `(time, jump increment)` pairs, sorted by time.
    pub jumps: Vec<(f64, DVector<f64>)>,
}

/// Compound Poisson path on `[0, T]` with rate `lambda`. The jump law is
/// symmetrized (`+J` or `-J` with probability 1/2 each), so the path is
/// an exact martingale with no compensator. The returned grid is the
/// provided grid merged with the exact jump times.
pub fn gen_compound_poisson<R, J>(
    lambda: f64,
    horizon: f64,
    mut jump_law: J,
    grid: &[f64],
    rng: &mut R,
) -> Result<CompoundPoissonPath>
where
    R: Rng + ?Sized,
    J: FnMut(&mut R) -> DVector<f64>,
{
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter("rate must be positive".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    // Poisson(lambda * T) jump count via exponential inter-arrivals.
    let mut jump_times = Vec::new();
    let mut t = 0.0;
    loop {
        let u: f64 = rng.random();
        t += -u.ln() / lambda;
        if t >= horizon {
            break;
        }
        jump_times.push(t);
    }
    let mut jumps = Vec::with_capacity(jump_times.len());
    let mut dim = None;
    for &jt in &jump_times {
        let mut j = jump_law(rng);
        if *dim.get_or_insert(j.len()) != j.len() {
            return Err(Error::DimensionMismatch {
                expected: dim.unwrap(),
                got: j.len(),
            });
        }
        if rng.random::<bool>() {
            j = -j;
        }
        jumps.push((jt, j));
    }
    // Without jumps the dimension comes from a probe draw.
    let dim = dim.unwrap_or_else(|| jump_law(rng).len());

    // Merge the provided grid with jump times into one increasing grid.
    let mut times: Vec<f64> = Vec::with_capacity(grid.len() + jump_times.len() + 2);
    times.push(0.0);
    times.extend(grid.iter().copied().filter(|&g| g > 0.0 && g < horizon));
    times.extend(jump_times.iter().copied());
    times.push(horizon);
    times.sort_by(f64::total_cmp);
    times.dedup();

    let mut values = Vec::with_capacity(times.len());
    let mut current = DVector::zeros(dim);
    let mut next_jump = 0usize;
    for &tk in &times {
        while next_jump < jumps.len() && jumps[next_jump].0 <= tk {
            current += &jumps[next_jump].1;
            next_jump += 1;
        }
        values.push(current.clone());
    }
    let mut path = MartingalePath::new(times, values, Family::CompoundPoisson)?;
    path.family = Family::CompoundPoisson;
    Ok(CompoundPoissonPath { path, jumps })
}

/// A predictable per-step transform of increments.
///
/// Predictability is enforced by the shape of each variant: factors are
/// deterministic, attached to tree nodes (functions of the path strictly
/// before the step), or computed from the path values before the step.
#[derive(Clone)]
pub enum PredictableTransform {
    /// Deterministic factors `a_k`, `|a_k| <= 1`.
    Scalars(Vec<f64>),
    /// A factor per tree node (heap layout); applies to tree paths only.
    TreeFactors(Vec<f64>),
    /// `a_k = sign(M(t_{k-1})[coord])`, `+1` at zero. A genuinely
    /// path-adapted contraction.
    PastSign { coord: usize },
}

impl PredictableTransform {
    pub fn scalars(factors: Vec<f64>) -> Result<Self> {
        if factors.iter().any(|a| a.abs() > 1.0 || !a.is_finite()) {
            return Err(Error::InvalidParameter(
                "transform factors must satisfy |a_k| <= 1".into(),
            ));
        }
        Ok(PredictableTransform::Scalars(factors))
    }

    pub fn signs(signs: Vec<f64>) -> Result<Self> {
        if signs.iter().any(|s| s.abs() != 1.0) {
            return Err(Error::InvalidParameter(
                "sign factors must be exactly +-1".into(),
            ));
        }
        Ok(PredictableTransform::Scalars(signs))
    }

    pub fn tree_factors(factors: Vec<f64>) -> Result<Self> {
        if factors.iter().any(|a| a.abs() > 1.0 || !a.is_finite()) {
            return Err(Error::InvalidParameter(
                "transform factors must satisfy |a_k| <= 1".into(),
            ));
        }
        Ok(PredictableTransform::TreeFactors(factors))
    }

    /// The factor for step `k` (1-based) of the given path.
    fn factor(&self, path: &MartingalePath, k: usize) -> Result<f64> {
        Ok(match self {
            PredictableTransform::Scalars(f) => {
                *f.get(k - 1).ok_or(Error::GridMismatch(format!(
                    "transform has {} factors, path has {} steps",
                    f.len(),
                    path.steps()
                )))?
            }
            PredictableTransform::TreeFactors(f) => {
                let leaf = path.leaf.ok_or(Error::InvalidParameter(
                    "tree transform applied to a non-tree path".into(),
                ))?;
                let depth = path.steps();
                let step = k - 1;
                // The node prefix is the first `step` branch bits of the leaf.
                let prefix = if step == 0 { 0 } else { leaf >> (depth - step) };
                let idx = DyadicTree::node_index(step, prefix);
                *f.get(idx).ok_or(Error::GridMismatch(format!(
                    "transform has {} node factors, node index {} required",
                    f.len(),
                    idx
                )))?
            }
            PredictableTransform::PastSign { coord } => {
                let prev = &path.values[k - 1];
                if *coord >= prev.len() {
                    return Err(Error::DimensionMismatch {
                        expected: prev.len(),
                        got: *coord,
                    });
                }
                if prev[*coord] < 0.0 {
                    -1.0
                } else {
                    1.0
                }
            }
        })
    }
}

/// Replace increments `d_k` by `a_k d_k`. The result is tagged
/// [`Family::Transformed`] and keeps the original grid and leaf.
pub fn apply_transform(
    path: &MartingalePath,
    transform: &PredictableTransform,
) -> Result<MartingalePath> {
    let mut values = Vec::with_capacity(path.values.len());
    let mut current = DVector::zeros(path.dim());
    values.push(current.clone());
    for k in 1..path.values.len() {
        let a = transform.factor(path, k)?;
        current += path.increment(k) * a;
        values.push(current.clone());
    }
    Ok(MartingalePath {
        times: path.times.clone(),
        values,
        family: Family::Transformed,
        leaf: path.leaf,
    })
}

/// Empirical martingale check for sampled families: per step, buckets
/// paths by the sign of the first coordinate of the past value (a coarse
/// partition of the past) and requires every bucket's conditional
/// increment mean to sit within `4` standard errors of zero.
pub fn empirical_martingale_check(paths: &[MartingalePath]) -> Result<bool> {
    let Some(first) = paths.first() else {
        return Ok(true);
    };
    let steps = first.steps();
    let d = first.dim();
    for k in 1..=steps {
        for bucket in 0..2 {
            for coord in 0..d {
                let mut n = 0u64;
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                for p in paths {
                    if p.steps() != steps || p.dim() != d {
                        return Err(Error::GridMismatch("inhomogeneous ensemble".into()));
                    }
                    let past_sign = p.values[k - 1][0] >= 0.0;
                    if past_sign != (bucket == 0) {
                        continue;
                    }
                    let x = p.increment(k)[coord];
                    n += 1;
                    sum += x;
                    sum_sq += x * x;
                }
                if n < 16 {
                    continue;
                }
                let mean = sum / n as f64;
                let var = (sum_sq - sum * sum / n as f64) / (n as f64 - 1.0);
                let stderr = (var.max(0.0) / n as f64).sqrt();
                if mean.abs() > 4.0 * stderr + 1e-12 {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn depth_one_tree_is_a_fair_coin() {
        let tree = DyadicTree::random(1, 2, 1.0, StreamId::root(1)).unwrap();
        let mean = tree
            .expectation(|p| p.terminal()[0])
            .unwrap();
        assert_eq!(mean, 0.0);
        assert_eq!(tree.num_leaves(), 2);
        let up = tree.path_for_leaf(1, None);
        let down = tree.path_for_leaf(0, None);
        assert_eq!(up.terminal(), &(-down.terminal().clone()));
    }

    #[test]
    fn exhaustive_expectation_of_sum_is_zero() {
        let tree = DyadicTree::random(12, 2, 1.0, StreamId::root(2)).unwrap();
        for coord in 0..2 {
            let mean = tree.expectation(|p| p.terminal()[coord]).unwrap();
            assert!(mean.abs() <= 1e-12);
        }
    }

    #[test]
    fn exhaustive_matches_sampled_within_tolerance() {
        let tree = DyadicTree::random(12, 2, 0.5, StreamId::root(3)).unwrap();
        let spec = NormSpec::lp(2.0, 2).unwrap();
        let exact = tree
            .expectation(|p| p.sup_norm(&spec).unwrap())
            .unwrap();
        let mut rng = StreamId::root(4).rng();
        let n = 20_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = tree.sample(&mut rng).sup_norm(&spec).unwrap();
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / n as f64;
        let stderr =
            (((sum_sq - sum * sum / n as f64) / (n as f64 - 1.0)).max(0.0) / n as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 4.0 * stderr,
            "sampled {mean} vs exact {exact} (stderr {stderr})"
        );
    }

    #[test]
    fn exhaustive_depth_cap_enforced() {
        let tree = DyadicTree::random(15, 1, 1.0, StreamId::root(5)).unwrap();
        assert!(tree.expectation(|_| 0.0).is_err());
        assert!(DyadicTree::random(21, 1, 1.0, StreamId::root(5)).is_err());
    }

    #[test]
    fn gaussian_walk_moments() {
        let cov = SymBilinearForm::identity(3);
        let mut rng = StreamId::root(6).rng();
        let k = 5;
        let n = 20_000;
        let mut mean = DVector::<f64>::zeros(3);
        let mut second = 0.0;
        for _ in 0..n {
            let p = gen_gaussian_walk(k, 3, std::slice::from_ref(&cov), &mut rng).unwrap();
            mean += p.terminal();
            second += p.terminal().norm_squared();
        }
        mean /= n as f64;
        second /= n as f64;
        // E M_K = 0, E ||M_K||^2 = K * trace(I_3) = 15.
        assert!(mean.norm() <= 0.1);
        assert!((second - 15.0).abs() <= 0.5);
    }

    #[test]
    fn one_step_identity_walk_is_standard_normal_shape() {
        let cov = SymBilinearForm::identity(2);
        let mut rng = StreamId::root(7).rng();
        let p = gen_gaussian_walk(1, 2, &[cov], &mut rng).unwrap();
        assert_eq!(p.steps(), 1);
        assert_eq!(p.values()[0].norm(), 0.0);
    }

    #[test]
    fn brownian_proxy_quadratic_variation() {
        // Sum of squared Euclidean increments has mean d * T.
        let mut rng = StreamId::root(8).rng();
        let (d, t, k) = (2usize, 1.5f64, 256usize);
        let n = 2_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let p = gen_brownian_proxy(k, d, t, &mut rng).unwrap();
            let qv: f64 = (1..=p.steps()).map(|j| p.increment(j).norm_squared()).sum();
            sum += qv;
        }
        let mean = sum / n as f64;
        assert!((mean - d as f64 * t).abs() <= 0.05, "mean {mean}");
    }

    #[test]
    fn brownian_proxy_fineness_floor() {
        let mut rng = StreamId::root(9).rng();
        assert!(gen_brownian_proxy(32, 1, 1.0, &mut rng).is_err());
    }

    #[test]
    fn compound_poisson_jump_count_and_shape() {
        let mut rng = StreamId::root(10).rng();
        let (lambda, horizon) = (3.0, 2.0);
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
        let n = 5_000;
        let mut count = 0usize;
        for _ in 0..n {
            let cp = gen_compound_poisson(
                lambda,
                horizon,
                |r: &mut rand_chacha::ChaCha8Rng| {
                    DVector::from_fn(2, |_, _| 1.0 + 0.1 * r.sample::<f64, _>(StandardNormal))
                },
                &grid,
                &mut rng,
            )
            .unwrap();
            count += cp.jumps.len();
            // Path is constant between jumps: every nonzero increment
            // happens at a recorded jump time.
            for k in 1..=cp.path.steps() {
                let inc = cp.path.increment(k);
                if inc.norm() > 0.0 {
                    let tk = cp.path.times()[k];
                    assert!(cp.jumps.iter().any(|(jt, _)| *jt == tk));
                }
            }
        }
        let mean_count = count as f64 / n as f64;
        // E count = lambda * T = 6; stderr ~ sqrt(6/n) ~ 0.035.
        assert!((mean_count - 6.0).abs() <= 0.15, "mean count {mean_count}");
    }

    #[test]
    fn invalid_poisson_rate_rejected() {
        let mut rng = StreamId::root(11).rng();
        assert!(gen_compound_poisson(
            0.0,
            1.0,
            |_r: &mut rand_chacha::ChaCha8Rng| DVector::zeros(1),
            &[],
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn identity_transform_is_identity() {
        let tree = DyadicTree::random(5, 2, 1.0, StreamId::root(12)).unwrap();
        let p = tree.path_for_leaf(13, None);
        let tr = PredictableTransform::scalars(vec![1.0; 5]).unwrap();
        let q = apply_transform(&p, &tr).unwrap();
        assert_eq!(p.values(), q.values());
    }

    #[test]
    fn negation_preserves_squared_increments() {
        let tree = DyadicTree::random(5, 2, 1.0, StreamId::root(13)).unwrap();
        let p = tree.path_for_leaf(7, None);
        let tr = PredictableTransform::scalars(vec![-1.0; 5]).unwrap();
        let q = apply_transform(&p, &tr).unwrap();
        for k in 1..=5 {
            assert_relative_eq!(
                p.increment(k).norm_squared(),
                q.increment(k).norm_squared(),
                epsilon = 1e-14
            );
            assert_relative_eq!((p.increment(k) + q.increment(k)).norm(), 0.0);
        }
    }

    #[test]
    fn non_contractive_factors_rejected() {
        assert!(PredictableTransform::scalars(vec![1.5]).is_err());
        assert!(PredictableTransform::signs(vec![0.5]).is_err());
    }

    #[test]
    fn predictable_tree_signs_preserve_hilbert_second_moment() {
        // Orthogonality of martingale differences: E||N_T||^2 = E||M_T||^2
        // exactly for any predictable sign pattern.
        let depth = 10;
        let tree = DyadicTree::random(depth, 3, 1.0, StreamId::root(14)).unwrap();
        let mut rng = StreamId::root(15).rng();
        let factors: Vec<f64> = (0..tree.node_count())
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let base = tree
            .expectation(|p| p.terminal().norm_squared())
            .unwrap();
        let transformed = tree
            .expectation_transformed(Some(&factors), |p| p.terminal().norm_squared())
            .unwrap();
        assert_relative_eq!(base, transformed, epsilon = 1e-12 * base.abs().max(1.0));
    }

    #[test]
    fn transform_preserves_martingale_property() {
        // Adapted sign transform on a sampled family still passes the
        // empirical conditional-mean check.
        let mut rng = StreamId::root(16).rng();
        let cov = SymBilinearForm::identity(2);
        let tr = PredictableTransform::PastSign { coord: 0 };
        let paths: Vec<MartingalePath> = (0..4000)
            .map(|_| {
                let p = gen_gaussian_walk(6, 2, std::slice::from_ref(&cov), &mut rng).unwrap();
                apply_transform(&p, &tr).unwrap()
            })
            .collect();
        assert!(empirical_martingale_check(&paths).unwrap());
    }

    #[test]
    fn tree_node_factor_lookup_is_prefix_based() {
        // Two leaves sharing a prefix must see the same factors on the
        // shared steps.
        let tree = DyadicTree::random(4, 1, 1.0, StreamId::root(17)).unwrap();
        let mut factors = vec![1.0; tree.node_count()];
        // Flip the factor at the root only; both paths change step 1 the
        // same way.
        factors[0] = -1.0;
        let tr = PredictableTransform::tree_factors(factors).unwrap();
        for leaf in [0usize, 5, 9, 15] {
            let p = tree.path_for_leaf(leaf, None);
            let q = apply_transform(&p, &tr).unwrap();
            assert_relative_eq!((q.increment(1) + p.increment(1)).norm(), 0.0);
            for k in 2..=4 {
                assert_relative_eq!((q.increment(k) - p.increment(k)).norm(), 0.0);
            }
        }
    }
}
