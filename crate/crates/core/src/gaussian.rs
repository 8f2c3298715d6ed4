//! Gaussian characteristics of bilinear forms.
//!
//! For a PSD form `V` the Gaussian characteristic is
//! `gamma(V) = (E ||xi||^2)^(1/2)` where `xi` is the centered Gaussian
//! vector whose covariance form is `V`. Under the Euclidean norm this is
//! `sqrt(trace V)` exactly; for every other norm it is estimated by
//! seeded Monte Carlo with a delta-method standard error. Indefinite
//! forms are handled through the spectral positive/negative split:
//! `gamma(V) = gamma(V+) + gamma(V-)`.
//!
//! Sampling uses the spectral square root `A = U sqrt(L)`, one
//! decomposition amortized over all draws. Sample shards have a fixed
//! size and deterministic substreams, so estimates do not depend on the
//! worker count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bilinear::{spectral_split, SymBilinearForm};
use crate::norms::NormSpec;
use crate::rng::StreamId;
use crate::{Error, Result};

/// Relative tolerance for clipping small negative eigenvalues of
/// simulation-derived covariance forms.
pub const PSD_CLIP_REL_TOL: f64 = 1e-8;

/// Fixed shard size for parallel Monte Carlo; results merge in shard
/// order, so the estimate is independent of the worker count.
const SHARD_SIZE: u64 = 8192;

/// A gamma value with its uncertainty. `exact` estimates carry zero
/// standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
    pub exact: bool,
}

impl GammaEstimate {
    fn exact(value: f64) -> Self {
        GammaEstimate {
            value,
            stderr: 0.0,
            samples: 0,
            exact: true,
        }
    }
}

/// A finite-rank map from `k`-dimensional Hilbert coordinate space to `X`
/// (a `d x k` matrix). Its induced covariance form is `T T^T`.
#[derive(Debug, Clone)]
pub struct LinearMap {
    matrix: DMatrix<f64>,
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        LinearMap { matrix }
    }

    pub fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// The PSD form `V(x*, y*) = <T* x*, T* y*>`, i.e. `T T^T`.
    pub fn induced_form(&self) -> SymBilinearForm {
        let m = &self.matrix * self.matrix.transpose();
        SymBilinearForm::from_matrix((&m + m.transpose()) * 0.5)
            .expect("T T^T is symmetric by construction")
    }
}

/// Sampler for the centered Gaussian vector with covariance form `V`.
/// Holds the spectral factor `A = U sqrt(L)`; each draw is `A g` with
/// `g` standard normal.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    /// Fails when `V` is materially non-PSD (a negative eigenvalue below
    /// `-1e-8` times the largest one); smaller negatives are clipped to 0.
    pub fn new(v: &SymBilinearForm) -> Result<Self> {
        let split = spectral_split(v)?;
        let max_eig = split.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
        let min_eig = split.eigenvalues.min();
        if min_eig < -PSD_CLIP_REL_TOL * max_eig && min_eig < -1e-300 {
            return Err(Error::NotPsd { min_eig, max_eig });
        }
        let sqrt_l = split.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = &split.eigenvectors * DMatrix::from_diagonal(&sqrt_l);
        Ok(GaussianSampler { factor })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let g = DVector::from_fn(self.factor.ncols(), |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        &self.factor * g
    }
}

/// One draw of the Gaussian vector with covariance `V` (PSD within
/// tolerance). For repeated draws build a [`GaussianSampler`] once.
pub fn sample_gaussian_vector<R: Rng + ?Sized>(
    v: &SymBilinearForm,
    rng: &mut R,
) -> Result<DVector<f64>> {
    Ok(GaussianSampler::new(v)?.sample(rng))
}

#[derive(Debug, Clone, Copy, Default)]
struct MomentAccumulator {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl MomentAccumulator {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(self, other: MomentAccumulator) -> MomentAccumulator {
        MomentAccumulator {
            n: self.n + other.n,
            sum: self.sum + other.sum,
            sum_sq: self.sum_sq + other.sum_sq,
        }
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    /// Standard error of the mean.
    fn stderr(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        let n = self.n as f64;
        let var = (self.sum_sq - self.sum * self.sum / n) / (n - 1.0);
        (var.max(0.0) / n).sqrt()
    }
}

/// `gamma(V)` for PSD `V`: exact `sqrt(trace V)` under the Euclidean
/// norm, otherwise Monte Carlo over `samples` draws from the stream
/// rooted at `stream`.
pub fn gamma_psd(
    v: &SymBilinearForm,
    spec: &NormSpec,
    samples: u64,
    stream: StreamId,
) -> Result<GammaEstimate> {
    if spec.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: v.dim(),
            got: spec.dim(),
        });
    }
    if spec.is_euclidean() {
        return Ok(GammaEstimate::exact(v.trace().max(0.0).sqrt()));
    }
    if samples < 2 {
        return Err(Error::InvalidParameter(
            "MC gamma estimation needs at least 2 samples".into(),
        ));
    }
    let sampler = GaussianSampler::new(v)?;

    let n_shards = samples.div_ceil(SHARD_SIZE);
    let acc = (0..n_shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = stream.child(shard).rng();
            let count = SHARD_SIZE.min(samples - shard * SHARD_SIZE);
            let mut acc = MomentAccumulator::default();
            for _ in 0..count {
                let xi = sampler.sample(&mut rng);
                let n = spec.norm(&xi).expect("dims consistent");
                acc.push(n * n);
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(MomentAccumulator::default(), MomentAccumulator::merge);

    let mean = acc.mean().max(0.0);
    let value = mean.sqrt();
    // Delta method: stderr(sqrt(m)) = stderr(m) / (2 sqrt(m)).
    let stderr = if value > 0.0 {
        acc.stderr() / (2.0 * value)
    } else {
        acc.stderr().sqrt()
    };
    Ok(GammaEstimate {
        value,
        stderr,
        samples,
        exact: false,
    })
}

/// `gamma(V)` for a general symmetric `V` via the spectral split:
/// `gamma(V+) + gamma(V-)`, standard errors added in quadrature.
pub fn gamma_general(
    v: &SymBilinearForm,
    spec: &NormSpec,
    samples: u64,
    stream: StreamId,
) -> Result<GammaEstimate> {
    let split = spectral_split(v)?;
    let plus = gamma_psd(&split.plus, spec, samples, stream.child(0))?;
    let minus = gamma_psd(&split.minus, spec, samples, stream.child(1))?;
    Ok(GammaEstimate {
        value: plus.value + minus.value,
        stderr: (plus.stderr * plus.stderr + minus.stderr * minus.stderr).sqrt(),
        samples: plus.samples + minus.samples,
        exact: plus.exact && minus.exact,
    })
}

/// The gamma-radonifying norm of a finite-rank map:
/// `||T||_gamma = gamma(T T^T)`.
pub fn gamma_radonifying(
    t: &LinearMap,
    spec: &NormSpec,
    samples: u64,
    stream: StreamId,
) -> Result<GammaEstimate> {
    gamma_psd(&t.induced_form(), spec, samples, stream)
}

/// Paired comparison used by restriction tests: estimates
/// `E ||P xi||^2` and `E ||xi||^2` on the same draws, where `P` zeroes
/// all coordinates past the first `keep`. Returns
/// `(gamma_restricted, gamma_full, stderr_of_difference_of_squares)`.
pub fn gamma_restriction_pair(
    v: &SymBilinearForm,
    spec: &NormSpec,
    keep: usize,
    samples: u64,
    stream: StreamId,
) -> Result<(f64, f64, f64)> {
    if keep > v.dim() {
        return Err(Error::DimensionMismatch {
            expected: v.dim(),
            got: keep,
        });
    }
    let sampler = GaussianSampler::new(v)?;
    let n_shards = samples.div_ceil(SHARD_SIZE);
    let (acc_r, acc_f, acc_diff) = (0..n_shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = stream.child(shard).rng();
            let count = SHARD_SIZE.min(samples - shard * SHARD_SIZE);
            let mut r = MomentAccumulator::default();
            let mut f = MomentAccumulator::default();
            let mut d = MomentAccumulator::default();
            for _ in 0..count {
                let xi = sampler.sample(&mut rng);
                let mut restricted = xi.clone();
                for i in keep..xi.len() {
                    restricted[i] = 0.0;
                }
                let nf = spec.norm(&xi).expect("dims consistent");
                let nr = spec.norm(&restricted).expect("dims consistent");
                r.push(nr * nr);
                f.push(nf * nf);
                d.push(nf * nf - nr * nr);
            }
            (r, f, d)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(
            (
                MomentAccumulator::default(),
                MomentAccumulator::default(),
                MomentAccumulator::default(),
            ),
            |(a, b, c), (x, y, z)| (a.merge(x), b.merge(y), c.merge(z)),
        );
    Ok((
        acc_r.mean().max(0.0).sqrt(),
        acc_f.mean().max(0.0).sqrt(),
        acc_diff.stderr(),
    ))
}
