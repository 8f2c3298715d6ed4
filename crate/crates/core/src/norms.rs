//! Ambient norms on `R^d` and their duals.
//!
//! A [`NormSpec`] fixes the Banach space the rest of the crate works in:
//! an `l^p` norm, a weighted `l^p` norm, or a one-level mixed norm
//! (an outer `l^q` norm over equally sized blocks, each measured in an
//! inner `l^r` norm). All evaluations are exact closed forms; duals are
//! computed by conjugate exponents, blockwise for the mixed kind.

use nalgebra::DVector;
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// An exponent in `[1, inf]`. Infinity is a tagged value, never a large
/// float, so duality is exact: `conjugate(1) = inf` and vice versa.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

impl Exponent {
    pub fn new(p: f64) -> Result<Self> {
        if p.is_infinite() && p > 0.0 {
            Ok(Exponent::Infinity)
        } else if p.is_finite() && p >= 1.0 {
            Ok(Exponent::Finite(p))
        } else {
            Err(Error::InvalidParameter(format!(
                "norm exponent must lie in [1, inf], got {p}"
            )))
        }
    }

    /// The conjugate exponent: `1/p + 1/q = 1`.
    pub fn conjugate(self) -> Exponent {
        match self {
            Exponent::Infinity => Exponent::Finite(1.0),
            Exponent::Finite(p) if p == 1.0 => Exponent::Infinity,
            Exponent::Finite(p) => Exponent::Finite(p / (p - 1.0)),
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Exponent::Finite(p) => p,
            Exponent::Infinity => f64::INFINITY,
        }
    }

    pub fn is_two(self) -> bool {
        matches!(self, Exponent::Finite(p) if p == 2.0)
    }
}

impl Serialize for Exponent {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Exponent::Finite(p) => s.serialize_f64(*p),
            Exponent::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        let raw = Raw::deserialize(d)?;
        let p = match raw {
            Raw::Num(p) => p,
            Raw::Str(s) => match s.as_str() {
                "inf" | "infinity" | "Inf" | "Infinity" => f64::INFINITY,
                other => {
                    return Err(serde::de::Error::custom(format!(
                        "unrecognized exponent {other:?}"
                    )))
                }
            },
        };
        Exponent::new(p).map_err(serde::de::Error::custom)
    }
}

/// The kind of norm carried by a [`NormSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormKind {
    /// `(sum |x_i|^p)^(1/p)`, max for `p = inf`.
    Lp { p: Exponent },
    /// `(sum w_i |x_i|^p)^(1/p)`; for `p = inf`, `max w_i |x_i|`.
    WeightedLp { p: Exponent, weights: Vec<f64> },
    /// Outer `l^q` over contiguous blocks of size `block_dim`, each block
    /// measured in the inner `l^r` norm.
    Mixed {
        outer_p: Exponent,
        inner_p: Exponent,
        block_dim: usize,
    },
}

/// A computable norm on `R^d` together with its dual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NormSpecRepr", into = "NormSpecRepr")]
pub struct NormSpec {
    kind: NormKind,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct NormSpecRepr {
    #[serde(flatten)]
    kind: NormKind,
    dim: usize,
}

impl TryFrom<NormSpecRepr> for NormSpec {
    type Error = Error;
    fn try_from(r: NormSpecRepr) -> Result<Self> {
        NormSpec::new(r.kind, r.dim)
    }
}

impl From<NormSpec> for NormSpecRepr {
    fn from(s: NormSpec) -> Self {
        NormSpecRepr {
            kind: s.kind,
            dim: s.dim,
        }
    }
}

impl NormSpec {
    pub fn new(kind: NormKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be positive".into()));
        }
        match &kind {
            NormKind::Lp { .. } => {}
            NormKind::WeightedLp { weights, .. } => {
                if weights.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: weights.len(),
                    });
                }
                if weights.iter().any(|&w| !(w > 0.0)) {
                    return Err(Error::InvalidParameter(
                        "weights must be strictly positive".into(),
                    ));
                }
            }
            NormKind::Mixed { block_dim, .. } => {
                if *block_dim == 0 || dim % block_dim != 0 {
                    return Err(Error::InvalidParameter(format!(
                        "block_dim {block_dim} must divide dim {dim}"
                    )));
                }
            }
        }
        Ok(NormSpec { kind, dim })
    }

    pub fn lp(p: f64, dim: usize) -> Result<Self> {
        NormSpec::new(
            NormKind::Lp {
                p: Exponent::new(p)?,
            },
            dim,
        )
    }

    pub fn weighted_lp(p: f64, weights: Vec<f64>) -> Result<Self> {
        let dim = weights.len();
        NormSpec::new(
            NormKind::WeightedLp {
                p: Exponent::new(p)?,
                weights,
            },
            dim,
        )
    }

    pub fn mixed(outer_p: f64, inner_p: f64, block_dim: usize, dim: usize) -> Result<Self> {
        NormSpec::new(
            NormKind::Mixed {
                outer_p: Exponent::new(outer_p)?,
                inner_p: Exponent::new(inner_p)?,
                block_dim,
            },
            dim,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &NormKind {
        &self.kind
    }

    /// True when the norm is the plain Euclidean norm; gamma estimators
    /// switch to the exact trace formula in that case.
    pub fn is_euclidean(&self) -> bool {
        matches!(&self.kind, NormKind::Lp { p } if p.is_two())
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            })
        } else {
            Ok(())
        }
    }

    /// Evaluate the norm.
    pub fn norm(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match &self.kind {
            NormKind::Lp { p } => lp_norm(x.iter().copied(), *p),
            NormKind::WeightedLp { p, weights } => match p {
                Exponent::Infinity => x
                    .iter()
                    .zip(weights)
                    .map(|(xi, w)| w * xi.abs())
                    .fold(0.0, f64::max),
                Exponent::Finite(p) => x
                    .iter()
                    .zip(weights)
                    .map(|(xi, w)| w * xi.abs().powf(*p))
                    .sum::<f64>()
                    .powf(1.0 / p),
            },
            NormKind::Mixed {
                outer_p,
                inner_p,
                block_dim,
            } => {
                let blocks = self.dim / block_dim;
                let block_norms = (0..blocks).map(|b| {
                    lp_norm(
                        x.iter().skip(b * block_dim).take(*block_dim).copied(),
                        *inner_p,
                    )
                });
                lp_norm(block_norms, *outer_p)
            }
        })
    }

    /// The dual space's norm spec.
    pub fn dual(&self) -> NormSpec {
        let kind = match &self.kind {
            NormKind::Lp { p } => NormKind::Lp { p: p.conjugate() },
            NormKind::WeightedLp { p, weights } => {
                // || . || = || D^{1/p} . ||_p with D = diag(w), so the dual
                // is || D^{-1/p} . ||_q, i.e. weighted l^q with w_i^{-q/p}.
                let q = p.conjugate();
                let dual_weights = match (p, q) {
                    (Exponent::Finite(pv), Exponent::Finite(qv)) => {
                        weights.iter().map(|w| w.powf(-qv / pv)).collect()
                    }
                    // p = 1: dual is max |y_i| / w_i.
                    (Exponent::Finite(_), Exponent::Infinity) => {
                        weights.iter().map(|w| 1.0 / w).collect()
                    }
                    // p = inf (max w_i |x_i|): dual is sum |y_i| / w_i.
                    (Exponent::Infinity, _) => weights.iter().map(|w| 1.0 / w).collect(),
                };
                NormKind::WeightedLp {
                    p: q,
                    weights: dual_weights,
                }
            }
            NormKind::Mixed {
                outer_p,
                inner_p,
                block_dim,
            } => NormKind::Mixed {
                outer_p: outer_p.conjugate(),
                inner_p: inner_p.conjugate(),
                block_dim: *block_dim,
            },
        };
        NormSpec {
            kind,
            dim: self.dim,
        }
    }

    /// Evaluate the dual norm.
    pub fn dual_norm(&self, xstar: &DVector<f64>) -> Result<f64> {
        self.dual().norm(xstar)
    }

    /// For plain `l^p` kinds, the dual-unit functional attaining
    /// `<x, x*> = norm(x)`. `None` for weighted/mixed kinds and for `x = 0`.
    pub fn dual_aligned(&self, x: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        self.check_dim(x)?;
        let NormKind::Lp { p } = &self.kind else {
            return Ok(None);
        };
        let n = self.norm(x)?;
        if n == 0.0 {
            return Ok(None);
        }
        Ok(Some(match p {
            Exponent::Finite(pv) if *pv == 1.0 => x.map(|xi| xi.signum()),
            Exponent::Finite(pv) => {
                x.map(|xi| xi.signum() * (xi.abs() / n).powf(pv - 1.0))
            }
            Exponent::Infinity => {
                let (j, _) = x
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                    .unwrap();
                let mut e = DVector::zeros(self.dim);
                e[j] = x[j].signum();
                e
            }
        }))
    }

    /// Random vectors on the dual unit sphere: Gaussian directions
    /// normalized by the dual norm. Deterministic given the RNG state.
    pub fn sample_dual_unit_vectors<R: Rng + ?Sized>(
        &self,
        count: usize,
        rng: &mut R,
    ) -> Vec<DVector<f64>> {
        let dual = self.dual();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let g = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let n = dual.norm(&g).expect("dimension is consistent");
            if n > 1e-300 {
                out.push(g / n);
            }
        }
        out
    }
}

fn lp_norm(xs: impl Iterator<Item = f64>, p: Exponent) -> f64 {
    match p {
        Exponent::Infinity => xs.map(f64::abs).fold(0.0, f64::max),
        Exponent::Finite(p) if p == 1.0 => xs.map(f64::abs).sum(),
        Exponent::Finite(p) if p == 2.0 => xs.map(|x| x * x).sum::<f64>().sqrt(),
        Exponent::Finite(p) => xs.map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p),
    }
}
