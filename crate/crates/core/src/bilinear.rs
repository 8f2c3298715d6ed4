//! Symmetric bilinear forms on the dual space.
//!
//! Forms are stored as `d x d` symmetric matrices in dual-basis
//! coordinates (the dual basis of the coordinate basis is the coordinate
//! basis itself, identifying `X**` with `X` at finite dimension). This
//! module provides evaluation, the spectral positive/negative split, the
//! operator norm over the dual unit ball, an equivalent enumerable norm
//! built from a fixed finite test set, and PSD diagnostics for
//! increasing-form checks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;

use crate::norms::{Exponent, NormKind, NormSpec};
use crate::{Error, Result};

/// Max asymmetry tolerated when constructing a form from computed data.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// A symmetric bilinear form `V : X* x X* -> R`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBilinearForm {
    matrix: DMatrix<f64>,
}

impl SymBilinearForm {
    /// Build from a computed matrix: asserts near-symmetry, then
    /// symmetrizes to kill residual floating error.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        let max_asym = (&matrix - matrix.transpose()).abs().max();
        let scale = matrix.abs().max().max(1.0);
        if max_asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric {
                max_asym,
                tol: SYMMETRY_TOL * scale,
            });
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        Ok(SymBilinearForm { matrix: sym })
    }

    pub fn zeros(dim: usize) -> Self {
        SymBilinearForm {
            matrix: DMatrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        SymBilinearForm {
            matrix: DMatrix::identity(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymBilinearForm {
            matrix: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        }
    }

    /// The rank-one form `x x^T`.
    pub fn outer(x: &DVector<f64>) -> Self {
        SymBilinearForm {
            matrix: x * x.transpose(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// `V(x*, y*) = x*^T V y*`.
    pub fn evaluate(&self, xstar: &DVector<f64>, ystar: &DVector<f64>) -> Result<f64> {
        if xstar.len() != self.dim() || ystar.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: if xstar.len() != self.dim() {
                    xstar.len()
                } else {
                    ystar.len()
                },
            });
        }
        Ok((xstar.transpose() * &self.matrix * ystar)[(0, 0)])
    }

    pub fn quad(&self, xstar: &DVector<f64>) -> Result<f64> {
        self.evaluate(xstar, xstar)
    }

    pub fn add(&self, other: &SymBilinearForm) -> Result<SymBilinearForm> {
        self.check_same_dim(other)?;
        Ok(SymBilinearForm {
            matrix: &self.matrix + &other.matrix,
        })
    }

    pub fn sub(&self, other: &SymBilinearForm) -> Result<SymBilinearForm> {
        self.check_same_dim(other)?;
        Ok(SymBilinearForm {
            matrix: &self.matrix - &other.matrix,
        })
    }

    pub fn scale(&self, alpha: f64) -> SymBilinearForm {
        SymBilinearForm {
            matrix: &self.matrix * alpha,
        }
    }

    /// Leading `k x k` principal submatrix (restriction to the span of the
    /// first `k` coordinates).
    pub fn principal_submatrix(&self, k: usize) -> Result<SymBilinearForm> {
        if k > self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: k,
            });
        }
        Ok(SymBilinearForm {
            matrix: self.matrix.view((0, 0), (k, k)).into_owned(),
        })
    }

    fn check_same_dim(&self, other: &SymBilinearForm) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }

    /// Row-major flattened entries, for CSV/JSON dumps.
    pub fn to_row_major(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                out.push(self.matrix[(i, j)]);
            }
        }
        out
    }
}

/// The spectral decomposition of a symmetric form into PSD positive and
/// negative parts: `V = plus - minus`, `plus * minus = 0`.
#[derive(Debug, Clone)]
pub struct SpectralSplit {
    pub plus: SymBilinearForm,
    pub minus: SymBilinearForm,
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

/// Diagonalize `V` and route nonnegative eigenvalues to `plus`, negative
/// ones to `minus`.
pub fn spectral_split(v: &SymBilinearForm) -> Result<SpectralSplit> {
    let eig = v
        .matrix
        .clone()
        .try_symmetric_eigen(1e-13, 10_000)
        .ok_or(Error::EigenFailure)?;
    let d = v.dim();
    let mut lambda_plus = DVector::zeros(d);
    let mut lambda_minus = DVector::zeros(d);
    for i in 0..d {
        let l = eig.eigenvalues[i];
        if l >= 0.0 {
            lambda_plus[i] = l;
        } else {
            lambda_minus[i] = -l;
        }
    }
    let u = &eig.eigenvectors;
    let plus = u * DMatrix::from_diagonal(&lambda_plus) * u.transpose();
    let minus = u * DMatrix::from_diagonal(&lambda_minus) * u.transpose();
    Ok(SpectralSplit {
        plus: SymBilinearForm {
            matrix: (&plus + plus.transpose()) * 0.5,
        },
        minus: SymBilinearForm {
            matrix: (&minus + minus.transpose()) * 0.5,
        },
        eigenvalues: eig.eigenvalues,
        eigenvectors: eig.eigenvectors,
    })
}

/// Result of the operator-norm search: `lower` is always a feasible value
/// `|V(x*,x*)|` at a dual-unit point; `certified_upper`, when present, is
/// a proven upper bound (exact for the Euclidean ball).
#[derive(Debug, Clone, Copy)]
pub struct OperatorNormBound {
    pub lower: f64,
    pub certified_upper: Option<f64>,
}

impl OperatorNormBound {
    /// The conservative value consumers of the form norm should use: the
    /// certified bound when present (it is exact for the Euclidean ball),
    /// otherwise the ascent lower bound.
    pub fn conservative(&self) -> f64 {
        self.lower
    }
}

/// `||V|| = sup { |V(x*,x*)| : dual_norm(x*) <= 1 }` via multistart
/// projected ascent, with exact certificates where available.
///
/// For the Euclidean norm this is the spectral radius (exact). When the
/// dual ball is the `l^1` ball the entrywise max `max_ij |V_ij|` is a
/// certified upper bound. Indefinite forms over non-Euclidean balls are
/// NP-hard in general, so for other kinds only the ascent lower bound is
/// returned.
pub fn operator_norm<R: Rng + ?Sized>(
    v: &SymBilinearForm,
    spec: &NormSpec,
    budget: usize,
    rng: &mut R,
) -> Result<OperatorNormBound> {
    if spec.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: v.dim(),
            got: spec.dim(),
        });
    }
    let d = v.dim();
    let dual = spec.dual();

    if spec.is_euclidean() {
        let split = spectral_split(v)?;
        let radius = split.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
        return Ok(OperatorNormBound {
            lower: radius,
            certified_upper: Some(radius),
        });
    }

    // Candidate starts: basis vectors, pair combinations, random dual-unit
    // directions, and (for a polytope dual ball) its sign vertices.
    let mut starts: Vec<DVector<f64>> = Vec::new();
    for i in 0..d {
        let mut e = DVector::zeros(d);
        e[i] = 1.0;
        starts.push(e);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            for s in [1.0, -1.0] {
                let mut e = DVector::zeros(d);
                e[i] = 1.0;
                e[j] = s;
                starts.push(e);
            }
        }
    }
    let dual_ball_is_cube =
        matches!(dual.kind(), NormKind::Lp { p } if *p == Exponent::Infinity);
    if dual_ball_is_cube && d <= 12 {
        for bits in 0..(1usize << d) {
            let x = DVector::from_fn(d, |i, _| if bits >> i & 1 == 1 { 1.0 } else { -1.0 });
            starts.push(x);
        }
    }
    starts.extend(spec.sample_dual_unit_vectors(budget.max(1), rng));

    let normalize = |x: &DVector<f64>| -> Option<DVector<f64>> {
        let n = dual.norm(x).expect("dims consistent");
        (n > 1e-300).then(|| x / n)
    };

    let mut best = 0.0f64;
    for start in &starts {
        let Some(x0) = normalize(start) else { continue };
        for sign in [1.0, -1.0] {
            let mut x = x0.clone();
            let mut val = sign * v.quad(&x)?;
            best = best.max(val.abs());
            let mut step = 0.5;
            for _ in 0..80 {
                let grad = &v.matrix * &x * (2.0 * sign);
                let gn = grad.norm();
                if gn < 1e-14 {
                    break;
                }
                let Some(cand) = normalize(&(&x + grad * (step / gn))) else {
                    break;
                };
                let cval = sign * v.quad(&cand)?;
                if cval > val + 1e-16 {
                    x = cand;
                    val = cval;
                    best = best.max(val.abs());
                } else {
                    step *= 0.5;
                    if step < 1e-10 {
                        break;
                    }
                }
            }
        }
    }

    // Convex-relaxation certificate when the dual ball is the l^1 ball:
    // |x^T V x| <= max_ij |V_ij| * ||x||_1^2.
    let dual_ball_is_cross =
        matches!(dual.kind(), NormKind::Lp { p } if matches!(p, Exponent::Finite(pv) if *pv == 1.0));
    let certified_upper = dual_ball_is_cross.then(|| v.matrix.abs().max());

    if let Some(up) = certified_upper {
        debug_assert!(best <= up + 1e-9 * up.max(1.0));
    }
    Ok(OperatorNormBound {
        lower: best,
        certified_upper,
    })
}

/// The enumerable norm `sum |V(x*, x*)|` over the fixed test set
/// `{e_i} union {e_i +- e_j : i < j}` of dual coordinate vectors. It
/// vanishes only on the zero form and is equivalent to the operator norm
/// with dimension-dependent constants.
pub fn vertiii_norm(v: &SymBilinearForm) -> f64 {
    let d = v.dim();
    let m = &v.matrix;
    let mut total = 0.0;
    for i in 0..d {
        total += m[(i, i)].abs();
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let quad_pp = m[(i, i)] + 2.0 * m[(i, j)] + m[(j, j)];
            let quad_pm = m[(i, i)] - 2.0 * m[(i, j)] + m[(j, j)];
            total += quad_pp.abs() + quad_pm.abs();
        }
    }
    total
}

/// Smallest eigenvalue of `V`; `is_psd` checks it against `-tol`.
pub fn min_eigenvalue(v: &SymBilinearForm) -> Result<f64> {
    let eig = v
        .matrix
        .clone()
        .try_symmetric_eigen(1e-13, 10_000)
        .ok_or(Error::EigenFailure)?;
    Ok(eig.eigenvalues.min())
}

pub fn is_psd(v: &SymBilinearForm, tol: f64) -> Result<bool> {
    Ok(min_eigenvalue(v)? >= -tol)
}

/// Smallest eigenvalue of `V_t - V_s`; nonnegative (within tolerance)
/// certifies the increasing-form property between the two times.
pub fn psd_gap(v_t: &SymBilinearForm, v_s: &SymBilinearForm) -> Result<f64> {
    min_eigenvalue(&v_t.sub(v_s)?)
}

/// Random symmetric form with independent Gaussian entries (symmetrized).
pub fn random_symmetric<R: Rng + ?Sized>(d: usize, scale: f64, rng: &mut R) -> SymBilinearForm {
    let a = DMatrix::from_fn(d, d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
    SymBilinearForm {
        matrix: (&a + a.transpose()) * 0.5,
    }
}

/// Random PSD form `A A^T` with Gaussian `A`.
pub fn random_psd<R: Rng + ?Sized>(d: usize, scale: f64, rng: &mut R) -> SymBilinearForm {
    let a = DMatrix::from_fn(d, d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
    let m = &a * a.transpose();
    SymBilinearForm {
        matrix: (&m + m.transpose()) * 0.5,
    }
}
