//! Covariation bilinear forms of paths.
//!
//! On a finite grid the covariation form up to index `k` is the exact
//! sum of rank-one increment outer products; its evaluation at `x*`
//! recovers the classical partition sum of the scalar martingale
//! `<M, x*>`. The running process has PSD increments, and the pairwise
//! covariation of two paths satisfies the polarization identity.

use nalgebra::{DMatrix, DVector};

use crate::bilinear::SymBilinearForm;
use crate::martingales::MartingalePath;
use crate::{Error, Result};

/// The running matrix-valued covariation process: `forms[k]` is the
/// covariation form of the path up to grid index `k`, `forms[0] = 0`.
#[derive(Debug, Clone)]
pub struct CovariationProcess {
    pub times: Vec<f64>,
    pub forms: Vec<SymBilinearForm>,
}

/// `sum_{j <= upto} dM_j dM_j^T` in dual-basis coordinates.
pub fn covariation_form(path: &MartingalePath, upto: usize) -> Result<SymBilinearForm> {
    if upto > path.steps() {
        return Err(Error::GridMismatch(format!(
            "index {upto} exceeds {} steps",
            path.steps()
        )));
    }
    let d = path.dim();
    let mut m = DMatrix::<f64>::zeros(d, d);
    for j in 1..=upto {
        let inc = path.increment(j);
        m += &inc * inc.transpose();
    }
    SymBilinearForm::from_matrix(m)
}

/// Running covariation sums at every grid point.
pub fn covariation_process(path: &MartingalePath) -> CovariationProcess {
    let d = path.dim();
    let mut forms = Vec::with_capacity(path.steps() + 1);
    let mut m = DMatrix::<f64>::zeros(d, d);
    forms.push(SymBilinearForm::zeros(d));
    for j in 1..=path.steps() {
        let inc = path.increment(j);
        m += &inc * inc.transpose();
        forms.push(
            SymBilinearForm::from_matrix(m.clone())
                .expect("running covariation sum is symmetric by construction"),
        );
    }
    CovariationProcess {
        times: path.times().to_vec(),
        forms,
    }
}

/// Pairwise covariation `sum_{j <= upto} dM_j dN_j^T`. Stored as a full
/// (not necessarily symmetric) matrix.
pub fn pairwise_covariation(
    m_path: &MartingalePath,
    n_path: &MartingalePath,
    upto: usize,
) -> Result<DMatrix<f64>> {
    if m_path.times() != n_path.times() {
        return Err(Error::GridMismatch(
            "pairwise covariation requires identical grids".into(),
        ));
    }
    if upto > m_path.steps() {
        return Err(Error::GridMismatch(format!(
            "index {upto} exceeds {} steps",
            m_path.steps()
        )));
    }
    let mut out = DMatrix::<f64>::zeros(m_path.dim(), n_path.dim());
    for j in 1..=upto {
        out += m_path.increment(j) * n_path.increment(j).transpose();
    }
    Ok(out)
}

/// Convergence diagnostic for the mesh limit: for each coarsening
/// (a list of indices into the fine grid), the absolute difference
/// `|V_coarse(x*, x*) - V_fine(x*, x*)|`.
pub fn refinement_convergence(
    fine: &MartingalePath,
    coarsenings: &[Vec<usize>],
    xstar: &DVector<f64>,
) -> Result<Vec<f64>> {
    let v_fine = covariation_form(fine, fine.steps())?.quad(xstar)?;
    let mut out = Vec::with_capacity(coarsenings.len());
    for sub in coarsenings {
        if sub.first() != Some(&0) || sub.last() != Some(&fine.steps()) {
            return Err(Error::GridMismatch(
                "subgrid must span from index 0 to the final index".into(),
            ));
        }
        if !sub.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::GridMismatch(
                "subgrid indices must be strictly increasing".into(),
            ));
        }
        let mut v_coarse = 0.0;
        for w in sub.windows(2) {
            let inc = &fine.values()[w[1]] - &fine.values()[w[0]];
            let s = inc.dot(xstar);
            v_coarse += s * s;
        }
        out.push((v_coarse - v_fine).abs());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilinear::psd_gap;
    use crate::martingales::{
        apply_transform, gen_brownian_proxy, gen_compound_poisson, gen_gaussian_walk, DyadicTree,
        Family, PredictableTransform,
    };
    use crate::rng::StreamId;
    use rand::RngExt;
    use rand_distr::StandardNormal;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn single_step_gives_rank_one_form() {
        let x = v(&[1.0, 2.0]);
        let tree = DyadicTree::from_nodes(1, 2, vec![x.clone()]).unwrap();
        for leaf in 0..2 {
            let p = tree.path_for_leaf(leaf, None);
            let form = covariation_form(&p, 1).unwrap();
            assert!((form.matrix() - &x * x.transpose()).abs().max() <= 1e-14);
        }
    }

    #[test]
    fn scalar_brownian_covariation_mean_is_horizon() {
        let mut rng = StreamId::root(1).rng();
        let (t, n) = (1.25f64, 10_000usize);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let p = gen_brownian_proxy(128, 1, t, &mut rng).unwrap();
            let q = covariation_form(&p, p.steps()).unwrap().matrix()[(0, 0)];
            sum += q;
            sum_sq += q * q;
        }
        let mean = sum / n as f64;
        let stderr =
            (((sum_sq - sum * sum / n as f64) / (n as f64 - 1.0)).max(0.0) / n as f64).sqrt();
        assert!(
            (mean - t).abs() <= 4.0 * stderr,
            "mean {mean} vs {t} (stderr {stderr})"
        );
    }

    #[test]
    fn evaluation_matches_partition_sum_exactly() {
        let mut rng = StreamId::root(2).rng();
        let cov = SymBilinearForm::identity(3);
        for _ in 0..20 {
            let p = gen_gaussian_walk(8, 3, std::slice::from_ref(&cov), &mut rng).unwrap();
            let xstar = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            for k in [0usize, 3, 8] {
                let form = covariation_form(&p, k).unwrap();
                let direct: f64 = (1..=k)
                    .map(|j| {
                        let s = p.increment(j).dot(&xstar);
                        s * s
                    })
                    .sum();
                let rel = direct.abs().max(1.0);
                assert!((form.quad(&xstar).unwrap() - direct).abs() <= 1e-12 * rel);
            }
        }
    }

    #[test]
    fn process_final_form_matches_and_zero_path_is_zero() {
        let mut rng = StreamId::root(3).rng();
        let p = gen_brownian_proxy(64, 2, 1.0, &mut rng).unwrap();
        let proc = covariation_process(&p);
        let last = covariation_form(&p, p.steps()).unwrap();
        assert!((proc.forms.last().unwrap().matrix() - last.matrix()).abs().max() <= 1e-14);
        assert_eq!(proc.forms[0].matrix().abs().max(), 0.0);
    }

    #[test]
    fn increments_are_psd_across_families() {
        let mut rng = StreamId::root(4).rng();
        let cov = SymBilinearForm::identity(2);
        let mut paths: Vec<MartingalePath> = Vec::new();
        for _ in 0..30 {
            paths.push(gen_gaussian_walk(10, 2, std::slice::from_ref(&cov), &mut rng).unwrap());
            paths.push(gen_brownian_proxy(64, 2, 1.0, &mut rng).unwrap());
            paths.push(
                gen_compound_poisson(
                    4.0,
                    1.0,
                    |r: &mut rand_chacha::ChaCha8Rng| {
                        DVector::from_fn(2, |_, _| r.sample::<f64, _>(StandardNormal))
                    },
                    &[0.25, 0.5, 0.75],
                    &mut rng,
                )
                .unwrap()
                .path,
            );
        }
        let tree = DyadicTree::random(6, 2, 1.0, StreamId::root(5)).unwrap();
        for leaf in 0..8 {
            paths.push(tree.path_for_leaf(leaf * 7, None));
        }
        for p in &paths {
            let proc = covariation_process(p);
            for k in 1..proc.forms.len() {
                let gap = psd_gap(&proc.forms[k], &proc.forms[k - 1]).unwrap();
                assert!(gap >= -1e-10, "family {:?}: gap {gap}", p.family());
            }
        }
    }

    #[test]
    fn per_step_increment_is_jump_outer_product() {
        let mut rng = StreamId::root(6).rng();
        let p = gen_brownian_proxy(64, 2, 1.0, &mut rng).unwrap();
        let proc = covariation_process(&p);
        for k in 1..=p.steps() {
            let inc = p.increment(k);
            let delta = proc.forms[k].sub(&proc.forms[k - 1]).unwrap();
            assert!((delta.matrix() - &inc * inc.transpose()).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn compound_poisson_covariation_is_jump_sum() {
        let mut rng = StreamId::root(7).rng();
        for _ in 0..20 {
            let cp = gen_compound_poisson(
                5.0,
                1.0,
                |r: &mut rand_chacha::ChaCha8Rng| {
                    DVector::from_fn(2, |_, _| r.sample::<f64, _>(StandardNormal))
                },
                &[0.2, 0.4, 0.6, 0.8],
                &mut rng,
            )
            .unwrap();
            let form = covariation_form(&cp.path, cp.path.steps()).unwrap();
            let mut jump_sum = DMatrix::<f64>::zeros(2, 2);
            for (_, j) in &cp.jumps {
                jump_sum += j * j.transpose();
            }
            assert!((form.matrix() - jump_sum).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn pairwise_covariation_examples_and_polarization() {
        let mut rng = StreamId::root(8).rng();
        let cov = SymBilinearForm::identity(2);
        let m = gen_gaussian_walk(6, 2, std::slice::from_ref(&cov), &mut rng).unwrap();
        // N = M.
        let same = pairwise_covariation(&m, &m, 6).unwrap();
        let form = covariation_form(&m, 6).unwrap();
        assert!((&same - form.matrix()).abs().max() <= 1e-14);
        // N = -M.
        let tr = PredictableTransform::scalars(vec![-1.0; 6]).unwrap();
        let neg = apply_transform(&m, &tr).unwrap();
        let anti = pairwise_covariation(&m, &neg, 6).unwrap();
        assert!((&anti + form.matrix()).abs().max() <= 1e-12);
        // Polarization on independent pairs: [M,N] = ([M+N] - [M-N]) / 4.
        for _ in 0..20 {
            let a = gen_gaussian_walk(6, 2, std::slice::from_ref(&cov), &mut rng).unwrap();
            let b = gen_gaussian_walk(6, 2, std::slice::from_ref(&cov), &mut rng).unwrap();
            let cross = pairwise_covariation(&a, &b, 6).unwrap();
            let sum_vals: Vec<DVector<f64>> = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| x + y)
                .collect();
            let diff_vals: Vec<DVector<f64>> = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| x - y)
                .collect();
            let sum_path =
                MartingalePath::new(a.times().to_vec(), sum_vals, Family::GaussianWalk).unwrap();
            let diff_path =
                MartingalePath::new(a.times().to_vec(), diff_vals, Family::GaussianWalk).unwrap();
            let v_sum = covariation_form(&sum_path, 6).unwrap();
            let v_diff = covariation_form(&diff_path, 6).unwrap();
            let polarized = (v_sum.matrix() - v_diff.matrix()) / 4.0;
            // The polarized matrix is the symmetrization of the cross sum.
            let sym_cross = (&cross + cross.transpose()) / 2.0;
            assert!((polarized - sym_cross).abs().max() <= 1e-10);
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let mut rng = StreamId::root(9).rng();
        let a = gen_brownian_proxy(64, 1, 1.0, &mut rng).unwrap();
        let b = gen_brownian_proxy(128, 1, 1.0, &mut rng).unwrap();
        assert!(pairwise_covariation(&a, &b, 10).is_err());
    }

    #[test]
    fn refinement_identity_and_monotone_error() {
        let xstar = v(&[1.0]);
        // Coarsening equal to the fine grid gives 0.
        let mut rng = StreamId::root(10).rng();
        let p = gen_brownian_proxy(512, 1, 1.0, &mut rng).unwrap();
        let full: Vec<usize> = (0..=512).collect();
        let errs = refinement_convergence(&p, &[full], &xstar).unwrap();
        assert_eq!(errs[0], 0.0);

        // Mean absolute error decreases over dyadic refinement levels.
        let levels: Vec<Vec<usize>> = [8usize, 16, 32]
            .iter()
            .map(|&n| (0..=n).map(|i| i * (512 / n)).collect())
            .collect();
        let n_rep = 3000;
        let mut mean_errs = [0.0f64; 3];
        for _ in 0..n_rep {
            let p = gen_brownian_proxy(512, 1, 1.0, &mut rng).unwrap();
            let errs = refinement_convergence(&p, &levels, &xstar).unwrap();
            for (m, e) in mean_errs.iter_mut().zip(&errs) {
                *m += e / n_rep as f64;
            }
        }
        assert!(
            mean_errs[0] > mean_errs[1] && mean_errs[1] > mean_errs[2],
            "errors not monotone: {mean_errs:?}"
        );
    }

    #[test]
    fn deterministic_line_decreases_with_refinement() {
        // A straight line (diagnostic, not a martingale): the coarse
        // quadratic sum (sum delta)^2 exceeds the fine sum of squares.
        let k = 64usize;
        let values: Vec<DVector<f64>> = (0..=k).map(|i| v(&[i as f64 / k as f64])).collect();
        let times: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
        let line = MartingalePath::new(times, values, Family::GaussianWalk).unwrap();
        let coarse: Vec<usize> = (0..=4).map(|i| i * 16).collect();
        let fine: Vec<usize> = (0..=16).map(|i| i * 4).collect();
        let xstar = v(&[1.0]);
        let v_coarse: f64 = coarse
            .windows(2)
            .map(|w| {
                let d = (&line.values()[w[1]] - &line.values()[w[0]]).dot(&xstar);
                d * d
            })
            .sum();
        let v_fine: f64 = fine
            .windows(2)
            .map(|w| {
                let d = (&line.values()[w[1]] - &line.values()[w[0]]).dot(&xstar);
                d * d
            })
            .sum();
        assert!(v_coarse > v_fine);
        // And the diagnostic reports decreasing distance to the finest sum.
        let errs = refinement_convergence(&line, &[coarse, fine], &xstar).unwrap();
        assert!(errs[0] > errs[1]);
    }

    #[test]
    fn non_spanning_subgrid_rejected() {
        let mut rng = StreamId::root(11).rng();
        let p = gen_brownian_proxy(64, 1, 1.0, &mut rng).unwrap();
        let bad: Vec<usize> = (1..=64).collect();
        assert!(refinement_convergence(&p, &[bad], &v(&[1.0])).is_err());
    }

    #[test]
    fn contraction_transform_dominates_covariation() {
        // After a contraction, the covariation gap V_M - V_N stays PSD.
        let mut rng = StreamId::root(12).rng();
        let cov = SymBilinearForm::identity(2);
        for _ in 0..30 {
            let m = gen_gaussian_walk(8, 2, std::slice::from_ref(&cov), &mut rng).unwrap();
            let factors: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
            let tr = PredictableTransform::scalars(factors).unwrap();
            let n = apply_transform(&m, &tr).unwrap();
            let v_m = covariation_form(&m, 8).unwrap();
            let v_n = covariation_form(&n, 8).unwrap();
            assert!(psd_gap(&v_m, &v_n).unwrap() >= -1e-10);
        }
    }
}
