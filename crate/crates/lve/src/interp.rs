//! Interpolated Gaussian measures: the tree covariance built from
//! weakening parameters, and expectation values under it.
//!
//! The covariance over replica fields has unit diagonal and off-diagonal
//! entries equal to the infimum of the weakening parameters along the
//! unique tree path; it is positive semidefinite for every tree and every
//! w in [0,1]^(n-1). Degenerate covariances (w with zeros) are handled by
//! an eigendecomposition square root, not strict Cholesky.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{LveError, Result};
use crate::parallel::par_sum_complex2;
use crate::quad::{gauss_hermite, normal_quantile, qmc_shift, KroneckerSeq};
use crate::trees::{path_infimum, LabeledTree};

/// Pivot tolerance for the PSD verification.
pub const PIVOT_TOL: f64 = -1e-12;

/// Covariance of the interpolated measure over n replica fields.
#[derive(Debug, Clone)]
pub struct TreeCovariance {
    n: usize,
    matrix: DMatrix<f64>,
    sqrt: DMatrix<f64>,
}

impl TreeCovariance {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// A factor S with S S^T = W (eigendecomposition square root).
    pub fn sqrt_factor(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    /// Rank-1 all-ones covariance: every replica equal to a single field.
    pub fn all_ones(n: usize) -> Self {
        let matrix = DMatrix::from_element(n, n, 1.0);
        let mut sqrt = DMatrix::zeros(n, n);
        for v in 0..n {
            sqrt[(v, 0)] = 1.0;
        }
        Self { n, matrix, sqrt }
    }

    /// Identity covariance (independent replicas).
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            matrix: DMatrix::identity(n, n),
            sqrt: DMatrix::identity(n, n),
        }
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        pivoted_cholesky_check(&matrix)?;
        let sqrt = psd_sqrt(&matrix)?;
        Ok(Self { n, matrix, sqrt })
    }
}

/// Verify positive semidefiniteness by pivoted Cholesky; every pivot must
/// stay above [`PIVOT_TOL`].
pub fn pivoted_cholesky_check(w: &DMatrix<f64>) -> Result<usize> {
    let n = w.nrows();
    let mut a = w.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rank = 0;
    for k in 0..n {
        // largest remaining diagonal element as pivot
        let (piv, &pval) = a
            .diagonal()
            .iter()
            .enumerate()
            .skip(k)
            .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
            .unwrap();
        if pval < PIVOT_TOL {
            return Err(LveError::PsdFailure(format!(
                "pivot {pval:.3e} below tolerance {PIVOT_TOL:.1e} at step {k}; \
                 this would falsify positivity of the tree covariance"
            )));
        }
        if pval <= 1e-14 {
            break; // rank complete
        }
        a.swap_rows(k, piv);
        a.swap_columns(k, piv);
        perm.swap(k, piv);
        let d = a[(k, k)].sqrt();
        for i in k + 1..n {
            a[(i, k)] /= d;
        }
        for j in k + 1..n {
            for i in j..n {
                let v = a[(i, k)] * a[(j, k)];
                a[(i, j)] -= v;
                a[(j, i)] = a[(i, j)];
            }
        }
        a[(k, k)] = d;
        rank += 1;
    }
    Ok(rank)
}

fn psd_sqrt(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = w.clone().symmetric_eigen();
    let norm = eig.eigenvalues.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -1e-12 * norm.max(1.0) {
            return Err(LveError::PsdFailure(format!(
                "eigenvalue {v:.3e} in tree covariance"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals))
}

/// Build the interpolated covariance W[v][v'] = path infimum of w over the
/// unique tree path, with PSD verification.
pub fn build_covariance(tree: &LabeledTree, w: &[f64]) -> Result<TreeCovariance> {
    let n = tree.n();
    let mut matrix = DMatrix::<f64>::zeros(n, n);
    for u in 0..n {
        for v in u..n {
            let x = path_infimum(tree, w, u, v)?;
            matrix[(u, v)] = x;
            matrix[(v, u)] = x;
        }
    }
    TreeCovariance::from_matrix(matrix)
}

/// Integration strategy for Gaussian expectations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadMode {
    TensorHermite,
    QuasiMonteCarlo,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadratureSpec {
    pub mode: QuadMode,
    /// Nodes per axis (TensorHermite) or samples per replicate (QMC / MC).
    pub points: usize,
    pub seed: u64,
}

impl QuadratureSpec {
    pub fn tensor(points: usize) -> Self {
        Self {
            mode: QuadMode::TensorHermite,
            points,
            seed: 0,
        }
    }

    pub fn qmc(points: usize, seed: u64) -> Self {
        Self {
            mode: QuadMode::QuasiMonteCarlo,
            points,
            seed,
        }
    }

    pub fn mc(points: usize, seed: u64) -> Self {
        Self {
            mode: QuadMode::MonteCarlo,
            points,
            seed,
        }
    }
}

/// Shape of the replica fields: `sites` values per replica, each standard
/// normal scaled by `site_scale` before mixing (lattice delta covariance
/// uses site_scale = 1/sqrt(cell measure)).
#[derive(Debug, Clone, Copy)]
pub struct FieldLayout {
    pub sites: usize,
    pub site_scale: f64,
}

impl FieldLayout {
    pub fn scalar() -> Self {
        Self {
            sites: 1,
            site_scale: 1.0,
        }
    }
}

/// A value with an estimated absolute error.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: Complex64,
    pub error: f64,
}

const TENSOR_DIM_CAP: usize = 8;
const TENSOR_POINT_CAP: usize = 1 << 26;
const QMC_REPLICATES: usize = 8;

/// Expectation of `integrand` under the centered Gaussian with covariance
/// W tensored with the site-diagonal identity. The integrand receives the
/// replica-by-site field matrix. Deterministic given the seed.
pub fn gaussian_expectation<F>(
    cov: &TreeCovariance,
    layout: FieldLayout,
    quad: &QuadratureSpec,
    integrand: F,
) -> Result<Estimate>
where
    F: Fn(&DMatrix<f64>) -> Complex64 + Sync + Send,
{
    let n = cov.n();
    let dims = n * layout.sites;
    match quad.mode {
        QuadMode::TensorHermite => {
            if dims > TENSOR_DIM_CAP {
                return Err(LveError::InvalidArgument(format!(
                    "TensorHermite limited to {TENSOR_DIM_CAP} Gaussian dimensions, got {dims}"
                )));
            }
            let coarse_points = (quad.points * 2 / 3).max(3);
            let fine = tensor_hermite(cov, layout, quad.points, &integrand)?;
            let coarse = tensor_hermite(cov, layout, coarse_points, &integrand)?;
            Ok(Estimate {
                value: fine,
                error: (fine - coarse).norm(),
            })
        }
        QuadMode::QuasiMonteCarlo => {
            let mut means = Vec::with_capacity(QMC_REPLICATES);
            for rep in 0..QMC_REPLICATES {
                let shift = qmc_shift(quad.seed, rep as u64, dims);
                let seq = KroneckerSeq::new(dims, shift);
                let (sum, bad) = par_sum_complex2(quad.points, |i| {
                    let mut u = vec![0.0; dims];
                    seq.point(i, &mut u);
                    let xi: Vec<f64> = u.iter().map(|&p| normal_quantile(p)).collect();
                    let field = mix_field(cov, layout, &xi);
                    let v = integrand(&field);
                    let flag = if v.is_finite() { 0.0 } else { 1.0 };
                    (v, Complex64::new(flag, 0.0))
                });
                if bad.re > 0.0 {
                    return Err(LveError::IntegrationFailure(
                        "non-finite integrand value".into(),
                    ));
                }
                means.push(sum / quad.points as f64);
            }
            let mean: Complex64 = means.iter().sum::<Complex64>() / QMC_REPLICATES as f64;
            let var: f64 = means.iter().map(|m| (m - mean).norm_sqr()).sum::<f64>()
                / (QMC_REPLICATES - 1) as f64;
            Ok(Estimate {
                value: mean,
                error: (var / QMC_REPLICATES as f64).sqrt(),
            })
        }
        QuadMode::MonteCarlo => {
            use rand::Rng;
            use rand_distr::StandardNormal;
            let (sum, sq) = par_sum_complex2(quad.points, |i| {
                let mut rng = crate::quad::counter_rng(quad.seed, i as u64);
                let xi: Vec<f64> = (0..dims).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let field = mix_field(cov, layout, &xi);
                let v = integrand(&field);
                (v, Complex64::new(v.norm_sqr(), 0.0))
            });
            let npts = quad.points as f64;
            let mean = sum / npts;
            if !mean.is_finite() {
                return Err(LveError::IntegrationFailure(
                    "non-finite integrand value".into(),
                ));
            }
            let var = (sq.re / npts - mean.norm_sqr()).max(0.0);
            Ok(Estimate {
                value: mean,
                error: (var / npts).sqrt(),
            })
        }
    }
}

fn mix_field(cov: &TreeCovariance, layout: FieldLayout, xi: &[f64]) -> DMatrix<f64> {
    let n = cov.n();
    let s = cov.sqrt_factor();
    let mut field = DMatrix::<f64>::zeros(n, layout.sites);
    for v in 0..n {
        for x in 0..layout.sites {
            let mut acc = 0.0;
            for u in 0..n {
                acc += s[(v, u)] * xi[u * layout.sites + x];
            }
            field[(v, x)] = acc * layout.site_scale;
        }
    }
    field
}

fn tensor_hermite<F>(
    cov: &TreeCovariance,
    layout: FieldLayout,
    points: usize,
    integrand: &F,
) -> Result<Complex64>
where
    F: Fn(&DMatrix<f64>) -> Complex64 + Sync + Send,
{
    let dims = cov.n() * layout.sites;
    let total = points
        .checked_pow(dims as u32)
        .filter(|&t| t <= TENSOR_POINT_CAP)
        .ok_or_else(|| {
            LveError::InvalidArgument(format!(
                "tensor rule too large: {points}^{dims} nodes"
            ))
        })?;
    let rule = gauss_hermite(points);
    let (sum, bad) = par_sum_complex2(total, |idx| {
        let mut rem = idx;
        let mut xi = vec![0.0; dims];
        let mut wgt = 1.0;
        for x in xi.iter_mut() {
            let d = rem % points;
            rem /= points;
            *x = rule.nodes[d];
            wgt *= rule.weights[d];
        }
        let field = mix_field(cov, layout, &xi);
        let v = integrand(&field) * wgt;
        let flag = if v.is_finite() { 0.0 } else { 1.0 };
        (v, Complex64::new(flag, 0.0))
    });
    if bad.re > 0.0 {
        return Err(LveError::IntegrationFailure(
            "non-finite integrand value".into(),
        ));
    }
    Ok(sum)
}

/// Report of the replica identity check: the single-field expectation of
/// the diagonal embedding against the all-ones replica covariance.
#[derive(Debug, Clone)]
pub struct ReplicaReport {
    pub single: Estimate,
    pub replicated: Estimate,
    pub deviation: f64,
    pub combined_error: f64,
}

/// Compare E[f(s,...,s)] over one field with E[f(s_1,...,s_n)] under the
/// all-ones covariance, integrating the two sides with different rules.
pub fn replica_identity_check<F>(f: F, n: usize, quad: &QuadratureSpec) -> Result<ReplicaReport>
where
    F: Fn(&[f64]) -> Complex64 + Sync + Send,
{
    // single-field side: independent high-order 1-d Hermite rules
    let single_val = |order: usize| {
        let rule = gauss_hermite(order);
        let mut acc = crate::quad::KahanC::default();
        for (x, w) in rule.nodes.iter().zip(rule.weights.iter()) {
            let diag = vec![*x; n];
            acc.add(f(&diag) * *w);
        }
        acc.value()
    };
    let fine = single_val(96);
    let coarse = single_val(64);
    let single = Estimate {
        value: fine,
        error: (fine - coarse).norm(),
    };
    let cov = TreeCovariance::all_ones(n);
    let replicated = gaussian_expectation(&cov, FieldLayout::scalar(), quad, |field| {
        let vals: Vec<f64> = (0..n).map(|v| field[(v, 0)]).collect();
        f(&vals)
    })?;
    let deviation = (single.value - replicated.value).norm();
    Ok(ReplicaReport {
        single,
        replicated,
        deviation,
        combined_error: single.error + replicated.error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::{enumerate_trees, LabeledTree};
    use approx::assert_relative_eq;

    #[test]
    fn covariance_examples() {
        let t1 = LabeledTree::new(1, vec![]).unwrap();
        let c = build_covariance(&t1, &[]).unwrap();
        assert_eq!(c.matrix()[(0, 0)], 1.0);

        let t2 = LabeledTree::new(2, vec![(0, 1)]).unwrap();
        let c = build_covariance(&t2, &[0.4]).unwrap();
        assert_eq!(c.matrix()[(0, 1)], 0.4);
        assert_eq!(c.matrix()[(1, 1)], 1.0);

        // star on 3 vertices centered at 0; edges sorted: (0,1), (0,2)
        let t3 = LabeledTree::new(3, vec![(0, 1), (0, 2)]).unwrap();
        let c = build_covariance(&t3, &[0.9, 0.3]).unwrap();
        assert_eq!(c.matrix()[(1, 2)], 0.3);
    }

    #[test]
    fn covariance_limits() {
        // all w = 1: rank-1 all-ones; w = 0 on an edge: block decoupling
        let t = LabeledTree::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let ones = build_covariance(&t, &[1.0, 1.0]).unwrap();
        assert!(ones
            .matrix()
            .iter()
            .all(|&x| (x - 1.0).abs() < 1e-14));
        let cut = build_covariance(&t, &[1.0, 0.0]).unwrap();
        assert_eq!(cut.matrix()[(0, 2)], 0.0);
        assert_eq!(cut.matrix()[(1, 2)], 0.0);
        assert_eq!(cut.matrix()[(0, 1)], 1.0);
    }

    #[test]
    fn psd_over_random_draws() {
        use rand::Rng;
        let mut rng = crate::quad::counter_rng(11, 0);
        for _ in 0..2000 {
            let n = rng.gen_range(2..=8);
            let idx = rng.gen_range(0..crate::trees::tree_count(n));
            let tree = crate::trees::tree_by_index(n, idx);
            let w: Vec<f64> = (0..n - 1).map(|_| rng.gen::<f64>()).collect();
            build_covariance(&tree, &w).expect("tree covariance must be PSD");
        }
    }

    #[test]
    fn monotone_in_w() {
        let t = LabeledTree::new(4, vec![(0, 1), (1, 2), (1, 3)]).unwrap();
        let w0 = [0.3, 0.5, 0.2];
        let base = build_covariance(&t, &w0).unwrap();
        for e in 0..3 {
            let mut w = w0;
            w[e] += 0.3;
            let up = build_covariance(&t, &w).unwrap();
            for u in 0..4 {
                for v in 0..4 {
                    assert!(up.matrix()[(u, v)] >= base.matrix()[(u, v)] - 1e-15);
                }
            }
        }
    }

    #[test]
    fn expectation_normalization_and_moments() {
        let t = LabeledTree::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let cov = build_covariance(&t, &[0.6, 0.25]).unwrap();
        let quad = QuadratureSpec::tensor(20);
        let one = gaussian_expectation(&cov, FieldLayout::scalar(), &quad, |_| {
            Complex64::new(1.0, 0.0)
        })
        .unwrap();
        assert_relative_eq!(one.value.re, 1.0, epsilon = 1e-12);

        // second moment reproduces W[u][v]
        let m = gaussian_expectation(&cov, FieldLayout::scalar(), &quad, |f| {
            Complex64::new(f[(0, 0)] * f[(2, 0)], 0.0)
        })
        .unwrap();
        assert_relative_eq!(m.value.re, 0.25, epsilon = 1e-10);

        // sigma^4 under identity covariance: Wick count 3
        let id = TreeCovariance::identity(2);
        let m4 = gaussian_expectation(&id, FieldLayout::scalar(), &quad, |f| {
            Complex64::new(f[(0, 0)].powi(4), 0.0)
        })
        .unwrap();
        assert_relative_eq!(m4.value.re, 3.0, epsilon = 1e-9);

        // odd monomial vanishes
        let odd = gaussian_expectation(&cov, FieldLayout::scalar(), &quad, |f| {
            Complex64::new(f[(0, 0)].powi(3) * f[(1, 0)].powi(2), 0.0)
        })
        .unwrap();
        assert!(odd.value.norm() < 1e-12);
    }

    #[test]
    fn qmc_and_mc_agree_with_tensor() {
        let t = LabeledTree::new(2, vec![(0, 1)]).unwrap();
        let cov = build_covariance(&t, &[0.7]).unwrap();
        let f = |field: &DMatrix<f64>| {
            Complex64::new(0.0, field[(0, 0)] + field[(1, 0)]).exp()
        };
        let exact = gaussian_expectation(&cov, FieldLayout::scalar(), &QuadratureSpec::tensor(24), f)
            .unwrap();
        let qmc =
            gaussian_expectation(&cov, FieldLayout::scalar(), &QuadratureSpec::qmc(4096, 5), f)
                .unwrap();
        let mc =
            gaussian_expectation(&cov, FieldLayout::scalar(), &QuadratureSpec::mc(40_000, 5), f)
                .unwrap();
        assert!((qmc.value - exact.value).norm() < 5.0 * qmc.error.max(1e-4));
        assert!((mc.value - exact.value).norm() < 5.0 * mc.error);
    }

    #[test]
    fn replica_identity_examples() {
        // f = product of replicas, n=2: both sides E[s^2] = 1
        let rep = replica_identity_check(
            |s| Complex64::new(s.iter().product(), 0.0),
            2,
            &QuadratureSpec::tensor(16),
        )
        .unwrap();
        assert_relative_eq!(rep.single.value.re, 1.0, epsilon = 1e-10);
        assert!(rep.deviation <= rep.combined_error.max(1e-10));

        // f = exp(i sum), n=3: characteristic function e^{-9/2}
        let rep = replica_identity_check(
            |s| Complex64::new(0.0, s.iter().sum()).exp(),
            3,
            &QuadratureSpec::tensor(24),
        )
        .unwrap();
        assert_relative_eq!(rep.single.value.re, (-4.5f64).exp(), epsilon = 1e-9);
        assert!(rep.deviation <= rep.combined_error.max(1e-9));
    }

    #[test]
    fn degenerate_w_sampling_works() {
        // w = 0 gives a singular covariance; eigen square root must cope
        for tree in enumerate_trees(4).unwrap() {
            let cov = build_covariance(&tree, &[0.0, 0.0, 0.0]).unwrap();
            let est = gaussian_expectation(
                &cov,
                FieldLayout::scalar(),
                &QuadratureSpec::tensor(8),
                |f| Complex64::new(f[(0, 0)] * f[(1, 0)], 0.0),
            )
            .unwrap();
            assert!(est.value.norm() < 1e-12);
        }
    }
}
