//! The expansion engine.
//!
//! Assembles the order-n contributions to the pressure and the connected
//! two-point function: sum over labeled trees, integral over weakening
//! parameters, Gaussian expectation over interpolated replica fields, and
//! the product of vertex derivative chains dictated by the tree.
//!
//! Trees in the same isomorphism class give identical integrals (the site
//! sums and the replica measure are label-symmetric), so each class is
//! integrated once and weighted by its count.

use std::collections::HashMap;

use num_complex::Complex64;

use crate::error::{LveError, Result};
use crate::interp::{build_covariance, Estimate};
use crate::loopvertex::{external_chain, vertex_derivative_chain, SigmaData, Theory};
use crate::model::ModelSpec;
use crate::parallel::{par_map, par_sum_complex2};
use crate::quad::{
    gauss_hermite, gauss_legendre_unit, lstsq, normal_quantile, qmc_shift, Kahan, KahanC,
    KroneckerSeq,
};
use crate::trees::{enumerate_trees, LabeledTree};

/// Tuning knobs for the integration strategy.
#[derive(Debug, Clone, Copy)]
pub struct EngineOptions {
    /// QMC samples per Cranley-Patterson shift.
    pub qmc_points: usize,
    pub seed: u64,
    /// Gauss-Legendre order per weakening axis (tensor path).
    pub gl_order: usize,
    /// Gauss-Hermite order per replica (tensor path).
    pub gh_order: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            qmc_points: 4096,
            seed: 0x11c3_55ed,
            gl_order: 8,
            gh_order: 20,
        }
    }
}

const QMC_SHIFTS: usize = 8;

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Evaluate the tree integrand for one set of per-replica vertex data:
/// edge-site sums of products of derivative chains. `external` marks
/// vertex 0 as a resolvent line between the given sites.
fn tree_integrand(
    theory: &Theory,
    data: &[SigmaData],
    incident: &[Vec<usize>],
    n_edges: usize,
    sites: usize,
    external: Option<(usize, usize)>,
) -> Complex64 {
    let n = data.len();
    let mu = theory.cell_measure();
    if n == 1 && external.is_none() {
        return data[0].v_value;
    }
    let edge_factor = mu.powi(-(n_edges as i32));
    let total = sites.pow(n_edges as u32);
    let mut z = vec![0usize; n_edges];
    let mut vsites: Vec<Vec<usize>> = incident
        .iter()
        .map(|es| Vec::with_capacity(es.len()))
        .collect();
    let mut acc = KahanC::default();
    for a in 0..total {
        let mut rem = a;
        for slot in z.iter_mut() {
            *slot = rem % sites;
            rem /= sites;
        }
        for (v, buf) in vsites.iter_mut().enumerate() {
            buf.clear();
            for &e in &incident[v] {
                buf.push(z[e]);
            }
        }
        let mut prod = Complex64::new(edge_factor, 0.0);
        let start = if let Some((x, y)) = external {
            prod *= external_chain(theory, &data[0], x, y, &vsites[0]) / mu;
            1
        } else {
            0
        };
        for v in start..n {
            prod *= vertex_derivative_chain(theory, &data[v], &vsites[v]);
        }
        acc.add(prod);
    }
    acc.value()
}

fn incidence(tree: &LabeledTree) -> Vec<Vec<usize>> {
    let mut incident = vec![Vec::new(); tree.n()];
    for (e, &(u, v)) in tree.edges().iter().enumerate() {
        incident[u].push(e);
        incident[v].push(e);
    }
    incident
}

/// Deterministic tensor-product evaluation (scalar model, small orders):
/// Gauss-Legendre over the weakening cube, Gauss-Hermite per replica.
fn scalar_tensor_eval(
    theory: &Theory,
    tree: &LabeledTree,
    external: Option<(usize, usize)>,
    gl_order: usize,
    gh_order: usize,
) -> Result<Complex64> {
    let n = tree.n();
    let incident = incidence(tree);
    let gh = gauss_hermite(gh_order);
    if n == 1 {
        let mut acc = KahanC::default();
        for (x, wgt) in gh.nodes.iter().zip(gh.weights.iter()) {
            let data = [theory.eval_sigma(&[*x])];
            acc.add(tree_integrand(theory, &data, &incident, 0, 1, external) * *wgt);
        }
        return Ok(acc.value());
    }
    let gl = gauss_legendre_unit(gl_order);
    let n_edges = n - 1;
    let w_total = gl_order.pow(n_edges as u32);
    let gh_total = gh_order.pow(n as u32);
    let partials = par_map(w_total, |wi| -> Result<Complex64> {
        let mut rem = wi;
        let mut w = vec![0.0; n_edges];
        let mut w_wgt = 1.0;
        for slot in w.iter_mut() {
            let d = rem % gl_order;
            rem /= gl_order;
            *slot = gl.nodes[d];
            w_wgt *= gl.weights[d];
        }
        let cov = build_covariance(tree, &w)?;
        let s = cov.sqrt_factor();
        let mut acc = KahanC::default();
        let mut xi = vec![0.0; n];
        let mut sigma = vec![0.0; n];
        for gi in 0..gh_total {
            let mut rem = gi;
            let mut g_wgt = 1.0;
            for x in xi.iter_mut() {
                let d = rem % gh_order;
                rem /= gh_order;
                *x = gh.nodes[d];
                g_wgt *= gh.weights[d];
            }
            for v in 0..n {
                let mut mix = 0.0;
                for u in 0..n {
                    mix += s[(v, u)] * xi[u];
                }
                sigma[v] = mix;
            }
            let data: Vec<SigmaData> = sigma.iter().map(|&sv| theory.eval_sigma(&[sv])).collect();
            acc.add(tree_integrand(theory, &data, &incident, n_edges, 1, external) * g_wgt);
        }
        Ok(acc.value() * w_wgt)
    });
    let mut acc = KahanC::default();
    for p in partials {
        acc.add(p?);
    }
    Ok(acc.value())
}

/// Randomized-QMC evaluation of one labeled-tree integral: a Kronecker
/// sequence over the joint (weakening, replica-field) cube with
/// Cranley-Patterson shifts supplying the error estimate.
pub fn qmc_tree_term(
    theory: &Theory,
    tree: &LabeledTree,
    external: Option<(usize, usize)>,
    opts: &EngineOptions,
    salt: u64,
) -> Result<Estimate> {
    let n = tree.n();
    let n_edges = n - 1;
    let sites = theory.sites();
    let dims = n_edges + n * sites;
    let incident = incidence(tree);
    let mu = theory.cell_measure();
    let site_scale = 1.0 / mu.sqrt();
    let mut means = Vec::with_capacity(QMC_SHIFTS);
    for rep in 0..QMC_SHIFTS {
        let shift = qmc_shift(opts.seed.wrapping_add(salt), rep as u64, dims);
        let seq = KroneckerSeq::new(dims, shift);
        let (sum, bad) = par_sum_complex2(opts.qmc_points, |i| {
            let mut u = vec![0.0; dims];
            seq.point(i, &mut u);
            let w = &u[..n_edges];
            let cov = match build_covariance(tree, w) {
                Ok(c) => c,
                Err(_) => return (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)),
            };
            let s = cov.sqrt_factor();
            let xi: Vec<f64> = u[n_edges..].iter().map(|&p| normal_quantile(p)).collect();
            let data: Vec<SigmaData> = (0..n)
                .map(|v| {
                    let mut sigma = vec![0.0; sites];
                    for (x, slot) in sigma.iter_mut().enumerate() {
                        let mut mix = 0.0;
                        for rv in 0..n {
                            mix += s[(v, rv)] * xi[rv * sites + x];
                        }
                        *slot = mix * site_scale;
                    }
                    theory.eval_sigma(&sigma)
                })
                .collect();
            let val = tree_integrand(theory, &data, &incident, n_edges, sites, external);
            let flag = if val.is_finite() { 0.0 } else { 1.0 };
            (val, Complex64::new(flag, 0.0))
        });
        if bad.re > 0.0 {
            return Err(LveError::IntegrationFailure(
                "non-finite tree integrand".into(),
            ));
        }
        means.push(sum / opts.qmc_points as f64);
    }
    let mean: Complex64 = means.iter().sum::<Complex64>() / QMC_SHIFTS as f64;
    let var: f64 =
        means.iter().map(|m| (m - mean).norm_sqr()).sum::<f64>() / (QMC_SHIFTS - 1) as f64;
    Ok(Estimate {
        value: mean,
        error: (var / QMC_SHIFTS as f64).sqrt(),
    })
}

/// Integral attached to a single labeled tree (pressure normalization,
/// before the 1/n! and the sum over trees).
pub fn tree_term(
    theory: &Theory,
    tree: &LabeledTree,
    opts: &EngineOptions,
    salt: u64,
) -> Result<Estimate> {
    let n = tree.n();
    if theory.lattice().is_none() && n <= 2 {
        let gh = opts.gh_order.max(20);
        let gl = opts.gl_order;
        let fine = scalar_tensor_eval(theory, tree, None, gl, gh)?;
        let coarse = scalar_tensor_eval(
            theory,
            tree,
            None,
            (gl.saturating_sub(2)).max(3),
            (2 * gh / 3).max(4),
        )?;
        Ok(Estimate {
            value: fine,
            error: (fine - coarse).norm(),
        })
    } else {
        qmc_tree_term(theory, tree, None, opts, salt)
    }
}

/// One order of the expansion, with its integration error.
#[derive(Debug, Clone, Copy)]
pub struct OrderTerm {
    pub n: usize,
    pub value: Complex64,
    pub error: f64,
}

/// The truncated pressure (log of the partition function) with per-order
/// terms, successive ratios, and a geometric tail estimate.
#[derive(Debug, Clone)]
pub struct PressureSeries {
    pub terms: Vec<OrderTerm>,
    pub total: Complex64,
    pub integration_error: f64,
    /// |t_{n+1}| / |t_n| for consecutive computed orders.
    pub ratios: Vec<f64>,
    /// Estimated magnitude of the dropped orders, assuming the last ratio
    /// persists geometrically; conservative when the ratio is near 1.
    pub tail_estimate: f64,
}

/// Representative tree and multiplicity for each isomorphism class.
pub fn tree_classes(n: usize) -> Result<Vec<(LabeledTree, usize)>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (LabeledTree, usize)> = HashMap::new();
    for tree in enumerate_trees(n)? {
        let cert = tree.canonical_certificate();
        match groups.get_mut(&cert) {
            Some(entry) => entry.1 += 1,
            None => {
                order.push(cert.clone());
                groups.insert(cert, (tree, 1));
            }
        }
    }
    Ok(order
        .into_iter()
        .map(|cert| groups.remove(&cert).unwrap())
        .collect())
}

pub fn pressure_series(
    model: &ModelSpec,
    n_max: usize,
    opts: &EngineOptions,
) -> Result<PressureSeries> {
    if n_max == 0 {
        return Err(LveError::InvalidArgument("n_max must be positive".into()));
    }
    let theory = Theory::new(model)?;
    let mut terms = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let mut val = KahanC::default();
        let mut err = Kahan::default();
        for (class_idx, (rep, count)) in tree_classes(n)?.into_iter().enumerate() {
            let salt = (n as u64) << 32 | class_idx as u64;
            let est = tree_term(&theory, &rep, opts, salt)?;
            val.add(est.value * count as f64);
            err.add(est.error * count as f64);
        }
        let fact = factorial(n);
        terms.push(OrderTerm {
            n,
            value: val.value() / fact,
            error: err.value() / fact,
        });
    }
    let mut total = KahanC::default();
    let mut int_err = Kahan::default();
    for t in &terms {
        total.add(t.value);
        int_err.add(t.error);
    }
    let ratios: Vec<f64> = terms
        .windows(2)
        .map(|p| p[1].value.norm() / p[0].value.norm().max(f64::MIN_POSITIVE))
        .collect();
    let last = terms.last().unwrap().value.norm();
    let tail_estimate = match ratios.last() {
        Some(&q) if q < 0.9 => last * q / (1.0 - q),
        _ => last,
    };
    Ok(PressureSeries {
        terms,
        total: total.value(),
        integration_error: int_err.value(),
        ratios,
        tail_estimate,
    })
}

/// Connected two-point function via the expansion: vertex 0 of each tree
/// carries the external resolvent line, the remaining vertices carry loop
/// vertices.
#[derive(Debug, Clone)]
pub struct TwoPointResult {
    pub value: Complex64,
    pub error: f64,
    pub orders: Vec<OrderTerm>,
}

pub fn two_point_function(
    model: &ModelSpec,
    x: usize,
    y: usize,
    n_max: usize,
    opts: &EngineOptions,
) -> Result<TwoPointResult> {
    let theory = Theory::new(model)?;
    let sites = theory.sites();
    if x >= sites || y >= sites {
        return Err(LveError::InvalidArgument(format!(
            "site index out of range for {sites} sites"
        )));
    }
    let mut orders = Vec::with_capacity(n_max + 1);
    for p in 0..=n_max {
        let mut val = KahanC::default();
        let mut err = Kahan::default();
        for (t_idx, tree) in enumerate_trees(p + 1)?.enumerate() {
            let salt = 0x7700_0000u64 | (p as u64) << 20 | t_idx as u64;
            let est = qmc_tree_term(&theory, &tree, Some((x, y)), opts, salt)?;
            val.add(est.value);
            err.add(est.error);
        }
        let fact = factorial(p);
        orders.push(OrderTerm {
            n: p,
            value: val.value() / fact,
            error: err.value() / fact,
        });
    }
    let mut total = KahanC::default();
    let mut toterr = Kahan::default();
    for o in &orders {
        total.add(o.value);
        toterr.add(o.error);
    }
    Ok(TwoPointResult {
        value: total.value(),
        error: toterr.value(),
        orders,
    })
}

/// Taylor coefficients of the pressure in the coupling, by nested forward
/// differences with Richardson extrapolation. Evaluations share one
/// memoized grid, and for sampled models one seed, so the differentiated
/// function is smooth in the coupling.
#[derive(Debug, Clone)]
pub struct TaylorReport {
    /// coefficients[k] multiplies lambda^k; index 0 is always 0.
    pub coefficients: Vec<f64>,
    pub errors: Vec<f64>,
}

pub fn taylor_coefficients(
    model: &ModelSpec,
    k_max: usize,
    opts: &EngineOptions,
) -> Result<TaylorReport> {
    if k_max == 0 || k_max > 4 {
        return Err(LveError::InvalidArgument(
            "taylor order must be between 1 and 4".into(),
        ));
    }
    let n_max = k_max + 1;
    // finite differences divide the pressure error by h^k, so the grid
    // evaluations get boosted quadrature orders
    let boosted = EngineOptions {
        gh_order: opts.gh_order.max(48),
        gl_order: opts.gl_order.max(8),
        ..*opts
    };
    let mut memo: HashMap<u64, Complex64> = HashMap::new();
    let mut pressure_at = |lam: f64| -> Result<Complex64> {
        if let Some(&p) = memo.get(&lam.to_bits()) {
            return Ok(p);
        }
        let mut m = model.clone();
        m.lambda = Complex64::new(lam, 0.0);
        let p = pressure_series(&m, n_max, &boosted)?.total;
        memo.insert(lam.to_bits(), p);
        Ok(p)
    };
    let levels = 6;
    let h0 = 1.0 / 256.0;
    let mut coefficients = vec![0.0; k_max + 1];
    let mut errors = vec![0.0; k_max + 1];
    for k in 1..=k_max {
        let mut table = vec![vec![0.0; levels]; levels];
        for i in 0..levels {
            let h = h0 / (1u64 << i) as f64;
            // forward difference: sum_j (-1)^(k-j) C(k,j) P(j h); P(0) = 0
            let mut acc = KahanC::default();
            let mut binom = 1.0f64;
            for j in 1..=k {
                binom = binom * (k - j + 1) as f64 / j as f64;
                let sign = if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
                acc.add(sign * binom * pressure_at(j as f64 * h)?);
            }
            table[i][0] = (acc.value() / (factorial(k) * h.powi(k as i32))).re;
            for m in 1..=i {
                let f = (1u64 << m) as f64;
                table[i][m] = (f * table[i][m - 1] - table[i - 1][m - 1]) / (f - 1.0);
            }
        }
        coefficients[k] = table[levels - 1][levels - 1];
        errors[k] = (table[levels - 1][levels - 1] - table[levels - 2][levels - 2]).abs();
    }
    Ok(TaylorReport {
        coefficients,
        errors,
    })
}

/// Borel-style remainder analysis: for R_r(lambda) = P(lambda) - partial
/// Taylor sum, fit |R_r| = A rho^r r! |lambda|^r in log space over r.
#[derive(Debug, Clone)]
pub struct BorelReport {
    pub amplitude: f64,
    pub rho: f64,
    /// (r, |R_r|) for each remainder order examined.
    pub remainders: Vec<(usize, f64)>,
    pub pressure: Complex64,
    pub integration_error: f64,
}

pub fn borel_remainder_check(
    model: &ModelSpec,
    coefficients: &[f64],
    r_max: usize,
    n_max: usize,
    opts: &EngineOptions,
) -> Result<BorelReport> {
    if r_max + 1 > coefficients.len() {
        return Err(LveError::InvalidArgument(format!(
            "need {} Taylor coefficients for r_max {r_max}",
            r_max + 1
        )));
    }
    let series = pressure_series(model, n_max, opts)?;
    let p = series.total;
    let lam = model.lambda;
    let noise = (series.integration_error + series.tail_estimate).max(1e-14);
    let mut remainders = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut partial = Complex64::new(0.0, 0.0);
    for r in 0..=r_max {
        if r > 0 {
            partial += coefficients[r] * lam.powu(r as u32);
        }
        let rem = (p - partial).norm();
        remainders.push((r, rem));
        if rem > 3.0 * noise {
            xs.push(r as f64);
            ys.push(rem.ln() - factorial(r).ln() - r as f64 * lam.norm().ln());
        }
    }
    if xs.len() < 3 {
        return Err(LveError::InsufficientData(format!(
            "only {} remainders above the noise floor {noise:.2e}",
            xs.len()
        )));
    }
    let design = nalgebra::DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    let rhs = nalgebra::DVector::from_vec(ys);
    let beta = lstsq(&design, &rhs)
        .ok_or_else(|| LveError::IntegrationFailure("degenerate remainder fit".into()))?;
    Ok(BorelReport {
        amplitude: beta[0].exp(),
        rho: beta[1].exp(),
        remainders,
        pressure: p,
        integration_error: series.integration_error,
    })
}

/// Exponential-decay fit for two-point values at several separations:
/// |S(d)| = K M^{2j} exp(-c M^j d) in physical distance d.
#[derive(Debug, Clone)]
pub struct DecayFit {
    pub c_hat: f64,
    pub k_hat: f64,
    pub points_used: usize,
    /// Root-mean-square residual of the log-magnitude fit.
    pub residual: f64,
    /// Spread of the fitted log magnitudes (max - min).
    pub signal_range: f64,
}

pub fn decay_rate_fit(
    m_base: f64,
    j: u32,
    data: &[(f64, Complex64, f64)],
) -> Result<DecayFit> {
    let mj = m_base.powi(j as i32);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(d, s, err) in data {
        if d > 0.0 && s.norm() > 3.0 * err {
            xs.push(-mj * d);
            ys.push(s.norm().ln());
        }
    }
    if xs.len() < 4 {
        return Err(LveError::InsufficientData(format!(
            "only {} usable separations for the decay fit",
            xs.len()
        )));
    }
    let design = nalgebra::DMatrix::from_fn(xs.len(), 2, |i, c| if c == 0 { 1.0 } else { xs[i] });
    let rhs = nalgebra::DVector::from_vec(ys);
    let beta = lstsq(&design, &rhs)
        .ok_or_else(|| LveError::IntegrationFailure("degenerate decay fit".into()))?;
    let mut sq = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let fit = beta[0] + beta[1] * x;
        sq += (rhs[i] - fit).powi(2);
    }
    let ymin = rhs.iter().cloned().fold(f64::INFINITY, f64::min);
    let ymax = rhs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(DecayFit {
        c_hat: beta[1],
        k_hat: beta[0].exp() * mj.powi(-2),
        points_used: xs.len(),
        residual: (sq / xs.len() as f64).sqrt(),
        signal_range: ymax - ymin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_lattice_covariance, SliceSpec};
    use crate::oracle;
    use approx::assert_relative_eq;

    fn zero_dim(lambda: f64) -> ModelSpec {
        ModelSpec::zero_dim(Complex64::new(lambda, 0.0))
    }

    #[test]
    fn first_order_term_is_twice_lambda() {
        // t_1 = -2 lambda + O(lambda^2)
        let lam = 1e-3;
        let series = pressure_series(&zero_dim(lam), 1, &EngineOptions::default()).unwrap();
        let t1 = series.terms[0].value.re;
        assert!((t1 + 2.0 * lam).abs() < 3e-5, "t1 = {t1}");
    }

    #[test]
    fn second_order_term_is_lambda() {
        // t_2 / 2! -> -lambda as lambda -> 0
        let lam = 1e-3;
        let series = pressure_series(&zero_dim(lam), 2, &EngineOptions::default()).unwrap();
        let t2 = series.terms[1].value.re;
        assert!((t2 + lam).abs() < 2e-5, "t2 = {t2}");
    }

    #[test]
    fn pressure_matches_quadrature_oracle() {
        for &lam in &[0.01, 0.02] {
            let series = pressure_series(&zero_dim(lam), 5, &EngineOptions::default()).unwrap();
            let oracle = oracle::quadrature_log_z_scalar(Complex64::new(lam, 0.0)).unwrap();
            let diff = (series.total - oracle.value).norm();
            let budget = series.tail_estimate + series.integration_error + oracle.error;
            assert!(
                diff <= budget.max(1e-6),
                "lambda={lam}: diff {diff:.2e} budget {budget:.2e}"
            );
        }
    }

    #[test]
    fn isomorphic_trees_integrate_identically() {
        // path 0-1-2 versus path 1-0-2: same class, same value
        let theory = Theory::new(&zero_dim(0.05)).unwrap();
        let a = LabeledTree::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let b = LabeledTree::new(3, vec![(0, 1), (0, 2)]).unwrap();
        let opts = EngineOptions::default();
        let ta = tree_term(&theory, &a, &opts, 0).unwrap();
        let tb = tree_term(&theory, &b, &opts, 0).unwrap();
        assert!(
            (ta.value - tb.value).norm() < (ta.error + tb.error).max(1e-9),
            "a={} b={} errs={} {}",
            ta.value,
            tb.value,
            ta.error,
            tb.error
        );
    }

    #[test]
    fn qmc_agrees_with_tensor_path() {
        let theory = Theory::new(&zero_dim(0.05)).unwrap();
        let tree = LabeledTree::new(2, vec![(0, 1)]).unwrap();
        let opts = EngineOptions {
            qmc_points: 1 << 13,
            ..EngineOptions::default()
        };
        let tensor = tree_term(&theory, &tree, &opts, 0).unwrap();
        let qmc = qmc_tree_term(&theory, &tree, None, &opts, 0).unwrap();
        assert!(
            (tensor.value - qmc.value).norm() < 5.0 * qmc.error.max(1e-5),
            "tensor={} qmc={} err={}",
            tensor.value,
            qmc.value,
            qmc.error
        );
    }

    #[test]
    fn series_ratio_contracts_at_moderate_coupling() {
        let series = pressure_series(&zero_dim(0.05), 4, &EngineOptions::default()).unwrap();
        for (i, q) in series.ratios.iter().enumerate() {
            assert!(*q < 1.0, "ratio {i} = {q}");
        }
    }

    #[test]
    fn taylor_matches_wick_combinatorics() {
        let report = taylor_coefficients(&zero_dim(0.01), 3, &EngineOptions::default()).unwrap();
        let exact = oracle::wick_log_coefficients(3);
        assert!((report.coefficients[1] - exact[1]).abs() < 1e-5);
        assert!((report.coefficients[2] - exact[2]).abs() < 0.05);
        assert!((report.coefficients[3] - exact[3]).abs() < 0.01 * exact[3].abs());
    }

    #[test]
    fn lattice_pressure_matches_oracle() {
        let slice = SliceSpec::chain(2.0, 0, 0.0, 4, 3, 1.0);
        let lam = Complex64::new(0.01, 0.0);
        let model = ModelSpec::lattice(slice.clone(), lam);
        let opts = EngineOptions {
            qmc_points: 1 << 12,
            ..EngineOptions::default()
        };
        let series = pressure_series(&model, 3, &opts).unwrap();
        let reference = oracle::lattice_log_z(&slice, lam, 0, 0).unwrap();
        let diff = (series.total - reference.value).norm();
        let budget = series.tail_estimate + series.integration_error + reference.error;
        assert!(
            diff <= budget.max(1e-4),
            "diff {diff:.2e} budget {budget:.2e}"
        );
    }

    #[test]
    fn two_point_free_limit_is_covariance() {
        let slice = SliceSpec::chain(2.0, 1, 0.0, 4, 4, 1.0);
        let kernel = build_lattice_covariance(&slice).unwrap().matrix;
        let model = ModelSpec::lattice(slice, Complex64::new(1e-10, 0.0));
        let opts = EngineOptions {
            qmc_points: 1 << 11,
            ..EngineOptions::default()
        };
        let tp = two_point_function(&model, 0, 2, 0, &opts).unwrap();
        assert!(
            (tp.value.re - kernel[(0, 2)]).abs() < 5.0 * tp.error.max(1e-6),
            "got {} expected {}",
            tp.value.re,
            kernel[(0, 2)]
        );
    }

    #[test]
    fn two_point_matches_reweighted_oracle() {
        let slice = SliceSpec::chain(2.0, 0, 0.0, 4, 4, 1.0);
        let lam = Complex64::new(0.05, 0.0);
        let model = ModelSpec::lattice(slice.clone(), lam);
        let opts = EngineOptions {
            qmc_points: 1 << 12,
            ..EngineOptions::default()
        };
        let tp = two_point_function(&model, 0, 1, 2, &opts).unwrap();
        let reference = oracle::connected_two_point(&slice, lam, 0, 1, 400_000, 17).unwrap();
        let tol = 5.0 * (tp.error + reference.error).max(1e-4);
        assert!(
            (tp.value - reference.value).norm() < tol,
            "expansion {} oracle {} tol {tol:.2e}",
            tp.value,
            reference.value
        );
    }

    #[test]
    fn pressure_is_deterministic() {
        let model = zero_dim(0.03);
        let opts = EngineOptions::default();
        let a = pressure_series(&model, 5, &opts).unwrap();
        let b = pressure_series(&model, 5, &opts).unwrap();
        assert_eq!(a.total, b.total);
    }

    #[test]
    fn borel_remainders_shrink_then_fit() {
        let model = zero_dim(0.02);
        let coeffs = oracle::wick_log_coefficients(3);
        let report = borel_remainder_check(&model, &coeffs, 3, 6, &EngineOptions::default())
            .unwrap();
        assert!(report.remainders[1].1 < report.remainders[0].1);
        assert!(report.rho.is_finite() && report.rho > 0.0);
        assert!(report.amplitude.is_finite() && report.amplitude > 0.0);
    }

    #[test]
    fn decay_fit_recovers_synthetic_rate() {
        let (m, j, c, k) = (2.0f64, 2u32, 0.7f64, 1.3f64);
        let mj = m.powi(j as i32);
        let data: Vec<(f64, Complex64, f64)> = (1..=5)
            .map(|step| {
                let d = step as f64 * 0.25;
                let s = k * mj * mj * (-c * mj * d).exp();
                (d, Complex64::new(s, 0.0), 1e-12)
            })
            .collect();
        let fit = decay_rate_fit(m, j, &data).unwrap();
        assert_relative_eq!(fit.c_hat, c, epsilon = 1e-9);
        assert_relative_eq!(fit.k_hat, k, epsilon = 1e-9);
        assert_eq!(fit.points_used, 5);
    }

    #[test]
    fn tree_class_counts() {
        let classes = tree_classes(7).unwrap();
        assert_eq!(classes.len(), 11);
        let total: usize = classes.iter().map(|(_, c)| c).sum();
        assert_eq!(total, 7usize.pow(5));
    }
}
