//! Shared numerics: compensated summation, Gauss rules, adaptive
//! Gauss-Kronrod quadrature, a shifted Kronecker low-discrepancy sequence
//! and a counter-keyed random generator.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{LveError, Result};

/// Neumaier compensated accumulator for f64.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated accumulator for complex values.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanC {
    re: Kahan,
    im: Kahan,
}

impl KahanC {
    pub fn add(&mut self, z: Complex64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }
}

/// Nodes and weights of a quadrature rule.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Golub-Welsch: eigen-decompose the symmetric Jacobi matrix with
/// diagonal `a` and off-diagonal `b`, total weight `mu0`.
fn golub_welsch(a: &[f64], b: &[f64], mu0: f64) -> Rule {
    let n = a.len();
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jac[(i, i)] = a[i];
        if i + 1 < n {
            jac[(i, i + 1)] = b[i];
            jac[(i + 1, i)] = b[i];
        }
    }
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let w = mu0 * eig.eigenvectors[(0, k)].powi(2);
            (eig.eigenvalues[k], w)
        })
        .collect();
    pairs.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss-Legendre rule on [0, 1].
pub fn gauss_legendre_unit(n: usize) -> Rule {
    assert!(n >= 1);
    let a = vec![0.0; n];
    let b: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / ((2.0 * k - 1.0) * (2.0 * k + 1.0)).sqrt()
        })
        .collect();
    let mut rule = golub_welsch(&a, &b, 2.0);
    for x in rule.nodes.iter_mut() {
        *x = 0.5 * (*x + 1.0);
    }
    for w in rule.weights.iter_mut() {
        *w *= 0.5;
    }
    rule
}

/// Probabilists' Gauss-Hermite rule: exact for E[p(X)], X ~ N(0,1).
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1);
    let a = vec![0.0; n];
    let b: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    golub_welsch(&a, &b, 1.0)
}

// Kronrod 15 / Gauss 7 pair on [-1, 1]; positive abscissae.
const KRONROD_X: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const KRONROD_W: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const GAUSS_W: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

fn gk15<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64) -> (Complex64, f64) {
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    let mut k = KahanC::default();
    let mut g = KahanC::default();
    for i in 0..8 {
        let x = KRONROD_X[i];
        let (fp, fm) = if i == 7 {
            let v = f(c);
            (v, Complex64::new(0.0, 0.0))
        } else {
            (f(c + h * x), f(c - h * x))
        };
        let fsum = fp + fm;
        k.add(fsum * KRONROD_W[i]);
        if i % 2 == 1 {
            g.add(fsum * GAUSS_W[i / 2]);
        } else if i == 7 {
            g.add(fp * GAUSS_W[3]);
        }
    }
    let kv = k.value() * h;
    let gv = g.value() * h;
    (kv, (kv - gv).norm())
}

/// Adaptive Gauss-Kronrod integration of a complex-valued integrand
/// over [a, b] to absolute tolerance `tol`.
pub fn integrate_gk<F: Fn(f64) -> Complex64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<(Complex64, f64)> {
    struct Seg {
        a: f64,
        b: f64,
        val: Complex64,
        err: f64,
    }
    let (val, err) = gk15(&f, a, b);
    let mut segs = vec![Seg { a, b, val, err }];
    for _ in 0..2000 {
        let total_err: f64 = segs.iter().map(|s| s.err).sum();
        if total_err <= tol {
            break;
        }
        // split the worst segment
        let (idx, _) = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.partial_cmp(&y.1.err).unwrap())
            .unwrap();
        let s = segs.swap_remove(idx);
        let m = 0.5 * (s.a + s.b);
        if m == s.a || m == s.b {
            return Err(LveError::IntegrationFailure(format!(
                "interval collapsed at {} with residual error {:.3e}",
                m, s.err
            )));
        }
        let (v1, e1) = gk15(&f, s.a, m);
        let (v2, e2) = gk15(&f, m, s.b);
        segs.push(Seg {
            a: s.a,
            b: m,
            val: v1,
            err: e1,
        });
        segs.push(Seg {
            a: m,
            b: s.b,
            val: v2,
            err: e2,
        });
    }
    let total_err: f64 = segs.iter().map(|s| s.err).sum();
    if !total_err.is_finite() {
        return Err(LveError::IntegrationFailure(
            "non-finite error estimate".into(),
        ));
    }
    if total_err > tol * 10.0 {
        return Err(LveError::IntegrationFailure(format!(
            "requested tol {:.3e} unreachable, residual {:.3e}",
            tol, total_err
        )));
    }
    // deterministic ordered reduction
    let mut ordered: Vec<&Seg> = segs.iter().collect();
    ordered.sort_by(|x, y| x.a.partial_cmp(&y.a).unwrap());
    let mut acc = KahanC::default();
    for s in ordered {
        acc.add(s.val);
    }
    Ok((acc.value(), total_err))
}

/// Real-valued convenience wrapper around [`integrate_gk`].
pub fn integrate_gk_real<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<(f64, f64)> {
    let (v, e) = integrate_gk(|x| Complex64::new(f(x), 0.0), a, b, tol)?;
    Ok((v.re, e))
}

/// Fixed-order Gauss-Legendre integral on [a, b]; an independent second
/// route used by oracle tests.
pub fn integrate_gl_fixed<F: Fn(f64) -> Complex64>(f: F, a: f64, b: f64, order: usize) -> Complex64 {
    let rule = gauss_legendre_unit(order);
    let mut acc = KahanC::default();
    for (x, w) in rule.nodes.iter().zip(rule.weights.iter()) {
        acc.add(f(a + (b - a) * x) * (w * (b - a)));
    }
    acc.value()
}

/// Standard normal quantile function.
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let n = Normal::new(0.0, 1.0).unwrap();
    n.inverse_cdf(p)
}

/// Shifted Kronecker sequence: the d-dimensional generalization of the
/// golden-ratio sequence, x_i = frac(shift + i * alpha).
#[derive(Debug, Clone)]
pub struct KroneckerSeq {
    alpha: Vec<f64>,
    shift: Vec<f64>,
}

impl KroneckerSeq {
    /// `shift` supplies the Cranley-Patterson randomization, one value per
    /// dimension in [0,1).
    pub fn new(dim: usize, shift: Vec<f64>) -> Self {
        assert_eq!(shift.len(), dim);
        // gamma solves x^(d+1) = x + 1
        let d = dim as f64;
        let mut g = 1.5_f64;
        for _ in 0..64 {
            g = (1.0 + g).powf(1.0 / (d + 1.0));
        }
        let alpha: Vec<f64> = (1..=dim).map(|j| (1.0 / g.powi(j as i32)).fract()).collect();
        Self { alpha, shift }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// Fill `out` with point `i` of the sequence (all coordinates in (0,1)).
    pub fn point(&self, i: usize, out: &mut [f64]) {
        let i = (i + 1) as f64;
        for (k, o) in out.iter_mut().enumerate() {
            let mut u = (self.shift[k] + i * self.alpha[k]).fract();
            // keep strictly inside the open interval for quantile maps
            u = u.clamp(1e-15, 1.0 - 1e-15);
            *o = u;
        }
    }
}

/// Deterministic counter-keyed generator: independent stream per
/// (seed, index) pair.
pub fn counter_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform shifts in [0,1)^dim derived from (seed, replicate).
pub fn qmc_shift(seed: u64, replicate: u64, dim: usize) -> Vec<f64> {
    use rand::Rng;
    let mut rng = counter_rng(seed ^ 0x9e37_79b9_7f4a_7c15, replicate);
    (0..dim).map(|_| rng.gen::<f64>()).collect()
}

/// Least-squares solve of an overdetermined system via normal equations.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let ata = a.transpose() * a;
    let atb = a.transpose() * b;
    ata.lu().solve(&atb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = gauss_legendre_unit(8);
        // integral of x^5 over [0,1] = 1/6
        let s: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * x.powi(5))
            .sum();
        assert_relative_eq!(s, 1.0 / 6.0, epsilon = 1e-13);
    }

    #[test]
    fn gauss_hermite_moments() {
        let rule = gauss_hermite(10);
        let m2: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * x * x)
            .sum();
        let m4: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * x.powi(4))
            .sum();
        assert_relative_eq!(m2, 1.0, epsilon = 1e-12);
        assert_relative_eq!(m4, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn gk_adaptive_exponential() {
        let (v, e) = integrate_gk_real(|x| (-x).exp(), 0.0, 5.0, 1e-12).unwrap();
        assert!(e < 1e-10);
        assert_relative_eq!(v, 1.0 - (-5.0_f64).exp(), epsilon = 1e-11);
    }

    #[test]
    fn quantile_symmetry() {
        assert_relative_eq!(normal_quantile(0.5), 0.0, epsilon = 1e-12);
        assert_relative_eq!(
            normal_quantile(0.975),
            -normal_quantile(0.025),
            epsilon = 1e-10
        );
    }

    #[test]
    fn kronecker_points_in_unit_cube() {
        let seq = KroneckerSeq::new(5, vec![0.1; 5]);
        let mut p = [0.0; 5];
        for i in 0..1000 {
            seq.point(i, &mut p);
            assert!(p.iter().all(|&u| u > 0.0 && u < 1.0));
        }
    }

    #[test]
    fn counter_rng_reproducible() {
        use rand::Rng;
        let a: f64 = counter_rng(7, 3).gen();
        let b: f64 = counter_rng(7, 3).gen();
        let c: f64 = counter_rng(7, 4).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
