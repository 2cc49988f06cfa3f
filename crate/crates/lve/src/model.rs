//! Model specifications, the sliced propagator and its lattice
//! discretization.
//!
//! The propagator in a renormalization-group slice is
//! `C_j(x,y) = int_{M^{-2j}}^{M^{-2j+2}} exp(-alpha m^2 - |x-y|^2/(4 alpha)) alpha^{-2} d alpha`.
//! Desk-scale lattices sample this kernel at periodic lattice points. The
//! constants K and c appearing in kernel bounds are always measured, never
//! hardcoded.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{LveError, Result};
use crate::quad::{integrate_gk_real, Kahan};

/// Default cap on the total lattice site count.
pub const SITE_CAP: usize = 64;

/// Which functional integral the model describes.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    /// Single Gaussian variable, unit covariance.
    ZeroDim,
    /// Finite periodic lattice carrying the slice kernel.
    LatticeSlice(SliceSpec),
}

/// Full model specification.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Complex coupling; all series evaluators require Re(lambda) > 0.
    pub lambda: Complex64,
    /// Number of colors; each loop vertex carries a global factor N.
    pub colors: u32,
}

impl ModelSpec {
    pub fn zero_dim(lambda: Complex64) -> Self {
        Self {
            kind: ModelKind::ZeroDim,
            lambda,
            colors: 1,
        }
    }

    pub fn lattice(slice: SliceSpec, lambda: Complex64) -> Self {
        Self {
            kind: ModelKind::LatticeSlice(slice),
            lambda,
            colors: 1,
        }
    }

    pub fn with_colors(mut self, colors: u32) -> Self {
        self.colors = colors;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda.re <= 0.0 && self.lambda.norm() > 0.0 {
            return Err(LveError::InvalidModel(format!(
                "Re(lambda) must be > 0 (or lambda = 0), got {}",
                self.lambda
            )));
        }
        if self.colors < 1 {
            return Err(LveError::InvalidModel("colors must be >= 1".into()));
        }
        if let ModelKind::LatticeSlice(slice) = &self.kind {
            slice.validate()?;
        }
        Ok(())
    }

    pub fn slice(&self) -> Option<&SliceSpec> {
        match &self.kind {
            ModelKind::LatticeSlice(s) => Some(s),
            ModelKind::ZeroDim => None,
        }
    }

    /// Intermediate-field constant g with g^2 = 8 lambda (principal root).
    /// Certified end to end by the order-lambda acceptance ledger.
    pub fn coupling_g(&self) -> Complex64 {
        (8.0 * self.lambda).sqrt()
    }
}

/// Slice parameters for a desk-scale periodic lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSpec {
    /// Slice base M > 1.
    pub m_base: f64,
    /// Slice index j >= 0.
    pub j: u32,
    /// Mass m >= 0.
    pub mass: f64,
    /// Spatial dimension of the embedding space, 1..=4.
    pub dim: usize,
    /// Per-axis site counts (length == dim). A chain embedded in d
    /// dimensions has sites = [L, 1, ..., 1].
    pub sites: Vec<usize>,
    /// Lattice spacing in units of M^{-j}.
    pub spacing: f64,
}

impl SliceSpec {
    /// Convenience: a periodic chain of `len` sites embedded in `dim`
    /// dimensions.
    pub fn chain(m_base: f64, j: u32, mass: f64, dim: usize, len: usize, spacing: f64) -> Self {
        let mut sites = vec![1usize; dim];
        sites[0] = len;
        Self {
            m_base,
            j,
            mass,
            dim,
            sites,
            spacing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m_base > 1.0) {
            return Err(LveError::InvalidModel(format!(
                "slice base M must be > 1, got {}",
                self.m_base
            )));
        }
        if self.mass < 0.0 {
            return Err(LveError::InvalidModel("mass must be >= 0".into()));
        }
        if !(1..=4).contains(&self.dim) {
            return Err(LveError::InvalidModel(format!(
                "dim must be in 1..=4, got {}",
                self.dim
            )));
        }
        if self.sites.len() != self.dim || self.sites.iter().any(|&s| s == 0) {
            return Err(LveError::InvalidModel(format!(
                "sites {:?} must list {} positive per-axis counts",
                self.sites, self.dim
            )));
        }
        if !(self.spacing > 0.0) {
            return Err(LveError::InvalidModel("spacing must be > 0".into()));
        }
        Ok(())
    }

    pub fn total_sites(&self) -> usize {
        self.sites.iter().product()
    }

    /// Physical lattice spacing: `spacing * M^{-j}`.
    pub fn physical_spacing(&self) -> f64 {
        self.spacing * self.m_base.powi(-(self.j as i32))
    }

    /// Cell measure `h^dim`; the weight of one lattice site in spatial
    /// integrals.
    pub fn cell_measure(&self) -> f64 {
        self.physical_spacing().powi(self.dim as i32)
    }

    /// Lower and upper limits of the alpha integration.
    pub fn alpha_range(&self) -> (f64, f64) {
        let m2j = self.m_base.powi(-2 * self.j as i32);
        (m2j, m2j * self.m_base * self.m_base)
    }

    /// Coordinates (in physical units) of lattice site `idx` (row-major).
    pub fn site_coords(&self, idx: usize) -> Vec<f64> {
        let h = self.physical_spacing();
        let mut rem = idx;
        let mut coords = vec![0.0; self.dim];
        for axis in (0..self.dim).rev() {
            coords[axis] = (rem % self.sites[axis]) as f64 * h;
            rem /= self.sites[axis];
        }
        coords
    }

    /// Per-axis minimum-image displacement (in physical units) between two
    /// sites.
    pub fn periodic_displacement(&self, a: usize, b: usize) -> Vec<f64> {
        let h = self.physical_spacing();
        let mut rem_a = a;
        let mut rem_b = b;
        let mut disp = vec![0.0; self.dim];
        for axis in (0..self.dim).rev() {
            let na = rem_a % self.sites[axis];
            let nb = rem_b % self.sites[axis];
            rem_a /= self.sites[axis];
            rem_b /= self.sites[axis];
            let l = self.sites[axis];
            let diff = na.abs_diff(nb);
            let wrapped = diff.min(l - diff);
            disp[axis] = wrapped as f64 * h;
        }
        disp
    }

    /// Squared periodic (minimum-image) distance between two sites.
    pub fn periodic_dist2(&self, a: usize, b: usize) -> f64 {
        self.periodic_displacement(a, b).iter().map(|d| d * d).sum()
    }

    /// True if the lattice extent is at least `lengths` correlation lengths
    /// M^{-j} along its longest axis.
    pub fn extent_adequate(&self, lengths: f64) -> bool {
        let max_sites = *self.sites.iter().max().unwrap() as f64;
        max_sites * self.spacing >= lengths
    }
}

/// Evaluate the sliced propagator between squared separation r2, by
/// adaptive quadrature over the alpha range.
pub fn eval_propagator_r2(slice: &SliceSpec, r2: f64) -> Result<f64> {
    slice.validate()?;
    if !r2.is_finite() || r2 < 0.0 {
        return Err(LveError::NonFinite("squared separation"));
    }
    let (lo, hi) = slice.alpha_range();
    let m2 = slice.mass * slice.mass;
    let f = |alpha: f64| (-alpha * m2 - r2 / (4.0 * alpha)).exp() / (alpha * alpha);
    // scale the absolute tolerance to the coincident-point magnitude for a
    // ~1e-10 relative target
    let scale = ((-lo * m2).exp() / lo).max(f64::MIN_POSITIVE);
    let (val, _err) = integrate_gk_real(f, lo, hi, 1e-12 * scale * (hi - lo))?;
    Ok(val)
}

/// Sliced propagator between two points given by coordinates.
pub fn eval_propagator(slice: &SliceSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(LveError::InvalidArgument(
            "point dimension mismatch".into(),
        ));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(LveError::NonFinite("point coordinate"));
    }
    let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    eval_propagator_r2(slice, r2)
}

/// Torus-periodized sliced propagator between two lattice sites: the
/// kernel summed over periodic images along each finite axis. Image
/// summation keeps the kernel positive semidefinite on the torus, which
/// min-image truncation does not.
pub fn eval_propagator_periodic(slice: &SliceSpec, a: usize, b: usize) -> Result<f64> {
    slice.validate()?;
    let disp = slice.periodic_displacement(a, b);
    let (lo, hi) = slice.alpha_range();
    let m2 = slice.mass * slice.mass;
    let h = slice.physical_spacing();
    // image window: displacements with r^2/(4 alpha_max) > 46 contribute
    // below 1e-20 relative
    let windows: Vec<(f64, i32)> = disp
        .iter()
        .enumerate()
        .map(|(axis, &d)| {
            let l = slice.sites[axis] as f64 * h;
            let reach = (46.0 * 4.0 * hi).sqrt();
            let w = if slice.sites[axis] == 1 {
                0
            } else {
                ((reach + d) / l).ceil() as i32
            };
            let _ = d;
            (l, w)
        })
        .collect();
    let f = |alpha: f64| {
        let mut prod = 1.0;
        for (axis, &d) in disp.iter().enumerate() {
            let (l, w) = windows[axis];
            let mut s = 0.0;
            for n in -w..=w {
                let r = d + n as f64 * l;
                s += (-r * r / (4.0 * alpha)).exp();
            }
            prod *= s;
        }
        (-alpha * m2).exp() * prod / (alpha * alpha)
    };
    let scale = ((-lo * m2).exp() / lo).max(f64::MIN_POSITIVE);
    let (val, _err) = integrate_gk_real(f, lo, hi, 1e-12 * scale * (hi - lo))?;
    Ok(val)
}

/// Result of building a lattice covariance: the PSD-clipped matrix plus a
/// report of what was clipped.
#[derive(Debug, Clone)]
pub struct LatticeCovariance {
    pub matrix: DMatrix<f64>,
    /// Most negative raw eigenvalue encountered (0 if none).
    pub min_eigenvalue: f64,
    /// Number of eigenvalues clipped to zero.
    pub clipped: usize,
}

/// Covariance matrix over lattice points with periodic distances. Errors
/// if an eigenvalue is more negative than -1e-12 * ||C||; smaller negative
/// eigenvalues are clipped to zero and reported.
pub fn build_lattice_covariance(slice: &SliceSpec) -> Result<LatticeCovariance> {
    build_lattice_covariance_capped(slice, SITE_CAP)
}

pub fn build_lattice_covariance_capped(slice: &SliceSpec, cap: usize) -> Result<LatticeCovariance> {
    slice.validate()?;
    let n = slice.total_sites();
    if n > cap {
        return Err(LveError::CapExceeded {
            what: "lattice sites",
            got: n,
            cap,
        });
    }
    let mut c = DMatrix::<f64>::zeros(n, n);
    // entries depend only on the wrapped per-axis displacement class
    let mut cache: std::collections::HashMap<Vec<u64>, f64> = std::collections::HashMap::new();
    for a in 0..n {
        for b in a..n {
            let key: Vec<u64> = slice
                .periodic_displacement(a, b)
                .iter()
                .map(|d| d.to_bits())
                .collect();
            let v = match cache.get(&key) {
                Some(&v) => v,
                None => {
                    let v = eval_propagator_periodic(slice, a, b)?;
                    cache.insert(key, v);
                    v
                }
            };
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
    }
    let eig = c.clone().symmetric_eigen();
    let norm = eig.eigenvalues.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let tol = -1e-12 * norm;
    let min_eig = eig.eigenvalues.iter().fold(0.0f64, |m, &x| m.min(x));
    if min_eig < tol {
        return Err(LveError::PsdFailure(format!(
            "lattice covariance eigenvalue {min_eig:.3e} below tolerance {tol:.3e}; \
             discretization too coarse"
        )));
    }
    let clipped = eig.eigenvalues.iter().filter(|&&x| x < 0.0).count();
    let matrix = if clipped > 0 {
        let mut vals = eig.eigenvalues.clone();
        for v in vals.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
    } else {
        c
    };
    Ok(LatticeCovariance {
        matrix,
        min_eigenvalue: min_eig.min(0.0),
        clipped,
    })
}

/// Operator norm of the covariance acting on the lattice: largest
/// eigenvalue of (cell measure) * C, by power iteration to relative
/// tolerance 1e-8.
pub fn operator_norm(slice: &SliceSpec) -> Result<f64> {
    let cov = build_lattice_covariance(slice)?;
    let op = cov.matrix * slice.cell_measure();
    power_iteration(&op, 1e-8, 100_000)
}

/// Power iteration for the dominant eigenvalue of a symmetric PSD matrix.
pub fn power_iteration(a: &DMatrix<f64>, rel_tol: f64, max_iter: usize) -> Result<f64> {
    let n = a.nrows();
    if n == 1 {
        return Ok(a[(0, 0)]);
    }
    // deterministic start vector with all modes populated
    let mut v = nalgebra::DVector::<f64>::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt().fract());
    v /= v.norm();
    let mut prev = 0.0f64;
    for _ in 0..max_iter {
        let av = a * &v;
        let norm = av.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let est = v.dot(&av);
        v = av / norm;
        if (est - prev).abs() <= rel_tol * est.abs().max(f64::MIN_POSITIVE) {
            return Ok(est);
        }
        prev = est;
    }
    Err(LveError::NonConvergence(format!(
        "power iteration stalled at {prev:.6e}"
    )))
}

/// Report of a propagator bound certification sweep.
#[derive(Debug, Clone)]
pub struct BoundReport {
    /// sup over sampled pairs of C(x,y) * exp(+c M^j |x-y|) * M^{-2j};
    /// this is the measured constant K certifying the bound at c = c_trial.
    pub sup_ratio: f64,
    /// Separation |x-y| at which the sup is attained.
    pub argmax_separation: f64,
    /// False when the sup hit the overflow guard (c_trial too large).
    pub certified: bool,
    /// Separation at which the overflow guard tripped, when not certified.
    pub failure_separation: Option<f64>,
}

const OVERFLOW_GUARD: f64 = 1e12;

/// Measure the constant K in the kernel bound
/// C_j(x,y) <= K M^{2j} exp(-c M^j |x-y|) at a trial decay rate.
pub fn verify_propagator_bound(slice: &SliceSpec, c_trial: f64) -> Result<BoundReport> {
    if !(c_trial >= 0.0) {
        return Err(LveError::InvalidArgument("c_trial must be >= 0".into()));
    }
    slice.validate()?;
    let n = slice.total_sites();
    if n > SITE_CAP {
        return Err(LveError::CapExceeded {
            what: "lattice sites",
            got: n,
            cap: SITE_CAP,
        });
    }
    let mj = slice.m_base.powi(slice.j as i32);
    let m2j_inv = slice.m_base.powi(-2 * slice.j as i32);
    let mut sup = f64::NEG_INFINITY;
    let mut arg = 0.0;
    // sample every distinct periodic separation on the lattice
    let mut seps: Vec<f64> = (0..n).map(|b| slice.periodic_dist2(0, b).sqrt()).collect();
    seps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    seps.dedup();
    for r in seps {
        let c_val = eval_propagator_r2(slice, r * r)?;
        let exponent = c_trial * mj * r;
        if exponent > OVERFLOW_GUARD.ln() {
            return Ok(BoundReport {
                sup_ratio: f64::INFINITY,
                argmax_separation: arg,
                certified: false,
                failure_separation: Some(r),
            });
        }
        let ratio = c_val * exponent.exp() * m2j_inv;
        if ratio > OVERFLOW_GUARD {
            return Ok(BoundReport {
                sup_ratio: ratio,
                argmax_separation: arg,
                certified: false,
                failure_separation: Some(r),
            });
        }
        if ratio > sup {
            sup = ratio;
            arg = r;
        }
    }
    Ok(BoundReport {
        sup_ratio: sup,
        argmax_separation: arg,
        certified: true,
        failure_separation: None,
    })
}

/// Closed form of the coincident-point propagator at m = 0:
/// M^{2j} (1 - M^{-2}).
pub fn coincident_value_massless(m_base: f64, j: u32) -> f64 {
    m_base.powi(2 * j as i32) * (1.0 - m_base.powi(-2))
}

/// Diagonal of the free covariance summed with the interaction's site
/// weights; useful for scale sanity checks.
pub fn diagonal_sum(slice: &SliceSpec) -> Result<f64> {
    let cov = build_lattice_covariance(slice)?;
    let mut acc = Kahan::default();
    for i in 0..cov.matrix.nrows() {
        acc.add(cov.matrix[(i, i)]);
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::quad::integrate_gl_fixed;

    fn slice_0d_like(j: u32, mass: f64) -> SliceSpec {
        SliceSpec::chain(2.0, j, mass, 1, 1, 1.0)
    }

    #[test]
    fn coincident_closed_form() {
        // M=2, j=0, m=0: integral of alpha^-2 over [1,4] = 0.75
        let s = slice_0d_like(0, 0.0);
        let v = eval_propagator_r2(&s, 0.0).unwrap();
        assert_relative_eq!(v, 0.75, epsilon = 1e-12);
        // M=2, j=1, m=0: 3.0
        let s = slice_0d_like(1, 0.0);
        let v = eval_propagator_r2(&s, 0.0).unwrap();
        assert_relative_eq!(v, 3.0, epsilon = 1e-12);
        assert_relative_eq!(v, coincident_value_massless(2.0, 1), epsilon = 1e-12);
    }

    #[test]
    fn quadrature_against_second_rule() {
        // M=2, j=2, m=0.1, |x-y| = 0.5, against a fixed-order rule
        let s = slice_0d_like(2, 0.1);
        let v = eval_propagator_r2(&s, 0.25).unwrap();
        let (lo, hi) = s.alpha_range();
        let oracle = integrate_gl_fixed(
            |a| Complex64::new((-a * 0.01 - 0.25 / (4.0 * a)).exp() / (a * a), 0.0),
            lo,
            hi,
            40,
        )
        .re;
        assert_relative_eq!(v, oracle, max_relative = 1e-9);
    }

    #[test]
    fn propagator_symmetric_and_positive() {
        let s = SliceSpec::chain(2.0, 1, 0.2, 2, 3, 0.7);
        let x = [0.3, 0.1];
        let y = [0.9, 0.6];
        let a = eval_propagator(&s, &x, &y).unwrap();
        let b = eval_propagator(&s, &y, &x).unwrap();
        assert_eq!(a, b);
        assert!(a > 0.0);
    }

    #[test]
    fn scaling_collapse_massless() {
        // M^{-2j} C_j as a function of M^j |x-y| is j-independent at m=0
        let u = 1.3_f64;
        let mut vals = Vec::new();
        for j in 0..4u32 {
            let s = slice_0d_like(j, 0.0);
            let r = u * 2.0f64.powi(-(j as i32));
            let v = eval_propagator_r2(&s, r * r).unwrap() * 4.0f64.powi(-(j as i32));
            vals.push(v);
        }
        for v in &vals[1..] {
            assert_relative_eq!(*v, vals[0], max_relative = 1e-10);
        }
    }

    #[test]
    fn covariance_single_site() {
        let s = slice_0d_like(0, 0.0);
        let cov = build_lattice_covariance(&s).unwrap();
        assert_eq!(cov.matrix.nrows(), 1);
        assert_relative_eq!(cov.matrix[(0, 0)], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn covariance_far_sites_decouple() {
        // two sites separated by many correlation lengths M^{-j}
        let s = SliceSpec::chain(2.0, 0, 0.0, 1, 2, 20.0);
        let cov = build_lattice_covariance(&s).unwrap();
        assert!(cov.matrix[(0, 1)].abs() / cov.matrix[(0, 0)] < 1e-6);
    }

    #[test]
    fn covariance_cap() {
        let s = SliceSpec::chain(2.0, 0, 0.0, 1, 65, 1.0);
        assert!(matches!(
            build_lattice_covariance(&s),
            Err(LveError::CapExceeded { .. })
        ));
    }

    #[test]
    fn covariance_psd() {
        let s = SliceSpec::chain(2.0, 1, 0.0, 1, 12, 0.5);
        let cov = build_lattice_covariance(&s).unwrap();
        let eig = cov.matrix.symmetric_eigen();
        let norm = eig.eigenvalues.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        assert!(eig.eigenvalues.iter().all(|&x| x >= -1e-12 * norm));
    }

    #[test]
    fn operator_norm_single_site() {
        let s = slice_0d_like(0, 0.0);
        let n = operator_norm(&s).unwrap();
        // 1x1: C(x,x) times the cell measure (spacing 1, j 0 -> measure 1)
        assert_relative_eq!(n, 0.75, epsilon = 1e-10);
    }

    #[test]
    fn operator_norm_resolution_stability() {
        // same physical extent, doubled resolution: norm moves < 5%
        let coarse = SliceSpec::chain(2.0, 0, 0.0, 1, 8, 1.0);
        let fine = SliceSpec::chain(2.0, 0, 0.0, 1, 16, 0.5);
        let a = operator_norm(&coarse).unwrap();
        let b = operator_norm(&fine).unwrap();
        assert!((a - b).abs() / a < 0.05, "a={a} b={b}");
    }

    #[test]
    fn bound_report_c_zero() {
        let s = SliceSpec::chain(2.0, 1, 0.0, 1, 8, 1.0);
        let rep = verify_propagator_bound(&s, 0.0).unwrap();
        assert!(rep.certified);
        // at c=0 the sup is the coincident point: M^{-2j} max C = 1 - M^{-2}
        assert_relative_eq!(rep.sup_ratio, 0.75, epsilon = 1e-10);
        assert_eq!(rep.argmax_separation, 0.0);
    }

    #[test]
    fn bound_report_overflow() {
        let s = SliceSpec::chain(2.0, 0, 0.0, 1, 16, 1.0);
        let rep = verify_propagator_bound(&s, 1e3).unwrap();
        assert!(!rep.certified);
        assert!(rep.failure_separation.is_some());
    }

    #[test]
    fn coupling_map_sector() {
        let m = ModelSpec::zero_dim(Complex64::new(0.03, 0.03));
        let g = m.coupling_g();
        assert_relative_eq!((g * g).re, 8.0 * 0.03, epsilon = 1e-12);
        assert!(g.arg().abs() <= std::f64::consts::FRAC_PI_4 + 1e-12);
    }

    #[test]
    fn rejects_bad_models() {
        assert!(ModelSpec::zero_dim(Complex64::new(-0.01, 0.0))
            .validate()
            .is_err());
        let mut s = SliceSpec::chain(2.0, 0, 0.0, 1, 4, 1.0);
        s.m_base = 0.5;
        assert!(s.validate().is_err());
    }
}
