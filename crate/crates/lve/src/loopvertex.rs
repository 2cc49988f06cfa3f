//! Loop vertices and resolvents.
//!
//! After the intermediate-field transform the partition function is a
//! Gaussian integral of exp(V) with
//!     V(sigma) = -(N/2) Tr log(1 + i g D sigma D),
//! where D is the square root of the (measure-weighted) covariance
//! operator and sigma acts by multiplication. Derivatives of V with
//! respect to sigma at chosen sites reduce to cycles of resolvent
//! factors; this module evaluates those, together with the norm and
//! sector bounds the expansion relies on.

use itertools::Itertools;
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{LveError, Result};
use crate::model::{build_lattice_covariance, ModelKind, ModelSpec, SliceSpec};

/// Lattice operator data shared by all sigma evaluations: D = sqrt(mu C)
/// as a matrix, the bare covariance kernel, and the cell measure mu.
#[derive(Debug, Clone)]
pub struct LatticeOps {
    pub slice: SliceSpec,
    /// Bare covariance kernel C(x,y).
    pub kernel: DMatrix<f64>,
    /// Operator square root of mu * C.
    pub o_d: DMatrix<f64>,
    pub mu: f64,
}

impl LatticeOps {
    pub fn new(slice: &SliceSpec) -> Result<Self> {
        let cov = build_lattice_covariance(slice)?;
        let mu = slice.cell_measure();
        let eig = (cov.matrix.clone() * mu).symmetric_eigen();
        let mut vals = eig.eigenvalues.clone();
        for v in vals.iter_mut() {
            *v = v.max(0.0).sqrt();
        }
        let o_d = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        Ok(Self {
            slice: slice.clone(),
            kernel: cov.matrix,
            o_d,
            mu,
        })
    }

    pub fn n(&self) -> usize {
        self.o_d.nrows()
    }
}

/// Model data in the form the expansion consumes.
#[derive(Debug, Clone)]
pub struct Theory {
    g: Complex64,
    colors: f64,
    lattice: Option<LatticeOps>,
}

impl Theory {
    pub fn new(model: &ModelSpec) -> Result<Self> {
        model.validate()?;
        let lattice = match &model.kind {
            ModelKind::ZeroDim => None,
            ModelKind::LatticeSlice(slice) => Some(LatticeOps::new(slice)?),
        };
        Ok(Self {
            g: model.coupling_g(),
            colors: model.colors as f64,
            lattice,
        })
    }

    pub fn g(&self) -> Complex64 {
        self.g
    }

    pub fn colors(&self) -> f64 {
        self.colors
    }

    /// Number of sigma components per replica field.
    pub fn sites(&self) -> usize {
        self.lattice.as_ref().map_or(1, |l| l.n())
    }

    /// Cell measure (1 in the scalar model).
    pub fn cell_measure(&self) -> f64 {
        self.lattice.as_ref().map_or(1.0, |l| l.mu)
    }

    pub fn lattice(&self) -> Option<&LatticeOps> {
        self.lattice.as_ref()
    }

    /// Evaluate the loop vertex and its resolvent for one sigma
    /// configuration (one replica field).
    pub fn eval_sigma(&self, sigma: &[f64]) -> SigmaData {
        match &self.lattice {
            None => {
                let denom = Complex64::new(1.0, 0.0) + Complex64::i() * self.g * sigma[0];
                SigmaData {
                    v_value: -0.5 * self.colors * denom.ln(),
                    resolvent: Resolvent::Scalar(denom.inv()),
                }
            }
            Some(ops) => {
                let n = ops.n();
                let mut b = DMatrix::<f64>::zeros(n, n);
                for x in 0..n {
                    for y in 0..n {
                        let mut acc = 0.0;
                        for z in 0..n {
                            acc += ops.o_d[(x, z)] * sigma[z] * ops.o_d[(z, y)];
                        }
                        b[(x, y)] = acc;
                    }
                }
                let eig = b.symmetric_eigen();
                let mut v = Complex64::new(0.0, 0.0);
                let mut inv = Vec::with_capacity(n);
                for &bi in eig.eigenvalues.iter() {
                    let denom = Complex64::new(1.0, 0.0) + Complex64::i() * self.g * bi;
                    v -= 0.5 * self.colors * denom.ln();
                    inv.push(denom.inv());
                }
                // R = D U diag(1/(1+igb)) U^T D
                let p = &ops.o_d * &eig.eigenvectors;
                let mut r = DMatrix::<Complex64>::zeros(n, n);
                for x in 0..n {
                    for y in x..n {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for (i, c) in inv.iter().enumerate() {
                            acc += p[(x, i)] * p[(y, i)] * c;
                        }
                        r[(x, y)] = acc;
                        r[(y, x)] = acc;
                    }
                }
                SigmaData {
                    v_value: v,
                    resolvent: Resolvent::Matrix(r),
                }
            }
        }
    }
}

/// One loop vertex evaluated at a sigma configuration.
#[derive(Debug, Clone)]
pub struct SigmaData {
    pub v_value: Complex64,
    pub resolvent: Resolvent,
}

/// R = D (1 + i g D sigma D)^{-1} D; scalar in the zero-dimensional model.
#[derive(Debug, Clone)]
pub enum Resolvent {
    Scalar(Complex64),
    Matrix(DMatrix<Complex64>),
}

impl Resolvent {
    pub fn entry(&self, x: usize, y: usize) -> Complex64 {
        match self {
            Resolvent::Scalar(r) => {
                debug_assert_eq!((x, y), (0, 0));
                *r
            }
            Resolvent::Matrix(m) => m[(x, y)],
        }
    }
}

/// Derivative of the loop vertex with respect to sigma at the given sites:
///     d^k V = (N/2) (-ig)^k sum over cycles of R factors,
/// with the cycle sum running over the (k-1)! orderings that fix the first
/// site. In the scalar model this is (N/2)(k-1)!(-ig)^k R^k.
pub fn vertex_derivative_chain(theory: &Theory, data: &SigmaData, points: &[usize]) -> Complex64 {
    let k = points.len();
    assert!(k >= 1);
    let pref = 0.5 * theory.colors * (-Complex64::i() * theory.g).powu(k as u32);
    match &data.resolvent {
        Resolvent::Scalar(r) => {
            let fact: f64 = (1..k).map(|m| m as f64).product();
            pref * fact * r.powu(k as u32)
        }
        Resolvent::Matrix(m) => {
            let first = points[0];
            let mut sum = Complex64::new(0.0, 0.0);
            if k == 1 {
                return pref * m[(first, first)];
            }
            for perm in points[1..].iter().permutations(k - 1) {
                let mut prod = m[(first, *perm[0])];
                for pair in perm.windows(2) {
                    prod *= m[(*pair[0], *pair[1])];
                }
                prod *= m[(*perm[k - 2], first)];
                sum += prod;
            }
            pref * sum
        }
    }
}

/// Derivative of the resolvent entry R(x, y) with respect to sigma at the
/// interior sites: (-ig)^k sum over orderings of the chain
/// R(x, t1) R(t1, t2) ... R(tk, y). With no interior sites this is R(x, y).
pub fn external_chain(
    theory: &Theory,
    data: &SigmaData,
    x: usize,
    y: usize,
    interior: &[usize],
) -> Complex64 {
    let k = interior.len();
    let pref = (-Complex64::i() * theory.g).powu(k as u32);
    match &data.resolvent {
        Resolvent::Scalar(r) => {
            let fact: f64 = (1..=k).map(|m| m as f64).product();
            pref * fact * r.powu(k as u32 + 1)
        }
        Resolvent::Matrix(m) => {
            if k == 0 {
                return m[(x, y)];
            }
            let mut sum = Complex64::new(0.0, 0.0);
            for perm in interior.iter().permutations(k) {
                let mut prod = m[(x, *perm[0])];
                for pair in perm.windows(2) {
                    prod *= m[(*pair[0], *pair[1])];
                }
                prod *= m[(*perm[k - 1], y)];
                sum += prod;
            }
            pref * sum
        }
    }
}

/// Operator norm of (1 + i e^{i theta} H)^{-1} for a real symmetric H with
/// the given eigenvalues, with the coupling phase theta applied.
pub fn sector_norm(eigenvalues: &[f64], theta: f64) -> f64 {
    let phase = Complex64::new(0.0, 1.0) * Complex64::from_polar(1.0, theta);
    eigenvalues
        .iter()
        .map(|&h| (Complex64::new(1.0, 0.0) + phase * h).norm().recip())
        .fold(0.0, f64::max)
}

/// Measured sup of M^{(2k-4)j} |[C(sigma)^k](x, x)| over diagonal sites and
/// sigma samples, for each power k. Uniformity of these in j certifies the
/// per-slice loop bound.
#[derive(Debug, Clone)]
pub struct LoopBoundReport {
    /// sup_x,sigma of the scaled diagonal kernel, indexed by k-1.
    pub scaled_sup: Vec<f64>,
    /// Implied per-factor constants scaled_sup[k-1]^(1/k).
    pub k_hat: Vec<f64>,
}

/// Evaluate the scaled resolvent-power diagonal over the provided sigma
/// configurations (sigma = 0 is always included) for k = 1..=k_max.
pub fn resolvent_loop_bound_check(
    slice: &SliceSpec,
    k_max: usize,
    sigmas: &[Vec<f64>],
) -> Result<LoopBoundReport> {
    if k_max == 0 {
        return Err(LveError::InvalidArgument("k_max must be positive".into()));
    }
    let ops = LatticeOps::new(slice)?;
    let n = ops.n();
    let unit = ModelSpec::lattice(slice.clone(), Complex64::new(0.125, 0.0));
    // lambda = 1/8 makes g = 1: the bound concerns D sigma D itself
    let theory = Theory {
        g: unit.coupling_g(),
        colors: 1.0,
        lattice: Some(ops),
    };
    debug_assert!((theory.g.re - 1.0).abs() < 1e-12);
    let mut all: Vec<Vec<f64>> = vec![vec![0.0; n]];
    all.extend(sigmas.iter().cloned());
    let mu = theory.cell_measure();
    let m2j = slice.m_base.powi(2 * slice.j as i32);
    let m4j = slice.m_base.powi(4 * slice.j as i32);
    let mut scaled_sup = vec![0.0f64; k_max];
    for sigma in &all {
        if sigma.len() != n {
            return Err(LveError::InvalidArgument(format!(
                "sigma sample has {} entries, lattice has {n}",
                sigma.len()
            )));
        }
        let data = theory.eval_sigma(sigma);
        let r = match &data.resolvent {
            Resolvent::Matrix(m) => m.clone(),
            Resolvent::Scalar(_) => unreachable!(),
        };
        let mut power = r.clone();
        for k in 1..=k_max {
            let scale = m2j.powi(k as i32) / m4j / mu;
            for x in 0..n {
                let v = power[(x, x)].norm() * scale;
                if v > scaled_sup[k - 1] {
                    scaled_sup[k - 1] = v;
                }
            }
            if k < k_max {
                power = &power * &r;
            }
        }
    }
    let k_hat = scaled_sup
        .iter()
        .enumerate()
        .map(|(i, &s)| s.powf(1.0 / (i + 1) as f64))
        .collect();
    Ok(LoopBoundReport { scaled_sup, k_hat })
}
