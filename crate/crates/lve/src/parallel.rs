//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the maps run on rayon; without it
//! the same entry points run sequentially. Reductions are chunked by fixed
//! index ranges and combined in index order, so results are bit-identical
//! across thread counts and between the two code paths.

use num_complex::Complex64;

use crate::quad::KahanC;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk size for deterministic reductions. Fixed: it must not depend on
/// the number of worker threads.
pub const CHUNK: usize = 1024;

/// Map `f` over `0..n` and collect in index order.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Deterministic compensated sum of `f(i)` over `0..n`.
pub fn par_sum_complex<F>(n: usize, f: F) -> Complex64
where
    F: Fn(usize) -> Complex64 + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<Complex64> = par_map(chunks, |c| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        let mut acc = KahanC::default();
        for i in lo..hi {
            acc.add(f(i));
        }
        acc.value()
    });
    let mut acc = KahanC::default();
    for p in partials {
        acc.add(p);
    }
    acc.value()
}

/// Like [`par_sum_complex`] but each index yields a pair summed
/// component-wise (value and a companion such as |value| or value^2).
pub fn par_sum_complex2<F>(n: usize, f: F) -> (Complex64, Complex64)
where
    F: Fn(usize) -> (Complex64, Complex64) + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<(Complex64, Complex64)> = par_map(chunks, |c| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        let mut a = KahanC::default();
        let mut b = KahanC::default();
        for i in lo..hi {
            let (x, y) = f(i);
            a.add(x);
            b.add(y);
        }
        (a.value(), b.value())
    });
    let mut a = KahanC::default();
    let mut b = KahanC::default();
    for (x, y) in partials {
        a.add(x);
        b.add(y);
    }
    (a.value(), b.value())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_sum_matches_sequential() {
        let n = 10_000;
        let par = par_sum_complex(n, |i| Complex64::new(1.0 / (i + 1) as f64, 0.0));
        let mut seq = KahanC::default();
        for c in 0..n.div_ceil(CHUNK) {
            let mut acc = KahanC::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                acc.add(Complex64::new(1.0 / (i + 1) as f64, 0.0));
            }
            seq.add(acc.value());
        }
        assert_eq!(par, seq.value());
    }
}
