//! Unnormalized DCT-II: `X_k = sum_n x_n cos(pi/N (n + 1/2) k)`.
//!
//! The fast path evaluates the sum through a length-2N FFT of the even
//! extension of the input; [`dct_ii_naive`] is the direct O(N^2) sum and
//! ships as the oracle the fast path is tested against.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<usize, Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn fft_forward(buf: &mut [Complex64]) {
    let n = buf.len();
    PLANS.with(|cell| {
        let (planner, cache) = &mut *cell.borrow_mut();
        let plan = cache
            .entry(n)
            .or_insert_with(|| planner.plan_fft_forward(n))
            .clone();
        plan.process(buf);
    });
}

/// Direct O(N^2) evaluation of the transform sum.
pub fn dct_ii_naive(x: &[f64]) -> Vec<f64> {
    assert!(!x.is_empty(), "dct_ii_naive on an empty sequence");
    let n = x.len();
    let scale = PI / n as f64;
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(i, &v)| v * (scale * (i as f64 + 0.5) * k as f64).cos())
                .sum()
        })
        .collect()
}

/// FFT-based evaluation of the same sum.
///
/// With `y` the even extension of `x` to length 2N,
/// `X_k = Re(exp(-i pi k / 2N) * FFT(y)_k) / 2`.
pub fn dct_ii(x: &[f64]) -> Vec<f64> {
    assert!(!x.is_empty(), "dct_ii on an empty sequence");
    let n = x.len();
    let mut buf = vec![Complex64::new(0.0, 0.0); 2 * n];
    for (i, &v) in x.iter().enumerate() {
        buf[i] = Complex64::new(v, 0.0);
        buf[2 * n - 1 - i] = Complex64::new(v, 0.0);
    }
    fft_forward(&mut buf);
    let freq = PI / (2.0 * n as f64);
    (0..n)
        .map(|k| {
            let twiddle = Complex64::from_polar(1.0, -freq * k as f64);
            0.5 * (twiddle * buf[k]).re
        })
        .collect()
}

/// Adjoint of [`dct_ii`]: `t_n = sum_k g_k cos(pi/N (n + 1/2) k)`.
///
/// Used by backward passes. Evaluated as the real part of a zero-padded
/// twiddled FFT of the cotangent.
pub(crate) fn dct_ii_adjoint(g: &[f64]) -> Vec<f64> {
    assert!(!g.is_empty(), "dct_ii_adjoint on an empty sequence");
    let n = g.len();
    let freq = PI / (2.0 * n as f64);
    let mut buf = vec![Complex64::new(0.0, 0.0); 2 * n];
    for (k, &v) in g.iter().enumerate() {
        buf[k] = Complex64::from_polar(1.0, -freq * k as f64) * v;
    }
    fft_forward(&mut buf);
    buf[..n].iter().map(|c| c.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_signal_concentrates_in_dc() {
        for n in [1usize, 2, 7, 64] {
            let c = 3.7;
            let x = vec![c; n];
            let spec = dct_ii(&x);
            assert!((spec[0] - n as f64 * c).abs() < 1e-12, "N={n}");
            for &v in &spec[1..] {
                assert!(v.abs() < 1e-12, "N={n}: nonzero high coefficient {v}");
            }
        }
    }

    #[test]
    fn two_point_fixture() {
        // [DERIVED] X = [1, cos(pi/4)] for x = [1, 0].
        let spec = dct_ii(&[1.0, 0.0]);
        assert_relative_eq!(spec[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(spec[1], 0.70710678, epsilon = 1e-8);
    }

    #[test]
    fn fast_matches_naive_all_lengths_up_to_128() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in 1..=128usize {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let fast = dct_ii(&x);
            let naive = dct_ii_naive(&x);
            for (f, s) in fast.iter().zip(&naive) {
                assert!((f - s).abs() < 1e-10, "N={n}: {f} vs {s}");
            }
        }
    }

    #[test]
    fn transform_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 48;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (alpha, beta) = (0.6, -2.2);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
        let sx = dct_ii(&x);
        let sy = dct_ii(&y);
        let sc = dct_ii(&combo);
        for ((a, b), c) in sx.iter().zip(&sy).zip(&sc) {
            assert_relative_eq!(alpha * a + beta * b, *c, epsilon = 1e-10);
        }
    }

    #[test]
    fn adjoint_identity() {
        // <DCT(x), y> == <x, adjoint(y)>
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for n in [1usize, 3, 16, 33] {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lhs: f64 = dct_ii(&x).iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&dct_ii_adjoint(&y)).map(|(a, b)| a * b).sum();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-10);
        }
    }

    #[test]
    fn adjoint_matches_naive_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 20;
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let fast = dct_ii_adjoint(&g);
        let scale = PI / n as f64;
        for (i, fv) in fast.iter().enumerate() {
            let direct: f64 = g
                .iter()
                .enumerate()
                .map(|(k, &v)| v * (scale * (i as f64 + 0.5) * k as f64).cos())
                .sum();
            assert_relative_eq!(*fv, direct, epsilon = 1e-10);
        }
    }
}
