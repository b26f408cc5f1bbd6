//! Dense arithmetic, stable softmax, cosine similarity, Gaussian sampling and
//! a central-difference gradient oracle.
//!
//! The kernels here are generic over [`Scalar`] so the same code runs in
//! `f32` and `f64`. Training itself always instantiates them with `f64`.

mod matrix;
mod rng;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub use matrix::Matrix;
pub use rng::{SeededRng, RNG_ALGORITHM};

/// Floating-point element type accepted by the numeric kernels.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal into this type.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn ensure_finite<T: Scalar>(v: &[T], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains non-finite entries")))
    }
}

/// Temperature-scaled softmax, `softmax(v / tau)`.
///
/// Entries are floored at the smallest positive normal value so the output
/// never contains exact zeros.
pub fn softmax<T: Scalar>(v: &[T], tau: T) -> Result<Vec<T>> {
    if !(tau > T::zero()) {
        return Err(Error::Domain(format!("softmax temperature must be positive, got {tau}")));
    }
    ensure_finite(v, "softmax input")?;
    if v.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    let scaled: Vec<T> = v.iter().map(|&x| x / tau).collect();
    Ok(softmax_unchecked(&scaled))
}

/// Softmax with unit temperature and no validation. Callers guarantee finite,
/// nonempty input.
pub(crate) fn softmax_unchecked<T: Scalar>(v: &[T]) -> Vec<T> {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: T = out.iter().copied().sum();
    let floor = T::min_positive_value();
    for x in out.iter_mut() {
        *x = (*x / sum).max(floor);
    }
    out
}

/// `log softmax(v)` computed as `v - max - log sum exp(v - max)`.
pub fn log_softmax<T: Scalar>(v: &[T]) -> Vec<T> {
    let lse = log_sum_exp(v);
    v.iter().map(|&x| x - lse).collect()
}

pub fn log_sum_exp<T: Scalar>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let s: T = v.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Cosine similarity, clamped to `[-1, 1]`.
///
/// Zero-norm inputs are rejected with [`Error::DegenerateVector`].
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if !(na > T::zero()) || !(nb > T::zero()) {
        return Err(Error::DegenerateVector("cosine of a zero-norm vector".into()));
    }
    let c = dot(a, b) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}

/// Draws `n` rows with independent coordinates `x_d ~ Normal(mu_d, var_d)`.
///
/// `variance` holds variances, not standard deviations.
pub fn gaussian_sample<T: Scalar>(
    mu: &[T],
    variance: &[T],
    n: usize,
    rng: &mut SeededRng,
) -> Result<Matrix<T>> {
    if mu.len() != variance.len() {
        return Err(Error::DimensionMismatch(format!(
            "mean has {} entries, variance has {}",
            mu.len(),
            variance.len()
        )));
    }
    if let Some(v) = variance.iter().find(|v| !(**v >= T::zero())) {
        return Err(Error::Domain(format!("negative or NaN variance {v}")));
    }
    ensure_finite(mu, "gaussian mean")?;
    let std: Vec<T> = variance.iter().map(|v| v.sqrt()).collect();
    let dim = mu.len();
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        for d in 0..dim {
            let z: f64 = StandardNormal.sample(rng);
            data.push(mu[d] + std[d] * T::of(z));
        }
    }
    Ok(Matrix::from_raw(n, dim, data))
}

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad<T, F>(mut f: F, x: &[T], h: T) -> Vec<T>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    let mut probe = x.to_vec();
    let two_h = h + h;
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / two_h
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm, falling back to the
/// absolute difference when both vectors are below `1e-8`.
pub fn relative_error<T: Scalar>(a: &[T], b: &[T]) -> T {
    let diff: Vec<T> = a.iter().zip(b).map(|(x, y)| *x - *y).collect();
    let scale = norm(a).max(norm(b)).max(T::of(1e-8));
    norm(&diff) / scale
}

/// Natural-log entropy of a probability vector.
pub fn entropy<T: Scalar>(p: &[T]) -> T {
    p.iter()
        .filter(|&&x| x > T::zero())
        .map(|&x| -x * x.ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetric_and_analytic() {
        let s = softmax(&[0.0, 0.0], 1.0).unwrap();
        assert_eq!(s, vec![0.5, 0.5]);
        let s = softmax(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_matches_high_precision_values() {
        // 50-digit evaluation of exp(v/0.5) / sum.
        let expected = [
            0.981970010518274385432784794237,
            0.0179854081122192183992316090149,
            0.000044581369506396167983596747653,
        ];
        let s = softmax(&[3.0, 1.0, -2.0], 0.5).unwrap();
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_temperature_path_is_exact() {
        let v = [0.3, -1.7, 2.25, 9.0];
        let tau = 0.37;
        let scaled: Vec<f64> = v.iter().map(|x| x / tau).collect();
        assert_eq!(softmax(&v, tau).unwrap(), softmax(&scaled, 1.0).unwrap());
    }

    #[test]
    fn softmax_never_zero() {
        let s = softmax(&[0.0, -1e6], 1.0).unwrap();
        assert!(s[1] > 0.0);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(matches!(softmax(&[1.0, f64::NAN], 1.0), Err(Error::InvalidInput(_))));
        assert!(matches!(softmax(&[1.0], 0.0), Err(Error::Domain(_))));
        assert!(matches!(softmax(&[1.0], -2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn cosine_cases() {
        let u = [0.3, -2.0, 5.5];
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 2.0, 3.0], &[-1.0, 2.0, -3.0]).unwrap();
        assert!((c + 6.0 / 14.0).abs() < 1e-15);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateVector(_))));
    }

    #[test]
    fn gaussian_degenerate_and_deterministic() {
        let mut rng = SeededRng::new(7);
        let m = gaussian_sample(&[1.5, -2.0], &[0.0, 0.0], 4, &mut rng).unwrap();
        for r in 0..4 {
            assert_eq!(m.row(r), &[1.5, -2.0]);
        }
        let a = gaussian_sample(&[0.0; 3], &[1.0; 3], 3, &mut SeededRng::new(11)).unwrap();
        let b = gaussian_sample(&[0.0; 3], &[1.0; 3], 3, &mut SeededRng::new(11)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            gaussian_sample(&[0.0], &[-1.0], 1, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn gaussian_sample_mean_within_bound() {
        let n = 50_000;
        let m = gaussian_sample(&[0.0; 4], &[1.0; 4], n, &mut SeededRng::new(3)).unwrap();
        for d in 0..4 {
            let mean: f64 = (0..n).map(|r| m[(r, d)]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "dim {d} mean {mean}");
        }
    }

    #[test]
    fn finite_difference_examples() {
        let g = finite_diff_grad(|x: &[f64]| x.iter().sum(), &[1.0, -4.0, 2.5], 1e-5);
        for v in g {
            assert!((v - 1.0).abs() < 1e-9);
        }
        let g = finite_diff_grad(|x: &[f64]| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn finite_difference_quadratic_form() {
        use rand::Rng;
        let mut rng = SeededRng::new(99);
        let n = 5;
        let a: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |v: &[f64]| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += v[i] * a[i * n + j] * v[j];
                }
            }
            s
        };
        let g = finite_diff_grad(f, &x, 1e-5);
        for i in 0..n {
            let exact: f64 = (0..n).map(|j| (a[i * n + j] + a[j * n + i]) * x[j]).sum();
            assert!((g[i] - exact).abs() <= 1e-6 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn generic_over_f32() {
        let s = softmax(&[1.0f32, 2.0, 3.0], 1.0).unwrap();
        assert!((s.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!((cosine(&[1.0f32, 0.0], &[1.0, 1.0]).unwrap() - 0.70710677).abs() < 1e-6);
    }
}
