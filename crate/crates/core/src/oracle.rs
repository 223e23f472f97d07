//! Monte Carlo ground truth: draws `M = A^(-1/2) Z B^(-1/2)` with diagonal
//! `A`, `B` (the Gaussian `Z` ensemble is unitarily invariant) and records
//! the eigenvalues of `M^H M`.
//!
//! Every draw owns a ChaCha stream selected by its index, so a batch depends
//! only on `(spec, seed, count)` and never on thread scheduling.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::density::cdf_c_with;
use crate::detkit::PrecisionPolicy;
use crate::error::{Error, Result};
use crate::spectra::{EnsembleSpec, ValidatedSpec};

/// Draws checked against the `M M^H` route.
pub const SPOT_CHECKS: u64 = 100;
const ROUTE_TOLERANCE: f64 = 1e-8;
const NULL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub spec: EnsembleSpec,
    pub seed: u64,
    pub count: usize,
    /// Row-major `count x N'`, ascending within each draw.
    pub eigenvalues: Vec<f64>,
}

impl SampleBatch {
    pub fn n_prime(&self) -> usize {
        self.spec.n_prime
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        let k = self.n_prime();
        &self.eigenvalues[i * k..(i + 1) * k]
    }

    pub fn draws(&self) -> impl Iterator<Item = &[f64]> {
        self.eigenvalues.chunks(self.n_prime())
    }

    /// All `count * N'` eigenvalues in ascending order.
    pub fn pooled_sorted(&self) -> Vec<f64> {
        let mut v = self.eigenvalues.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

fn draw_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `M` for one draw, `N x N'`, with `E|Z_ij|^2 = 1`.
fn draw_matrix(spec: &EnsembleSpec, seed: u64, index: u64) -> DMatrix<Complex64> {
    let mut rng = draw_rng(seed, index);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    DMatrix::from_fn(spec.n, spec.n_prime, |i, j| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * scale / (spec.a[i] * spec.b[j]).sqrt()
    })
}

fn hermitian_eigenvalues(h: DMatrix<Complex64>, draw: u64) -> Result<Vec<f64>> {
    let eig = h
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or(Error::EigenSolverFailure { draw })?;
    let mut v: Vec<f64> = eig.eigenvalues.iter().map(|&x| x.max(0.0)).collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn route_check(m: &DMatrix<Complex64>, small: &[f64], draw: u64) -> Result<()> {
    let big = hermitian_eigenvalues(m * m.adjoint(), draw)?;
    let scale = small.last().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let extra = big.len() - small.len();
    let null = big[..extra].iter().copied().fold(0.0, f64::max);
    let mut deviation = if null > NULL_TOLERANCE * scale { null / scale } else { 0.0 };
    for (x, y) in big[extra..].iter().zip(small) {
        deviation = deviation.max((x - y).abs() / scale);
    }
    if deviation > ROUTE_TOLERANCE {
        return Err(Error::RouteMismatch { draw, deviation });
    }
    Ok(())
}

/// Draws `count` matrices and returns the `N'` eigenvalues of each `M^H M`.
/// The first [`SPOT_CHECKS`] draws are also diagonalized through `M M^H`
/// and must agree after dropping its `N - N'` null eigenvalues.
pub fn sample(spec: &ValidatedSpec, seed: u64, count: usize) -> Result<SampleBatch> {
    if count == 0 {
        return Err(Error::Precondition("sample count must be >= 1".into()));
    }
    let per_draw: Vec<Vec<f64>> = (0..count as u64)
        .into_par_iter()
        .map(|index| {
            let m = draw_matrix(spec, seed, index);
            let eig = hermitian_eigenvalues(m.adjoint() * &m, index)?;
            if index < SPOT_CHECKS {
                route_check(&m, &eig, index)?;
            }
            Ok(eig)
        })
        .collect::<Result<_>>()?;
    Ok(SampleBatch {
        spec: spec.spec().clone(),
        seed,
        count,
        eigenvalues: per_draw.concat(),
    })
}

/// Mean number of eigenvalues per draw at or below `lambda`.
pub fn empirical_cdf(batch: &SampleBatch, lambda: f64) -> f64 {
    let below = batch.eigenvalues.iter().filter(|&&x| x <= lambda).count();
    below as f64 / batch.count as f64
}

/// `C(lambda) / N'` as a plain function for [`ks_distance`]. Points below
/// the evaluation guard carry no appreciable mass and map to 0; points that
/// cannot be resolved map to NaN.
pub fn analytic_cdf(spec: &ValidatedSpec, policy: PrecisionPolicy) -> impl Fn(f64) -> f64 + Sync + '_ {
    let guard = spec.default_lambda_guard();
    let np = spec.n_prime as f64;
    move |lambda| {
        if lambda < guard {
            return 0.0;
        }
        cdf_c_with(spec, lambda, &policy).map_or(f64::NAN, |c| c.value / np)
    }
}

/// `sup_k |F_emp(x_k) - F(x_k)|` over the pooled eigenvalues `x_k`, where
/// `F_emp` is the right-continuous pooled empirical distribution. The
/// analytic side is evaluated in parallel; NaN anywhere yields NaN.
pub fn ks_distance(batch: &SampleBatch, analytic: impl Fn(f64) -> f64 + Sync) -> f64 {
    let pooled = batch.pooled_sorted();
    let total = pooled.len() as f64;
    // Rank of each point counting ties, so equal samples share one value.
    let mut ranks = vec![0usize; pooled.len()];
    let mut k = pooled.len();
    while k > 0 {
        let mut start = k - 1;
        while start > 0 && pooled[start - 1] == pooled[k - 1] {
            start -= 1;
        }
        ranks[start..k].fill(k);
        k = start;
    }
    let gaps: Vec<f64> = pooled
        .par_iter()
        .zip(ranks.par_iter())
        .map(|(&x, &r)| (r as f64 / total - analytic(x)).abs())
        .collect();
    if gaps.iter().any(|g| g.is_nan()) {
        return f64::NAN;
    }
    gaps.into_iter().fold(0.0, f64::max)
}

/// Pooled eigenvalue counts per bin for ascending `edges`; bin `k` is
/// `[edges[k], edges[k + 1])`.
pub fn histogram(batch: &SampleBatch, edges: &[f64]) -> Vec<u64> {
    let mut counts = vec![0u64; edges.len().saturating_sub(1)];
    for &x in &batch.eigenvalues {
        let k = edges.partition_point(|&e| e <= x);
        if k >= 1 && k < edges.len() {
            counts[k - 1] += 1;
        }
    }
    counts
}

/// Per-draw mean and (population) variance of each ordered eigenvalue.
pub fn moments(batch: &SampleBatch) -> (Vec<f64>, Vec<f64>) {
    let k = batch.n_prime();
    let n = batch.count as f64;
    let mut mean = vec![0.0; k];
    for d in batch.draws() {
        for (m, x) in mean.iter_mut().zip(d) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; k];
    for d in batch.draws() {
        for ((v, x), m) in var.iter_mut().zip(d).zip(&mean) {
            *v += (x - m).powi(2) / n;
        }
    }
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vspec(a: &[f64], b: &[f64]) -> ValidatedSpec {
        ValidatedSpec::new(EnsembleSpec::new(a.to_vec(), b.to_vec())).unwrap()
    }

    fn mean_and_error(values: impl Iterator<Item = f64>) -> (f64, f64) {
        let v: Vec<f64> = values.collect();
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    #[test]
    fn batches_are_reproducible_and_sorted() {
        let s = vspec(&[1.0, 2.0, 4.0], &[0.5, 1.5]);
        let x = sample(&s, 7, 500).unwrap();
        let y = sample(&s, 7, 500).unwrap();
        assert_eq!(x, y);
        assert_ne!(x, sample(&s, 8, 500).unwrap());
        assert_eq!(x.eigenvalues.len(), 1000);
        assert!(x.draws().all(|d| d[0] <= d[1] && d[0] >= 0.0));
        // A prefix of a batch is the smaller batch.
        assert_eq!(&sample(&s, 7, 50).unwrap().eigenvalues[..], &x.eigenvalues[..100]);
    }

    #[test]
    fn batches_do_not_depend_on_thread_count() {
        let s = vspec(&[1.0, 2.0], &[1.0, 3.0]);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool.install(|| sample(&s, 3, 300).unwrap());
        assert_eq!(single, sample(&s, 3, 300).unwrap());
    }

    #[test]
    fn rejects_empty_batch() {
        assert!(sample(&vspec(&[1.0], &[1.0]), 1, 0).is_err());
    }

    #[test]
    fn unit_exponential_mean() {
        let b = sample(&vspec(&[1.0], &[1.0]), 11, 1_000_000).unwrap();
        let (m, se) = mean_and_error(b.eigenvalues.iter().copied());
        assert!((m - 1.0).abs() < 3.0 * se, "{m} +- {se}");
    }

    #[test]
    fn hypoexponential_mean() {
        let b = sample(&vspec(&[1.0, 2.0], &[1.0]), 12, 200_000).unwrap();
        let (m, se) = mean_and_error(b.eigenvalues.iter().copied());
        assert!((m - 1.5).abs() < 3.0 * se, "{m} +- {se}");
    }

    #[test]
    fn empirical_cdf_limits() {
        let b = sample(&vspec(&[1.0, 2.0], &[1.0, 3.0]), 5, 1000).unwrap();
        assert_eq!(empirical_cdf(&b, -1.0), 0.0);
        assert_eq!(empirical_cdf(&b, f64::INFINITY), 2.0);
        let one = sample(&vspec(&[1.0], &[1.0]), 5, 1001).unwrap();
        let median = one.pooled_sorted()[500];
        assert!((empirical_cdf(&one, median) - 0.5).abs() <= 1.0 / 1001.0);
    }

    #[test]
    fn ks_against_itself_and_wrong_law() {
        let s = vspec(&[1.0], &[1.0]);
        let b = sample(&s, 21, 100_000).unwrap();
        assert_eq!(ks_distance(&b, |x| empirical_cdf(&b, x)), 0.0);
        let exact = ks_distance(&b, |x| 1.0 - (-x).exp());
        assert!(exact < 0.0061, "{exact}");
        let wrong = ks_distance(&b, |x| 1.0 - (-x / 2.0).exp());
        assert!(wrong > 0.1, "{wrong}");
    }

    #[test]
    fn scale_covariance_of_samples() {
        // Two-sample KS between c * batch(c a, b) and batch(a, b).
        let c = 3.0;
        let base = sample(&vspec(&[1.0, 2.0], &[1.0, 3.0]), 31, 20_000).unwrap();
        let scaled = sample(&vspec(&[c, 2.0 * c], &[1.0, 3.0]), 32, 20_000).unwrap();
        let x = base.pooled_sorted();
        let y: Vec<f64> = scaled.pooled_sorted().iter().map(|v| v * c).collect();
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < x.len() && j < y.len() {
            if x[i] <= y[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / x.len() as f64 - j as f64 / y.len() as f64).abs());
        }
        // 1.63 sqrt(2/n) is the two-sample critical value at the 1% level.
        let n = x.len() as f64;
        assert!(d < 1.63 * (2.0 / n).sqrt(), "{d}");
    }

    #[test]
    fn analytic_oracle_agrees() {
        let s = vspec(&[1.0, 2.0, 4.0], &[0.5, 1.5]);
        let b = sample(&s, 41, 20_000).unwrap();
        let d = ks_distance(&b, analytic_cdf(&s, PrecisionPolicy::default()));
        assert!(d < 1.63 / (b.eigenvalues.len() as f64).sqrt(), "{d}");
    }

    #[test]
    fn mean_determinant_matches_moment() {
        // <det M^H M> = G_1(0).
        let s = vspec(&[1.0, 2.0], &[1.0, 3.0]);
        let b = sample(&s, 51, 1_000_000).unwrap();
        let (m, se) = mean_and_error(b.draws().map(|d| d[0] * d[1]));
        let g = crate::density::moments_g(&s, &crate::spectra::MomentQuery::real(1, 0.0)).unwrap();
        assert!((m - g.re).abs() < 3.0 * se, "{m} +- {se} vs {}", g.re);
    }

    #[test]
    fn log_statistic_matches_quadrature() {
        let s = vspec(&[1.0, 2.0], &[1.0, 3.0]);
        let p = PrecisionPolicy::default();
        let grid = crate::density::adaptive_grid(&s, &p).unwrap();
        let c = crate::density::curve(&s, &grid, &p);
        let exact = crate::density::linear_statistic(&c, |l| (1.0 + l).ln()).unwrap();
        let b = sample(&s, 61, 1_000_000).unwrap();
        let (m, se) = mean_and_error(b.draws().map(|d| d.iter().map(|l| (1.0 + l).ln()).sum()));
        assert!((m - exact).abs() < 3.0 * se, "{m} +- {se} vs {exact}");
    }

    #[test]
    fn density_matches_histogram() {
        let s = vspec(&[1.0, 2.0], &[1.0, 3.0]);
        let b = sample(&s, 71, 1_000_000).unwrap();
        let (lo, hi) = (0.975, 1.025);
        let observed = histogram(&b, &[lo, hi])[0] as f64;
        let expected = b.count as f64
            * (crate::density::cdf_c(&s, hi).unwrap() - crate::density::cdf_c(&s, lo).unwrap());
        let rho = crate::density::density_rho(&s, 1.0).unwrap();
        assert!((expected / (b.count as f64 * 0.05) - rho).abs() < 1e-3 * rho);
        assert!((observed - expected).abs() < 3.0 * expected.sqrt(), "{observed} vs {expected}");
    }

    #[test]
    fn histogram_bins() {
        let s = vspec(&[1.0], &[1.0]);
        let b = SampleBatch {
            spec: s.spec().clone(),
            seed: 0,
            count: 4,
            eigenvalues: vec![0.5, 1.0, 1.5, 9.0],
        };
        assert_eq!(histogram(&b, &[0.0, 1.0, 2.0]), vec![1, 2]);
        let (m, v) = moments(&b);
        assert_eq!(m, vec![3.0]);
        assert!((v[0] - 12.125).abs() < 1e-12);
    }
}
