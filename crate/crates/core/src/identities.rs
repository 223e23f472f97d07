//! Determinant identities used to cross-check the determinant machinery:
//! the Cauchy-Binet expansion of `det[W(a_i b_j)]` for a power series `W`,
//! and the shifted Vandermonde identity
//!
//! ```text
//! Delta(lambda) = (-z)^(-N(N-1)/2) det[(lambda_i / (lambda_i - z))^(j-1)] prod_n (lambda_n - z)^(N-1)
//! ```

use std::fmt;
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detkit::{logdet, logdet_f64, vandermonde, DetMatrix, Entry, LogDet, PrecisionPolicy};
use crate::error::{Error, Result};
use crate::gfun::ln_factorial;

/// Default number of series terms kept.
pub const DEFAULT_TRUNCATION: u32 = 30;
/// Relative share of the last enumeration shell above which the truncation
/// is reported.
pub const SHELL_TOLERANCE: f64 = 1e-10;
pub const CHECK_TOLERANCE: f64 = 1e-9;
const TERM_ACCURACY: f64 = 1e-14;

/// Power series `W(x) = sum_{k <= truncation} w(k) x^k`.
#[derive(Clone)]
pub struct SeriesWeight {
    pub w: Arc<dyn Fn(u32) -> f64 + Send + Sync>,
    pub truncation: u32,
    /// Arguments `a_i b_j` must stay below this magnitude.
    pub radius_hint: f64,
}

impl fmt::Debug for SeriesWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SeriesWeight")
            .field("truncation", &self.truncation)
            .field("radius_hint", &self.radius_hint)
            .finish_non_exhaustive()
    }
}

impl SeriesWeight {
    pub fn new(w: impl Fn(u32) -> f64 + Send + Sync + 'static, truncation: u32, radius_hint: f64) -> Self {
        SeriesWeight {
            w: Arc::new(w),
            truncation,
            radius_hint,
        }
    }

    /// `w(k) = z^k / k!`, so `W(x) = exp(z x)` up to truncation.
    pub fn exponential(z: f64) -> Self {
        SeriesWeight::new(
            move |k| z.powi(k as i32) / ln_factorial(k).exp(),
            DEFAULT_TRUNCATION,
            f64::INFINITY,
        )
    }

    /// `w(k) = (-z)^k (N-1)! / k!` for `k < N`, the normalization kernel of
    /// dimension `n`.
    pub fn normalization(n: u32, z: f64) -> Self {
        let top = ln_factorial(n.saturating_sub(1));
        SeriesWeight::new(
            move |k| {
                if k < n {
                    (-z).powi(k as i32) * (top - ln_factorial(k)).exp()
                } else {
                    0.0
                }
            },
            n.saturating_sub(1),
            f64::INFINITY,
        )
    }

    pub fn zero() -> Self {
        SeriesWeight::new(|_| 0.0, DEFAULT_TRUNCATION, f64::INFINITY)
    }

    pub fn coefficients(&self) -> Vec<f64> {
        (0..=self.truncation).map(|k| (self.w)(k)).collect()
    }
}

fn check_inputs(a: &[f64], b: &[f64], weight: &SeriesWeight) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::Precondition(format!(
            "Cauchy-Binet needs two nonempty vectors of equal length, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    for &x in a {
        for &y in b {
            if (x * y).abs() >= weight.radius_hint {
                return Err(Error::Precondition(format!(
                    "|a b| = {} outside the series radius {}",
                    (x * y).abs(),
                    weight.radius_hint
                )));
            }
        }
    }
    Ok(())
}

/// Compensated running sum.
#[derive(Default)]
struct Neumaier {
    sum: f64,
    carry: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// `det[x_i^(k_j)]`, built with one row per exponent so each row is scaled
/// on its own.
fn power_det(x: &[f64], ks: &[u32], policy: &PrecisionPolicy) -> Result<LogDet> {
    let values: Vec<f64> = ks
        .iter()
        .flat_map(|&k| x.iter().map(move |&xi| xi.powi(k as i32)))
        .collect();
    if let Some(d) = logdet_f64(&values, x.len(), policy) {
        return Ok(d);
    }
    let entries = ks
        .iter()
        .flat_map(|&k| x.iter().map(move |&xi| Entry::Monomial { base: xi, power: k }))
        .collect();
    logdet(&DetMatrix::general(x.len(), entries)?, policy)
}

/// Hadamard bound on `|det[x_i^(k_j)]|`.
fn power_bound(x: &[f64], ks: &[u32]) -> f64 {
    ks.iter()
        .map(|&k| x.iter().map(|xi| xi.abs().powi(k as i32).powi(2)).sum::<f64>().sqrt())
        .product()
}

/// Strictly decreasing tuples `k_1 > ... > k_N >= 0` with `k_1 = top`.
fn shell(top: u32, len: usize, out: &mut Vec<Vec<u32>>) {
    fn rec(prefix: &mut Vec<u32>, below: u32, left: usize, out: &mut Vec<Vec<u32>>) {
        if left == 0 {
            out.push(prefix.clone());
            return;
        }
        for k in (0..below).rev() {
            if (k as usize) + 1 < left {
                break;
            }
            prefix.push(k);
            rec(prefix, k, left - 1, out);
            prefix.pop();
        }
    }
    let mut prefix = vec![top];
    rec(&mut prefix, top, len - 1, out);
}

/// `sum_{k_1 > ... > k_N >= 0} det[a_i^(k_j)] det[b_i^(k_j)] prod w(k_j)`
/// over all tuples with `k_1 <= truncation`.
pub fn cauchy_binet_lhs(a: &[f64], b: &[f64], weight: &SeriesWeight) -> Result<f64> {
    check_inputs(a, b, weight)?;
    let n = a.len();
    let policy = PrecisionPolicy::default();
    let w = weight.coefficients();
    let mut total = Neumaier::default();
    let mut last_shell = Neumaier::default();
    let mut tuples = Vec::new();
    let mut largest = 0.0f64;
    for top in (n as u32 - 1)..=weight.truncation {
        tuples.clear();
        shell(top, n, &mut tuples);
        let mut part = Neumaier::default();
        for ks in &tuples {
            let wprod: f64 = ks.iter().map(|&k| w[k as usize]).product();
            if wprod == 0.0 {
                continue;
            }
            // Each term needs only enough accuracy to keep the running sum
            // within TERM_ACCURACY of itself.
            let bound = wprod.abs() * power_bound(a, ks) * power_bound(b, ks);
            let scale = total.value().abs().max(part.value().abs()).max(largest);
            let allowed = if scale > 0.0 {
                TERM_ACCURACY * scale / (bound * f64::EPSILON)
            } else {
                0.0
            };
            let term_policy = policy.with_threshold(policy.escalation_threshold.max(allowed));
            let da = power_det(a, ks, &term_policy)?;
            let db = power_det(b, ks, &term_policy)?;
            if da.is_zero || db.is_zero {
                continue;
            }
            let sign = da.sign() * db.sign();
            let term = sign * wprod * (da.log_magnitude + db.log_magnitude).exp();
            largest = largest.max(term.abs());
            part.add(term);
        }
        total.add(part.value());
        last_shell = part;
    }
    let sum = total.value();
    let shell_fraction = if sum == 0.0 {
        0.0
    } else {
        (last_shell.value() / sum).abs()
    };
    if weight.truncation as usize >= n && shell_fraction > SHELL_TOLERANCE {
        return Err(Error::TruncationWarning {
            partial: sum,
            shell_fraction,
        });
    }
    Ok(sum)
}

/// `det[W(a_i b_j)]` with `W` truncated like the left-hand side.
pub fn cauchy_binet_rhs(a: &[f64], b: &[f64], weight: &SeriesWeight) -> Result<f64> {
    check_inputs(a, b, weight)?;
    let n = a.len();
    let coeffs: Arc<[f64]> = weight.coefficients().into();
    let entries = a
        .iter()
        .flat_map(|&ai| {
            let coeffs = coeffs.clone();
            b.iter().map(move |&bj| Entry::Series {
                a: ai,
                b: bj,
                coeffs: coeffs.clone(),
            })
        })
        .collect();
    let d = logdet(&DetMatrix::general(n, entries)?, &PrecisionPolicy::default())?;
    Ok(d.value().re)
}

/// Both sides of an identity and their agreement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub relative_error: f64,
    pub passed: bool,
}

impl IdentityCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        let scale = lhs.abs().max(rhs.abs());
        let relative_error = if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
        IdentityCheck {
            lhs,
            rhs,
            relative_error,
            passed: relative_error < CHECK_TOLERANCE,
        }
    }
}

pub fn cauchy_binet_check(a: &[f64], b: &[f64], weight: &SeriesWeight) -> Result<IdentityCheck> {
    Ok(IdentityCheck::new(
        cauchy_binet_lhs(a, b, weight)?,
        cauchy_binet_rhs(a, b, weight)?,
    ))
}

/// Evaluates both sides of the shifted Vandermonde identity. The
/// determinant side is a general elimination, never the product formula.
pub fn vandermonde_shift_check(lambdas: &[f64], z: f64) -> Result<IdentityCheck> {
    let n = lambdas.len();
    if lambdas.contains(&z) {
        return Err(Error::Precondition(format!("shift z = {z} coincides with an eigenvalue")));
    }
    let lhs = vandermonde(lambdas)?;
    let x: Vec<f64> = lambdas.iter().map(|&l| l / (l - z)).collect();
    let det = logdet(&DetMatrix::vandermonde_matrix(&x), &PrecisionPolicy::default())?;
    let pairs = (n * (n.saturating_sub(1)) / 2) as i32;
    let mut sign = det.sign();
    let mut log = det.log_magnitude - pairs as f64 * (-z).abs().ln();
    if -z < 0.0 && pairs.rem_euclid(2) == 1 {
        sign = -sign;
    }
    for &l in lambdas {
        let d = l - z;
        log += (n as f64 - 1.0) * d.abs().ln();
        if d < 0.0 && n.is_multiple_of(2) {
            sign = -sign;
        }
    }
    // Compare the ratio so that large magnitudes do not overflow.
    let ratio = sign * lhs.sign() * (log - lhs.log_magnitude).exp();
    let relative_error = (ratio - 1.0).abs();
    Ok(IdentityCheck {
        lhs: lhs.value().re,
        rhs: sign * log.exp(),
        relative_error,
        passed: relative_error < CHECK_TOLERANCE,
    })
}

/// One named entry of [`standard_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub outcome: Result<IdentityCheck>,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        matches!(self.outcome, Ok(IdentityCheck { passed: true, .. }))
    }
}

fn distinct(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        let ok = v
            .iter()
            .enumerate()
            .all(|(i, x)| v[i + 1..].iter().all(|y| (x - y).abs() > 0.05 * (hi - lo)));
        if ok {
            return v;
        }
    }
}

/// Fixed and seeded random instances of both identities.
pub fn standard_suite(seed: u64) -> Vec<SuiteEntry> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.push(SuiteEntry {
        name: "cauchy-binet normalization N=2".into(),
        outcome: cauchy_binet_check(&[1.0, 2.0], &[1.0, 3.0], &SeriesWeight::normalization(2, -1.0)),
    });
    for n in 1..=4 {
        for _ in 0..5 {
            let a = distinct(&mut rng, n, 0.1, 1.5);
            let b = distinct(&mut rng, n, 0.1, 1.5);
            let z = rng.random_range(-1.5..1.5);
            out.push(SuiteEntry {
                name: format!("cauchy-binet exponential N={n}"),
                outcome: cauchy_binet_check(&a, &b, &SeriesWeight::exponential(z)),
            });
        }
    }
    out.push(SuiteEntry {
        name: "vandermonde shift N=2".into(),
        outcome: vandermonde_shift_check(&[1.0, 3.0], -1.0),
    });
    for n in 1..=5 {
        for _ in 0..10 {
            let l = distinct(&mut rng, n, 0.0, 10.0);
            out.push(SuiteEntry {
                name: format!("vandermonde shift N={n}"),
                outcome: vandermonde_shift_check(&l, -2.0),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_index_is_exponential() {
        let w = SeriesWeight::exponential(0.7);
        let lhs = cauchy_binet_lhs(&[1.3], &[0.9], &w).unwrap();
        assert!((lhs - (1.3f64 * 0.9 * 0.7).exp()).abs() < 1e-14);
        let rhs = cauchy_binet_rhs(&[1.3], &[0.9], &w).unwrap();
        assert!((rhs - lhs).abs() < 1e-14);
    }

    #[test]
    fn normalization_determinant() {
        // det[g(a_i b_j; 2, -1)] = Delta(a) Delta(b) (-z) J_0 = 1 * 2 * 1 * 1.
        let w = SeriesWeight::normalization(2, -1.0);
        let lhs = cauchy_binet_lhs(&[1.0, 2.0], &[1.0, 3.0], &w).unwrap();
        let rhs = cauchy_binet_rhs(&[1.0, 2.0], &[1.0, 3.0], &w).unwrap();
        assert!((lhs - 2.0).abs() < 1e-14, "{lhs}");
        assert!((rhs - 2.0).abs() < 1e-14, "{rhs}");
    }

    #[test]
    fn zero_weight() {
        let w = SeriesWeight::zero();
        assert_eq!(cauchy_binet_lhs(&[1.0, 2.0], &[0.5, 0.7], &w).unwrap(), 0.0);
        assert_eq!(cauchy_binet_rhs(&[1.0, 2.0], &[0.5, 0.7], &w).unwrap(), 0.0);
    }

    #[test]
    fn slow_series_warns() {
        let w = SeriesWeight::new(|_| 1.0, 10, 1.0);
        let r = cauchy_binet_lhs(&[0.9, 0.5], &[0.95, 0.6], &w);
        assert!(matches!(r, Err(Error::TruncationWarning { .. })));
        assert!(cauchy_binet_lhs(&[2.0], &[0.9], &w).is_err());
    }

    #[test]
    fn shell_enumeration() {
        let mut out = Vec::new();
        shell(3, 3, &mut out);
        assert_eq!(out, vec![vec![3, 2, 1], vec![3, 2, 0], vec![3, 1, 0]]);
        out.clear();
        shell(0, 1, &mut out);
        assert_eq!(out, vec![vec![0]]);
    }

    #[test]
    fn shift_examples() {
        let one = vandermonde_shift_check(&[4.2], -2.0).unwrap();
        assert!(one.passed && one.lhs == 1.0);
        let two = vandermonde_shift_check(&[1.0, 3.0], -1.0).unwrap();
        assert!(two.passed);
        assert!((two.lhs - 2.0).abs() < 1e-15 && (two.rhs - 2.0).abs() < 1e-13);
        assert!(vandermonde_shift_check(&[1.0, 3.0], 3.0).is_err());
        // Positive shifts between eigenvalues exercise every sign branch.
        assert!(vandermonde_shift_check(&[0.5, 1.5, 2.5, 4.0], 2.0).unwrap().passed);
    }

    #[test]
    fn suite_passes() {
        let suite = standard_suite(1);
        for e in &suite {
            assert!(e.passed(), "{}: {:?}", e.name, e.outcome);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn separated(v: &[f64], gap: f64) -> bool {
            v.iter().enumerate().all(|(i, x)| v[i + 1..].iter().all(|y| (x - y).abs() > gap))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(20))]

            #[test]
            fn cauchy_binet_sides_agree(
                a in proptest::collection::vec(0.1f64..1.5, 1..=4),
                b in proptest::collection::vec(0.1f64..1.5, 4),
                z in -1.5f64..1.5,
            ) {
                let b = &b[..a.len()];
                prop_assume!(separated(&a, 0.05) && separated(b, 0.05));
                let c = cauchy_binet_check(&a, b, &SeriesWeight::exponential(z)).unwrap();
                prop_assert!(c.passed, "{:?}", c);
            }

            #[test]
            fn shift_identity(l in proptest::collection::vec(0.0f64..10.0, 1..=5)) {
                prop_assume!(separated(&l, 0.01));
                prop_assert!(vandermonde_shift_check(&l, -2.0).unwrap().passed);
            }
        }
    }
}
