//! Ensemble input: matrix dimensions, the correlation spectra and the
//! evaluation queries built on top of them.
//!
//! `A` and `B` only enter through their eigenvalues, so an ensemble is the
//! pair of positive spectra `a` (length `n`) and `b` (length `n_prime`).
//! The analytic formulas divide by the Vandermonde products of both spectra,
//! which is why validation also scores how close any two eigenvalues are.

use std::ops::Deref;

use num_complex::Complex64;

use crate::error::{Error, Result, Side};

/// Relative spacing below which two eigenvalues count as degenerate.
pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-6;

/// Default `lambda_min_guard` in units of the largest eigenvalue scale.
pub const DEFAULT_GUARD_FRACTION: f64 = 1e-8;

/// Dimensions and correlation spectra of `M` (`n x n_prime`).
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub n: usize,
    pub n_prime: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl EnsembleSpec {
    /// Builds a spec whose dimensions are the spectrum lengths.
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Self {
        EnsembleSpec {
            n: a.len(),
            n_prime: b.len(),
            a,
            b,
        }
    }

    /// Structural checks only: shape, lengths and positivity.
    pub fn check(&self) -> Result<()> {
        if self.n_prime < 1 || self.n < self.n_prime {
            return Err(Error::ShapeViolation {
                n: self.n,
                n_prime: self.n_prime,
            });
        }
        if self.a.len() != self.n {
            return Err(Error::DimensionMismatch {
                side: Side::A,
                expected: self.n,
                found: self.a.len(),
            });
        }
        if self.b.len() != self.n_prime {
            return Err(Error::DimensionMismatch {
                side: Side::B,
                expected: self.n_prime,
                found: self.b.len(),
            });
        }
        for (side, values) in [(Side::A, &self.a), (Side::B, &self.b)] {
            if let Some((index, &value)) = values
                .iter()
                .enumerate()
                .find(|(_, v)| !(v.is_finite() && **v > 0.0))
            {
                return Err(Error::NonPositiveEigenvalue { side, index, value });
            }
        }
        Ok(())
    }

    pub fn is_square(&self) -> bool {
        self.n == self.n_prime
    }

    /// `(score_a, score_b)`: the smallest pairwise relative spacing in each
    /// spectrum, `+inf` for a single eigenvalue.
    pub fn degeneracy_score(&self) -> (f64, f64) {
        (min_relative_spacing(&self.a), min_relative_spacing(&self.b))
    }

    /// Smallest natural eigenvalue scale, `1 / (max a * max b)`.
    pub fn fine_scale(&self) -> f64 {
        1.0 / (max_of(&self.a) * max_of(&self.b))
    }

    /// Largest natural eigenvalue scale, `1 / (min a * min b)`.
    pub fn coarse_scale(&self) -> f64 {
        1.0 / (min_of(&self.a) * min_of(&self.b))
    }

    /// `<tr M^H M> = sum_ij 1 / (a_i b_j)`.
    pub fn mean_trace(&self) -> f64 {
        let sa: f64 = self.a.iter().map(|a| 1.0 / a).sum();
        let sb: f64 = self.b.iter().map(|b| 1.0 / b).sum();
        sa * sb
    }

    pub fn default_lambda_guard(&self) -> f64 {
        DEFAULT_GUARD_FRACTION * self.coarse_scale()
    }

    /// The spec with `a` multiplied by `c`.
    pub fn scaled_a(&self, c: f64) -> EnsembleSpec {
        EnsembleSpec {
            a: self.a.iter().map(|a| a * c).collect(),
            ..self.clone()
        }
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::MIN, f64::max)
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::MAX, f64::min)
}

pub(crate) fn relative_spacing(x: f64, y: f64) -> f64 {
    (x - y).abs() / x.abs().max(y.abs())
}

fn min_relative_spacing(v: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            best = best.min(relative_spacing(v[i], v[j]));
        }
    }
    best
}

/// A spec that passed [`validate`]; the analytic routines only accept these.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSpec {
    spec: EnsembleSpec,
    score: (f64, f64),
}

impl ValidatedSpec {
    /// Validates at [`DEFAULT_DEGENERACY_TOL`], turning a degeneracy report
    /// into an error.
    pub fn new(spec: EnsembleSpec) -> Result<Self> {
        validate(&spec, DEFAULT_DEGENERACY_TOL)?.into_valid()
    }

    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    pub fn into_inner(self) -> EnsembleSpec {
        self.spec
    }

    pub fn degeneracy_score(&self) -> (f64, f64) {
        self.score
    }
}

impl Deref for ValidatedSpec {
    type Target = EnsembleSpec;

    fn deref(&self) -> &EnsembleSpec {
        &self.spec
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegeneratePair {
    pub side: Side,
    pub i: usize,
    pub j: usize,
    pub spacing: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegeneracyReport {
    pub spec: EnsembleSpec,
    pub tolerance: f64,
    pub pairs: Vec<DegeneratePair>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Validation {
    Valid(ValidatedSpec),
    Degenerate(DegeneracyReport),
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validation::Valid(_))
    }

    pub fn into_valid(self) -> Result<ValidatedSpec> {
        match self {
            Validation::Valid(v) => Ok(v),
            Validation::Degenerate(report) => {
                let p = &report.pairs[0];
                Err(Error::Precondition(format!(
                    "near-degenerate spectrum: {}[{}] and {}[{}] have relative spacing {:.3e} (tolerance {:.1e}, {} pair(s))",
                    p.side,
                    p.i,
                    p.side,
                    p.j,
                    p.spacing,
                    report.tolerance,
                    report.pairs.len()
                )))
            }
        }
    }
}

/// Checks the spec and flags every eigenvalue pair closer than
/// `degeneracy_tol` in relative spacing `|x - y| / max(x, y)`.
pub fn validate(spec: &EnsembleSpec, degeneracy_tol: f64) -> Result<Validation> {
    spec.check()?;
    let mut pairs = Vec::new();
    for (side, values) in [(Side::A, &spec.a), (Side::B, &spec.b)] {
        for i in 0..values.len() {
            for j in i + 1..values.len() {
                let spacing = relative_spacing(values[i], values[j]);
                if spacing <= degeneracy_tol {
                    pairs.push(DegeneratePair { side, i, j, spacing });
                }
            }
        }
    }
    if pairs.is_empty() {
        Ok(Validation::Valid(ValidatedSpec {
            spec: spec.clone(),
            score: spec.degeneracy_score(),
        }))
    } else {
        Ok(Validation::Degenerate(DegeneracyReport {
            spec: spec.clone(),
            tolerance: degeneracy_tol,
            pairs,
        }))
    }
}

/// Spreads every near-degenerate cluster (detected at
/// [`DEFAULT_DEGENERACY_TOL`]) symmetrically about its mean.
///
/// A cluster of size `m` with mean `c` is replaced by `c * (1 + k * delta)`
/// for the offsets `k` in `-m/2..=m/2`, skipping `k = 0` when `m` is even.
/// Members keep their positions and receive offsets in ascending order of
/// their original values.
pub fn perturb_degenerate(spec: &EnsembleSpec, delta: f64) -> Result<EnsembleSpec> {
    perturb_degenerate_with_tol(spec, delta, DEFAULT_DEGENERACY_TOL)
}

pub fn perturb_degenerate_with_tol(
    spec: &EnsembleSpec,
    delta: f64,
    cluster_tol: f64,
) -> Result<EnsembleSpec> {
    spec.check()?;
    if !(delta > 0.0) {
        return Err(Error::Precondition(format!("delta must be > 0, got {delta}")));
    }
    Ok(EnsembleSpec {
        a: spread_clusters(&spec.a, delta, cluster_tol),
        b: spread_clusters(&spec.b, delta, cluster_tol),
        ..spec.clone()
    })
}

fn spread_clusters(values: &[f64], delta: f64, tol: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));

    let mut out = values.to_vec();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len()
            && relative_spacing(values[order[end - 1]], values[order[end]]) <= tol
        {
            end += 1;
        }
        let members = &order[start..end];
        if members.len() > 1 {
            let center = members.iter().map(|&i| values[i]).sum::<f64>() / members.len() as f64;
            for (&idx, k) in members.iter().zip(cluster_offsets(members.len())) {
                out[idx] = center * (1.0 + k as f64 * delta);
            }
        }
        start = end;
    }
    out
}

fn cluster_offsets(m: usize) -> Vec<i64> {
    let half = (m / 2) as i64;
    (-half..=half).filter(|&k| m % 2 == 1 || k != 0).collect()
}

/// Two-point Richardson extrapolation to `delta -> 0` for an error that is
/// even in `delta` (symmetric spreads give exactly that).
pub fn richardson(value_1: f64, delta_1: f64, value_2: f64, delta_2: f64) -> f64 {
    let (h1, h2) = (delta_1 * delta_1, delta_2 * delta_2);
    (value_2 * h1 - value_1 * h2) / (h1 - h2)
}

/// The determinant moment query `<det(M^H M - z)^nu>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentQuery {
    pub nu: u32,
    pub z: Complex64,
}

impl MomentQuery {
    pub fn new(nu: u32, z: Complex64) -> Self {
        MomentQuery { nu, z }
    }

    pub fn real(nu: u32, z: f64) -> Self {
        MomentQuery {
            nu,
            z: Complex64::new(z, 0.0),
        }
    }
}

/// Strictly increasing positive evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    points: Vec<f64>,
    lambda_min_guard: f64,
}

impl EvalGrid {
    pub fn new(points: Vec<f64>, lambda_min_guard: f64) -> Result<Self> {
        if !(lambda_min_guard > 0.0) {
            return Err(Error::Precondition(format!(
                "lambda_min_guard must be > 0, got {lambda_min_guard}"
            )));
        }
        if points.is_empty() {
            return Err(Error::Precondition("grid has no points".into()));
        }
        if let Some(p) = points.iter().find(|p| !(p.is_finite() && **p >= lambda_min_guard)) {
            return Err(Error::Precondition(format!(
                "grid point {p} is below the guard {lambda_min_guard}"
            )));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("grid points must be strictly increasing".into()));
        }
        Ok(EvalGrid {
            points,
            lambda_min_guard,
        })
    }

    /// `count` inclusive, evenly spaced points on `[start, stop]`.
    pub fn linear(start: f64, stop: f64, count: usize, lambda_min_guard: f64) -> Result<Self> {
        let points = match count {
            0 => Vec::new(),
            1 => vec![start],
            _ => {
                let step = (stop - start) / (count - 1) as f64;
                (0..count)
                    .map(|k| if k + 1 == count { stop } else { start + step * k as f64 })
                    .collect()
            }
        };
        Self::new(points, lambda_min_guard)
    }

    /// `count` inclusive, geometrically spaced points on `[start, stop]`.
    pub fn geometric(start: f64, stop: f64, count: usize, lambda_min_guard: f64) -> Result<Self> {
        if !(start > 0.0) {
            return Err(Error::Precondition("geometric grid must start above 0".into()));
        }
        let points = match count {
            0 => Vec::new(),
            1 => vec![start],
            _ => {
                let ratio = (stop / start).ln() / (count - 1) as f64;
                (0..count)
                    .map(|k| if k + 1 == count { stop } else { start * (ratio * k as f64).exp() })
                    .collect()
            }
        };
        Self::new(points, lambda_min_guard)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn lambda_min_guard(&self) -> f64 {
        self.lambda_min_guard
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
