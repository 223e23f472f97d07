//! Determinant-moments `G_nu(z)`, the counting function `C(lambda)` and the
//! density `rho(lambda)` assembled from prefactors and structured
//! determinants.
//!
//! Determinant sums are accumulated inside the working tier, so cancellation
//! between terms is resolved by the same escalation that protects each
//! determinant.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::detkit::scalar::{Cx, Field, Real};
use crate::detkit::{
    build_k, build_ktilde, build_l, build_t, run_escalating, vandermonde, DetMatrix, EntryCache,
    Escalated, LogScalar, PrecisionPolicy, TierDet, TierJob,
};
use crate::error::{Error, Result};
use crate::spectra::{EvalGrid, MomentQuery, ValidatedSpec};

/// Cdf shortfall from `N'` tolerated by [`linear_statistic`].
pub const MASS_TOLERANCE: f64 = 1e-6;

/// The scalar factors multiplying the determinants, in log form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prefactors {
    /// `Delta_N(a) Delta_N'(b) (-z)^(N'(N'-1)/2) J_nu`.
    pub q_inv: LogScalar,
    /// `prod_{i=1}^{N-1} (nu + i)^i`.
    pub j_nu: LogScalar,
    /// `prod_{j=1}^{N-N'-1} (N + nu - j)^(N-N'-j)`, unity when `N' >= N - 1`.
    pub r_nu: LogScalar,
}

impl Prefactors {
    /// `Q_nu R_nu`, the factor in front of the determinant.
    pub fn scale(&self) -> LogScalar {
        self.q_inv.inv().mul(&self.r_nu)
    }
}

fn positive(log_magnitude: f64) -> LogScalar {
    LogScalar {
        phase: Complex64::new(1.0, 0.0),
        log_magnitude,
    }
}

/// Number of `b`-pairs, the exponent of `(-z)` in `Q_nu^-1`.
pub fn pair_count(spec: &ValidatedSpec) -> u32 {
    (spec.n_prime * (spec.n_prime - 1) / 2) as u32
}

pub fn prefactors(spec: &ValidatedSpec, nu: u32, z: Complex64) -> Result<Prefactors> {
    let n = spec.n as u32;
    let np = spec.n_prime as u32;
    let j_nu = positive((1..n).map(|i| i as f64 * ((nu + i) as f64).ln()).sum());
    let r_nu = positive(
        (1..n.saturating_sub(np))
            .map(|j| (n - np - j) as f64 * ((n + nu - j) as f64).ln())
            .sum(),
    );
    let p = pair_count(spec);
    let shift = if p == 0 {
        positive(0.0)
    } else if z == Complex64::new(0.0, 0.0) {
        return Err(Error::ExactZero("(-z)^(N'(N'-1)/2) vanishes at z = 0"));
    } else if z.im == 0.0 {
        // Integer power of the negative real -z for positive z.
        let sign = if (z.re > 0.0) && p % 2 == 1 { -1.0 } else { 1.0 };
        LogScalar {
            phase: Complex64::new(sign, 0.0),
            log_magnitude: p as f64 * z.re.abs().ln(),
        }
    } else {
        let w = -z;
        LogScalar {
            phase: (w / w.norm()).powu(p),
            log_magnitude: p as f64 * w.norm().ln(),
        }
    };
    let da = vandermonde(&spec.a)?.as_log_scalar();
    let db = vandermonde(&spec.b)?.as_log_scalar();
    Ok(Prefactors {
        q_inv: da.mul(&db).mul(&shift).mul(&j_nu),
        j_nu,
        r_nu,
    })
}

/// `scale * sum det(mats)` computed in one tier.
struct DetSum<'a> {
    mats: &'a [DetMatrix],
    scale: LogScalar,
    /// Absolute error reference: when set, the conditioning is measured
    /// against this magnitude rather than against the sum itself.
    reference: Option<f64>,
}

impl TierJob for DetSum<'_> {
    type Output = Complex64;

    fn run<R: Real>(&self, bits: u32, final_tier: bool) -> Result<(Complex64, f64)> {
        let mut cache = EntryCache::<R>::new();
        let dets: Vec<TierDet<R>> = self.mats.iter().map(|m| m.det_at(bits, &mut cache)).collect();
        let worst = dets
            .iter()
            .map(|d| d.condition(final_tier))
            .fold(1.0, f64::max);
        if !worst.is_finite() {
            return Ok((Complex64::new(f64::NAN, 0.0), f64::INFINITY));
        }
        let live: Vec<&TierDet<R>> = dets.iter().filter(|d| !d.zero).collect();
        let Some(top) = live.iter().map(|d| d.log2_scale).max() else {
            return Ok((Complex64::new(0.0, 0.0), worst));
        };
        let mut sum = Cx::from_real(R::zero(bits), bits);
        let mut abs_sum = 0.0;
        for d in live {
            let t = d.mantissa.mul_pow2(d.log2_scale - top);
            abs_sum += t.log2_abs().exp2();
            sum = sum + t;
        }
        let (phase, l2) = sum.polar_f64();
        let top_log = top as f64 * LN_2 + self.scale.log_magnitude;
        let value = if l2 == f64::NEG_INFINITY {
            Complex64::new(0.0, 0.0)
        } else {
            phase * self.scale.phase * (l2 * LN_2 + top_log).exp()
        };
        let amplification = match self.reference {
            Some(r) => (abs_sum * top_log.exp() / r).max(1.0),
            None if l2 == f64::NEG_INFINITY => {
                if final_tier {
                    1.0
                } else {
                    f64::INFINITY
                }
            }
            None => abs_sum / l2.exp2(),
        };
        Ok((value, worst * amplification))
    }
}

fn check_guard(spec: &ValidatedSpec, lambda: f64) -> Result<()> {
    let guard = spec.default_lambda_guard();
    if !(lambda >= guard) || !lambda.is_finite() {
        return Err(Error::Precondition(format!(
            "lambda = {lambda} is below the guard {guard:e}"
        )));
    }
    Ok(())
}

/// `G_nu(z) = < prod_n (lambda_n - z)^nu >` over the `N'` eigenvalues of
/// `M^H M`, with the default precision policy.
pub fn moments_g(spec: &ValidatedSpec, q: &MomentQuery) -> Result<Complex64> {
    Ok(moments_g_with(spec, q, &PrecisionPolicy::default())?.value)
}

/// As [`moments_g`], reporting the tier that produced the value.
///
/// At `z = 0` with `N' >= 2` the prefactor and determinant vanish together.
/// `G_nu` is a polynomial of degree `nu N'` in `z`, so its value at the
/// origin is the mean over `nu N' + 1` equally spaced points of a circle.
pub fn moments_g_with(
    spec: &ValidatedSpec,
    q: &MomentQuery,
    policy: &PrecisionPolicy,
) -> Result<Escalated<Complex64>> {
    if q.z == Complex64::new(0.0, 0.0) && pair_count(spec) > 0 {
        let k = q.nu as usize * spec.n_prime + 1;
        let radius = spec.mean_trace() / spec.n_prime as f64;
        let mut sum = Complex64::new(0.0, 0.0);
        let mut abs_sum = 0.0;
        let mut out = Escalated {
            value: sum,
            bits: policy.base_precision,
            condition: 1.0,
            attempts: 0,
        };
        for j in 0..k {
            let z = Complex64::from_polar(radius, 2.0 * PI * j as f64 / k as f64);
            let r = moments_at(spec, &MomentQuery::new(q.nu, z), policy)?;
            sum += r.value;
            abs_sum += r.value.norm();
            out.bits = out.bits.max(r.bits);
            out.condition = out.condition.max(r.condition);
            out.attempts += r.attempts;
        }
        out.value = sum / k as f64;
        out.condition *= abs_sum / sum.norm();
        return Ok(out);
    }
    moments_at(spec, q, policy)
}

fn moments_at(spec: &ValidatedSpec, q: &MomentQuery, policy: &PrecisionPolicy) -> Result<Escalated<Complex64>> {
    let pre = prefactors(spec, q.nu, q.z)?;
    let mats = [build_l(spec, q)];
    run_escalating(
        &DetSum {
            mats: &mats,
            scale: pre.scale(),
            reference: None,
        },
        policy,
    )
}

/// Expected number of eigenvalues below `lambda`.
pub fn cdf_c(spec: &ValidatedSpec, lambda: f64) -> Result<f64> {
    Ok(cdf_c_with(spec, lambda, &PrecisionPolicy::default())?.value)
}

/// As [`cdf_c`], unclamped, with the tier that produced it. The error is
/// controlled relative to `N'`.
pub fn cdf_c_with(spec: &ValidatedSpec, lambda: f64, policy: &PrecisionPolicy) -> Result<Escalated<f64>> {
    check_guard(spec, lambda)?;
    let pre = prefactors(spec, 0, Complex64::new(lambda, 0.0))?;
    let mats = (0..spec.n)
        .map(|n| build_k(spec, n, lambda))
        .collect::<Result<Vec<_>>>()?;
    let np = spec.n_prime as f64;
    let r = run_escalating(
        &DetSum {
            mats: &mats,
            scale: pre.scale(),
            reference: Some(np),
        },
        policy,
    )?;
    Ok(Escalated {
        value: np - r.value.re,
        bits: r.bits,
        condition: r.condition,
        attempts: r.attempts,
    })
}

/// Expected number of eigenvalues per unit `lambda`.
pub fn density_rho(spec: &ValidatedSpec, lambda: f64) -> Result<f64> {
    Ok(density_rho_with(spec, lambda, &PrecisionPolicy::default())?.value)
}

/// Density magnitude below which a negative value is rounding residue.
pub fn negative_tolerance(spec: &ValidatedSpec) -> f64 {
    let amax = spec.a.iter().copied().fold(0.0, f64::max);
    let bmax = spec.b.iter().copied().fold(0.0, f64::max);
    1e-9 * spec.n_prime as f64 * amax * bmax
}

/// As [`density_rho`], with the tier that produced it. Negative residue
/// within [`negative_tolerance`] is reported as zero.
pub fn density_rho_with(spec: &ValidatedSpec, lambda: f64, policy: &PrecisionPolicy) -> Result<Escalated<f64>> {
    let r = density_raw(spec, lambda, policy)?;
    if r.value < 0.0 {
        if r.value < -negative_tolerance(spec) {
            return Err(Error::SignResidue { value: r.value });
        }
        return Ok(Escalated { value: 0.0, ..r });
    }
    Ok(r)
}

fn density_raw(spec: &ValidatedSpec, lambda: f64, policy: &PrecisionPolicy) -> Result<Escalated<f64>> {
    check_guard(spec, lambda)?;
    let pre = prefactors(spec, 0, Complex64::new(lambda, 0.0))?;
    let mut mats = Vec::with_capacity(spec.n * spec.n);
    for n in 0..spec.n {
        mats.push(build_ktilde(spec, n, lambda)?);
        // With a single column of kernels, rows n and m of T are parallel.
        if spec.n_prime > 1 {
            for m in (0..spec.n).filter(|&m| m != n) {
                mats.push(build_t(spec, n, m, lambda)?);
            }
        }
    }
    let r = run_escalating(
        &DetSum {
            mats: &mats,
            scale: pre.scale(),
            reference: None,
        },
        policy,
    )?;
    Ok(Escalated {
        value: r.value.re,
        bits: r.bits,
        condition: r.condition,
        attempts: r.attempts,
    })
}

/// Evaluation record for one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMeta {
    pub precision_bits: u32,
    pub condition: f64,
    pub attempts: u32,
    /// Counting function before clamping to `[0, N']`.
    pub raw_cdf: f64,
    pub error: Option<Error>,
}

/// Density and counting function sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCurve {
    pub grid: EvalGrid,
    pub n_prime: usize,
    pub rho: Vec<f64>,
    /// Counting function clamped to `[0, N']`.
    pub cdf: Vec<f64>,
    pub meta: Vec<PointMeta>,
}

impl SpectralCurve {
    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    /// Points whose evaluation failed, with their errors.
    pub fn failures(&self) -> impl Iterator<Item = (usize, &Error)> {
        self.meta
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.error.as_ref().map(|e| (i, e)))
    }
}

fn point(spec: &ValidatedSpec, lambda: f64, policy: &PrecisionPolicy) -> (f64, f64, PointMeta) {
    let np = spec.n_prime as f64;
    let cdf = cdf_c_with(spec, lambda, policy);
    let rho = density_rho_with(spec, lambda, policy);
    match (cdf, rho) {
        (Ok(c), Ok(r)) => (
            r.value,
            c.value.clamp(0.0, np),
            PointMeta {
                precision_bits: c.bits.max(r.bits),
                condition: c.condition.max(r.condition),
                attempts: c.attempts + r.attempts,
                raw_cdf: c.value,
                error: None,
            },
        ),
        (c, r) => {
            let error = c.as_ref().err().or(r.as_ref().err()).cloned();
            let bits = match &error {
                Some(Error::PrecisionExhausted { bits, .. }) => *bits,
                _ => 0,
            };
            (
                r.map_or(f64::NAN, |r| r.value),
                c.as_ref().map_or(f64::NAN, |c| c.value.clamp(0.0, np)),
                PointMeta {
                    precision_bits: bits,
                    condition: f64::INFINITY,
                    attempts: 0,
                    raw_cdf: c.map_or(f64::NAN, |c| c.value),
                    error,
                },
            )
        }
    }
}

/// Evaluates density and counting function at every grid point. Points run
/// in parallel; a failing point is recorded in its metadata with NaN values.
pub fn curve(spec: &ValidatedSpec, grid: &EvalGrid, policy: &PrecisionPolicy) -> SpectralCurve {
    let rows: Vec<(f64, f64, PointMeta)> = grid
        .points()
        .par_iter()
        .map(|&lambda| point(spec, lambda, policy))
        .collect();
    let mut rho = Vec::with_capacity(rows.len());
    let mut cdf = Vec::with_capacity(rows.len());
    let mut meta = Vec::with_capacity(rows.len());
    for (r, c, m) in rows {
        rho.push(r);
        cdf.push(c);
        meta.push(m);
    }
    SpectralCurve {
        grid: grid.clone(),
        n_prime: spec.n_prime,
        rho,
        cdf,
        meta,
    }
}

/// `int f(lambda) rho(lambda) dlambda` by the trapezoid rule in
/// `u = ln lambda`. The mass below the first grid point is taken as
/// `f(lambda_1 / 2) C(lambda_1)`.
pub fn linear_statistic(curve: &SpectralCurve, f: impl Fn(f64) -> f64) -> Result<f64> {
    let np = curve.n_prime as f64;
    let reached = curve.meta.last().map_or(f64::NAN, |m| m.raw_cdf);
    if !(reached >= np - MASS_TOLERANCE) {
        return Err(Error::MassDeficit {
            reached,
            required: np - MASS_TOLERANCE,
        });
    }
    if let Some((_, e)) = curve.failures().next() {
        return Err(e.clone());
    }
    let x = curve.grid.points();
    let g: Vec<f64> = x.iter().zip(&curve.rho).map(|(&l, &r)| f(l) * r * l).collect();
    let mut total = f(x[0] / 2.0) * curve.meta[0].raw_cdf.max(0.0);
    for k in 1..x.len() {
        total += 0.5 * (g[k] + g[k - 1]) * (x[k] / x[k - 1]).ln();
    }
    Ok(total)
}

/// Points per decade of [`adaptive_grid`].
pub const GRID_DENSITY: f64 = 100.0;

/// Geometric grid from far inside the bulk onset out to where the counting
/// function is within `1e-7` of `N'`.
pub fn adaptive_grid(spec: &ValidatedSpec, policy: &PrecisionPolicy) -> Result<EvalGrid> {
    let guard = spec.default_lambda_guard();
    let start = (1e-4 * spec.fine_scale()).max(10.0 * guard);
    let mut stop = 25.0 * spec.coarse_scale();
    for _ in 0..8 {
        if cdf_c_with(spec, stop, policy)?.value >= spec.n_prime as f64 - 1e-7 {
            break;
        }
        stop *= 2.0;
    }
    let decades = (stop / start).log10();
    let count = (GRID_DENSITY * decades).ceil() as usize + 1;
    EvalGrid::geometric(start, stop, count, guard)
}
