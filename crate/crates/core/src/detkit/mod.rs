//! Determinant machinery: the four structured matrices of the spectral
//! formulas, Vandermonde products, and a pivoted elimination that escalates
//! through arithmetic tiers until its condition estimate is acceptable.
//!
//! Matrices are stored symbolically as [`Entry`] descriptors built from the
//! exact double inputs (`a_i`, `b_j`, `lambda`, `z`). Each tier materializes
//! the entries itself, so raising the precision also removes the rounding
//! of the entries, not only of the elimination.
//!
//! Every row is divided by a power of two close to its largest entry before
//! elimination; the exponents form the row-scale ledger and are added back
//! to the log-magnitude of the result. Entries that mix `(N-1)!` with
//! `exp(-a b lambda)` therefore never leave the range of a double.

pub mod big;
pub mod dd;
pub mod scalar;

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gfun::{g_log_parts, g_tier, ln_factorial, GKernelParams};
use crate::spectra::{MomentQuery, ValidatedSpec};
use big::Big;
use dd::Dd;
use scalar::{ldexp, Cx, Field, Real};

const LN2: f64 = std::f64::consts::LN_2;

/// A matrix element described by exact inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Zero,
    /// A plain number.
    Value(f64),
    /// `base^power`.
    Monomial { base: f64, power: u32 },
    /// `weight * g(a b; alpha, z)` with ambient dimension `n_ambient`.
    Kernel {
        a: f64,
        b: f64,
        alpha: u32,
        z: Complex64,
        n_ambient: u32,
        weight: u32,
    },
    /// `order! * exp(-a b lambda)`, times `(a b + shift / lambda)` when a
    /// shift is present.
    Decay {
        a: f64,
        b: f64,
        lambda: f64,
        order: u32,
        shift: Option<f64>,
    },
    /// `sum_k coeffs[k] (a b)^k`.
    Series { a: f64, b: f64, coeffs: Arc<[f64]> },
}

/// Sign or phase together with a natural-log magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogScalar {
    pub phase: Complex64,
    pub log_magnitude: f64,
}

impl LogScalar {
    pub const ZERO: LogScalar = LogScalar {
        phase: Complex64::new(1.0, 0.0),
        log_magnitude: f64::NEG_INFINITY,
    };

    pub fn from_real(x: f64) -> Self {
        LogScalar {
            phase: Complex64::new(if x < 0.0 { -1.0 } else { 1.0 }, 0.0),
            log_magnitude: x.abs().ln(),
        }
    }

    pub fn from_complex(z: Complex64) -> Self {
        let r = z.norm();
        if r == 0.0 {
            return LogScalar::ZERO;
        }
        LogScalar {
            phase: z / r,
            log_magnitude: r.ln(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.log_magnitude == f64::NEG_INFINITY
    }

    pub fn value(&self) -> Complex64 {
        if self.is_zero() {
            return Complex64::new(0.0, 0.0);
        }
        self.phase * self.log_magnitude.exp()
    }

    pub fn mul(&self, o: &LogScalar) -> LogScalar {
        LogScalar {
            phase: self.phase * o.phase,
            log_magnitude: self.log_magnitude + o.log_magnitude,
        }
    }

    pub fn inv(&self) -> LogScalar {
        LogScalar {
            phase: self.phase.conj(),
            log_magnitude: -self.log_magnitude,
        }
    }
}

impl Entry {
    pub fn is_real(&self) -> bool {
        match self {
            Entry::Kernel { z, .. } => z.im == 0.0,
            _ => true,
        }
    }

    /// Double-precision phase / log-magnitude estimate and a cancellation
    /// factor bounding how much the tier's rounding is amplified while
    /// forming the entry.
    pub fn estimate(&self) -> (LogScalar, f64) {
        match self {
            Entry::Zero => (LogScalar::ZERO, 1.0),
            Entry::Value(v) => (LogScalar::from_real(*v), 1.0),
            Entry::Monomial { base, power } => {
                if *power == 0 {
                    return (LogScalar::from_real(1.0), 1.0);
                }
                let sign = if *base < 0.0 && power % 2 == 1 { -1.0 } else { 1.0 };
                (
                    LogScalar {
                        phase: Complex64::new(sign, 0.0),
                        log_magnitude: *power as f64 * base.abs().ln(),
                    },
                    1.0 + *power as f64,
                )
            }
            Entry::Kernel {
                a,
                b,
                alpha,
                z,
                n_ambient,
                weight,
            } => {
                let p = GKernelParams::new(a * b, *alpha, *z, *n_ambient);
                let (phase, log_magnitude, cancellation) = g_log_parts(&p);
                (
                    LogScalar {
                        phase,
                        log_magnitude: log_magnitude + (*weight as f64).ln(),
                    },
                    cancellation * (1.0 + *alpha as f64),
                )
            }
            Entry::Decay {
                a,
                b,
                lambda,
                order,
                shift,
            } => {
                let x = a * b;
                let mut l = ln_factorial(*order) - x * lambda;
                if let Some(s) = shift {
                    l += (x + s / lambda).ln();
                }
                (
                    LogScalar {
                        phase: Complex64::new(1.0, 0.0),
                        log_magnitude: l,
                    },
                    1.0 + 2.0 * (x * lambda).abs(),
                )
            }
            Entry::Series { a, b, coeffs } => {
                let x = a * b;
                let mut sum = 0.0;
                let mut abs_sum = 0.0;
                let mut p = 1.0;
                for c in coeffs.iter() {
                    sum += c * p;
                    abs_sum += (c * p).abs();
                    p *= x;
                }
                let cancellation = if sum == 0.0 { f64::INFINITY } else { abs_sum / sum.abs() };
                (LogScalar::from_real(sum), cancellation)
            }
        }
    }

    /// The entry times `2^-shift`, in tier `R`.
    fn eval<R: Real>(&self, bits: u32, shift: i64) -> Cx<R> {
        let real = |v: R| Cx::from_real(v, bits);
        let x_of = |a: f64, b: f64| R::from_f64(a, bits) * R::from_f64(b, bits);
        match self {
            Entry::Zero => real(R::zero(bits)),
            Entry::Value(v) => real(R::from_f64(*v, bits).mul_pow2(-shift)),
            Entry::Monomial { base, power } => {
                let base = R::from_f64(*base, bits);
                let mut v = R::one(bits);
                for _ in 0..*power {
                    v = v * base.clone();
                }
                real(v.mul_pow2(-shift))
            }
            Entry::Kernel {
                a,
                b,
                alpha,
                z,
                n_ambient,
                weight,
            } => {
                let g: Cx<R> = g_tier(*a, *b, *alpha, *z, *n_ambient, bits);
                g.scale(&R::from_u64(*weight as u64, bits)).mul_pow2(-shift)
            }
            Entry::Decay {
                a,
                b,
                lambda,
                order,
                shift: lambda_shift,
            } => {
                let x = x_of(*a, *b);
                let lam = R::from_f64(*lambda, bits);
                let mut v = (-(x.clone() * lam.clone())).exp_scaled(-shift);
                for k in 2..=*order as u64 {
                    v = v * R::from_u64(k, bits);
                }
                if let Some(s) = lambda_shift {
                    v = v * (x + R::from_f64(*s, bits) / lam);
                }
                real(v)
            }
            Entry::Series { a, b, coeffs } => {
                let x = x_of(*a, *b);
                let mut acc = R::zero(bits);
                for c in coeffs.iter().rev() {
                    acc = acc * x.clone() + R::from_f64(*c, bits);
                }
                real(acc.mul_pow2(-shift))
            }
        }
    }

    fn cache_key(&self, shift: i64) -> Option<[u64; 9]> {
        let f = |v: f64| v.to_bits();
        let key = match self {
            Entry::Zero => [0, 0, 0, 0, 0, 0, 0, 0, 0],
            Entry::Value(v) => [1, f(*v), 0, 0, 0, 0, 0, 0, 0],
            Entry::Monomial { base, power } => [2, f(*base), *power as u64, 0, 0, 0, 0, 0, 0],
            Entry::Kernel {
                a,
                b,
                alpha,
                z,
                n_ambient,
                weight,
            } => [
                3,
                f(*a),
                f(*b),
                *alpha as u64,
                f(z.re),
                f(z.im),
                *n_ambient as u64,
                *weight as u64,
                0,
            ],
            Entry::Decay {
                a,
                b,
                lambda,
                order,
                shift,
            } => [
                4,
                f(*a),
                f(*b),
                f(*lambda),
                *order as u64,
                shift.map_or(u64::MAX, f),
                0,
                0,
                0,
            ],
            Entry::Series { .. } => return None,
        };
        let mut key = key;
        key[8] = shift as u64;
        Some(key)
    }
}

/// Which structured matrix a [`DetMatrix`] instance is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    /// Moment matrix for exponent `nu`.
    L { nu: u32 },
    /// Counting-function matrix with special row `n`.
    K { n: usize },
    /// Density matrix with the re-weighted special row `n`.
    Ktilde { n: usize },
    /// Density matrix with special row `n` and order-lowered row `m`.
    T { n: usize, m: usize },
    /// `[x_j^(i-1)]`.
    Vandermonde,
    General,
}

/// A square matrix of symbolic entries, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DetMatrix {
    kind: MatrixKind,
    dim: usize,
    entries: Vec<Entry>,
}

impl DetMatrix {
    pub fn general(dim: usize, entries: Vec<Entry>) -> Result<Self> {
        Self::with_kind(MatrixKind::General, dim, entries)
    }

    pub fn from_values(dim: usize, values: &[f64]) -> Result<Self> {
        Self::general(dim, values.iter().map(|&v| Entry::Value(v)).collect())
    }

    /// The explicit Vandermonde matrix with rows `i` holding `x_j^(i-1)`.
    pub fn vandermonde_matrix(x: &[f64]) -> Self {
        let v = x.len();
        let entries = (0..v)
            .flat_map(|i| x.iter().map(move |&xj| Entry::Monomial { base: xj, power: i as u32 }))
            .collect();
        DetMatrix {
            kind: MatrixKind::Vandermonde,
            dim: v,
            entries,
        }
    }

    fn with_kind(kind: MatrixKind, dim: usize, entries: Vec<Entry>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::Precondition(format!(
                "matrix of dimension {dim} needs {} entries, got {}",
                dim * dim,
                entries.len()
            )));
        }
        Ok(DetMatrix { kind, dim, entries })
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> &Entry {
        &self.entries[i * self.dim + j]
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn is_real(&self) -> bool {
        self.entries.iter().all(Entry::is_real)
    }

    /// Phase / log-magnitude of every entry, row-major.
    pub fn values(&self) -> Vec<LogScalar> {
        self.entries.iter().map(|e| e.estimate().0).collect()
    }

    /// Power-of-two exponent factored out of each row before elimination.
    pub fn row_scales(&self) -> Vec<i64> {
        self.scan().0
    }

    fn scan(&self) -> (Vec<i64>, f64) {
        let mut shifts = Vec::with_capacity(self.dim);
        let mut kappa: f64 = 1.0;
        for row in self.entries.chunks(self.dim) {
            let mut top = f64::NEG_INFINITY;
            for e in row {
                let (v, k) = e.estimate();
                if !v.is_zero() {
                    top = top.max(v.log_magnitude / LN2);
                    kappa = kappa.max(k);
                }
            }
            shifts.push(if top.is_finite() { top.floor() as i64 } else { 0 });
        }
        (shifts, kappa)
    }

    /// Determinant in tier `R` on the row-scaled matrix.
    pub(crate) fn det_at<R: Real>(&self, bits: u32, cache: &mut EntryCache<R>) -> TierDet<R> {
        let (shifts, kappa) = self.scan();
        let n = self.dim;
        let log2_scale: i64 = shifts.iter().sum();
        let values: Vec<Cx<R>> = self
            .entries
            .iter()
            .enumerate()
            .map(|(idx, e)| cache.get(e, bits, shifts[idx / n]))
            .collect();
        let elim = if self.is_real() {
            let reals: Vec<R> = values.into_iter().map(|c| c.re).collect();
            let e = eliminate(reals, n);
            Elim {
                det: Cx::from_real(e.det, bits),
                exponent: e.exponent,
                pivot_span: e.pivot_span,
                singular: e.singular,
                finite: e.finite,
            }
        } else {
            eliminate(values, n)
        };
        TierDet {
            mantissa: elim.det,
            log2_scale: log2_scale + elim.exponent,
            pivot_span: elim.pivot_span,
            kappa,
            zero: elim.singular,
            finite: elim.finite,
        }
    }
}

/// Memo of materialized entries within one tier attempt.
pub(crate) struct EntryCache<R> {
    map: HashMap<[u64; 9], Cx<R>>,
}

impl<R: Real> EntryCache<R> {
    pub(crate) fn new() -> Self {
        EntryCache { map: HashMap::new() }
    }

    fn get(&mut self, e: &Entry, bits: u32, shift: i64) -> Cx<R> {
        match e.cache_key(shift) {
            Some(key) => self
                .map
                .entry(key)
                .or_insert_with(|| e.eval(bits, shift))
                .clone(),
            None => e.eval(bits, shift),
        }
    }
}

struct Elim<F> {
    det: F,
    exponent: i64,
    pivot_span: f64,
    singular: bool,
    finite: bool,
}

/// Gaussian elimination with partial pivoting on magnitude. The running
/// product of pivots is renormalized to `[1, 2)` after every step.
fn eliminate<F: Field>(mut m: Vec<F>, n: usize) -> Elim<F> {
    let mut det: Option<F> = None;
    let mut exponent = 0i64;
    let mut negate = false;
    let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..n {
        let mut best = k;
        let mut best_mag = m[k * n + k].log2_abs();
        for i in k + 1..n {
            let mag = m[i * n + k].log2_abs();
            if mag > best_mag {
                best = i;
                best_mag = mag;
            }
        }
        if best_mag.is_nan() || best_mag == f64::INFINITY {
            return Elim {
                det: m[0].clone(),
                exponent: 0,
                pivot_span: f64::INFINITY,
                singular: false,
                finite: false,
            };
        }
        if best_mag == f64::NEG_INFINITY {
            let zero = m[0].clone() - m[0].clone();
            return Elim {
                det: zero,
                exponent: 0,
                pivot_span: f64::INFINITY,
                singular: true,
                finite: m.iter().all(Field::is_finite),
            };
        }
        if best != k {
            for j in 0..n {
                m.swap(k * n + j, best * n + j);
            }
            negate = !negate;
        }
        hi = hi.max(best_mag);
        lo = lo.min(best_mag);
        let pivot = m[k * n + k].clone();
        for i in k + 1..n {
            if m[i * n + k].is_zero() {
                continue;
            }
            let f = m[i * n + k].clone() / pivot.clone();
            for j in k + 1..n {
                let v = m[i * n + j].clone() - f.clone() * m[k * n + j].clone();
                m[i * n + j] = v;
            }
        }
        let prod = match det.take() {
            None => pivot,
            Some(d) => d * pivot,
        };
        let e = prod.log2_abs().floor() as i64;
        exponent += e;
        det = Some(prod.mul_pow2(-e));
    }
    let det = det.expect("dimension >= 1");
    let finite = det.is_finite();
    Elim {
        det: if negate { -det } else { det },
        exponent,
        pivot_span: hi - lo,
        singular: false,
        finite,
    }
}

/// A determinant in tier `R`: `mantissa * 2^log2_scale`.
#[derive(Debug, Clone)]
pub(crate) struct TierDet<R> {
    pub mantissa: Cx<R>,
    pub log2_scale: i64,
    /// `log2` of the ratio of largest to smallest pivot magnitude.
    pub pivot_span: f64,
    pub kappa: f64,
    pub zero: bool,
    pub finite: bool,
}

impl<R: Real> TierDet<R> {
    /// Pivot-ratio condition estimate times the entry cancellation factor.
    /// A vanishing pivot is only trusted on the last tier of the ladder.
    pub fn condition(&self, final_tier: bool) -> f64 {
        if !self.finite {
            return f64::INFINITY;
        }
        if self.zero {
            return if final_tier { 1.0 } else { f64::INFINITY };
        }
        self.pivot_span.exp2() * self.kappa
    }

    pub fn to_log_det(&self, bits: u32, final_tier: bool) -> LogDet {
        if self.zero {
            return LogDet::zero(bits);
        }
        let (phase, l2) = self.mantissa.polar_f64();
        LogDet {
            phase,
            log_magnitude: (l2 + self.log2_scale as f64) * LN2,
            is_zero: false,
            precision_bits: bits,
            condition: self.condition(final_tier),
        }
    }
}

/// Determinant as phase and natural-log magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDet {
    /// `+1`/`-1` for real matrices, a unit complex number otherwise.
    pub phase: Complex64,
    pub log_magnitude: f64,
    pub is_zero: bool,
    pub precision_bits: u32,
    pub condition: f64,
}

impl LogDet {
    fn zero(bits: u32) -> Self {
        LogDet {
            phase: Complex64::new(1.0, 0.0),
            log_magnitude: f64::NEG_INFINITY,
            is_zero: true,
            precision_bits: bits,
            condition: 1.0,
        }
    }

    pub fn sign(&self) -> f64 {
        if self.is_zero {
            0.0
        } else if self.phase.re < 0.0 {
            -1.0
        } else {
            1.0
        }
    }

    pub fn value(&self) -> Complex64 {
        if self.is_zero {
            return Complex64::new(0.0, 0.0);
        }
        self.phase * self.log_magnitude.exp()
    }

    pub fn as_log_scalar(&self) -> LogScalar {
        if self.is_zero {
            return LogScalar::ZERO;
        }
        LogScalar {
            phase: self.phase,
            log_magnitude: self.log_magnitude,
        }
    }
}

/// One rung of the precision ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Double,
    DoubleDouble,
    Big(u32),
}

impl Tier {
    pub fn bits(&self) -> u32 {
        match self {
            Tier::Double => 53,
            Tier::DoubleDouble => 106,
            Tier::Big(b) => *b,
        }
    }

    fn for_bits(bits: u32) -> Tier {
        match bits {
            0..=53 => Tier::Double,
            54..=106 => Tier::DoubleDouble,
            b => Tier::Big(b),
        }
    }
}

/// When and how far to raise the working precision.
///
/// A tier of `p` bits accepts a result whose condition estimate is at most
/// `escalation_threshold * 2^(p - 53)`, so the threshold is the largest
/// amplification tolerated in double precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionPolicy {
    pub base_precision: u32,
    pub escalation_threshold: f64,
    pub max_precision: u32,
}

pub const DEFAULT_ESCALATION_THRESHOLD: f64 = 1e4;
pub const DEFAULT_MAX_PRECISION: u32 = 256;

impl Default for PrecisionPolicy {
    fn default() -> Self {
        PrecisionPolicy {
            base_precision: 53,
            escalation_threshold: DEFAULT_ESCALATION_THRESHOLD,
            max_precision: DEFAULT_MAX_PRECISION,
        }
    }
}

impl PrecisionPolicy {
    pub fn new(base_precision: u32, escalation_threshold: f64, max_precision: u32) -> Result<Self> {
        if base_precision > max_precision {
            return Err(Error::Precondition(format!(
                "base precision {base_precision} exceeds max precision {max_precision}"
            )));
        }
        if !(escalation_threshold >= 1.0) {
            return Err(Error::Precondition(format!(
                "escalation threshold must be >= 1, got {escalation_threshold}"
            )));
        }
        Ok(PrecisionPolicy {
            base_precision,
            escalation_threshold,
            max_precision,
        })
    }

    /// Fixed double precision, never escalating.
    pub fn double_only() -> Self {
        PrecisionPolicy {
            base_precision: 53,
            escalation_threshold: f64::MAX,
            max_precision: 53,
        }
    }

    /// Tiers tried in order: double, double-double, then software floats
    /// from 256 bits doubling up to `max_precision`.
    pub fn ladder(&self) -> Vec<Tier> {
        let max = self.max_precision.max(self.base_precision);
        let mut tiers = vec![Tier::for_bits(self.base_precision)];
        loop {
            let next = match *tiers.last().expect("non-empty") {
                Tier::Double if max >= 106 => Tier::DoubleDouble,
                Tier::DoubleDouble if max > 106 => Tier::Big(max.min(256)),
                Tier::Big(b) if b < max => Tier::Big((b * 2).min(max)),
                _ => break,
            };
            tiers.push(next);
        }
        tiers
    }

    pub fn with_threshold(self, escalation_threshold: f64) -> Self {
        PrecisionPolicy {
            escalation_threshold,
            ..self
        }
    }

    pub fn accepts(&self, condition: f64, bits: u32) -> bool {
        condition.is_finite()
            && condition <= self.escalation_threshold * 2f64.powi(bits as i32 - 53)
    }
}

/// A computation that can be repeated at any tier.
pub(crate) trait TierJob {
    type Output;
    /// The value and its condition estimate at the tier.
    fn run<R: Real>(&self, bits: u32, final_tier: bool) -> Result<(Self::Output, f64)>;
}

/// A value together with the tier that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Escalated<T> {
    pub value: T,
    pub bits: u32,
    pub condition: f64,
    pub attempts: u32,
}

pub(crate) fn run_escalating<J: TierJob>(job: &J, policy: &PrecisionPolicy) -> Result<Escalated<J::Output>> {
    let mut last = (f64::INFINITY, policy.base_precision);
    let ladder = policy.ladder();
    for (k, tier) in ladder.iter().enumerate() {
        let attempts = k as u32 + 1;
        let bits = tier.bits();
        let last_tier = k + 1 == ladder.len();
        let out = match tier {
            Tier::Double => job.run::<f64>(bits, last_tier),
            Tier::DoubleDouble => job.run::<Dd>(bits, last_tier),
            Tier::Big(b) => job.run::<Big>(*b, last_tier),
        };
        match out {
            Ok((value, condition)) => {
                if policy.accepts(condition, bits) {
                    return Ok(Escalated {
                        value,
                        bits,
                        condition,
                        attempts,
                    });
                }
                last = (condition, bits);
            }
            Err(Error::OverflowEscalation { .. }) => last = (f64::INFINITY, bits),
            Err(e) => return Err(e),
        }
    }
    Err(Error::PrecisionExhausted {
        condition: last.0,
        bits: last.1,
    })
}

struct SingleDet<'a>(&'a DetMatrix);

impl TierJob for SingleDet<'_> {
    type Output = LogDet;

    fn run<R: Real>(&self, bits: u32, final_tier: bool) -> Result<(LogDet, f64)> {
        let d = self.0.det_at::<R>(bits, &mut EntryCache::new());
        let cond = d.condition(final_tier);
        Ok((d.to_log_det(bits, final_tier), cond))
    }
}

/// Sign / log-magnitude determinant with precision escalation.
pub fn logdet(mat: &DetMatrix, policy: &PrecisionPolicy) -> Result<LogDet> {
    let r = run_escalating(&SingleDet(mat), policy)?;
    Ok(r.value)
}

/// Double-precision determinant of plain row-major values, or `None` when
/// the condition estimate is beyond what `policy` accepts at 53 bits.
pub fn logdet_f64(values: &[f64], dim: usize, policy: &PrecisionPolicy) -> Option<LogDet> {
    let mut m = values.to_vec();
    let mut log2_scale = 0i64;
    for row in m.chunks_mut(dim) {
        let top = row.iter().fold(0.0f64, |t, x| t.max(x.abs()));
        if top == 0.0 {
            return None;
        }
        let k = top.log2().floor() as i64;
        row.iter_mut().for_each(|x| *x = ldexp(*x, -k));
        log2_scale += k;
    }
    let e = eliminate(m, dim);
    let condition = e.pivot_span.exp2();
    if e.singular || !e.finite || !policy.accepts(condition, 53) {
        return None;
    }
    Some(LogDet {
        phase: Complex64::new(e.det.signum(), 0.0),
        log_magnitude: (e.det.abs().log2() + (log2_scale + e.exponent) as f64) * LN2,
        is_zero: false,
        precision_bits: 53,
        condition,
    })
}

/// `prod_{i<j} (x_j - x_i)` in product form.
pub fn vandermonde(x: &[f64]) -> Result<LogDet> {
    if x.is_empty() {
        return Err(Error::Precondition("Vandermonde product needs at least one value".into()));
    }
    let mut negative = false;
    let mut log_magnitude = 0.0;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let d = x[j] - x[i];
            if d == 0.0 {
                return Err(Error::ExactZero("Vandermonde product of repeated values"));
            }
            negative ^= d < 0.0;
            log_magnitude += d.abs().ln();
        }
    }
    Ok(LogDet {
        phase: Complex64::new(if negative { -1.0 } else { 1.0 }, 0.0),
        log_magnitude,
        is_zero: false,
        precision_bits: 53,
        condition: 1.0,
    })
}

fn kernel_row(spec: &ValidatedSpec, i: usize, alpha: u32, z: Complex64, weight: u32) -> Vec<Entry> {
    let n = spec.n;
    (0..n)
        .map(|j| {
            if j < spec.n_prime {
                Entry::Kernel {
                    a: spec.a[i],
                    b: spec.b[j],
                    alpha,
                    z,
                    n_ambient: n as u32,
                    weight,
                }
            } else {
                Entry::Monomial {
                    base: spec.a[i],
                    power: j as u32,
                }
            }
        })
        .collect()
}

fn decay_row(spec: &ValidatedSpec, i: usize, lambda: f64, shift: Option<f64>) -> Vec<Entry> {
    (0..spec.n)
        .map(|j| {
            if j < spec.n_prime {
                Entry::Decay {
                    a: spec.a[i],
                    b: spec.b[j],
                    lambda,
                    order: spec.n as u32 - 1,
                    shift,
                }
            } else {
                Entry::Zero
            }
        })
        .collect()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Precondition(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

fn check_row(spec: &ValidatedSpec, n: usize) -> Result<()> {
    if n >= spec.n {
        return Err(Error::Index(format!("row {n} out of range for dimension {}", spec.n)));
    }
    Ok(())
}

/// `L_ij = g(a_i b_j; nu + N, z)` for `j < N'`, `a_i^j` otherwise
/// (zero-based column index).
pub fn build_l(spec: &ValidatedSpec, q: &MomentQuery) -> DetMatrix {
    let alpha = q.nu + spec.n as u32;
    let entries = (0..spec.n)
        .flat_map(|i| kernel_row(spec, i, alpha, q.z, 1))
        .collect();
    DetMatrix {
        kind: MatrixKind::L { nu: q.nu },
        dim: spec.n,
        entries,
    }
}

fn k_rows(spec: &ValidatedSpec, n: usize, lambda: f64, shift: Option<f64>) -> Vec<Entry> {
    let z = Complex64::new(lambda, 0.0);
    (0..spec.n)
        .flat_map(|i| {
            if i == n {
                decay_row(spec, i, lambda, shift)
            } else {
                kernel_row(spec, i, spec.n as u32, z, 1)
            }
        })
        .collect()
}

/// `K^(n)`: kernel rows of order `N` at `z = lambda`, with row `n` replaced
/// by `(N-1)! exp(-a_n b_j lambda)` (zero beyond column `N'`).
pub fn build_k(spec: &ValidatedSpec, n: usize, lambda: f64) -> Result<DetMatrix> {
    check_row(spec, n)?;
    check_lambda(lambda)?;
    Ok(DetMatrix {
        kind: MatrixKind::K { n },
        dim: spec.n,
        entries: k_rows(spec, n, lambda, None),
    })
}

/// `K~^(n)`: `K^(n)` with row `n` multiplied by `a_n b_j + (N'(N'-1)/2) / lambda`.
pub fn build_ktilde(spec: &ValidatedSpec, n: usize, lambda: f64) -> Result<DetMatrix> {
    check_row(spec, n)?;
    check_lambda(lambda)?;
    let pairs = (spec.n_prime * (spec.n_prime - 1) / 2) as f64;
    Ok(DetMatrix {
        kind: MatrixKind::Ktilde { n },
        dim: spec.n,
        entries: k_rows(spec, n, lambda, Some(pairs)),
    })
}

/// `T^(nm)`: `K^(n)` with row `m` replaced by the `lambda`-derivative of its
/// kernel entries up to sign, `(N-1) g(a_m b_j; N-1, lambda)`, and zero
/// beyond column `N'`.
pub fn build_t(spec: &ValidatedSpec, n: usize, m: usize, lambda: f64) -> Result<DetMatrix> {
    if spec.n < 2 {
        return Err(Error::Precondition("T matrices need N >= 2".into()));
    }
    check_row(spec, n)?;
    check_row(spec, m)?;
    if n == m {
        return Err(Error::Index(format!("T matrix needs distinct rows, got n = m = {n}")));
    }
    check_lambda(lambda)?;
    let dim = spec.n;
    let order = dim as u32 - 1;
    let z = Complex64::new(lambda, 0.0);
    let mut entries = k_rows(spec, n, lambda, None);
    for j in 0..dim {
        entries[m * dim + j] = if j < spec.n_prime {
            Entry::Kernel {
                a: spec.a[m],
                b: spec.b[j],
                alpha: order,
                z,
                n_ambient: dim as u32,
                weight: order,
            }
        } else {
            Entry::Zero
        };
    }
    Ok(DetMatrix {
        kind: MatrixKind::T { n, m },
        dim,
        entries,
    })
}
