//! Exact arithmetic over the S-integers: valuations, S-units, primitive
//! scaling, the truncated zeta series with its Euler cross-check, and
//! finite group orders.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut i = 2u64;
    while i * i <= n {
        if n.is_multiple_of(i) {
            return false;
        }
        i += 1;
    }
    true
}

/// Prime factorization as (prime, exponent) pairs in increasing order.
pub fn factorize(mut n: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut p = 2u64;
    while p * p <= n {
        if n.is_multiple_of(p) {
            let mut e = 0;
            while n.is_multiple_of(p) {
                n /= p;
                e += 1;
            }
            out.push((p, e));
        }
        p += 1;
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}

pub fn mobius(n: u64) -> i32 {
    assert!(n > 0);
    let f = factorize(n);
    if f.iter().any(|&(_, e)| e > 1) {
        0
    } else if f.len().is_multiple_of(2) {
        1
    } else {
        -1
    }
}

pub fn gcd_u64(a: u64, b: u64) -> u64 {
    a.gcd(&b)
}

/// The finite part S_f of a set of places; the real place is implicit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SConfig {
    primes: Vec<u64>,
}

impl SConfig {
    pub fn new(mut primes: Vec<u64>) -> Result<Self> {
        for &p in &primes {
            if !is_prime(p) {
                return Err(Error::NotPrime(p));
            }
        }
        primes.sort_unstable();
        let n = primes.len();
        primes.dedup();
        if primes.len() != n {
            return Err(Error::DuplicatePrime);
        }
        Ok(SConfig { primes })
    }

    pub fn empty() -> Self {
        SConfig { primes: Vec::new() }
    }

    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    pub fn contains(&self, p: u64) -> bool {
        self.primes.binary_search(&p).is_ok()
    }

    pub fn product(&self) -> u64 {
        self.primes.iter().product()
    }

    /// Removes every S-prime factor from `n`.
    pub fn s_free_part(&self, n: &BigInt) -> BigInt {
        let mut m = n.abs();
        if m.is_zero() {
            return m;
        }
        for &p in &self.primes {
            let bp = BigInt::from(p);
            while (&m % &bp).is_zero() {
                m /= &bp;
            }
        }
        m
    }

    pub fn is_s_unit(&self, n: &BigInt) -> bool {
        !n.is_zero() && self.s_free_part(n).is_one()
    }

    pub fn is_s_integer(&self, x: &BigRational) -> bool {
        self.is_s_unit(x.denom())
    }

    pub fn places(&self) -> Vec<Place> {
        std::iter::once(Place::Inf)
            .chain(self.primes.iter().map(|&p| Place::Finite(p)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Place {
    Inf,
    Finite(u64),
}

impl fmt::Display for Place {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Place::Inf => write!(f, "inf"),
            Place::Finite(p) => write!(f, "{p}"),
        }
    }
}

impl FromStr for Place {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "oo" | "infinity" => Ok(Place::Inf),
            t => {
                let p: u64 = t.parse().map_err(|_| Error::Parse(format!("bad place {t:?}")))?;
                if !is_prime(p) {
                    return Err(Error::NotPrime(p));
                }
                Ok(Place::Finite(p))
            }
        }
    }
}

/// v_p of a nonzero integer.
pub fn valuation_int(n: &BigInt, p: u64) -> Option<i64> {
    if n.is_zero() {
        return None;
    }
    let bp = BigInt::from(p);
    let mut m = n.clone();
    let mut v = 0;
    loop {
        let (q, r) = m.div_rem(&bp);
        if !r.is_zero() {
            return Some(v);
        }
        m = q;
        v += 1;
    }
}

/// v_p of a rational; `None` for zero.
pub fn valuation(x: &BigRational, p: u64) -> Option<i64> {
    let vn = valuation_int(x.numer(), p)?;
    let vd = valuation_int(x.denom(), p).unwrap_or(0);
    Some(vn - vd)
}

pub fn pow_rat(p: u64, e: i64) -> BigRational {
    let base = BigInt::from(p).pow(e.unsigned_abs() as u32);
    if e >= 0 {
        BigRational::from_integer(base)
    } else {
        BigRational::new(BigInt::one(), base)
    }
}

pub fn padic_norm_exact(x: &BigRational, p: u64) -> BigRational {
    match valuation(x, p) {
        None => BigRational::zero(),
        Some(v) => pow_rat(p, -v),
    }
}

pub fn padic_norm(x: &BigRational, place: Place) -> f64 {
    match place {
        Place::Inf => rat_to_f64(&x.abs()),
        Place::Finite(p) => rat_to_f64(&padic_norm_exact(x, p)),
    }
}

pub fn rat_to_f64(x: &BigRational) -> f64 {
    if let Some(v) = x.to_f64() {
        if v.is_finite() {
            return v;
        }
    }
    // Shift both parts down until they fit.
    let nb = x.numer().bits() as i64;
    let db = x.denom().bits() as i64;
    let shift_n = (nb - 900).max(0);
    let shift_d = (db - 900).max(0);
    let n = (x.numer() >> shift_n as usize).to_f64().unwrap_or(0.0);
    let d = (x.denom() >> shift_d as usize).to_f64().unwrap_or(1.0);
    n / d * 2f64.powi((shift_n - shift_d) as i32)
}

/// Exact conversion of a finite double to a rational.
pub fn f64_to_rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite float")
}

pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// A rational whose denominator is an S-unit.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SRational {
    value: BigRational,
    ctx: SConfig,
}

impl SRational {
    pub fn new(num: BigInt, den: BigInt, ctx: &SConfig) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::ZeroDenominator);
        }
        Self::from_rational(BigRational::new(num, den), ctx)
    }

    pub fn from_rational(value: BigRational, ctx: &SConfig) -> Result<Self> {
        if !ctx.is_s_unit(value.denom()) {
            return Err(Error::NonSUnitDenominator(value.denom().to_string()));
        }
        Ok(SRational { value, ctx: ctx.clone() })
    }

    pub fn value(&self) -> &BigRational {
        &self.value
    }

    pub fn numer(&self) -> &BigInt {
        self.value.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.value.denom()
    }

    pub fn context(&self) -> &SConfig {
        &self.ctx
    }

    pub fn norm(&self, place: Place) -> f64 {
        padic_norm(&self.value, place)
    }
}

impl fmt::Display for SRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

/// A vector over ℤ_S.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SVector {
    coords: Vec<BigRational>,
    ctx: SConfig,
}

impl SVector {
    pub fn new(coords: Vec<BigRational>, ctx: &SConfig) -> Result<Self> {
        for c in &coords {
            if !ctx.is_s_integer(c) {
                return Err(Error::NonSUnitDenominator(c.denom().to_string()));
            }
        }
        Ok(SVector { coords, ctx: ctx.clone() })
    }

    pub fn coords(&self) -> &[BigRational] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn context(&self) -> &SConfig {
        &self.ctx
    }
}

/// Per-place scale: a positive real radius and an exponent per finite prime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TVector {
    pub t_inf: BigRational,
    pub t_p: Vec<i64>,
}

impl TVector {
    pub fn new(t_inf: BigRational, t_p: Vec<i64>) -> Self {
        TVector { t_inf, t_p }
    }

    pub fn from_f64(t_inf: f64, t_p: Vec<i64>) -> Self {
        TVector { t_inf: f64_to_rat(t_inf), t_p }
    }

    /// |T| = T_∞ ∏ p^{t_p}.
    pub fn abs(&self, ctx: &SConfig) -> f64 {
        self.abs_exact(ctx).map(|r| rat_to_f64(&r)).unwrap_or(f64::NAN)
    }

    pub fn abs_exact(&self, ctx: &SConfig) -> Option<BigRational> {
        if self.t_p.len() != ctx.primes().len() {
            return None;
        }
        let mut out = self.t_inf.clone();
        for (&p, &t) in ctx.primes().iter().zip(&self.t_p) {
            out *= pow_rat(p, t);
        }
        Some(out)
    }

    /// Componentwise T ⪰ other.
    pub fn dominates(&self, other: &TVector) -> bool {
        self.t_inf >= other.t_inf
            && self.t_p.len() == other.t_p.len()
            && self.t_p.iter().zip(&other.t_p).all(|(a, b)| a >= b)
    }
}

pub fn is_in_ns(n: u64, ctx: &SConfig) -> bool {
    n > 0 && ctx.primes().iter().all(|&p| !n.is_multiple_of(p))
}

/// Positive S-unit monomials, all integer exponents allowed.
pub fn is_in_ps(x: &BigRational, ctx: &SConfig) -> bool {
    x.is_positive() && ctx.is_s_unit(x.numer()) && ctx.is_s_unit(x.denom())
}

/// Result of scaling a vector over ℤ_S by an S-unit into ℤ^d with S-free content.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SPrimitive {
    /// unit·v, an integer vector whose gcd has no S-prime factor.
    pub scaled: Vec<BigInt>,
    /// The positive S-unit applied.
    pub unit: BigRational,
    /// gcd of `scaled`; equals 1 iff v is primitive in ℤ_S^d.
    pub content: BigInt,
}

pub fn s_primitive(v: &[BigRational], ctx: &SConfig) -> Result<SPrimitive> {
    if v.iter().all(|x| x.is_zero()) {
        return Err(Error::ZeroVector);
    }
    let mut den = BigInt::one();
    for x in v {
        if !ctx.is_s_unit(x.denom()) {
            return Err(Error::NonSUnitDenominator(x.denom().to_string()));
        }
        den = den.lcm(x.denom());
    }
    let ints: Vec<BigInt> = v.iter().map(|x| (x * BigRational::from_integer(den.clone())).to_integer()).collect();
    let g = ints.iter().fold(BigInt::zero(), |acc, x| acc.gcd(x));
    let content = ctx.s_free_part(&g);
    let s_part = &g / &content;
    let scaled: Vec<BigInt> = ints.iter().map(|x| x / &s_part).collect();
    let unit = BigRational::new(den, s_part);
    Ok(SPrimitive { scaled, unit, content })
}

/// gcd(q, k) via the S-unit scaling of k to a primitive integer vector.
pub fn gcd_s(q: u64, k: &[BigRational], ctx: &SConfig) -> Result<u64> {
    let sp = s_primitive(k, ctx)?;
    let g = sp.content.gcd(&BigInt::from(q));
    Ok(g.to_u64().expect("divides q"))
}

pub fn mod_pow(b: u64, mut e: u64, m: u64) -> u64 {
    let m = m as u128;
    let mut r = 1u128 % m;
    let mut bb = b as u128 % m;
    while e > 0 {
        if e & 1 == 1 {
            r = r * bb % m;
        }
        bb = bb * bb % m;
        e >>= 1;
    }
    r as u64
}

pub fn mod_inverse(a: &BigInt, m: &BigInt) -> Option<BigInt> {
    let e = a.mod_floor(m).extended_gcd(m);
    if e.gcd.is_one() {
        Some(e.x.mod_floor(m))
    } else {
        None
    }
}

/// Image of a rational in ℤ/m; the denominator must be invertible.
pub fn reduce_rat_mod(x: &BigRational, m: &BigInt) -> Option<BigInt> {
    if m.is_one() {
        return Some(BigInt::zero());
    }
    let inv = mod_inverse(x.denom(), m)?;
    Some((x.numer() * inv).mod_floor(m))
}

pub fn reduce_mod_u64(x: &BigRational, q: u64) -> Result<u64> {
    reduce_rat_mod(x, &BigInt::from(q))
        .map(|r| r.to_u64().unwrap())
        .ok_or(Error::DenominatorNotInvertibleModQ(q))
}

/// ζ(2), …, ζ(8) to 20 significant digits.
pub const ZETA_TABLE: [f64; 7] = [
    1.644_934_066_848_226_4,
    1.202_056_903_159_594_2,
    1.082_323_233_711_138_1,
    1.036_927_755_143_37,
    1.017_343_061_984_449_2,
    1.008_349_277_381_923,
    1.004_077_356_197_944_4,
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZetaValue {
    pub value: f64,
    pub error_bound: f64,
    pub terms: u64,
}

/// Euler-product form ζ(d)·∏(1−p^{−d}) from the fixed table, for 2 ≤ d ≤ 8.
pub fn zeta_s_euler(d: u32, ctx: &SConfig) -> Option<f64> {
    if !(2..=8).contains(&d) {
        return None;
    }
    let mut v = ZETA_TABLE[(d - 2) as usize];
    for &p in ctx.primes() {
        v *= 1.0 - (p as f64).powi(-(d as i32));
    }
    Some(v)
}

/// ζ_S(d) by direct summation with a certified tail.
pub fn zeta_s(d: u32, ctx: &SConfig, tol: f64) -> Result<ZetaValue> {
    zeta_s_coprime(d, ctx, 1, tol)
}

/// Σ t^{−d} over t ∈ ℕ_S with gcd(t, q) = 1.
pub fn zeta_s_coprime(d: u32, ctx: &SConfig, q: u64, tol: f64) -> Result<ZetaValue> {
    if d < 2 {
        return Err(Error::InvalidInput(format!("zeta needs d >= 2, got {d}")));
    }
    let mut modulus: u64 = ctx.product();
    for (p, _) in factorize(q) {
        if !ctx.contains(p) {
            modulus *= p;
        }
    }
    let residues: Vec<u64> = (1..=modulus).filter(|&r| gcd_u64(r, modulus) == 1).collect();
    let l = modulus as f64;
    let df = d as f64;
    const CAP: u64 = 1 << 28;

    let mut sum = Neumaier::default();
    let mut k_done: u64 = 0;
    let mut k_target: u64 = (4096 / residues.len() as u64).max(16);
    let mut best = f64::INFINITY;
    loop {
        // Add blocks k_done..k_target, larger t first within each block.
        let mut block = Neumaier::default();
        for k in (k_done..k_target).rev() {
            for &r in residues.iter().rev() {
                let t = r as f64 + k as f64 * l;
                block.add(t.powf(-df));
            }
        }
        sum.add(block.total());
        k_done = k_target;

        let mut tail = 0.0;
        let mut bound = 0.0;
        for &r in &residues {
            let a = r as f64 + k_done as f64 * l;
            let g = a.powf(-df);
            tail += a.powf(1.0 - df) / (l * (df - 1.0)) + g / 2.0;
            let g1 = df * l * a.powf(-df - 1.0);
            let g2 = df * (df + 1.0) * l * l * a.powf(-df - 2.0);
            bound += (g1 + g2) / 12.0;
        }
        let value = sum.total() + tail;
        let terms = k_done * residues.len() as u64;
        let err = bound + 8.0 * f64::EPSILON * value;
        best = best.min(err);
        if err <= tol {
            return Ok(ZetaValue { value, error_bound: err, terms });
        }
        // The tail bound decays like K^{-(d+1)}; stop early if the cap cannot suffice.
        let rounding = 8.0 * f64::EPSILON * value;
        let needed = if tol > rounding {
            k_done as f64 * (bound / (tol - rounding)).powf(1.0 / (df + 1.0))
        } else {
            f64::INFINITY
        };
        if terms >= CAP || needed * residues.len() as f64 > CAP as f64 {
            return Err(Error::ToleranceUnreachable { tolerance: tol, reached: best });
        }
        k_target = k_done * 2;
    }
}

/// Compensated summation.
#[derive(Default, Clone, Copy)]
pub struct Neumaier {
    sum: f64,
    c: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.c
    }
}

/// #SL_d(ℤ/qℤ) from the multiplicative closed form.
pub fn sl_group_order(d: u32, q: u64) -> BigInt {
    if d <= 1 || q <= 1 {
        return BigInt::one();
    }
    let mut out = BigRational::from_integer(BigInt::from(q).pow(d * d - 1));
    for (p, _) in factorize(q) {
        for i in 2..=d {
            out *= BigRational::one() - pow_rat(p, -(i as i64));
        }
    }
    debug_assert!(out.is_integer());
    out.to_integer()
}

/// q^{2d−1}·#SL_{d−1}(ℤ/q)/#SL_d(ℤ/q)·∏_{p|q}(1−p^{−d}); identically 1.
pub fn normalization_identity_exact(d: u32, q: u64) -> BigRational {
    let mut r = BigRational::new(
        BigInt::from(q).pow(2 * d - 1) * sl_group_order(d - 1, q),
        sl_group_order(d, q),
    );
    for (p, _) in factorize(q) {
        r *= BigRational::one() - pow_rat(p, -(d as i64));
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationResidual {
    pub residual: f64,
    /// Propagated truncation error of the two series.
    pub bound: f64,
}

/// |q^{2d−1}·#SL_{d−1}/(#SL_d·ζ_S(d))·Σ_{gcd(t,q)=1} t^{−d} − 1| with both series summed numerically.
pub fn normalization_identity_residual(d: u32, q: u64, ctx: &SConfig, tol: f64) -> Result<NormalizationResidual> {
    if d < 2 || q == 0 {
        return Err(Error::InvalidInput("need d >= 2 and q >= 1".into()));
    }
    if gcd_u64(q, ctx.product()) != 1 {
        return Err(Error::InvalidInput(format!("q={q} shares a prime with S")));
    }
    let prefactor = rat_to_f64(&BigRational::new(
        BigInt::from(q).pow(2 * d - 1) * sl_group_order(d - 1, q),
        sl_group_order(d, q),
    ));
    let z = zeta_s(d, ctx, tol)?;
    let zc = zeta_s_coprime(d, ctx, q, tol)?;
    let value = prefactor * zc.value / z.value;
    let bound = prefactor * (zc.error_bound / z.value + zc.value * z.error_bound / (z.value * z.value));
    Ok(NormalizationResidual { residual: (value - 1.0).abs(), bound })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovolumeVariant {
    UL,
    SL,
}

impl FromStr for CovolumeVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "UL" => Ok(CovolumeVariant::UL),
            "SL" => Ok(CovolumeVariant::SL),
            _ => Err(Error::Parse(format!("variant must be UL or SL, got {s}"))),
        }
    }
}

/// ∏_{k=2}^{d} ζ_S(k), with the factor ∏(1−1/p) for the UL quotient.
pub fn covolume_product(d: u32, ctx: &SConfig, variant: CovolumeVariant, tol: f64) -> Result<ZetaValue> {
    if d < 2 {
        return Err(Error::InvalidInput("covolume needs d >= 2".into()));
    }
    let per = tol / (d as f64);
    let mut value = 1.0;
    let mut rel = 0.0;
    let mut terms = 0;
    for k in 2..=d {
        let z = zeta_s(k, ctx, per)?;
        value *= z.value;
        rel += z.error_bound / z.value;
        terms += z.terms;
    }
    if variant == CovolumeVariant::UL {
        for &p in ctx.primes() {
            value *= 1.0 - 1.0 / p as f64;
        }
    }
    Ok(ZetaValue { value, error_bound: value * rel * 1.01, terms })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(p: &[u64]) -> SConfig {
        SConfig::new(p.to_vec()).unwrap()
    }

    #[test]
    fn srational_checks_denominator() {
        assert!(SRational::new(1.into(), 2.into(), &s(&[2])).is_ok());
        assert!(matches!(
            SRational::new(1.into(), 6.into(), &s(&[2])),
            Err(Error::NonSUnitDenominator(_))
        ));
        let x = SRational::new(6.into(), 4.into(), &s(&[2])).unwrap();
        assert_eq!(x.value(), &rat(3, 2));
    }

    #[test]
    fn norms() {
        assert_eq!(padic_norm(&rat(3, 2), Place::Finite(2)), 2.0);
        assert_eq!(padic_norm(&int(12), Place::Finite(2)), 0.25);
        assert_eq!(padic_norm(&int(0), Place::Finite(5)), 0.0);
        assert_eq!(padic_norm(&rat(-7, 2), Place::Inf), 3.5);
    }

    #[test]
    fn ns_ps() {
        assert!(is_in_ns(7, &s(&[2, 3])));
        assert!(!is_in_ns(6, &s(&[2, 3])));
        assert!(is_in_ps(&rat(1, 2), &s(&[2])));
        assert!(!is_in_ps(&rat(-1, 2), &s(&[2])));
        assert!(!is_in_ps(&int(3), &s(&[2])));
    }

    #[test]
    fn gcd_s_examples() {
        let c = s(&[2]);
        assert_eq!(gcd_s(7, &[rat(3, 2), int(5)], &c).unwrap(), 1);
        assert_eq!(gcd_s(7, &[rat(7, 2), int(21)], &c).unwrap(), 7);
        assert_eq!(gcd_s(5, &[int(1), int(0), int(0)], &c).unwrap(), 1);
        assert_eq!(gcd_s(5, &[int(0), int(0)], &c), Err(Error::ZeroVector));
    }

    #[test]
    fn primitive_scaling_keeps_s_free_content() {
        let c = s(&[2]);
        let sp = s_primitive(&[rat(3, 4), int(6)], &c).unwrap();
        assert_eq!(sp.scaled, vec![BigInt::from(3), BigInt::from(24)]);
        assert_eq!(sp.content, BigInt::from(3));
        assert_eq!(sp.unit, int(4));
        let sp = s_primitive(&[int(12), int(18)], &c).unwrap();
        assert_eq!(sp.content, BigInt::from(3));
    }

    #[test]
    fn zeta_examples() {
        let z = zeta_s(2, &s(&[2]), 1e-10).unwrap();
        assert!((z.value - std::f64::consts::PI.powi(2) / 8.0).abs() < 1e-10);
        let z = zeta_s(3, &s(&[2, 3]), 1e-10).unwrap();
        assert!((z.value - 1.012_844_242_477).abs() < 1e-9);
        let z = zeta_s(2, &SConfig::empty(), 1e-10).unwrap();
        assert!((z.value - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-10);
    }

    #[test]
    fn zeta_unreachable_tolerance() {
        assert!(matches!(
            zeta_s(2, &s(&[2]), 1e-30),
            Err(Error::ToleranceUnreachable { .. })
        ));
    }

    #[test]
    fn group_orders() {
        assert_eq!(sl_group_order(2, 2), BigInt::from(6));
        assert_eq!(sl_group_order(2, 3), BigInt::from(24));
        assert_eq!(sl_group_order(2, 5), BigInt::from(120));
        assert_eq!(sl_group_order(3, 2), BigInt::from(168));
        assert_eq!(sl_group_order(1, 9), BigInt::from(1));
        assert_eq!(sl_group_order(2, 1), BigInt::from(1));
        assert_eq!(sl_group_order(2, 4), BigInt::from(48));
    }

    #[test]
    fn normalization_exact_is_one() {
        for d in 2..=5 {
            for q in [1, 2, 5, 7, 12, 25] {
                assert!(normalization_identity_exact(d, q).is_one(), "d={d} q={q}");
            }
        }
    }

    #[test]
    fn normalization_residual_small() {
        let r = normalization_identity_residual(3, 7, &s(&[2]), 1e-10).unwrap();
        assert!(r.residual < 1e-6);
        let r = normalization_identity_residual(2, 1, &s(&[2]), 1e-10).unwrap();
        assert!(r.residual < 1e-12);
    }

    #[test]
    fn covolumes() {
        let c = s(&[2]);
        let sl = covolume_product(2, &c, CovolumeVariant::SL, 1e-10).unwrap();
        let ul = covolume_product(2, &c, CovolumeVariant::UL, 1e-10).unwrap();
        assert!((sl.value - 1.233_700_550_136_17).abs() < 1e-9);
        assert!((ul.value - 0.5 * sl.value).abs() < 1e-12);
    }

    #[test]
    fn mobius_values() {
        assert_eq!(mobius(1), 1);
        assert_eq!(mobius(6), 1);
        assert_eq!(mobius(12), 0);
        assert_eq!(mobius(30), -1);
    }
}
