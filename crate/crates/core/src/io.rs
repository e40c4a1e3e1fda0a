//! Text formats shared by the library and the command-line runner.
//!
//! Rationals are written as `"num/den"` strings (or bare integers) so exact
//! values survive a JSON round trip. A form is described by
//! `{"dim": d, "places": {"inf": [[..]], "2": [[..]]}, "shift": [..]}`;
//! the primes of S are the finite keys of `places`.

use std::collections::BTreeMap;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::matrix::QMat;
use crate::qspace::{QuadraticFormS, RealGram, SInterval, Shift};
use crate::sarith::{f64_to_rat, rat_to_f64, SConfig, TVector};
use crate::slattice::{ProductBox, SBox, TestFunction};

/// Parses `"7"`, `"-3/4"` or a decimal such as `"0.25"` exactly.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::Parse(format!("not a rational: {s:?}"));
    if let Some((n, d)) = s.split_once('/') {
        let n = BigInt::from_str(n.trim()).map_err(|_| bad())?;
        let d = BigInt::from_str(d.trim()).map_err(|_| bad())?;
        if d.is_zero() {
            return Err(Error::ZeroDenominator);
        }
        return Ok(BigRational::new(n, d));
    }
    if let Ok(n) = BigInt::from_str(s) {
        return Ok(BigRational::from_integer(n));
    }
    // Finite decimal: digits after the point become a power-of-ten denominator.
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac) = body.split_once('.').ok_or_else(bad)?;
    if frac.is_empty() && int_part.is_empty() || !(int_part.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())) {
        return Err(bad());
    }
    let digits = format!("{}{}", if int_part.is_empty() { "0" } else { int_part }, frac);
    let n = BigInt::from_str(&digits).map_err(|_| bad())?;
    let v = BigRational::new(n, BigInt::from(10u32).pow(frac.len() as u32));
    Ok(if neg { -v } else { v })
}

pub fn format_rational(x: &BigRational) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// A JSON number or rational string. Numbers must be exactly representable
/// as a rational (every finite double is).
fn rational_from_json(v: &Value) -> Result<BigRational> {
    match v {
        Value::String(s) => parse_rational(s),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(BigRational::from_integer(i.into()))
            } else {
                Ok(f64_to_rat(n.as_f64().ok_or_else(|| Error::Parse(format!("bad number {n}")))?))
            }
        }
        _ => Err(Error::Parse(format!("expected a rational, got {v}"))),
    }
}

fn rational_to_json(x: &BigRational) -> Value {
    Value::String(format_rational(x))
}

fn matrix_rows(v: &Value, d: usize, what: &str) -> Result<Vec<Vec<Value>>> {
    let rows = v.as_array().ok_or_else(|| Error::Parse(format!("{what}: expected an array of rows")))?;
    if rows.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: rows.len() });
    }
    rows.iter()
        .map(|r| {
            let r = r.as_array().ok_or_else(|| Error::Parse(format!("{what}: row is not an array")))?;
            if r.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: r.len() });
            }
            Ok(r.clone())
        })
        .collect()
}

fn qmat_from_json(v: &Value, d: usize, what: &str) -> Result<QMat> {
    let rows = matrix_rows(v, d, what)?;
    let rows = rows.iter().map(|r| r.iter().map(rational_from_json).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
    Ok(QMat::from_rows(rows))
}

fn qmat_to_json(m: &QMat) -> Value {
    Value::Array(m.to_rows().iter().map(|r| Value::Array(r.iter().map(rational_to_json).collect())).collect())
}

/// Reads a form description. A real Gram matrix made only of integers and
/// rational strings is kept exact; any JSON float makes it a double-precision form.
pub fn form_from_json(v: &Value) -> Result<QuadraticFormS> {
    let d = v.get("dim").and_then(Value::as_u64).ok_or_else(|| Error::Parse("form needs an integer `dim`".into()))? as usize;
    let places = v.get("places").and_then(Value::as_object).ok_or_else(|| Error::Parse("form needs `places`".into()))?;
    let inf = places.get("inf").ok_or_else(|| Error::Parse("form needs a real Gram matrix under \"inf\"".into()))?;
    let mut finite = BTreeMap::new();
    for (k, g) in places {
        if k == "inf" {
            continue;
        }
        let p: u64 = k.parse().map_err(|_| Error::Parse(format!("place key {k:?} is neither \"inf\" nor a prime")))?;
        finite.insert(p, qmat_from_json(g, d, k)?);
    }
    let ctx = SConfig::new(finite.keys().copied().collect())?;
    let rows = matrix_rows(inf, d, "inf")?;
    let floaty = rows.iter().flatten().any(|x| x.as_number().is_some_and(|n| !n.is_i64()));
    let gram_inf = if floaty {
        let vals = rows.iter().flatten().map(|x| rational_from_json(x).map(|r| rat_to_f64(&r))).collect::<Result<Vec<f64>>>()?;
        RealGram::approx(vals)
    } else {
        RealGram::exact(qmat_from_json(inf, d, "inf")?)
    };
    let mut form = QuadraticFormS::new(&ctx, gram_inf, finite)?;
    if let Some(shift) = v.get("shift").filter(|s| !s.is_null()) {
        let xi = vector_from_json(shift)?;
        form = form.with_shift(Shift::rational(&xi, &ctx))?;
    }
    Ok(form)
}

/// Writes a form description; the inverse of [`form_from_json`].
pub fn form_to_json(form: &QuadraticFormS) -> Value {
    let mut places = serde_json::Map::new();
    let inf = match &form.gram_inf.exact {
        Some(g) => qmat_to_json(g),
        None => {
            let d = form.dim();
            let a = &form.gram_inf.approx;
            Value::Array((0..d).map(|i| Value::Array((0..d).map(|j| serde_json::json!(a[i * d + j])).collect())).collect())
        }
    };
    places.insert("inf".into(), inf);
    for (p, g) in &form.gram_p {
        places.insert(p.to_string(), qmat_to_json(g));
    }
    let mut out = serde_json::json!({ "dim": form.dim(), "places": places });
    if let Some(xi) = form.shift.as_ref().and_then(Shift::diagonal) {
        out["shift"] = Value::Array(xi.iter().map(rational_to_json).collect());
    }
    out
}

pub fn vector_from_json(v: &Value) -> Result<Vec<BigRational>> {
    v.as_array().ok_or_else(|| Error::Parse("expected an array".into()))?.iter().map(rational_from_json).collect()
}

/// Comma-separated rationals: `"1/5,2/7,0"`.
pub fn parse_vector(s: &str) -> Result<Vec<BigRational>> {
    s.split(',').map(parse_rational).collect()
}

/// Comma-separated integers, empty allowed.
pub fn parse_int_list<T: FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse().map_err(|_| Error::Parse(format!("not an integer: {x:?}"))))
        .collect()
}

/// Compact description of an indicator test function.
///
/// - `disk:R` (alias `ball:R`): Euclidean ball of radius R about 0;
/// - `box:lo..hi,lo..hi,...`: axis-parallel real box, one range per coordinate.
///
/// Finite-place radii are supplied separately, one exponent per prime of S.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TestFunctionSpec {
    Disk(BigRational),
    Box(Vec<(BigRational, BigRational)>),
}

impl FromStr for TestFunctionSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (kind, body) = s.split_once(':').ok_or_else(|| Error::Parse(format!("test function {s:?} needs kind:args")))?;
        match kind.trim() {
            "disk" | "ball" => {
                let r = parse_rational(body)?;
                if r <= BigRational::zero() {
                    return Err(Error::InvalidInput("radius must be positive".into()));
                }
                Ok(TestFunctionSpec::Disk(r))
            }
            "box" => {
                let ranges = body
                    .split(',')
                    .map(|r| {
                        let (lo, hi) = r.split_once("..").ok_or_else(|| Error::Parse(format!("range {r:?} needs lo..hi")))?;
                        let (lo, hi) = (parse_rational(lo)?, parse_rational(hi)?);
                        if lo >= hi {
                            return Err(Error::InvalidInput(format!("empty range {r:?}")));
                        }
                        Ok((lo, hi))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(TestFunctionSpec::Box(ranges))
            }
            other => Err(Error::Parse(format!("unknown test function kind {other:?}; use disk or box"))),
        }
    }
}

impl std::fmt::Display for TestFunctionSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TestFunctionSpec::Disk(r) => write!(f, "disk:{}", format_rational(r)),
            TestFunctionSpec::Box(rs) => {
                let parts: Vec<String> = rs.iter().map(|(a, b)| format!("{}..{}", format_rational(a), format_rational(b))).collect();
                write!(f, "box:{}", parts.join(","))
            }
        }
    }
}

impl From<TestFunctionSpec> for String {
    fn from(s: TestFunctionSpec) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for TestFunctionSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl TestFunctionSpec {
    /// Builds the indicator in dimension d with finite exponents `t_p`.
    pub fn build(&self, d: usize, t_p: &[i64]) -> Result<TestFunction> {
        match self {
            TestFunctionSpec::Disk(r) => Ok(TestFunction::Ball(SBox::new(TVector::new(r.clone(), t_p.to_vec())))),
            TestFunctionSpec::Box(rs) => {
                if rs.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: rs.len() });
                }
                let (lo, hi) = rs.iter().cloned().unzip();
                Ok(TestFunction::ProductBox(ProductBox::new(lo, hi, t_p.to_vec())))
            }
        }
    }
}

/// `lo..hi` for the real part of a target set.
pub fn parse_interval(s: &str) -> Result<SInterval> {
    let (lo, hi) = s.split_once("..").ok_or_else(|| Error::Parse(format!("interval {s:?} needs lo..hi")))?;
    let (lo, hi) = (parse_rational(lo)?, parse_rational(hi)?);
    if lo >= hi {
        return Err(Error::InvalidInput(format!("empty interval {s:?}")));
    }
    Ok(SInterval::real_only(lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sarith::{int, rat};

    #[test]
    fn rationals_round_trip() {
        for s in ["0", "-7", "3/4", "-22/7"] {
            assert_eq!(format_rational(&parse_rational(s).unwrap()), s);
        }
        assert_eq!(parse_rational("6/8").unwrap(), rat(3, 4));
        assert_eq!(parse_rational("-0.125").unwrap(), rat(-1, 8));
        assert_eq!(parse_rational("2.").unwrap(), int(2));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational(".").is_err());
    }

    #[test]
    fn exact_form_round_trip() {
        let v = serde_json::json!({
            "dim": 3,
            "places": {"inf": [[1, 0, 0], [0, 1, 0], [0, 0, "-1/2"]], "3": [[0, 1, 0], [1, 0, 0], [0, 0, 3]]},
            "shift": ["1/5", "2/7", 0]
        });
        let f = form_from_json(&v).unwrap();
        assert_eq!(f.context().primes(), &[3]);
        assert!(f.gram_inf.exact.is_some());
        assert_eq!(f.shift.as_ref().unwrap().diagonal().unwrap()[1], rat(2, 7));
        assert_eq!(form_from_json(&form_to_json(&f)).unwrap(), f);
    }

    #[test]
    fn float_entries_give_approximate_real_form() {
        let v = serde_json::json!({"dim": 2, "places": {"inf": [[1.5, 0], [0, -1]]}});
        let f = form_from_json(&v).unwrap();
        assert!(f.gram_inf.exact.is_none());
        assert_eq!(f.gram_inf.approx, vec![1.5, 0.0, 0.0, -1.0]);
        assert!(form_from_json(&serde_json::json!({"dim": 2, "places": {"inf": [[1, 0]]}})).is_err());
        assert!(form_from_json(&serde_json::json!({"dim": 1, "places": {"inf": [[1]], "4": [[1]]}})).is_err());
    }

    #[test]
    fn test_function_specs() {
        let f: TestFunctionSpec = "disk:2.5".parse().unwrap();
        assert_eq!(f, TestFunctionSpec::Disk(rat(5, 2)));
        assert_eq!(f.to_string(), "disk:5/2");
        let b: TestFunctionSpec = "box:-1..2,-1/2..1".parse().unwrap();
        assert_eq!(b.to_string().parse::<TestFunctionSpec>().unwrap(), b);
        let ctx = SConfig::new(vec![2]).unwrap();
        assert!((b.build(2, &[-1]).unwrap().volume(&ctx, 2).unwrap() - 1.125).abs() < 1e-12);
        assert!(b.build(3, &[0]).is_err());
        assert!("box:1..0".parse::<TestFunctionSpec>().is_err());
        assert!("cube:1".parse::<TestFunctionSpec>().is_err());
        assert_eq!(parse_interval("-1/2..3").unwrap().inf_hi, int(3));
    }
}
