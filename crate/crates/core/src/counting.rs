//! Counting S-integral points k with ‖k‖ in an S-box and Q(k + ξ) in a
//! shrinking target, with or without a congruence condition k ≡ w mod q.
//!
//! The finite-place box and the congruence make each coordinate of k range over
//! an arithmetic progression o_i + sℤ. The first d−1 indices are enumerated with
//! ball pruning and the last is solved from the quadratic in that coordinate;
//! every candidate is then checked exactly at the finite places.

use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::congruence::CongruenceContext;
use crate::error::{Error, Result};
use crate::qspace::{QuadraticFormS, SInterval};
use crate::sarith::{f64_to_rat, pow_rat, rat_to_f64, reduce_rat_mod, valuation, SConfig, TVector};
use crate::slattice::{crt_offset, unit_ball_volume};
use crate::volume::leading_constant;

/// Target data at one finite prime: I_T^{(p)} = a + p^{c + κ t_p}ℤ_p.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiniteTarget {
    pub p: u64,
    #[serde(serialize_with = "ser_rat")]
    pub a: BigRational,
    pub c: i64,
    pub kappa: u32,
}

fn ser_rat<S: serde::Serializer>(x: &BigRational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&x.to_string())
}

/// I_T^{(∞)} = (a − c·T^{−κ}/2, a + c·T^{−κ}/2) and the finite targets above.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShrinkingFamily {
    pub c_inf: f64,
    pub kappa_inf: f64,
    pub a_inf: f64,
    pub finite: Vec<FiniteTarget>,
}

impl ShrinkingFamily {
    pub fn constant(c_inf: f64, a_inf: f64) -> Self {
        ShrinkingFamily { c_inf, kappa_inf: 0.0, a_inf, finite: Vec::new() }
    }

    pub fn with_finite(mut self, p: u64, a: BigRational, c: i64, kappa: u32) -> Self {
        self.finite.retain(|f| f.p != p);
        self.finite.push(FiniteTarget { p, a, c, kappa });
        self
    }

    pub fn finite_part(&self, p: u64) -> Option<&FiniteTarget> {
        self.finite.iter().find(|f| f.p == p)
    }

    pub fn validate(&self, d: usize, ctx: &SConfig) -> Result<()> {
        if !(self.c_inf > 0.0) {
            return Err(Error::FamilyOutOfRange(format!("c_inf = {} must be positive", self.c_inf)));
        }
        if !(self.kappa_inf >= 0.0 && self.kappa_inf < d as f64 - 2.0) {
            return Err(Error::FamilyOutOfRange(format!("kappa_inf = {} outside [0, {})", self.kappa_inf, d as i64 - 2)));
        }
        if let Some(p) = ctx.primes().iter().find(|&&p| self.finite_part(p).is_none()) {
            return Err(Error::FamilyOutOfRange(format!("no target at p = {p}")));
        }
        for f in &self.finite {
            if !ctx.contains(f.p) {
                return Err(Error::FamilyOutOfRange(format!("prime {} is not in S", f.p)));
            }
            let allowed = if d >= 4 { f.kappa <= 1 } else { f.kappa == 0 };
            if !allowed {
                return Err(Error::FamilyOutOfRange(format!("kappa_{} = {} not allowed for d = {d}", f.p, f.kappa)));
            }
        }
        Ok(())
    }

    pub fn real_length(&self, t_inf: f64) -> f64 {
        self.c_inf * t_inf.powf(-self.kappa_inf)
    }

    pub fn interval_at(&self, t: &TVector, ctx: &SConfig) -> SInterval {
        let len = self.real_length(rat_to_f64(&t.t_inf));
        let mut out = SInterval::real_only(f64_to_rat(self.a_inf - len / 2.0), f64_to_rat(self.a_inf + len / 2.0));
        for (&p, &tp) in ctx.primes().iter().zip(&t.t_p) {
            if let Some(f) = self.finite_part(p) {
                out = out.with_coset(p, f.a.clone(), f.c + f.kappa as i64 * tp);
            }
        }
        out
    }

    /// vol(I_T).
    pub fn volume_at(&self, t: &TVector, ctx: &SConfig) -> f64 {
        self.interval_at(t, ctx).volume()
    }
}

/// Where the S-box sits: on k itself or on the shifted point k + ξ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BoxPlacement {
    Point,
    Shifted,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountResult {
    pub n: u64,
    pub prediction: f64,
    pub ratio: f64,
    pub t_inf: f64,
    pub t_p: Vec<i64>,
    pub vol_interval: f64,
    pub wall_ms: f64,
}

/// A fully specified count: k ∈ ℤ_S^d (optionally ≡ w mod q), box on k or on
/// k + ξ, and Q(k + ξ) ∈ target.
#[derive(Clone, Debug)]
pub struct CountSpec<'a> {
    pub form: &'a QuadraticFormS,
    pub shift: Option<Vec<BigRational>>,
    pub congruence: Option<&'a CongruenceContext>,
    pub target: SInterval,
    pub t: TVector,
    pub placement: BoxPlacement,
    pub budget: u64,
}

/// Candidate progression: k = o + s·n with n ∈ ℤ^d.
struct Progression {
    o: Vec<BigRational>,
    s: BigRational,
}

fn progression(spec: &CountSpec) -> Result<Progression> {
    let ctx = spec.form.context();
    let d = spec.form.dim();
    if spec.t.t_p.len() != ctx.primes().len() {
        return Err(Error::DimensionMismatch { expected: ctx.primes().len(), got: spec.t.t_p.len() });
    }
    let zero = vec![BigRational::zero(); d];
    let xi = spec.shift.as_ref().unwrap_or(&zero);
    let mut m = BigRational::one();
    let mut o = Vec::with_capacity(d);
    for (&p, &t) in ctx.primes().iter().zip(&spec.t.t_p) {
        m *= pow_rat(p, t);
    }
    for i in 0..d {
        let x = match spec.placement {
            BoxPlacement::Point => BigRational::zero(),
            BoxPlacement::Shifted => -xi[i].clone(),
        };
        let targets: Vec<(u64, BigRational, i64)> =
            ctx.primes().iter().zip(&spec.t.t_p).map(|(&p, &t)| (p, x.clone(), t)).collect();
        o.push(crt_offset(&targets));
    }
    let mut s = BigRational::one() / &m;
    if let Some(cc) = spec.congruence {
        // j ≡ M(w − o) mod q refines o + M⁻¹ℤ to o′ + (q/M)ℤ.
        let q = BigInt::from(cc.q);
        for i in 0..d {
            let w = cc.w[i].clone();
            let j = reduce_rat_mod(&(&m * (&w - &o[i])), &q).ok_or(Error::DenominatorNotInvertibleModQ(cc.q))?;
            o[i] = &o[i] + BigRational::from_integer(j) * &s;
        }
        s *= BigRational::from_integer(q);
    }
    Ok(Progression { o, s })
}

/// Exact count for a [`CountSpec`].
pub fn count(spec: &CountSpec) -> Result<u64> {
    let form = spec.form;
    let d = form.dim();
    let prog = progression(spec)?;
    let zero = vec![BigRational::zero(); d];
    let xi = spec.shift.clone().unwrap_or(zero);
    if xi.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: xi.len() });
    }
    let s = rat_to_f64(&prog.s);
    let t = rat_to_f64(&spec.t.t_inf);
    // Box variable b + s n, form variable c + s n.
    let beta: Vec<BigRational> = match spec.placement {
        BoxPlacement::Point => vec![BigRational::zero(); d],
        BoxPlacement::Shifted => xi.clone(),
    };
    let bq: Vec<BigRational> = prog.o.iter().zip(&beta).map(|(a, b)| a + b).collect();
    let cq: Vec<BigRational> = prog.o.iter().zip(&xi).map(|(a, b)| a + b).collect();
    let b: Vec<f64> = bq.iter().map(rat_to_f64).collect();
    let c: Vec<f64> = cq.iter().map(rat_to_f64).collect();
    let est = unit_ball_volume(d - 1) * (t / s + 1.0).powi(d as i32 - 1);
    if est > spec.budget as f64 {
        return Err(Error::RegionTooLarge { estimated: est, budget: spec.budget });
    }
    let g = &form.gram_inf.approx;
    let exact_gram = form.gram_inf.exact.as_ref();
    let lo = rat_to_f64(&spec.target.inf_lo);
    let hi = rat_to_f64(&spec.target.inf_hi);
    let finite: Vec<(u64, &crate::matrix::QMat, &BigRational, i64)> = spec
        .target
        .finite
        .iter()
        .map(|(&p, (a, cc))| (p, form.gram_at(p), a, *cc))
        .collect();
    let congruence_ok = |n: &[i64]| -> bool {
        // Exact checks: the real interval (when the real Gram is rational) and
        // every finite target.
        let y: Vec<BigRational> =
            n.iter().zip(&cq).map(|(&ni, ci)| ci + BigRational::from_integer(BigInt::from(ni)) * &prog.s).collect();
        if let Some(ge) = exact_gram {
            let kq: Vec<BigRational> =
                n.iter().zip(&bq).map(|(&ni, bi)| bi + BigRational::from_integer(BigInt::from(ni)) * &prog.s).collect();
            let norm2 = kq.iter().fold(BigRational::zero(), |acc, x| acc + x * x);
            if norm2 >= &spec.t.t_inf * &spec.t.t_inf {
                return false;
            }
            let v = ge.quad(&y);
            if !(spec.target.inf_lo < v && v < spec.target.inf_hi) {
                return false;
            }
        }
        finite.iter().all(|(p, gp, a, cc)| {
            let diff = gp.quad(&y) - *a;
            diff.is_zero() || valuation(&diff, *p).unwrap() >= *cc
        })
    };
    let last = d - 1;
    let a_coef = g[last * d + last];
    let r2 = t * t;
    let slack = 1e-9 * (1.0 + r2);
    // First index range from the ball.
    let range = |center: f64, rem: f64| -> (i64, i64) {
        if rem < -slack {
            return (1, 0);
        }
        let w = (rem.max(0.0)).sqrt() + 1e-9 * (1.0 + t);
        (((-w - center) / s).ceil() as i64, ((w - center) / s).floor() as i64)
    };
    let inner = |n0: i64| -> u64 {
        let mut total = 0u64;
        let mut n = vec![0i64; d];
        n[0] = n0;
        let mut stack_partial = vec![0.0; d];
        // Depth-first over indices 1..d−1 with running squared norm.
        fn rec(
            j: usize,
            d: usize,
            n: &mut [i64],
            partial: &mut [f64],
            ctx: &dyn Fn(&mut [i64], f64) -> u64,
            b: &[f64],
            s: f64,
            r2: f64,
            range: &dyn Fn(f64, f64) -> (i64, i64),
        ) -> u64 {
            if j == d - 1 {
                return ctx(n, partial[j - 1]);
            }
            let (lo, hi) = range(b[j], r2 - partial[j - 1]);
            let mut acc = 0;
            for x in lo..=hi {
                n[j] = x;
                let v = b[j] + s * x as f64;
                partial[j] = partial[j - 1] + v * v;
                acc += rec(j + 1, d, n, partial, ctx, b, s, r2, range);
            }
            acc
        }
        let v0 = b[0] + s * n0 as f64;
        stack_partial[0] = v0 * v0;
        let solve_last = |n: &mut [i64], partial: f64| -> u64 {
            let (blo, bhi) = range(b[last], r2 - partial);
            if blo > bhi {
                return 0;
            }
            // Q(y) = A z² + B z + C with z the last coordinate of y.
            let mut y = vec![0.0; d];
            for i in 0..last {
                y[i] = c[i] + s * n[i] as f64;
            }
            let mut bcoef = 0.0;
            let mut ccoef = 0.0;
            for i in 0..last {
                bcoef += 2.0 * g[i * d + last] * y[i];
                for k in 0..last {
                    ccoef += g[i * d + k] * y[i] * y[k];
                }
            }
            // Padded index ranges may overlap; merge them so no index repeats.
            let mut idx: Vec<(i64, i64)> = Vec::new();
            for (zl, zh) in z_ranges(a_coef, bcoef, ccoef, lo, hi) {
                let nl = (((zl - c[last]) / s).floor() as i64).saturating_sub(1).max(blo);
                let nh = (((zh - c[last]) / s).ceil() as i64).saturating_add(1).min(bhi);
                if nl > nh {
                    continue;
                }
                match idx.last_mut() {
                    Some(prev) if nl <= prev.1 + 1 => prev.1 = prev.1.max(nh),
                    _ => idx.push((nl, nh)),
                }
            }
            let mut cnt = 0;
            for (nl, nh) in idx {
                for x in nl..=nh {
                    n[last] = x;
                    let kb = b[last] + s * x as f64;
                    let z = c[last] + s * x as f64;
                    if exact_gram.is_none() {
                        if partial + kb * kb >= r2 {
                            continue;
                        }
                        y[last] = z;
                        let qv = form.gram_inf.eval(&y);
                        if !(lo < qv && qv < hi) {
                            continue;
                        }
                    } else {
                        // Loose float filter; the exact test decides.
                        if partial + kb * kb >= r2 + slack {
                            continue;
                        }
                        y[last] = z;
                        let qv = form.gram_inf.eval(&y);
                        let tol = 1e-9 * (1.0 + qv.abs() + lo.abs() + hi.abs());
                        if !(lo - tol < qv && qv < hi + tol) {
                            continue;
                        }
                    }
                    if congruence_ok(n) {
                        cnt += 1;
                    }
                }
            }
            cnt
        };
        if d == 1 {
            return solve_last(&mut n, 0.0);
        }
        total += rec(1, d, &mut n, &mut stack_partial, &solve_last, &b, s, r2, &range);
        total
    };
    if d == 1 {
        return Ok(inner(0));
    }
    let (lo0, hi0) = range(b[0], r2);
    if lo0 > hi0 {
        return Ok(0);
    }
    Ok((lo0..=hi0).into_par_iter().map(inner).sum())
}

/// Intervals of z with A z² + B z + C ∈ (lo, hi), padded for rounding.
fn z_ranges(a: f64, b: f64, c: f64, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let big = f64::INFINITY;
    if a.abs() < 1e-300 {
        if b.abs() < 1e-300 {
            return if lo < c && c < hi { vec![(-big, big)] } else { vec![] };
        }
        let (x, y) = ((lo - c) / b, (hi - c) / b);
        let pad = 1e-9 * (1.0 + x.abs() + y.abs());
        return vec![(x.min(y) - pad, x.max(y) + pad)];
    }
    // Normalize to a > 0.
    let (a, b, c, lo, hi) = if a > 0.0 { (a, b, c, lo, hi) } else { (-a, -b, -c, -hi, -lo) };
    let v = -b / (2.0 * a);
    let m = c - b * b / (4.0 * a);
    // a(z − v)² ∈ (lo − m, hi − m)
    let top = (hi - m) / a;
    if top <= 0.0 && top < -1e-12 * (1.0 + m.abs() / a) {
        return vec![];
    }
    let rt = top.max(0.0).sqrt();
    let bot = (lo - m) / a;
    let pad = 1e-7 * (1.0 + rt + v.abs());
    if bot <= 0.0 {
        return vec![(v - rt - pad, v + rt + pad)];
    }
    let rb = bot.sqrt();
    vec![(v - rt - pad, v - rb + pad), (v + rb - pad, v + rt + pad)]
}

/// Leading-term prediction c_Q·vol(I_T)|T|^{d−2}, divided by q^d for congruences.
fn prediction(c_q: f64, family: &ShrinkingFamily, t: &TVector, ctx: &SConfig, d: usize, q: u64) -> f64 {
    let abs_t = t.abs(ctx);
    c_q * family.volume_at(t, ctx) * abs_t.powi(d as i32 - 2) / (q as f64).powi(d as i32)
}

fn finish(n: u64, pred: f64, t: &TVector, vol: f64, start: Instant) -> CountResult {
    CountResult {
        n,
        prediction: pred,
        ratio: n as f64 / pred,
        t_inf: rat_to_f64(&t.t_inf),
        t_p: t.t_p.clone(),
        vol_interval: vol,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// N(q, w; Q, I, T) = #{k ∈ qℤ_S^d + w : k ∈ B_T, Q(k) ∈ I_T}. The prediction
/// uses `c_q` when given and otherwise the single-scale leading constant at T.
pub fn count_congruence(
    cc: &CongruenceContext,
    form: &QuadraticFormS,
    family: &ShrinkingFamily,
    t: &TVector,
    c_q: Option<f64>,
    budget: u64,
) -> Result<CountResult> {
    let start = Instant::now();
    let ctx = form.context();
    let target = family.interval_at(t, ctx);
    let spec = CountSpec {
        form,
        shift: None,
        congruence: Some(cc),
        target,
        t: t.clone(),
        placement: BoxPlacement::Point,
        budget,
    };
    let n = count(&spec)?;
    let cq = match c_q {
        Some(c) => c,
        None => leading_constant(form, family, std::slice::from_ref(t)).map(|a| a.c_q).unwrap_or(f64::NAN),
    };
    let pred = prediction(cq, family, t, ctx, form.dim(), cc.q);
    Ok(finish(n, pred, t, family.volume_at(t, ctx), start))
}

/// N(Q_ξ, I, T) = #{k ∈ ℤ_S^d : k ∈ B_T, Q(k + ξ) ∈ I_T}.
pub fn count_inhom(
    form: &QuadraticFormS,
    xi: &[BigRational],
    family: &ShrinkingFamily,
    t: &TVector,
    placement: BoxPlacement,
    c_q: Option<f64>,
    budget: u64,
) -> Result<CountResult> {
    let start = Instant::now();
    let ctx = form.context();
    let spec = CountSpec {
        form,
        shift: Some(xi.to_vec()),
        congruence: None,
        target: family.interval_at(t, ctx),
        t: t.clone(),
        placement,
        budget,
    };
    let n = count(&spec)?;
    let cq = match c_q {
        Some(c) => c,
        None => leading_constant(form, family, std::slice::from_ref(t)).map(|a| a.c_q).unwrap_or(f64::NAN),
    };
    let pred = prediction(cq, family, t, ctx, form.dim(), 1);
    Ok(finish(n, pred, t, family.volume_at(t, ctx), start))
}

/// Both sides of N(q, w; Q, I, T) = N(Q_{w/q}, I/q², (T_∞/q, T_p)) where the
/// right side places the box on k + w/q.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RescaleCheck {
    pub congruence: u64,
    pub inhomogeneous: u64,
    pub holds: bool,
}

pub fn rescale_identity_check(
    cc: &CongruenceContext,
    form: &QuadraticFormS,
    target: &SInterval,
    t: &TVector,
    rescale_target: bool,
    budget: u64,
) -> Result<RescaleCheck> {
    let left = count(&CountSpec {
        form,
        shift: None,
        congruence: Some(cc),
        target: target.clone(),
        t: t.clone(),
        placement: BoxPlacement::Point,
        budget,
    })?;
    let q = BigRational::from_integer(BigInt::from(cc.q));
    let scaled = if rescale_target { target.scaled(&(BigRational::one() / (&q * &q))) } else { target.clone() };
    let t2 = TVector::new(&t.t_inf / &q, t.t_p.clone());
    let right = count(&CountSpec {
        form,
        shift: Some(cc.shift_over_q()),
        congruence: None,
        target: scaled,
        t: t2,
        placement: BoxPlacement::Shifted,
        budget,
    })?;
    Ok(RescaleCheck { congruence: left, inhomogeneous: right, holds: left == right })
}

/// Which counter a sweep runs.
#[derive(Clone, Debug)]
pub enum SweepMode<'a> {
    Congruence(&'a CongruenceContext),
    Inhomogeneous(Vec<BigRational>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<CountResult>,
    pub c_q: f64,
    pub c_q_error: f64,
    /// Fitted error exponent; `None` with fewer than two usable rows.
    pub delta_hat: Option<f64>,
    /// Set when the budget stopped the ladder early.
    pub partial: bool,
}

/// Counts along an increasing ladder of scales against the leading term.
pub fn sweep(form: &QuadraticFormS, mode: &SweepMode, family: &ShrinkingFamily, ladder: &[TVector], budget: u64) -> Result<SweepReport> {
    let d = form.dim();
    let ctx = form.context();
    family.validate(d, ctx)?;
    if ladder.is_empty() {
        return Ok(SweepReport { rows: vec![], c_q: f64::NAN, c_q_error: f64::NAN, delta_hat: None, partial: false });
    }
    for w in ladder.windows(2) {
        if !w[1].dominates(&w[0]) || w[1] == w[0] {
            return Err(Error::InvalidInput("ladder must be increasing".into()));
        }
    }
    let asym = leading_constant(form, family, ladder)?;
    let mut rows = Vec::new();
    let mut partial = false;
    for t in ladder {
        let res = match mode {
            SweepMode::Congruence(cc) => count_congruence(cc, form, family, t, Some(asym.c_q), budget),
            SweepMode::Inhomogeneous(xi) => count_inhom(form, xi, family, t, BoxPlacement::Point, Some(asym.c_q), budget),
        };
        match res {
            Ok(r) => rows.push(r),
            Err(Error::RegionTooLarge { .. }) => {
                partial = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let delta_hat = fit_delta(&rows, ctx, d);
    Ok(SweepReport { rows, c_q: asym.c_q, c_q_error: asym.error, delta_hat, partial })
}

/// Slope difference between log(vol(I_T)|T|^{d−2}) and log|N − prediction|
/// regressed on log|T|.
fn fit_delta(rows: &[CountResult], ctx: &SConfig, d: usize) -> Option<f64> {
    let pts: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter(|r| r.n as f64 != r.prediction && r.prediction.is_finite())
        .map(|r| {
            let t = TVector::from_f64(r.t_inf, r.t_p.clone());
            let lt = t.abs(ctx).ln();
            (lt, (r.n as f64 - r.prediction).abs().ln(), (r.vol_interval * t.abs(ctx).powi(d as i32 - 2)).ln())
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let slope = |f: &dyn Fn(&(f64, f64, f64)) -> f64| {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(f).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (f(p) - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    };
    Some(slope(&|p| p.2) - slope(&|p| p.1))
}

/// Naive oracle: every index in the enclosing cube, all conditions checked exactly.
pub fn count_naive(spec: &CountSpec) -> Result<u64> {
    let d = spec.form.dim();
    let prog = progression(spec)?;
    let xi = spec.shift.clone().unwrap_or_else(|| vec![BigRational::zero(); d]);
    let beta = match spec.placement {
        BoxPlacement::Point => vec![BigRational::zero(); d],
        BoxPlacement::Shifted => xi.clone(),
    };
    let t = rat_to_f64(&spec.t.t_inf);
    let s = rat_to_f64(&prog.s);
    let bounds: Vec<(i64, i64)> = (0..d)
        .map(|i| {
            let b = rat_to_f64(&(&prog.o[i] + &beta[i]));
            (((-t - b) / s).floor() as i64 - 1, ((t - b) / s).ceil() as i64 + 1)
        })
        .collect();
    let total: f64 = bounds.iter().map(|(a, b)| (b - a + 1) as f64).product();
    if total > spec.budget as f64 {
        return Err(Error::RegionTooLarge { estimated: total, budget: spec.budget });
    }
    let mut n: Vec<i64> = bounds.iter().map(|b| b.0).collect();
    let mut cnt = 0;
    let r2 = &spec.t.t_inf * &spec.t.t_inf;
    loop {
        let k: Vec<BigRational> =
            n.iter().zip(&prog.o).map(|(&ni, oi)| oi + BigRational::from_integer(BigInt::from(ni)) * &prog.s).collect();
        let boxed: Vec<BigRational> = k.iter().zip(&beta).map(|(a, b)| a + b).collect();
        let y: Vec<BigRational> = k.iter().zip(&xi).map(|(a, b)| a + b).collect();
        let inside = match &spec.form.gram_inf.exact {
            Some(_) => boxed.iter().fold(BigRational::zero(), |a, x| a + x * x) < r2,
            None => boxed.iter().map(|x| rat_to_f64(x).powi(2)).sum::<f64>() < t * t,
        };
        if inside {
            let ok_real = match &spec.form.gram_inf.exact {
                Some(g) => {
                    let v = g.quad(&y);
                    spec.target.inf_lo < v && v < spec.target.inf_hi
                }
                None => {
                    let yf: Vec<f64> = y.iter().map(rat_to_f64).collect();
                    spec.target.contains_real(spec.form.gram_inf.eval(&yf), None)
                }
            };
            let ok_fin = spec.target.finite.iter().all(|(&p, (a, c))| {
                let diff = spec.form.gram_at(p).quad(&y) - a;
                diff.is_zero() || valuation(&diff, p).unwrap() >= *c
            });
            if ok_real && ok_fin {
                cnt += 1;
            }
        }
        let mut i = 0;
        loop {
            if i == d {
                return Ok(cnt);
            }
            n[i] += 1;
            if n[i] <= bounds[i].1 {
                break;
            }
            n[i] = bounds[i].0;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::QMat;
    use crate::sarith::{int, rat};

    fn lorentz(ctx: &SConfig) -> QuadraticFormS {
        QuadraticFormS::rational(ctx, QMat::from_i64(&[&[1, 0, 0], &[0, 1, 0], &[0, 0, -1]])).unwrap()
    }

    #[test]
    fn interval_examples() {
        let ctx = SConfig::new(vec![3]).unwrap();
        let f = ShrinkingFamily::constant(1.0, 0.0);
        let i = f.interval_at(&TVector::from_f64(7.0, vec![0]), &ctx);
        assert_eq!((i.inf_lo, i.inf_hi), (rat(-1, 2), rat(1, 2)));
        let f = ShrinkingFamily { kappa_inf: 0.5, ..ShrinkingFamily::constant(1.0, 0.0) }.with_finite(3, int(0), 0, 1);
        let i = f.interval_at(&TVector::from_f64(4.0, vec![2]), &ctx);
        assert_eq!(&i.inf_hi - &i.inf_lo, rat(1, 2));
        assert_eq!(i.finite[&3], (int(0), 2));
    }

    #[test]
    fn congruence_examples() {
        let ctx = SConfig::empty();
        let q = lorentz(&ctx);
        let cc = CongruenceContext::new(3, 2, vec![int(1), int(1), int(0)], &ctx).unwrap();
        let spec = |lo, hi| CountSpec {
            form: &q,
            shift: None,
            congruence: Some(&cc),
            target: SInterval::real_only(lo, hi),
            t: TVector::from_f64(3.0, vec![]),
            placement: BoxPlacement::Point,
            budget: 1_000_000,
        };
        assert_eq!(count(&spec(rat(3, 2), rat(5, 2))).unwrap(), 4);
        assert_eq!(count(&spec(rat(-1, 2), rat(1, 2))).unwrap(), 0);
        assert!(CongruenceContext::new(3, 2, vec![int(0); 3], &ctx).is_err());
    }

    #[test]
    fn fast_count_matches_naive() {
        let ctx = SConfig::new(vec![2]).unwrap();
        let q = lorentz(&ctx);
        let target = SInterval::real_only(rat(-3, 2), rat(5, 2)).with_coset(2, int(1), 1);
        for (xi, placement) in [
            (None, BoxPlacement::Point),
            (Some(vec![rat(1, 5), int(0), rat(2, 3)]), BoxPlacement::Point),
            (Some(vec![rat(1, 5), int(0), rat(2, 3)]), BoxPlacement::Shifted),
        ] {
            for t2 in [-1i64, 0, 1] {
                let spec = CountSpec {
                    form: &q,
                    shift: xi.clone(),
                    congruence: None,
                    target: target.clone(),
                    t: TVector::from_f64(4.5, vec![t2]),
                    placement,
                    budget: 10_000_000,
                };
                assert_eq!(count(&spec).unwrap(), count_naive(&spec).unwrap(), "{xi:?} {placement:?} {t2}");
            }
        }
    }

    #[test]
    fn rescaling_identity_and_control() {
        let ctx = SConfig::new(vec![2]).unwrap();
        let q = lorentz(&ctx);
        let cc = CongruenceContext::new(3, 3, vec![int(1), int(0), int(2)], &ctx).unwrap();
        let target = SInterval::real_only(int(-4), int(7));
        let t = TVector::from_f64(9.0, vec![1]);
        assert!(rescale_identity_check(&cc, &q, &target, &t, true, 10_000_000).unwrap().holds);
        assert!(!rescale_identity_check(&cc, &q, &target, &t, false, 10_000_000).unwrap().holds);
    }

    #[test]
    fn kappa_out_of_range() {
        let ctx = SConfig::empty();
        let q = lorentz(&ctx);
        let f = ShrinkingFamily { kappa_inf: 1.0, ..ShrinkingFamily::constant(1.0, 0.0) };
        let mode = SweepMode::Inhomogeneous(vec![int(0); 3]);
        assert!(matches!(sweep(&q, &mode, &f, &[TVector::from_f64(5.0, vec![])], 1000), Err(Error::FamilyOutOfRange(_))));
        let f = ShrinkingFamily::constant(1.0, 0.0);
        assert!(sweep(&q, &mode, &f, &[], 1000).unwrap().rows.is_empty());
    }
}
