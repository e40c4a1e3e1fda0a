//! Affine S-lattices Λ = ℤ_S^d g + ξ and enumeration of their points inside
//! S-boxes.
//!
//! At a finite place p ∈ S the box condition |v − c|_p ≤ p^{t_p} on
//! v = k g + ξ is equivalent, for g ∈ GL_d(ℤ_p), to k + η ∈ p^{−t_p}ℤ_p^d with
//! η = (ξ − c) g^{−1}. Each coordinate of k therefore ranges over an arithmetic
//! progression o_i + M^{−1}ℤ with M = ∏ p^{t_p}, and the real condition becomes
//! an ellipsoid in the integer index n with k = o + n/M.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::QMat;
use crate::qspace::{QuadraticFormS, SInterval};
use crate::sarith::{f64_to_rat, pow_rat, rat_to_f64, reduce_rat_mod, valuation, SConfig, TVector};

/// Default cap on the projected number of enumeration candidates.
pub const DEFAULT_BUDGET: u64 = 50_000_000;

/// Volume of the Euclidean unit ball in ℝ^d.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(d - 2) * 2.0 * std::f64::consts::PI / d as f64,
    }
}

/// B(c, T): Euclidean ‖v − c‖ < T_∞ at the real place and the closed sup-norm
/// ball |v − c|_p ≤ p^{t_p} at each finite place.
#[derive(Clone, Debug, PartialEq)]
pub struct SBox {
    pub t: TVector,
    pub center: Option<Vec<BigRational>>,
    /// Center the finite-place balls at 0 whatever `center` is.
    pub finite_at_origin: bool,
}

impl SBox {
    pub fn new(t: TVector) -> Self {
        SBox { t, center: None, finite_at_origin: false }
    }

    pub fn centered(t: TVector, center: Vec<BigRational>) -> Self {
        SBox { t, center: Some(center), finite_at_origin: false }
    }

    pub fn radius_f64(&self) -> f64 {
        rat_to_f64(&self.t.t_inf)
    }

    pub fn volume(&self, d: usize, ctx: &SConfig) -> f64 {
        let mut v = unit_ball_volume(d) * self.radius_f64().powi(d as i32);
        for (&p, &t) in ctx.primes().iter().zip(&self.t.t_p) {
            v *= (p as f64).powf((d as i64 * t) as f64);
        }
        v
    }

    fn center_or_zero(&self, d: usize) -> Vec<BigRational> {
        self.center.clone().unwrap_or_else(|| vec![BigRational::zero(); d])
    }

    fn finite_center(&self, d: usize) -> Vec<BigRational> {
        if self.finite_at_origin {
            vec![BigRational::zero(); d]
        } else {
            self.center_or_zero(d)
        }
    }
}

/// The basis and shift of a lattice at one finite place, reduced mod p^precision.
#[derive(Clone, Debug, PartialEq)]
pub struct PadicPart {
    pub p: u64,
    pub precision: u32,
    /// Row-major d×d basis mod p^precision; its determinant is a unit.
    pub basis: Vec<u64>,
    pub shift: Vec<u64>,
}

impl PadicPart {
    pub fn modulus(&self) -> u64 {
        self.p.pow(self.precision)
    }
}

#[derive(Clone, Debug)]
enum Repr {
    /// One rational basis and shift shared by every place.
    Exact { g: QMat, xi: Vec<BigRational>, ginv: QMat },
    /// Independent data at each place; `eta` holds ξ_p g_p^{−1} mod p^k.
    Split { g_inf: Vec<f64>, xi_inf: Vec<f64>, padic: Vec<PadicPart>, eta: Vec<Vec<u64>>, ginv_p: Vec<Vec<u64>> },
}

/// Λ = ℤ_S^d g + ξ.
#[derive(Clone, Debug)]
pub struct AffineSLattice {
    d: usize,
    ctx: SConfig,
    repr: Repr,
}

/// Inverse of a d×d matrix mod m = p^k by Gauss–Jordan; `None` if the
/// determinant is not a unit.
pub fn inverse_mod(a: &[u64], d: usize, p: u64, m: u64) -> Option<Vec<u64>> {
    let mm = m as u128;
    let mut a: Vec<u128> = a.iter().map(|&x| x as u128 % mm).collect();
    let mut inv: Vec<u128> = (0..d * d).map(|i| (i / d == i % d) as u128).collect();
    for c in 0..d {
        let piv = (c..d).find(|&r| !a[r * d + c].is_multiple_of(p as u128))?;
        for j in 0..d {
            a.swap(piv * d + j, c * d + j);
            inv.swap(piv * d + j, c * d + j);
        }
        let pinv = reduce_rat_mod(
            &BigRational::new(BigInt::one(), BigInt::from(a[c * d + c] as u64)),
            &BigInt::from(m),
        )?
        .to_u64()? as u128;
        for j in 0..d {
            a[c * d + j] = a[c * d + j] * pinv % mm;
            inv[c * d + j] = inv[c * d + j] * pinv % mm;
        }
        for r in 0..d {
            let f = a[r * d + c];
            if r != c && f != 0 {
                for j in 0..d {
                    a[r * d + j] = (a[r * d + j] + (mm - f) * a[c * d + j] % mm) % mm;
                    inv[r * d + j] = (inv[r * d + j] + (mm - f) * inv[c * d + j] % mm) % mm;
                }
            }
        }
    }
    Some(inv.into_iter().map(|x| x as u64).collect())
}

fn vec_mat_mod(v: &[u64], a: &[u64], d: usize, m: u64) -> Vec<u64> {
    let mm = m as u128;
    (0..d)
        .map(|j| (0..d).fold(0u128, |acc, i| (acc + v[i] as u128 * a[i * d + j] as u128) % mm) as u64)
        .collect()
}

impl AffineSLattice {
    /// Exact mode: g must lie in GL_d(ℤ_p) at every p ∈ S.
    pub fn exact(ctx: &SConfig, g: QMat, xi: Vec<BigRational>) -> Result<Self> {
        let d = g.rows();
        if !g.is_square() {
            return Err(Error::InvalidInput("basis must be square".into()));
        }
        if xi.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: xi.len() });
        }
        let det = g.det();
        if det.is_zero() {
            return Err(Error::InvalidInput("singular basis".into()));
        }
        for &p in ctx.primes() {
            let integral = g.entries().iter().all(|x| x.is_zero() || valuation(x, p).unwrap() >= 0);
            if !integral || valuation(&det, p).unwrap() != 0 {
                return Err(Error::InvalidInput(format!("basis is not in GL_d(Z_{p})")));
            }
        }
        let ginv = g.inverse().expect("nonsingular");
        Ok(AffineSLattice { d, ctx: ctx.clone(), repr: Repr::Exact { g, xi, ginv } })
    }

    /// ℤ_S^d + ξ.
    pub fn standard(ctx: &SConfig, d: usize, xi: Option<Vec<BigRational>>) -> Self {
        let xi = xi.unwrap_or_else(|| vec![BigRational::zero(); d]);
        Self::exact(ctx, QMat::identity(d), xi).expect("identity basis")
    }

    /// Split mode: a real basis with its shift and one p-adic part per prime of S.
    pub fn split(ctx: &SConfig, g_inf: Vec<f64>, xi_inf: Vec<f64>, padic: Vec<PadicPart>) -> Result<Self> {
        let d = xi_inf.len();
        if g_inf.len() != d * d {
            return Err(Error::DimensionMismatch { expected: d * d, got: g_inf.len() });
        }
        if padic.len() != ctx.primes().len() || padic.iter().zip(ctx.primes()).any(|(a, &p)| a.p != p) {
            return Err(Error::InvalidInput("one p-adic part per prime of S, in order".into()));
        }
        let mut eta = Vec::new();
        let mut ginv_p = Vec::new();
        for part in &padic {
            if part.basis.len() != d * d || part.shift.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: part.shift.len() });
            }
            let m = part.modulus();
            let inv = inverse_mod(&part.basis, d, part.p, m)
                .ok_or_else(|| Error::InvalidInput(format!("basis is not in GL_d(Z_{})", part.p)))?;
            eta.push(vec_mat_mod(&part.shift, &inv, d, m));
            ginv_p.push(inv);
        }
        Ok(AffineSLattice { d, ctx: ctx.clone(), repr: Repr::Split { g_inf, xi_inf, padic, eta, ginv_p } })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn context(&self) -> &SConfig {
        &self.ctx
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.repr, Repr::Exact { .. })
    }

    /// Real basis as a row-major double matrix.
    pub fn basis_inf(&self) -> Vec<f64> {
        match &self.repr {
            Repr::Exact { g, .. } => g.to_f64(),
            Repr::Split { g_inf, .. } => g_inf.clone(),
        }
    }

    pub fn shift_inf(&self) -> Vec<f64> {
        match &self.repr {
            Repr::Exact { xi, .. } => xi.iter().map(rat_to_f64).collect(),
            Repr::Split { xi_inf, .. } => xi_inf.clone(),
        }
    }

    /// The lattice with ξ and every p-adic shift negated.
    pub fn negated_shift(&self) -> Self {
        let mut out = self.clone();
        match &mut out.repr {
            Repr::Exact { xi, .. } => xi.iter_mut().for_each(|x| *x = -x.clone()),
            Repr::Split { xi_inf, padic, eta, .. } => {
                xi_inf.iter_mut().for_each(|x| *x = -*x);
                for (part, e) in padic.iter_mut().zip(eta.iter_mut()) {
                    let m = part.modulus();
                    part.shift.iter_mut().for_each(|x| *x = (m - *x % m) % m);
                    e.iter_mut().for_each(|x| *x = (m - *x % m) % m);
                }
            }
        }
        out
    }

    /// Whether 0 ∈ Λ, i.e. η ∈ ℤ_S^d. Split mode decides this only up to the
    /// stored precision together with the real shift being zero.
    pub fn contains_origin(&self) -> bool {
        match &self.repr {
            Repr::Exact { xi, ginv, .. } => {
                let eta = ginv.left_mul_vec(xi);
                eta.iter().all(|x| self.ctx.is_s_integer(x))
            }
            Repr::Split { xi_inf, eta, .. } => {
                xi_inf.iter().all(|x| *x == 0.0) && eta.iter().all(|e| e.iter().all(|x| *x == 0))
            }
        }
    }

    /// The progression of admissible k: per-coordinate offset o and inverse step M.
    fn progression(&self, bx: &SBox) -> Result<(Vec<BigRational>, BigRational)> {
        let d = self.d;
        if bx.t.t_p.len() != self.ctx.primes().len() {
            return Err(Error::DimensionMismatch { expected: self.ctx.primes().len(), got: bx.t.t_p.len() });
        }
        let c = bx.finite_center(d);
        if c.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: c.len() });
        }
        let mut m = BigRational::one();
        // targets[i] lists (p, x_p, t_p) with the condition k_i − x_p ∈ p^{−t_p}ℤ_p.
        let mut targets: Vec<Vec<(u64, BigRational, i64)>> = vec![Vec::new(); d];
        match &self.repr {
            Repr::Exact { xi, ginv, .. } => {
                let diff: Vec<BigRational> = xi.iter().zip(&c).map(|(a, b)| a - b).collect();
                let eta = ginv.left_mul_vec(&diff);
                for (&p, &t) in self.ctx.primes().iter().zip(&bx.t.t_p) {
                    m *= pow_rat(p, t);
                    for i in 0..d {
                        targets[i].push((p, -eta[i].clone(), t));
                    }
                }
            }
            Repr::Split { padic, eta, ginv_p, .. } => {
                for (idx, (&p, &t)) in self.ctx.primes().iter().zip(&bx.t.t_p).enumerate() {
                    m *= pow_rat(p, t);
                    let part = &padic[idx];
                    let needed = (-t).max(0) as u32;
                    let md = BigInt::from(part.modulus());
                    let mut cred = Vec::with_capacity(d);
                    for x in &c {
                        if x.is_zero() {
                            cred.push(0u64);
                            continue;
                        }
                        if valuation(x, p).unwrap() < 0 {
                            return Err(Error::InvalidInput(
                                "split-mode box centers must be p-integral at every p in S".into(),
                            ));
                        }
                        cred.push(reduce_rat_mod(x, &md).unwrap().to_u64().unwrap());
                    }
                    if needed == 0 {
                        // η_p ∈ ℤ_p^d and p^{−t}ℤ_p ⊇ ℤ_p: the condition is k ∈ p^{−t}ℤ_p^d.
                        for i in 0..d {
                            targets[i].push((p, BigRational::zero(), t));
                        }
                        continue;
                    }
                    if part.precision < needed {
                        return Err(Error::InsufficientPadicPrecision { p, needed, have: part.precision });
                    }
                    let mm = part.modulus();
                    let cg = vec_mat_mod(&cred, &ginv_p[idx], d, mm);
                    for i in 0..d {
                        let e = (eta[idx][i] + mm - cg[i]) % mm;
                        targets[i].push((p, -BigRational::from_integer(BigInt::from(e)), t));
                    }
                }
            }
        }
        let o = targets.iter().map(|tg| crt_offset(tg)).collect();
        Ok((o, m))
    }

    /// Candidate generator for B: integer indices n with k = o + n/M.
    fn prepare(&self, bx: &SBox) -> Result<Prepared> {
        let d = self.d;
        let (o, m) = self.progression(bx)?;
        let minv = BigRational::one() / &m;
        let c = bx.center_or_zero(d);
        let (b, c0, exact) = match &self.repr {
            Repr::Exact { g, xi, .. } => {
                let bq = g.scale(&minv);
                let og = g.left_mul_vec(&o);
                let c0q: Vec<BigRational> = (0..d).map(|j| &og[j] + &xi[j] - &c[j]).collect();
                (bq.to_f64(), c0q.iter().map(rat_to_f64).collect::<Vec<f64>>(), Some((bq, c0q)))
            }
            Repr::Split { g_inf, xi_inf, .. } => {
                let mf = rat_to_f64(&m);
                let of: Vec<f64> = o.iter().map(rat_to_f64).collect();
                let b: Vec<f64> = g_inf.iter().map(|x| x / mf).collect();
                let c0 = (0..d)
                    .map(|j| (0..d).map(|i| of[i] * g_inf[i * d + j]).sum::<f64>() + xi_inf[j] - rat_to_f64(&c[j]))
                    .collect();
                (b, c0, None)
            }
        };
        let center_f = c.iter().map(rat_to_f64).collect();
        Ok(Prepared { d, o, minv, b, c0, exact, radius: bx.t.t_inf.clone(), center: c, center_f })
    }

    fn estimate(&self, prep: &Prepared) -> f64 {
        let d = self.d;
        let det = DMatrix::from_row_slice(d, d, &prep.b).determinant().abs();
        let r = rat_to_f64(&prep.radius);
        unit_ball_volume(d) * r.powi(d as i32) / det
    }

    /// Points of Λ ∩ B sorted lexicographically by k.
    pub fn enumerate_points(&self, bx: &SBox, budget: u64) -> Result<Vec<LatticePoint>> {
        let prep = self.prepare(bx)?;
        self.check_budget(&prep, budget)?;
        let mut pts = prep.scan(|cand| Some(cand.to_point()));
        pts.sort_by(|a, b| a.k.cmp(&b.k));
        Ok(pts)
    }

    /// #(Λ ∩ B), optionally excluding the origin.
    pub fn count_points(&self, bx: &SBox, homogeneous: bool, budget: u64) -> Result<u64> {
        let prep = self.prepare(bx)?;
        self.check_budget(&prep, budget)?;
        let hits = prep.scan(|cand| (!(homogeneous && cand.is_origin())).then_some(()));
        Ok(hits.len() as u64)
    }

    fn check_budget(&self, prep: &Prepared, budget: u64) -> Result<()> {
        let est = self.estimate(prep);
        if !(est <= budget as f64) {
            return Err(Error::RegionTooLarge { estimated: est, budget });
        }
        Ok(())
    }

    /// Counts points in a bounding ball that pass `keep`, which sees the real
    /// coordinates and, in exact mode, the exact point.
    pub fn count_filtered<F>(&self, bx: &SBox, homogeneous: bool, budget: u64, keep: F) -> Result<u64>
    where
        F: Fn(&[f64], Option<&[BigRational]>) -> bool + Sync,
    {
        let prep = self.prepare(bx)?;
        self.check_budget(&prep, budget)?;
        let hits = prep.scan(|cand| {
            if homogeneous && cand.is_origin() {
                return None;
            }
            let ex = cand.exact_point();
            keep(cand.real, ex.as_deref()).then_some(())
        });
        Ok(hits.len() as u64)
    }
}

/// o ∈ ℤ_S with o − x_p ∈ p^{−t_p}ℤ_p for each target (p, x_p, t_p).
///
/// With an S-unit E of valuation e_p ≥ max(t_p, −v_p(x_p)) at each p, n = E·o
/// must satisfy n ≡ E·x_p mod p^{e_p − t_p}; the solutions form o + M^{−1}ℤ.
pub fn crt_offset(targets: &[(u64, BigRational, i64)]) -> BigRational {
    let mut e_unit = BigRational::one();
    let mut exps = Vec::with_capacity(targets.len());
    for (p, x, t) in targets {
        let vx = if x.is_zero() { i64::MAX } else { valuation(x, *p).unwrap() };
        let e = (*t).max(if vx == i64::MAX { *t } else { -vx });
        exps.push(e);
        e_unit *= pow_rat(*p, e);
    }
    let mut n = BigInt::zero();
    let mut modulus = BigInt::one();
    for ((p, x, t), e) in targets.iter().zip(&exps) {
        let mp = BigInt::from(*p).pow((e - t) as u32);
        if mp.is_one() {
            continue;
        }
        let r = reduce_rat_mod(&(&e_unit * x), &mp).expect("p-integral after scaling");
        // n ≡ r mod mp, combined with the running residue mod `modulus`.
        let inv = crate::sarith::mod_inverse(&modulus, &mp).expect("coprime moduli");
        let k = ((&r - &n) * inv).mod_floor(&mp);
        n += k * &modulus;
        modulus *= &mp;
    }
    BigRational::from_integer(n) / e_unit
}

/// A lattice point v = k g + ξ.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticePoint {
    pub k: Vec<BigRational>,
    pub real: Vec<f64>,
    /// Exact coordinates in exact mode.
    pub exact: Option<Vec<BigRational>>,
}

struct Prepared {
    d: usize,
    o: Vec<BigRational>,
    minv: BigRational,
    b: Vec<f64>,
    c0: Vec<f64>,
    exact: Option<(QMat, Vec<BigRational>)>,
    radius: BigRational,
    /// Real box center; c0 and the scan work relative to it.
    center: Vec<BigRational>,
    center_f: Vec<f64>,
}

struct Candidate<'a> {
    prep: &'a Prepared,
    n: &'a [i64],
    real: &'a [f64],
}

impl Candidate<'_> {
    fn exact_point(&self) -> Option<Vec<BigRational>> {
        let (bq, c0) = self.prep.exact.as_ref()?;
        let nq: Vec<BigRational> = self.n.iter().map(|&x| BigRational::from_integer(BigInt::from(x))).collect();
        let v = bq.left_mul_vec(&nq);
        Some(v.into_iter().zip(c0).zip(&self.prep.center).map(|((a, b), c)| a + b + c).collect())
    }

    fn is_origin(&self) -> bool {
        match self.exact_point() {
            Some(v) => v.iter().all(|x| x.is_zero()),
            None => self.real.iter().all(|x| *x == 0.0),
        }
    }

    fn to_point(&self) -> LatticePoint {
        let k = self
            .n
            .iter()
            .zip(&self.prep.o)
            .map(|(&n, o)| o + BigRational::from_integer(BigInt::from(n)) * &self.prep.minv)
            .collect();
        LatticePoint { k, real: self.real.to_vec(), exact: self.exact_point() }
    }
}

impl Prepared {
    /// Visits every n with ‖nB + c0‖ < T in the deterministic order of the
    /// shards, keeping the values `f` returns.
    fn scan<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&Candidate) -> Option<T> + Sync,
    {
        let d = self.d;
        let r = rat_to_f64(&self.radius);
        let r2_enum = (r * (1.0 + 1e-9) + 1e-12).powi(2);
        let fp = FinckePohst::new(d, &self.b, &self.c0);
        let (lo, hi) = fp.top_range(r2_enum);
        if lo > hi {
            return Vec::new();
        }
        let r2 = self.radius.clone() * &self.radius;
        let r2f = r * r;
        let visit = |top_lo: i64, top_hi: i64| {
            let mut out = Vec::new();
            let mut real = vec![0.0; d];
            let mut point = vec![0.0; d];
            fp.run(r2_enum, top_lo, top_hi, &mut |n: &[i64]| {
                for j in 0..d {
                    real[j] = self.c0[j] + (0..d).map(|i| n[i] as f64 * self.b[i * d + j]).sum::<f64>();
                }
                let inside = match &self.exact {
                    Some((bq, c0)) => {
                        let nq: Vec<BigRational> = n.iter().map(|&x| BigRational::from_integer(BigInt::from(x))).collect();
                        let v = bq.left_mul_vec(&nq);
                        let s = v.iter().zip(c0).fold(BigRational::zero(), |acc, (a, b)| {
                            let y = a + b;
                            acc + &y * &y
                        });
                        s < r2
                    }
                    None => real.iter().map(|x| x * x).sum::<f64>() < r2f,
                };
                if inside {
                    for j in 0..d {
                        point[j] = real[j] + self.center_f[j];
                    }
                    if let Some(t) = f(&Candidate { prep: self, n, real: &point }) {
                        out.push(t);
                    }
                }
            });
            out
        };
        let span = (hi - lo + 1) as usize;
        let shards = if span >= 64 { span.min(4 * rayon::current_num_threads().max(1)) } else { 1 };
        if shards == 1 {
            return visit(lo, hi);
        }
        let bounds: Vec<(i64, i64)> = (0..shards)
            .map(|s| {
                let a = lo + (span * s / shards) as i64;
                let b = lo + (span * (s + 1) / shards) as i64 - 1;
                (a, b)
            })
            .collect();
        let parts: Vec<Vec<T>> = bounds.par_iter().map(|&(a, b)| visit(a, b)).collect();
        parts.into_iter().flatten().collect()
    }
}

/// Fincke–Pohst enumeration of integer rows n with ‖(n − y)B‖² ≤ R², using the
/// Gram–Schmidt data of the rows of B. Coordinates are fixed from the last one
/// down.
pub struct FinckePohst {
    d: usize,
    /// ‖b_j*‖².
    r: Vec<f64>,
    /// μ[i][j] for i > j.
    mu: Vec<Vec<f64>>,
    /// Real center: n = y gives the point −c0 ↦ 0.
    y: Vec<f64>,
}

impl FinckePohst {
    pub fn new(d: usize, b: &[f64], c0: &[f64]) -> Self {
        let mut bstar: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut r = vec![0.0; d];
        let mut mu = vec![vec![0.0; d]; d];
        for i in 0..d {
            let bi: Vec<f64> = b[i * d..(i + 1) * d].to_vec();
            let mut v = bi.clone();
            for j in 0..i {
                let m = dot(&bi, &bstar[j]) / r[j];
                mu[i][j] = m;
                for t in 0..d {
                    v[t] -= m * bstar[j][t];
                }
            }
            r[i] = dot(&v, &v);
            bstar.push(v);
        }
        let bm = DMatrix::from_row_slice(d, d, b);
        // y B = −c0, i.e. Bᵀ yᵀ = −c0ᵀ.
        let rhs = nalgebra::DVector::from_iterator(d, c0.iter().map(|x| -x));
        let y = bm.transpose().lu().solve(&rhs).map(|v| v.iter().copied().collect()).unwrap_or(vec![0.0; d]);
        FinckePohst { d, r, mu, y }
    }

    /// Range of the last coordinate.
    pub fn top_range(&self, r2: f64) -> (i64, i64) {
        let j = self.d - 1;
        let w = (r2 / self.r[j]).sqrt();
        ((self.y[j] - w).ceil() as i64, (self.y[j] + w).floor() as i64)
    }

    /// Calls `visit` for every n in the ellipsoid with n_{d−1} ∈ [top_lo, top_hi].
    pub fn run(&self, r2: f64, top_lo: i64, top_hi: i64, visit: &mut dyn FnMut(&[i64])) {
        let mut n = vec![0i64; self.d];
        let mut u = vec![0.0; self.d];
        self.level(self.d - 1, r2, 0.0, top_lo, top_hi, &mut n, &mut u, visit);
    }

    #[allow(clippy::too_many_arguments)]
    fn level(
        &self,
        j: usize,
        r2: f64,
        partial: f64,
        lo_cap: i64,
        hi_cap: i64,
        n: &mut [i64],
        u: &mut [f64],
        visit: &mut dyn FnMut(&[i64]),
    ) {
        let shift: f64 = (j + 1..self.d).map(|i| self.mu[i][j] * u[i]).sum();
        let center = self.y[j] - shift;
        let rem = r2 - partial;
        if rem < 0.0 {
            return;
        }
        let w = (rem / self.r[j]).sqrt();
        let lo = ((center - w).ceil() as i64).max(lo_cap);
        let hi = ((center + w).floor() as i64).min(hi_cap);
        for x in lo..=hi {
            n[j] = x;
            u[j] = x as f64 - self.y[j];
            let z = u[j] + shift;
            let p = partial + self.r[j] * z * z;
            if p > r2 {
                continue;
            }
            if j == 0 {
                visit(n);
            } else {
                self.level(j - 1, r2, p, i64::MIN, i64::MAX, n, u, visit);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Σ_{v∈Λ} f(v) or Σ_{v∈Λ∖{0}} f(v).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformMode {
    Affine,
    Homogeneous,
}

/// ∏ [lo_i, hi_i] at the real place and |v|_p ≤ p^{s_p} at each p ∈ S.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductBox {
    pub lo: Vec<BigRational>,
    pub hi: Vec<BigRational>,
    pub s: Vec<i64>,
}

impl ProductBox {
    pub fn new(lo: Vec<BigRational>, hi: Vec<BigRational>, s: Vec<i64>) -> Self {
        ProductBox { lo, hi, s }
    }

    pub fn volume(&self, ctx: &SConfig) -> f64 {
        let d = self.lo.len() as i64;
        let mut v: f64 = self.lo.iter().zip(&self.hi).map(|(a, b)| rat_to_f64(&(b - a)).max(0.0)).product();
        for (&p, &s) in ctx.primes().iter().zip(&self.s) {
            v *= (p as f64).powf((d * s) as f64);
        }
        v
    }

    /// Smallest centered S-box containing the product box.
    pub fn bounding_box(&self) -> SBox {
        let two = BigRational::from_integer(BigInt::from(2));
        let center: Vec<BigRational> = self.lo.iter().zip(&self.hi).map(|(a, b)| (a + b) / &two).collect();
        let half: f64 = self.lo.iter().zip(&self.hi).map(|(a, b)| rat_to_f64(&((b - a) / &two)).powi(2)).sum::<f64>();
        let r = half.sqrt() * (1.0 + 1e-6) + 1e-9;
        SBox { t: TVector::new(f64_to_rat(r), self.s.clone()), center: Some(center), finite_at_origin: true }
    }

    pub fn contains_real(&self, v: &[f64], exact: Option<&[BigRational]>) -> bool {
        match exact {
            Some(e) => e.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (a, b))| a <= x && x <= b),
            None => v
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (a, b))| rat_to_f64(a) <= *x && *x <= rat_to_f64(b)),
        }
    }
}

/// Bounded, compactly supported indicator test functions.
#[derive(Clone, Debug)]
pub enum TestFunction {
    Ball(SBox),
    ProductBox(ProductBox),
    /// Points of the box whose form values lie in the target set.
    QuadricSlice { bx: SBox, form: Box<QuadraticFormS>, target: SInterval },
}

impl TestFunction {
    /// Real support radius about the origin.
    pub fn support_radius(&self) -> f64 {
        match self {
            TestFunction::Ball(b) | TestFunction::QuadricSlice { bx: b, .. } => {
                let c: f64 = b.center.as_ref().map_or(0.0, |c| c.iter().map(|x| rat_to_f64(x).powi(2)).sum::<f64>().sqrt());
                b.radius_f64() + c
            }
            TestFunction::ProductBox(pb) => pb
                .lo
                .iter()
                .zip(&pb.hi)
                .map(|(a, b)| rat_to_f64(&a.abs()).max(rat_to_f64(&b.abs())).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    pub fn volume(&self, ctx: &SConfig, d: usize) -> Result<f64> {
        match self {
            TestFunction::Ball(b) => Ok(b.volume(d, ctx)),
            TestFunction::ProductBox(pb) => Ok(pb.volume(ctx)),
            TestFunction::QuadricSlice { bx, form, target } => {
                if bx.center.as_ref().is_some_and(|c| c.iter().any(|x| !x.is_zero())) {
                    return Err(Error::InvalidInput("quadric slice volumes need a box centered at 0".into()));
                }
                crate::volume::slice_volume(form, target, &bx.t).map(|v| v.value)
            }
        }
    }
}

/// Σ f(v) over Λ, or over Λ ∖ {0} in homogeneous mode.
pub fn siegel_transform(f: &TestFunction, lat: &AffineSLattice, mode: TransformMode, budget: u64) -> Result<f64> {
    count_in_set(lat, f, mode, budget).map(|c| c as f64)
}

/// #(Λ ∩ A) for an indicator A.
pub fn count_in_set(lat: &AffineSLattice, a: &TestFunction, mode: TransformMode, budget: u64) -> Result<u64> {
    let hom = mode == TransformMode::Homogeneous;
    match a {
        TestFunction::Ball(b) => lat.count_points(b, hom, budget),
        TestFunction::ProductBox(pb) => {
            let bx = pb.bounding_box();
            lat.count_filtered(&bx, hom, budget, |v, e| pb.contains_real(v, e))
        }
        TestFunction::QuadricSlice { bx, form, target } => {
            if !lat.is_exact() && !target.finite.is_empty() {
                return Err(Error::InvalidInput("p-adic slice targets need an exact-mode lattice".into()));
            }
            lat.count_filtered(bx, hom, budget, |v, e| match e {
                Some(x) => form.eval(x).map(|fv| target.contains(&fv)).unwrap_or(false),
                None => target.contains_real(form.gram_inf.eval(v), None),
            })
        }
    }
}

/// D(Λ, A) = |#(Λ ∩ A) − vol(A)|.
pub fn discrepancy(lat: &AffineSLattice, a: &TestFunction, budget: u64) -> Result<f64> {
    let count = count_in_set(lat, a, TransformMode::Affine, budget)?;
    let vol = a.volume(lat.context(), lat.dim())?;
    Ok((count as f64 - vol).abs())
}

/// D(A) ≤ max{D(A₁), D(A₂)} + vol(A₂ ∖ A₁) for nested A₁ ⊆ A ⊆ A₂.
pub fn discrepancy_bound_holds(d_a: f64, d_a1: f64, d_a2: f64, vol_a1: f64, vol_a2: f64) -> bool {
    d_a <= d_a1.max(d_a2) + (vol_a2 - vol_a1) + 1e-9 * (1.0 + vol_a2)
}

/// Counts per finite prime for reporting: #{p-adic index classes} = p^{d t_p}.
pub fn finite_index(ctx: &SConfig, t: &TVector, d: usize) -> BTreeMap<u64, BigRational> {
    ctx.primes().iter().zip(&t.t_p).map(|(&p, &tp)| (p, pow_rat(p, d as i64 * tp))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sarith::{int, rat};

    fn disk(r: f64) -> SBox {
        SBox::new(TVector::from_f64(r, vec![]))
    }

    #[test]
    fn integer_disk() {
        let lat = AffineSLattice::standard(&SConfig::empty(), 2, None);
        assert_eq!(lat.count_points(&disk(2.5), false, DEFAULT_BUDGET).unwrap(), 21);
        assert_eq!(lat.count_points(&disk(2.5), true, DEFAULT_BUDGET).unwrap(), 20);
        let pts = lat.enumerate_points(&disk(2.5), DEFAULT_BUDGET).unwrap();
        assert_eq!(pts.len(), 21);
        assert!(pts.windows(2).all(|w| w[0].k < w[1].k));
    }

    #[test]
    fn half_integer_grid() {
        let ctx = SConfig::new(vec![2]).unwrap();
        let lat = AffineSLattice::standard(&ctx, 2, None);
        let bx = SBox::new(TVector::new(rat(3, 2), vec![1]));
        assert_eq!(lat.count_points(&bx, false, DEFAULT_BUDGET).unwrap(), 25);
    }

    #[test]
    fn shifted_lattice() {
        let lat = AffineSLattice::standard(&SConfig::empty(), 2, Some(vec![rat(1, 5), int(0)]));
        assert_eq!(lat.count_points(&disk(0.1), false, DEFAULT_BUDGET).unwrap(), 0);
        let pts = lat.enumerate_points(&disk(0.5), DEFAULT_BUDGET).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].exact.as_ref().unwrap(), &vec![rat(1, 5), int(0)]);
    }

    #[test]
    fn disk_discrepancy() {
        let lat = AffineSLattice::standard(&SConfig::empty(), 2, None);
        let d = discrepancy(&lat, &TestFunction::Ball(disk(2.5)), DEFAULT_BUDGET).unwrap();
        assert!((d - (21.0 - 6.25 * std::f64::consts::PI)).abs() < 1e-12);
    }

    #[test]
    fn crt_offsets() {
        // o ≡ 1/2 mod 2^{-1}... k − 1/2 ∈ 2ℤ_2 and k − 1 ∈ 3^{1}ℤ_3 (t = −1 at both).
        let o = crt_offset(&[(2, rat(1, 2), -1), (3, int(1), -1)]);
        assert!(valuation(&(&o - rat(1, 2)), 2).unwrap() >= 1);
        assert!(valuation(&(&o - int(1)), 3).unwrap() >= 1);
    }

    #[test]
    fn split_matches_exact() {
        let ctx = SConfig::new(vec![3]).unwrap();
        let g = QMat::from_i64(&[&[1, 1], &[0, 1]]);
        let xi = vec![rat(1, 4), rat(2, 7)];
        let ex = AffineSLattice::exact(&ctx, g.clone(), xi.clone()).unwrap();
        let m = 3u64.pow(4);
        let red = |x: &BigRational| reduce_rat_mod(x, &BigInt::from(m)).unwrap().to_u64().unwrap();
        let part = PadicPart { p: 3, precision: 4, basis: g.entries().iter().map(red).collect(), shift: xi.iter().map(red).collect() };
        let sp = AffineSLattice::split(&ctx, g.to_f64(), xi.iter().map(rat_to_f64).collect(), vec![part]).unwrap();
        for t in [-2i64, -1, 0, 1] {
            let bx = SBox::new(TVector::from_f64(4.0, vec![t]));
            assert_eq!(ex.count_points(&bx, false, DEFAULT_BUDGET).unwrap(), sp.count_points(&bx, false, DEFAULT_BUDGET).unwrap());
        }
        let bx = SBox::new(TVector::from_f64(4.0, vec![-5]));
        assert!(matches!(sp.count_points(&bx, false, DEFAULT_BUDGET), Err(Error::InsufficientPadicPrecision { .. })));
    }

    #[test]
    fn budget_is_enforced() {
        let lat = AffineSLattice::standard(&SConfig::empty(), 3, None);
        assert!(matches!(lat.count_points(&disk(1000.0), false, 1000), Err(Error::RegionTooLarge { .. })));
    }
}
