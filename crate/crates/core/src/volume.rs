//! Volumes of quadric slices {x : Q(x) ∈ I} inside S-balls.
//!
//! Finite places are exact: after x = p^{−t}y and clearing denominators the
//! volume is a residue count mod p^K, computed from the Jordan splitting by
//! convolving per-block value distributions. Those distributions are constant
//! on orbits of multiplication by unit squares, so each convolution is
//! evaluated on one representative per orbit.
//!
//! The real place diagonalizes Q orthogonally (the Euclidean ball is rotation
//! invariant), solves for one coordinate in closed form and integrates the
//! remaining ones numerically.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::counting::ShrinkingFamily;
use crate::error::{Error, Result};
use crate::matrix::QMat;
use crate::qspace::{jordan_decompose, JordanBlock, QuadraticFormS, RealGram, SInterval};
use crate::rng::{batch_sizes, stream_rng};
use crate::sarith::{pow_rat, rat_to_f64, reduce_rat_mod, valuation, TVector};

/// Largest residue ring p^m used by the exact counter.
pub const MAX_RESIDUES: u64 = 1 << 22;

#[derive(Clone, Debug, PartialEq)]
pub struct PadicVolumeRequest {
    pub p: u64,
    pub gram: QMat,
    /// Ball p^{−t}ℤ_p^d.
    pub t: i64,
    /// Target a + p^c ℤ_p.
    pub a: BigRational,
    pub c: i64,
    /// Smallest counting exponent to use; the required one is taken if larger.
    pub m: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PadicVolume {
    #[serde(serialize_with = "ser_rat")]
    pub value: BigRational,
    /// Counting exponent m′ at which the certificate was checked.
    pub modulus_exponent: u32,
    /// Counts at m′ and m′+1 agreed after normalization.
    pub certified: bool,
}

fn ser_rat<S: serde::Serializer>(x: &BigRational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&x.to_string())
}

fn min_valuation(g: &QMat, p: u64) -> i64 {
    g.entries().iter().filter(|x| !x.is_zero()).map(|x| valuation(x, p).unwrap()).min().unwrap_or(0)
}

/// vol_p{x ∈ p^{−t}ℤ_p^d : Q(x) ∈ a + p^cℤ_p} for the Haar measure with vol(ℤ_p) = 1.
pub fn padic_quadric_volume(req: &PadicVolumeRequest) -> Result<PadicVolume> {
    let p = req.p;
    let d = req.gram.rows();
    if req.gram.det().is_zero() {
        return Err(Error::DegenerateForm(p.to_string()));
    }
    let e = (-min_valuation(&req.gram, p)).max(0);
    let k = req.c + 2 * req.t + e;
    let b = &req.a * pow_rat(p, e + 2 * req.t);
    let ball = pow_rat(p, d as i64 * req.t);
    if k <= 0 {
        let inside = b.is_zero() || valuation(&b, p).unwrap() >= k;
        let value = if inside { ball } else { BigRational::zero() };
        return Ok(PadicVolume { value, modulus_exponent: 0, certified: true });
    }
    if !b.is_zero() && valuation(&b, p).unwrap() < 0 {
        return Ok(PadicVolume { value: BigRational::zero(), modulus_exponent: k as u32, certified: true });
    }
    let gram = req.gram.scale(&pow_rat(p, e));
    let (_, blocks) = jordan_decompose(&gram, p)?;
    let m = (k as u32).max(req.m.unwrap_or(0));
    let n0 = count_residues(&blocks, p, m, &b, k as u32)?;
    let n1 = count_residues(&blocks, p, m + 1, &b, k as u32)?;
    let pd = BigInt::from(p).pow(d as u32);
    if &n0 * &pd != n1 {
        return Err(Error::NotStabilized(m + 1));
    }
    let denom = BigInt::from(p).pow(d as u32 * m);
    let value = ball * BigRational::new(n0, denom);
    Ok(PadicVolume { value, modulus_exponent: m, certified: true })
}

/// #{y mod p^m : Q(y) ≡ b mod p^k} for the block-diagonal form.
pub fn count_residues(blocks: &[JordanBlock], p: u64, m: u32, b: &BigRational, k: u32) -> Result<BigInt> {
    let pm = p.checked_pow(m).filter(|&x| x <= MAX_RESIDUES).ok_or(Error::NotStabilized(m))?;
    let d: usize = blocks.iter().map(|x| x.size()).sum();
    if (d as f64) * (m as f64) * (p as f64).log2() > 126.0 {
        return Err(Error::NotStabilized(m));
    }
    let bm = reduce_rat_mod(b, &BigInt::from(pm)).unwrap().to_u64().unwrap();
    let pk = p.pow(k);
    let dists: Vec<Vec<u128>> = blocks.iter().map(|blk| block_distribution(blk, m, pm)).collect();
    let (last, rest) = dists.split_last().unwrap();
    let mut acc = rest.first().cloned().unwrap_or_else(|| {
        let mut z = vec![0u128; pm as usize];
        z[0] = 1;
        z
    });
    for f in rest.iter().skip(1) {
        acc = convolve_classes(&acc, f, p, m, pm);
    }
    // Σ over r ≡ b mod p^k of (acc * last)(r).
    let base = bm % pk;
    let total: u128 = (0..pm / pk)
        .into_par_iter()
        .map(|j| {
            let r = base + j * pk;
            point_convolution(&acc, last, r, pm)
        })
        .sum();
    Ok(BigInt::from(total))
}

fn point_convolution(f: &[u128], g: &[u128], r: u64, pm: u64) -> u128 {
    let mut s = 0u128;
    for (x, &fx) in f.iter().enumerate() {
        if fx != 0 {
            let y = (r + pm - x as u64) % pm;
            s += fx * g[y as usize];
        }
    }
    s
}

/// Orbit of r ∈ ℤ/p^m under multiplication by unit squares.
fn orbit_key(r: u64, p: u64, m: u32) -> (u32, u64) {
    if r == 0 {
        return (m, 0);
    }
    let mut v = 0;
    let mut u = r;
    while u.is_multiple_of(p) {
        u /= p;
        v += 1;
    }
    let rem = m - v;
    if p == 2 {
        let md = 1u64 << rem.min(3);
        (v, u % md)
    } else {
        // Euler's criterion mod p decides the square class.
        (v, crate::sarith::mod_pow(u % p, (p - 1) / 2, p))
    }
}

fn convolve_classes(f: &[u128], g: &[u128], p: u64, m: u32, pm: u64) -> Vec<u128> {
    let mut reps: Vec<u64> = Vec::new();
    let mut seen: HashMap<(u32, u64), usize> = HashMap::new();
    let keys: Vec<(u32, u64)> = (0..pm).map(|r| orbit_key(r, p, m)).collect();
    for (r, key) in keys.iter().enumerate() {
        seen.entry(*key).or_insert_with(|| {
            reps.push(r as u64);
            reps.len() - 1
        });
    }
    let vals: Vec<u128> = reps.par_iter().map(|&r| point_convolution(f, g, r, pm)).collect();
    keys.iter().map(|k| vals[seen[k]]).collect()
}

fn block_distribution(blk: &JordanBlock, m: u32, pm: u64) -> Vec<u128> {
    let md = BigInt::from(pm);
    let red = |x: &BigRational| reduce_rat_mod(x, &md).unwrap().to_u64().unwrap() as u128;
    let mut f = vec![0u128; pm as usize];
    match blk {
        JordanBlock::One(a) => {
            let a = red(a);
            for y in 0..pm as u128 {
                f[((a * (y * y % pm as u128)) % pm as u128) as usize] += 1;
            }
        }
        JordanBlock::Two([a, b, c]) => {
            // 2^v times an even unimodular binary form: hyperbolic or anisotropic.
            let v = valuation(b, 2).unwrap();
            let s = pow_rat(2, -v);
            let (a1, b1, c1) = (a * &s, b * &s, c * &s);
            let neg_det = &b1 * &b1 - &a1 * &c1;
            let hyperbolic = reduce_rat_mod(&neg_det, &BigInt::from(8)).unwrap() == BigInt::one();
            let w = (v + 1) as u32;
            for (r, slot) in f.iter_mut().enumerate() {
                let key = r as u64;
                *slot = if hyperbolic { count_hyperbolic(key, w, m) } else { count_anisotropic(key, w, m) };
            }
        }
    }
    f
}

/// #{(x, y) mod 2^m : 2^w·xy ≡ r}.
fn count_hyperbolic(r: u64, w: u32, m: u32) -> u128 {
    let mut total: u128 = if r == 0 { 1u128 << m } else { 0 };
    for i in 0..m {
        let g = (w + i).min(m);
        if r.is_multiple_of(1u64 << g) {
            total += (1u128 << (m - i - 1)) * (1u128 << g);
        }
    }
    total
}

/// #{(x, y) mod 2^m : 2^w·(x² + xy + y²) ≡ r}.
fn count_anisotropic(r: u64, w: u32, m: u32) -> u128 {
    if w >= m {
        return if r == 0 { 1u128 << (2 * m) } else { 0 };
    }
    if !r.is_multiple_of(1u64 << w) {
        return 0;
    }
    (1u128 << (2 * w)) * norm_count(r >> w, m - w)
}

/// #{(x, y) mod 2^k : x² + xy + y² ≡ s mod 2^k}.
fn norm_count(s: u64, k: u32) -> u128 {
    if k == 0 {
        return 1;
    }
    let s = s % (1u64 << k);
    if s % 2 == 1 {
        return 3u128 << (k - 1);
    }
    if k == 1 {
        return 1;
    }
    if s % 4 == 2 {
        return 0;
    }
    4 * norm_count(s >> 2, k - 2)
}

/// Numerical method for the real slice volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RealMethod {
    MonteCarlo,
    Integral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RealVolume {
    pub value: f64,
    pub error: f64,
}

/// Q(z) = Σ λ_i z_i² with the solved coordinate split off.
struct Slicer {
    lam: f64,
    rest: Vec<f64>,
}

impl Slicer {
    fn new(gram: &RealGram) -> Self {
        let ev = gram.eigenvalues();
        let pos = ev.iter().filter(|&&x| x > 0.0).count();
        let neg = ev.len() - pos;
        // Solving for a coordinate of the minority sign keeps the singular set
        // of the remaining integrand small.
        let want_neg = neg > 0 && (neg <= pos || pos == 0);
        let j = (0..ev.len())
            .filter(|&i| if pos == 0 || neg == 0 { true } else { (ev[i] < 0.0) == want_neg })
            .max_by(|&a, &b| ev[a].abs().partial_cmp(&ev[b].abs()).unwrap())
            .unwrap();
        let rest = ev.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &x)| x).collect();
        Slicer { lam: ev[j], rest }
    }

    /// Length of {s : s² < 1 − |z|², λs² + Σ λ_i z_i² ∈ (lo, hi)}.
    fn length(&self, z: &[f64], lo: f64, hi: f64) -> f64 {
        let r2: f64 = z.iter().map(|x| x * x).sum();
        if r2 >= 1.0 {
            return 0.0;
        }
        let rho2 = 1.0 - r2;
        let q: f64 = z.iter().zip(&self.rest).map(|(x, l)| l * x * x).sum();
        let (mut a, mut b) = ((lo - q) / self.lam, (hi - q) / self.lam);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        let top = b.min(rho2);
        let bot = a.max(0.0);
        if top <= bot {
            0.0
        } else {
            2.0 * (top.sqrt() - bot.sqrt())
        }
    }
}

/// Nodes and weights of the n-point Gauss–Legendre rule on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (mut q0, mut q1) = (1.0, z);
                for k in 2..=n {
                    let q2 = ((2 * k - 1) as f64 * z * q1 - (k - 1) as f64 * q0) / k as f64;
                    q0 = q1;
                    q1 = q2;
                }
                let dq = n as f64 * (z * q1 - q0) / (z * z - 1.0);
                w[i] = 2.0 / ((1.0 - z * z) * dq * dq);
                break;
            }
        }
        x[i] = z;
    }
    (x, w)
}

fn composite_rule(panels: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(8);
    let h = 2.0 / panels as f64;
    let mut nodes = Vec::with_capacity(panels * 8);
    let mut weights = Vec::with_capacity(panels * 8);
    for k in 0..panels {
        let mid = -1.0 + h * (k as f64 + 0.5);
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(mid + 0.5 * h * xi);
            weights.push(0.5 * h * wi);
        }
    }
    (nodes, weights)
}

fn integrate_cube(sl: &Slicer, lo: f64, hi: f64, panels: usize) -> f64 {
    let k = sl.rest.len();
    let (x, w) = composite_rule(panels);
    match k {
        0 => sl.length(&[], lo, hi),
        1 => x.iter().zip(&w).map(|(a, wa)| wa * sl.length(&[*a], lo, hi)).sum(),
        2 => {
            let parts: Vec<f64> = (0..x.len())
                .into_par_iter()
                .map(|i| x.iter().zip(&w).map(|(b, wb)| wb * sl.length(&[x[i], *b], lo, hi)).sum::<f64>() * w[i])
                .collect();
            parts.iter().sum()
        }
        3 => {
            let parts: Vec<f64> = (0..x.len())
                .into_par_iter()
                .map(|i| {
                    let mut s = 0.0;
                    for (b, wb) in x.iter().zip(&w) {
                        for (c, wc) in x.iter().zip(&w) {
                            s += wb * wc * sl.length(&[x[i], *b, *c], lo, hi);
                        }
                    }
                    s * w[i]
                })
                .collect();
            parts.iter().sum()
        }
        _ => f64::NAN,
    }
}

/// Conditional Monte Carlo over the unsolved coordinates.
fn monte_carlo(sl: &Slicer, lo: f64, hi: f64, samples: u64, seed: u64) -> RealVolume {
    let k = sl.rest.len();
    let cube = 2f64.powi(k as i32);
    let batches = batch_sizes(samples, 20_000);
    let sums: Vec<(f64, f64)> = batches
        .par_iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut rng = stream_rng(seed, i as u64);
            let mut z = vec![0.0; k];
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                for x in z.iter_mut() {
                    *x = rng.random_range(-1.0..1.0);
                }
                let l = sl.length(&z, lo, hi);
                s += l;
                s2 += l * l;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = samples as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0);
    RealVolume { value: mean * cube, error: cube * (var / n).sqrt() }
}

/// vol{x ∈ ℝ^d : ‖x‖ < T, Q(x) ∈ (lo, hi)}.
pub fn real_quadric_volume(gram: &RealGram, t: f64, lo: f64, hi: f64, method: RealMethod) -> Result<RealVolume> {
    if !(hi > lo) {
        return Ok(RealVolume { value: 0.0, error: 0.0 });
    }
    if !gram.is_nondegenerate() {
        return Err(Error::DegenerateForm("inf".into()));
    }
    let d = gram.dim();
    let sl = Slicer::new(gram);
    let (l, h) = (lo / (t * t), hi / (t * t));
    let scale = t.powi(d as i32);
    let unit = match method {
        RealMethod::Integral if d <= 4 => {
            let panels = if d <= 3 { 64 } else { 12 };
            let a = integrate_cube(&sl, l, h, panels);
            let b = integrate_cube(&sl, l, h, 2 * panels);
            RealVolume { value: b, error: (a - b).abs() }
        }
        _ => monte_carlo(&sl, l, h, 400_000, 0x5eed),
    };
    Ok(RealVolume { value: unit.value * scale, error: unit.error * scale })
}

/// Both methods, failing with `MethodDisagreement` when they are inconsistent.
pub fn real_quadric_volume_checked(gram: &RealGram, t: f64, lo: f64, hi: f64) -> Result<RealVolume> {
    let a = real_quadric_volume(gram, t, lo, hi, RealMethod::Integral)?;
    let b = real_quadric_volume(gram, t, lo, hi, RealMethod::MonteCarlo)?;
    let tol = 5.0 * b.error + 2.0 * a.error + 1e-12 * a.value.abs().max(1.0);
    if (a.value - b.value).abs() > tol {
        return Err(Error::MethodDisagreement(format!("integral {} vs monte carlo {} ± {}", a.value, b.value, b.error)));
    }
    Ok(a)
}

/// vol(Q⁻¹(I) ∩ B(0, T)) as the product of per-place volumes.
pub fn slice_volume(form: &QuadraticFormS, target: &SInterval, t: &TVector) -> Result<RealVolume> {
    let d = form.dim();
    let real = real_quadric_volume(
        &form.gram_inf,
        rat_to_f64(&t.t_inf),
        rat_to_f64(&target.inf_lo),
        rat_to_f64(&target.inf_hi),
        RealMethod::Integral,
    )?;
    let mut factor = 1.0;
    for (&p, &tp) in form.context().primes().iter().zip(&t.t_p) {
        let v = match target.finite.get(&p) {
            None => pow_rat(p, d as i64 * tp),
            Some((a, c)) => {
                padic_quadric_volume(&PadicVolumeRequest { p, gram: form.gram_at(p).clone(), t: tp, a: a.clone(), c: *c, m: None })?
                    .value
            }
        };
        factor *= rat_to_f64(&v);
    }
    Ok(RealVolume { value: real.value * factor, error: real.error * factor })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleRow {
    pub t_inf: f64,
    pub t_p: Vec<i64>,
    pub volume: f64,
    pub vol_interval: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolumeAsymptotics {
    pub c_q: f64,
    pub error: f64,
    pub c_inf: f64,
    pub c_p: BTreeMap<u64, f64>,
    pub table: Vec<ScaleRow>,
}

/// Exact p-adic ratio vol_p/(vol(I_p)·p^{t(d−2)}) at exponent t.
fn padic_ratio(form: &QuadraticFormS, family: &ShrinkingFamily, p: u64, t: i64) -> Result<BigRational> {
    let d = form.dim() as i64;
    let fp = family.finite_part(p).ok_or_else(|| Error::InvalidInput(format!("family has no data at {p}")))?;
    let c = fp.c + fp.kappa as i64 * t;
    let vol = padic_quadric_volume(&PadicVolumeRequest { p, gram: form.gram_at(p).clone(), t, a: fp.a.clone(), c, m: None })?;
    Ok(vol.value * pow_rat(p, c) * pow_rat(p, -t * (d - 2)))
}

/// Limit of the p-adic ratios from exponent t on: Aitken's Δ² on exact
/// values, which is exact for eventually geometric sequences. Returns the
/// limit and the size of the last correction.
fn padic_limit(form: &QuadraticFormS, family: &ShrinkingFamily, p: u64, t: i64) -> Result<(f64, f64)> {
    let r: Vec<BigRational> = (0..4).map(|i| padic_ratio(form, family, p, t + i)).collect::<Result<_>>()?;
    let aitken = |a: &BigRational, b: &BigRational, c: &BigRational| -> Option<BigRational> {
        let d1 = b - a;
        let d2 = c - b;
        if d2.is_zero() {
            return Some(c.clone());
        }
        let den = &d2 - &d1;
        if den.is_zero() {
            return None;
        }
        Some(c - &d2 * &d2 / den)
    };
    match (aitken(&r[0], &r[1], &r[2]), aitken(&r[1], &r[2], &r[3])) {
        (Some(x), Some(y)) if x == y => Ok((rat_to_f64(&x), 0.0)),
        (_, Some(y)) => Ok((rat_to_f64(&y), rat_to_f64(&(&y - &r[3]).abs()))),
        _ => Ok((rat_to_f64(&r[3]), rat_to_f64(&(&r[3] - &r[2]).abs()))),
    }
}

/// Volume ratios along a ladder of scales and the extrapolated constant c_Q.
pub fn leading_constant(form: &QuadraticFormS, family: &ShrinkingFamily, ladder: &[TVector]) -> Result<VolumeAsymptotics> {
    let d = form.dim();
    let ctx = form.context().clone();
    family.validate(d, &ctx)?;
    if ladder.is_empty() {
        return Err(Error::InvalidInput("empty ladder".into()));
    }
    let mut table = Vec::new();
    let mut real_ratios = Vec::new();
    let mut real_err = 0.0;
    for t in ladder {
        let ti = rat_to_f64(&t.t_inf);
        let interval = family.interval_at(t, &ctx);
        let (lo, hi) = (rat_to_f64(&interval.inf_lo), rat_to_f64(&interval.inf_hi));
        let rv = real_quadric_volume(&form.gram_inf, ti, lo, hi, RealMethod::Integral)?;
        let len = hi - lo;
        let rr = rv.value / (len * ti.powi(d as i32 - 2));
        real_err = rv.error / (len * ti.powi(d as i32 - 2));
        let mut ratio = rr;
        let mut volume = rv.value;
        for (&p, &tp) in ctx.primes().iter().zip(&t.t_p) {
            let r = rat_to_f64(&padic_ratio(form, family, p, tp)?);
            ratio *= r;
            let fp = family.finite_part(p).unwrap();
            volume *= r * (p as f64).powf(-((fp.c + fp.kappa as i64 * tp) as f64)) * (p as f64).powf((tp * (d as i64 - 2)) as f64);
        }
        real_ratios.push((ti, rr));
        table.push(ScaleRow { t_inf: ti, t_p: t.t_p.clone(), volume, vol_interval: family.volume_at(t, &ctx), ratio });
    }
    let gamma = (2.0 + family.kappa_inf) * (1.0f64).min((d as f64 - 2.0) / 2.0);
    let (c_inf, extrap_err) = if real_ratios.len() >= 2 {
        let (t0, r0) = real_ratios[real_ratios.len() - 2];
        let (t1, r1) = real_ratios[real_ratios.len() - 1];
        let lam = (t1 / t0).powf(gamma);
        let c = r1 + (r1 - r0) / (lam - 1.0);
        (c, (c - r1).abs())
    } else {
        (real_ratios[0].1, 0.0)
    };
    let last = ladder.last().unwrap();
    let mut c_p = BTreeMap::new();
    let mut c_q = c_inf;
    let mut rel_err = (extrap_err + real_err) / c_inf.abs().max(1e-300);
    for (&p, &tp) in ctx.primes().iter().zip(&last.t_p) {
        let (lim, err) = padic_limit(form, family, p, tp)?;
        c_p.insert(p, lim);
        c_q *= lim;
        rel_err += err / lim.abs().max(1e-300);
    }
    Ok(VolumeAsymptotics { c_q, error: rel_err * c_q.abs(), c_inf, c_p, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sarith::{int, rat};

    fn lorentz() -> QMat {
        QMat::from_i64(&[&[1, 0, 0], &[0, 1, 0], &[0, 0, -1]])
    }

    fn brute(g: &QMat, p: u64, m: u32, b: i64, k: u32) -> u64 {
        let d = g.rows();
        let pm = p.pow(m) as i64;
        let gi: Vec<i64> = g.entries().iter().map(|x| x.to_integer().to_i64().unwrap()).collect();
        let total = (pm as u64).pow(d as u32);
        let pk = p.pow(k) as i64;
        (0..total)
            .filter(|&idx| {
                let mut y = vec![0i64; d];
                let mut r = idx;
                for yi in y.iter_mut() {
                    *yi = (r % pm as u64) as i64;
                    r /= pm as u64;
                }
                let mut q = 0i64;
                for i in 0..d {
                    for j in 0..d {
                        q += gi[i * d + j] * y[i] * y[j];
                    }
                }
                (q - b).rem_euclid(pk) == 0
            })
            .count() as u64
    }

    #[test]
    fn ternary_zero_target() {
        let v = padic_quadric_volume(&PadicVolumeRequest { p: 3, gram: lorentz(), t: 0, a: int(0), c: 1, m: None }).unwrap();
        assert_eq!(v.value, rat(1, 3));
        let whole = padic_quadric_volume(&PadicVolumeRequest { p: 3, gram: lorentz(), t: 0, a: int(0), c: 0, m: None }).unwrap();
        assert_eq!(whole.value, int(1));
    }

    #[test]
    fn residue_counts_match_brute_force() {
        let forms = [
            lorentz(),
            QMat::from_i64(&[&[0, 1, 0], &[1, 0, 0], &[0, 0, 3]]),
            QMat::from_i64(&[&[2, 1, 0], &[1, 2, 0], &[0, 0, 4]]),
            QMat::from_i64(&[&[4, 2, 0], &[2, 6, 0], &[0, 0, 1]]),
        ];
        for g in &forms {
            for &p in &[2u64, 3] {
                let (_, blocks) = jordan_decompose(g, p).unwrap();
                for m in 1..=3u32 {
                    for b in 0..p.pow(m) as i64 {
                        let fast = count_residues(&blocks, p, m, &int(b), m).unwrap();
                        assert_eq!(fast, BigInt::from(brute(g, p, m, b, m)), "g={g} p={p} m={m} b={b}");
                    }
                }
            }
        }
    }

    #[test]
    fn unit_scaling_invariance() {
        // x ↦ ux with u an S-unit maps the slice for a to the slice for u²a.
        let base = padic_quadric_volume(&PadicVolumeRequest { p: 3, gram: lorentz(), t: 1, a: int(1), c: 2, m: None }).unwrap();
        let g5 = lorentz().scale(&int(25));
        let other = padic_quadric_volume(&PadicVolumeRequest { p: 3, gram: g5, t: 1, a: int(25), c: 2, m: None }).unwrap();
        assert_eq!(base.value, other.value);
    }

    #[test]
    fn zero_width_interval() {
        let g = RealGram::exact(lorentz());
        assert_eq!(real_quadric_volume(&g, 3.0, 0.5, 0.5, RealMethod::Integral).unwrap().value, 0.0);
    }

    #[test]
    fn real_methods_agree() {
        let g = RealGram::exact(lorentz());
        let v = real_quadric_volume_checked(&g, 10.0, -0.5, 0.5).unwrap();
        assert!(v.error / v.value < 0.01, "{v:?}");
        // Two-dimensional hyperbolic band 2xy ∈ (−δ, δ) in the unit disk.
        let h = RealGram::exact(QMat::from_i64(&[&[0, 1], &[1, 0]]));
        real_quadric_volume_checked(&h, 1.0, -0.1, 0.1).unwrap();
    }

    #[test]
    fn gauss_legendre_is_exact_on_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(a, b)| b * a.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
    }
}
