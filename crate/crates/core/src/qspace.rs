//! Quadratic forms over ℚ_S: evaluation with shifts, local invariants,
//! isotropy, diagonalization, Jordan splitting over ℤ_p, and reduction to
//! the hyperbolic shape 2x₁x_d + q′(x₂,…,x_{d−1}).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::matrix::QMat;
use crate::sarith::{f64_to_rat, mod_pow, pow_rat, rat_to_f64, reduce_rat_mod, valuation, Place, SConfig};

/// Gram matrix at the real place. `approx` is always populated; `exact` is
/// present when the form is rational there.
#[derive(Clone, Debug, PartialEq)]
pub struct RealGram {
    pub approx: Vec<f64>,
    pub exact: Option<QMat>,
}

impl RealGram {
    pub fn exact(g: QMat) -> Self {
        RealGram { approx: g.to_f64(), exact: Some(g) }
    }

    pub fn approx(g: Vec<f64>) -> Self {
        RealGram { approx: g, exact: None }
    }

    pub fn dim(&self) -> usize {
        (self.approx.len() as f64).sqrt().round() as usize
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        let d = v.len();
        let mut s = 0.0;
        for i in 0..d {
            let mut r = 0.0;
            for j in 0..d {
                r += self.approx[i * d + j] * v[j];
            }
            s += v[i] * r;
        }
        s
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let d = self.dim();
        let m = DMatrix::from_row_slice(d, d, &self.approx);
        let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    /// Nonzero determinant, certified exactly when rational and otherwise by
    /// separating every eigenvalue from the backward-error radius.
    pub fn is_nondegenerate(&self) -> bool {
        if let Some(g) = &self.exact {
            return !g.det().is_zero();
        }
        let d = self.dim() as f64;
        let frob = self.approx.iter().map(|x| x * x).sum::<f64>().sqrt();
        let radius = 16.0 * d * f64::EPSILON * frob;
        self.eigenvalues().iter().all(|l| l.abs() > radius)
    }

    /// (positive, negative) inertia.
    pub fn signature(&self) -> (usize, usize) {
        if let Some(g) = &self.exact {
            if let Ok((_, diag)) = diagonalize_gram(g, Place::Inf) {
                let pos = diag.iter().filter(|x| x.is_positive()).count();
                return (pos, diag.len() - pos);
            }
        }
        let ev = self.eigenvalues();
        let pos = ev.iter().filter(|&&x| x > 0.0).count();
        (pos, ev.len() - pos)
    }
}

/// Per-place translation vector ξ.
#[derive(Clone, Debug, PartialEq)]
pub struct Shift {
    pub inf: Vec<f64>,
    pub inf_exact: Option<Vec<BigRational>>,
    pub finite: BTreeMap<u64, Vec<BigRational>>,
}

impl Shift {
    /// The same rational vector at every place.
    pub fn rational(xi: &[BigRational], ctx: &SConfig) -> Self {
        Shift {
            inf: xi.iter().map(rat_to_f64).collect(),
            inf_exact: Some(xi.to_vec()),
            finite: ctx.primes().iter().map(|&p| (p, xi.to_vec())).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.inf.iter().all(|x| *x == 0.0)
            && self.inf_exact.as_ref().is_none_or(|v| v.iter().all(|x| x.is_zero()))
            && self.finite.values().all(|v| v.iter().all(|x| x.is_zero()))
    }

    /// The common rational value if the shift is diagonal.
    pub fn diagonal(&self) -> Option<Vec<BigRational>> {
        let e = self.inf_exact.as_ref()?;
        if self.finite.values().all(|v| v == e) {
            Some(e.clone())
        } else {
            None
        }
    }
}

/// A quadratic form over ℚ_S together with an optional shift.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticFormS {
    dim: usize,
    ctx: SConfig,
    pub gram_inf: RealGram,
    pub gram_p: BTreeMap<u64, QMat>,
    pub shift: Option<Shift>,
}

/// Values of a form at a point, one per place.
#[derive(Clone, Debug, PartialEq)]
pub struct FormValue {
    pub inf: f64,
    pub inf_exact: Option<BigRational>,
    pub finite: BTreeMap<u64, BigRational>,
}

impl QuadraticFormS {
    pub fn new(ctx: &SConfig, gram_inf: RealGram, gram_p: BTreeMap<u64, QMat>) -> Result<Self> {
        let d = gram_inf.dim();
        if gram_inf.approx.len() != d * d {
            return Err(Error::InvalidInput("real Gram matrix is not square".into()));
        }
        for i in 0..d {
            for j in 0..i {
                if gram_inf.approx[i * d + j] != gram_inf.approx[j * d + i] {
                    return Err(Error::InvalidInput("real Gram matrix is not symmetric".into()));
                }
            }
        }
        if let Some(e) = &gram_inf.exact {
            if !e.is_symmetric() || e.rows() != d {
                return Err(Error::InvalidInput("exact real Gram matrix malformed".into()));
            }
        }
        for &p in ctx.primes() {
            let g = gram_p.get(&p).ok_or_else(|| Error::InvalidInput(format!("missing Gram matrix at p={p}")))?;
            if g.rows() != d || !g.is_symmetric() {
                return Err(Error::InvalidInput(format!("Gram matrix at p={p} malformed")));
            }
        }
        if gram_p.keys().any(|p| !ctx.contains(*p)) {
            return Err(Error::InvalidInput("Gram matrix given at a prime outside S".into()));
        }
        Ok(QuadraticFormS { dim: d, ctx: ctx.clone(), gram_inf, gram_p, shift: None })
    }

    /// One rational Gram matrix used at every place.
    pub fn rational(ctx: &SConfig, g: QMat) -> Result<Self> {
        let gp = ctx.primes().iter().map(|&p| (p, g.clone())).collect();
        Self::new(ctx, RealGram::exact(g), gp)
    }

    /// A real form (possibly irrational) with rational forms at the finite places.
    pub fn with_real(ctx: &SConfig, real: Vec<f64>, finite: BTreeMap<u64, QMat>) -> Result<Self> {
        Self::new(ctx, RealGram::approx(real), finite)
    }

    pub fn with_shift(mut self, shift: Shift) -> Result<Self> {
        if shift.inf.len() != self.dim || shift.finite.values().any(|v| v.len() != self.dim) {
            return Err(Error::DimensionMismatch { expected: self.dim, got: shift.inf.len() });
        }
        self.shift = Some(shift);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn context(&self) -> &SConfig {
        &self.ctx
    }

    pub fn gram_at(&self, p: u64) -> &QMat {
        &self.gram_p[&p]
    }

    pub fn is_nondegenerate(&self) -> bool {
        self.gram_inf.is_nondegenerate() && self.gram_p.values().all(|g| !g.det().is_zero())
    }

    pub fn is_nondegenerate_at(&self, place: Place) -> bool {
        match place {
            Place::Inf => self.gram_inf.is_nondegenerate(),
            Place::Finite(p) => self.gram_p.get(&p).is_some_and(|g| !g.det().is_zero()),
        }
    }

    /// 𝗊(v + ξ) at every place.
    pub fn eval(&self, v: &[BigRational]) -> Result<FormValue> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: v.len() });
        }
        let shifted = |xi: Option<&Vec<BigRational>>| -> Vec<BigRational> {
            match xi {
                Some(x) => v.iter().zip(x).map(|(a, b)| a + b).collect(),
                None => v.to_vec(),
            }
        };
        let inf_exact = match (&self.gram_inf.exact, &self.shift) {
            (Some(g), None) => Some(g.quad(v)),
            (Some(g), Some(s)) => s.inf_exact.as_ref().map(|x| g.quad(&shifted(Some(x)))),
            _ => None,
        };
        let inf = match &inf_exact {
            Some(x) => rat_to_f64(x),
            None => {
                let mut w: Vec<f64> = v.iter().map(rat_to_f64).collect();
                if let Some(s) = &self.shift {
                    for (a, b) in w.iter_mut().zip(&s.inf) {
                        *a += b;
                    }
                }
                self.gram_inf.eval(&w)
            }
        };
        let mut finite = BTreeMap::new();
        for (&p, g) in &self.gram_p {
            let xi = self.shift.as_ref().and_then(|s| s.finite.get(&p));
            finite.insert(p, g.quad(&shifted(xi)));
        }
        Ok(FormValue { inf, inf_exact, finite })
    }

    pub fn is_isotropic_at(&self, place: Place) -> Result<bool> {
        if self.dim < 2 {
            return Ok(false);
        }
        match place {
            Place::Inf => {
                if !self.gram_inf.is_nondegenerate() {
                    return Err(Error::DegenerateForm("inf".into()));
                }
                let (pos, neg) = self.gram_inf.signature();
                Ok(pos > 0 && neg > 0)
            }
            Place::Finite(p) => {
                let g = self
                    .gram_p
                    .get(&p)
                    .ok_or_else(|| Error::InvalidInput(format!("no form at p={p}")))?;
                is_isotropic_gram(g, p)
            }
        }
    }

    /// Isotropic at every place of S.
    pub fn is_isotropic(&self) -> Result<bool> {
        for place in self.ctx.places() {
            if !self.is_isotropic_at(place)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn legendre(u: &BigRational, p: u64) -> i32 {
    let r = reduce_rat_mod(u, &BigInt::from(p)).expect("unit").to_u64().unwrap();
    if r == 0 {
        0
    } else if mod_pow(r, (p - 1) / 2, p) == 1 {
        1
    } else {
        -1
    }
}

fn split_unit(x: &BigRational, p: u64) -> (i64, BigRational) {
    let v = valuation(x, p).expect("nonzero");
    (v, x * pow_rat(p, -v))
}

fn unit_mod8(u: &BigRational) -> u64 {
    reduce_rat_mod(u, &BigInt::from(8)).expect("odd").to_u64().unwrap()
}

/// The Hilbert symbol (a, b)_v.
pub fn hilbert_symbol(a: &BigRational, b: &BigRational, place: Place) -> i32 {
    assert!(!a.is_zero() && !b.is_zero(), "Hilbert symbol of zero");
    match place {
        Place::Inf => {
            if a.is_negative() && b.is_negative() {
                -1
            } else {
                1
            }
        }
        Place::Finite(2) => {
            let (al, u) = split_unit(a, 2);
            let (be, v) = split_unit(b, 2);
            let (u, v) = (unit_mod8(&u), unit_mod8(&v));
            let eps = |x: u64| ((x - 1) / 2) % 2;
            let omega = |x: u64| ((x * x - 1) / 8) % 2;
            let e = eps(u) * eps(v) + (al.rem_euclid(2) as u64) * omega(v) + (be.rem_euclid(2) as u64) * omega(u);
            if e.is_multiple_of(2) {
                1
            } else {
                -1
            }
        }
        Place::Finite(p) => {
            let (al, u) = split_unit(a, p);
            let (be, v) = split_unit(b, p);
            let mut s = 1;
            if (al * be).rem_euclid(2) == 1 && ((p - 1) / 2) % 2 == 1 {
                s = -s;
            }
            if be.rem_euclid(2) == 1 {
                s *= legendre(&u, p);
            }
            if al.rem_euclid(2) == 1 {
                s *= legendre(&v, p);
            }
            s
        }
    }
}

/// Whether a nonzero rational is a square in ℚ_p.
pub fn is_padic_square(x: &BigRational, p: u64) -> bool {
    let (v, u) = split_unit(x, p);
    if v.rem_euclid(2) != 0 {
        return false;
    }
    if p == 2 {
        unit_mod8(&u) == 1
    } else {
        legendre(&u, p) == 1
    }
}

/// Isotropy over ℚ_p from the discriminant and Hasse invariant.
pub fn is_isotropic_gram(g: &QMat, p: u64) -> Result<bool> {
    let (_, a) = diagonalize_gram(g, Place::Finite(p))?;
    let d = a.len();
    let place = Place::Finite(p);
    let disc = a.iter().fold(BigRational::one(), |acc, x| acc * x);
    let minus_one = -BigRational::one();
    Ok(match d {
        0 | 1 => false,
        2 => is_padic_square(&-disc, p),
        3 | 4 => {
            let mut eps = 1;
            for i in 0..d {
                for j in i + 1..d {
                    eps *= hilbert_symbol(&a[i], &a[j], place);
                }
            }
            if d == 3 {
                eps == hilbert_symbol(&minus_one, &-disc, place)
            } else {
                !is_padic_square(&disc, p) || eps == hilbert_symbol(&minus_one, &minus_one, place)
            }
        }
        _ => true,
    })
}

/// Symmetric elimination over ℚ: returns U (basis in columns) and the
/// diagonal of UᵀGU. At a finite place every entry is rescaled by an even
/// power of p to valuation 0 or 1.
pub fn diagonalize_gram(g: &QMat, place: Place) -> Result<(QMat, Vec<BigRational>)> {
    let n = g.rows();
    let mut a = g.clone();
    let mut u = QMat::identity(n);
    let degenerate = || Error::DegenerateForm(place.to_string());
    for i in 0..n {
        if a[(i, i)].is_zero() {
            if let Some(j) = (i + 1..n).find(|&j| !a[(j, j)].is_zero()) {
                a.swap_rows(i, j);
                a.swap_cols(i, j);
                u.swap_cols(i, j);
            } else if let Some(j) = (i + 1..n).find(|&j| !a[(i, j)].is_zero()) {
                let one = BigRational::one();
                a.add_row_multiple(i, j, &one);
                a.add_col_multiple(i, j, &one);
                u.add_col_multiple(i, j, &one);
            } else {
                return Err(degenerate());
            }
        }
        let piv = a[(i, i)].clone();
        for j in i + 1..n {
            if a[(i, j)].is_zero() {
                continue;
            }
            let c = -(&a[(i, j)] / &piv);
            a.add_row_multiple(j, i, &c);
            a.add_col_multiple(j, i, &c);
            u.add_col_multiple(j, i, &c);
        }
    }
    let mut diag: Vec<BigRational> = (0..n).map(|i| a[(i, i)].clone()).collect();
    if let Place::Finite(p) = place {
        for (i, x) in diag.iter_mut().enumerate() {
            let v = valuation(x, p).expect("nonzero pivot");
            let k = v.div_euclid(2);
            if k != 0 {
                let s = pow_rat(p, -k);
                *x = &*x * &s * &s;
                for r in 0..n {
                    u[(r, i)] = &u[(r, i)] * &s;
                }
            }
        }
    }
    Ok((u, diag))
}

pub fn diagonalize(q: &QuadraticFormS, place: Place) -> Result<(QMat, Vec<BigRational>)> {
    match place {
        Place::Inf => {
            let g = q
                .gram_inf
                .exact
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("real Gram matrix is not rational".into()))?;
            diagonalize_gram(g, place)
        }
        Place::Finite(p) => diagonalize_gram(q.gram_at(p), place),
    }
}

/// A block of a Jordan splitting over ℤ_p: 1×1 or (p = 2 only) 2×2.
#[derive(Clone, Debug, PartialEq)]
pub enum JordanBlock {
    One(BigRational),
    Two([BigRational; 3]),
}

impl JordanBlock {
    pub fn size(&self) -> usize {
        match self {
            JordanBlock::One(_) => 1,
            JordanBlock::Two(_) => 2,
        }
    }
}

/// The block-diagonal Gram matrix assembled from a block list.
pub fn block_matrix(blocks: &[JordanBlock]) -> QMat {
    let n: usize = blocks.iter().map(|b| b.size()).sum();
    let mut m = QMat::zeros(n, n);
    let mut i = 0;
    for b in blocks {
        match b {
            JordanBlock::One(a) => m[(i, i)] = a.clone(),
            JordanBlock::Two([a, b, c]) => {
                m[(i, i)] = a.clone();
                m[(i, i + 1)] = b.clone();
                m[(i + 1, i)] = b.clone();
                m[(i + 1, i + 1)] = c.clone();
            }
        }
        i += b.size();
    }
    m
}

/// UᵀGU block-diagonal with U ∈ GL_d(ℤ_p) (entries p-integral, unit
/// determinant); blocks are listed in column order of U.
pub fn jordan_decompose(g: &QMat, p: u64) -> Result<(QMat, Vec<JordanBlock>)> {
    let n = g.rows();
    let mut a = g.clone();
    let mut u = QMat::identity(n);
    let mut blocks = Vec::new();
    let mut i = 0;
    let val = |x: &BigRational| valuation(x, p).unwrap_or(i64::MAX);
    while i < n {
        let mut best = (i64::MAX, i, i);
        for r in i..n {
            for c in r..n {
                let v = val(&a[(r, c)]);
                // Ties favour the diagonal.
                if v < best.0 || (v == best.0 && r == c && best.1 != best.2) {
                    best = (v, r, c);
                }
            }
        }
        if best.0 == i64::MAX {
            return Err(Error::DegenerateForm(p.to_string()));
        }
        let (_, r, c) = best;
        if r != c && p != 2 {
            // Diagonal entries all have larger valuation: e_r ← e_r + e_c.
            let one = BigRational::one();
            a.add_row_multiple(r, c, &one);
            a.add_col_multiple(r, c, &one);
            u.add_col_multiple(r, c, &one);
            continue;
        }
        if r == c {
            a.swap_rows(i, r);
            a.swap_cols(i, r);
            u.swap_cols(i, r);
            let piv = a[(i, i)].clone();
            for j in i + 1..n {
                if a[(i, j)].is_zero() {
                    continue;
                }
                let m = -(&a[(i, j)] / &piv);
                a.add_row_multiple(j, i, &m);
                a.add_col_multiple(j, i, &m);
                u.add_col_multiple(j, i, &m);
            }
            blocks.push(JordanBlock::One(piv));
            i += 1;
        } else {
            // p = 2 and the minimum sits off the diagonal: split off a 2×2 block.
            a.swap_rows(i, r);
            a.swap_cols(i, r);
            u.swap_cols(i, r);
            let c2 = if c == i { r } else { c };
            a.swap_rows(i + 1, c2);
            a.swap_cols(i + 1, c2);
            u.swap_cols(i + 1, c2);
            let (b00, b01, b11) = (a[(i, i)].clone(), a[(i, i + 1)].clone(), a[(i + 1, i + 1)].clone());
            let det = &b00 * &b11 - &b01 * &b01;
            for j in i + 2..n {
                let (x0, x1) = (a[(i, j)].clone(), a[(i + 1, j)].clone());
                if x0.is_zero() && x1.is_zero() {
                    continue;
                }
                // Solve B·(m0, m1) = (x0, x1) and subtract.
                let m0 = -((&b11 * &x0 - &b01 * &x1) / &det);
                let m1 = -((&b00 * &x1 - &b01 * &x0) / &det);
                a.add_row_multiple(j, i, &m0);
                a.add_col_multiple(j, i, &m0);
                a.add_row_multiple(j, i + 1, &m1);
                a.add_col_multiple(j, i + 1, &m1);
                u.add_col_multiple(j, i, &m0);
                u.add_col_multiple(j, i + 1, &m1);
            }
            blocks.push(JordanBlock::Two([b00, b01, b11]));
            i += 2;
        }
    }
    Ok((u, blocks))
}

/// Output of [`standardize`].
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizationResult {
    pub p: u64,
    /// Columns x, w₂, …, w_{d−1}, y with gᵀGg = [[0,0,1],[0,q′,0],[1,0,0]].
    pub g: QMat,
    /// Gram matrix of q′ on the middle coordinates.
    pub residual_form: QMat,
    pub k0: i64,
    pub z: i64,
    /// True when gᵀGg equals the standard shape identically; otherwise the
    /// identity holds modulo p^`precision`.
    pub exact: bool,
    pub precision: Option<i64>,
}

impl StandardizationResult {
    pub fn standard_gram(&self) -> QMat {
        let d = self.g.rows();
        let mut s = QMat::zeros(d, d);
        s[(0, d - 1)] = BigRational::one();
        s[(d - 1, 0)] = BigRational::one();
        for i in 0..d - 2 {
            for j in 0..d - 2 {
                s[(i + 1, j + 1)] = self.residual_form[(i, j)].clone();
            }
        }
        s
    }
}

fn min_valuation(m: &QMat, p: u64) -> i64 {
    m.entries().iter().filter_map(|x| valuation(x, p)).min().unwrap_or(i64::MAX)
}

/// s with p^{s}ℤ_p^d ⊆ g(ℤ_p^d) sharp: −min v_p(g⁻¹).
fn distortion(g: &QMat, p: u64) -> i64 {
    -min_valuation(&g.inverse().expect("invertible"), p)
}

/// First isotropic vector found among small integer vectors, if any.
pub fn small_isotropic_vector(g: &QMat, radius: i64) -> Option<Vec<BigRational>> {
    let d = g.rows();
    let mut x = vec![-radius; d];
    loop {
        let first_nz = x.iter().position(|&t| t != 0);
        if let Some(f) = first_nz {
            let primitive = x.iter().fold(0i64, |acc, &t| acc.gcd(&t)) == 1;
            if x[f] > 0 && primitive {
                let v: Vec<BigRational> = x.iter().map(|&t| BigRational::from_integer(t.into())).collect();
                if g.quad(&v).is_zero() {
                    return Some(v);
                }
            }
        }
        let mut k = 0;
        loop {
            if k == d {
                return None;
            }
            x[k] += 1;
            if x[k] > radius {
                x[k] = -radius;
                k += 1;
            } else {
                break;
            }
        }
    }
}

fn integral_scale(g: &QMat) -> QMat {
    let den = g.entries().iter().fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
    g.scale(&BigRational::from_integer(den))
}

/// p-adic isotropic vector: depth-first search for a primitive residue
/// vector satisfying Hensel's criterion, then Newton lifting in the pivot
/// coordinate until v_p(Q(x)) ≥ `precision`.
pub fn padic_isotropic_vector(g: &QMat, p: u64, precision: u32) -> Result<Vec<BigRational>> {
    let gi = integral_scale(g);
    let d = gi.rows();
    let det_v = valuation(&gi.det(), p).ok_or_else(|| Error::DegenerateForm(p.to_string()))?;
    let extra = if p == 2 { 3 } else { 1 };
    let m0 = (2 * (det_v + if p == 2 { 1 } else { 0 }) + extra) as u32 + 2;

    let hensel_ok = |x: &[BigRational]| -> Option<usize> {
        let b = gi.left_mul_vec(x);
        let (j, r) = b
            .iter()
            .enumerate()
            .filter_map(|(j, v)| valuation(v, p).map(|r| (j, r)))
            .min_by_key(|&(_, r)| r)?;
        let qv = valuation(&gi.quad(x), p).unwrap_or(i64::MAX);
        let need = 2 * r + if p == 2 { 3 } else { 1 };
        (qv >= need).then_some(j)
    };

    // DFS over residues mod p^k, k = 1..m0.
    let mut stack: Vec<(Vec<BigInt>, u32)> = Vec::new();
    let pb = BigInt::from(p);
    let mut start = vec![BigInt::zero(); d];
    loop {
        let primitive = start.iter().any(|x| !(x % &pb).is_zero());
        if primitive {
            stack.push((start.clone(), 1));
        }
        let mut k = 0;
        loop {
            if k == d {
                break;
            }
            start[k] += 1;
            if start[k] == pb {
                start[k] = BigInt::zero();
                k += 1;
            } else {
                break;
            }
        }
        if k == d {
            break;
        }
    }
    let mut found: Option<(Vec<BigRational>, usize)> = None;
    let mut budget: u64 = 2_000_000;
    while let Some((x, k)) = stack.pop() {
        budget = budget.saturating_sub(1);
        if budget == 0 {
            break;
        }
        let xr: Vec<BigRational> = x.iter().map(|t| BigRational::from_integer(t.clone())).collect();
        let qv = gi.quad(&xr);
        let modk = pb.pow(k);
        if !(qv.numer() % &modk).is_zero() {
            continue;
        }
        if let Some(j) = hensel_ok(&xr) {
            found = Some((xr, j));
            break;
        }
        if k >= m0 {
            continue;
        }
        // Lift by p^k·y for y ∈ (ℤ/p)^d.
        let mut y = vec![0u64; d];
        loop {
            let nx: Vec<BigInt> = x.iter().zip(&y).map(|(a, &b)| a + &modk * b).collect();
            stack.push((nx, k + 1));
            let mut t = 0;
            while t < d {
                y[t] += 1;
                if y[t] == p {
                    y[t] = 0;
                    t += 1;
                } else {
                    break;
                }
            }
            if t == d {
                break;
            }
        }
    }
    let (mut x, j) = found.ok_or_else(|| Error::PrecisionExhausted(format!("no liftable isotropic residue mod {p}^{m0}")))?;

    // Newton in coordinate j; truncate to keep the numbers bounded.
    let modulus = pb.pow(precision + 4 + 2 * det_v.max(0) as u32);
    for _ in 0..128 {
        let qv = gi.quad(&x);
        if qv.is_zero() || valuation(&qv, p).unwrap() >= precision as i64 {
            return Ok(x);
        }
        let b = gi.left_mul_vec(&x)[j].clone();
        let step = &qv / (BigRational::from_integer(BigInt::from(2)) * &b);
        x[j] = &x[j] - &step;
        let r = reduce_rat_mod(&x[j], &modulus).expect("p-integral");
        x[j] = BigRational::from_integer(r);
    }
    Err(Error::PrecisionExhausted("Newton iteration did not converge".into()))
}

/// Reduces the form at p to 2x₁x_d + q′. Uses an exact rational isotropic
/// vector when a small one exists; otherwise a p-adic one lifted to `precision`.
pub fn standardize(q: &QuadraticFormS, p: u64, precision: u32) -> Result<StandardizationResult> {
    let g = q
        .gram_p
        .get(&p)
        .ok_or_else(|| Error::InvalidInput(format!("no form at p={p}")))?;
    standardize_gram(g, p, precision)
}

pub fn standardize_gram(g: &QMat, p: u64, precision: u32) -> Result<StandardizationResult> {
    let d = g.rows();
    if d < 2 {
        return Err(Error::InvalidInput("standardization needs d >= 2".into()));
    }
    if g.det().is_zero() {
        return Err(Error::DegenerateForm(p.to_string()));
    }
    if !is_isotropic_gram(g, p)? {
        return Err(Error::AnisotropicForm(p.to_string()));
    }
    if is_standard(g, p) {
        let gid = QMat::identity(d);
        let residual = submatrix(g, 1, d - 1);
        let s = distortion(&gid, p);
        return Ok(StandardizationResult { p, g: gid, residual_form: residual, k0: s + 1, z: s, exact: true, precision: None });
    }
    let radius = match d {
        2 | 3 => 8,
        4 => 5,
        _ => 3,
    };
    let (x, exact) = match small_isotropic_vector(g, radius) {
        Some(x) => (x, true),
        None => (padic_isotropic_vector(g, p, precision)?, false),
    };
    // Make x primitive over ℤ_p.
    let vx = x.iter().filter_map(|t| valuation(t, p)).min().unwrap();
    let x: Vec<BigRational> = x.iter().map(|t| t * pow_rat(p, -vx)).collect();

    let bx = g.left_mul_vec(&x);
    let (j, _) = bx
        .iter()
        .enumerate()
        .filter_map(|(j, v)| valuation(v, p).map(|r| (j, r)))
        .min_by_key(|&(_, r)| r)
        .ok_or_else(|| Error::DegenerateForm(p.to_string()))?;
    let mut f = vec![BigRational::zero(); d];
    f[j] = BigRational::one() / &bx[j];
    let half_qf = g.quad(&f) / BigRational::from_integer(2.into());
    let y: Vec<BigRational> = f.iter().zip(&x).map(|(a, b)| a - &half_qf * b).collect();

    // Complement: project standard basis vectors orthogonally to span(x, y).
    let project = |v: &[BigRational]| -> Vec<BigRational> {
        let by = g.bilinear(v, &y);
        let bxv = g.bilinear(v, &x);
        v.iter().zip(&x).zip(&y).map(|((a, b), c)| a - &by * b - &bxv * c).collect()
    };
    let mut cols: Vec<Vec<BigRational>> = vec![x.clone()];
    for i in 0..d {
        if cols.len() == d - 1 {
            break;
        }
        let mut e = vec![BigRational::zero(); d];
        e[i] = BigRational::one();
        let w = project(&e);
        let mut trial = cols.clone();
        trial.push(w.clone());
        trial.push(y.clone());
        if rank_of_columns(&trial) == trial.len() {
            cols.push(w);
        }
    }
    cols.push(y);
    if cols.len() != d {
        return Err(Error::DegenerateForm(p.to_string()));
    }
    let mut gm = columns_to_mat(&cols);

    // Scale the complement until q′ is p-integral (even diagonal at p = 2).
    loop {
        let t = g.congruent(&gm);
        let sub = submatrix(&t, 1, d - 1);
        if residual_is_integral(&sub, p) {
            break;
        }
        for c in 1..d - 1 {
            for r in 0..d {
                gm[(r, c)] = &gm[(r, c)] * BigRational::from_integer(BigInt::from(p));
            }
        }
    }
    let t = g.congruent(&gm);
    let residual = submatrix(&t, 1, d - 1);
    let mut out = StandardizationResult { p, g: gm, residual_form: residual, k0: 0, z: 0, exact, precision: None };
    if !exact {
        let diff = {
            let s = out.standard_gram();
            let mut m = t.clone();
            for (a, b) in (0..d).flat_map(|r| (0..d).map(move |c| (r, c))).map(|(r, c)| ((r, c), s[(r, c)].clone())) {
                m[a] = &m[a] - &b;
            }
            m
        };
        out.precision = Some(min_valuation(&diff, p));
    }
    let s = distortion(&out.g, p);
    out.k0 = s + 1;
    out.z = s;
    Ok(out)
}

fn is_standard(g: &QMat, p: u64) -> bool {
    let d = g.rows();
    if g[(0, d - 1)] != BigRational::one() || !g[(0, 0)].is_zero() || !g[(d - 1, d - 1)].is_zero() {
        return false;
    }
    for i in 1..d - 1 {
        if !g[(0, i)].is_zero() || !g[(d - 1, i)].is_zero() {
            return false;
        }
    }
    residual_is_integral(&submatrix(g, 1, d - 1), p)
}

fn residual_is_integral(sub: &QMat, p: u64) -> bool {
    let n = sub.rows();
    (0..n).all(|i| {
        (0..n).all(|j| {
            let v = valuation(&sub[(i, j)], p).unwrap_or(i64::MAX);
            if i == j && p == 2 {
                v >= 1
            } else {
                v >= 0
            }
        })
    })
}

fn submatrix(g: &QMat, lo: usize, hi: usize) -> QMat {
    let n = hi - lo;
    let mut s = QMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = g[(i + lo, j + lo)].clone();
        }
    }
    s
}

fn columns_to_mat(cols: &[Vec<BigRational>]) -> QMat {
    let d = cols[0].len();
    let mut m = QMat::zeros(d, cols.len());
    for (c, col) in cols.iter().enumerate() {
        for r in 0..d {
            m[(r, c)] = col[r].clone();
        }
    }
    m
}

fn rank_of_columns(cols: &[Vec<BigRational>]) -> usize {
    let mut a = columns_to_mat(cols).transpose();
    let (rows, ncols) = (a.rows(), a.cols());
    let mut rank = 0;
    for c in 0..ncols {
        let Some(piv) = (rank..rows).find(|&r| !a[(r, c)].is_zero()) else { continue };
        a.swap_rows(rank, piv);
        let pv = a[(rank, c)].clone();
        for r in 0..rows {
            if r != rank && !a[(r, c)].is_zero() {
                let f = -(&a[(r, c)] / &pv);
                a.add_row_multiple(r, rank, &f);
            }
        }
        rank += 1;
    }
    rank
}

/// Exact rational approximation of a real Gram matrix, for diagnostics.
pub fn real_gram_to_rational(g: &RealGram) -> QMat {
    let d = g.dim();
    QMat::from_rows((0..d).map(|i| (0..d).map(|j| f64_to_rat(g.approx[i * d + j])).collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sarith::{int, rat};

    fn diag(v: &[i64]) -> QMat {
        QMat::diagonal(&v.iter().map(|&x| int(x)).collect::<Vec<_>>())
    }

    #[test]
    fn hilbert_examples() {
        for place in [Place::Inf, Place::Finite(2), Place::Finite(3), Place::Finite(5)] {
            assert_eq!(hilbert_symbol(&int(1), &int(7), place), 1);
        }
        assert_eq!(hilbert_symbol(&int(2), &int(3), Place::Finite(3)), -1);
        assert_eq!(hilbert_symbol(&int(-1), &int(-1), Place::Inf), -1);
        assert_eq!(hilbert_symbol(&int(-1), &int(-1), Place::Finite(2)), -1);
        assert_eq!(hilbert_symbol(&int(-1), &int(-1), Place::Finite(3)), 1);
    }

    #[test]
    fn eval_with_shift() {
        let ctx = SConfig::new(vec![3]).unwrap();
        let q = QuadraticFormS::rational(&ctx, diag(&[1, 1, -1])).unwrap();
        assert_eq!(q.eval(&[int(1), int(0), int(1)]).unwrap().finite[&3], int(0));
        assert_eq!(q.eval(&[int(1), int(1), int(0)]).unwrap().inf, 2.0);
        let s = Shift::rational(&[rat(1, 5), int(0), int(0)], &ctx);
        let q = q.with_shift(s).unwrap();
        let v = q.eval(&[int(1), int(3), int(0)]).unwrap();
        assert_eq!(v.inf_exact, Some(rat(261, 25)));
        assert_eq!(v.finite[&3], rat(261, 25));
        assert!(matches!(q.eval(&[int(1)]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn isotropy_examples() {
        let ctx = SConfig::new(vec![2, 3]).unwrap();
        let q = QuadraticFormS::rational(&ctx, diag(&[1, 1, -1])).unwrap();
        assert!(q.is_isotropic().unwrap());
        let q4 = QuadraticFormS::rational(&ctx, diag(&[1, 1, 1, 1])).unwrap();
        assert!(!q4.is_isotropic_at(Place::Inf).unwrap());
        assert!(!q4.is_isotropic_at(Place::Finite(2)).unwrap());
        assert!(q4.is_isotropic_at(Place::Finite(3)).unwrap());
    }

    #[test]
    fn diagonalize_hyperbolic_plane() {
        let g = QMat::from_i64(&[&[0, 1], &[1, 0]]);
        let (u, d) = diagonalize_gram(&g, Place::Inf).unwrap();
        assert_eq!(d, vec![int(2), rat(-1, 2)]);
        assert_eq!(g.congruent(&u), QMat::diagonal(&d));
        let (u, _) = diagonalize_gram(&diag(&[1, 2, 3]), Place::Inf).unwrap();
        assert_eq!(u, QMat::identity(3));
    }

    #[test]
    fn jordan_blocks_at_two() {
        let g = QMat::from_i64(&[&[0, 1, 0], &[1, 0, 0], &[0, 0, 3]]);
        let (u, blocks) = jordan_decompose(&g, 2).unwrap();
        assert_eq!(blocks.len(), 2);
        assert!(valuation(&u.det(), 2) == Some(0));
        assert_eq!(g.congruent(&u), block_matrix(&blocks));
    }

    #[test]
    fn standardize_identity_and_ternary() {
        let g = QMat::from_i64(&[&[0, 0, 1], &[0, 1, 0], &[1, 0, 0]]);
        let r = standardize_gram(&g, 3, 20).unwrap();
        assert_eq!(r.g, QMat::identity(3));
        assert_eq!((r.k0, r.z), (1, 0));
        let g = diag(&[1, 1, -1]);
        let r = standardize_gram(&g, 3, 20).unwrap();
        assert!(r.exact);
        assert_eq!(g.congruent(&r.g), r.standard_gram());
        assert!(matches!(standardize_gram(&diag(&[1, 1, 1, 1]), 2, 20), Err(Error::AnisotropicForm(_))));
    }

    #[test]
    fn standardize_without_rational_isotropic_vector() {
        // x² + y² + z² is isotropic over ℚ_3 but not over ℚ.
        let g = diag(&[1, 1, 1]);
        assert!(is_isotropic_gram(&g, 3).unwrap());
        assert!(small_isotropic_vector(&g, 8).is_none());
        let r = standardize_gram(&g, 3, 30).unwrap();
        assert!(!r.exact);
        assert!(r.precision.unwrap() >= 20);
    }
}

/// A target set I = (lo, hi) × ∏_p (a_p + p^{c_p}ℤ_p). Real endpoints are
/// stored exactly; doubles convert without rounding.
#[derive(Clone, Debug, PartialEq)]
pub struct SInterval {
    pub inf_lo: BigRational,
    pub inf_hi: BigRational,
    pub finite: BTreeMap<u64, (BigRational, i64)>,
}

impl SInterval {
    pub fn real_only(lo: BigRational, hi: BigRational) -> Self {
        SInterval { inf_lo: lo, inf_hi: hi, finite: BTreeMap::new() }
    }

    pub fn with_coset(mut self, p: u64, a: BigRational, c: i64) -> Self {
        self.finite.insert(p, (a, c));
        self
    }

    pub fn real_length(&self) -> f64 {
        rat_to_f64(&(&self.inf_hi - &self.inf_lo)).max(0.0)
    }

    /// vol_∞ × ∏ p^{−c_p}.
    pub fn volume(&self) -> f64 {
        let mut v = self.real_length();
        for (&p, (_, c)) in &self.finite {
            v *= (p as f64).powi(-(*c as i32));
        }
        v
    }

    pub fn contains_real(&self, x: f64, exact: Option<&BigRational>) -> bool {
        match exact {
            Some(e) => &self.inf_lo < e && e < &self.inf_hi,
            None => rat_to_f64(&self.inf_lo) < x && x < rat_to_f64(&self.inf_hi),
        }
    }

    pub fn contains_padic(&self, p: u64, x: &BigRational) -> bool {
        match self.finite.get(&p) {
            None => true,
            Some((a, c)) => {
                let diff = x - a;
                diff.is_zero() || valuation(&diff, p).unwrap() >= *c
            }
        }
    }

    pub fn contains(&self, v: &FormValue) -> bool {
        self.contains_real(v.inf, v.inf_exact.as_ref())
            && v.finite.iter().all(|(&p, x)| self.contains_padic(p, x))
    }

    /// The set scaled by s: (s·lo, s·hi) × ∏ (s·a_p + p^{c_p + v_p(s)}ℤ_p).
    pub fn scaled(&self, s: &BigRational) -> Self {
        assert!(s.is_positive());
        let finite = self
            .finite
            .iter()
            .map(|(&p, (a, c))| (p, (a * s, c + valuation(s, p).unwrap())))
            .collect();
        SInterval { inf_lo: &self.inf_lo * s, inf_hi: &self.inf_hi * s, finite }
    }
}
