//! Congruence-level combinatorics: reduction mod q, uniform sampling and
//! integral lifting of SL_d(ℤ/q), primitive completion, and the orbit
//! invariant t with its representatives.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{imat_identity, imat_to_q, IMat, QMat};
use crate::sarith::{gcd_u64, mod_inverse, reduce_rat_mod, s_primitive, sl_group_order, SConfig};

/// Matrix over ℤ/q with entries in [0, q).
pub type ZqMat = Vec<Vec<u64>>;

/// Data fixing a congruence class: d, q ∈ ℕ_S, and the shift w ∈ ℤ_S^d.
#[derive(Clone, Debug, PartialEq)]
pub struct CongruenceContext {
    pub d: usize,
    pub q: u64,
    pub w: Vec<BigRational>,
    pub ctx: SConfig,
}

impl CongruenceContext {
    /// Requires gcd(q, S) = 1 and gcd_S(q, w) = 1. q = 1 is accepted.
    pub fn new(d: usize, q: u64, w: Vec<BigRational>, ctx: &SConfig) -> Result<Self> {
        if d < 2 || w.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: w.len() });
        }
        if q == 0 || gcd_u64(q, ctx.product()) != 1 {
            return Err(Error::InvalidInput(format!("q={q} must be positive and coprime to S")));
        }
        let sp = s_primitive(&w, ctx).map_err(|e| match e {
            Error::ZeroVector => Error::InvalidInput(format!("w = 0 has gcd(q, w) = {q}")),
            e => e,
        })?;
        if !sp.content.gcd(&BigInt::from(q)).is_one() {
            return Err(Error::InvalidInput(format!("gcd(q, w) != 1 for q={q}")));
        }
        Ok(CongruenceContext { d, q, w, ctx: ctx.clone() })
    }

    pub fn shift_over_q(&self) -> Vec<BigRational> {
        let q = BigRational::from_integer(BigInt::from(self.q));
        self.w.iter().map(|x| x / &q).collect()
    }
}

/// Entrywise image in ℤ/q; denominators must be prime to q.
pub fn reduce_mod_q(g: &QMat, q: u64) -> Result<ZqMat> {
    let m = BigInt::from(q);
    (0..g.rows())
        .map(|i| {
            (0..g.cols())
                .map(|j| {
                    reduce_rat_mod(&g[(i, j)], &m)
                        .map(|x| x.to_u64().unwrap())
                        .ok_or(Error::DenominatorNotInvertibleModQ(q))
                })
                .collect()
        })
        .collect()
}

pub fn zq_mul(a: &ZqMat, b: &ZqMat, q: u64) -> ZqMat {
    let n = a.len();
    let m = b[0].len();
    (0..n)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let s: u128 = (0..b.len()).map(|k| a[i][k] as u128 * b[k][j] as u128).sum();
                    (s % q as u128) as u64
                })
                .collect()
        })
        .collect()
}

pub fn zq_det(a: &ZqMat, q: u64) -> u64 {
    let qm = imat_to_q(&a.iter().map(|r| r.iter().map(|&x| BigInt::from(x)).collect()).collect());
    let det = qm.det().to_integer();
    det.mod_floor(&BigInt::from(q)).to_u64().unwrap()
}

pub fn zq_identity(d: usize, q: u64) -> ZqMat {
    (0..d).map(|i| (0..d).map(|j| ((i == j) as u64) % q.max(1)).collect()).collect()
}

/// Every element of SL_d(ℤ/q); intended for small d and q only.
pub fn enumerate_slq(d: usize, q: u64) -> Vec<ZqMat> {
    let n = d * d;
    let total = (q as usize).pow(n as u32);
    let mut out = Vec::new();
    for idx in 0..total {
        let mut x = idx;
        let mut m = vec![vec![0u64; d]; d];
        for k in 0..n {
            m[k / d][k % d] = (x % q as usize) as u64;
            x /= q as usize;
        }
        if zq_det(&m, q) == 1 % q {
            out.push(m);
        }
    }
    out
}

/// A uniformly distributed element of SL_d(ℤ/q).
pub fn sample_slq_uniform<R: Rng + ?Sized>(d: usize, q: u64, rng: &mut R) -> ZqMat {
    if d == 1 {
        return vec![vec![1 % q]];
    }
    // First row uniform among rows unimodular mod q.
    let row: Vec<u64> = loop {
        let r: Vec<u64> = (0..d).map(|_| rng.random_range(0..q)).collect();
        if r.iter().fold(q, |g, &x| gcd_u64(g, x)) == 1 {
            break r;
        }
    };
    let lifted = lift_primitive_row(&row, q);
    let m0 = complete_to_row(&lifted, 0);
    let m0 = m0.iter().map(|r| r.iter().map(|x| x.mod_floor(&BigInt::from(q)).to_u64().unwrap()).collect()).collect();
    // Uniform element of the stabilizer of e₁: [[1, 0], [v, A]].
    let a = sample_slq_uniform(d - 1, q, rng);
    let mut h = vec![vec![0u64; d]; d];
    h[0][0] = 1 % q;
    for i in 1..d {
        h[i][0] = rng.random_range(0..q);
        for j in 1..d {
            h[i][j] = a[i - 1][j - 1];
        }
    }
    zq_mul(&h, &m0, q)
}

/// An integer vector, congruent to `row` mod q, with gcd 1.
fn lift_primitive_row(row: &[u64], q: u64) -> Vec<BigInt> {
    let mut v: Vec<BigInt> = row.iter().map(|&x| BigInt::from(x)).collect();
    let d = v.len();
    if v[1..].iter().all(|x| x.is_zero()) {
        v[d - 1] = BigInt::from(q);
    }
    let g = v[1..].iter().fold(BigInt::zero(), |acc, x| acc.gcd(x));
    let base = v[0].clone();
    let mut c = 0u64;
    loop {
        let cand = &base + BigInt::from(q) * c;
        if cand.gcd(&g).is_one() {
            v[0] = cand;
            return v;
        }
        c += 1;
    }
}

#[derive(Clone, Copy, Debug)]
struct RowOp {
    dst: usize,
    src: usize,
    c: i64,
}

/// M ∈ SL_d(ℤ) with M ≡ m (mod q), built from elementary row operations.
pub fn lift_slq_to_slz(m: &ZqMat, q: u64) -> Result<IMat> {
    let d = m.len();
    let det = zq_det(m, q);
    if det != 1 % q {
        return Err(Error::NotInSLq { det, q });
    }
    let qb = BigInt::from(q);
    let mut a: IMat = m.iter().map(|r| r.iter().map(|&x| BigInt::from(x)).collect()).collect();
    let mut ops: Vec<RowOp> = Vec::new();

    let apply = |a: &mut IMat, op: RowOp, ops: &mut Vec<RowOp>| {
        let c = BigInt::from(op.c);
        for j in 0..a[0].len() {
            let v = &a[op.src][j] * &c;
            a[op.dst][j] += v;
        }
        for x in a[op.dst].iter_mut() {
            *x = x.mod_floor(&BigInt::from(q));
        }
        ops.push(op);
    };

    for col in 0..d {
        if col + 1 == d {
            break;
        }
        if a[col][col].is_one() && a[col + 1..].iter().all(|r| r[col].is_zero()) {
            continue;
        }
        // Integer gcd of the column (rows col..d) must be 1: adjust representatives.
        if a[col + 1..].iter().all(|r| r[col].is_zero()) {
            a[d - 1][col] = qb.clone();
        }
        let g = a[col + 1..].iter().fold(BigInt::zero(), |acc, r| acc.gcd(&r[col]));
        let base = a[col][col].clone();
        let mut c = 0u64;
        a[col][col] = loop {
            let cand = &base + &qb * c;
            if cand.gcd(&g).is_one() {
                break cand;
            }
            c += 1;
        };
        // Integer Euclid on the column without reducing mod q.
        loop {
            let nz: Vec<usize> = (col..d).filter(|&r| !a[r][col].is_zero()).collect();
            if nz.len() <= 1 {
                break;
            }
            let piv = *nz.iter().min_by_key(|&&r| a[r][col].abs()).unwrap();
            for &r in &nz {
                if r == piv {
                    continue;
                }
                let f = a[r][col].div_floor(&a[piv][col]);
                let op = RowOp { dst: r, src: piv, c: -f.to_i64().expect("small quotient") };
                let cc = BigInt::from(op.c);
                for j in 0..d {
                    let v = &a[piv][j] * &cc;
                    a[r][j] += v;
                }
                ops.push(op);
            }
        }
        let piv = (col..d).find(|&r| !a[r][col].is_zero()).unwrap();
        if piv != col {
            for op in [
                RowOp { dst: col, src: piv, c: 1 },
                RowOp { dst: piv, src: col, c: -1 },
                RowOp { dst: col, src: piv, c: 1 },
            ] {
                apply_exact(&mut a, op);
                ops.push(op);
            }
        }
        if a[col][col].is_negative() {
            // Negate rows col and col+1 with two signed moves.
            let o = col + 1;
            for op in [
                RowOp { dst: o, src: col, c: -1 },
                RowOp { dst: col, src: o, c: 1 },
                RowOp { dst: o, src: col, c: -1 },
                RowOp { dst: col, src: o, c: 1 },
                RowOp { dst: o, src: col, c: -1 },
                RowOp { dst: col, src: o, c: 1 },
            ] {
                apply_exact(&mut a, op);
                ops.push(op);
            }
        }
        debug_assert!(a[col][col].is_one());
        for row in a.iter_mut() {
            for x in row.iter_mut() {
                *x = x.mod_floor(&qb);
            }
        }
    }
    // Upper unitriangular mod q: clear above the diagonal.
    for col in (1..d).rev() {
        for r in 0..col {
            let c = a[r][col].mod_floor(&qb);
            if c.is_zero() {
                continue;
            }
            let op = RowOp { dst: r, src: col, c: -c.to_i64().unwrap() };
            apply(&mut a, op, &mut ops);
        }
    }
    // E·m ≡ I, so M = E⁻¹ = E₁⁻¹⋯E_k⁻¹ as column operations on I.
    let mut mm = imat_identity(d);
    for op in &ops {
        let c = BigInt::from(op.c);
        for row in mm.iter_mut() {
            let v = &row[op.dst] * &c;
            row[op.src] -= v;
        }
    }
    debug_assert!(imat_to_q(&mm).det().is_one());
    Ok(mm)
}

fn apply_exact(a: &mut IMat, op: RowOp) {
    let c = BigInt::from(op.c);
    for j in 0..a[0].len() {
        let v = &a[op.src][j] * &c;
        a[op.dst][j] += v;
    }
}

/// N ∈ SL_d(ℤ) whose row `target` is the primitive integer vector `n`.
pub fn complete_to_row(n: &[BigInt], target: usize) -> IMat {
    let d = n.len();
    if d == 2 && target == 0 {
        let (a, b) = (&n[0], &n[1]);
        let e = a.extended_gcd(b);
        debug_assert!(e.gcd.abs().is_one());
        let s = e.gcd.signum();
        // a·x + b·y = 1; second row (−y, x) shifted by a multiple of n.
        let (x, y) = (&e.x * &s, &e.y * &s);
        let mut r0 = -y;
        let mut r1 = x;
        if !a.is_zero() {
            let k = r0.div_floor(a);
            r0 -= &k * a;
            r1 -= &k * b;
        }
        return vec![n.to_vec(), vec![r0, r1]];
    }
    // Column operations U with n·U = e_target; then N = U⁻¹.
    let mut v = n.to_vec();
    let mut u = imat_identity(d);
    let col_op = |v: &mut Vec<BigInt>, u: &mut IMat, dst: usize, src: usize, c: &BigInt| {
        let t = &v[src] * c;
        v[dst] += t;
        for row in u.iter_mut() {
            let t = &row[src] * c;
            row[dst] += t;
        }
    };
    loop {
        let nz: Vec<usize> = (0..d).filter(|&i| !v[i].is_zero()).collect();
        if nz.len() <= 1 {
            break;
        }
        let piv = *nz.iter().min_by_key(|&&i| v[i].abs()).unwrap();
        for &i in &nz {
            if i != piv {
                let f = -v[i].div_floor(&v[piv]);
                col_op(&mut v, &mut u, i, piv, &f);
            }
        }
    }
    let one = BigInt::one();
    let piv = (0..d).find(|&i| !v[i].is_zero()).expect("nonzero vector");
    if piv != target {
        col_op(&mut v, &mut u, target, piv, &one);
        col_op(&mut v, &mut u, piv, target, &-&one);
        col_op(&mut v, &mut u, target, piv, &one);
    }
    if v[target].is_negative() {
        let o = (target + 1) % d;
        col_op(&mut v, &mut u, o, target, &-&one);
        col_op(&mut v, &mut u, target, o, &one);
        col_op(&mut v, &mut u, o, target, &-&one);
        col_op(&mut v, &mut u, target, o, &one);
        col_op(&mut v, &mut u, o, target, &-&one);
        col_op(&mut v, &mut u, target, o, &one);
    }
    debug_assert!(v[target].is_one());
    let inv = imat_to_q(&u).inverse().expect("unimodular");
    (0..d).map(|i| (0..d).map(|j| inv[(i, j)].to_integer()).collect()).collect()
}

/// g ∈ SL_d(ℤ_S) with row `target` equal to the primitive vector v.
fn complete_primitive_at(v: &[BigRational], ctx: &SConfig, target: usize) -> Result<QMat> {
    let sp = s_primitive(v, ctx).map_err(|e| match e {
        Error::ZeroVector => Error::NotPrimitive,
        e => e,
    })?;
    if !sp.content.is_one() {
        return Err(Error::NotPrimitive);
    }
    let n = complete_to_row(&sp.scaled, target);
    let mut g = imat_to_q(&n);
    let d = v.len();
    // v = scaled/unit: rescale row `target` by 1/unit and a partner row by unit.
    let inv_unit = BigRational::one() / &sp.unit;
    let partner = if target == 0 { 1 } else { 0 };
    for j in 0..d {
        g[(target, j)] = &g[(target, j)] * &inv_unit;
        g[(partner, j)] = &g[(partner, j)] * &sp.unit;
    }
    Ok(g)
}

/// g_v ∈ SL_d(ℤ_S) with e₁·g_v = v.
pub fn complete_primitive(v: &[BigRational], ctx: &SConfig) -> Result<QMat> {
    complete_primitive_at(v, ctx, 0)
}

/// γ_w ∈ SL_d(ℤ_S) with e_d·γ_w equal to the primitive part of w, so
/// w·γ_w⁻¹ ∈ ℤ_S·e_d.
pub fn gamma_w(cc: &CongruenceContext) -> Result<QMat> {
    let sp = s_primitive(&cc.w, &cc.ctx)?;
    let prim: Vec<BigRational> = sp
        .scaled
        .iter()
        .map(|x| BigRational::from_integer(x / &sp.content))
        .collect();
    complete_primitive_at(&prim, &cc.ctx, cc.d - 1)
}

/// t ∈ ℕ_S with q·k ∈ t·Prim(ℤ_S^d).
pub fn orbit_invariant(cc: &CongruenceContext, k: &[BigRational]) -> Result<u64> {
    if k.len() != cc.d {
        return Err(Error::DimensionMismatch { expected: cc.d, got: k.len() });
    }
    let shift = cc.shift_over_q();
    for (ki, si) in k.iter().zip(&shift) {
        if !cc.ctx.is_s_integer(&(ki - si)) {
            return Err(Error::ShiftMismatch);
        }
    }
    let qr = BigRational::from_integer(BigInt::from(cc.q));
    let qk: Vec<BigRational> = k.iter().map(|x| x * &qr).collect();
    let sp = s_primitive(&qk, &cc.ctx)?;
    let t = sp.content;
    if !t.gcd(&BigInt::from(cc.q)).is_one() {
        return Err(Error::InvariantViolation(format!("t={t}, q={}", cc.q)));
    }
    t.to_u64().ok_or_else(|| Error::InvalidInput("invariant too large".into()))
}

fn value_rank(v: i64) -> i64 {
    if v == 0 {
        0
    } else if v > 0 {
        2 * v - 1
    } else {
        -2 * v
    }
}

/// k_t = t·m/(q·𝚙) with m primitive in t*·𝚙w + qℤ^d, where 𝚙w is the
/// integer S-unit scaling of w and t·t* ≡ 1 (mod q). Candidates m are tried
/// in order of (‖z‖∞, support size, value ranks 0, 1, −1, 2, … compared
/// from the last coordinate) for z with
/// m = t*𝚙w + q z, up to ‖z‖∞ ≤ `max_radius`.
pub fn representative_for_t(cc: &CongruenceContext, t: u64, max_radius: i64) -> Result<Vec<BigRational>> {
    if t == 0 || gcd_u64(t, cc.q) != 1 || gcd_u64(t, cc.ctx.product()) != 1 {
        return Err(Error::InvalidInput(format!("t={t} must lie in N_S and be prime to q")));
    }
    let sp = s_primitive(&cc.w, &cc.ctx)?;
    let qb = BigInt::from(cc.q);
    let t_star = mod_inverse(&BigInt::from(t), &qb).unwrap_or_else(BigInt::one);
    let t_star = if t_star.is_zero() { BigInt::one() } else { t_star };
    let base: Vec<BigInt> = sp.scaled.iter().map(|x| x * &t_star).collect();
    let d = cc.d;
    for radius in 0..=max_radius {
        let mut cands: Vec<(usize, Vec<i64>, Vec<i64>)> = Vec::new();
        let side = (2 * radius + 1) as usize;
        let total = side.pow(d as u32);
        for idx in 0..total {
            let mut x = idx;
            let z: Vec<i64> = (0..d)
                .map(|_| {
                    let c = (x % side) as i64 - radius;
                    x /= side;
                    c
                })
                .collect();
            if z.iter().map(|c| c.abs()).max().unwrap_or(0) != radius {
                continue;
            }
            let support = z.iter().filter(|&&c| c != 0).count();
            let ranks: Vec<i64> = z.iter().rev().map(|&c| value_rank(c)).collect();
            cands.push((support, ranks, z));
        }
        cands.sort();
        for (_, _, z) in cands {
            let m: Vec<BigInt> = base.iter().zip(&z).map(|(b, &c)| b + &qb * c).collect();
            let g = m.iter().fold(BigInt::zero(), |acc, x| acc.gcd(x));
            if g.is_one() {
                let scale = BigRational::new(BigInt::from(t), qb.clone()) / &sp.unit;
                return Ok(m.iter().map(|x| BigRational::from_integer(x.clone()) * &scale).collect());
            }
        }
    }
    Err(Error::SearchBudgetExceeded(format!("no primitive m with |z| <= {max_radius}")))
}

/// q^{d−1}·#SL_{d−1}(ℤ/q): matrices in SL_d(ℤ/q) fixing the row e_d.
pub fn stabilizer_order(d: u32, q: u64) -> BigInt {
    BigInt::from(q).pow(d - 1) * sl_group_order(d - 1, q)
}

/// [SL_d(ℤ/q) : Stab(e_d)], the number of unimodular rows mod q.
pub fn index_gamma1(d: u32, q: u64) -> BigInt {
    sl_group_order(d, q) / stabilizer_order(d, q)
}
