//! Property tests for the arithmetic, quadratic-form and congruence layers.

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use oppenheim_core::congruence::{
    complete_primitive, lift_slq_to_slz, orbit_invariant, reduce_mod_q, representative_for_t, sample_slq_uniform,
    CongruenceContext,
};
use oppenheim_core::matrix::{imat_to_q, QMat};
use oppenheim_core::qspace::{hilbert_symbol, is_isotropic_gram, standardize_gram};
use oppenheim_core::rng::stream_rng;
use oppenheim_core::sarith::{factorize, gcd_s, int, padic_norm, padic_norm_exact, pow_rat, rat, valuation, Place, SConfig};
use proptest::prelude::*;

/// Fixed case count; failures are reported, not persisted.
fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, failure_persistence: None, ..ProptestConfig::default() }
}

fn nonzero() -> impl Strategy<Value = i64> {
    (-2000i64..2000).prop_filter("nonzero", |x| *x != 0)
}

fn rational() -> impl Strategy<Value = BigRational> {
    (nonzero(), 1i64..500).prop_map(|(n, d)| rat(n, d))
}

/// ±∏ p^e over the primes of S.
fn s_unit(primes: &'static [u64]) -> impl Strategy<Value = BigRational> {
    (prop::collection::vec(-4i64..=4, primes.len()), any::<bool>()).prop_map(move |(es, neg)| {
        let u = primes.iter().zip(es).fold(BigRational::one(), |acc, (&p, e)| acc * pow_rat(p, e));
        if neg {
            -u
        } else {
            u
        }
    })
}

const PRIMES: [u64; 4] = [2, 3, 5, 7];

proptest! {
    #![proptest_config(cases(1000))]

    #[test]
    fn padic_norm_is_multiplicative_and_ultrametric(x in rational(), y in rational(), i in 0usize..4) {
        let p = PRIMES[i];
        prop_assert_eq!(padic_norm_exact(&(&x * &y), p), padic_norm_exact(&x, p) * padic_norm_exact(&y, p));
        let s = padic_norm_exact(&(&x + &y), p);
        prop_assert!(s <= padic_norm_exact(&x, p).max(padic_norm_exact(&y, p)));
    }
}

proptest! {
    #![proptest_config(cases(256))]

    #[test]
    fn product_formula(x in rational()) {
        // |x|_∞ ∏_p |x|_p = 1 over the primes dividing the numerator or denominator.
        let mut primes: Vec<u64> = Vec::new();
        for n in [x.numer().abs(), x.denom().clone()] {
            let n: u64 = n.try_into().unwrap();
            primes.extend(factorize(n).into_iter().map(|(p, _)| p));
        }
        primes.sort_unstable();
        primes.dedup();
        let prod = primes.iter().fold(x.abs(), |acc, &p| acc * padic_norm_exact(&x, p));
        prop_assert!(prod.is_one());
        let f = primes.iter().fold(padic_norm(&x, Place::Inf), |acc, &p| acc * padic_norm(&x, Place::Finite(p)));
        prop_assert!((f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn s_units_have_trivial_norm_off_s(u in s_unit(&[2, 3]), p in prop::sample::select(vec![5u64, 7, 11, 13])) {
        prop_assert!(padic_norm_exact(&u, p).is_one());
    }

    #[test]
    fn hilbert_symbol_laws(a in nonzero(), b in nonzero(), c in nonzero()) {
        let (a, b, c) = (int(a), int(b), int(c));
        let mut places = vec![Place::Inf];
        let mut bad: Vec<u64> = vec![2];
        for x in [&a, &b, &c] {
            let n: u64 = x.numer().abs().try_into().unwrap();
            bad.extend(factorize(n).into_iter().map(|(p, _)| p));
        }
        bad.sort_unstable();
        bad.dedup();
        places.extend(bad.iter().map(|&p| Place::Finite(p)));
        let mut product = 1;
        for &v in &places {
            prop_assert_eq!(hilbert_symbol(&a, &b, v), hilbert_symbol(&b, &a, v));
            prop_assert_eq!(
                hilbert_symbol(&a, &(&b * &c), v),
                hilbert_symbol(&a, &b, v) * hilbert_symbol(&a, &c, v)
            );
            prop_assert_eq!(hilbert_symbol(&a, &-a.clone(), v), 1);
            product *= hilbert_symbol(&a, &b, v);
        }
        // Hilbert reciprocity.
        prop_assert_eq!(product, 1);
    }
}

fn pow_u64(p: u64, e: u32) -> u64 {
    p.pow(e)
}

fn vp_u64(mut n: u64, p: u64, cap: u32) -> u32 {
    if n == 0 {
        return cap;
    }
    let mut v = 0;
    while n.is_multiple_of(p) {
        n /= p;
        v += 1;
    }
    v.min(cap)
}

/// Brute-force isotropy of Σ a_i x_i² over ℚ_p for coefficients of valuation
/// at most 1. Every primitive vector has a coordinate x_i with v(∂_i Q) ≤ k_max
/// (1 for odd p, 2 for p = 2), so by Hensel a primitive zero exists iff some
/// primitive x mod p^M has Q(x) ≡ 0 mod p^{2k+1}, k the gradient valuation,
/// with M = 2k_max + 1.
fn brute_isotropic(coeffs: &[i64], p: u64) -> bool {
    let m = if p == 2 { 5 } else { 3 };
    let pm = pow_u64(p, m);
    let d = coeffs.len();
    let a: Vec<u64> = coeffs.iter().map(|&c| c.rem_euclid(pm as i64) as u64).collect();
    let mut x = vec![0u64; d];
    loop {
        if x.iter().any(|&t| t % p != 0) {
            let q = x.iter().zip(&a).fold(0u64, |acc, (&t, &c)| (acc + c * (t * t % pm)) % pm);
            let k = x.iter().zip(&a).map(|(&t, &c)| vp_u64(2 * c * t % pm, p, m)).min().unwrap();
            if vp_u64(q, p, m) >= (2 * k + 1).min(m) {
                return true;
            }
        }
        let mut i = 0;
        loop {
            if i == d {
                return false;
            }
            x[i] += 1;
            if x[i] < pm {
                break;
            }
            x[i] = 0;
            i += 1;
        }
    }
}

fn coefficient() -> impl Strategy<Value = i64> {
    prop::sample::select(vec![1i64, -1, 2, -2, 3, -3, 5, -5])
}

proptest! {
    #![proptest_config(cases(48))]

    #[test]
    fn isotropy_matches_brute_force(
        c in prop::collection::vec(coefficient(), 4),
        d in 3usize..=4,
        p in prop::sample::select(vec![2u64, 3, 5]),
    ) {
        // p = 5 in four variables is too large a box for the brute force.
        let d = if p == 5 { 3 } else { d };
        let g = QMat::diagonal(&c[..d].iter().map(|&x| int(x)).collect::<Vec<_>>());
        prop_assert_eq!(is_isotropic_gram(&g, p).unwrap(), brute_isotropic(&c[..d], p), "{:?} at {}", &c[..d], p);
    }
}

/// Product of elementary integer matrices; unimodular over ℤ.
fn unimodular(d: usize, ops: &[(usize, usize, i64)]) -> QMat {
    let mut m = QMat::identity(d);
    for &(i, j, c) in ops {
        let (i, j) = (i % d, j % d);
        if i != j {
            m.add_row_multiple(i, j, &int(c));
        }
    }
    m
}

fn mat_vec(m: &QMat, v: &[BigRational]) -> Vec<BigRational> {
    // Column convention: (m v)_i = Σ_j m_ij v_j.
    m.transpose().left_mul_vec(v)
}

fn is_integral_at(v: &[BigRational], p: u64) -> bool {
    v.iter().all(|x| valuation(x, p).is_none_or(|e| e >= 0))
}

fn is_primitive_at(v: &[BigRational], p: u64) -> bool {
    is_integral_at(v, p) && v.iter().any(|x| valuation(x, p) == Some(0))
}

proptest! {
    #![proptest_config(cases(64))]

    /// Forms built as Aᵀ(H ⊕ D)A with H hyperbolic have a rational isotropic
    /// vector, so standardization is exact; k₀ and z satisfy their containments.
    #[test]
    fn standardization_identity_and_containments(
        diag in prop::collection::vec(coefficient(), 2),
        d in 3usize..=4,
        ops in prop::collection::vec((0usize..4, 0usize..4, -2i64..=2), 0..5),
        p in prop::sample::select(vec![2u64, 3, 5]),
        probes in prop::collection::vec((prop::collection::vec(-30i64..30, 4), prop::collection::vec(-30i64..30, 4)), 20),
    ) {
        let mut base = QMat::zeros(d, d);
        base[(0, 1)] = int(1);
        base[(1, 0)] = int(1);
        for i in 2..d {
            base[(i, i)] = int(diag[i - 2]);
        }
        let a = unimodular(d, &ops);
        let g = base.congruent(&a);
        let r = standardize_gram(&g, p, 20).unwrap();
        prop_assert!(r.exact);
        prop_assert_eq!(g.congruent(&r.g), r.standard_gram());

        let ginv = r.g.inverse().unwrap();
        let pk0 = pow_rat(p, r.k0);
        let pz = pow_rat(p, r.z);
        for (v, u) in &probes {
            let v: Vec<BigRational> = v[..d].iter().map(|&x| int(x)).collect();
            let u: Vec<BigRational> = u[..d].iter().map(|&x| int(x)).collect();
            if !is_primitive_at(&v, p) {
                continue;
            }
            // g v + p^{k₀} u = g(v + p^{k₀} g⁻¹u) with the bracket primitive.
            let w = mat_vec(&ginv, &u);
            let moved: Vec<BigRational> = v.iter().zip(&w).map(|(a, b)| a + &pk0 * b).collect();
            prop_assert!(is_primitive_at(&moved, p));
            // p^z u ∈ g(ℤ_p^d).
            let inside: Vec<BigRational> = w.iter().map(|b| &pz * b).collect();
            prop_assert!(is_integral_at(&inside, p));
        }
        // z is sharp: some basis vector needs the full power.
        let sharp = (0..d).any(|j| {
            let mut e = vec![BigRational::zero(); d];
            e[j] = pow_rat(p, r.z - 1);
            !is_integral_at(&mat_vec(&ginv, &e), p)
        });
        prop_assert!(sharp);
        prop_assert_eq!(r.k0, r.z + 1);
    }
}

/// Elementary matrices over ℤ_S and diagonal S-units of determinant 1.
fn s_modular(d: usize, ops: &[(usize, usize, i64, i64)], p: u64) -> QMat {
    let mut m = QMat::identity(d);
    for &(i, j, c, e) in ops {
        let (i, j) = (i % d, j % d);
        if i != j {
            m.add_row_multiple(i, j, &(int(c) * pow_rat(p, e)));
        } else {
            let u = pow_rat(p, e);
            let k = (i + 1) % d;
            for col in 0..d {
                m[(i, col)] = &m[(i, col)] * &u;
                m[(k, col)] = &m[(k, col)] / &u;
            }
        }
    }
    m
}

proptest! {
    #![proptest_config(cases(200))]

    #[test]
    fn gcd_s_is_invariant_under_sl_d_of_s_integers(
        k in prop::collection::vec(-60i64..60, 3),
        ops in prop::collection::vec((0usize..3, 0usize..3, -3i64..=3, -3i64..=3), 1..6),
        q in prop::sample::select(vec![3u64, 5, 9, 15, 21]),
        u in s_unit(&[2]),
    ) {
        prop_assume!(k.iter().any(|&x| x != 0));
        let ctx = SConfig::new(vec![2]).unwrap();
        let k: Vec<BigRational> = k.iter().map(|&x| int(x)).collect();
        let gamma = s_modular(3, &ops, 2);
        prop_assert!(gamma.det().is_one());
        let moved = gamma.left_mul_vec(&k);
        prop_assert_eq!(gcd_s(q, &moved, &ctx).unwrap(), gcd_s(q, &k, &ctx).unwrap());
        let scaled: Vec<BigRational> = k.iter().map(|x| x * &u).collect();
        prop_assert_eq!(gcd_s(q, &scaled, &ctx).unwrap(), gcd_s(q, &k, &ctx).unwrap());
    }

    #[test]
    fn slq_lifts_to_sl_z(seed in any::<u64>(), d in 2usize..=4, q in prop::sample::select(vec![2u64, 4, 6, 7, 12, 25])) {
        let mut rng = stream_rng(seed, 0);
        let m = sample_slq_uniform(d, q, &mut rng);
        let lift = imat_to_q(&lift_slq_to_slz(&m, q).unwrap());
        prop_assert!(lift.det().is_one());
        prop_assert!(lift.is_integral());
        prop_assert_eq!(reduce_mod_q(&lift, q).unwrap(), m);
    }

    #[test]
    fn primitive_completion(v in prop::collection::vec(-40i64..40, 2..=4), e in -3i64..=3) {
        let ctx = SConfig::new(vec![3]).unwrap();
        let g0 = v.iter().fold(0i64, |a, &b| num_integer::gcd(a, b));
        prop_assume!(g0 != 0);
        // Primitive in ℤ_S^d: divide out the gcd and scale by a 3-unit.
        let v: Vec<BigRational> = v.iter().map(|&x| int(x / g0) * pow_rat(3, e)).collect();
        let g = complete_primitive(&v, &ctx).unwrap();
        prop_assert!(g.det().is_one());
        prop_assert_eq!(g.row(0), &v[..]);
        prop_assert!(g.entries().iter().all(|x| ctx.is_s_integer(x)));
    }

    #[test]
    fn representative_round_trip(
        w in prop::collection::vec(-6i64..6, 3),
        q in prop::sample::select(vec![5u64, 7, 9]),
        t in 1u64..40,
    ) {
        let ctx = SConfig::new(vec![2]).unwrap();
        let w: Vec<BigRational> = w.iter().map(|&x| int(x)).collect();
        let Ok(cc) = CongruenceContext::new(3, q, w, &ctx) else {
            return Err(TestCaseError::reject("w not primitive mod q"));
        };
        prop_assume!(t % 2 != 0 && num_integer::gcd(t, q) == 1);
        let k = representative_for_t(&cc, t, 4).unwrap();
        prop_assert_eq!(orbit_invariant(&cc, &k).unwrap(), t);
        // Still in the same orbit after a unimodular change of basis.
        let gamma = s_modular(3, &[(0, 1, (q as i64), 0), (2, 0, (q as i64), 1)], 2);
        let moved = gamma.left_mul_vec(&k);
        prop_assert_eq!(orbit_invariant(&cc, &moved).unwrap(), t);
    }
}

#[test]
fn brute_force_isotropy_sanity() {
    // x² + y² + z² is anisotropic at 2 and isotropic at every odd prime.
    assert!(!brute_isotropic(&[1, 1, 1], 2));
    assert!(brute_isotropic(&[1, 1, 1], 3));
    assert!(brute_isotropic(&[1, 1, -1], 2));
    // The quaternion norm form stays anisotropic at 2.
    assert!(!brute_isotropic(&[1, 1, 1, 1], 2));
}
