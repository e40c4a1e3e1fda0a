//! Haar samplers on spaces of affine S-lattices, Monte-Carlo moments of
//! Siegel transforms, and the truncated (t, a) pair series that sit on the
//! other side of the second-moment formulas.
//!
//! Samples are split-mode lattices: a double-precision real basis and shift,
//! and at each p ∈ S a basis and shift mod p^{k_p}.

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::congruence::{sample_slq_uniform, CongruenceContext};
use crate::error::{Error, Result};
use crate::rng::{batch_sizes, stream_rng, Rng};
use crate::sarith::{pow_rat, rat_to_f64, reduce_rat_mod, valuation, SConfig};
use crate::slattice::{count_in_set, AffineSLattice, PadicPart, ProductBox, TestFunction, TransformMode};

/// Samples per independent stream; batch b uses `stream_rng(seed, b)`.
pub const BATCH: u64 = 1000;

/// Above this many candidate pairs the series is summed in floating point only.
pub const EXACT_TERM_LIMIT: f64 = 20_000.0;

#[derive(Clone, Debug)]
pub enum SpaceKind {
    /// AUL_d(ℤ_S)\AUL_d(ℚ_S): a unimodular lattice with a uniform shift.
    Affine,
    /// Y_{w/q}: lattices (ℤ_S^d + w/q)·g.
    CongruenceY(CongruenceContext),
    /// UL_d(ℤ_S)\UL_d(ℚ_S).
    Base,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exactness {
    Exact,
    McmcApproximate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RealSampler {
    /// Exact when d ≤ 2, MCMC otherwise.
    Auto,
    Exact,
    Mcmc,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McmcParams {
    pub burn_in: u32,
    /// Steps between consecutive samples of one chain.
    pub thin: u32,
    /// Scale of the traceless Gaussian increment.
    pub step: f64,
}

impl Default for McmcParams {
    fn default() -> Self {
        McmcParams { burn_in: 1000, thin: 20, step: 0.25 }
    }
}

#[derive(Clone, Debug)]
pub struct SpaceSpec {
    pub kind: SpaceKind,
    pub d: usize,
    pub ctx: SConfig,
    /// p-adic precision k_p per prime of S, in order.
    pub depth: Vec<u32>,
    pub real: RealSampler,
    pub mcmc: McmcParams,
}

/// Largest k with p^k < 2^40: enough for any box with t_p ≥ −k.
pub fn default_depth(p: u64) -> u32 {
    let mut k = 0;
    let mut m: u64 = 1;
    while m.saturating_mul(p) < (1 << 40) {
        m *= p;
        k += 1;
    }
    k.max(1)
}

impl SpaceSpec {
    fn with_kind(kind: SpaceKind, d: usize, ctx: &SConfig) -> Self {
        let depth = ctx.primes().iter().map(|&p| default_depth(p)).collect();
        SpaceSpec { kind, d, ctx: ctx.clone(), depth, real: RealSampler::Auto, mcmc: McmcParams::default() }
    }

    pub fn affine(d: usize, ctx: &SConfig) -> Self {
        Self::with_kind(SpaceKind::Affine, d, ctx)
    }

    pub fn base(d: usize, ctx: &SConfig) -> Self {
        Self::with_kind(SpaceKind::Base, d, ctx)
    }

    pub fn congruence(cc: &CongruenceContext) -> Self {
        Self::with_kind(SpaceKind::CongruenceY(cc.clone()), cc.d, &cc.ctx)
    }

    pub fn with_real_sampler(mut self, real: RealSampler) -> Self {
        self.real = real;
        self
    }

    pub fn with_mcmc(mut self, mcmc: McmcParams) -> Self {
        self.mcmc = mcmc;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if self.depth.len() != self.ctx.primes().len() {
            return Err(Error::DimensionMismatch { expected: self.ctx.primes().len(), got: self.depth.len() });
        }
        for (&p, &k) in self.ctx.primes().iter().zip(&self.depth) {
            if k == 0 || p.checked_pow(k).is_none_or(|m| m >= 1 << 62) {
                return Err(Error::InvalidInput(format!("p-adic depth {k} out of range for p={p}")));
            }
        }
        if let SpaceKind::CongruenceY(cc) = &self.kind {
            if cc.q <= 1 {
                return Err(Error::InvalidInput("congruence spaces need q > 1".into()));
            }
            if cc.d != self.d || cc.ctx != self.ctx {
                return Err(Error::InvalidInput("congruence context disagrees with the space".into()));
            }
        }
        self.exactness().map(|_| ())
    }

    pub fn exactness(&self) -> Result<Exactness> {
        match (self.real, self.d <= 2) {
            (RealSampler::Exact, false) => Err(Error::UnsupportedExactSampler(format!(
                "no exact Haar sampler on SL_{0}(Z)\\SL_{0}(R)",
                self.d
            ))),
            (RealSampler::Mcmc, _) | (RealSampler::Auto, false) => Ok(Exactness::McmcApproximate),
            _ => Ok(Exactness::Exact),
        }
    }

    /// Homogeneous lattices drop the origin from the Siegel transform.
    pub fn mode(&self) -> TransformMode {
        match self.kind {
            SpaceKind::Base => TransformMode::Homogeneous,
            _ => TransformMode::Affine,
        }
    }
}

/// One sampled lattice together with the data used to build it.
#[derive(Clone, Debug)]
pub struct SampledLattice {
    pub lattice: AffineSLattice,
    pub g_inf: Vec<f64>,
    /// For congruence spaces, η = wγ/q with Λ = (ℤ_S^d + η)·g.
    pub eta: Option<Vec<BigRational>>,
}

/// A point of the Siegel domain |x| ≤ 1/2, x² + y² ≥ 1 with density
/// ∝ dx dy / y². The x-marginal is ∝ (1 − x²)^{−1/2}, so x = sin φ with φ
/// uniform; given x, y has tail y₀/y above y₀ = √(1 − x²).
fn siegel_domain_point(rng: &mut Rng) -> (f64, f64) {
    let phi = (rng.random::<f64>() - 0.5) * std::f64::consts::PI / 3.0;
    let x = phi.sin();
    let u = 1.0 - rng.random::<f64>();
    (x, (1.0 - x * x).sqrt() / u)
}

/// Rows (y^{−1/2}, 0), (x y^{−1/2}, y^{1/2}) rotated by θ: the lattice ℤ + τℤ
/// with τ = x + iy, scaled to covolume 1.
fn sl2_basis(x: f64, y: f64, theta: f64) -> Vec<f64> {
    let s = y.sqrt();
    let (c, sn) = (theta.cos(), theta.sin());
    vec![c / s, sn / s, x / s * c - s * sn, x / s * sn + s * c]
}

/// LLL reduction of the rows of `b` in place; returns U with b_new = U b_old.
fn lll_reduce(b: &mut [f64], d: usize) -> Vec<i64> {
    let mut u: Vec<i64> = (0..d * d).map(|i| (i / d == i % d) as i64).collect();
    let row_op = |b: &mut [f64], u: &mut [i64], dst: usize, src: usize, c: i64| {
        for j in 0..d {
            b[dst * d + j] -= c as f64 * b[src * d + j];
            u[dst * d + j] -= c * u[src * d + j];
        }
    };
    let gso = |b: &[f64]| {
        let mut bs = b.to_vec();
        let mut mu = vec![0.0; d * d];
        let mut r = vec![0.0; d];
        for i in 0..d {
            for j in 0..i {
                let dotp: f64 = (0..d).map(|l| b[i * d + l] * bs[j * d + l]).sum();
                mu[i * d + j] = dotp / r[j];
                for l in 0..d {
                    bs[i * d + l] -= mu[i * d + j] * bs[j * d + l];
                }
            }
            r[i] = (0..d).map(|l| bs[i * d + l].powi(2)).sum();
        }
        (mu, r)
    };
    let mut k = 1;
    let mut guard = 0;
    while k < d && guard < 10_000 {
        guard += 1;
        for j in (0..k).rev() {
            let (mu, _) = gso(b);
            let c = mu[k * d + j].round();
            if c != 0.0 {
                row_op(b, &mut u, k, j, c as i64);
            }
        }
        let (mu, r) = gso(b);
        if r[k] < (0.75 - mu[k * d + k - 1].powi(2)) * r[k - 1] {
            for j in 0..d {
                b.swap(k * d + j, (k - 1) * d + j);
                u.swap(k * d + j, (k - 1) * d + j);
            }
            k = (k - 1).max(1);
        } else {
            k += 1;
        }
    }
    u
}

fn int_mat_mod(u: &[i64], a: &[u64], d: usize, m: u64) -> Vec<u64> {
    let mm = m as i128;
    let mut out = vec![0u64; d * d];
    for i in 0..d {
        for j in 0..d {
            let s = (0..d).fold(0i128, |acc, l| (acc + (u[i * d + l] as i128) * (a[l * d + j] as i128)).rem_euclid(mm));
            out[i * d + j] = s as u64;
        }
    }
    out
}

fn vec_mat_mod(v: &[u64], a: &[u64], d: usize, m: u64) -> Vec<u64> {
    let mm = m as u128;
    (0..d)
        .map(|j| (0..d).fold(0u128, |acc, i| (acc + v[i] as u128 * a[i * d + j] as u128) % mm) as u64)
        .collect()
}

/// Draws lattices from the normalized Haar measure of a space. MCMC chains
/// persist across calls to `next` on the same sampler.
pub struct LatticeSampler<'a> {
    space: &'a SpaceSpec,
    exactness: Exactness,
    /// Current real basis of the MCMC chain, with the p-adic bases it drags along.
    chain: Option<(Vec<f64>, Vec<Vec<u64>>)>,
}

impl<'a> LatticeSampler<'a> {
    pub fn new(space: &'a SpaceSpec) -> Result<Self> {
        space.validate()?;
        Ok(LatticeSampler { space, exactness: space.exactness()?, chain: None })
    }

    pub fn exactness(&self) -> Exactness {
        self.exactness
    }

    fn padic_bases(&self, rng: &mut Rng) -> Vec<Vec<u64>> {
        let d = self.space.d;
        self.space
            .ctx
            .primes()
            .iter()
            .zip(&self.space.depth)
            .map(|(&p, &k)| sample_slq_uniform(d, p.pow(k), rng).into_iter().flatten().collect())
            .collect()
    }

    fn mcmc_step(&self, g: &mut [f64], gp: &mut [Vec<u64>], rng: &mut Rng) {
        let d = self.space.d;
        let mut x = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let tr = x.trace() / d as f64;
        for i in 0..d {
            x[(i, i)] -= tr;
        }
        // X and −X are equally likely, so right multiplication by exp(εX) is
        // reversible for Haar measure on the quotient.
        let h = (x * self.space.mcmc.step).exp();
        let gm = DMatrix::from_row_slice(d, d, g) * h;
        let det = gm.determinant();
        let scale = det.abs().powf(-1.0 / d as f64);
        for i in 0..d {
            for j in 0..d {
                g[i * d + j] = gm[(i, j)] * scale;
            }
        }
        let u = lll_reduce(g, d);
        for (b, (&p, &k)) in gp.iter_mut().zip(self.space.ctx.primes().iter().zip(&self.space.depth)) {
            *b = int_mat_mod(&u, b, d, p.pow(k));
        }
    }

    fn real_and_padic(&mut self, rng: &mut Rng) -> (Vec<f64>, Vec<Vec<u64>>) {
        let d = self.space.d;
        match self.exactness {
            Exactness::Exact => {
                let g = if d == 1 {
                    vec![1.0]
                } else {
                    let (x, y) = siegel_domain_point(rng);
                    let theta = rng.random::<f64>() * std::f64::consts::TAU;
                    sl2_basis(x, y, theta)
                };
                (g, self.padic_bases(rng))
            }
            Exactness::McmcApproximate => {
                let steps = if self.chain.is_none() { self.space.mcmc.burn_in } else { self.space.mcmc.thin.max(1) };
                let (mut g, mut gp) = match self.chain.take() {
                    Some(state) => state,
                    None => ((0..d * d).map(|i| (i / d == i % d) as u8 as f64).collect(), self.padic_bases(rng)),
                };
                for _ in 0..steps {
                    self.mcmc_step(&mut g, &mut gp, rng);
                }
                self.chain = Some((g.clone(), gp.clone()));
                (g, gp)
            }
        }
    }

    pub fn next(&mut self, rng: &mut Rng) -> Result<SampledLattice> {
        let d = self.space.d;
        let (g, gp) = self.real_and_padic(rng);
        let primes = self.space.ctx.primes().to_vec();
        let moduli: Vec<u64> = primes.iter().zip(&self.space.depth).map(|(&p, &k)| p.pow(k)).collect();
        // Shift in lattice coordinates: real part and residues mod p^k.
        let (u_inf, u_p, eta): (Vec<f64>, Vec<Vec<u64>>, Option<Vec<BigRational>>) = match &self.space.kind {
            SpaceKind::Base => (vec![0.0; d], moduli.iter().map(|_| vec![0; d]).collect(), None),
            SpaceKind::Affine => (
                (0..d).map(|_| rng.random::<f64>()).collect(),
                moduli.iter().map(|&m| (0..d).map(|_| rng.random_range(0..m)).collect()).collect(),
                None,
            ),
            SpaceKind::CongruenceY(cc) => {
                // Only wγ mod q matters: a lift of γ to SL_d(ℤ) preserves ℤ_S^d.
                let q = cc.q;
                let qb = BigInt::from(q);
                let w: Vec<u64> = cc.w.iter().map(|x| reduce_rat_mod(x, &qb).unwrap().to_u64().unwrap()).collect();
                let gamma = sample_slq_uniform(d, q, rng);
                let v: Vec<u64> = (0..d)
                    .map(|j| (0..d).fold(0u128, |acc, i| (acc + w[i] as u128 * gamma[i][j] as u128) % q as u128) as u64)
                    .collect();
                let qr = BigRational::from_integer(qb);
                let eta: Vec<BigRational> =
                    v.iter().map(|&x| BigRational::from_integer(BigInt::from(x)) / &qr).collect();
                let u_p = moduli
                    .iter()
                    .map(|&m| {
                        let mb = BigInt::from(m);
                        eta.iter().map(|x| reduce_rat_mod(x, &mb).unwrap().to_u64().unwrap()).collect()
                    })
                    .collect();
                (eta.iter().map(rat_to_f64).collect(), u_p, Some(eta))
            }
        };
        let xi_inf: Vec<f64> = (0..d).map(|j| (0..d).map(|i| u_inf[i] * g[i * d + j]).sum()).collect();
        let padic: Vec<PadicPart> = primes
            .iter()
            .zip(&self.space.depth)
            .zip(gp.into_iter().zip(&u_p))
            .zip(&moduli)
            .map(|(((&p, &k), (basis, u)), &m)| PadicPart { p, precision: k, shift: vec_mat_mod(u, &basis, d, m), basis })
            .collect();
        let lattice = AffineSLattice::split(&self.space.ctx, g.clone(), xi_inf, padic)?;
        Ok(SampledLattice { lattice, g_inf: g, eta })
    }
}

/// A single lattice drawn from the space; MCMC samplers run a fresh chain.
pub fn sample_lattice(space: &SpaceSpec, rng: &mut Rng) -> Result<SampledLattice> {
    LatticeSampler::new(space)?.next(rng)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MCEstimate {
    pub mean: f64,
    /// Sample standard deviation over √n.
    pub stderr: f64,
    pub n_samples: u64,
    pub seed: u64,
    pub sampler_exactness: Exactness,
}

impl MCEstimate {
    pub fn from_values(values: &[f64], seed: u64, sampler_exactness: Exactness) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 { values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        MCEstimate { mean, stderr: (var / n).sqrt(), n_samples: values.len() as u64, seed, sampler_exactness }
    }

    /// |mean − target| ≤ k·stderr.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

/// f̂(Λ) for n lattices. Batch b of `BATCH` samples draws from
/// `stream_rng(seed, b)`, so results do not depend on the thread count.
pub fn siegel_samples(space: &SpaceSpec, f: &TestFunction, n: u64, seed: u64, budget: u64) -> Result<Vec<f64>> {
    space.validate()?;
    let mode = space.mode();
    let batches = batch_sizes(n, BATCH);
    let parts: Vec<Vec<f64>> = batches
        .par_iter()
        .enumerate()
        .map(|(b, &size)| {
            let mut rng = stream_rng(seed, b as u64);
            let mut sampler = LatticeSampler::new(space)?;
            (0..size)
                .map(|_| {
                    let s = sampler.next(&mut rng)?;
                    count_in_set(&s.lattice, f, mode, budget).map(|c| c as f64)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Mean of f̂ (order 1) or f̂² (order 2) over the normalized Haar measure.
pub fn estimate_moment(space: &SpaceSpec, f: &TestFunction, order: u32, n: u64, seed: u64, budget: u64) -> Result<MCEstimate> {
    if !(1..=2).contains(&order) {
        return Err(Error::InvalidInput(format!("moment order {order} is not 1 or 2")));
    }
    let values = siegel_samples(space, f, n, seed, budget)?;
    let powered: Vec<f64> = values.iter().map(|x| x.powi(order as i32)).collect();
    Ok(MCEstimate::from_values(&powered, seed, space.exactness()?))
}

/// Both moments from one set of samples.
pub fn estimate_moments(space: &SpaceSpec, f: &TestFunction, n: u64, seed: u64, budget: u64) -> Result<(MCEstimate, MCEstimate)> {
    let values = siegel_samples(space, f, n, seed, budget)?;
    let ex = space.exactness()?;
    let sq: Vec<f64> = values.iter().map(|x| x * x).collect();
    Ok((MCEstimate::from_values(&values, seed, ex), MCEstimate::from_values(&sq, seed, ex)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceReport {
    pub volume: f64,
    pub m: f64,
    /// Fraction of samples with |#(Λ ∩ A) − vol(A)| > M.
    pub empirical: f64,
    /// vol(A)/M².
    pub bound: f64,
    /// √(b(1 − b)/n) at b = min(bound, 1).
    pub binomial_stderr: f64,
    /// empirical·M²/vol(A): the constant the data would need.
    pub constant_hat: f64,
    pub n_samples: u64,
    pub seed: u64,
    pub sampler_exactness: Exactness,
}

impl VarianceReport {
    /// empirical ≤ bound + k·binomial_stderr.
    pub fn within(&self, k: f64) -> bool {
        self.empirical <= self.bound + k * self.binomial_stderr
    }
}

pub fn variance_check(space: &SpaceSpec, a: &TestFunction, m: f64, n: u64, seed: u64, budget: u64) -> Result<VarianceReport> {
    if !(m > 0.0) {
        return Err(Error::InvalidInput("M must be positive".into()));
    }
    let vol = a.volume(&space.ctx, space.d)?;
    let values = siegel_samples(space, a, n, seed, budget)?;
    let exceed = values.iter().filter(|&&c| (c - vol).abs() > m).count();
    let empirical = exceed as f64 / n as f64;
    let bound = vol / (m * m);
    let b = bound.min(1.0);
    Ok(VarianceReport {
        volume: vol,
        m,
        empirical,
        bound,
        binomial_stderr: (b * (1.0 - b) / n as f64).sqrt(),
        constant_hat: empirical * m * m / vol,
        n_samples: n,
        seed,
        sampler_exactness: space.exactness()?,
    })
}

/// Truncation of the (t, a) series: t ≤ t_max, v_p(a) ≥ −K_p, |a| ≤ ratio_bound·t.
#[derive(Clone, Debug, PartialEq)]
pub struct Truncation {
    pub t_max: u64,
    pub depth: Vec<u32>,
    pub ratio_bound: BigRational,
    /// Keep only gcd(a, t) = 1; off only for negative controls.
    pub coprime_filter: bool,
}

impl Truncation {
    pub fn new(ctx: &SConfig, t_max: u64) -> Self {
        Truncation {
            t_max,
            depth: vec![12; ctx.primes().len()],
            ratio_bound: BigRational::from_integer(BigInt::from(8)),
            coprime_filter: true,
        }
    }

    pub fn with_depth(mut self, k: u32) -> Self {
        self.depth.iter_mut().for_each(|x| *x = k);
        self
    }

    pub fn with_ratio_bound(mut self, b: BigRational) -> Self {
        self.ratio_bound = b;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesValue {
    pub value: f64,
    /// The truncated sum in exact arithmetic, when it was small enough to keep.
    pub exact: Option<BigRational>,
    /// Rigorous bound on the omitted terms; infinite when the series diverges.
    pub tail_bound: f64,
    pub terms_used: u64,
    pub t_max: u64,
    pub depth: Vec<u32>,
    pub ratio_bound: f64,
}

fn product_box(f: &TestFunction) -> Result<&ProductBox> {
    match f {
        TestFunction::ProductBox(pb) => Ok(pb),
        _ => Err(Error::NonIndicatorUnsupported("the pair series needs a product-box indicator".into())),
    }
}

/// t ≤ t_max coprime to q and to every prime of S.
fn admissible_t(t_max: u64, q: u64, ctx: &SConfig) -> Vec<u64> {
    (1..=t_max).filter(|t| t.gcd(&q) == 1 && ctx.primes().iter().all(|p| t % p != 0)).collect()
}

/// All exponent vectors j with 0 ≤ j_p ≤ k_p.
fn depth_vectors(k: &[u32]) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for &kp in k {
        out = out.into_iter().flat_map(|v| (0..=kp).map(move |j| [v.clone(), vec![j]].concat())).collect();
    }
    out
}

fn kahan_add(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

/// Magnitudes |ρ| with |[lo, hi] ∩ ρ^{−1}[lo, hi]| > 0, per sign of ρ.
#[derive(Clone, Copy, Debug)]
struct RatioSupport {
    pos: Option<(f64, f64)>,
    neg: Option<(f64, f64)>,
}

fn intersect(a: Option<(f64, f64)>, b: Option<(f64, f64)>) -> Option<(f64, f64)> {
    let (a, b) = (a?, b?);
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    (lo < hi).then_some((lo, hi))
}

fn ratio_support(pb: &ProductBox) -> RatioSupport {
    let all = Some((0.0, f64::INFINITY));
    let mut s = RatioSupport { pos: all, neg: all };
    for (lo, hi) in pb.lo.iter().zip(&pb.hi) {
        let (l, h) = (rat_to_f64(lo), rat_to_f64(hi));
        let (pos, neg) = if l < 0.0 && h > 0.0 {
            (all, all)
        } else if l > 0.0 || h < 0.0 {
            let (m, mx) = (l.abs().min(h.abs()), l.abs().max(h.abs()));
            (Some((m / mx * (1.0 - 1e-12), mx / m * (1.0 + 1e-12))), None)
        } else if l < h {
            (all, None)
        } else {
            (None, None)
        };
        s.pos = intersect(s.pos, pos);
        s.neg = intersect(s.neg, neg);
    }
    s
}

/// |[lo, hi] ∩ ρ^{−1}[lo, hi]| for each coordinate, multiplied.
fn overlap_product(pb: &ProductBox, rho: f64) -> f64 {
    let mut v = 1.0;
    for (lo, hi) in pb.lo.iter().zip(&pb.hi) {
        let (l, h) = (rat_to_f64(lo), rat_to_f64(hi));
        let (a, b) = if rho > 0.0 { (l / rho, h / rho) } else { (h / rho, l / rho) };
        let len = h.min(b) - l.max(a);
        if len <= 0.0 {
            return 0.0;
        }
        v *= len;
    }
    v
}

fn overlap_product_exact(pb: &ProductBox, rho: &BigRational) -> BigRational {
    let mut v = BigRational::one();
    for (l, h) in pb.lo.iter().zip(&pb.hi) {
        let (a, b) = if rho.is_positive() { (l / rho, h / rho) } else { (h / rho, l / rho) };
        let top = if h < &b { h.clone() } else { b };
        let bot = if l > &a { l.clone() } else { a };
        if top <= bot {
            return BigRational::zero();
        }
        v *= top - bot;
    }
    v
}

/// ∫_a^b min(1, x^{−d}) dx for 0 ≤ a ≤ b ≤ ∞.
fn min_power_integral(a: f64, b: f64, d: i32) -> f64 {
    if b <= a {
        return 0.0;
    }
    let antider = |x: f64| if x.is_infinite() { 0.0 } else { x.powi(1 - d) / (d - 1) as f64 };
    (b.min(1.0) - a.min(1.0)).max(0.0) + (antider(a.max(1.0)) - antider(b.max(1.0))).max(0.0)
}

/// Σ_{j=0}^{k} x^j, or the full geometric sum for k = None.
fn geometric(x: f64, k: Option<u32>) -> f64 {
    match k {
        None => 1.0 / (1.0 - x),
        Some(k) => (1.0 - x.powi(k as i32 + 1)) / (1.0 - x),
    }
}

/// Σ_{t>T} t^{−s} ≤ T^{1−s}/(s − 1).
fn zeta_tail(t: u64, s: i32) -> f64 {
    if s <= 1 {
        f64::INFINITY
    } else {
        (t as f64).powi(1 - s) / (s - 1) as f64
    }
}

/// The second-moment series for Y_{w/q}:
/// (∫f)² + Σ_{t ∈ ℕ_S, gcd(t,q)=1} Σ_{a ∈ qℤ_S + t, gcd(a,t)=1} ∫ f(tv) f(av) dv,
/// for f the indicator of a product box centered at 0 at the finite places.
///
/// With ρ = a/t the real factor is t^{−d}·∏|[lo, hi] ∩ ρ^{−1}[lo, hi]| and the
/// factor at p is p^{d(s_p + min(0, v_p(a)))}. Writing a = n/P with
/// P = ∏ p^{j_p}, the congruence a ≡ t mod qℤ_S reads n ≡ tP mod q.
pub fn second_moment_rhs(f: &TestFunction, cc: &CongruenceContext, trunc: &Truncation) -> Result<SeriesValue> {
    let pb = product_box(f)?;
    let ctx = &cc.ctx;
    let d = pb.lo.len();
    if d < 2 || pb.hi.len() != d || pb.s.len() != ctx.primes().len() {
        return Err(Error::DimensionMismatch { expected: d, got: pb.hi.len() });
    }
    if trunc.depth.len() != ctx.primes().len() {
        return Err(Error::DimensionMismatch { expected: ctx.primes().len(), got: trunc.depth.len() });
    }
    let q = cc.q;
    let di = d as i32;
    let primes = ctx.primes().to_vec();
    let width_exact: BigRational =
        pb.lo.iter().zip(&pb.hi).map(|(a, b)| if b > a { b - a } else { BigRational::zero() }).product();
    let g0_exact: BigRational = primes.iter().zip(&pb.s).map(|(&p, &s)| pow_rat(p, d as i64 * s)).product();
    let vol_exact = &width_exact * &g0_exact;
    let w = rat_to_f64(&width_exact);
    let g0 = rat_to_f64(&g0_exact);
    let beta = rat_to_f64(&trunc.ratio_bound);
    let support = ratio_support(pb);
    let sides: Vec<(i64, (f64, f64))> =
        [(1i64, support.pos), (-1i64, support.neg)].into_iter().filter_map(|(s, r)| r.map(|r| (s, r))).collect();
    let ts = admissible_t(trunc.t_max, q, ctx);
    let depths = depth_vectors(&trunc.depth);
    let pvals: Vec<(i128, f64)> = depths
        .iter()
        .map(|j| {
            let pp = primes.iter().zip(j).fold(1i128, |acc, (&p, &e)| acc * (p as i128).pow(e));
            let fin = primes.iter().zip(j).fold(1.0, |acc, (&p, &e)| acc * (p as f64).powi(-(di * e as i32)));
            (pp, fin)
        })
        .collect();

    // Candidate count decides whether the exact sum is affordable.
    let candidates: f64 = ts
        .iter()
        .map(|&t| {
            pvals
                .iter()
                .map(|(pp, _)| {
                    sides.iter().map(|(_, (r0, r1))| ((r1.min(beta) - r0).max(0.0) * (t as f64) * (*pp as f64) / q as f64) + 1.0).sum::<f64>()
                })
                .sum::<f64>()
        })
        .sum();
    let track_exact = candidates <= EXACT_TERM_LIMIT;

    let per_t: Vec<(f64, f64, u64, Option<BigRational>)> = ts
        .par_iter()
        .map(|&t| {
            let (mut sum, mut comp, mut used) = (0.0, 0.0, 0u64);
            let mut exact = track_exact.then(BigRational::zero);
            let tf = (t as f64).powi(-di);
            for (j, &(pp, fin)) in depths.iter().zip(&pvals) {
                let tp = t as i128 * pp;
                for &(sign, (r0, r1)) in &sides {
                    let hi = r1.min(beta);
                    if hi <= r0 {
                        continue;
                    }
                    let m_lo = ((r0 * tp as f64).floor() as i128).max(1);
                    let m_hi = (hi * tp as f64).floor() as i128;
                    // sign·m ≡ tP (mod q)
                    let class = (sign as i128 * tp).rem_euclid(q as i128);
                    let mut m = m_lo + (class - m_lo).rem_euclid(q as i128);
                    while m <= m_hi {
                        let keep_depth = primes.iter().zip(j).all(|(&p, &e)| e == 0 || m % p as i128 != 0);
                        let keep_gcd = !trunc.coprime_filter || (m.unsigned_abs() as u64).gcd(&t) == 1;
                        if keep_depth && keep_gcd {
                            let n = sign as i128 * m;
                            let rho = n as f64 / tp as f64;
                            let phi = overlap_product(pb, rho);
                            if phi > 0.0 {
                                used += 1;
                                kahan_add(&mut sum, &mut comp, tf * phi * g0 * fin);
                                if let Some(e) = exact.as_mut() {
                                    let rq = BigRational::new(BigInt::from(n), BigInt::from(tp));
                                    let finq: BigRational = primes.iter().zip(j).map(|(&p, &jj)| pow_rat(p, -(d as i64) * jj as i64)).product();
                                    *e += overlap_product_exact(pb, &rq) * &g0_exact * finq
                                        / BigRational::from_integer(BigInt::from(t).pow(d as u32));
                                }
                            }
                        }
                        m += q as i128;
                    }
                }
            }
            (sum, comp, used, exact)
        })
        .collect();

    let (mut sum, mut comp, mut used) = (rat_to_f64(&vol_exact).powi(2), 0.0, 0u64);
    let mut exact = track_exact.then(|| &vol_exact * &vol_exact);
    for (s, c, u, e) in per_t {
        kahan_add(&mut sum, &mut comp, s);
        comp += c;
        used += u;
        if let (Some(acc), Some(e)) = (exact.as_mut(), e) {
            *acc += e;
        }
    }

    // Tail: on each side Φ(ρ) ≤ W·min(1, |ρ|^{−d}), nonincreasing in |ρ|, and a
    // progression of step δ = q/(Pt) in ρ sums to at most sup + δ^{−1}∫.
    let (mut c0, mut c1, mut c0b, mut c1b) = (0.0, 0.0, 0.0, 0.0);
    for &(_, (r0, r1)) in &sides {
        c0 += w * r0.max(1.0).powi(-di).min(1.0);
        c1 += w * min_power_integral(r0, r1, di);
        if r1 > beta {
            let a = r0.max(beta);
            c0b += w * a.max(1.0).powi(-di).min(1.0);
            c1b += w * min_power_integral(a, r1, di);
        }
    }
    let geo = |x: f64, k: Option<&Vec<u32>>, e: i32| {
        primes.iter().enumerate().fold(1.0, |acc, (i, &p)| acc * geometric((p as f64).powi(e) * x, k.map(|k| k[i])))
    };
    let d0_all = geo(1.0, None, -di);
    let d0_k = geo(1.0, Some(&trunc.depth), -di);
    let d1_all = geo(1.0, None, 1 - di);
    let d1_k = geo(1.0, Some(&trunc.depth), 1 - di);
    let qf = q as f64;
    let mut tail = 0.0;
    for &t in &ts {
        let tf = t as f64;
        let weight = tf.powi(-di);
        tail += weight * (c0 * (d0_all - d0_k) + tf / qf * c1 * (d1_all - d1_k));
        tail += weight * (c0b * d0_k + tf / qf * c1b * d1_k);
    }
    let big_t = trunc.t_max.max(1);
    let t_tail = c0 * d0_all * zeta_tail(big_t, di) + if c1 > 0.0 { c1 * d1_all / qf * zeta_tail(big_t, di - 1) } else { 0.0 };
    let tail_bound = g0 * (tail + t_tail);

    Ok(SeriesValue {
        value: sum + comp,
        exact,
        tail_bound,
        terms_used: used,
        t_max: trunc.t_max,
        depth: trunc.depth.clone(),
        ratio_bound: beta,
    })
}

fn floor_rat(x: &BigRational) -> i128 {
    x.floor().to_integer().to_i128().expect("range fits i128")
}

fn ceil_rat(x: &BigRational) -> i128 {
    x.ceil().to_integer().to_i128().expect("range fits i128")
}

/// vol(A) + Σ_{t ∈ ℕ_S, gcd(t,q)=1} t^{−d} Σ_{a ∈ qℤ_S + t, gcd(a,t)=1} f((a/t)·y)
/// for f the indicator of a product box and y a nonzero rational vector
/// embedded diagonally.
///
/// The set of admissible ρ = a/t is an interval at the real place and a
/// lower bound on v_p(a) at each p, so for fixed t the sum is finite; only
/// t > t_max is truncated.
pub fn inhom_series(f: &TestFunction, y: &[BigRational], cc: &CongruenceContext, trunc: &Truncation) -> Result<SeriesValue> {
    let pb = product_box(f)?;
    let ctx = &cc.ctx;
    let d = pb.lo.len();
    if y.len() != d || pb.s.len() != ctx.primes().len() {
        return Err(Error::DimensionMismatch { expected: d, got: y.len() });
    }
    if y.iter().all(|x| x.is_zero()) {
        return Err(Error::InvalidInput("y must be nonzero".into()));
    }
    let q = cc.q;
    let di = d as i32;
    let primes = ctx.primes().to_vec();
    let width: BigRational =
        pb.lo.iter().zip(&pb.hi).map(|(a, b)| if b > a { b - a } else { BigRational::zero() }).product();
    let vol: BigRational = width * primes.iter().zip(&pb.s).map(|(&p, &s)| pow_rat(p, d as i64 * s)).product::<BigRational>();

    // ρ·y_i ∈ [lo_i, hi_i] for every i.
    let mut range: Option<(BigRational, BigRational)> = None;
    let mut empty = false;
    for ((lo, hi), yi) in pb.lo.iter().zip(&pb.hi).zip(y) {
        if yi.is_zero() {
            empty |= !(lo <= &BigRational::zero() && &BigRational::zero() <= hi);
            continue;
        }
        let (a, b) = (lo / yi, hi / yi);
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        range = Some(match range {
            None => (a, b),
            Some((l, h)) => (if a > l { a } else { l }, if b < h { b } else { h }),
        });
    }
    let (rlo, rhi) = range.expect("y has a nonzero coordinate");
    empty |= rlo > rhi;

    // v_p(a) ≥ need_p = −s_p − min_i v_p(y_i).
    let need: Vec<i64> = primes
        .iter()
        .zip(&pb.s)
        .map(|(&p, &s)| -s - y.iter().filter(|x| !x.is_zero()).map(|x| valuation(x, p).unwrap()).min().unwrap())
        .collect();
    let depth_caps: Vec<u32> = need.iter().map(|&n| (-n).max(0) as u32).collect();
    let depths = depth_vectors(&depth_caps);
    let ts = admissible_t(trunc.t_max, q, ctx);

    let per_t: Vec<(u64, u64)> = if empty {
        Vec::new()
    } else {
        ts.par_iter()
            .map(|&t| {
                let mut count = 0u64;
                for j in &depths {
                    let pp = primes.iter().zip(j).fold(1i128, |acc, (&p, &e)| acc * (p as i128).pow(e));
                    let tp = BigRational::from_integer(BigInt::from(t as i128 * pp));
                    let (n_lo, n_hi) = (ceil_rat(&(&rlo * &tp)), floor_rat(&(&rhi * &tp)));
                    let class = (t as i128 * pp).rem_euclid(q as i128);
                    let mut n = n_lo + (class - n_lo).rem_euclid(q as i128);
                    while n <= n_hi {
                        let ok = n != 0
                            && primes.iter().zip(j).zip(&need).all(|((&p, &e), &nd)| {
                                if e > 0 {
                                    n % p as i128 != 0
                                } else {
                                    nd <= 0 || n % (p as i128).pow(nd as u32) == 0
                                }
                            })
                            && (!trunc.coprime_filter || (n.unsigned_abs() as u64).gcd(&t) == 1);
                        count += ok as u64;
                        n += q as i128;
                    }
                }
                (t, count)
            })
            .collect()
    };
    let mut exact = vol.clone();
    let mut used = 0;
    for (t, c) in per_t {
        used += c;
        exact += BigRational::new(BigInt::from(c), BigInt::from(t).pow(d as u32));
    }
    // Per t and depth vector the count is at most t·L·P/q + 1.
    let len = if empty { 0.0 } else { rat_to_f64(&(&rhi - &rlo)) };
    let p_sum: f64 = depths
        .iter()
        .map(|j| primes.iter().zip(j).fold(1.0, |acc, (&p, &e)| acc * (p as f64).powi(e as i32)))
        .sum();
    let big_t = trunc.t_max.max(1);
    // A one-point ρ range leaves only the "+1" part, even where Σ t^{1−d} diverges.
    let tail_bound = if empty {
        0.0
    } else {
        let spread = if len > 0.0 { len * p_sum / q as f64 * zeta_tail(big_t, di - 1) } else { 0.0 };
        spread + depths.len() as f64 * zeta_tail(big_t, di)
    };
    Ok(SeriesValue {
        value: rat_to_f64(&exact),
        exact: Some(exact),
        tail_bound,
        terms_used: used,
        t_max: trunc.t_max,
        depth: depth_caps,
        ratio_bound: f64::INFINITY,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sarith::{int, rat, TVector};
    use crate::slattice::SBox;

    fn ctx2() -> SConfig {
        SConfig::new(vec![2]).unwrap()
    }

    #[test]
    fn domain_points_lie_in_the_domain() {
        let mut rng = stream_rng(1, 0);
        for _ in 0..1000 {
            let (x, y) = siegel_domain_point(&mut rng);
            assert!(x.abs() <= 0.5 && x * x + y * y >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn sampled_bases_are_unimodular() {
        for space in [SpaceSpec::affine(2, &ctx2()), SpaceSpec::base(3, &ctx2())] {
            let mut rng = stream_rng(3, 0);
            let s = sample_lattice(&space, &mut rng).unwrap();
            let d = space.d;
            let det = DMatrix::from_row_slice(d, d, &s.g_inf).determinant();
            assert!((det.abs() - 1.0).abs() < 1e-9, "det {det}");
        }
    }

    #[test]
    fn exact_sampler_refused_in_dimension_three() {
        let space = SpaceSpec::base(3, &ctx2()).with_real_sampler(RealSampler::Exact);
        assert!(matches!(space.validate(), Err(Error::UnsupportedExactSampler(_))));
        assert_eq!(SpaceSpec::base(3, &ctx2()).exactness().unwrap(), Exactness::McmcApproximate);
    }

    #[test]
    fn congruence_shift_structure() {
        let cc = CongruenceContext::new(2, 5, vec![int(1), int(0)], &ctx2()).unwrap();
        let space = SpaceSpec::congruence(&cc);
        let mut rng = stream_rng(11, 0);
        for _ in 0..200 {
            let s = sample_lattice(&space, &mut rng).unwrap();
            let eta = s.eta.unwrap();
            let scaled: Vec<BigInt> = eta.iter().map(|x| (x * int(5)).to_integer()).collect();
            assert!(eta.iter().all(|x| (x * int(5)).is_integer()));
            let g = scaled.iter().fold(BigInt::from(5), |acc, x| acc.gcd(x));
            assert!(g.is_one());
        }
    }

    #[test]
    fn lll_keeps_the_lattice() {
        let mut b = vec![1.0, 0.0, 7.0, 1.0];
        let u = lll_reduce(&mut b, 2);
        assert_eq!(u, vec![1, 0, -7, 1]);
        assert!((b[2]).abs() < 1e-12 && (b[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn affine_first_moment_smoke() {
        let space = SpaceSpec::affine(2, &ctx2());
        let f = TestFunction::Ball(SBox::new(TVector::from_f64(2.5, vec![0])));
        let est = estimate_moment(&space, &f, 1, 10_000, 5, crate::slattice::DEFAULT_BUDGET).unwrap();
        let vol = std::f64::consts::PI * 6.25;
        assert!(est.agrees_with(vol, 4.0), "{est:?}");
    }

    #[test]
    fn estimates_are_thread_count_independent() {
        let space = SpaceSpec::affine(2, &ctx2());
        let f = TestFunction::Ball(SBox::new(TVector::from_f64(1.5, vec![1])));
        let a = siegel_samples(&space, &f, 2500, 9, crate::slattice::DEFAULT_BUDGET).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| siegel_samples(&space, &f, 2500, 9, crate::slattice::DEFAULT_BUDGET).unwrap());
        assert_eq!(a, b);
    }

    fn cube(lo: BigRational, hi: BigRational, d: usize, s: Vec<i64>) -> TestFunction {
        TestFunction::ProductBox(ProductBox::new(vec![lo; d], vec![hi; d], s))
    }

    #[test]
    fn leading_series_terms() {
        // t = 1 terms for q = 5 over [−1, 1]³ × ℤ₂³.
        let f = cube(int(-1), int(1), 3, vec![0]);
        let pb = product_box(&f).unwrap();
        assert_eq!(overlap_product_exact(pb, &int(1)), int(8));
        assert_eq!(overlap_product_exact(pb, &int(-4)), rat(1, 8));
        assert_eq!(overlap_product_exact(pb, &int(6)), rat(1, 27));
        // a = 7/2: real (4/7)³ and 2-adic factor 2^{−3}.
        assert_eq!(overlap_product_exact(pb, &rat(7, 2)) * rat(1, 8), rat(64, 343) * rat(1, 8));
    }

    #[test]
    fn degenerate_support_keeps_only_the_diagonal() {
        let ctx = SConfig::empty();
        let cc = CongruenceContext::new(3, 5, vec![int(1), int(0), int(0)], &ctx).unwrap();
        let f = cube(int(1), rat(11, 10), 3, vec![]);
        let trunc = Truncation::new(&ctx, 40).with_ratio_bound(int(2));
        let s = second_moment_rhs(&f, &cc, &trunc).unwrap();
        let vol = rat(1, 1000);
        assert_eq!(s.exact.unwrap(), &vol * &vol + &vol);
        assert_eq!(s.terms_used, 1);
        assert!(s.tail_bound > 0.0 && s.tail_bound.is_finite());
    }

    #[test]
    fn inhom_tail_finite_for_a_one_point_ratio_range_in_the_plane() {
        // ρ·(1, 1) ∈ [3/4, 1] × [−3/4, 3/4] forces ρ = 3/4.
        let cc = CongruenceContext::new(2, 3, vec![int(0), int(1)], &ctx2()).unwrap();
        let pb = ProductBox::new(vec![rat(3, 4), rat(-3, 4)], vec![int(1), rat(3, 4)], vec![0]);
        let s = inhom_series(&TestFunction::ProductBox(pb), &[int(1), int(1)], &cc, &Truncation::new(&ctx2(), 20)).unwrap();
        assert!(s.tail_bound.is_finite());
    }

    #[test]
    fn non_box_rejected() {
        let cc = CongruenceContext::new(3, 5, vec![int(1), int(0), int(0)], &ctx2()).unwrap();
        let f = TestFunction::Ball(SBox::new(TVector::from_f64(1.0, vec![0])));
        assert!(matches!(second_moment_rhs(&f, &cc, &Truncation::new(&ctx2(), 5)), Err(Error::NonIndicatorUnsupported(_))));
    }

    #[test]
    fn inhom_series_tiny_support() {
        let ctx = SConfig::empty();
        let cc = CongruenceContext::new(3, 5, vec![int(1), int(0), int(0)], &ctx).unwrap();
        let y = vec![int(1), int(1), int(1)];
        let f = cube(rat(99, 100), rat(101, 100), 3, vec![]);
        let s = inhom_series(&f, &y, &cc, &Truncation::new(&ctx, 30)).unwrap();
        let vol = rat(8, 1_000_000);
        assert_eq!(s.exact.unwrap(), vol + int(1));
    }

    #[test]
    fn depth_vectors_cover_the_grid() {
        assert_eq!(depth_vectors(&[2, 1]).len(), 6);
        assert_eq!(depth_vectors(&[]), vec![Vec::<u32>::new()]);
    }
}
