use std::time::Instant;

use clap::{Args, ValueEnum};
use oppenheim_core::congruence::{enumerate_slq, orbit_invariant, representative_for_t, CongruenceContext};
use oppenheim_core::counting::{count, rescale_identity_check, sweep, BoxPlacement, CountSpec, ShrinkingFamily, SweepMode};
use oppenheim_core::io::{
    form_from_json, format_rational, parse_int_list, parse_interval, parse_rational, parse_vector, TestFunctionSpec,
};
use oppenheim_core::moments::{
    estimate_moment, inhom_series, second_moment_rhs, variance_check, McmcParams, RealSampler, SeriesValue, SpaceSpec,
    Truncation,
};
use oppenheim_core::qspace::{QuadraticFormS, SInterval};
use oppenheim_core::sarith::{
    normalization_identity_exact, normalization_identity_residual, rat_to_f64, sl_group_order, zeta_s, zeta_s_euler,
    CovolumeVariant, SConfig, TVector,
};
use oppenheim_core::slattice::TestFunction;
use oppenheim_core::volume::{leading_constant, padic_quadric_volume, PadicVolumeRequest};
use oppenheim_core::{BigRational, Error};
use serde_json::json;

use crate::report::{num, Table};

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad input or configuration: exit 2.
    Config(String),
    /// Candidate budget, precision or tolerance not met: exit 3.
    Limit(String),
    /// Output could not be written: exit 1.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Limit(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Limit(m) => write!(f, "limit reached: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::RegionTooLarge { .. }
            | Error::BudgetExceeded(_)
            | Error::ToleranceUnreachable { .. }
            | Error::SearchBudgetExceeded(_)
            | Error::NotStabilized(_)
            | Error::PrecisionExhausted(_)
            | Error::InsufficientPadicPrecision { .. } => CliError::Limit(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Output of a command: the table plus the seed it consumed, if any.
pub struct Outcome {
    pub table: Table,
    pub seed: Option<u64>,
    /// A check inside the command failed; artifacts are still written.
    pub failure: Option<CliError>,
}

impl Outcome {
    fn ok(table: Table) -> Self {
        Outcome { table, seed: None, failure: None }
    }
}

fn cfg<T>(r: oppenheim_core::Result<T>) -> CliResult<T> {
    r.map_err(CliError::from)
}

#[derive(Args, Debug, Clone)]
pub struct PrimeOpts {
    /// Finite primes of S, comma-separated (empty for S = {∞}).
    #[arg(long, default_value = "")]
    pub primes: String,
}

impl PrimeOpts {
    fn ctx(&self) -> CliResult<SConfig> {
        cfg(parse_int_list(&self.primes).and_then(SConfig::new))
    }
}

#[derive(Args, Debug, Clone)]
pub struct CongOpts {
    /// Congruence modulus q, coprime to S.
    #[arg(long)]
    pub q: Option<u64>,
    /// Shift w ∈ ℤ_S^d with gcd(q, w) = 1, comma-separated rationals.
    #[arg(long, allow_hyphen_values = true)]
    pub w: Option<String>,
}

impl CongOpts {
    fn context(&self, d: usize, ctx: &SConfig) -> CliResult<Option<CongruenceContext>> {
        match (self.q, &self.w) {
            (None, None) => Ok(None),
            (Some(q), Some(w)) => Ok(Some(cfg(CongruenceContext::new(d, q, cfg(parse_vector(w))?, ctx))?)),
            _ => Err(CliError::Config("--q and --w must be given together".into())),
        }
    }

    fn require(&self, d: usize, ctx: &SConfig) -> CliResult<CongruenceContext> {
        self.context(d, ctx)?.ok_or_else(|| CliError::Config("this command needs --q and --w".into()))
    }
}

#[derive(Args, Debug, Clone)]
pub struct FunctionOpts {
    /// Test function: `disk:R` or `box:lo..hi,lo..hi,...`.
    #[arg(long = "f", allow_hyphen_values = true)]
    pub f: TestFunctionSpec,
    /// Finite-place radius exponents t_p, one per prime of S (default all 0).
    #[arg(long, allow_hyphen_values = true)]
    pub tp: Option<String>,
}

impl FunctionOpts {
    fn build(&self, d: usize, ctx: &SConfig) -> CliResult<TestFunction> {
        let tp = exponents(self.tp.as_deref(), ctx)?;
        cfg(self.f.build(d, &tp))
    }
}

fn exponents(s: Option<&str>, ctx: &SConfig) -> CliResult<Vec<i64>> {
    let tp = match s {
        Some(s) => cfg(parse_int_list(s))?,
        None => vec![0; ctx.primes().len()],
    };
    if tp.len() != ctx.primes().len() {
        return Err(CliError::Config(format!("expected {} finite exponents, got {}", ctx.primes().len(), tp.len())));
    }
    Ok(tp)
}

fn read_form(s: &str) -> CliResult<QuadraticFormS> {
    let text = if s.trim_start().starts_with('{') {
        s.to_string()
    } else {
        std::fs::read_to_string(s).map_err(|e| CliError::Config(format!("cannot read form {s}: {e}")))?
    };
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("form JSON: {e}")))?;
    cfg(form_from_json(&v))
}

/// `p:a:c` finite coset a + p^c ℤ_p.
fn parse_coset(s: &str) -> CliResult<(u64, BigRational, i64)> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Config(format!("coset {s:?} must be p:a:c")));
    }
    let p = parts[0].parse().map_err(|_| CliError::Config(format!("bad prime in {s:?}")))?;
    let a = cfg(parse_rational(parts[1]))?;
    let c = parts[2].parse().map_err(|_| CliError::Config(format!("bad exponent in {s:?}")))?;
    Ok((p, a, c))
}

fn target_set(interval: &str, cosets: &[String]) -> CliResult<SInterval> {
    let mut t = cfg(parse_interval(interval))?;
    for c in cosets {
        let (p, a, e) = parse_coset(c)?;
        t = t.with_coset(p, a, e);
    }
    Ok(t)
}

/// `T:t_p1:t_p2,...` rungs, comma-separated.
fn parse_ladder(s: &str, ctx: &SConfig) -> CliResult<Vec<TVector>> {
    s.split(',')
        .map(|rung| {
            let mut it = rung.split(':');
            let t = cfg(parse_rational(it.next().unwrap_or("")))?;
            let tp: Vec<i64> = it.map(|x| x.trim().parse().map_err(|_| CliError::Config(format!("bad rung {rung:?}")))).collect::<CliResult<_>>()?;
            if tp.len() != ctx.primes().len() {
                return Err(CliError::Config(format!("rung {rung:?} needs {} finite exponents", ctx.primes().len())));
            }
            Ok(TVector::new(t, tp))
        })
        .collect()
}

fn primes_label(ctx: &SConfig) -> String {
    ctx.primes().iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------- zeta

#[derive(Args, Debug, Clone)]
pub struct ZetaArgs {
    #[arg(long)]
    pub d: u32,
    #[command(flatten)]
    pub primes: PrimeOpts,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

pub fn zeta(a: &ZetaArgs) -> CliResult<Outcome> {
    let ctx = a.primes.ctx()?;
    let z = cfg(zeta_s(a.d, &ctx, a.tol))?;
    let euler = zeta_s_euler(a.d, &ctx);
    let mut t = Table::new(&["d", "primes", "value", "error_bound", "terms", "euler", "delta"]);
    t.push(vec![
        a.d.to_string(),
        primes_label(&ctx),
        num(z.value),
        num(z.error_bound),
        z.terms.to_string(),
        euler.map_or(String::new(), num),
        euler.map_or(String::new(), |e| num(z.value - e)),
    ]);
    Ok(Outcome::ok(t))
}

// ---------------------------------------------------------------- group-order

#[derive(Args, Debug, Clone)]
pub struct GroupOrderArgs {
    #[arg(long)]
    pub d: u32,
    #[arg(long)]
    pub q: u64,
    /// Also enumerate SL_d(ℤ/q) by brute force (small cases only).
    #[arg(long)]
    pub brute: bool,
}

pub fn group_order(a: &GroupOrderArgs) -> CliResult<Outcome> {
    if a.d == 0 || a.q == 0 {
        return Err(CliError::Config("need d >= 1 and q >= 1".into()));
    }
    let order = sl_group_order(a.d, a.q);
    let brute = if a.brute {
        let cells = (a.q as f64).powi((a.d * a.d) as i32);
        if cells > 2e7 {
            return Err(CliError::Config(format!("brute force over {cells:.0} matrices is too large")));
        }
        let n = enumerate_slq(a.d as usize, a.q).len();
        if order != n.into() {
            return Err(CliError::Limit(format!("closed form {order} disagrees with enumeration {n}")));
        }
        n.to_string()
    } else {
        String::new()
    };
    let mut t = Table::new(&["d", "q", "order", "enumerated"]);
    t.push(vec![a.d.to_string(), a.q.to_string(), order.to_string(), brute]);
    Ok(Outcome::ok(t))
}

// ---------------------------------------------------------------- identity-check

#[derive(Args, Debug, Clone)]
pub struct IdentityArgs {
    #[arg(long)]
    pub d: u32,
    #[arg(long)]
    pub q: u64,
    #[command(flatten)]
    pub primes: PrimeOpts,
    /// Truncation tolerance of the two series.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Largest residual accepted before exiting with status 3.
    #[arg(long, default_value_t = 1e-6)]
    pub max_residual: f64,
}

pub fn identity_check(a: &IdentityArgs) -> CliResult<Outcome> {
    let ctx = a.primes.ctx()?;
    let r = cfg(normalization_identity_residual(a.d, a.q, &ctx, a.tol))?;
    let exact = normalization_identity_exact(a.d, a.q);
    let mut t = Table::new(&["d", "q", "primes", "residual", "bound", "closed_form"]);
    t.push(vec![a.d.to_string(), a.q.to_string(), primes_label(&ctx), num(r.residual), num(r.bound), format_rational(&exact)]);
    let failure = (r.residual > a.max_residual)
        .then(|| CliError::Limit(format!("residual {:e} exceeds {:e}", r.residual, a.max_residual)));
    Ok(Outcome { table: t, seed: None, failure })
}

// ---------------------------------------------------------------- covolume

#[derive(Args, Debug, Clone)]
pub struct CovolumeArgs {
    #[arg(long)]
    pub d: u32,
    #[command(flatten)]
    pub primes: PrimeOpts,
    #[arg(long, default_value = "SL", value_parser = parse_variant)]
    pub variant: CovolumeVariant,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

fn parse_variant(s: &str) -> Result<CovolumeVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn covolume(a: &CovolumeArgs) -> CliResult<Outcome> {
    let ctx = a.primes.ctx()?;
    let v = cfg(oppenheim_core::sarith::covolume_product(a.d, &ctx, a.variant, a.tol))?;
    let mut t = Table::new(&["d", "primes", "variant", "value", "error_bound"]);
    t.push(vec![a.d.to_string(), primes_label(&ctx), format!("{:?}", a.variant), num(v.value), num(v.error_bound)]);
    Ok(Outcome::ok(t))
}

// ---------------------------------------------------------------- count

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Placement {
    /// The box constrains k.
    Point,
    /// The box constrains k + ξ.
    Shifted,
}

#[derive(Args, Debug, Clone)]
pub struct CountArgs {
    /// Form description: a JSON file path or inline JSON.
    #[arg(long)]
    pub form: String,
    /// Real target interval `lo..hi`.
    #[arg(long, allow_hyphen_values = true)]
    pub target: String,
    /// Finite target coset `p:a:c` (repeatable).
    #[arg(long = "coset", allow_hyphen_values = true)]
    pub cosets: Vec<String>,
    /// Real box radius T_∞ (strict Euclidean ball).
    #[arg(long = "t", allow_hyphen_values = true)]
    pub t_inf: String,
    /// Finite exponents t_p: closed balls |v|_p ≤ p^{t_p}.
    #[arg(long, allow_hyphen_values = true)]
    pub tp: Option<String>,
    #[command(flatten)]
    pub cong: CongOpts,
    /// Shift ξ added before evaluating the form.
    #[arg(long, allow_hyphen_values = true)]
    pub shift: Option<String>,
    #[arg(long, value_enum, default_value = "point")]
    pub placement: Placement,
}

pub fn count_cmd(a: &CountArgs, budget: u64) -> CliResult<Outcome> {
    let form = read_form(&a.form)?;
    let ctx = form.context().clone();
    let cc = a.cong.context(form.dim(), &ctx)?;
    let tp = exponents(a.tp.as_deref(), &ctx)?;
    let t = TVector::new(cfg(parse_rational(&a.t_inf))?, tp);
    let shift = a.shift.as_deref().map(parse_vector).transpose().map_err(CliError::from)?;
    let target = target_set(&a.target, &a.cosets)?;
    let vol = target.volume();
    let placement = match a.placement {
        Placement::Point => BoxPlacement::Point,
        Placement::Shifted => BoxPlacement::Shifted,
    };
    let n = cfg(count(&CountSpec { form: &form, shift, congruence: cc.as_ref(), target, t: t.clone(), placement, budget }))?;
    let mut header = vec!["T_inf".to_string()];
    header.extend(ctx.primes().iter().map(|p| format!("t_{p}")));
    header.extend(["N".into(), "vol_I".into()]);
    let mut table = Table { header, ..Table::default() };
    let mut row = vec![format_rational(&t.t_inf)];
    row.extend(t.t_p.iter().map(|x| x.to_string()));
    row.extend([n.to_string(), num(vol)]);
    table.push(row);
    Ok(Outcome::ok(table))
}

// ---------------------------------------------------------------- sweep / volume families

#[derive(Args, Debug, Clone)]
pub struct FamilyOpts {
    /// Real interval length constant c_∞.
    #[arg(long, default_value_t = 1.0)]
    pub c_inf: f64,
    /// Real shrinking rate κ_∞, admissible in [0, d − 2).
    #[arg(long, default_value_t = 0.0)]
    pub kappa_inf: f64,
    /// Real interval center a_∞.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub a_inf: f64,
    /// Finite target `p:a:c:kappa` (repeatable, one per prime of S).
    #[arg(long = "finite", allow_hyphen_values = true)]
    pub finite: Vec<String>,
    /// Increasing scales `T:t_p1:...`, comma-separated.
    #[arg(long)]
    pub ladder: String,
}

impl FamilyOpts {
    fn family(&self) -> CliResult<ShrinkingFamily> {
        let mut fam = ShrinkingFamily { kappa_inf: self.kappa_inf, ..ShrinkingFamily::constant(self.c_inf, self.a_inf) };
        for f in &self.finite {
            let parts: Vec<&str> = f.split(':').collect();
            if parts.len() != 4 {
                return Err(CliError::Config(format!("finite target {f:?} must be p:a:c:kappa")));
            }
            let (p, a, c) = parse_coset(&parts[..3].join(":"))?;
            let kappa = parts[3].parse().map_err(|_| CliError::Config(format!("bad kappa in {f:?}")))?;
            fam = fam.with_finite(p, a, c, kappa);
        }
        Ok(fam)
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SweepKind {
    Congruence,
    Inhomogeneous,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[arg(long)]
    pub form: String,
    #[arg(long, value_enum)]
    pub mode: SweepKind,
    #[command(flatten)]
    pub cong: CongOpts,
    /// Shift ξ for the inhomogeneous mode.
    #[arg(long, allow_hyphen_values = true)]
    pub shift: Option<String>,
    #[command(flatten)]
    pub family: FamilyOpts,
}

pub fn sweep_cmd(a: &SweepArgs, budget: u64) -> CliResult<Outcome> {
    let form = read_form(&a.form)?;
    let ctx = form.context().clone();
    let family = a.family.family()?;
    cfg(family.validate(form.dim(), &ctx))?;
    let ladder = parse_ladder(&a.family.ladder, &ctx)?;
    let cc;
    let mode = match a.mode {
        SweepKind::Congruence => {
            cc = a.cong.require(form.dim(), &ctx)?;
            SweepMode::Congruence(&cc)
        }
        SweepKind::Inhomogeneous => {
            let xi = a.shift.as_deref().ok_or_else(|| CliError::Config("inhomogeneous sweeps need --shift".into()))?;
            SweepMode::Inhomogeneous(cfg(parse_vector(xi))?)
        }
    };
    let rep = cfg(sweep(&form, &mode, &family, &ladder, budget))?;
    let mut header = vec!["T_inf".to_string()];
    header.extend(ctx.primes().iter().map(|p| format!("t_{p}")));
    header.extend(["N", "vol_I", "prediction", "ratio", "wall_ms"].map(String::from));
    let mut table = Table { header, ..Table::default() };
    for r in &rep.rows {
        let mut row = vec![num(r.t_inf)];
        row.extend(r.t_p.iter().map(|x| x.to_string()));
        row.extend([r.n.to_string(), num(r.vol_interval), num(r.prediction), num(r.ratio), format!("{:.0}", r.wall_ms)]);
        table.push(row);
    }
    table.report = json!({
        "c_q": rep.c_q, "c_q_error": rep.c_q_error, "delta_hat": rep.delta_hat, "partial": rep.partial,
    });
    let failure = rep.partial.then(|| CliError::Limit(format!("candidate budget stopped the ladder after {} rungs", rep.rows.len())));
    Ok(Outcome { table, seed: None, failure })
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VolumeKind {
    /// One p-adic quadric volume, exact.
    Padic,
    /// Volume ratios along a ladder and the extrapolated leading constant.
    Constant,
}

#[derive(Args, Debug, Clone)]
pub struct VolumeArgs {
    #[arg(long)]
    pub form: String,
    #[arg(long, value_enum, default_value = "padic")]
    pub kind: VolumeKind,
    #[arg(long)]
    pub p: Option<u64>,
    /// Ball p^{−t}ℤ_p^d.
    #[arg(long = "t", default_value_t = 0, allow_hyphen_values = true)]
    pub t: i64,
    /// Target coset a + p^c ℤ_p.
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    pub a: String,
    #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
    pub c: i64,
    /// Minimum counting exponent (the certified one is used if larger).
    #[arg(long)]
    pub m: Option<u32>,
    #[arg(long, default_value_t = 1.0)]
    pub c_inf: f64,
    #[arg(long, default_value_t = 0.0)]
    pub kappa_inf: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub a_inf: f64,
    #[arg(long = "finite", allow_hyphen_values = true)]
    pub finite: Vec<String>,
    #[arg(long)]
    pub ladder: Option<String>,
}

pub fn volume_cmd(a: &VolumeArgs) -> CliResult<Outcome> {
    let form = read_form(&a.form)?;
    match a.kind {
        VolumeKind::Padic => {
            let p = a.p.ok_or_else(|| CliError::Config("padic volumes need --p".into()))?;
            if !form.context().contains(p) {
                return Err(CliError::Config(format!("the form has no Gram matrix at p = {p}")));
            }
            let req = PadicVolumeRequest { p, gram: form.gram_at(p).clone(), t: a.t, a: cfg(parse_rational(&a.a))?, c: a.c, m: a.m };
            let v = cfg(padic_quadric_volume(&req))?;
            let mut t = Table::new(&["p", "t", "a", "c", "value", "value_f64", "modulus_exponent", "certified"]);
            t.push(vec![
                p.to_string(),
                a.t.to_string(),
                a.a.clone(),
                a.c.to_string(),
                format_rational(&v.value),
                num(rat_to_f64(&v.value)),
                v.modulus_exponent.to_string(),
                v.certified.to_string(),
            ]);
            Ok(Outcome::ok(t))
        }
        VolumeKind::Constant => {
            let opts = FamilyOpts {
                c_inf: a.c_inf,
                kappa_inf: a.kappa_inf,
                a_inf: a.a_inf,
                finite: a.finite.clone(),
                ladder: a.ladder.clone().ok_or_else(|| CliError::Config("leading constants need --ladder".into()))?,
            };
            let family = opts.family()?;
            let ctx = form.context().clone();
            let ladder = parse_ladder(&opts.ladder, &ctx)?;
            let asym = cfg(leading_constant(&form, &family, &ladder))?;
            let mut header = vec!["T_inf".to_string()];
            header.extend(ctx.primes().iter().map(|p| format!("t_{p}")));
            header.extend(["volume", "vol_I", "ratio"].map(String::from));
            let mut t = Table { header, ..Table::default() };
            for r in &asym.table {
                let mut row = vec![num(r.t_inf)];
                row.extend(r.t_p.iter().map(|x| x.to_string()));
                row.extend([num(r.volume), num(r.vol_interval), num(r.ratio)]);
                t.push(row);
            }
            t.report = json!({ "c_q": asym.c_q, "error": asym.error, "c_inf": asym.c_inf, "c_p": asym.c_p });
            Ok(Outcome::ok(t))
        }
    }
}

// ---------------------------------------------------------------- moments

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SpaceChoice {
    /// Affine lattices g(ℤ_S^d) + ξ.
    Affine,
    /// Unimodular lattices, origin excluded.
    Base,
    /// Congruence space: needs --q and --w.
    Congruence,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SamplerChoice {
    Auto,
    Exact,
    Mcmc,
}

#[derive(Args, Debug, Clone)]
pub struct SpaceOpts {
    #[arg(long, value_enum)]
    pub space: SpaceChoice,
    #[arg(long)]
    pub d: usize,
    #[command(flatten)]
    pub primes: PrimeOpts,
    #[command(flatten)]
    pub cong: CongOpts,
    /// Real-place sampler; exact is only available for d = 2.
    #[arg(long, value_enum, default_value = "auto")]
    pub sampler: SamplerChoice,
    #[arg(long, default_value_t = McmcParams::default().burn_in)]
    pub burn_in: u32,
    #[arg(long, default_value_t = McmcParams::default().thin)]
    pub thin: u32,
    #[arg(long, default_value_t = McmcParams::default().step)]
    pub step: f64,
}

impl SpaceOpts {
    fn spec(&self) -> CliResult<SpaceSpec> {
        let ctx = self.primes.ctx()?;
        let space = match self.space {
            SpaceChoice::Affine => SpaceSpec::affine(self.d, &ctx),
            SpaceChoice::Base => SpaceSpec::base(self.d, &ctx),
            SpaceChoice::Congruence => SpaceSpec::congruence(&self.cong.require(self.d, &ctx)?),
        };
        let real = match self.sampler {
            SamplerChoice::Auto => RealSampler::Auto,
            SamplerChoice::Exact => RealSampler::Exact,
            SamplerChoice::Mcmc => RealSampler::Mcmc,
        };
        let space = space.with_real_sampler(real).with_mcmc(McmcParams { burn_in: self.burn_in, thin: self.thin, step: self.step });
        cfg(space.validate())?;
        Ok(space)
    }
}

#[derive(Args, Debug, Clone)]
pub struct MomentMcArgs {
    #[command(flatten)]
    pub space: SpaceOpts,
    #[command(flatten)]
    pub f: FunctionOpts,
    /// Moment order: 1 or 2.
    #[arg(long, default_value_t = 1)]
    pub order: u32,
    #[arg(long, default_value_t = 100_000)]
    pub n: u64,
    #[arg(long)]
    pub seed: u64,
}

pub fn moment_mc(a: &MomentMcArgs, budget: u64) -> CliResult<Outcome> {
    if !(1..=2).contains(&a.order) {
        return Err(CliError::Config("--order must be 1 or 2".into()));
    }
    let space = a.space.spec()?;
    let f = a.f.build(space.d, &space.ctx)?;
    let vol = cfg(f.volume(&space.ctx, space.d))?;
    let m = cfg(estimate_moment(&space, &f, a.order, a.n, a.seed, budget))?;
    // Affine and congruence spaces: vol, vol² + vol. Base space: vol, and the
    // second moment has no closed form here.
    let reference = match (a.order, a.space.space) {
        (1, _) => num(vol),
        (2, SpaceChoice::Base) => String::new(),
        _ => num(vol * vol + vol),
    };
    let mut t = Table::new(&["order", "estimate", "stderr", "n", "seed", "sampler", "volume", "reference"]);
    t.push(vec![
        a.order.to_string(),
        num(m.mean),
        num(m.stderr),
        m.n_samples.to_string(),
        m.seed.to_string(),
        serde_json::to_value(m.sampler_exactness).unwrap().as_str().unwrap().to_string(),
        num(vol),
        reference,
    ]);
    Ok(Outcome { table: t, seed: Some(a.seed), failure: None })
}

#[derive(Args, Debug, Clone)]
pub struct MomentRhsArgs {
    #[arg(long)]
    pub d: usize,
    #[command(flatten)]
    pub primes: PrimeOpts,
    #[command(flatten)]
    pub cong: CongOpts,
    /// Product-box indicator, e.g. `box:-1..1,-1..1,-1..1`.
    #[command(flatten)]
    pub f: FunctionOpts,
    /// Evaluate the inhomogeneous series at this point instead of the second moment.
    #[arg(long, allow_hyphen_values = true)]
    pub y: Option<String>,
    #[arg(long, default_value_t = 40)]
    pub t_max: u64,
    /// p-adic depth K_p of the enumerated ratios.
    #[arg(long, default_value_t = 12)]
    pub depth: u32,
    /// Bound on |a|/t at the real place.
    #[arg(long, default_value = "8")]
    pub ratio: String,
}

pub fn moment_rhs(a: &MomentRhsArgs) -> CliResult<Outcome> {
    let ctx = a.primes.ctx()?;
    let cc = a.cong.require(a.d, &ctx)?;
    let f = a.f.build(a.d, &ctx)?;
    let trunc = Truncation::new(&ctx, a.t_max).with_depth(a.depth).with_ratio_bound(cfg(parse_rational(&a.ratio))?);
    let s: SeriesValue = match &a.y {
        None => cfg(second_moment_rhs(&f, &cc, &trunc))?,
        Some(y) => cfg(inhom_series(&f, &cfg(parse_vector(y))?, &cc, &trunc))?,
    };
    let mut t = Table::new(&["value", "exact", "tail_bound", "terms_used", "t_max", "depth", "ratio_bound", "volume"]);
    t.push(vec![
        num(s.value),
        s.exact.as_ref().map_or(String::new(), format_rational),
        num(s.tail_bound),
        s.terms_used.to_string(),
        s.t_max.to_string(),
        s.depth.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" "),
        num(s.ratio_bound),
        num(cfg(f.volume(&ctx, a.d))?),
    ]);
    Ok(Outcome::ok(t))
}

#[derive(Args, Debug, Clone)]
pub struct VarianceArgs {
    #[command(flatten)]
    pub space: SpaceOpts,
    #[command(flatten)]
    pub f: FunctionOpts,
    /// Deviation thresholds M, comma-separated.
    #[arg(long, default_value = "20,40")]
    pub m: String,
    #[arg(long, default_value_t = 100_000)]
    pub n: u64,
    #[arg(long)]
    pub seed: u64,
}

pub fn variance(a: &VarianceArgs, budget: u64) -> CliResult<Outcome> {
    let space = a.space.spec()?;
    let f = a.f.build(space.d, &space.ctx)?;
    let ms: Vec<f64> = a
        .m
        .split(',')
        .map(|x| x.trim().parse::<f64>().ok().filter(|m| *m > 0.0).ok_or_else(|| CliError::Config(format!("bad threshold {x:?}"))))
        .collect::<CliResult<_>>()?;
    let mut t = Table::new(&[
        "volume", "m", "empirical", "bound", "binomial_stderr", "constant_hat", "within_3se", "n", "seed", "sampler",
    ]);
    for m in ms {
        let r = cfg(variance_check(&space, &f, m, a.n, a.seed, budget))?;
        t.push(vec![
            num(r.volume),
            num(r.m),
            num(r.empirical),
            num(r.bound),
            num(r.binomial_stderr),
            num(r.constant_hat),
            r.within(3.0).to_string(),
            r.n_samples.to_string(),
            r.seed.to_string(),
            serde_json::to_value(r.sampler_exactness).unwrap().as_str().unwrap().to_string(),
        ]);
    }
    Ok(Outcome { table: t, seed: Some(a.seed), failure: None })
}

// ---------------------------------------------------------------- orbit / rescale

#[derive(Args, Debug, Clone)]
pub struct OrbitArgs {
    #[arg(long)]
    pub d: usize,
    #[command(flatten)]
    pub primes: PrimeOpts,
    #[command(flatten)]
    pub cong: CongOpts,
    /// Compute the invariant of this vector k ∈ ℤ_S^d + w/q.
    #[arg(long, allow_hyphen_values = true)]
    pub k: Option<String>,
    /// Find a representative with this invariant instead.
    #[arg(long = "t")]
    pub t: Option<u64>,
    #[arg(long, default_value_t = 8)]
    pub radius: i64,
}

pub fn orbit(a: &OrbitArgs) -> CliResult<Outcome> {
    let ctx = a.primes.ctx()?;
    let cc = a.cong.require(a.d, &ctx)?;
    let (t, k) = match (&a.k, a.t) {
        (Some(k), None) => {
            let k = cfg(parse_vector(k))?;
            (cfg(orbit_invariant(&cc, &k))?, k)
        }
        (None, Some(t)) => (t, cfg(representative_for_t(&cc, t, a.radius))?),
        _ => return Err(CliError::Config("give exactly one of --k and --t".into())),
    };
    let mut table = Table::new(&["q", "t", "k"]);
    table.push(vec![cc.q.to_string(), t.to_string(), k.iter().map(format_rational).collect::<Vec<_>>().join(" ")]);
    Ok(Outcome::ok(table))
}

#[derive(Args, Debug, Clone)]
pub struct RescaleArgs {
    #[arg(long)]
    pub form: String,
    #[command(flatten)]
    pub cong: CongOpts,
    #[arg(long, allow_hyphen_values = true)]
    pub target: String,
    #[arg(long = "coset", allow_hyphen_values = true)]
    pub cosets: Vec<String>,
    #[arg(long = "t", allow_hyphen_values = true)]
    pub t_inf: String,
    #[arg(long, allow_hyphen_values = true)]
    pub tp: Option<String>,
    /// Keep the target unscaled on the inhomogeneous side (a negative control).
    #[arg(long)]
    pub no_rescale: bool,
}

pub fn rescale_check(a: &RescaleArgs, budget: u64) -> CliResult<Outcome> {
    let form = read_form(&a.form)?;
    let ctx = form.context().clone();
    let cc = a.cong.require(form.dim(), &ctx)?;
    let t = TVector::new(cfg(parse_rational(&a.t_inf))?, exponents(a.tp.as_deref(), &ctx)?);
    let target = target_set(&a.target, &a.cosets)?;
    let r = cfg(rescale_identity_check(&cc, &form, &target, &t, !a.no_rescale, budget))?;
    let mut table = Table::new(&["congruence", "inhomogeneous", "holds"]);
    table.push(vec![r.congruence.to_string(), r.inhomogeneous.to_string(), r.holds.to_string()]);
    let failure = (!r.holds).then(|| CliError::Limit(format!("counts differ: {} vs {}", r.congruence, r.inhomogeneous)));
    Ok(Outcome { table, seed: None, failure })
}

/// Wall time of a closure in milliseconds.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() * 1e3)
}
