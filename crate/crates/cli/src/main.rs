//! `oppenheim`: batch runner for the experiments in `oppenheim-core`.
//!
//! Every command prints its CSV table to stdout. With `--out DIR` it also
//! writes `DIR/<command>.csv` and a JSON manifest `DIR/<command>.json` that
//! `oppenheim replay` re-executes. Exit status: 0 success, 1 i/o failure,
//! 2 configuration error, 3 budget or tolerance failure.

mod commands;
mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oppenheim_core::slattice::DEFAULT_BUDGET;

use commands::*;
use report::{write_outputs, Manifest};

#[derive(Parser, Debug)]
#[command(name = "oppenheim", version, about = "S-arithmetic counting, volume and moment experiments")]
struct Cli {
    /// Directory for the CSV table and JSON manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for enumeration and sampling (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, env = "OPPENHEIM_THREADS", default_value_t = 0)]
    threads: usize,
    /// Cap on enumerated lattice candidates per count.
    #[arg(long, global = true, default_value_t = DEFAULT_BUDGET)]
    max_candidates: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// ζ_S(d) by direct summation, with the Euler-product cross-check.
    Zeta(ZetaArgs),
    /// #SL_d(ℤ/q) in closed form, optionally by enumeration.
    GroupOrder(GroupOrderArgs),
    /// Residual of the congruence-measure normalization identity.
    IdentityCheck(IdentityArgs),
    /// ∏_{k=2}^d ζ_S(k), the covolume of SL_d(ℤ_S) or UL_d(ℤ_S).
    Covolume(CovolumeArgs),
    /// Exact lattice-point count on a quadric shell.
    Count(CountArgs),
    /// Counts along a ladder of scales against the leading-order prediction.
    Sweep(SweepArgs),
    /// p-adic quadric volume or the extrapolated leading constant.
    Volume(VolumeArgs),
    /// Monte Carlo Siegel-transform moment.
    MomentMc(MomentMcArgs),
    /// Truncated pair series for the second moment (or the inhomogeneous series), with tail bound.
    MomentRhs(MomentRhsArgs),
    /// Empirical exceedance probability against vol(A)/M².
    Variance(VarianceArgs),
    /// Orbit invariant of a vector, or a representative for a given invariant.
    Orbit(OrbitArgs),
    /// Congruence count against the rescaled inhomogeneous count.
    RescaleCheck(RescaleArgs),
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Zeta(_) => "zeta",
            Command::GroupOrder(_) => "group-order",
            Command::IdentityCheck(_) => "identity-check",
            Command::Covolume(_) => "covolume",
            Command::Count(_) => "count",
            Command::Sweep(_) => "sweep",
            Command::Volume(_) => "volume",
            Command::MomentMc(_) => "moment-mc",
            Command::MomentRhs(_) => "moment-rhs",
            Command::Variance(_) => "variance",
            Command::Orbit(_) => "orbit",
            Command::RescaleCheck(_) => "rescale-check",
            Command::Replay { .. } => "replay",
        }
    }
}

fn dispatch(cmd: &Command, budget: u64) -> CliResult<Outcome> {
    match cmd {
        Command::Zeta(a) => zeta(a),
        Command::GroupOrder(a) => group_order(a),
        Command::IdentityCheck(a) => identity_check(a),
        Command::Covolume(a) => covolume(a),
        Command::Count(a) => count_cmd(a, budget),
        Command::Sweep(a) => sweep_cmd(a, budget),
        Command::Volume(a) => volume_cmd(a),
        Command::MomentMc(a) => moment_mc(a, budget),
        Command::MomentRhs(a) => moment_rhs(a),
        Command::Variance(a) => variance(a, budget),
        Command::Orbit(a) => orbit(a),
        Command::RescaleCheck(a) => rescale_check(a, budget),
        Command::Replay { .. } => unreachable!("replay is resolved before dispatch"),
    }
}

/// Loads a manifest and returns its argument list, with `--out` replaced when given.
fn replay_args(path: &Path, out: Option<&Path>) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad manifest: {e}")))?;
    let mut args = Vec::with_capacity(m.args.len() + 2);
    let mut it = m.args.into_iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
        } else if !a.starts_with("--out=") {
            args.push(a);
        }
    }
    if let Some(out) = out {
        args.push("--out".into());
        args.push(out.display().to_string());
    }
    Ok(args)
}

fn execute(cli: Cli, args: Vec<String>) -> CliResult<()> {
    if let Command::Replay { manifest } = &cli.command {
        let args = replay_args(manifest, cli.out.as_deref())?;
        let inner = Cli::try_parse_from(std::iter::once("oppenheim".to_string()).chain(args.iter().cloned()))
            .map_err(|e| CliError::Config(format!("manifest arguments no longer parse: {e}")))?;
        if matches!(inner.command, Command::Replay { .. }) {
            return Err(CliError::Config("a manifest cannot replay another manifest".into()));
        }
        return execute(inner, args);
    }
    let threads = if cli.threads == 0 { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { cli.threads };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let (outcome, wall_ms) = timed(|| pool.install(|| dispatch(&cli.command, cli.max_candidates)));
    let outcome = outcome?;
    let csv = outcome.table.to_csv().map_err(|e| CliError::Io(e.to_string()))?;
    std::io::stdout().write_all(&csv).map_err(|e| CliError::Io(e.to_string()))?;
    if let Some(dir) = &cli.out {
        let name = cli.command.name();
        let manifest = Manifest {
            tool: "oppenheim".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: name.into(),
            args,
            seed: outcome.seed,
            threads,
            max_candidates: cli.max_candidates,
            wall_ms,
            csv: format!("{name}.csv"),
            report: outcome.table.report.clone(),
        };
        write_outputs(dir, &manifest, &csv).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("oppenheim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
