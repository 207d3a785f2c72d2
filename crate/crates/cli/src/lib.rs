//! Command-line driver: single bounds, sweeps, figure data, oracle
//! cross-checks and probe optimization.

pub mod error;
pub mod figure;
pub mod grid;
pub mod table;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use qillum::fock::{default_cutoffs, oracle_converged, MAX_DIM};
use qillum::probe::{geometric_amplitudes, optimize_single, optimize_two, poisson_amplitudes};
use qillum::{chernoff_bound, FockCutoffs, OptimizerOptions, TargetParams};

pub use error::{CliError, CliResult};
pub use figure::{FigureData, FigureId, FigureSpec};
pub use grid::{Format, Grid, ProbeKind, ProbeList, SweepConfig, SweepPoint};
pub use table::{Cell, Table};

/// Largest thermal occupation and signal strength accepted by oracle-check
/// without --allow-large.
pub const ORACLE_NBAR_LIMIT: f64 = 2.0;
pub const ORACLE_NS_LIMIT: f64 = 1.0;
/// oracle-check fails when the two bounds differ by more than this.
pub const ORACLE_CHECK_TOL: f64 = 1e-6;
/// optimal-probe fails above these.
pub const PROBE_DEVIATION_TOL: f64 = 1e-6;
pub const PROBE_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(
    name = "qillum",
    version,
    about = "Chernoff bounds for quantum illumination of an absorbing target"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chernoff bound at one parameter point.
    Chernoff(ChernoffArgs),
    /// Bounds over a parameter grid.
    Sweep(SweepArgs),
    /// Data behind one of the figures.
    Figure(FigureArgs),
    /// Compare the Gaussian bound with the Fock-space computation.
    OracleCheck(OracleArgs),
    /// Optimize probe photon statistics in the perturbative regime.
    OptimalProbe(OptimalProbeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PointArgs {
    #[arg(long, value_enum, default_value = "coherent")]
    pub probe: ProbeKind,
    /// Absorption of the target.
    #[arg(long, allow_negative_numbers = true)]
    pub r: f64,
    /// Reflectivity of the primary beam splitter.
    #[arg(long, allow_negative_numbers = true)]
    pub kappa: f64,
    /// Mean thermal photon number of the background.
    #[arg(long, allow_negative_numbers = true)]
    pub nbar: f64,
    /// Mean signal photon number.
    #[arg(long, allow_negative_numbers = true)]
    pub ns: f64,
}

impl PointArgs {
    fn params(&self) -> CliResult<TargetParams> {
        let p = TargetParams::new(self.r, self.kappa, self.nbar)?;
        self.probe.probe(self.ns).validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ChernoffArgs {
    #[command(flatten)]
    pub point: PointArgs,
    /// Number of copies for the M-copy error bound.
    #[arg(long, default_value_t = 1)]
    pub m: u32,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    /// JSON sweep configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated probe list.
    #[arg(long, value_delimiter = ',')]
    pub probe: Option<Vec<ProbeKind>>,
    /// Grid as `a,b,c` or `start:stop:count`.
    #[arg(long, allow_hyphen_values = true)]
    pub r: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub kappa: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub nbar: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub ns: Option<String>,
    #[arg(long)]
    pub m: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct FigureArgs {
    #[arg(value_enum)]
    pub id: FigureId,
    #[arg(long, allow_negative_numbers = true)]
    pub ns: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub kappa: Option<f64>,
    /// Background grid, `a,b` or `start:stop:count`.
    #[arg(long, allow_hyphen_values = true)]
    pub nbar: Option<String>,
    /// Absorption grid, or the single absorption value of fig3b and fig3c.
    #[arg(long, allow_hyphen_values = true)]
    pub r: Option<String>,
    /// Copy number of the fig3a advantage.
    #[arg(long)]
    pub m: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub point: PointArgs,
    /// Starting Fock cutoff for every mode; defaults to the tail rule.
    #[arg(long)]
    pub cutoff: Option<usize>,
    /// Convergence threshold of the cutoff doubling.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Permit nbar > 2 or ns > 1.
    #[arg(long)]
    pub allow_large: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProbeMode {
    Single,
    Two,
}

#[derive(Debug, Clone, Args)]
pub struct OptimalProbeArgs {
    #[arg(long, value_enum, default_value = "single")]
    pub mode: ProbeMode,
    #[arg(long, allow_negative_numbers = true)]
    pub ns: f64,
    /// Background of the two-mode objective.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub nbar: f64,
    /// Number of photon-number levels.
    #[arg(long)]
    pub cutoff: Option<usize>,
    #[arg(long, default_value_t = OptimizerOptions::default().seed)]
    pub seed: u64,
    #[arg(long, default_value_t = OptimizerOptions::default().restarts)]
    pub restarts: usize,
}

/// Whether a subcommand's own check passed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    CheckFailed,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::CheckFailed => 1,
        }
    }
}

fn pool(workers: usize) -> CliResult<rayon::ThreadPool> {
    if workers == 0 {
        return Err(CliError::usage("--workers", "must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::usage("--workers", e.to_string()))
}

fn json_line(v: &serde_json::Value, out: &mut dyn Write) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("serializable");
    bytes.push(b'\n');
    table::emit(&bytes, None, out)
}

pub const SWEEP_COLUMNS: [&str; 10] = [
    "probe", "r", "kappa", "nbar", "Ns", "s_opt", "q", "half_q", "M", "half_q_M",
];

fn sweep_row(pt: &SweepPoint, m: u32) -> CliResult<Vec<Cell>> {
    let res = chernoff_bound(&pt.params, &pt.probe.probe(pt.ns))?;
    Ok(vec![
        pt.probe.name().into(),
        pt.params.r.into(),
        pt.params.kappa.into(),
        pt.params.nbar.into(),
        pt.ns.into(),
        res.s_opt.into(),
        res.q.into(),
        res.half_q.into(),
        m.into(),
        res.half_q_m(m).into(),
    ])
}

/// Evaluates every grid point, in parallel, and returns the rows in grid order.
pub fn sweep_table(cfg: &SweepConfig) -> CliResult<Table> {
    let points = cfg.points()?;
    let rows: CliResult<Vec<Vec<Cell>>> =
        pool(cfg.workers)?.install(|| points.par_iter().map(|p| sweep_row(p, cfg.m)).collect());
    let mut t = Table::new(SWEEP_COLUMNS);
    rows?.into_iter().for_each(|r| t.push(r));
    Ok(t)
}

fn chernoff_cmd(a: &ChernoffArgs, out: &mut dyn Write) -> CliResult<Status> {
    let p = a.point.params()?;
    if a.m == 0 {
        return Err(CliError::usage("--m", "at least one copy is required"));
    }
    let res = chernoff_bound(&p, &a.point.probe.probe(a.point.ns))?;
    match a.format {
        Format::Json => json_line(
            &json!({
                "probe": a.point.probe.name(),
                "r": p.r,
                "kappa": p.kappa,
                "nbar": p.nbar,
                "Ns": a.point.ns,
                "s_opt": res.s_opt,
                "q": res.q,
                "half_q": res.half_q,
                "M": a.m,
                "half_q_M": res.half_q_m(a.m),
                "at_boundary": res.at_boundary,
            }),
            out,
        )?,
        Format::Csv => {
            let pt = SweepPoint {
                probe: a.point.probe,
                params: p,
                ns: a.point.ns,
            };
            let mut t = Table::new(SWEEP_COLUMNS);
            t.push(sweep_row(&pt, a.m)?);
            table::emit(&t.render(Format::Csv), None, out)?;
        }
    }
    Ok(Status::Ok)
}

fn required(flag: &str, v: Option<&String>) -> CliResult<Grid> {
    let s = v.ok_or_else(|| CliError::usage(flag, "required unless given in --config"))?;
    Grid::parse(flag, s)
}

/// Merges a config file (if any) with command-line overrides.
pub fn sweep_config(a: &SweepArgs) -> CliResult<SweepConfig> {
    let grid = |flag: &str, v: &Option<String>| v.as_ref().map(|s| Grid::parse(flag, s)).transpose();
    let mut cfg = match &a.config {
        Some(path) => SweepConfig::from_json(path)?,
        None => SweepConfig {
            probe: ProbeList::Many(a.probe.clone().unwrap_or_else(|| vec![ProbeKind::Coherent])),
            r: required("--r", a.r.as_ref())?,
            kappa: required("--kappa", a.kappa.as_ref())?,
            nbar: required("--nbar", a.nbar.as_ref())?,
            ns: required("--ns", a.ns.as_ref())?,
            m: 1,
            out: None,
            format: Format::Csv,
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        },
    };
    if let Some(p) = &a.probe {
        cfg.probe = ProbeList::Many(p.clone());
    }
    if let Some(g) = grid("--r", &a.r)? {
        cfg.r = g;
    }
    if let Some(g) = grid("--kappa", &a.kappa)? {
        cfg.kappa = g;
    }
    if let Some(g) = grid("--nbar", &a.nbar)? {
        cfg.nbar = g;
    }
    if let Some(g) = grid("--ns", &a.ns)? {
        cfg.ns = g;
    }
    if let Some(m) = a.m {
        cfg.m = m;
    }
    if a.out.is_some() {
        cfg.out = a.out.clone();
    }
    if let Some(f) = a.format {
        cfg.format = f;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn sweep_cmd(a: &SweepArgs, out: &mut dyn Write) -> CliResult<Status> {
    let cfg = sweep_config(a)?;
    let t = sweep_table(&cfg)?;
    table::emit(&t.render(cfg.format), cfg.out.as_deref(), out)?;
    Ok(Status::Ok)
}

/// Figure parameters: the defaults, overridden by any flags given.
pub fn figure_spec(a: &FigureArgs) -> CliResult<FigureSpec> {
    let mut spec = FigureSpec::defaults(a.id);
    if let Some(ns) = a.ns {
        spec.ns = ns;
    }
    if let Some(k) = a.kappa {
        spec.kappa = k;
    }
    if let Some(s) = &a.nbar {
        spec.nbar = Grid::parse("--nbar", s)?.values();
    }
    if let Some(s) = &a.r {
        spec.r = Grid::parse("--r", s)?.values();
    }
    if let Some(m) = a.m {
        spec.m = m;
    }
    Ok(spec)
}

/// Sidecar path for figure metadata: `<out>.meta.json`.
pub fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn figure_cmd(a: &FigureArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<Status> {
    let spec = figure_spec(a)?;
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let data = pool(workers)?.install(|| figure::build(&spec))?;
    table::emit(&data.table.render(a.format), a.out.as_deref(), out)?;
    let mut meta = serde_json::to_vec_pretty(&data.meta).expect("serializable");
    meta.push(b'\n');
    match &a.out {
        Some(p) => table::emit(&meta, Some(&meta_path(p)), out)?,
        None => table::emit(&meta, None, err)?,
    }
    Ok(Status::Ok)
}

fn oracle_cmd(a: &OracleArgs, out: &mut dyn Write) -> CliResult<Status> {
    let p = a.point.params()?;
    let ns = a.point.ns;
    if !a.allow_large {
        if p.nbar > ORACLE_NBAR_LIMIT {
            return Err(CliError::usage(
                "--nbar",
                format!(
                    "{} exceeds the oracle limit {ORACLE_NBAR_LIMIT}; pass --allow-large to override",
                    p.nbar
                ),
            ));
        }
        if ns > ORACLE_NS_LIMIT {
            return Err(CliError::usage(
                "--ns",
                format!("{ns} exceeds the oracle limit {ORACLE_NS_LIMIT}; pass --allow-large to override"),
            ));
        }
    }
    if !(a.tol > 0.0 && a.tol.is_finite()) {
        return Err(CliError::usage("--tol", "must be positive"));
    }
    let probe = a.point.probe.probe(ns);
    let start = match a.cutoff {
        Some(0) => return Err(CliError::usage("--cutoff", "must be at least 1")),
        Some(c) => FockCutoffs { thermal: c, signal: c },
        None => default_cutoffs(&p, &probe),
    };
    let gauss = chernoff_bound(&p, &probe)?;
    let oracle = oracle_converged(&p, &probe, start, a.tol)?;
    let diff = (gauss.q - oracle.result.q).abs();
    json_line(
        &json!({
            "probe": probe.name(),
            "r": p.r,
            "kappa": p.kappa,
            "nbar": p.nbar,
            "Ns": ns,
            "q_gaussian": gauss.q,
            "q_oracle": oracle.result.q,
            "diff": diff,
            "cutoff_thermal": oracle.cutoffs.thermal,
            "cutoff_signal": oracle.cutoffs.signal,
            "q_doubled_cutoff": oracle.q_doubled,
            "dimension_budget": MAX_DIM,
        }),
        out,
    )?;
    Ok(if diff > ORACLE_CHECK_TOL {
        Status::CheckFailed
    } else {
        Status::Ok
    })
}

fn optimal_probe_cmd(a: &OptimalProbeArgs, out: &mut dyn Write) -> CliResult<Status> {
    if !(a.ns > 0.0 && a.ns.is_finite()) {
        return Err(CliError::usage("--ns", format!("must be positive (got {})", a.ns)));
    }
    if a.mode == ProbeMode::Two && !(a.nbar > 0.0 && a.nbar.is_finite()) {
        return Err(CliError::usage("--nbar", format!("must be positive (got {})", a.nbar)));
    }
    if a.restarts == 0 {
        return Err(CliError::usage("--restarts", "must be at least 1"));
    }
    let default_cut = qillum::fock::cutoff_for(a.ns) * 2;
    let cutoff = a.cutoff.unwrap_or(match a.mode {
        ProbeMode::Single => default_cut.max(40),
        ProbeMode::Two => default_cut.max(60),
    });
    if cutoff < 3 || (cutoff - 1) as f64 <= a.ns {
        return Err(CliError::usage(
            "--cutoff",
            "too small for the requested mean photon number",
        ));
    }
    let opts = OptimizerOptions {
        seed: a.seed,
        restarts: a.restarts,
        ..OptimizerOptions::default()
    };
    let (opt, family, name) = match a.mode {
        ProbeMode::Single => (
            optimize_single(a.ns, cutoff, &opts)?,
            poisson_amplitudes(a.ns, cutoff),
            "single",
        ),
        ProbeMode::Two => (
            optimize_two(a.ns, a.nbar, cutoff, &opts)?,
            geometric_amplitudes(a.ns, cutoff),
            "two",
        ),
    };
    let dev = opt
        .coeffs
        .iter()
        .zip(&family)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    json_line(
        &json!({
            "mode": name,
            "Ns": a.ns,
            "nbar": if a.mode == ProbeMode::Two { json!(a.nbar) } else { serde_json::Value::Null },
            "cutoff": cutoff,
            "max_deviation": dev,
            "residual": opt.residual,
            "mu1": opt.multipliers.0,
            "mu2": opt.multipliers.1,
            "objective": opt.objective,
            "converged_restarts": opt.converged_restarts,
        }),
        out,
    )?;
    Ok(if dev < PROBE_DEVIATION_TOL && opt.residual < PROBE_RESIDUAL_TOL {
        Status::Ok
    } else {
        Status::CheckFailed
    })
}

/// Runs one subcommand; tables and reports go to `out`, figure metadata
/// without an output path goes to `err`.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<Status> {
    match &cli.command {
        Command::Chernoff(a) => chernoff_cmd(a, out),
        Command::Sweep(a) => sweep_cmd(a, out),
        Command::Figure(a) => figure_cmd(a, out, err),
        Command::OracleCheck(a) => oracle_cmd(a, out),
        Command::OptimalProbe(a) => optimal_probe_cmd(a, out),
    }
}
