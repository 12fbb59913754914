use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use flowmc::additive::efe_full;
use flowmc::electrical::{all_resistances, effective_resistance};
use flowmc::graph::build_graph;
use flowmc::io::{self, format_f64};
use flowmc::maxflow::max_flow;
use flowmc::panel::{did_estimate, PanelData, PanelEstimator, DEFAULT_BOUND_MULTIPLIER};
use flowmc::rank1::{rank1_full, BoundParams};
use flowmc::sim::{self, SimConfig};
use flowmc::spectral::SpectralCore;
use flowmc::{DataMatrix, Error, Grid, ObservationMask};

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (",
    env!("FLOWMC_BUILD_INFO"),
    ")"
);

/// Entry-wise estimation for partially observed matrices.
#[derive(Parser)]
#[command(name = "flowmc", version = VERSION)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "FLOWMC_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Electrical flow estimates for an additive matrix.
    EstimateAdditive(EstimateArgs),
    /// Path-ratio estimates for a rank-1 matrix.
    EstimateRank1(Rank1Args),
    /// Effective resistances of the observation graph.
    Resistance(ResistanceArgs),
    /// Edge-disjoint paths and minimum cut for one entry.
    Paths(PathsArgs),
    /// Heterogeneous treatment effects on panel data.
    Panel(PanelArgs),
    /// Monte-Carlo experiment from a config file.
    Simulate(SimulateArgs),
    /// Writes an observation (and treatment) pattern.
    GeneratePattern(PatternArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Data CSV; empty or nan cells are unobserved.
    #[arg(long)]
    data: PathBuf,
    /// Mask CSV (0/1 grid or `row,col` pairs). Defaults to the finite cells of the data.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Noise standard deviation, for error bounds.
    #[arg(long)]
    sigma: Option<f64>,
    /// Failure probability for high-probability bounds.
    #[arg(long, requires = "sigma")]
    delta: Option<f64>,
    /// Output JSON (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Rank1Args {
    #[command(flatten)]
    common: EstimateArgs,
    /// Bound on max |M*|; defaults to the largest observed magnitude.
    #[arg(long)]
    m_inf: Option<f64>,
    /// Constant in the error bound.
    #[arg(long, default_value_t = 1.0)]
    bound_constant: f64,
}

#[derive(Args)]
struct ResistanceArgs {
    #[arg(long)]
    mask: PathBuf,
    /// 1-based `i,j`.
    #[arg(long, conflicts_with = "all", required_unless_present = "all")]
    pair: Option<String>,
    /// Every (row, column) pair.
    #[arg(long)]
    all: bool,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PathsArgs {
    #[arg(long)]
    mask: PathBuf,
    /// 1-based `i,j`.
    #[arg(long)]
    pair: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PanelArgs {
    /// Outcome CSV; empty or nan cells are unobserved.
    #[arg(long)]
    outcomes: PathBuf,
    /// Treatment indicator, 0/1 grid or `row,col` pairs.
    #[arg(long)]
    treatment: PathBuf,
    /// Observation mask. Defaults to the finite outcome cells.
    #[arg(long)]
    observed: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, requires = "sigma")]
    delta: Option<f64>,
    /// Multiplier in the high-probability bound.
    #[arg(long, default_value_t = DEFAULT_BOUND_MULTIPLIER)]
    bound_multiplier: f64,
    /// Also report difference-in-differences where a length-3 path exists.
    #[arg(long)]
    did: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "sim_out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PatternArgs {
    /// staircase, staggered_exposure, uniform_bernoulli, extreme_sparsity or dense_submatrix.
    #[arg(long)]
    pattern: Option<String>,
    /// Read settings from a config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rows and columns of a square pattern.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    base_density: Option<f64>,
    #[arg(long)]
    thinning: Option<f64>,
    #[arg(long)]
    block_rows: Option<usize>,
    #[arg(long)]
    block_cols: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output mask CSV (0/1 grid).
    #[arg(long)]
    out: PathBuf,
    /// Output treatment CSV, for staircase and staggered exposure.
    #[arg(long)]
    treatment_out: Option<PathBuf>,
}

/// Exit status 2: nothing could be estimated.
struct NothingIdentifiable;

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let (i, j) = s.split_once(',').context("pair must look like i,j")?;
    let i: usize = i.trim().parse().context("row index")?;
    let j: usize = j.trim().parse().context("column index")?;
    if i == 0 || j == 0 {
        bail!("pair indices are 1-based");
    }
    Ok((i - 1, j - 1))
}

fn check_pair(mask: &ObservationMask, (i, j): (usize, usize)) -> Result<()> {
    if i >= mask.n_rows() || j >= mask.n_cols() {
        bail!(Error::IndexOutOfRange {
            row: i + 1,
            col: j + 1,
            n_rows: mask.n_rows(),
            n_cols: mask.n_cols(),
        });
    }
    Ok(())
}

fn read_mask(path: &Path, shape: Option<(usize, usize)>) -> Result<ObservationMask> {
    let file =
        io::read_mask(path, shape).with_context(|| format!("reading mask {}", path.display()))?;
    if file.duplicates > 0 {
        eprintln!(
            "warning: {} duplicate pair(s) in {} were counted once",
            file.duplicates,
            path.display()
        );
    }
    Ok(file.mask)
}

/// Data plus the mask to use; a given mask must only cover finite cells.
fn load_observations(data: &Path, mask: Option<&Path>) -> Result<(DataMatrix, ObservationMask)> {
    let (y, finite) =
        io::read_data(data).with_context(|| format!("reading data {}", data.display()))?;
    let Some(path) = mask else {
        return Ok((y, finite));
    };
    let mask = read_mask(path, Some((y.nrows(), y.ncols())))?;
    if let Some((i, j)) = mask.iter().find(|&(i, j)| !finite.contains(i, j)) {
        bail!(
            "mask marks cell ({}, {}) observed but the data has no value there",
            i + 1,
            j + 1
        );
    }
    Ok((y, mask))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(out, &text)
}

fn estimate_additive(args: &EstimateArgs) -> Result<Option<NothingIdentifiable>> {
    let (y, mask) = load_observations(&args.data, args.mask.as_deref())?;
    let report = efe_full(&mask, &y, args.sigma, args.delta)?;
    emit_json(args.out.as_deref(), &report)?;
    Ok((report.identifiable_count() == 0).then_some(NothingIdentifiable))
}

fn estimate_rank1(args: &Rank1Args) -> Result<Option<NothingIdentifiable>> {
    let c = &args.common;
    let (y, mask) = load_observations(&c.data, c.mask.as_deref())?;
    let bounds = match (c.sigma, c.delta) {
        (Some(sigma), Some(delta)) => {
            let m_inf = args.m_inf.unwrap_or_else(|| {
                mask.iter()
                    .map(|(i, j)| y[(i, j)].abs())
                    .fold(0.0, f64::max)
            });
            Some(BoundParams {
                sigma,
                delta,
                m_inf,
                c: args.bound_constant,
            })
        }
        _ => None,
    };
    let report = rank1_full(&mask, &y, bounds)?;
    emit_json(c.out.as_deref(), &report)?;
    let any = report.identifiable.as_slice().iter().any(|&b| b);
    Ok((!any).then_some(NothingIdentifiable))
}

fn resistance(args: &ResistanceArgs) -> Result<()> {
    let mask = read_mask(&args.mask, None)?;
    let core = SpectralCore::new(&build_graph(&mask))?;
    let mut text = String::from("row,col,effective_resistance\n");
    let mut line = |i: usize, j: usize, r: flowmc::electrical::Resistance| {
        text.push_str(&format!("{},{},{}\n", i + 1, j + 1, r));
    };
    if let Some(pair) = &args.pair {
        let (i, j) = parse_pair(pair)?;
        check_pair(&mask, (i, j))?;
        line(i, j, effective_resistance(&core, i, j));
    } else {
        for (i, j, r) in all_resistances(&core).iter() {
            line(i, j, *r);
        }
    }
    emit(args.out.as_deref(), &text)
}

fn paths(args: &PathsArgs) -> Result<()> {
    let mask = read_mask(&args.mask, None)?;
    let (i, j) = parse_pair(&args.pair)?;
    check_pair(&mask, (i, j))?;
    let cert = max_flow(&build_graph(&mask), i, j);
    #[derive(Serialize)]
    struct Out {
        k: usize,
        max_len: usize,
        paths: Vec<Vec<String>>,
        cut_edges: Vec<[usize; 2]>,
    }
    let out = Out {
        k: cert.paths.k,
        max_len: cert.paths.max_len,
        paths: cert
            .paths
            .paths
            .iter()
            .map(|p| p.iter().map(|v| v.label()).collect())
            .collect(),
        cut_edges: cert
            .cut
            .cut_edges
            .iter()
            .map(|&(r, c)| [r + 1, c + 1])
            .collect(),
    };
    emit_json(args.out.as_deref(), &out)
}

fn panel(args: &PanelArgs) -> Result<Option<NothingIdentifiable>> {
    let (y, observed) = load_observations(&args.outcomes, args.observed.as_deref())?;
    let treatment = read_mask(&args.treatment, Some((y.nrows(), y.ncols())))?;
    let panel = PanelData::new(y, treatment, observed)?;
    let est = PanelEstimator::for_panel(&panel)?;
    let report = est.report(
        panel.outcomes(),
        args.sigma,
        args.delta,
        args.bound_multiplier,
    )?;
    let did = if args.did {
        let (n, t) = (panel.n_units(), panel.n_periods());
        let mut g: Grid<Option<f64>> = Grid::filled(n, t, None);
        for i in 0..n {
            for k in 0..t {
                if panel.observed().contains(i, k) {
                    match did_estimate(&panel, i, k) {
                        Ok(d) => g[(i, k)] = Some(d.value),
                        Err(Error::NoLengthThreePath { .. }) => {}
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }
        Some(g)
    } else {
        None
    };
    #[derive(Serialize)]
    struct Out<'a> {
        #[serde(flatten)]
        report: &'a flowmc::panel::CausalReport,
        #[serde(skip_serializing_if = "Option::is_none")]
        did: Option<Grid<Option<f64>>>,
    }
    emit_json(
        args.out.as_deref(),
        &Out {
            report: &report,
            did,
        },
    )?;
    Ok((report.identifiable_count() == 0).then_some(NothingIdentifiable))
}

fn simulate(args: &SimulateArgs) -> Result<Option<NothingIdentifiable>> {
    let cfg = SimConfig::from_file(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let result = sim::run_experiment(&cfg)?;
    sim::export(&result, &args.out_dir)?;
    eprintln!(
        "{} entries, grand mean ratio {}, spearman {}, {:.2} s",
        result.evaluated_entries,
        format_f64(result.grand_mean_ratio),
        format_f64(result.spearman),
        result.runtime_seconds
    );
    Ok((result.evaluated_entries == 0).then_some(NothingIdentifiable))
}

fn generate_pattern(args: &PatternArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => SimConfig::from_file(p)?,
        None => SimConfig::default(),
    };
    if let Some(p) = &args.pattern {
        cfg.pattern = p.parse()?;
    }
    if let Some(n) = args.n {
        cfg.rows = n;
        cfg.cols = n;
    }
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field { cfg.$field = v; })*
        };
    }
    set!(
        rows,
        cols,
        groups,
        p,
        blocks,
        base_density,
        thinning,
        block_rows,
        block_cols,
        seed
    );
    // The model does not affect the pattern; keep validation from rejecting
    // treatment-free patterns.
    cfg.model = flowmc::sim::ModelKind::Additive;
    let pattern = sim::generate_pattern(&cfg)?;
    io::write_mask(&args.out, &pattern.observed)?;
    match (&pattern.treatment, &args.treatment_out) {
        (Some(x), Some(path)) => io::write_mask(path, x)?,
        (Some(_), None) => {
            eprintln!("warning: pattern has a treatment indicator; pass --treatment-out to save it")
        }
        (None, Some(_)) => bail!("pattern {} has no treatment indicator", cfg.pattern),
        (None, None) => {}
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Option<NothingIdentifiable>> {
    if let Some(k) = cli.threads {
        if k == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .context("configuring thread pool")?;
    }
    match &cli.command {
        Command::EstimateAdditive(a) => estimate_additive(a),
        Command::EstimateRank1(a) => estimate_rank1(a),
        Command::Resistance(a) => resistance(a).map(|_| None),
        Command::Paths(a) => paths(a).map(|_| None),
        Command::Panel(a) => panel(a),
        Command::Simulate(a) => simulate(a),
        Command::GeneratePattern(a) => generate_pattern(a).map(|_| None),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(NothingIdentifiable)) => {
            eprintln!("error: no entry is identifiable from the observed pattern");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
