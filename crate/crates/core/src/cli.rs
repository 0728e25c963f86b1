//! Command-line front end: `invert`, `bench`, `dag` and `table`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    self, export_dot, formula_table, standard_variants, sweep_loop_orders, sweep_minima,
    write_formula_csv, DotOptions, Variant,
};
use crate::error::Error;
use crate::scheduler::{build_dag, execute_with, write_trace_csv, ExecOptions};
use crate::taskgen::{gen_inversion, LoopOrder, Placement, VariantConfig};
use crate::tile_matrix::{generate_spd, DenseMatrix, TileMatrix};
use crate::inverse_residual;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidSize(_) | Error::ShapeMismatch { .. } | Error::Contract(_) | Error::Parse(_) => {
                CliError::Validation(msg)
            }
            Error::NotPositiveDefinite { .. } | Error::SingularTile { .. } | Error::Task { .. } => {
                CliError::Numerical(msg)
            }
            Error::Io(_) | Error::Csv(_) => CliError::Io(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "spdinv", version, about = "Tile inversion of SPD matrices on a hazard-driven task scheduler")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Invert a generated (or CSV) SPD matrix and check the residual.
    Invert(InvertArgs),
    /// Time variants over sizes and worker counts; prints CSV.
    Bench(BenchArgs),
    /// Emit the DAG of a step or of the whole inversion as DOT.
    Dag(DagArgs),
    /// Compare measured critical paths with their closed forms; prints CSV.
    Table(TableArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PlacementArg {
    In,
    Out,
}

impl From<PlacementArg> for Placement {
    fn from(p: PlacementArg) -> Self {
        match p {
            PlacementArg::In => Placement::InPlace,
            PlacementArg::Out => Placement::OutOfPlace,
        }
    }
}

#[derive(Debug, Args)]
pub struct VariantArgs {
    #[arg(long, value_enum, default_value = "in")]
    pub placement: PlacementArg,
    /// Directions of the innermost loops of steps 1-3, e.g. UDU.
    #[arg(long, default_value = "UDU")]
    pub loops: String,
    /// Insert barriers between the steps.
    #[arg(long)]
    pub no_pipeline: bool,
}

impl VariantArgs {
    fn config(&self, workers: usize) -> Result<VariantConfig, CliError> {
        let cfg = VariantConfig {
            placement: self.placement.into(),
            loops: self.loops.parse()?,
            pipelined: !self.no_pipeline,
            workers,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SizeArgs {
    /// Matrix order.
    #[arg(long)]
    pub n: Option<usize>,
    /// Tile order.
    #[arg(long)]
    pub b: Option<usize>,
    /// Tiles per dimension; with --b this sets n = b * t.
    #[arg(long)]
    pub t: Option<usize>,
}

pub const DEFAULT_TILE_ORDER: usize = 200;
pub const DEFAULT_ORDER: usize = 1000;

impl SizeArgs {
    /// Resolves `(n, b)`, requiring `b` to divide `n`.
    pub fn resolve(&self) -> Result<(usize, usize), CliError> {
        let (n, b) = match (self.n, self.b, self.t) {
            (Some(_), Some(_), Some(_)) => {
                return Err(CliError::Validation("give at most two of --n, --b, --t".into()))
            }
            (_, Some(b), Some(t)) => (b * t, b),
            (Some(n), None, Some(t)) => {
                if t == 0 || n % t != 0 {
                    return Err(CliError::Validation(format!("n={n} is not divisible by t={t}")));
                }
                (n, n / t)
            }
            (None, None, Some(t)) => (DEFAULT_TILE_ORDER * t, DEFAULT_TILE_ORDER),
            (n, b, None) => (n.unwrap_or(DEFAULT_ORDER), b.unwrap_or(DEFAULT_TILE_ORDER)),
        };
        check_size(n, b)?;
        Ok((n, b))
    }
}

fn check_size(n: usize, b: usize) -> Result<(), CliError> {
    if n == 0 || b == 0 {
        return Err(CliError::Validation("n and b must be positive".into()));
    }
    if !n.is_multiple_of(b) {
        return Err(CliError::Validation(format!(
            "n={n} is not divisible by b={b}"
        )));
    }
    Ok(())
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[command(flatten)]
    pub size: SizeArgs,
    #[command(flatten)]
    pub variant: VariantArgs,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Read the SPD matrix from CSV instead of generating it.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Write the inverse as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write a per-task execution trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Matrix orders, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1000usize])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_TILE_ORDER)]
    pub b: usize,
    /// Worker counts, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize])]
    pub workers: Vec<usize>,
    /// Placements to time.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [PlacementArg::In, PlacementArg::Out])]
    pub placements: Vec<PlacementArg>,
    #[arg(long, default_value = "UDU")]
    pub loops: String,
    /// Also time the barriered variant of each placement.
    #[arg(long)]
    pub with_barriers: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Timed repetitions; the median is reported.
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StepArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(Debug, Args)]
pub struct DagArgs {
    /// Tiles per dimension.
    #[arg(long, default_value_t = 4)]
    pub t: usize,
    #[arg(long, value_enum, default_value = "all")]
    pub step: StepArg,
    #[command(flatten)]
    pub variant: VariantArgs,
    /// Keep copy tasks in the DOT output.
    #[arg(long)]
    pub copies: bool,
    /// DOT output path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the task stream in its text form.
    #[arg(long)]
    pub stream: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[arg(long, default_value_t = 2)]
    pub t_min: usize,
    #[arg(long, default_value_t = 8)]
    pub t_max: usize,
    /// Restrict the table to one loop order instead of the standard set.
    #[arg(long)]
    pub loops: Option<String>,
    /// Report per-step minima over all eight loop orders instead.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn create(path: &PathBuf) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Invert(args) => cmd_invert(&args, out),
        Command::Bench(args) => cmd_bench(&args, out),
        Command::Dag(args) => cmd_dag(&args, out),
        Command::Table(args) => cmd_table(&args, out),
    }
}

/// Result of one timed inversion.
#[derive(Clone, Debug)]
pub struct InvertReport {
    pub n: usize,
    pub b: usize,
    pub residual: f64,
    pub tolerance: f64,
    pub elapsed: Duration,
}

impl InvertReport {
    pub fn gflops(&self) -> f64 {
        gflops(self.n, self.elapsed)
    }
}

/// Total inversion cost counted as `n^3` flops.
pub fn gflops(n: usize, elapsed: Duration) -> f64 {
    (n as f64).powi(3) / (elapsed.as_secs_f64() * 1e9)
}

pub fn residual_tolerance(n: usize) -> f64 {
    1e-9 * n as f64
}

pub fn cmd_invert(args: &InvertArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let workers = args.workers.unwrap_or_else(default_workers);
    let cfg = args.variant.config(workers)?;
    let (a, b) = match &args.input {
        Some(path) => {
            let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let a = DenseMatrix::read_csv(file)?;
            let b = args.size.b.unwrap_or(DEFAULT_TILE_ORDER);
            check_size(a.rows(), b)?;
            (a, b)
        }
        None => {
            let (n, b) = args.size.resolve()?;
            (generate_spd(n, args.seed)?, b)
        }
    };
    let n = a.rows();
    let tiled = TileMatrix::from_dense(&a, b)?;
    let stream = gen_inversion(tiled.tiles_per_dim(), &cfg)?;

    let start = Instant::now();
    let exec = execute_with(
        &stream,
        tiled,
        ExecOptions {
            workers,
            trace: args.trace.is_some(),
        },
    )?;
    let elapsed = start.elapsed();

    let mut inv = exec.matrix.to_dense();
    inv.symmetrize_from_lower();
    let report = InvertReport {
        n,
        b,
        residual: inverse_residual(&a, &inv)?,
        tolerance: residual_tolerance(n),
        elapsed,
    };

    writeln!(out, "n={n} b={b} t={} variant={cfg} workers={workers}", n / b)?;
    writeln!(out, "residual={:.3e} tolerance={:.3e}", report.residual, report.tolerance)?;
    writeln!(out, "time_s={:.6}", elapsed.as_secs_f64())?;
    writeln!(out, "gflops={:.3}", report.gflops())?;

    if let Some(path) = &args.out {
        inv.write_csv(create(path)?)?;
    }
    if let (Some(path), Some(trace)) = (&args.trace, &exec.trace) {
        write_trace_csv(trace, create(path)?)?;
    }
    if !(report.residual <= report.tolerance) {
        return Err(CliError::Numerical(format!(
            "residual {:.3e} exceeds tolerance {:.3e}",
            report.residual, report.tolerance
        )));
    }
    Ok(())
}

/// Median of `reps` timed runs after one untimed warm-up run.
pub fn time_inversion(a: &DenseMatrix, b: usize, cfg: &VariantConfig, reps: usize) -> Result<Duration, CliError> {
    let tiled = TileMatrix::from_dense(a, b)?;
    let stream = gen_inversion(tiled.tiles_per_dim(), cfg)?;
    crate::execute(&stream, tiled.clone(), cfg.workers)?;
    let mut times = Vec::with_capacity(reps.max(1));
    for _ in 0..reps.max(1) {
        let input = tiled.clone();
        let start = Instant::now();
        crate::execute(&stream, input, cfg.workers)?;
        times.push(start.elapsed());
    }
    times.sort();
    Ok(times[times.len() / 2])
}

pub fn cmd_bench(args: &BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let loops: LoopOrder = args.loops.parse()?;
    let mut sink: Box<dyn Write + '_> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(&mut *out),
    };
    writeln!(sink, "variant,n,b,workers,loops,pipelined,time_s,gflops")?;
    let modes: &[bool] = if args.with_barriers { &[true, false] } else { &[true] };
    for &n in &args.sizes {
        check_size(n, args.b)?;
        let a = generate_spd(n, args.seed)?;
        for &workers in &args.workers {
            for &placement in &args.placements {
                for &pipelined in modes {
                    let cfg = VariantConfig {
                        placement: placement.into(),
                        loops,
                        pipelined,
                        workers,
                    };
                    cfg.validate()?;
                    let time = time_inversion(&a, args.b, &cfg, args.reps)?;
                    writeln!(
                        sink,
                        "{},{n},{},{workers},{loops},{pipelined},{:.6},{:.3}",
                        cfg.placement,
                        args.b,
                        time.as_secs_f64(),
                        gflops(n, time)
                    )?;
                }
            }
        }
    }
    sink.flush()?;
    Ok(())
}

pub fn cmd_dag(args: &DagArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = args.variant.config(1)?;
    let variant = match args.step {
        StepArg::One => Variant::step(1, cfg.placement, cfg.loops),
        StepArg::Two => Variant::step(2, cfg.placement, cfg.loops),
        StepArg::Three => Variant::step(3, cfg.placement, cfg.loops),
        StepArg::All => Variant::full(cfg.pipelined, cfg.placement, cfg.loops),
    };
    let stream = variant.stream(args.t)?;
    let dag = build_dag(&stream);
    let mut report = analysis::critical_path(&dag);
    report.variant = variant.to_string();

    let dot = export_dot(
        &dag,
        &DotOptions {
            name: variant.to_string(),
            include_copies: args.copies,
            barrier_edges: false,
        },
    );
    match &args.out {
        Some(path) => {
            let mut f = create(path)?;
            f.write_all(dot.as_bytes())?;
            f.flush()?;
            write!(out, "{report}")?;
            let census = analysis::hazard_census(&dag);
            writeln!(out, "kernel WAR:     {}", census.kernel(crate::HazardKind::War))?;
        }
        None => out.write_all(dot.as_bytes())?,
    }
    if let Some(path) = &args.stream {
        let mut f = create(path)?;
        f.write_all(stream.to_text().as_bytes())?;
        f.flush()?;
    }
    Ok(())
}

pub const TABLE_T_LIMIT: usize = 12;

pub fn cmd_table(args: &TableArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if args.t_min < 2 || args.t_max > TABLE_T_LIMIT || args.t_min > args.t_max {
        return Err(CliError::Validation(format!(
            "t range {}..{} must lie within 2..{TABLE_T_LIMIT}",
            args.t_min, args.t_max
        )));
    }
    let range = args.t_min..=args.t_max;
    let mut sink: Box<dyn Write + '_> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(&mut *out),
    };

    if args.sweep {
        writeln!(sink, "t,step,placement,minimum,udu,attaining_orders")?;
        let mut all_attained = true;
        for t in range {
            let rows = sweep_loop_orders(t)?;
            for ((step, inplace), min) in sweep_minima(&rows) {
                let placement = if inplace { Placement::InPlace } else { Placement::OutOfPlace };
                let winners: Vec<String> = rows
                    .iter()
                    .filter(|r| r.step == step && r.placement == placement && r.measured == min)
                    .map(|r| r.loops.to_string())
                    .collect();
                let udu = winners.iter().any(|w| w == "UDU");
                all_attained &= udu;
                writeln!(sink, "{t},{step},{placement},{min},{udu},{}", winners.join(" "))?;
            }
        }
        sink.flush()?;
        if !all_attained {
            return Err(CliError::Numerical("UDU misses a per-step minimum".into()));
        }
        return Ok(());
    }

    let variants = match &args.loops {
        None => standard_variants(),
        Some(s) => {
            let loops: LoopOrder = s.parse()?;
            let mut v = Vec::new();
            for placement in [Placement::InPlace, Placement::OutOfPlace] {
                for step in 1..=3 {
                    v.push(Variant::step(step, placement, loops));
                }
                for pipelined in [true, false] {
                    v.push(Variant::full(pipelined, placement, loops));
                }
            }
            v
        }
    };
    let rows = formula_table(range, &variants)?;
    write_formula_csv(&rows, &mut sink)?;
    sink.flush()?;
    let bad: Vec<String> = rows
        .iter()
        .filter(|r| r.is_mismatch())
        .map(|r| format!("{} t={}", r.variant, r.tiles_per_dim))
        .collect();
    if !bad.is_empty() {
        return Err(CliError::Numerical(format!(
            "{} formula mismatch(es): {}",
            bad.len(),
            bad.join(", ")
        )));
    }
    Ok(())
}
