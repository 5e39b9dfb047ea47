//! `bimix` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use bimix::io::{self, CellSpec, RunManifest, Timing};
use bimix::selection::SelectionTable;
use bimix::synth::Scenario;
use bimix::{
    fit, grid_search, Criterion, DUpdateRule, DataMatrix, Dimensions, Error, FitConfig, FitResult, GridSpec,
    InitMethod, LMode, ModelVariant, Result,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bimix", version, about = "Model-based biclustering with block-structured Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a single (variant, K, L) cell.
    Fit(FitCmd),
    /// Fit a grid of cells and select by AIC or BIC.
    Select(SelectCmd),
    /// Sample a dataset from a preset scenario.
    Simulate(SimulateCmd),
    /// Re-emit outputs from a saved fit_state.json.
    Report(ReportCmd),
}

#[derive(Args)]
struct CommonArgs {
    /// Input CSV: header row of indicator ids, first column of unit ids.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_cycles: usize,
    /// Fit the raw values instead of column z-scores.
    #[arg(long)]
    no_standardize: bool,
    #[arg(long, value_enum, default_value_t = InitArg::Distance)]
    init: InitArg,
    #[arg(long, value_enum, default_value_t = DUpdateArg::ConditionalMax)]
    d_update: DUpdateArg,
    #[arg(long, default_value_t = bimix::VARIANCE_FLOOR)]
    variance_floor: f64,
    /// Maximum number of worker threads.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "bimix-out")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Distance,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum DUpdateArg {
    ConditionalMax,
    Literal,
}

#[derive(Clone, Copy, ValueEnum)]
enum LModeArg {
    Shared,
    PerComponent,
}

#[derive(Args)]
struct FitCmd {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value = "UU")]
    variant: String,
    /// Number of row clusters.
    #[arg(long)]
    k: usize,
    /// Column clusters: one value shared by all components, or a comma list of K values.
    #[arg(long, default_value = "1")]
    l: String,
}

#[derive(Args)]
struct SelectCmd {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated subset of CC,CU,UC,UU.
    #[arg(long, default_value = "CC,CU,UC,UU")]
    variants: String,
    #[arg(long, default_value_t = 1)]
    k_min: usize,
    #[arg(long, default_value_t = 10)]
    k_max: usize,
    #[arg(long, default_value_t = 1)]
    l_min: usize,
    #[arg(long, default_value_t = 6)]
    l_max: usize,
    #[arg(long, value_enum, default_value_t = LModeArg::Shared)]
    l_mode: LModeArg,
    #[arg(long, default_value = "bic")]
    criterion: String,
    /// Seed each K+1 cell with a split of the best K solution.
    #[arg(long)]
    warm_start: bool,
    #[arg(long, default_value_t = 500)]
    max_cells: usize,
}

#[derive(Args)]
struct SimulateCmd {
    #[arg(long, default_value = "A")]
    scenario: String,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV for the sampled data.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of generating row labels.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct ReportCmd {
    /// fit_state.json written by `fit` or `select`.
    #[arg(long)]
    from: PathBuf,
    /// Override the input path recorded in the manifest.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parse { .. } | Error::InvalidInput(_) | Error::ConstantColumn(_) => 3,
        Error::InvalidParameter(_) => 4,
        Error::FitFailure { .. } | Error::SelectionFailure(_) | Error::EmptyComponent { .. } | Error::Numerical(_) => 5,
        Error::Io { .. } | Error::Format { .. } => 6,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(cmd) => with_threads(cmd.common.threads, || run_fit(&cmd)),
        Command::Select(cmd) => with_threads(cmd.common.threads, || run_select(&cmd)),
        Command::Simulate(cmd) => run_simulate(&cmd),
        Command::Report(cmd) => run_report(&cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(0) => Err(Error::InvalidParameter("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

fn fit_config(c: &CommonArgs) -> FitConfig {
    FitConfig {
        max_cycles: c.max_cycles,
        tol: c.tol,
        n_restarts: c.restarts,
        seed: c.seed,
        variance_floor: c.variance_floor,
        init_method: match c.init {
            InitArg::Distance => InitMethod::DistanceBasedPartition,
            InitArg::Random => InitMethod::RandomPartition,
        },
        d_update: match c.d_update {
            DUpdateArg::ConditionalMax => DUpdateRule::ConditionalMax,
            DUpdateArg::Literal => DUpdateRule::Literal,
        },
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("cannot parse `{p}` in {what}")))
        })
        .collect()
}

struct Prepared {
    data: DataMatrix,
    manifest: RunManifest,
}

fn prepare(c: &CommonArgs, command: &str, config: &FitConfig) -> Result<Prepared> {
    let raw = io::load_csv(&c.input)?;
    let (data, standardization) = if c.no_standardize {
        (raw, None)
    } else {
        let (d, st) = io::standardize(&raw)?;
        (d, Some(st))
    };
    let manifest = RunManifest {
        tool_version: io::TOOL_VERSION.into(),
        command: command.into(),
        input_path: c.input.display().to_string(),
        input_sha256: io::sha256_file(&c.input)?,
        standardization,
        fit_config: config.clone(),
        grid: None,
        cell: None,
        threads: c.threads,
        selected: None,
        timing: None,
    };
    Ok(Prepared { data, manifest })
}

fn finish(
    prepared: Prepared,
    fit: &FitResult,
    table: &SelectionTable,
    out_dir: &Path,
    started: (SystemTime, Instant),
) -> Result<()> {
    let Prepared { data, mut manifest } = prepared;
    let summary = format!(
        "{} K={} L={:?} loglik={:.6}",
        fit.params.variant,
        fit.params.k(),
        fit.params.dims.l(),
        fit.loglik
    );
    manifest.selected = Some(summary.clone());
    manifest.timing = Some(Timing {
        started_unix_secs: started.0.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        elapsed_secs: started.1.elapsed().as_secs_f64(),
    });
    io::emit_results(&data, fit, table, &manifest, out_dir)?;
    println!("selected: {summary}");
    println!(
        "bic={:.6} aic={:.6} n_par={} converged={}",
        bimix::bic(fit.loglik, fit.n_par, fit.n_obs),
        bimix::aic(fit.loglik, fit.n_par),
        fit.n_par,
        fit.converged
    );
    for w in &fit.warnings {
        println!("warning: {w}");
    }
    println!("outputs written to {}", out_dir.display());
    Ok(())
}

fn run_fit(cmd: &FitCmd) -> Result<()> {
    let started = (SystemTime::now(), Instant::now());
    let config = fit_config(&cmd.common);
    let variant: ModelVariant = cmd.variant.parse()?;
    let l: Vec<usize> = parse_list(&cmd.l, "--l")?;
    let dims = match l.as_slice() {
        [single] => Dimensions::shared(cmd.k, *single)?,
        many if many.len() == cmd.k => Dimensions::new(many.to_vec())?,
        many => {
            return Err(Error::InvalidInput(format!(
                "--l lists {} values for K = {}",
                many.len(),
                cmd.k
            )))
        }
    };
    let mut prepared = prepare(&cmd.common, "fit", &config)?;
    prepared.manifest.cell = Some(CellSpec {
        variant,
        l: dims.l().to_vec(),
    });
    let result = fit(&prepared.data, variant, &dims, &config)?;
    let table = SelectionTable {
        criterion: Criterion::Bic,
        n_obs: prepared.data.n_rows(),
        records: vec![single_record(&result)],
    };
    finish(prepared, &result, &table, &cmd.common.out_dir, started)
}

fn single_record(fit: &FitResult) -> bimix::SelectionRecord {
    bimix::SelectionRecord {
        variant: fit.params.variant,
        k: fit.params.k(),
        l: fit.params.dims.l().to_vec(),
        loglik: Some(fit.loglik),
        n_par: fit.n_par,
        aic: Some(bimix::aic(fit.loglik, fit.n_par)),
        bic: Some(bimix::bic(fit.loglik, fit.n_par, fit.n_obs)),
        converged: fit.converged,
        effective_l: fit.effective_l.clone(),
        warnings: fit.warnings.clone(),
        error: None,
    }
}

fn run_select(cmd: &SelectCmd) -> Result<()> {
    let started = (SystemTime::now(), Instant::now());
    let config = fit_config(&cmd.common);
    let grid = GridSpec {
        variants: parse_list(&cmd.variants, "--variants")?,
        k_min: cmd.k_min,
        k_max: cmd.k_max,
        l_min: cmd.l_min,
        l_max: cmd.l_max,
        l_mode: match cmd.l_mode {
            LModeArg::Shared => LMode::SharedL,
            LModeArg::PerComponent => LMode::PerComponentL,
        },
        criterion: cmd.criterion.parse()?,
        warm_start: cmd.warm_start,
        max_cells: cmd.max_cells,
        ..GridSpec::default()
    };
    let mut prepared = prepare(&cmd.common, "select", &config)?;
    prepared.manifest.grid = Some(grid.clone());
    let (best, table) = grid_search(&prepared.data, &grid, &config)?;
    let failed = table.records.iter().filter(|r| r.failed()).count();
    if failed > 0 {
        eprintln!("note: {failed} of {} cells failed; see result.json", table.records.len());
    }
    finish(prepared, &best, &table, &cmd.common.out_dir, started)
}

fn run_simulate(cmd: &SimulateCmd) -> Result<()> {
    let scenario = Scenario::preset(&cmd.scenario, cmd.n, cmd.seed)?;
    let sample = scenario.sample()?;
    io::save_csv(&sample.data, &cmd.out)?;
    if let Some(path) = &cmd.truth {
        let mut text = String::from("id,row_cluster\n");
        for (id, k) in sample.data.row_ids().iter().zip(&sample.row_labels) {
            text.push_str(&format!("{id},{}\n", k + 1));
        }
        io::write_atomic(path, text.as_bytes())?;
    }
    println!(
        "scenario {}: {} units x {} indicators written to {}",
        scenario.name,
        sample.data.n_rows(),
        sample.data.n_cols(),
        cmd.out.display()
    );
    Ok(())
}

fn run_report(cmd: &ReportCmd) -> Result<()> {
    let state = io::load_fit_state(&cmd.from)?;
    let input = cmd
        .input
        .clone()
        .unwrap_or_else(|| PathBuf::from(&state.manifest.input_path));
    let digest = io::sha256_file(&input)?;
    if digest != state.manifest.input_sha256 {
        return Err(Error::Format {
            path: input,
            message: "input file does not match the hash recorded in the manifest".into(),
        });
    }
    let raw = io::load_csv(&input)?;
    let data = match &state.manifest.standardization {
        Some(st) => io::apply_standardization(&raw, st)?,
        None => raw,
    };
    io::emit_results(&data, &state.fit, &state.table, &state.manifest, &cmd.out_dir)?;
    println!("outputs written to {}", cmd.out_dir.display());
    Ok(())
}
