//! Command-line front end: fits, synthetic experiments and file utilities.
//!
//! Every output file is written to a temporary sibling and renamed into
//! place once complete, so a failed run never leaves a partial file.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use tempfile::NamedTempFile;

use crate::cha::{cha_fit, GaugeHarmonics};
use crate::constituents::ConstituentCatalog;
use crate::evaluation::{
    find_interval, interval_slice, rrmse, run_grid, ErrorGrid, GridInputs, GridSpec, Method, GRID_HEADER,
    JASON3_REVISIT, SIX_MINUTES, SWOT_REVISIT,
};
use crate::format::format_sig;
use crate::ha::ha_fit;
use crate::ingest::{load_harmonics, load_water_levels, parse_timestamp, write_solution, write_water_levels};
use crate::relsha::{relsha_fit, InitStrategy, RelshaConfig};
use crate::series::{apply_noise, resample, synthesize, uniform_times, SamplingPlan, WaterLevelSeries};
use crate::synthetic::{bundled_truth, synthetic_series, Scenario};

/// Exit status of a fit that stopped before converging under `--strict`.
pub const EXIT_NOT_CONVERGED: u8 = 3;

/// Environment variable naming the default constituent catalog.
pub const CATALOG_ENV: &str = "RELSHA_CATALOG";

/// Regularization weights swept next to every experiment.
pub const DEFAULT_LAMBDA_SWEEP: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// Slices written next to every experiment grid, with their file suffixes.
const SLICES: [(&str, f64); 3] = [("6min", SIX_MINUTES), ("9.9d", JASON3_REVISIT), ("11d", SWOT_REVISIT)];

/// Spacing of the dense synthetic record that experiment cells resample.
const RECORD_STEP_HOURS: f64 = SIX_MINUTES;

/// Extra record beyond the longest cell, so the random start can move.
const RECORD_MARGIN_HOURS: f64 = 30.0 * 24.0;

#[derive(Debug, Parser)]
#[command(
    name = "relsha",
    version,
    about = "Tidal harmonic analysis for sparse water-level records"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit constituent amplitudes and phases to a water-level file.
    Fit(FitArgs),
    /// Run the interval x length error grid on synthetic truth.
    Experiment(ExperimentArgs),
    /// Write a synthetic water-level file from a solution file.
    Synth(SynthArgs),
    /// Print the relative RMS amplitude error of one solution against another.
    Rrmse(RrmseArgs),
    /// Subsample a water-level file at a coarser interval.
    Resample(ResampleArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CatalogArg {
    /// Constituent catalog (`name, speed_deg_per_hour[, nodal_factor, nodal_angle_deg]`).
    /// Defaults to the bundled 37-constituent table.
    #[arg(long, env = CATALOG_ENV)]
    pub catalog: Option<PathBuf>,
}

impl CatalogArg {
    fn load(&self) -> anyhow::Result<ConstituentCatalog> {
        match &self.catalog {
            Some(path) => Ok(ConstituentCatalog::load(path)?),
            None => Ok(ConstituentCatalog::standard()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    MinNormLsRescaled,
    ReferenceZeroPhase,
}

impl From<InitArg> for InitStrategy {
    fn from(v: InitArg) -> Self {
        match v {
            InitArg::MinNormLsRescaled => InitStrategy::MinNormLsRescaled,
            InitArg::ReferenceZeroPhase => InitStrategy::ReferenceZeroPhase,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// ha, cha or relsha.
    #[arg(long)]
    pub method: Method,
    /// Water-level file (`timestamp, height_m`).
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub catalog: CatalogArg,
    /// Reference amplitudes for relsha (harmonics file; phases ignored).
    #[arg(long, required_if_eq("method", "relsha"))]
    pub reference: Option<PathBuf>,
    /// First reference gauge for cha.
    #[arg(long, required_if_eq("method", "cha"))]
    pub reference_a: Option<PathBuf>,
    /// Second reference gauge for cha.
    #[arg(long, required_if_eq("method", "cha"))]
    pub reference_b: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Divide the data term by the sample count and the penalty by the
    /// constituent count.
    #[arg(long)]
    pub normalize_terms: bool,
    #[arg(long, value_enum, default_value = "min-norm-ls-rescaled")]
    pub init: InitArg,
    #[arg(long, default_value_t = 2000)]
    pub max_iterations: usize,
    /// Relative gradient tolerance, scaled by 1 + |initial objective|.
    #[arg(long, default_value_t = 1e-8)]
    pub gradient_tolerance: f64,
    /// Exit with status 3 if the optimizer stops before converging.
    #[arg(long)]
    pub strict: bool,
    /// Solution file; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// TOML file with any of the options below; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub catalog: CatalogArg,
    /// Truth harmonics; defaults to the bundled synthetic station.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Reference amplitudes for relsha; defaults to the truth perturbed by ±10 %.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub reference_a: Option<PathBuf>,
    #[arg(long)]
    pub reference_b: Option<PathBuf>,
    /// Comma-separated list of ha, cha, relsha.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Sampling intervals in hours, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub intervals: Option<Vec<f64>>,
    /// Record lengths in hours, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gaussian noise added to every cell, meters.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub normalize_terms: bool,
    /// Regularization weights for the sensitivity file.
    #[arg(long, value_delimiter = ',')]
    pub lambda_sweep: Option<Vec<f64>>,
    /// Skip the regularization-weight sensitivity file.
    #[arg(long)]
    pub no_lambda_sweep: bool,
    /// Worker threads; defaults to the available hardware threads.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Exit with status 3 if any cell could not be evaluated.
    #[arg(long)]
    pub strict: bool,
    /// Grid file. Slices and the sweep go next to it.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Harmonics file including `mean_m` and `trend_m_per_hour` lines.
    #[arg(long)]
    pub solution: PathBuf,
    #[command(flatten)]
    pub catalog: CatalogArg,
    /// Sampling interval in hours.
    #[arg(long, default_value_t = SIX_MINUTES)]
    pub interval: f64,
    /// Record length in hours.
    #[arg(long)]
    pub length: f64,
    /// Time of the first sample.
    #[arg(long, default_value = "2021-01-01T00:00:00Z")]
    pub start: String,
    /// Standard deviation of added Gaussian noise, meters.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RrmseArgs {
    #[arg(long)]
    pub estimated: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[command(flatten)]
    pub catalog: CatalogArg,
}

#[derive(Debug, Args)]
pub struct ResampleArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Target interval in hours.
    #[arg(long)]
    pub interval: f64,
    /// Record length in hours, cut at a random start.
    #[arg(long)]
    pub length: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Fit(args) => fit(&args),
        Command::Experiment(args) => experiment(&args),
        Command::Synth(args) => synth(&args),
        Command::Rrmse(args) => print_rrmse(&args),
        Command::Resample(args) => resample_file(&args),
    }
}

/// Writes `contents` through a temporary file in the target directory.
pub fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp =
        NamedTempFile::new_in(dir).with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn emit(output: Option<&Path>, contents: &str) -> anyhow::Result<()> {
    match output {
        Some(path) => write_atomic(path, contents),
        None => {
            std::io::stdout().write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

fn load_gauge(path: &Path, catalog: &ConstituentCatalog) -> anyhow::Result<GaugeHarmonics> {
    let table = load_harmonics(path, catalog)?.value;
    let station = table.metadata.get("station").cloned().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    Ok(GaugeHarmonics::new(station, table.solution))
}

fn fit(args: &FitArgs) -> anyhow::Result<ExitCode> {
    let catalog = args.catalog.load()?;
    let series = load_water_levels(&args.input)?.value;
    let mut meta: Vec<(String, String)> = vec![
        ("method".into(), args.method.to_string()),
        ("samples".into(), series.len().to_string()),
    ];
    let mut converged = true;

    let solution = match args.method {
        Method::Ha => {
            let fit = ha_fit(&series, &catalog)?;
            meta.push(("regime".into(), fit.regime.to_string()));
            meta.push(("rank".into(), fit.rank.to_string()));
            meta.push(("residual_sum_squares".into(), format_sig(fit.residual_sum_squares)));
            fit.solution
        }
        Method::Cha => {
            let (Some(a), Some(b)) = (&args.reference_a, &args.reference_b) else {
                bail!("cha needs --reference-a and --reference-b");
            };
            let (a, b) = (load_gauge(a, &catalog)?, load_gauge(b, &catalog)?);
            let fit = cha_fit(&series, &a, &b, &catalog)?;
            meta.push(("regime".into(), fit.regime.to_string()));
            meta.push(("reference_a".into(), a.station.clone()));
            meta.push(("reference_b".into(), b.station.clone()));
            meta.push(("weight".into(), format_sig(fit.weight)));
            meta.push(("objective".into(), format_sig(fit.objective)));
            meta.push(("identifiable".into(), fit.identifiable.to_string()));
            fit.solution
        }
        Method::Relsha => {
            let Some(reference) = &args.reference else {
                bail!("relsha needs --reference");
            };
            let reference = load_harmonics(reference, &catalog)?.value.solution.amplitudes;
            let config = RelshaConfig {
                lambda: args.lambda,
                max_iterations: args.max_iterations,
                gradient_tolerance: args.gradient_tolerance,
                normalize_terms: args.normalize_terms,
                init: args.init.into(),
            };
            let fit = relsha_fit(&series, &reference, &catalog, &config)?;
            let d = &fit.diagnostics;
            converged = d.converged;
            meta.extend([
                ("regime".into(), d.regime.to_string()),
                ("lambda".into(), format_sig(args.lambda)),
                ("normalize_terms".into(), args.normalize_terms.to_string()),
                ("initial_objective".into(), format_sig(d.initial_objective)),
                ("objective".into(), format_sig(d.objective)),
                ("iterations".into(), d.iterations.to_string()),
                ("evaluations".into(), d.evaluations.to_string()),
                ("gradient_norm".into(), format_sig(d.gradient_norm)),
                ("gradient_threshold".into(), format_sig(d.gradient_threshold)),
                ("converged".into(), d.converged.to_string()),
            ]);
            fit.solution
        }
    };

    emit(args.output.as_deref(), &write_solution(&solution, &catalog, &meta)?)?;
    if !converged {
        log::warn!("optimizer stopped before reaching the gradient tolerance");
        if args.strict {
            return Ok(ExitCode::from(EXIT_NOT_CONVERGED));
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Experiment options as read from a TOML file. Relative paths are taken
/// relative to the file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub catalog: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub reference_a: Option<PathBuf>,
    pub reference_b: Option<PathBuf>,
    pub methods: Option<Vec<String>>,
    pub intervals: Option<Vec<f64>>,
    pub lengths: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub noise: Option<f64>,
    pub lambda: Option<f64>,
    pub normalize_terms: Option<bool>,
    pub lambda_sweep: Option<Vec<f64>>,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut config.catalog,
            &mut config.truth,
            &mut config.reference,
            &mut config.reference_a,
            &mut config.reference_b,
            &mut config.output,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub catalog: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub reference_a: Option<PathBuf>,
    pub reference_b: Option<PathBuf>,
    pub spec: GridSpec,
    pub lambda_sweep: Vec<f64>,
    pub threads: Option<usize>,
    pub output: PathBuf,
}

impl ExperimentPlan {
    /// Layers flags over the config file over defaults.
    pub fn resolve(args: &ExperimentArgs, config: ExperimentConfig) -> anyhow::Result<Self> {
        let defaults = GridSpec::default();
        let methods = match (&args.methods, config.methods) {
            (Some(m), _) => m.clone(),
            (None, Some(names)) => names
                .iter()
                .map(|s| s.parse::<Method>())
                .collect::<Result<Vec<_>, _>>()?,
            (None, None) => defaults.methods,
        };
        let relsha = RelshaConfig {
            lambda: args.lambda.or(config.lambda).unwrap_or(defaults.relsha.lambda),
            normalize_terms: args.normalize_terms || config.normalize_terms.unwrap_or(false),
            ..defaults.relsha
        };
        let lambda_sweep = if args.no_lambda_sweep {
            Vec::new()
        } else {
            args.lambda_sweep
                .clone()
                .or(config.lambda_sweep)
                .unwrap_or_else(|| DEFAULT_LAMBDA_SWEEP.to_vec())
        };
        let spec = GridSpec {
            intervals: args
                .intervals
                .clone()
                .or(config.intervals)
                .unwrap_or(defaults.intervals),
            lengths: args.lengths.clone().or(config.lengths).unwrap_or(defaults.lengths),
            methods,
            seed: args.seed.or(config.seed).unwrap_or(defaults.seed),
            noise_sigma: args.noise.or(config.noise).unwrap_or(defaults.noise_sigma),
            relsha,
        };
        if spec.intervals.is_empty() || spec.lengths.is_empty() || spec.methods.is_empty() {
            bail!("the grid needs at least one interval, one length and one method");
        }
        if let Some(bad) = spec
            .intervals
            .iter()
            .chain(&spec.lengths)
            .find(|v| !(v.is_finite() && **v > 0.0))
        {
            bail!("intervals and lengths must be positive, got {bad}");
        }
        if !(spec.noise_sigma.is_finite() && spec.noise_sigma >= 0.0) {
            bail!("noise must be non-negative");
        }
        spec.relsha.validate()?;
        for &l in &lambda_sweep {
            RelshaConfig {
                lambda: l,
                ..spec.relsha
            }
            .validate()?;
        }
        let threads = args.threads.or(config.threads);
        if threads == Some(0) {
            bail!("--threads must be at least 1");
        }
        let Some(output) = args.output.clone().or(config.output) else {
            bail!("no output file: pass --output or set `output` in the config");
        };
        Ok(Self {
            catalog: args.catalog.catalog.clone().or(config.catalog),
            truth: args.truth.clone().or(config.truth),
            reference: args.reference.clone().or(config.reference),
            reference_a: args.reference_a.clone().or(config.reference_a),
            reference_b: args.reference_b.clone().or(config.reference_b),
            spec,
            lambda_sweep,
            threads,
            output,
        })
    }
}

/// `<dir>/<stem><suffix>` next to the grid file.
fn sibling(output: &Path, suffix: &str) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "grid".into());
    output.with_file_name(format!("{stem}{suffix}"))
}

fn experiment(args: &ExperimentArgs) -> anyhow::Result<ExitCode> {
    let config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let plan = ExperimentPlan::resolve(args, config)?;
    let catalog = CatalogArg {
        catalog: plan.catalog.clone(),
    }
    .load()?;
    let truth = match &plan.truth {
        Some(path) => load_harmonics(path, &catalog)?.value.solution,
        None => bundled_truth(&catalog)?,
    };
    let scenario = Scenario::from_truth(truth, plan.spec.seed);
    let reference = match &plan.reference {
        Some(path) => load_harmonics(path, &catalog)?.value.solution.amplitudes,
        None => scenario.reference.clone(),
    };
    let gauge_a = match &plan.reference_a {
        Some(path) => load_gauge(path, &catalog)?,
        None => scenario.gauge_a.clone(),
    };
    let gauge_b = match &plan.reference_b {
        Some(path) => load_gauge(path, &catalog)?,
        None => scenario.gauge_b.clone(),
    };

    let longest = plan.spec.lengths.iter().copied().fold(0.0, f64::max);
    let record = synthetic_series(
        &scenario.truth,
        &catalog,
        RECORD_STEP_HOURS,
        longest + RECORD_MARGIN_HOURS,
    )?;
    let inputs = GridInputs {
        record: &record,
        truth: &scenario.truth.amplitudes,
        catalog: &catalog,
        reference: Some(&reference),
        gauges: Some((&gauge_a, &gauge_b)),
    };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = plan.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    log::info!(
        "evaluating {} cells on {} threads",
        plan.spec.intervals.len() * plan.spec.lengths.len() * plan.spec.methods.len(),
        pool.current_num_threads()
    );
    let grid = pool.install(|| run_grid(&inputs, &plan.spec))?;

    let slice_intervals: Vec<f64> = SLICES
        .iter()
        .filter_map(|&(_, v)| find_interval(&plan.spec.intervals, v))
        .map(|i| plan.spec.intervals[i])
        .collect();
    let sweep = if plan.lambda_sweep.is_empty() || slice_intervals.is_empty() {
        None
    } else {
        let mut out = format!("lambda,{GRID_HEADER}\n");
        for &lambda in &plan.lambda_sweep {
            let spec = GridSpec {
                intervals: slice_intervals.clone(),
                methods: vec![Method::Relsha],
                relsha: RelshaConfig {
                    lambda,
                    ..plan.spec.relsha
                },
                ..plan.spec.clone()
            };
            let grid = pool.install(|| run_grid(&inputs, &spec))?;
            for line in grid.to_csv().lines().skip(1) {
                out.push_str(&format!("{},{line}\n", format_sig(lambda)));
            }
        }
        Some(out)
    };

    // Everything is in memory before the first file is written.
    let mut files = vec![(plan.output.clone(), grid.to_csv())];
    for (label, interval) in SLICES {
        match interval_slice(&grid, interval) {
            Ok(slice) => files.push((sibling(&plan.output, &format!("_slice_{label}.csv")), slice.to_csv())),
            Err(_) => log::info!("interval {label} not in the grid; no slice written"),
        }
    }
    if let Some(sweep) = sweep {
        files.push((sibling(&plan.output, "_lambda_sweep.csv"), sweep));
    }
    for (path, contents) in &files {
        write_atomic(path, contents)?;
    }

    let missing = summarize_missing(&grid);
    if missing > 0 && args.strict {
        return Ok(ExitCode::from(EXIT_NOT_CONVERGED));
    }
    Ok(ExitCode::SUCCESS)
}

fn summarize_missing(grid: &ErrorGrid) -> usize {
    let missing: Vec<_> = grid.missing().collect();
    for c in &missing {
        log::warn!(
            "no result for {} at interval {} h, length {} h: {}",
            c.method,
            format_sig(c.interval),
            format_sig(c.length),
            c.error.as_deref().unwrap_or("unknown error")
        );
    }
    eprintln!("{} cells evaluated, {} missing", grid.cells.len(), missing.len());
    missing.len()
}

fn synth(args: &SynthArgs) -> anyhow::Result<ExitCode> {
    let catalog = args.catalog.load()?;
    let solution = load_harmonics(&args.solution, &catalog)?.value.solution;
    let start = parse_timestamp(&args.start).with_context(|| format!("invalid --start `{}`", args.start))?;
    if !(args.interval.is_finite() && args.interval > 0.0 && args.length.is_finite() && args.length >= 0.0) {
        bail!("--interval must be positive and --length non-negative");
    }
    let times = uniform_times(args.interval, args.length);
    let heights = synthesize(&solution, &times, &catalog)?;
    let series = apply_noise(&WaterLevelSeries::new(start, times, heights)?, args.noise, args.seed)?;
    emit(args.output.as_deref(), &write_water_levels(&series))?;
    Ok(ExitCode::SUCCESS)
}

fn print_rrmse(args: &RrmseArgs) -> anyhow::Result<ExitCode> {
    let catalog = args.catalog.load()?;
    let estimated = load_harmonics(&args.estimated, &catalog)?.value.solution.amplitudes;
    let truth = load_harmonics(&args.truth, &catalog)?.value.solution.amplitudes;
    println!("{}", format_sig(rrmse(&estimated, &truth)?));
    Ok(ExitCode::SUCCESS)
}

fn resample_file(args: &ResampleArgs) -> anyhow::Result<ExitCode> {
    let series = load_water_levels(&args.input)?.value;
    let plan = SamplingPlan::new(args.interval, args.length, args.seed)?;
    emit(args.output.as_deref(), &write_water_levels(&resample(&series, &plan)?))?;
    Ok(ExitCode::SUCCESS)
}
