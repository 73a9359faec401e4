//! Command-line front end for the `mcrb` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bounds::BoundsContext;
use crate::error::{Error, Result};
use crate::estimation::{fit_map, BoundsBox, FitOptions, FitResult, ParameterMaps};
use crate::experiments::{
    convergence_study, generate_phantom, sigma_for_snr, subset_consistency, t1_experiment, ConvergenceConfig,
    ConvergenceRow, Generator, PhantomSpec, Reference, SubsetConfig, T1Config,
};
use crate::io::dataset::{protocol_from_manifest, read_dataset, write_dataset, VoxelDataset};
use crate::io::svg::{emit_lineplot_svg, PlotSeries, PlotSpec, Scale};
use crate::io::table::{emit_table, read_table, Column, ExperimentTable, UNIT_ATT, UNIT_COUNT, UNIT_F, UNIT_F2, UNIT_ATT2, UNIT_NONE};
use crate::noise::{NoiseKind, NoiseSpec};
use crate::signal::{KineticParams, Protocol};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mcrb", version, about = "Misspecified Cramér-Rao bound diagnostics for ASL fitting")]
pub struct Cli {
    /// Seed for phantom noise and bootstrap resampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "MCRB_THREADS", default_value_t = 0)]
    threads: usize,
    /// Manifest-shaped JSON with protocol constants for the assumed model.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset.
    Simulate(SimulateArgs),
    /// Fit parameter maps.
    Fit(DataArgs),
    /// Per-voxel CRB / MCRB reports.
    Bounds(BoundsArgs),
    /// Asymptotic convergence study.
    Converge(ConvergeArgs),
    /// PLD-subset consistency study.
    Subsets(SubsetsArgs),
    /// Global versus voxelwise tissue T1.
    T1test(T1Args),
    /// Plot columns of a CSV table.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Tissue {
    Brain,
    Kidney,
}

impl Tissue {
    fn protocol(self, sigma: f64) -> Protocol {
        match self {
            Tissue::Brain => Protocol::brain(sigma),
            Tissue::Kidney => Protocol::kidney(sigma),
        }
    }

    fn bounds(self) -> BoundsBox {
        match self {
            Tissue::Brain => BoundsBox::brain(),
            Tissue::Kidney => BoundsBox::kidney(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GeneratorArg {
    Buxton,
    WrongT1,
    Outflow,
    PartialVolume,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NoiseArg {
    Gaussian,
    Rician,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReferenceArg {
    Truth,
    FullFit,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 2000)]
    voxels: usize,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, value_enum, default_value_t = Tissue::Brain)]
    tissue: Tissue,
    /// Peak SNR at f = 75, att = 1 (ignored when --sigma is given).
    #[arg(long, default_value_t = 20.0)]
    snr: f64,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_enum, default_value_t = NoiseArg::Gaussian)]
    noise: NoiseArg,
    #[arg(long, value_enum, default_value_t = GeneratorArg::Buxton)]
    generator: GeneratorArg,
    #[arg(long, default_value_t = 0.3)]
    delta_t1: f64,
    /// Restrict the wrong T1 to the brightest fraction of voxels.
    #[arg(long)]
    top_fraction: Option<f64>,
    #[arg(long, default_value_t = 0.3)]
    k_out: f64,
    #[arg(long, default_value_t = 0.7)]
    pv_weight: f64,
    #[arg(long, default_value_t = 0.5)]
    pv_flow_ratio: f64,
    #[arg(long, default_value_t = 0.5)]
    pv_att_shift: f64,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Parameter box used by the fitter.
    #[arg(long, value_enum, default_value_t = Tissue::Brain)]
    tissue: Tissue,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Fit table from `mcrb fit`; the data are refitted when absent.
    #[arg(long)]
    maps: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConvergeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    m_min: usize,
    /// Largest m (defaults to all repetitions).
    #[arg(long)]
    m_max: Option<usize>,
    #[arg(long, value_enum, default_value_t = ReferenceArg::FullFit)]
    reference: ReferenceArg,
}

#[derive(Debug, Args)]
struct SubsetsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    m_max: Option<usize>,
}

#[derive(Debug, Args)]
struct T1Args {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1.2)]
    t1_global: f64,
    #[arg(long, default_value_t = 1.5)]
    t1_alt: f64,
    #[arg(long, default_value_t = 0.10)]
    top_fraction: f64,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// CSV table to plot.
    #[arg(long)]
    table: PathBuf,
    #[arg(long, default_value = "m")]
    x: String,
    /// Comma-separated solid series.
    #[arg(long, value_delimiter = ',', required = true)]
    y: Vec<String>,
    /// Comma-separated dotted (reference) series.
    #[arg(long, value_delimiter = ',')]
    dotted: Vec<String>,
    #[arg(long)]
    log: bool,
    /// Horizontal reference line.
    #[arg(long)]
    reference: Option<f64>,
    #[arg(long, default_value = "")]
    title: String,
    #[arg(long, default_value = "plot.svg")]
    name: String,
}

/// Failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidInput(_) => EXIT_USAGE,
            Error::Io { .. }
            | Error::Format { .. }
            | Error::SizeMismatch { .. }
            | Error::VersionUnsupported(_)
            | Error::ColumnMissing(_) => EXIT_DATA,
            _ => EXIT_NUMERICAL,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn all_failed(what: &str) -> CliError {
    CliError {
        code: EXIT_NUMERICAL,
        message: format!("{what} failed for every voxel"),
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn execute(cli: &Cli) -> std::result::Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError {
            code: EXIT_USAGE,
            message: e.to_string(),
        })?;
    pool.install(|| dispatch(cli))
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn config_protocol(path: &Path) -> Result<Protocol> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::format("config", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::format("config", "top level must be an object"))?;
    protocol_from_manifest(obj)
}

/// Dataset plus the assumed protocol (dataset's own unless --config is given).
fn load(cli: &Cli, args: &DataArgs) -> Result<(VoxelDataset, Protocol)> {
    let dataset = read_dataset(&args.data)?;
    let protocol = match &cli.config {
        Some(path) => config_protocol(path)?,
        None => dataset.protocol.clone(),
    };
    Ok((dataset, protocol))
}

/// The dataset relabelled with the assumed protocol, so fitting uses it.
fn assume(mut dataset: VoxelDataset, protocol: &Protocol) -> Result<VoxelDataset> {
    if dataset.protocol.plds != protocol.plds {
        return Err(Error::InvalidInput("config PLDs differ from the dataset's".into()));
    }
    dataset.protocol = protocol.clone();
    Ok(dataset)
}

fn dispatch(cli: &Cli) -> std::result::Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Fit(a) => fit(cli, a),
        Command::Bounds(a) => bounds(cli, a),
        Command::Converge(a) => converge(cli, a),
        Command::Subsets(a) => subsets(cli, a),
        Command::T1test(a) => t1test(cli, a),
        Command::Plot(a) => plot(cli, a),
    }
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> std::result::Result<(), CliError> {
    let base = match &cli.config {
        Some(p) => config_protocol(p)?,
        None => a.tissue.protocol(1.0),
    };
    if !(a.snr > 0.0) {
        return Err(Error::InvalidInput("--snr must be positive".into()).into());
    }
    let snr_sigma = sigma_for_snr(&base, KineticParams::new(75.0, 1.0), a.snr);
    let sigma = a.sigma.unwrap_or(snr_sigma);
    // noiseless phantoms still record a usable sigma for the assumed model
    let protocol = Protocol {
        sigma: if sigma > 0.0 { sigma } else { snr_sigma },
        ..base
    };
    let kind = match a.noise {
        NoiseArg::Gaussian => NoiseKind::Gaussian,
        NoiseArg::Rician => NoiseKind::Rician,
    };
    let noise = NoiseSpec::new(sigma, kind, cli.seed);
    let spec = match a.tissue {
        Tissue::Brain => PhantomSpec::brain(a.voxels, a.reps, noise),
        Tissue::Kidney => PhantomSpec::kidney(a.voxels, a.reps, noise),
    };
    let generator = match a.generator {
        GeneratorArg::Buxton => Generator::Buxton,
        GeneratorArg::WrongT1 => Generator::BuxtonWrongT1 {
            delta_t1: a.delta_t1,
            top_fraction: a.top_fraction,
        },
        GeneratorArg::Outflow => Generator::BuxtonOutflow { k_out: a.k_out },
        GeneratorArg::PartialVolume => Generator::BuxtonPartialVolume {
            weight: a.pv_weight,
            flow_ratio: a.pv_flow_ratio,
            att_shift: a.pv_att_shift,
        },
    };
    let dataset = generate_phantom(&spec.with_generator(generator), &protocol)?;
    write_dataset(&dataset, &cli.out)?;
    Ok(())
}

fn fit_table(maps: &ParameterMaps) -> ExperimentTable {
    let mut t = ExperimentTable::new(vec![
        Column::new("voxel", UNIT_COUNT),
        Column::new("f", UNIT_F),
        Column::new("att", UNIT_ATT),
        Column::new("sse", "signal^2"),
        Column::new("converged", UNIT_NONE),
        Column::new("at_boundary", UNIT_NONE),
        Column::new("low_signal", UNIT_NONE),
        Column::new("singular", UNIT_NONE),
        Column::new("n_iterations", UNIT_COUNT),
    ]);
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    for (v, fit) in maps.fits.iter().enumerate() {
        let row = match fit {
            Some(r) => vec![
                v as f64,
                r.theta_hat.f,
                r.theta_hat.att,
                r.sse,
                flag(r.converged),
                flag(r.at_boundary),
                flag(r.low_signal),
                flag(r.singular),
                r.n_iterations as f64,
            ],
            None => {
                let mut row = vec![f64::NAN; 9];
                row[0] = v as f64;
                row
            }
        };
        t.push_row(row).expect("row width matches header");
    }
    t
}

/// Fits from a table written by `fit_table`.
fn maps_from_table(t: &ExperimentTable, n_voxels: usize) -> Result<Vec<Option<FitResult>>> {
    let col = |n: &str| t.column(n);
    let (f, att, sse) = (col("f")?, col("att")?, col("sse")?);
    let (conv, bnd, low, sing, iters) = (
        col("converged")?,
        col("at_boundary")?,
        col("low_signal")?,
        col("singular")?,
        col("n_iterations")?,
    );
    if f.len() != n_voxels {
        return Err(Error::format("maps", format!("{} rows for {n_voxels} voxels", f.len())));
    }
    Ok((0..n_voxels)
        .map(|v| {
            (f[v].is_finite() && att[v].is_finite()).then(|| FitResult {
                theta_hat: KineticParams::new(f[v], att[v]),
                sse: sse[v],
                converged: conv[v] != 0.0,
                at_boundary: bnd[v] != 0.0,
                low_signal: low[v] != 0.0,
                singular: sing[v] != 0.0,
                n_iterations: iters[v] as usize,
            })
        })
        .collect())
}

fn fit(cli: &Cli, a: &DataArgs) -> std::result::Result<(), CliError> {
    let (dataset, protocol) = load(cli, a)?;
    let dataset = assume(dataset, &protocol)?;
    let maps = fit_map(&dataset, &a.tissue.bounds(), &FitOptions::default())?;
    if dataset.masked_voxels().count() > 0 && maps.fits.iter().all(|r| r.is_none()) {
        return Err(all_failed("fitting"));
    }
    create_out(&cli.out)?;
    emit_table(&fit_table(&maps), cli.out.join("fit.csv"))?;
    Ok(())
}

/// Per-voxel status codes in the bounds table.
pub mod status {
    pub const OK: f64 = 0.0;
    pub const UNMASKED: f64 = 1.0;
    pub const FIT_INVALID: f64 = 2.0;
    pub const NOT_NEGATIVE_DEFINITE: f64 = 3.0;
    pub const SINGULAR_INFORMATION: f64 = 4.0;
    pub const DEGENERATE_EIGEN: f64 = 5.0;
    pub const OTHER: f64 = 6.0;
}

fn bounds(cli: &Cli, a: &BoundsArgs) -> std::result::Result<(), CliError> {
    use rayon::prelude::*;
    let (dataset, protocol) = load(cli, &a.data)?;
    let dataset = assume(dataset, &protocol)?;
    let fits = match &a.maps {
        Some(path) => maps_from_table(&read_table(path)?, dataset.n_voxels)?,
        None => fit_map(&dataset, &a.data.tissue.bounds(), &FitOptions::default())?.fits,
    };
    let context = BoundsContext::new(&protocol);
    let rows: Vec<Vec<f64>> = (0..dataset.n_voxels)
        .into_par_iter()
        .map(|v| {
            let mut row = vec![f64::NAN; 14];
            row[0] = v as f64;
            let code = match (dataset.mask[v], fits[v]) {
                (false, _) => status::UNMASKED,
                (true, None) => status::FIT_INVALID,
                (true, Some(fit)) if !fit.is_valid() => status::FIT_INVALID,
                (true, Some(fit)) => match context.report(&dataset.series(v), fit.theta_hat) {
                    Ok(r) => {
                        row[1..13].copy_from_slice(&[
                            r.theta_eval.f,
                            r.theta_eval.att,
                            r.lambda_max,
                            r.lambda_min,
                            r.kappa,
                            r.c_crb_empirical.a,
                            r.c_crb_empirical.c,
                            r.c_crb_theoretical.a,
                            r.c_crb_theoretical.c,
                            r.c_mcrb.a,
                            r.c_mcrb.c,
                            r.c_mcrb.b,
                        ]);
                        status::OK
                    }
                    Err(Error::NotNegativeDefinite { .. }) => status::NOT_NEGATIVE_DEFINITE,
                    Err(Error::SingularInformation { .. }) => status::SINGULAR_INFORMATION,
                    Err(Error::DegenerateEigen { .. }) => status::DEGENERATE_EIGEN,
                    Err(_) => status::OTHER,
                },
            };
            row[13] = code;
            row
        })
        .collect();
    let any_masked = dataset.masked_voxels().count() > 0;
    if any_masked && rows.iter().all(|r| r[13] != status::OK) {
        return Err(all_failed("bound computation"));
    }
    let mut t = ExperimentTable::new(vec![
        Column::new("voxel", UNIT_COUNT),
        Column::new("f", UNIT_F),
        Column::new("att", UNIT_ATT),
        Column::new("lambda_max", UNIT_NONE),
        Column::new("lambda_min", UNIT_NONE),
        Column::new("kappa", UNIT_NONE),
        Column::new("crb_f", UNIT_F2),
        Column::new("crb_att", UNIT_ATT2),
        Column::new("crb_theory_f", UNIT_F2),
        Column::new("crb_theory_att", UNIT_ATT2),
        Column::new("mcrb_f", UNIT_F2),
        Column::new("mcrb_att", UNIT_ATT2),
        Column::new("mcrb_f_att", "ml/min/100g*s"),
        Column::new("status", "code"),
    ]);
    for row in rows {
        t.push_row(row).expect("row width matches header");
    }
    create_out(&cli.out)?;
    emit_table(&t, cli.out.join("bounds.csv"))?;
    Ok(())
}

fn converge(cli: &Cli, a: &ConvergeArgs) -> std::result::Result<(), CliError> {
    let (dataset, protocol) = load(cli, &a.data)?;
    let m_max = a.m_max.unwrap_or(dataset.n_reps);
    let reference = match a.reference {
        ReferenceArg::Truth => Reference::Truth,
        ReferenceArg::FullFit => Reference::FullFit,
    };
    let config = ConvergenceConfig::new((a.m_min..=m_max).collect(), a.k, cli.seed, reference, a.data.tissue.bounds());
    let rows = convergence_study(&dataset, &protocol, &config)?;
    if rows.iter().all(|r| r.n_voxels == 0) && dataset.masked_voxels().count() > 0 {
        return Err(all_failed("convergence fitting"));
    }
    let table = ConvergenceRow::table(&rows);
    create_out(&cli.out)?;
    emit_table(&table, cli.out.join("convergence.csv"))?;
    emit_lineplot_svg(&table, &PlotSpec::convergence_eigenvalues(), cli.out.join("convergence_eigenvalues.svg"))?;
    emit_lineplot_svg(&table, &PlotSpec::convergence_variance(), cli.out.join("convergence_variance.svg"))?;
    Ok(())
}

fn subsets(cli: &Cli, a: &SubsetsArgs) -> std::result::Result<(), CliError> {
    let (dataset, protocol) = load(cli, &a.data)?;
    let mut config = SubsetConfig::new(dataset.n_reps, a.k, cli.seed, a.data.tissue.bounds());
    if let Some(m) = a.m_max {
        config.ms = (2..=m).collect();
    }
    let report = subset_consistency(&dataset, &protocol, &config)?;
    if report.relative_error_map.iter().all(|r| r.is_none()) && dataset.masked_voxels().count() > 0 {
        return Err(all_failed("subset fitting"));
    }
    let per_m = report.per_m_table();
    create_out(&cli.out)?;
    emit_table(&per_m, cli.out.join("subsets_per_m.csv"))?;
    emit_table(&report.voxel_table(), cli.out.join("subsets_voxels.csv"))?;
    emit_lineplot_svg(&per_m, &PlotSpec::subset_variance(), cli.out.join("subsets_variance.svg"))?;
    let mut rel = PlotSpec::new(
        "Relative error between subsets",
        "m",
        vec![PlotSeries::solid("rel_err_f"), PlotSeries::solid("rel_err_att")],
    );
    rel.y_label = "mean relative error".into();
    emit_lineplot_svg(&per_m, &rel, cli.out.join("subsets_relative_error.svg"))?;
    Ok(())
}

fn t1test(cli: &Cli, a: &T1Args) -> std::result::Result<(), CliError> {
    let (dataset, protocol) = load(cli, &a.data)?;
    let mut config = T1Config::new(a.t1_global, a.t1_alt, a.data.tissue.bounds());
    config.top_fraction = a.top_fraction;
    let report = t1_experiment(&dataset, &protocol, &config)?;
    if report.global.iter().chain(&report.voxelwise).all(|m| m.is_none()) && dataset.masked_voxels().count() > 0 {
        return Err(all_failed("T1 experiment"));
    }
    create_out(&cli.out)?;
    emit_table(&report.table(), cli.out.join("t1_maps.csv"))?;
    Ok(())
}

fn plot(cli: &Cli, a: &PlotArgs) -> std::result::Result<(), CliError> {
    let table = read_table(&a.table)?;
    let series = a
        .y
        .iter()
        .map(|c| PlotSeries::solid(c))
        .chain(a.dotted.iter().map(|c| PlotSeries::dotted(c)))
        .collect();
    let mut spec = PlotSpec::new(&a.title, &a.x, series);
    if a.log {
        spec.y_scale = Scale::Log;
    }
    spec.reference_line = a.reference;
    create_out(&cli.out)?;
    emit_lineplot_svg(&table, &spec, cli.out.join(&a.name))?;
    Ok(())
}
