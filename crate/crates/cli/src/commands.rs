//! Subcommand implementations behind the `bodyshape` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use bodyshape_core::gradcheck::{check_terms, stock_terms, DEFAULT_CONFIGURATIONS, DEFAULT_TOLERANCE};
use bodyshape_core::measure::measure_all;
use bodyshape_core::synth::{
    fit_gaussian, sample_close, sample_ellipsoid, sample_family, Blob, Mannequin,
    ShapeFamily, TemplateKind,
};
use bodyshape_core::{
    predict_shape, ComponentCount, MeasurementProfile, MeasurementVector, Normalization,
    RefinementConfig, TriangleMesh,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::error::{CliError, ErrorKind, Result};
use crate::experiment::{run_experiment, summary, write_bundle, ExperimentConfig, Protocol};
use crate::model_file::{read_model, train_model, write_model};
use crate::obj::{read_obj, write_obj};
use crate::profile::{format_profile, read_profile};
use crate::report::{to_json, EvaluationReport, PredictionRecord};
use crate::table::{format_table, read_table, MeasurementTable};

#[derive(Debug, Parser)]
#[command(name = "bodyshape", version, about = "Estimate 3D body shapes from measurements")]
pub struct Cli {
    /// Seed for every random stream (mandatory for `sample` and `experiment`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel measurement and prediction.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a PCA model and feature map from a directory of OBJ meshes.
    Train(TrainArgs),
    /// Predict a shape from one row of a measurement table.
    Predict(PredictArgs),
    /// Measure one mesh and print a CSV row.
    Measure(MeasureArgs),
    /// Compare predicted meshes against target measurements.
    Evaluate(EvaluateArgs),
    /// Generate synthetic meshes or measurement tables.
    #[command(subcommand)]
    Sample(SampleCommand),
    /// Run a self-contained experiment protocol.
    Experiment(ExperimentArgs),
    /// Check analytic energy gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub meshes: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    /// Component count, or `all`.
    #[arg(long, default_value = "all")]
    pub components: String,
    #[arg(long, value_enum, default_value_t = NormalizationArg::Eigenvalue)]
    pub normalization: NormalizationArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormalizationArg {
    Eigenvalue,
    Stddev,
}

#[derive(Debug, Clone, Args)]
pub struct RefineArgs {
    /// Clamp weights to `l` standard deviations.
    #[arg(long, default_value_t = 3.0)]
    pub l: f64,
    /// Disable clamping (`l` = infinity).
    #[arg(long)]
    pub no_clamp: bool,
    /// Smoothness weight in stage two.
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Constraint recomputations per stage.
    #[arg(long)]
    pub s: Option<usize>,
}

impl RefineArgs {
    fn config(&self, default_rounds: usize) -> RefinementConfig {
        let mut c = RefinementConfig::default().with_rounds(self.s.unwrap_or(default_rounds));
        c.clamp_multiplier = if self.no_clamp { f64::INFINITY } else { self.l };
        c.smoothness_weight = self.lambda;
        c
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub targets: PathBuf,
    /// 0-based data row of the targets table.
    #[arg(long, default_value_t = 0)]
    pub row: usize,
    #[command(flatten)]
    pub refine: RefineArgs,
    /// Output OBJ.
    #[arg(long)]
    pub out: PathBuf,
    /// Output stage report JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted meshes: OBJ files, or directories whose OBJ files are taken
    /// in name order.
    #[arg(long, num_args = 1.., required = true)]
    pub meshes: Vec<PathBuf>,
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SampleCommand {
    /// Random family members of a synthetic template, with their
    /// measurements and profile.
    Family(FamilyArgs),
    /// Measurement vectors drawn from a Gaussian fitted to a table.
    Close(GaussianArgs),
    /// Measurement vectors at Mahalanobis distance `k` from the fitted mean.
    Ellipsoid(EllipsoidArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TemplateArg {
    Mannequin,
    Blob,
}

#[derive(Debug, Args)]
pub struct FamilyArgs {
    #[arg(long, value_enum, default_value_t = TemplateArg::Mannequin)]
    pub template: TemplateArg,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub modes: usize,
    #[arg(long)]
    pub count: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GaussianArgs {
    /// Table the Gaussian is fitted to.
    #[arg(long)]
    pub measurements: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EllipsoidArgs {
    #[command(flatten)]
    pub gaussian: GaussianArgs,
    #[arg(long)]
    pub k: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum ProtocolArg {
    Close,
    Ellipsoid,
    Heldout,
    SmallTraining,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub protocol: ProtocolArg,
    /// Ellipsoid radius (ellipsoid protocol only).
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub training: Option<usize>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub modes: Option<usize>,
    #[command(flatten)]
    pub refine: RefineArgs,
    /// Output directory for the report bundle.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = DEFAULT_CONFIGURATIONS)]
    pub configurations: usize,
}

/// Shared command state: where results and progress go.
pub struct Context<'a> {
    pub quiet: bool,
    pub out: &'a mut (dyn Write + Send),
}

impl Context<'_> {
    fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn print(&mut self, text: &str) -> Result<()> {
        self.out.write_all(text.as_bytes())?;
        Ok(())
    }
}

fn required_seed(seed: Option<u64>, command: &str) -> Result<u64> {
    seed.ok_or_else(|| CliError::input(format!("`{command}` needs --seed")))
}

/// Runs `cli` on a rayon pool of the requested size.
pub fn run(cli: &Cli, ctx: &mut Context<'_>) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::input("--threads must be at least 1"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::input(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli, ctx))
}

fn dispatch(cli: &Cli, ctx: &mut Context<'_>) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(a, ctx),
        Command::Predict(a) => predict(a, ctx),
        Command::Measure(a) => measure(a, ctx),
        Command::Evaluate(a) => evaluate(a, ctx),
        Command::Sample(s) => sample(s, required_seed(cli.seed, "sample")?, ctx),
        Command::Experiment(a) => experiment(a, required_seed(cli.seed, "experiment")?, ctx),
        Command::Gradcheck(a) => gradcheck(a, cli.seed.unwrap_or(0), ctx),
    }
}

/// OBJ files named by `paths`, directories expanded in name order.
pub fn collect_obj_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::from(e).context(p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("obj")))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn read_meshes(paths: &[PathBuf]) -> Result<Vec<TriangleMesh>> {
    paths.par_iter().map(|p| read_obj(p)).collect()
}

fn train(a: &TrainArgs, ctx: &mut Context<'_>) -> Result<()> {
    let paths = collect_obj_paths(std::slice::from_ref(&a.meshes))?;
    if paths.len() < 2 {
        return Err(CliError::input(format!(
            "need ≥ 2 training meshes, found {} in {}",
            paths.len(),
            a.meshes.display()
        )));
    }
    let meshes = read_meshes(&paths)?;
    let first = &meshes[0];
    let offending: Vec<String> = meshes
        .iter()
        .zip(&paths)
        .skip(1)
        .filter(|(m, _)| !m.same_topology(first))
        .map(|(_, p)| p.display().to_string())
        .collect();
    if !offending.is_empty() {
        return Err(CliError::input(format!(
            "topology differs from {}: {}",
            paths[0].display(),
            offending.join(", ")
        )));
    }
    let profile = read_profile(&a.profile, first.vertex_count(), first.triangle_count())?;
    let components = match a.components.as_str() {
        "all" => ComponentCount::All,
        s => ComponentCount::Count(
            s.parse()
                .map_err(|_| CliError::input(format!("--components must be a count or `all`, got `{s}`")))?,
        ),
    };
    let normalization = match a.normalization {
        NormalizationArg::Eigenvalue => Normalization::Eigenvalue,
        NormalizationArg::Stddev => Normalization::StdDev,
    };
    let model = train_model(&meshes, &profile, components, normalization)?;
    write_model(&a.out, &model)?;
    ctx.info(format!(
        "trained {} components on {} meshes -> {}",
        model.pca.component_count(),
        meshes.len(),
        a.out.display()
    ));
    Ok(())
}

fn predict(a: &PredictArgs, ctx: &mut Context<'_>) -> Result<()> {
    let model = read_model(&a.model)?;
    let table = read_table(&a.targets)?;
    table
        .expect_names(model.profile.names())
        .map_err(|e| e.context(a.targets.display()))?;
    let targets = MeasurementVector::for_profile(table.row(a.row)?.to_vec(), &model.profile)?;
    let config = a.refine.config(3);
    let p = predict_shape(&model.pca, &model.features, &model.profile, &targets, &config)?;
    write_obj(&a.out, &p.mesh)?;
    if let Some(path) = &a.report {
        let record = PredictionRecord::new(&model.profile, targets.values(), &config, &p.report);
        std::fs::write(path, to_json(&record)).map_err(|e| CliError::from(e).context(path.display()))?;
    }
    ctx.info(format!(
        "E_m initial {:.6e}, stage 1 {:.6e}, stage 2 {:.6e}",
        p.report.initial_energy, p.report.stage1_energy, p.report.stage2_energy
    ));
    Ok(())
}

/// CSV text of `measure_all` on one mesh.
pub fn measure_csv(mesh: &TriangleMesh, profile: &MeasurementProfile) -> Result<String> {
    let values = measure_all(mesh, profile)?.into_inner();
    let table = MeasurementTable::new(profile.names().map(str::to_owned).collect(), vec![values])?;
    Ok(format_table(&table))
}

fn measure(a: &MeasureArgs, ctx: &mut Context<'_>) -> Result<()> {
    let mesh = read_obj(&a.mesh)?;
    let profile = read_profile(&a.profile, mesh.vertex_count(), mesh.triangle_count())?;
    let csv = measure_csv(&mesh, &profile)?;
    match &a.out {
        Some(path) => std::fs::write(path, csv).map_err(|e| CliError::from(e).context(path.display())),
        None => ctx.print(&csv),
    }
}

fn evaluate(a: &EvaluateArgs, ctx: &mut Context<'_>) -> Result<()> {
    let paths = collect_obj_paths(&a.meshes)?;
    let meshes = read_meshes(&paths)?;
    let first = meshes
        .first()
        .ok_or_else(|| CliError::input("no predicted meshes given"))?;
    let profile = read_profile(&a.profile, first.vertex_count(), first.triangle_count())?;
    let table = read_table(&a.targets)?;
    table
        .expect_names(profile.names())
        .map_err(|e| e.context(a.targets.display()))?;
    let measured = meshes
        .par_iter()
        .zip(&paths)
        .map(|(m, p)| {
            measure_all(m, &profile)
                .map(MeasurementVector::into_inner)
                .map_err(|e| CliError::from(e).context(p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = EvaluationReport::new(&profile, &measured, &table.rows)?;
    if let Some(path) = &a.out {
        std::fs::write(path, to_json(&report)).map_err(|e| CliError::from(e).context(path.display()))?;
    }
    ctx.print(&report.table())
}

fn sample(cmd: &SampleCommand, seed: u64, ctx: &mut Context<'_>) -> Result<()> {
    match cmd {
        SampleCommand::Family(a) => {
            let (template, profile) = match a.template {
                TemplateArg::Mannequin => {
                    let res = a.resolution.unwrap_or(TemplateKind::Mannequin.default_resolution());
                    let m = Mannequin::new(res)?;
                    let p = m.body_profile();
                    (m.mesh, p)
                }
                TemplateArg::Blob => {
                    let res = a.resolution.unwrap_or(TemplateKind::Blob.default_resolution());
                    let b = Blob::new(res)?;
                    let p = b.face_profile();
                    (b.mesh, p)
                }
            };
            let family = ShapeFamily::random(template, a.modes, seed)?;
            let meshes = sample_family(&family, a.count, seed.wrapping_add(1))?;
            std::fs::create_dir_all(&a.out).map_err(|e| CliError::from(e).context(a.out.display()))?;
            let digits = a.count.saturating_sub(1).to_string().len().max(3);
            meshes
                .par_iter()
                .enumerate()
                .map(|(i, m)| write_obj(&a.out.join(format!("mesh_{i:0digits$}.obj")), m))
                .collect::<Result<Vec<_>>>()?;
            let rows = meshes
                .par_iter()
                .map(|m| measure_all(m, &profile).map(MeasurementVector::into_inner).map_err(CliError::from))
                .collect::<Result<Vec<_>>>()?;
            let table = MeasurementTable::new(profile.names().map(str::to_owned).collect(), rows)?;
            write_file(&a.out.join("measurements.csv"), &format_table(&table))?;
            write_file(&a.out.join("profile.json"), &format_profile(&profile))?;
            ctx.info(format!("wrote {} meshes to {}", meshes.len(), a.out.display()));
            Ok(())
        }
        SampleCommand::Close(a) => sample_gaussian(a, None, seed, ctx),
        SampleCommand::Ellipsoid(a) => sample_gaussian(&a.gaussian, Some(a.k), seed, ctx),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::from(e).context(path.display()))
}

fn sample_gaussian(a: &GaussianArgs, k: Option<f64>, seed: u64, ctx: &mut Context<'_>) -> Result<()> {
    let table = read_table(&a.measurements)?;
    let refs: Vec<&[f64]> = table.rows.iter().map(Vec::as_slice).collect();
    let g = fit_gaussian(&refs)?;
    let draws = match k {
        Some(k) => sample_ellipsoid(&g, k, a.count, seed)?,
        None => sample_close(&g, a.count, seed)?,
    };
    let out = MeasurementTable::new(
        table.names.clone(),
        draws.into_iter().map(MeasurementVector::into_inner).collect(),
    )?;
    write_file(&a.out, &format_table(&out))?;
    ctx.info(format!("wrote {} samples to {}", a.count, a.out.display()));
    Ok(())
}

fn experiment(a: &ExperimentArgs, seed: u64, ctx: &mut Context<'_>) -> Result<()> {
    let protocol = match a.protocol {
        ProtocolArg::Close => Protocol::Close,
        ProtocolArg::Ellipsoid => Protocol::Ellipsoid(
            a.k.ok_or_else(|| CliError::input("the ellipsoid protocol needs --k"))?,
        ),
        ProtocolArg::Heldout => Protocol::Heldout,
        ProtocolArg::SmallTraining => Protocol::SmallTraining,
    };
    let mut config = ExperimentConfig::new(protocol, seed);
    config.refinement = a.refine.config(config.refinement.vertex_rounds);
    if let Some(v) = a.training {
        config.training = v;
    }
    if let Some(v) = a.subjects {
        config.subjects = v;
    }
    if let Some(v) = a.resolution {
        config.resolution = v;
    }
    if let Some(v) = a.modes {
        config.modes = v;
    }
    let outcome = run_experiment(&config)?;
    write_bundle(&a.out, &outcome)?;
    ctx.info(format!("wrote report bundle to {}", a.out.display()));
    ctx.print(&summary(&outcome))
}

fn gradcheck(a: &GradcheckArgs, seed: u64, ctx: &mut Context<'_>) -> Result<()> {
    let report = check_terms(&stock_terms(), seed, a.configurations, DEFAULT_TOLERANCE);
    let mut text = String::new();
    for c in &report.checks {
        text.push_str(&format!(
            "{} {:<14} max relative error {:.3e} over {} configurations\n",
            if c.passed { "PASS" } else { "FAIL" },
            c.term,
            c.max_relative_error,
            c.configurations
        ));
    }
    ctx.print(&text)?;
    let failed: Vec<&str> = report.failures().map(|c| c.term).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(
            ErrorKind::Numerical,
            format!("gradient check failed for: {}", failed.join(", ")),
        ))
    }
}

