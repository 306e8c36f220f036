//! The `bianchor` command-line driver.
//!
//! | subcommand       | writes                                                    |
//! |------------------|-----------------------------------------------------------|
//! | `train-backbone` | `backbone.ckpt.json`, `backbone_loss.csv`                 |
//! | `train-sidenet`  | `sidenet.ckpt.json`, `sidenet_loss.csv`                   |
//! | `sample`         | `samples.csv`, `trajectory.csv`, `nfe_report.json`        |
//! | `bench`          | `metrics.csv`, `reference.csv`, `bench_summary.json`      |
//! | `verify`         | `verify_report.txt`, `verify_report.csv`                  |
//!
//! Each command also writes `manifest_<command>.json` recording the resolved
//! config, its hash, all seeds, input checkpoint hashes and output hashes.
//! Passing that manifest back as `--config` repeats the run; input
//! checkpoints recorded in it are reused unless given explicitly.
//!
//! CSV layouts (header row, UTF-8):
//!
//! - loss files: `iteration,loss`
//! - `samples.csv`: `x0,…,x{d−1}`
//! - `trajectory.csv`: `run_id,step,t,x0,…,x{d−1},nfe_so_far`
//! - `metrics.csv` and `reference.csv`: `solver,N,nfe,sliced_w,energy_dist,wall_ms`

pub mod config;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{verification_report, Fault};
use crate::flow::{train_backbone, LearnedField, VelocityField};
use crate::metrics::{energy_distance, sliced_wasserstein};
use crate::nnet::{load_checkpoint, save_checkpoint};
use crate::quadrature::QuadratureRule;
use crate::rng::{seeded, standard_normal, stream};
use crate::sidenet::{train_sidenet, SideNetModel};
use crate::solvers::{SamplingResult, Solver, SolverKind};
use crate::datasets::sample_dataset;
use crate::{Error, Result, TensorBuffer};

pub use config::RunConfig;
pub use manifest::Manifest;

pub const BACKBONE_FILE: &str = "backbone.ckpt.json";
pub const SIDENET_FILE: &str = "sidenet.ckpt.json";
pub const METRICS_COLUMNS: [&str; 6] = ["solver", "N", "nfe", "sliced_w", "energy_dist", "wall_ms"];

#[derive(Debug, Parser)]
#[command(name = "bianchor", version, about = "Few-step flow-matching sampling with a bi-anchor solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the backbone velocity network by flow matching.
    TrainBackbone(CommonArgs),
    /// Train the SideNet against a frozen backbone.
    TrainSidenet(TrainSidenetArgs),
    /// Draw samples with one solver.
    Sample(SampleArgs),
    /// Compare solvers over a grid of step counts.
    Bench(BenchArgs),
    /// Run the analytic error checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run config, or a manifest from an earlier run.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to the config's `output.directory`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replaces every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainSidenetArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub backbone: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub backbone: Option<PathBuf>,
    #[arg(long)]
    pub sidenet: Option<PathBuf>,
    /// euler, heun, single_anchor or bi_anchor.
    #[arg(long)]
    pub solver: Option<String>,
    /// Backbone evaluations per sample; Heun uses half as many intervals.
    #[arg(long)]
    pub nfe: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Trained backbone; trained from the config when absent.
    #[arg(long)]
    pub backbone: Option<PathBuf>,
    /// Trained SideNet; trained from the config when absent.
    #[arg(long)]
    pub sidenet: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Directory for the report files; the report is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Deliberately breaks a component to show the checks can fail.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainBackbone(args) => cmd_train_backbone(&args),
        Command::TrainSidenet(args) => cmd_train_sidenet(&args),
        Command::Sample(args) => cmd_sample(&args),
        Command::Bench(args) => cmd_bench(&args),
        Command::Verify(args) => cmd_verify(&args),
    }
}

/// Loaded config plus the manifest it came from, if any.
struct Setup {
    config: RunConfig,
    replay: Option<Manifest>,
    out: PathBuf,
}

impl Setup {
    fn new(args: &CommonArgs) -> Result<Self> {
        let mut config = RunConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            config.override_seed(seed);
        }
        let replay = Manifest::load(&args.config).ok();
        let out = args.out.clone().unwrap_or_else(|| config.output.directory.clone());
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Self { config, replay, out })
    }

    /// An explicit path, else the path recorded in the replayed manifest
    /// (whose hash must still match).
    fn input(&self, explicit: &Option<PathBuf>, role: &str) -> Result<Option<PathBuf>> {
        if let Some(p) = explicit {
            return Ok(Some(p.clone()));
        }
        let Some(record) = self.replay.as_ref().and_then(|m| m.inputs.get(role)) else {
            return Ok(None);
        };
        let found = manifest::file_sha256(&record.path)?;
        if found != record.sha256 {
            return Err(Error::Config(format!(
                "{} changed since the manifest was written",
                record.path.display()
            )));
        }
        Ok(Some(record.path.clone()))
    }

    fn required_input(&self, explicit: &Option<PathBuf>, role: &str) -> Result<PathBuf> {
        self.input(explicit, role)?
            .ok_or_else(|| Error::Config(format!("--{role} <checkpoint> is required")))
    }
}

fn load_backbone(path: &Path, dim: usize) -> Result<LearnedField> {
    let field = LearnedField::new(load_checkpoint(path)?)?;
    if field.dim() != dim {
        return Err(Error::Config(format!(
            "{}: backbone has dim {}, problem has {dim}",
            path.display(),
            field.dim()
        )));
    }
    Ok(field)
}

fn load_sidenet(path: &Path, dim: usize) -> Result<SideNetModel> {
    let sidenet = SideNetModel::from_model(load_checkpoint(path)?)?;
    if sidenet.model().features().state_dim != dim {
        return Err(Error::Config(format!(
            "{}: SideNet has dim {}, problem has {dim}",
            path.display(),
            sidenet.model().features().state_dim
        )));
    }
    Ok(sidenet)
}

fn write_losses(path: &Path, losses: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "loss"])?;
    for (i, loss) in losses.iter().enumerate() {
        w.write_record([i.to_string(), loss.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn coordinate_headers(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

fn write_samples(path: &Path, points: &TensorBuffer) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(coordinate_headers(points.cols()))?;
    for row in points.iter_rows() {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One line per sample per grid time.
pub fn write_trajectory(path: &Path, result: &SamplingResult) -> Result<()> {
    let d = result.final_state.cols();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["run_id".to_string(), "step".into(), "t".into()];
    header.extend(coordinate_headers(d));
    header.push("nfe_so_far".into());
    w.write_record(&header)?;
    for (step, point) in result.trajectory.iter().enumerate() {
        for (run_id, row) in point.states.iter_rows().enumerate() {
            let mut rec = vec![run_id.to_string(), step.to_string(), point.t.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            rec.push(point.nfe_so_far.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn cmd_train_backbone(args: &CommonArgs) -> Result<()> {
    let setup = Setup::new(args)?;
    let config = &setup.config;
    let trained = train_backbone(&config.problem(), &config.backbone)?;
    let ckpt = setup.out.join(BACKBONE_FILE);
    let losses = setup.out.join("backbone_loss.csv");
    save_checkpoint(trained.field.model(), &ckpt)?;
    write_losses(&losses, &trained.losses)?;

    let mut manifest = Manifest::new("train-backbone", Some(config));
    manifest.add_output(&ckpt)?;
    manifest.add_output(&losses)?;
    let path = manifest.write(&setup.out)?;
    println!(
        "trained backbone for {} iterations, final loss {:.6}; wrote {}",
        trained.losses.len(),
        trained.losses.last().copied().unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

fn cmd_train_sidenet(args: &TrainSidenetArgs) -> Result<()> {
    let setup = Setup::new(&args.common)?;
    let config = &setup.config;
    let backbone_path = setup.required_input(&args.backbone, "backbone")?;
    let backbone = load_backbone(&backbone_path, config.problem().dim())?;
    let trained = train_sidenet(&backbone, &config.problem(), &config.sidenet)?;
    let ckpt = setup.out.join(SIDENET_FILE);
    let losses = setup.out.join("sidenet_loss.csv");
    save_checkpoint(trained.sidenet.model(), &ckpt)?;
    write_losses(&losses, &trained.losses)?;

    let mut manifest = Manifest::new("train-sidenet", Some(config));
    manifest.add_input("backbone", &backbone_path)?;
    manifest.add_output(&ckpt)?;
    manifest.add_output(&losses)?;
    let path = manifest.write(&setup.out)?;
    println!(
        "trained SideNet for {} iterations, final loss {:.6e}; wrote {}",
        trained.losses.len(),
        trained.losses.last().copied().unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

/// Interval count for a solver given a per-sample NFE budget.
pub fn intervals_for_nfe(solver: SolverKind, nfe: usize) -> Result<usize> {
    let per = solver.nfe(1);
    if nfe == 0 || !nfe.is_multiple_of(per) {
        return Err(Error::InvalidArgument(format!(
            "{solver} uses {per} evaluations per interval, so --nfe must be a positive multiple of {per}"
        )));
    }
    Ok(nfe / per)
}

fn noise(seed: u64, n: usize, d: usize) -> TensorBuffer {
    let mut rng = seeded(seed, stream::NOISE);
    TensorBuffer::from_rows(d, standard_normal(&mut rng, n * d))
}

fn solve(
    kind: SolverKind,
    field: &dyn VelocityField,
    sidenet: Option<&SideNetModel>,
    rule: &QuadratureRule,
    x1: &TensorBuffer,
    n: usize,
) -> Result<SamplingResult> {
    let need = || Error::Config(format!("solver {kind} needs a SideNet checkpoint"));
    let solver = match kind {
        SolverKind::Euler => Solver::Euler,
        SolverKind::Heun => Solver::Heun,
        SolverKind::SingleAnchor => Solver::SingleAnchor {
            sidenet: sidenet.ok_or_else(need)?,
            rule,
        },
        SolverKind::BiAnchor => Solver::BiAnchor {
            sidenet: sidenet.ok_or_else(need)?,
            rule,
        },
    };
    solver.solve(field, x1, n)
}

#[derive(Debug, Serialize)]
struct NfeReport {
    solver: SolverKind,
    intervals: usize,
    rule: String,
    n_samples: usize,
    nfe_per_sample: usize,
    sidenet_batches: usize,
}

fn cmd_sample(args: &SampleArgs) -> Result<()> {
    let mut setup = Setup::new(&args.common)?;
    if let Some(name) = &args.solver {
        setup.config.sampler.solver = name.parse()?;
    }
    if let Some(nfe) = args.nfe {
        setup.config.sampler.intervals = intervals_for_nfe(setup.config.sampler.solver, nfe)?;
    }
    setup.config.validate()?;
    let config = &setup.config;
    let s = &config.sampler;
    let d = config.problem().dim();

    let backbone_path = setup.required_input(&args.backbone, "backbone")?;
    let backbone = load_backbone(&backbone_path, d)?;
    let sidenet_path = if s.solver.needs_sidenet() {
        Some(setup.required_input(&args.sidenet, "sidenet")?)
    } else {
        None
    };
    let sidenet = sidenet_path.as_deref().map(|p| load_sidenet(p, d)).transpose()?;

    let rule = QuadratureRule::new(s.rule);
    let x1 = noise(s.seed, s.n_samples, d);
    let result = solve(s.solver, &backbone, sidenet.as_ref(), &rule, &x1, s.intervals)?;

    let samples = setup.out.join("samples.csv");
    let trajectory = setup.out.join("trajectory.csv");
    let report = setup.out.join("nfe_report.json");
    write_samples(&samples, &result.final_state)?;
    write_trajectory(&trajectory, &result)?;
    write_json(
        &report,
        &NfeReport {
            solver: s.solver,
            intervals: s.intervals,
            rule: s.rule.name().to_string(),
            n_samples: s.n_samples,
            nfe_per_sample: result.nfe,
            sidenet_batches: result.sidenet_batches,
        },
    )?;

    let mut manifest = Manifest::new("sample", Some(config));
    if let Some(name) = &args.solver {
        manifest.options.insert("solver".into(), name.clone());
    }
    if let Some(nfe) = args.nfe {
        manifest.options.insert("nfe".into(), nfe.to_string());
    }
    manifest.add_input("backbone", &backbone_path)?;
    if let Some(p) = &sidenet_path {
        manifest.add_input("sidenet", p)?;
    }
    for p in [&samples, &trajectory, &report] {
        manifest.add_output(p)?;
    }
    let path = manifest.write(&setup.out)?;
    println!(
        "{} with {} intervals: {} backbone evaluations per sample; wrote {}",
        s.solver,
        s.intervals,
        result.nfe,
        path.display()
    );
    Ok(())
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub solver: SolverKind,
    #[serde(rename = "N")]
    pub n: usize,
    pub nfe: usize,
    pub sliced_w: f64,
    pub energy_dist: f64,
    pub wall_ms: f64,
}

fn write_bench_rows(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.solver.name().to_string(),
            r.n.to_string(),
            r.nfe.to_string(),
            r.sliced_w.to_string(),
            r.energy_dist.to_string(),
            format!("{:.3}", r.wall_ms),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
struct RatioRow {
    solver: SolverKind,
    #[serde(rename = "N")]
    n: usize,
    /// Sliced Wasserstein of the row divided by the reference's.
    sliced_w_ratio: f64,
}

#[derive(Debug, Serialize)]
struct BenchSummary {
    reference: BenchRow,
    ratios_to_reference: Vec<RatioRow>,
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let setup = Setup::new(&args.common)?;
    let config = &setup.config;
    let problem = config.problem();
    let d = problem.dim();
    let mut manifest = Manifest::new("bench", Some(config));

    let backbone = match setup.input(&args.backbone, "backbone")? {
        Some(p) => {
            manifest.add_input("backbone", &p)?;
            load_backbone(&p, d)?
        }
        None => {
            let trained = train_backbone(&problem, &config.backbone)?;
            let ckpt = setup.out.join(BACKBONE_FILE);
            let losses = setup.out.join("backbone_loss.csv");
            save_checkpoint(trained.field.model(), &ckpt)?;
            write_losses(&losses, &trained.losses)?;
            manifest.add_output(&ckpt)?;
            manifest.add_output(&losses)?;
            trained.field
        }
    };
    let needs_sidenet = config.bench.solvers.iter().any(|s| s.needs_sidenet());
    let sidenet = match (needs_sidenet, setup.input(&args.sidenet, "sidenet")?) {
        (false, _) => None,
        (true, Some(p)) => {
            manifest.add_input("sidenet", &p)?;
            Some(load_sidenet(&p, d)?)
        }
        (true, None) => {
            let trained = train_sidenet(&backbone, &problem, &config.sidenet)?;
            let ckpt = setup.out.join(SIDENET_FILE);
            let losses = setup.out.join("sidenet_loss.csv");
            save_checkpoint(trained.sidenet.model(), &ckpt)?;
            write_losses(&losses, &trained.losses)?;
            manifest.add_output(&ckpt)?;
            manifest.add_output(&losses)?;
            Some(trained.sidenet)
        }
    };

    let rows = bench_grid(config, &backbone, sidenet.as_ref())?;
    let reference = bench_reference(config, &backbone)?;
    let metrics = setup.out.join("metrics.csv");
    let reference_csv = setup.out.join("reference.csv");
    let summary = setup.out.join("bench_summary.json");
    write_bench_rows(&metrics, &rows)?;
    write_bench_rows(&reference_csv, std::slice::from_ref(&reference))?;
    let ratios = rows
        .iter()
        .map(|r| RatioRow {
            solver: r.solver,
            n: r.n,
            sliced_w_ratio: r.sliced_w / reference.sliced_w,
        })
        .collect();
    let mut summary_value = serde_json::to_value(BenchSummary {
        reference: reference.clone(),
        ratios_to_reference: ratios,
    })?;
    // Timing is the one nondeterministic quantity; keep it out of the summary.
    summary_value["reference"]
        .as_object_mut()
        .expect("row serializes to an object")
        .remove("wall_ms");
    write_json(&summary, &summary_value)?;

    manifest.add_csv_output_without(&metrics, "wall_ms")?;
    manifest.add_csv_output_without(&reference_csv, "wall_ms")?;
    manifest.add_output(&summary)?;
    let path = manifest.write(&setup.out)?;

    println!("{:<14} {:>4} {:>4} {:>10} {:>12}", "solver", "N", "nfe", "sliced_w", "energy_dist");
    for r in rows.iter().chain(std::iter::once(&reference)) {
        println!(
            "{:<14} {:>4} {:>4} {:>10.5} {:>12.6}",
            r.solver.name(),
            r.n,
            r.nfe,
            r.sliced_w,
            r.energy_dist
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn bench_row(
    config: &RunConfig,
    kind: SolverKind,
    n: usize,
    backbone: &dyn VelocityField,
    sidenet: Option<&SideNetModel>,
    data: &TensorBuffer,
    x1: &TensorBuffer,
) -> Result<BenchRow> {
    let rule = QuadratureRule::new(config.bench.rule);
    let start = Instant::now();
    let result = solve(kind, backbone, sidenet, &rule, x1, n)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(BenchRow {
        solver: kind,
        n,
        nfe: result.nfe,
        sliced_w: sliced_wasserstein(&result.final_state, data, config.bench.n_projections, config.bench.seed)?,
        energy_dist: energy_distance(&result.final_state, data)?,
        wall_ms,
    })
}

fn bench_inputs(config: &RunConfig) -> Result<(TensorBuffer, TensorBuffer)> {
    let b = &config.bench;
    let data = sample_dataset(config.problem.dataset, b.n_reference, b.seed)?.points;
    let x1 = noise(b.seed, b.n_samples, data.cols());
    Ok((data, x1))
}

/// Every configured solver at every configured interval count, solver-major.
pub fn bench_grid(
    config: &RunConfig,
    backbone: &dyn VelocityField,
    sidenet: Option<&SideNetModel>,
) -> Result<Vec<BenchRow>> {
    let (data, x1) = bench_inputs(config)?;
    let mut rows = Vec::new();
    for &kind in &config.bench.solvers {
        for &n in &config.bench.intervals {
            rows.push(bench_row(config, kind, n, backbone, sidenet, &data, &x1)?);
        }
    }
    Ok(rows)
}

/// Euler with the configured reference interval count.
pub fn bench_reference(config: &RunConfig, backbone: &dyn VelocityField) -> Result<BenchRow> {
    let (data, x1) = bench_inputs(config)?;
    bench_row(
        config,
        SolverKind::Euler,
        config.bench.reference_intervals,
        backbone,
        None,
        &data,
        &x1,
    )
}

fn parse_fault(name: &str) -> Result<Fault> {
    match name {
        "corrupt-lobatto-weights" => Ok(Fault::CorruptLobattoWeights),
        other => Err(Error::Unknown {
            what: "fault",
            name: other.to_string(),
        }),
    }
}

fn cmd_verify(args: &VerifyArgs) -> Result<()> {
    let fault = args.inject_fault.as_deref().map(parse_fault).transpose()?;
    let report = verification_report(fault)?;
    print!("{}", report.to_text());
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let text = out.join("verify_report.txt");
        let table = out.join("verify_report.csv");
        std::fs::write(&text, report.to_text()).map_err(|e| Error::io(&text, e))?;
        let mut w = csv::Writer::from_path(&table)?;
        for check in &report.checks {
            w.serialize(check)?;
        }
        w.flush().map_err(|e| Error::io(&table, e))?;
        let mut manifest = Manifest::new("verify", None);
        if let Some(f) = &args.inject_fault {
            manifest.options.insert("inject_fault".into(), f.clone());
        }
        manifest.add_output(&text)?;
        manifest.add_output(&table)?;
        manifest.write(out)?;
    }
    let failed = report.failures().count();
    if failed > 0 {
        return Err(Error::Verification {
            failed,
            total: report.checks.len(),
        });
    }
    Ok(())
}
