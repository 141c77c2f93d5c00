//! `meshnav`: terrain generation, field and descriptor dumps, residual
//! training, single runs, batches, sweeps and reports.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use meshnav::context::TerrainContext;
use meshnav::dynamics::State;
use meshnav::fmm::{compute_field, vertex_costs, VectorField};
use meshnav::harness::batch::{
    ablation_sweep, read_output, run_batch_to_dir, summary_csv, write_output, OutputDir, SweepAxis,
};
use meshnav::harness::config::CONFIG_ENV;
use meshnav::harness::{ExperimentConfig, MetricsSummary};
use meshnav::mesh::write_obj;
use meshnav::planner::{mix, run_episode, EpisodeSpec, PlanContext};
use meshnav::residual::{train_residual, write_dataset, ResidualModel};
use meshnav::world::collect_residuals;
use nalgebra::Point3;

#[derive(Parser)]
#[command(name = "meshnav", version, about = "Terrain-aware sampling MPC on triangle meshes")]
struct Cli {
    /// Experiment config (TOML). Falls back to the file named by the
    /// environment variable, then to built-in defaults.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set planner.n_cand=50`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured terrain as an OBJ mesh.
    GenTerrain {
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-vertex arrival time and direction of the guidance field as CSV.
    FieldDump {
        #[arg(long, value_parser = parse_xy)]
        goal: [f64; 2],
        #[arg(long)]
        out: PathBuf,
    },
    /// Terrain descriptors on a regular grid as CSV.
    DescriptorDump {
        /// Grid spacing in meters.
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect slip-world residuals on the configured terrain and fit the
    /// residual model.
    TrainResidual {
        #[arg(long)]
        out: PathBuf,
        /// Also write the collected samples as JSON lines.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// One receding-horizon run; prints the result as JSON.
    Plan {
        /// `x,y,yaw`.
        #[arg(long, value_parser = parse_pose)]
        start: [f64; 3],
        #[arg(long, value_parser = parse_xy)]
        goal: [f64; 2],
        /// Per-iteration JSON-lines log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run every configured method on every scenario; resumes from an
    /// existing output directory.
    Batch,
    /// One-dimensional ablation of the epsilon-constraint planner.
    Sweep {
        /// One of alpha_fmm, horizon, n_cand, gamma.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Recompute the summary of an output directory.
    Report {
        /// Defaults to `batch.out_dir`.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into()
        .map_err(|_| format!("expected {N} comma-separated numbers"))
}

fn parse_xy(s: &str) -> Result<[f64; 2], String> {
    parse_floats::<2>(s)
}

fn parse_pose(s: &str) -> Result<[f64; 3], String> {
    parse_floats::<3>(s)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn terrain(cfg: &ExperimentConfig) -> Result<TerrainContext> {
    cfg.terrain().map_err(|e| anyhow!("terrain: {e}"))
}

fn goal_point(ctx: &TerrainContext, xy: [f64; 2]) -> Result<Point3<f64>> {
    let z = ctx
        .mesh
        .height(xy[0], xy[1])
        .ok_or_else(|| anyhow!("goal ({}, {}) is off the mesh", xy[0], xy[1]))?;
    Ok(Point3::new(xy[0], xy[1], z))
}

fn field(cfg: &ExperimentConfig, ctx: &TerrainContext, goal: Point3<f64>) -> Result<VectorField> {
    let costs = vertex_costs(&ctx.mesh, &cfg.fmm);
    compute_field(&ctx.mesh, goal, &costs).map_err(|e| anyhow!("field: {e}"))
}

fn residual_model(cfg: &ExperimentConfig) -> Result<Option<ResidualModel>> {
    cfg.residual
        .model
        .as_deref()
        .map(|p| ResidualModel::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()
}

fn print_summary(summary: &[MetricsSummary]) -> Result<()> {
    io::stdout().write_all(&summary_csv(summary)?)?;
    Ok(())
}

fn gen_terrain(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ctx = terrain(cfg)?;
    let mut w = create(out)?;
    write_obj(&ctx.mesh, &mut w)?;
    w.flush()?;
    eprintln!(
        "{} vertices, {} faces -> {}",
        ctx.mesh.num_vertices(),
        ctx.mesh.num_faces(),
        out.display()
    );
    Ok(())
}

fn field_dump(cfg: &ExperimentConfig, goal: [f64; 2], out: &Path) -> Result<()> {
    let ctx = terrain(cfg)?;
    let f = field(cfg, &ctx, goal_point(&ctx, goal)?)?;
    let mut w = csv::Writer::from_writer(create(out)?);
    w.write_record(["vertex", "x", "y", "z", "distance", "dir_x", "dir_y", "dir_z", "lethal"])?;
    for (v, p) in ctx.mesh.vertices().iter().enumerate() {
        let d = f.directions()[v];
        w.write_record([
            v.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            p.z.to_string(),
            f.distance()[v].to_string(),
            d.x.to_string(),
            d.y.to_string(),
            d.z.to_string(),
            f.lethal()[v].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn descriptor_dump(cfg: &ExperimentConfig, step: f64, out: &Path) -> Result<()> {
    if !(step > 0.0) {
        bail!("--step must be positive");
    }
    let ctx = terrain(cfg)?;
    let (lo, hi) = ctx.mesh.bounds();
    let mut w = csv::Writer::from_writer(create(out)?);
    w.write_record([
        "x", "y", "z", "n_x", "n_y", "n_z", "sigma_z", "gauss_k", "mean_h", "a_total",
    ])?;
    let nx = ((hi[0] - lo[0]) / step).floor() as usize;
    let ny = ((hi[1] - lo[1]) / step).floor() as usize;
    for j in 0..=ny {
        for i in 0..=nx {
            let (x, y) = (lo[0] + i as f64 * step, lo[1] + j as f64 * step);
            let Some(z) = ctx.mesh.height(x, y) else { continue };
            let Some(d) = ctx.descriptor(&Point3::new(x, y, z)) else {
                continue;
            };
            let mut row = vec![x, y, z];
            row.extend(d.as_array());
            w.write_record(row.iter().map(f64::to_string))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn train(cfg: &ExperimentConfig, out: &Path, dataset: Option<&Path>) -> Result<()> {
    let ctx = terrain(cfg)?;
    let samples = collect_residuals(
        &ctx,
        cfg.residual.slip,
        &cfg.planner.limits(),
        cfg.planner.dt,
        cfg.residual.samples,
        cfg.residual.train.feature_mode,
        cfg.residual.train.seed,
    );
    if let Some(p) = dataset {
        let mut w = create(p)?;
        write_dataset(&samples, &mut w)?;
        w.flush()?;
    }
    let model = train_residual(&samples, &cfg.residual.train)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    model.save(out)?;
    eprintln!("trained on {} samples -> {}", samples.len(), out.display());
    Ok(())
}

fn plan(cfg: &ExperimentConfig, start: [f64; 3], goal: [f64; 2], log: Option<&Path>) -> Result<()> {
    let ctx = terrain(cfg)?;
    let goal = goal_point(&ctx, goal)?;
    let f = field(cfg, &ctx, goal)?;
    let model = residual_model(cfg)?;
    let pc = PlanContext {
        ctx: &ctx,
        field: &f,
        model: model.as_ref(),
        objectives: &cfg.objectives,
    };
    let state = State::on_terrain(&ctx, start[0], start[1], start[2])
        .ok_or_else(|| anyhow!("start ({}, {}) is off the mesh", start[0], start[1]))?;
    let method = cfg
        .methods()
        .into_iter()
        .next()
        .ok_or_else(|| anyhow!("batch.methods is empty"))?;
    let mut planner = method.build(cfg.batch.seed);
    let spec = EpisodeSpec {
        start: state,
        goal,
        delta_term: cfg.planner.delta_term,
        max_iters: cfg.planner.max_iters,
        dt: cfg.planner.dt,
        plant: cfg.batch.plant,
        plant_seed: mix(cfg.batch.seed, 1),
        keep_log: log.is_some(),
    };
    let r = run_episode(planner.as_mut(), &pc, &spec);
    if let Some(p) = log {
        let mut w = create(p)?;
        for entry in &r.log {
            serde_json::to_writer(&mut w, entry)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    let report = serde_json::json!({
        "method": method.name,
        "outcome": r.outcome,
        "traveled": r.traveled,
        "straight_line": r.straight_line,
        "delta_l": r.delta_l(),
        "phi_max_deg": r.phi_max_deg,
        "tipover": r.tipover,
        "iterations": r.iterations,
        "fallbacks": r.fallbacks,
        "mean_plan_ms": r.mean_plan_time_ms(),
        "message": r.message,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn batch(cfg: &ExperimentConfig) -> Result<()> {
    let (suite, ctx) = cfg.suite().map_err(|e| anyhow!("suite: {e}"))?;
    let model = residual_model(cfg)?;
    let dir = OutputDir::new(&cfg.batch.out_dir);
    let out = run_batch_to_dir(
        &ctx,
        &suite.scenarios,
        &cfg.methods(),
        model.as_ref(),
        &cfg.batch_options(),
        &dir,
        cfg.normalization(),
    )?;
    eprintln!("{} runs -> {}", out.runs.len(), dir.dir.display());
    print_summary(&out.summarize(cfg.normalization()))
}

fn sweep(cfg: &ExperimentConfig, axis: &str, values: &[f64]) -> Result<()> {
    let axis = SweepAxis::parse(axis).ok_or_else(|| anyhow!("unknown sweep axis {axis:?}"))?;
    let (suite, ctx) = cfg.suite().map_err(|e| anyhow!("suite: {e}"))?;
    let model = residual_model(cfg)?;
    let norm = cfg.normalization();
    let (out, summary) = ablation_sweep(
        &ctx,
        &suite.scenarios,
        axis,
        values,
        &cfg.planner,
        model.as_ref(),
        &cfg.batch_options(),
        norm,
    )?;
    let dir = OutputDir::new(&cfg.batch.out_dir);
    write_output(&dir, &out, norm)?;
    eprintln!("{} runs -> {}", out.runs.len(), dir.dir.display());
    print_summary(&summary)
}

fn report(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<()> {
    let dir = OutputDir::new(dir.unwrap_or(&cfg.batch.out_dir));
    let out = read_output(&dir).with_context(|| format!("reading {}", dir.dir.display()))?;
    print_summary(&out.summarize(cfg.normalization()))
}

fn run(cli: Cli, cfg: &ExperimentConfig) -> Result<()> {
    match cli.command {
        Command::GenTerrain { out } => gen_terrain(cfg, &out),
        Command::FieldDump { goal, out } => field_dump(cfg, goal, &out),
        Command::DescriptorDump { step, out } => descriptor_dump(cfg, step, &out),
        Command::TrainResidual { out, dataset } => train(cfg, &out, dataset.as_deref()),
        Command::Plan { start, goal, log } => plan(cfg, start, goal, log.as_deref()),
        Command::Batch => batch(cfg),
        Command::Sweep { axis, values } => sweep(cfg, &axis, &values),
        Command::Report { dir } => report(cfg, dir.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    // A config that does not load is a usage error, like a bad flag.
    let cfg = match ExperimentConfig::load(cli.config.as_deref(), &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
