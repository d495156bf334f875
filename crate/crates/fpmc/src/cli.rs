//! Command-line surface: dataset ingestion, denoiser construction,
//! denoising, sampling, fine-tuning, augmentation, evaluation, and mask
//! export. Every command writes a run manifest with the resolved
//! configuration, seeds, and input digests.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde_json::json;

use crate::augment::{self, AugmentPlan, Strategy};
use crate::classical::{fit_wiener, WienerModel};
use crate::constructors::{
    build_els, build_ls, build_lukoianov, build_optimal, build_pspc_flex, build_pspc_square,
    flex_self_inclusion_misses, ScheduleTable, SensitivityMaps,
};
use crate::dataset::{self, Dataset};
use crate::denoiser::{Denoiser, OptimalDenoiser, ResponseTable, WienerDenoiser};
use crate::error::{FpmcError, Result};
use crate::eval::{self, sample_similarity};
use crate::finetune::{self, AdamWConfig, FinetuneConfig, TuneMode};
use crate::geometry::ImageGeometry;
use crate::manifest::{digest_matrix, RunManifest, SeedManifest};
use crate::model::FpmcModel;
use crate::sampler::SamplerConfig;
use crate::schedule::DiffusionSchedule;
use crate::tensor_io;

#[derive(Parser)]
#[command(
    name = "fpmc",
    version,
    about = "Analytical diffusion denoisers from filtered posterior means"
)]
pub struct Cli {
    /// Worker threads (also honored via FPMC_THREADS); defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// JSON config file; command flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Construct and persist a denoiser model.
    Build(BuildArgs),
    /// Apply a persisted model to a tensor of noisy inputs.
    Denoise(DenoiseArgs),
    /// Draw samples by deterministic PF-ODE integration.
    Sample(SampleArgs),
    /// Fine-tune query precisions and/or response weights against a target.
    Finetune(FinetuneArgs),
    /// Augment a dataset and write the union plus a label ledger.
    Augment(AugmentArgs),
    /// Compare paired sample batches.
    Eval(EvalArgs),
    /// Per-t error sweep of a denoiser against a target.
    Sweep(SweepArgs),
    /// Export query/response vectors as PNG masks rescaled to [0, 1].
    ExportMasks(ExportMasksArgs),
}

#[derive(Args)]
pub struct GridArgs {
    /// EDM grid spec `steps:t_min:t_max:rho` (default `18:0.002:80:7`).
    #[arg(long)]
    pub grid: Option<String>,
    /// Explicit comma-separated descending grid times (overrides --grid).
    #[arg(long)]
    pub t_grid: Option<String>,
}

impl GridArgs {
    pub fn resolve(&self) -> Result<DiffusionSchedule> {
        if let Some(ts) = &self.t_grid {
            let grid = parse_f64_list(ts)?;
            return DiffusionSchedule::new(grid);
        }
        let spec = self.grid.as_deref().unwrap_or("18:0.002:80:7");
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 4 {
            return Err(FpmcError::validation(format!(
                "grid spec must be steps:t_min:t_max:rho, got {spec:?}"
            )));
        }
        let steps: usize = parts[0]
            .parse()
            .map_err(|_| FpmcError::validation("bad step count in grid spec"))?;
        let t_min: f64 = parts[1]
            .parse()
            .map_err(|_| FpmcError::validation("bad t_min in grid spec"))?;
        let t_max: f64 = parts[2]
            .parse()
            .map_err(|_| FpmcError::validation("bad t_max in grid spec"))?;
        let rho: f64 = parts[3]
            .parse()
            .map_err(|_| FpmcError::validation("bad rho in grid spec"))?;
        DiffusionSchedule::edm(steps, t_min, t_max, rho)
    }
}

#[derive(Args)]
pub struct BuildArgs {
    /// optimal | wiener | pspc-square | pspc-flex | ls | els | lukoianov
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Geometry for PNG-directory datasets.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Schedule table JSON (entries with per-step `s` or `tau`).
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Inline per-step patch sizes, comma separated.
    #[arg(long)]
    pub patch_sizes: Option<String>,
    /// Inline per-step thresholds, comma separated.
    #[arg(long)]
    pub tau_list: Option<String>,
    /// Constant threshold (Wiener-row method).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Sensitivity maps directory (threshold method).
    #[arg(long)]
    pub maps: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Tensor of query points (rows).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub step: Option<usize>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Target spec: optimal:DATA | wiener:DIR | model:DIR | table:DIR.
    #[arg(long)]
    pub target: String,
    /// Step range `a..b` (half open) or comma-separated indices.
    #[arg(long)]
    pub steps: String,
    /// q | r | joint
    #[arg(long, default_value = "joint")]
    pub mode: String,
    /// Held-out dataset for validation.
    #[arg(long)]
    pub validation: PathBuf,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub loss_weight: Option<f64>,
    #[arg(long)]
    pub mc_support: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// hflip | vflip | translate | rotate | scale | synthetic
    #[arg(long)]
    pub strategy: String,
    /// Augmented-portion size as an absolute count.
    #[arg(long)]
    pub count: Option<usize>,
    /// Augmented-portion size as a percentage of the dataset.
    #[arg(long)]
    pub percent: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Synthetic dataset tensor (strategy = synthetic).
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    /// Seeds reserved for evaluation; synthetic data generated with any of
    /// them is rejected.
    #[arg(long)]
    pub reserved_seeds: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Tensor of generated samples.
    #[arg(long)]
    pub samples: PathBuf,
    /// Tensor of reference samples (paired by row).
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SweepArgs {
    /// Denoiser spec: optimal:DATA | wiener:DIR | model:DIR | table:DIR.
    #[arg(long)]
    pub denoiser: String,
    #[arg(long)]
    pub target: String,
    /// Held-out data the query points are drawn from.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Times to sweep (defaults to the full grid).
    #[arg(long)]
    pub t_list: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub n_per_t: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Baseline sweep JSON for a relative-change report.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ExportMasksArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub step: usize,
    /// q | r
    #[arg(long, default_value = "q")]
    pub which: String,
    /// Estimator index; exports every estimator when omitted.
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Parse argv, execute, and return the process exit code
/// (0 success, 2 validation error, 3 numerical failure).
pub fn main_from_env() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let config = match &cli.config {
        Some(path) => serde_json::from_slice(&std::fs::read(path)?)?,
        None => serde_json::Value::Null,
    };
    match cli.command {
        Command::Build(args) => cmd_build(args, &config),
        Command::Denoise(args) => cmd_denoise(args),
        Command::Sample(args) => cmd_sample(args, &config),
        Command::Finetune(args) => cmd_finetune(args, &config),
        Command::Augment(args) => cmd_augment(args, &config),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args, &config),
        Command::ExportMasks(args) => cmd_export_masks(args),
    }
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let from_env = std::env::var("FPMC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = flag.or(from_env) {
        if n == 0 {
            return Err(FpmcError::validation("--threads must be >= 1"));
        }
        // Ignore the error if a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| FpmcError::validation(format!("bad number {p:?}")))
        })
        .collect()
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| FpmcError::validation(format!("bad integer {p:?}")))
        })
        .collect()
}

fn parse_u64_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .map_err(|_| FpmcError::validation(format!("bad integer {p:?}")))
        })
        .collect()
}

fn parse_steps(spec: &str, max: usize) -> Result<Vec<usize>> {
    let steps: Vec<usize> = if let Some((a, b)) = spec.split_once("..") {
        let start: usize = a
            .parse()
            .map_err(|_| FpmcError::validation("bad step range"))?;
        let end: usize = b
            .parse()
            .map_err(|_| FpmcError::validation("bad step range"))?;
        (start..end).collect()
    } else {
        parse_usize_list(spec)?
    };
    if steps.is_empty() {
        return Err(FpmcError::validation("empty step selection"));
    }
    if let Some(&bad) = steps.iter().find(|&&s| s >= max) {
        return Err(FpmcError::validation(format!(
            "step {bad} out of range (model has {max})"
        )));
    }
    Ok(steps)
}

fn cfg_u64(config: &serde_json::Value, key: &str) -> Option<u64> {
    config.get(key).and_then(|v| v.as_u64())
}

fn cfg_f64(config: &serde_json::Value, key: &str) -> Option<f64> {
    config.get(key).and_then(|v| v.as_f64())
}

fn load_dataset_arg(
    path: &Path,
    width: Option<usize>,
    height: Option<usize>,
    channels: Option<usize>,
) -> Result<Dataset> {
    if path.is_dir() {
        let (w, h, c) = match (width, height, channels) {
            (Some(w), Some(h), Some(c)) => (w, h, c),
            _ => {
                return Err(FpmcError::validation(
                    "PNG-directory datasets need --width, --height, and --channels",
                ))
            }
        };
        dataset::load_dataset(path, ImageGeometry::new(w, h, c)?)
    } else {
        dataset::load_dataset_auto(path)
    }
}

/// Resolve a denoiser spec against a schedule.
fn load_denoiser_spec(spec: &str, sched: &DiffusionSchedule) -> Result<Box<dyn Denoiser>> {
    let (kind, path) = spec
        .split_once(':')
        .ok_or_else(|| FpmcError::validation(format!("denoiser spec must be kind:path, got {spec:?}")))?;
    let path = Path::new(path);
    match kind {
        "optimal" => Ok(Box::new(OptimalDenoiser {
            data: dataset::load_dataset_auto(path)?.shared(),
            sched: sched.clone(),
        })),
        "wiener" => Ok(Box::new(WienerDenoiser {
            model: WienerModel::load(path)?,
            sched: sched.clone(),
        })),
        "model" => Ok(Box::new(FpmcModel::load(path)?)),
        "table" => Ok(Box::new(ResponseTable::load(path)?)),
        other => Err(FpmcError::validation(format!("unknown denoiser kind {other:?}"))),
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_build(args: BuildArgs, _config: &serde_json::Value) -> Result<()> {
    let sched = args.grid.resolve()?;
    let data = load_dataset_arg(&args.dataset, args.width, args.height, args.channels)?.shared();
    let mut table_json = serde_json::Value::Null;

    let patch_table = |sched: &DiffusionSchedule| -> Result<ScheduleTable> {
        if let Some(path) = &args.table {
            ScheduleTable::load(path)
        } else if let Some(sizes) = &args.patch_sizes {
            ScheduleTable::from_patch_sizes(sched, &parse_usize_list(sizes)?)
        } else {
            Err(FpmcError::validation("this method needs --table or --patch-sizes"))
        }
    };
    let tau_table = |sched: &DiffusionSchedule| -> Result<ScheduleTable> {
        if let Some(path) = &args.table {
            ScheduleTable::load(path)
        } else if let Some(taus) = &args.tau_list {
            ScheduleTable::from_taus(sched, &parse_f64_list(taus)?)
        } else {
            Err(FpmcError::validation("this method needs --table or --tau-list"))
        }
    };

    match args.method.as_str() {
        "optimal" => {
            let model = build_optimal(&data, &sched)?;
            model.save(&args.out)?;
        }
        "wiener" => {
            let model = fit_wiener(&data)?;
            model.save(&args.out)?;
            std::fs::write(
                args.out.join("schedule.json"),
                serde_json::to_vec_pretty(&sched.t_grid().to_vec())?,
            )?;
        }
        "pspc-square" => {
            let table = patch_table(&sched)?;
            table_json = serde_json::to_value(&table)?;
            build_pspc_square(&table, &data, &sched)?.save(&args.out)?;
        }
        "ls" => {
            let table = patch_table(&sched)?;
            table_json = serde_json::to_value(&table)?;
            build_ls(&table, &data, &sched)?.save(&args.out)?;
        }
        "els" => {
            let table = patch_table(&sched)?;
            table_json = serde_json::to_value(&table)?;
            build_els(&table, &data, &sched)?.save(&args.out)?;
        }
        "pspc-flex" => {
            let maps_dir = args
                .maps
                .as_ref()
                .ok_or_else(|| FpmcError::validation("pspc-flex needs --maps"))?;
            let maps = SensitivityMaps::load(maps_dir)?;
            let table = tau_table(&sched)?;
            table_json = serde_json::to_value(&table)?;
            for (step, x, y) in flex_self_inclusion_misses(&maps, &table)? {
                eprintln!("warning: step {step}: mask at ({x}, {y}) does not include its own pixel");
            }
            build_pspc_flex(&maps, &table, &data, &sched)?.save(&args.out)?;
        }
        "lukoianov" => {
            let tau = args
                .tau
                .ok_or_else(|| FpmcError::validation("lukoianov needs --tau"))?;
            table_json = json!({ "tau": tau });
            let wiener = fit_wiener(&data)?;
            build_lukoianov(&wiener, tau, &data, &sched)?.save(&args.out)?;
        }
        other => {
            return Err(FpmcError::validation(format!("unknown method {other:?}")));
        }
    }

    let mut manifest = RunManifest::new(
        "build",
        json!({
            "method": args.method,
            "grid": sched.t_grid(),
            "table": table_json,
            "tau": args.tau,
        }),
        None,
    );
    if args.dataset.is_file() {
        manifest.add_input(&args.dataset)?;
    }
    if let Some(maps) = &args.maps {
        manifest.add_dir_input(maps)?;
    }
    manifest.write(&args.out)
}

fn cmd_denoise(args: DenoiseArgs) -> Result<()> {
    let model = FpmcModel::load(&args.model)?;
    let (geom, zs) = tensor_io::read_tensor(&args.input)?;
    if geom.dim() != model.geometry().dim() {
        return Err(FpmcError::validation("input dimension does not match model"));
    }
    let step = match (args.step, args.t) {
        (Some(s), None) => s,
        (None, Some(t)) => model.schedule().step_of(t)?,
        _ => return Err(FpmcError::validation("give exactly one of --step or --t")),
    };
    let out = model.denoise_at_step(zs.view(), step)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    tensor_io::write_tensor(&args.out, model.geometry(), &out)?;
    Ok(())
}

fn cmd_sample(args: SampleArgs, config: &serde_json::Value) -> Result<()> {
    if args.n == 0 {
        return Err(FpmcError::validation("--n must be >= 1"));
    }
    let model = FpmcModel::load(&args.model)?;
    let seed = args.seed.or_else(|| cfg_u64(config, "seed")).unwrap_or(0);
    let sampler = SamplerConfig {
        schedule: model.schedule().clone(),
        seed,
        batch: args.n,
    };
    let prior = crate::sampler::sample_prior(&sampler, model.geometry().dim());
    let noise_digest = digest_matrix(prior.view());
    let result = crate::sampler::heun_sample_from(&sampler, &model, prior, false)?;

    std::fs::create_dir_all(&args.out)?;
    tensor_io::write_tensor(&args.out.join("samples.bin"), model.geometry(), &result.samples)?;
    for (i, row) in result.samples.outer_iter().enumerate() {
        dataset::save_png(&args.out.join(format!("sample_{i:03}.png")), model.geometry(), row)?;
    }
    write_contact_sheet(&args.out.join("grid.png"), model.geometry(), &result.samples)?;

    let mut manifest = RunManifest::new(
        "sample",
        json!({
            "n": args.n,
            "grid": model.schedule().t_grid(),
            "denoiser_calls_per_sample": crate::sampler::denoiser_calls_for_grid(model.schedule().num_steps()),
        }),
        Some(seed),
    );
    manifest.add_dir_input(&args.model)?;
    manifest.add_fingerprint("initial_noise", noise_digest);
    manifest.add_fingerprint("samples", digest_matrix(result.samples.view()));
    manifest.write(&args.out)
}

fn write_contact_sheet(path: &Path, geom: ImageGeometry, samples: &Array2<f64>) -> Result<()> {
    let n = samples.nrows();
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let gap = 1usize;
    let sheet_w = cols * geom.width + (cols - 1) * gap;
    let sheet_h = rows * geom.height + (rows - 1) * gap;
    let sheet_geom = ImageGeometry::new(sheet_w, sheet_h, geom.channels)?;
    let mut flat = vec![-1.0f64; sheet_geom.dim()];
    for (i, row) in samples.outer_iter().enumerate() {
        let (cx, cy) = (i % cols, i / cols);
        let ox = cx * (geom.width + gap);
        let oy = cy * (geom.height + gap);
        for y in 0..geom.height {
            for x in 0..geom.width {
                for c in 0..geom.channels {
                    flat[sheet_geom.flat_index(ox + x, oy + y, c)] =
                        row[geom.flat_index(x, y, c)];
                }
            }
        }
    }
    let flat = ndarray::Array1::from_vec(flat);
    dataset::save_png(path, sheet_geom, flat.view())
}

fn cmd_finetune(args: FinetuneArgs, config: &serde_json::Value) -> Result<()> {
    let model = FpmcModel::load(&args.model)?;
    let target = load_denoiser_spec(&args.target, model.schedule())?;
    let validation = dataset::load_dataset_auto(&args.validation)?;
    let steps = parse_steps(&args.steps, model.num_steps())?;
    let mode = match args.mode.as_str() {
        "q" => TuneMode::QOnly,
        "r" => TuneMode::ROnly,
        "joint" => TuneMode::Joint,
        other => return Err(FpmcError::validation(format!("unknown mode {other:?}"))),
    };
    let seed = args.seed.or_else(|| cfg_u64(config, "seed")).unwrap_or(0);
    let ft_config = FinetuneConfig {
        loss_weight: args
            .loss_weight
            .or_else(|| cfg_f64(config, "loss_weight"))
            .unwrap_or(1.0),
        optimizer: AdamWConfig {
            learning_rate: args
                .learning_rate
                .or_else(|| cfg_f64(config, "learning_rate"))
                .unwrap_or(0.05),
            weight_decay: args
                .weight_decay
                .or_else(|| cfg_f64(config, "weight_decay"))
                .unwrap_or(0.0),
            ..AdamWConfig::default()
        },
        batch_size: args
            .batch_size
            .or_else(|| cfg_u64(config, "batch_size").map(|v| v as usize))
            .unwrap_or(256),
        max_steps: args
            .max_steps
            .or_else(|| cfg_u64(config, "max_steps").map(|v| v as usize))
            .unwrap_or(2000),
        mc_support_size: args.mc_support,
        seed,
    };

    std::fs::create_dir_all(args.out.join("logs"))?;
    let mut tuned = model.clone();
    let mut summaries = Vec::new();
    for &step in &steps {
        let outcome =
            finetune::finetune_run(&tuned, step, target.as_ref(), &validation, mode, &ft_config, None)?;
        finetune::write_log(&args.out.join(format!("logs/step{step:03}.jsonl")), &outcome.log)?;
        summaries.push(json!({
            "step": step,
            "best_val_mse": outcome.best_val_mse,
            "best_epoch": outcome.best_epoch,
        }));
        // No optimizer steps means nothing was learned; keep the baseline
        // step bit-exact instead of baking the soft initialization.
        if ft_config.max_steps > 0 {
            tuned = tuned.with_step_params(step, outcome.q, outcome.r)?;
        }
    }
    tuned.save(&args.out)?;

    let mut manifest = RunManifest::new(
        "finetune",
        json!({
            "target": args.target,
            "steps": steps,
            "mode": args.mode,
            "config": ft_config,
            "results": summaries,
        }),
        Some(seed),
    );
    manifest.add_dir_input(&args.model)?;
    manifest.add_input(&args.validation)?;
    manifest.write(&args.out)
}

fn cmd_augment(args: AugmentArgs, config: &serde_json::Value) -> Result<()> {
    let data = dataset::load_dataset_auto(&args.dataset)?;
    let seed = args.seed.or_else(|| cfg_u64(config, "seed")).unwrap_or(0);
    let target = match (args.count, args.percent) {
        (Some(c), None) => c,
        (None, Some(p)) => {
            if !(p > 0.0) {
                return Err(FpmcError::validation("--percent must be > 0"));
            }
            ((p / 100.0) * data.len() as f64).floor() as usize
        }
        _ => return Err(FpmcError::validation("give exactly one of --count or --percent")),
    };

    std::fs::create_dir_all(&args.out)?;
    let mut manifest_cfg = json!({
        "strategy": args.strategy,
        "target": target,
    });
    let union = if args.strategy == "synthetic" {
        let synth_path = args
            .synthetic
            .as_ref()
            .ok_or_else(|| FpmcError::validation("synthetic strategy needs --synthetic"))?;
        let synthetic = dataset::load_dataset_auto(synth_path)?;
        // Provenance check: the synthetic tensor may carry a seed manifest.
        let seed_file = synth_path.with_extension("seed.json");
        if let Some(reserved) = &args.reserved_seeds {
            let reserved = parse_u64_list(reserved)?;
            if seed_file.is_file() {
                let sm = SeedManifest::read(&seed_file)?;
                augment::check_seed_disjoint(sm.seed, &reserved)?;
            }
        }
        augment::ingest_synthetic(&data, &synthetic, target)?
    } else {
        let strategy = Strategy::parse(&args.strategy)?;
        let plan = AugmentPlan::new(strategy, target, seed);
        let (union, ledger) = augment::build_augmented(&data, &plan)?;
        augment::write_ledger(&args.out.join("labels.jsonl"), &ledger)?;
        manifest_cfg["pool_per_image"] = json!(plan.pool_per_image);
        union
    };
    union.save(&args.out.join("dataset.bin"))?;

    let mut manifest = RunManifest::new("augment", manifest_cfg, Some(seed));
    manifest.add_input(&args.dataset)?;
    if let Some(s) = &args.synthetic {
        manifest.add_input(s)?;
    }
    manifest.write(&args.out)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (_, a) = tensor_io::read_tensor(&args.samples)?;
    let (_, b) = tensor_io::read_tensor(&args.reference)?;
    let report = sample_similarity(a.view(), b.view())?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    std::fs::write(
        args.out.join("report.txt"),
        eval::report_text(
            &args.samples.display().to_string(),
            &args.reference.display().to_string(),
            &report,
        ),
    )?;
    let mut manifest = RunManifest::new("eval", json!({}), None);
    manifest.add_input(&args.samples)?;
    manifest.add_input(&args.reference)?;
    manifest.write(&args.out)
}

fn cmd_sweep(args: SweepArgs, config: &serde_json::Value) -> Result<()> {
    let sched = args.grid.resolve()?;
    let denoiser = load_denoiser_spec(&args.denoiser, &sched)?;
    let target = load_denoiser_spec(&args.target, &sched)?;
    let data = dataset::load_dataset_auto(&args.data)?;
    let t_list = match &args.t_list {
        Some(s) => parse_f64_list(s)?,
        None => sched.t_grid().to_vec(),
    };
    let seed = args.seed.or_else(|| cfg_u64(config, "seed")).unwrap_or(0);
    let sweep = eval::denoiser_error_sweep(
        denoiser.as_ref(),
        target.as_ref(),
        &data,
        &sched,
        &t_list,
        args.n_per_t,
        seed,
    )?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("sweep.json"), serde_json::to_vec_pretty(&sweep)?)?;
    std::fs::write(args.out.join("sweep.csv"), eval::sweep_csv(&sweep))?;
    if let Some(baseline_path) = &args.baseline {
        let baseline: Vec<eval::SweepPoint> =
            serde_json::from_slice(&std::fs::read(baseline_path)?)?;
        let rel = eval::relative_error_change(&baseline, &sweep)?;
        let mut csv = String::from("t,percent_change\n");
        for (t, pct) in &rel {
            csv.push_str(&format!("{t},{pct}\n"));
        }
        std::fs::write(args.out.join("relative.csv"), csv)?;
        std::fs::write(args.out.join("relative.json"), serde_json::to_vec_pretty(&rel)?)?;
    }
    let mut manifest = RunManifest::new(
        "sweep",
        json!({
            "denoiser": args.denoiser,
            "target": args.target,
            "t_list": t_list,
            "n_per_t": args.n_per_t,
        }),
        Some(seed),
    );
    manifest.add_input(&args.data)?;
    manifest.write(&args.out)
}

fn cmd_export_masks(args: ExportMasksArgs) -> Result<()> {
    let model = FpmcModel::load(&args.model)?;
    let step = model.step(args.step)?;
    let matrix = match args.which.as_str() {
        "q" => &step.q,
        "r" => &step.r,
        other => return Err(FpmcError::validation(format!("--which must be q or r, got {other:?}"))),
    };
    let indices: Vec<usize> = match args.index {
        Some(i) if i < matrix.nrows() => vec![i],
        Some(i) => {
            return Err(FpmcError::validation(format!(
                "estimator index {i} out of range ({} estimators)",
                matrix.nrows()
            )))
        }
        None => (0..matrix.nrows()).collect(),
    };
    std::fs::create_dir_all(&args.out)?;
    for &i in &indices {
        let row = matrix.row(i);
        let max = row.iter().cloned().fold(0.0f64, f64::max);
        let geom = model.geometry();
        let path = args.out.join(format!("{}_step{:03}_est{:05}.png", args.which, args.step, i));
        dataset::save_png_bytes(&path, geom, |flat| {
            if max > 0.0 {
                (row[flat] / max * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })?;
    }
    let mut manifest = RunManifest::new(
        "export-masks",
        json!({ "step": args.step, "which": args.which, "count": indices.len() }),
        None,
    );
    manifest.add_dir_input(&args.model)?;
    manifest.write(&args.out)
}
