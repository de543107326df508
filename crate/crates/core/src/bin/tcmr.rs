use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use tcmr::bodymodel::BodyModel;
use tcmr::pipeline::ablate::{
    all_variants, architecture_variants, with_current_variant, AblationData, Variant,
};
use tcmr::pipeline::gradsuite::{run_gradient_suite, suite_to_text, SuiteConfig};
use tcmr::pipeline::plotdata::{accel_traces, summarize, summary_to_csv, traces_to_csv};
use tcmr::pipeline::train::EpochLog;
use tcmr::pipeline::{
    ablate, evaluate, evaluate_predictions, ground_truth_predictions, smooth_predictions, train,
    Checkpoint, Manifest, Predictions, RunConfig,
};
use tcmr::synthdata::{generate_split, Dataset, Split};

#[derive(Parser)]
#[command(
    name = "tcmr",
    version,
    about = "Temporal body-model regression on synthetic motion"
)]
struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train, val and eval splits into a directory.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed of the generator; defaults to the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model and keep the checkpoint with the best validation PA-MPJPE.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding train.tcds and optionally val.tcds; defaults to the config paths.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint or a predictions file on a dataset.
    Eval {
        #[arg(long, required_unless_present = "pred", conflicts_with = "pred")]
        checkpoint: Option<PathBuf>,
        /// Predictions file to score instead of running a model.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Dataset file, or a directory holding eval.tcds.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Per-sequence table.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also write the model's predictions.
        #[arg(long, requires = "checkpoint")]
        save_pred: Option<PathBuf>,
        /// Body model document; defaults to the checkpoint's, else the bundled model.
        #[arg(long)]
        body_model: Option<PathBuf>,
    },
    /// Train and score architecture variants over several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding train.tcds, eval.tcds and optionally val.tcds.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long, value_enum, default_value_t = VariantSet::All)]
        variants: VariantSet,
        /// Run variants and seeds concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Average-filter a predictions file.
    Smooth {
        #[arg(long)]
        pred: PathBuf,
        /// Odd window length in frames.
        #[arg(long, default_value_t = 5)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable operation and the full training chain.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-frame acceleration-error traces of one or more prediction files.
    ExportPlotdata {
        /// Dataset file, or a directory holding eval.tcds.
        #[arg(long)]
        data: PathBuf,
        /// `name=path` of a predictions file; repeatable.
        #[arg(long = "pred", value_parser = parse_named, required = true)]
        preds: Vec<(String, PathBuf)>,
        /// Leave out the ground-truth trace.
        #[arg(long)]
        no_ground_truth: bool,
        #[arg(long)]
        out: PathBuf,
        /// Per-method median and spike counts.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long, default_value_t = tcmr::pipeline::plotdata::SPIKE_FACTOR)]
        spike_factor: f64,
        #[arg(long)]
        body_model: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantSet {
    /// Residual and forecasting grid only.
    Architecture,
    /// The grid plus forecasting branches that see the current frame.
    Current,
    /// Everything, including the side-supervision variants.
    All,
}

fn parse_named(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("expected name=path, got {s:?}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenData { out, config, seed } => gen_data(&out, config.as_deref(), seed)?,
        Command::Train {
            config,
            data,
            out,
            seed,
        } => train_cmd(config.as_deref(), data.as_deref(), &out, seed)?,
        Command::Eval {
            checkpoint,
            pred,
            data,
            report,
            csv,
            save_pred,
            body_model,
        } => eval_cmd(
            checkpoint.as_deref(),
            pred.as_deref(),
            &data,
            &report,
            csv.as_deref(),
            save_pred.as_deref(),
            body_model.as_deref(),
        )?,
        Command::Ablate {
            config,
            data,
            out,
            seeds,
            variants,
            parallel,
        } => ablate_cmd(
            config.as_deref(),
            data.as_deref(),
            &out,
            &seeds,
            variants,
            parallel,
        )?,
        Command::Smooth { pred, window, out } => smooth_cmd(&pred, window, &out)?,
        Command::Gradcheck {
            instances,
            seed,
            out,
        } => return gradcheck_cmd(instances, seed, out.as_deref()),
        Command::ExportPlotdata {
            data,
            preds,
            no_ground_truth,
            out,
            summary,
            spike_factor,
            body_model,
        } => plotdata_cmd(
            &data,
            &preds,
            !no_ground_truth,
            &out,
            summary.as_deref(),
            spike_factor,
            body_model.as_deref(),
        )?,
    }
    Ok(ExitCode::SUCCESS)
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<(RunConfig, BodyModel)> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let body = cfg.body_model()?;
    cfg.validate(&body)?;
    Ok((cfg, body))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(out: &Path, config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let (cfg, body) = load_config(config, seed)?;
    let splits = Split::ALL
        .iter()
        .filter(|s| s.count(&cfg.data) > 0)
        .map(|&s| Ok((s, generate_split(&body, &cfg.data, cfg.seed, s)?)))
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    let mut manifest = Manifest::new("gen-data");
    manifest.seeds = vec![cfg.seed];
    manifest.config = Some(cfg);
    for (split, mut ds) in splits {
        let path = out.join(split.file_name());
        ds.save(&path)?;
        log::info!("wrote {} ({} sequences)", path.display(), ds.len());
        manifest.outputs.push(path);
    }
    manifest.write_beside(out)?;
    Ok(())
}

/// `dir/<split>.tcds` if `dir` is a directory, else `dir` itself.
fn split_path(data: &Path, split: Split) -> PathBuf {
    if data.is_dir() {
        data.join(split.file_name())
    } else {
        data.to_path_buf()
    }
}

fn split_from(dir: Option<&Path>, configured: Option<&PathBuf>, split: Split) -> Option<PathBuf> {
    match dir {
        Some(d) => Some(d.join(split.file_name())),
        None => configured.cloned(),
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn optional_dataset(path: Option<PathBuf>) -> Result<Option<(PathBuf, Dataset)>> {
    match path {
        Some(p) if p.exists() => Ok(Some((p.clone(), load_dataset(&p)?))),
        _ => Ok(None),
    }
}

fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,mean_loss,batches,skipped_batches,learning_rate,val_pa_mpjpe_mm,val_accel_err_mm_s2\n");
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
    for e in log {
        writeln!(
            s,
            "{},{:.6},{},{},{:e},{},{}",
            e.epoch,
            e.mean_loss,
            e.batches,
            e.skipped_batches,
            e.learning_rate,
            opt(e.val_pa_mpjpe_mm),
            opt(e.val_accel_err_mm_s2)
        )
        .unwrap();
    }
    s
}

fn train_cmd(
    config: Option<&Path>,
    data: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let (cfg, body) = load_config(config, seed)?;
    let train_path = split_from(data, cfg.paths.train.as_ref(), Split::Train)
        .context("no training data: pass --data or set paths.train")?;
    let train_set = load_dataset(&train_path)?;
    let val = optional_dataset(split_from(data, cfg.paths.val.as_ref(), Split::Val))?;
    if val.is_none() {
        log::warn!("no validation split; keeping the last epoch");
    }
    let body = Arc::new(body);
    let outcome = train(&cfg, body, &train_set, val.as_ref().map(|v| &v.1))?;
    create_dir(out)?;
    let best = out.join("best.tcck");
    let last = out.join("last.tcck");
    outcome.best.save(&best)?;
    outcome.last.save(&last)?;
    let log_path = out.join("training_log.csv");
    write(&log_path, &log_csv(&outcome.log))?;
    let cfg_path = out.join("config.toml");
    write(&cfg_path, &cfg.to_toml())?;
    let mut manifest = Manifest::new("train").input(&train_path)?;
    if let Some((p, _)) = &val {
        manifest = manifest.input(p)?;
    }
    manifest.seeds = vec![cfg.seed];
    manifest.config = Some(cfg);
    manifest.outputs = vec![best, last, log_path, cfg_path];
    manifest.write_beside(out)?;
    match outcome.best.best_val_pa_mpjpe {
        Some(v) => log::info!(
            "best epoch {} (validation PA-MPJPE {v:.3} mm)",
            outcome.best.epoch
        ),
        None => log::info!("kept epoch {}", outcome.best.epoch),
    }
    Ok(())
}

fn resolve_body(
    explicit: Option<&Path>,
    from_config: Option<&RunConfig>,
) -> Result<Arc<BodyModel>> {
    let body = match (explicit, from_config) {
        (Some(p), _) => BodyModel::load(p)?,
        (None, Some(cfg)) => cfg.body_model()?,
        (None, None) => BodyModel::default_model(),
    };
    Ok(Arc::new(body))
}

fn eval_cmd(
    checkpoint: Option<&Path>,
    pred: Option<&Path>,
    data: &Path,
    report_path: &Path,
    csv: Option<&Path>,
    save_pred: Option<&Path>,
    body_model: Option<&Path>,
) -> Result<()> {
    let data_path = split_path(data, Split::Eval);
    let ds = load_dataset(&data_path)?;
    let mut manifest = Manifest::new("eval").input(&data_path)?;
    let report = match (checkpoint, pred) {
        (Some(ck), _) => {
            let ckpt = Checkpoint::load(ck)
                .with_context(|| format!("loading checkpoint {}", ck.display()))?;
            let body = resolve_body(body_model, Some(&ckpt.config))?;
            let model = ckpt.to_model(body)?;
            let (preds, report) = evaluate(&model, &ds)?;
            debug_assert_eq!(model.side_estimate_count(), 0);
            if let Some(p) = save_pred {
                preds.save(p)?;
                manifest.outputs.push(p.to_path_buf());
            }
            manifest = manifest.input(ck)?;
            manifest.seeds = vec![ckpt.config.seed];
            manifest.config = Some(ckpt.config);
            report
        }
        (None, Some(p)) => {
            let preds = Predictions::load(p)?;
            let body = resolve_body(body_model, None)?;
            manifest = manifest.input(p)?;
            evaluate_predictions(&body, &ds, &preds)?
        }
        (None, None) => bail!("pass --checkpoint or --pred"),
    };
    write(report_path, &report.to_text())?;
    manifest.outputs.push(report_path.to_path_buf());
    if let Some(c) = csv {
        write(c, &report.to_csv())?;
        manifest.outputs.push(c.to_path_buf());
    }
    manifest.write_beside(report_path)?;
    print!("{}", report.to_text());
    Ok(())
}

fn ablate_cmd(
    config: Option<&Path>,
    data: Option<&Path>,
    out: &Path,
    seeds: &[u64],
    set: VariantSet,
    parallel: bool,
) -> Result<()> {
    let (cfg, body) = load_config(config, None)?;
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    let train_path =
        split_from(data, cfg.paths.train.as_ref(), Split::Train).context("no training data")?;
    let eval_path =
        split_from(data, cfg.paths.eval.as_ref(), Split::Eval).context("no evaluation data")?;
    let train_set = load_dataset(&train_path)?;
    let eval_set = load_dataset(&eval_path)?;
    let val = optional_dataset(split_from(data, cfg.paths.val.as_ref(), Split::Val))?;
    let variants: Vec<Variant> = match set {
        VariantSet::Architecture => architecture_variants(),
        VariantSet::Current => {
            let mut v = architecture_variants();
            v.push(with_current_variant());
            v
        }
        VariantSet::All => all_variants(),
    };
    let data = AblationData {
        train: &train_set,
        val: val.as_ref().map(|v| &v.1),
        eval: &eval_set,
    };
    let table = ablate(&cfg, Arc::new(body), &data, &variants, seeds, parallel);
    create_dir(&out.join("predictions"))?;
    let mut manifest = Manifest::new("ablate")
        .input(&train_path)?
        .input(&eval_path)?;
    if let Some((p, _)) = &val {
        manifest = manifest.input(p)?;
    }
    for row in &table.rows {
        for run in &row.runs {
            if let Ok(r) = &run.result {
                let p = out
                    .join("predictions")
                    .join(format!("{}_seed{}.json", row.variant.name, run.seed));
                r.predictions.save(&p)?;
                manifest.outputs.push(p);
            }
        }
    }
    let md = out.join("table.md");
    write(&md, &table.to_markdown())?;
    let runs = out.join("runs.csv");
    write(&runs, &table.to_csv())?;
    manifest.outputs.extend([md, runs]);
    manifest.seeds = seeds.to_vec();
    manifest.config = Some(cfg);
    manifest = manifest.setting(
        "variants",
        variants
            .iter()
            .map(|v| v.name.as_str())
            .collect::<Vec<_>>()
            .join(","),
    );
    manifest = manifest.setting("parallel", parallel);
    manifest.write_beside(out)?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn smooth_cmd(pred: &Path, window: usize, out: &Path) -> Result<()> {
    let preds = Predictions::load(pred)?;
    let smoothed = smooth_predictions(&preds, window)?;
    smoothed.save(out)?;
    let mut manifest = Manifest::new("smooth")
        .input(pred)?
        .setting("window", window);
    manifest.outputs.push(out.to_path_buf());
    manifest.write_beside(out)?;
    Ok(())
}

fn gradcheck_cmd(instances: usize, seed: u64, out: Option<&Path>) -> Result<ExitCode> {
    let cfg = SuiteConfig {
        instances,
        seed,
        ..SuiteConfig::default()
    };
    let results = run_gradient_suite(&cfg)?;
    let text = suite_to_text(&results, cfg.tolerance);
    print!("{text}");
    if let Some(p) = out {
        write(p, &text)?;
        let mut manifest = Manifest::new("gradcheck")
            .setting("instances", instances)
            .setting("step", cfg.step);
        manifest.seeds = vec![seed];
        manifest.outputs.push(p.to_path_buf());
        manifest.write_beside(p)?;
    }
    Ok(if results.iter().all(|r| r.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn plotdata_cmd(
    data: &Path,
    preds: &[(String, PathBuf)],
    with_gt: bool,
    out: &Path,
    summary: Option<&Path>,
    spike_factor: f64,
    body_model: Option<&Path>,
) -> Result<()> {
    let data_path = split_path(data, Split::Eval);
    let ds = load_dataset(&data_path)?;
    let body = resolve_body(body_model, None)?;
    let mut manifest = Manifest::new("export-plotdata")
        .input(&data_path)?
        .setting("spike_factor", spike_factor);
    let mut rows = Vec::new();
    for (name, path) in preds {
        let p = Predictions::load(path)?;
        rows.extend(accel_traces(&body, &ds, name, &p)?);
        manifest = manifest.input(path)?;
        if with_gt && rows.iter().all(|r| r.method != "ground_truth") {
            rows.extend(accel_traces(
                &body,
                &ds,
                "ground_truth",
                &ground_truth_predictions(&ds, p.window),
            )?);
        }
    }
    write(out, &traces_to_csv(&rows))?;
    manifest.outputs.push(out.to_path_buf());
    let table = summary_to_csv(&summarize(&rows, spike_factor), spike_factor);
    if let Some(s) = summary {
        write(s, &table)?;
        manifest.outputs.push(s.to_path_buf());
    }
    print!("{table}");
    manifest.write_beside(out)?;
    Ok(())
}
