use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use umind::lm_core::LmTrainer;
use umind::motion_codec::MotionCodec;
use umind::pipeline::{
    ablate_with, baseline_report, build_dataset, evaluate_sets, generate_all, instruct_tune, load_motion_set, prepare_shared,
    save_generations, train_codec, Ablation, DataBundle, Dataset, ExperimentConfig, PromptSpec, DATASET_FILE,
};
use umind::synthdata::Split;
use umind::Error;

const DATA_DIR_ENV: &str = "UMIND_DATA_DIR";
const CHECKPOINT_DIR: &str = "checkpoint";
const METRICS_FILE: &str = "metrics.json";

#[derive(Parser, Debug)]
#[command(name = "umind", version = env!("UMIND_VERSION"), about = "Unified text/speech/motion token pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (JSON); defaults apply to omitted fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Generation worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Single-threaded kernels and fixed reduction order.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Run directory for this command's outputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus plus instruction and rehearsal records.
    GenData,
    /// Train the residual motion codec.
    TrainCodec {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Segment, recombine and tokenize the corpus into training examples.
    BuildDataset {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory of `train-codec`.
        #[arg(long)]
        codec: PathBuf,
    },
    /// Stage-1 mixture training.
    Pretrain {
        /// Run directory of `build-dataset`.
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Stage-2 instruction tuning from a stage-1 run.
    InstructTune {
        #[arg(long)]
        dataset: PathBuf,
        /// Run directory of `pretrain`.
        #[arg(long)]
        from: PathBuf,
    },
    /// Constrained generation for a JSON list of prompts.
    Generate {
        /// Run directory of `pretrain` or `instruct-tune`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        /// Keep the think section in transcripts.
        #[arg(long)]
        show_think: bool,
    },
    /// Motion metrics of a generated set against a reference set.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Train and evaluate an ablated variant next to the full model.
    Ablate {
        /// One of wo-seg, wo-cot, wo-text-first, wo-rehearsal.
        flag: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainCodec { .. } => "train-codec",
            Command::BuildDataset { .. } => "build-dataset",
            Command::Pretrain { .. } => "pretrain",
            Command::InstructTune { .. } => "instruct-tune",
            Command::Generate { .. } => "generate",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate { .. } => "ablate",
        }
    }
}

/// Exit status per error class.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) | Some(Error::InvalidArgument(_)) => 2,
        Some(Error::InputMissing(_)) => 3,
        Some(Error::CorruptCorpus(_)) | Some(Error::CheckpointFormat { .. }) | Some(Error::Json(_)) => 4,
        Some(Error::GrammarViolation { .. })
        | Some(Error::SectionKind { .. })
        | Some(Error::InvalidToken(_))
        | Some(Error::InvalidId { .. })
        | Some(Error::InvalidRecord(_)) => 5,
        Some(Error::TrainingDiverged { .. }) | Some(Error::Numerical(_)) => 6,
        Some(Error::GenerationTruncated { .. }) | Some(Error::ContextOverflow { .. }) => 7,
        Some(Error::Io(_)) => 8,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            if !path.exists() {
                return Err(Error::InputMissing(path.clone()).into());
            }
            let raw = fs::read(path).map_err(Error::from)?;
            serde_json::from_slice(&raw)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn data_dir(explicit: Option<PathBuf>) -> Result<PathBuf> {
    match explicit.or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)) {
        Some(p) => Ok(p),
        None => Err(Error::Config(format!("no corpus directory: pass --data or set {DATA_DIR_ENV}")).into()),
    }
}

fn require_dir(p: &Path) -> Result<()> {
    if !p.exists() {
        return Err(Error::InputMissing(p.to_path_buf()).into());
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(Error::from)?;
    Ok(())
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(Error::from)?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(Error::from)?;
    Ok(())
}

/// Config echo and invocation record so the directory can be re-run.
fn write_run_record(out: &Path, cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(out).map_err(Error::from)?;
    write_json(&out.join("config.json"), cfg)?;
    let record = json!({
        "command": cli.command.name(),
        "args": format!("{:?}", cli.command),
        "seed": cfg.seed,
        "workers": cli.common.workers,
        "deterministic": cli.common.deterministic,
        "version": env!("UMIND_VERSION"),
    });
    write_json(&out.join("run.json"), &record)
}

fn load_codec(run_dir: &Path, cfg: &ExperimentConfig) -> Result<MotionCodec> {
    let dir = run_dir.join(CHECKPOINT_DIR);
    require_dir(&dir)?;
    let (codec, _, _) = MotionCodec::load(&dir)?;
    if codec.config() != &cfg.codec {
        return Err(Error::Config(format!("codec checkpoint {} was trained with a different codec config", dir.display())).into());
    }
    Ok(codec)
}

fn load_trainer(run_dir: &Path, cfg: &ExperimentConfig, adam: umind::nn::AdamConfig) -> Result<LmTrainer> {
    let dir = run_dir.join(CHECKPOINT_DIR);
    require_dir(&dir)?;
    let trainer = LmTrainer::load(&dir, adam)?;
    if trainer.model.config().vocab_size != cfg.layout()?.vocab_size() {
        return Err(Error::Config(format!("model in {} does not match the configured vocabulary", dir.display())).into());
    }
    Ok(trainer)
}

fn run(cli: Cli) -> Result<()> {
    if cli.common.deterministic {
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
    let cfg = load_config(&cli.common)?;
    let workers = if cli.common.deterministic { 1 } else { cli.common.workers.max(1) };
    let out = match (&cli.common.out, &cli.command) {
        (Some(o), _) => o.clone(),
        (None, Command::GenData) => data_dir(None)?,
        (None, _) => bail!(Error::Config("--out is required".into())),
    };
    write_run_record(&out, &cli, &cfg)?;
    match &cli.command {
        Command::GenData => {
            let bundle = DataBundle::generate(&cfg)?;
            bundle.save(&out)?;
            log::info!(
                "wrote {} clips, {} instruction and {} rehearsal records to {}",
                bundle.corpus.clips.len(),
                bundle.instruct.len(),
                bundle.rehearsal.len(),
                out.display()
            );
        }
        Command::TrainCodec { data } => {
            let data = DataBundle::load(&data_dir(data.clone())?)?;
            let (trainer, reports) = train_codec(&cfg, &data.corpus.split(Split::Train))?;
            trainer.save(&out.join(CHECKPOINT_DIR))?;
            write_jsonl(&out.join("train_log.jsonl"), &reports)?;
            if let Some(last) = reports.last() {
                write_json(&out.join("report.json"), last)?;
            }
        }
        Command::BuildDataset { data, codec } => {
            let data = DataBundle::load(&data_dir(data.clone())?)?;
            let codec = load_codec(codec, &cfg)?;
            let dataset = build_dataset(&cfg, &data, &codec)?;
            dataset.save(&out.join(DATASET_FILE))?;
            write_json(
                &out.join("summary.json"),
                &json!({
                    "aligned": dataset.aligned.len(),
                    "instruct_train": dataset.instruct_train.len(),
                    "instruct_test": dataset.instruct_test.len(),
                    "rehearsal": dataset.rehearsal.len(),
                    "dropped_over_budget": dataset.dropped_over_budget,
                    "segmented": dataset.segmented,
                }),
            )?;
        }
        Command::Pretrain { dataset } => {
            let dataset = Dataset::load(&dataset.join(DATASET_FILE))?;
            let (trainer, reports) = umind::pipeline::pretrain(&cfg, &dataset)?;
            trainer.save(&out.join(CHECKPOINT_DIR))?;
            write_jsonl(&out.join("train_log.jsonl"), &reports)?;
        }
        Command::InstructTune { dataset, from } => {
            let dataset = Dataset::load(&dataset.join(DATASET_FILE))?;
            let stage1 = load_trainer(from, &cfg, cfg.stage1.adam)?;
            let (trainer, reports) = instruct_tune(&cfg, &dataset, stage1)?;
            trainer.save(&out.join(CHECKPOINT_DIR))?;
            write_jsonl(&out.join("train_log.jsonl"), &reports)?;
        }
        Command::Generate {
            model,
            codec,
            prompts,
            show_think,
        } => {
            require_dir(prompts)?;
            let specs: Vec<PromptSpec> = serde_json::from_slice(&fs::read(prompts).map_err(Error::from)?)
                .map_err(|e| Error::InvalidRecord(format!("{}: {e}", prompts.display())))?;
            let trainer = load_trainer(model, &cfg, cfg.stage2.adam)?;
            let codec = load_codec(codec, &cfg)?;
            let mut generated = generate_all(&cfg, &trainer.model, &codec, &specs, workers, *show_think)?;
            save_generations(&out, &mut generated)?;
            let truncated = generated.iter().filter(|g| g.record.truncated).count();
            log::info!("generated {} responses ({truncated} truncated)", generated.len());
        }
        Command::Evaluate { generated, reference } => {
            let gen = load_motion_set(generated)?;
            let refs = load_motion_set(reference)?;
            let report = evaluate_sets(&cfg, &gen, &refs)?;
            write_json(&out.join(METRICS_FILE), &report)?;
            println!("{:<12} {:>10} {:>16} {:>12}", "Set", "FGD ↓", "Angle Error ↓", "Diversity ↑");
            let angle = report.angle_error.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
            println!("{:<12} {:>10.4} {:>16} {:>12.4}", "generated", report.fgd, angle, report.diversity);
        }
        Command::Ablate { flag } => {
            let ablation = Ablation::parse(flag)?;
            let shared = prepare_shared(&cfg)?;
            let baseline = baseline_report(&cfg, &shared)?;
            let table = ablate_with(&cfg, &shared, ablation, workers)?;
            write_json(&out.join(METRICS_FILE), &json!({ "table": table, "random_token_baseline": baseline }))?;
            print!("{}", table.render());
        }
    }
    Ok(())
}
