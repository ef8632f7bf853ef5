mod flags;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mabn_core::{
    ablation_study, caption, caption_inputs, decoder_label, dump, evaluate, export_attention, train, Checkpoint,
    SampleInputs, TrainConfig,
};
use mabn_dataset::{tokenize, Dataset, GenConfig, Image, Split};
use mabn_metrics::{bleu_with, evaluate_corpus, pairs_from_records, render_table, BleuOptions, ScoreRecord, TableRow};
use serde_json::Value;

/// Mean targets per image that a generated corpus must land near.
const CALIBRATION: (f64, f64) = (3.4, 0.5);
/// Corpora smaller than this are too noisy for the calibration check.
const CALIBRATION_MIN_SCENES: usize = 100;

#[derive(Parser)]
#[command(name = "multiabn", version, about = "Generate fetching instructions from multi-view scenes")]
struct Cli {
    /// Seed for dataset generation and training; other commands are deterministic and ignore it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic multi-view corpus into a directory.
    GenerateDataset(GenerateArgs),
    /// Train a model; any config field can be overridden with --key value.
    Train(TrainArgs),
    /// Decode a split and print the score table.
    Evaluate(EvaluateArgs),
    /// Decode instructions for dataset samples or for image files.
    Caption(CaptionArgs),
    /// Write per-word attention heatmaps for one sample.
    ExportAttention(ExportArgs),
    /// List the contents of a checkpoint file.
    DumpCheckpoint {
        path: PathBuf,
    },
    /// Score {candidate, references} records from a JSON file.
    Score(ScoreArgs),
    /// Train the full model and both single-branch variants and compare them.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    scenes: usize,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    views: Option<usize>,
    /// Reference instructions per target.
    #[arg(long)]
    references: Option<usize>,
    /// Print statistics as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON file with TrainConfig fields; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path, also used for periodic saves.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run report path (default: <out>.report.json).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Config overrides such as `--lr 1e-3 --model.hidden 32 --dataset data/`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "val")]
    split: Split,
    /// Beam width; 1 decodes greedily.
    #[arg(long, default_value_t = 1)]
    beam: usize,
    #[arg(long)]
    json: bool,
    /// Also write every prediction with its references as JSON.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct CaptionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Sample ids to caption (repeatable).
    #[arg(long)]
    sample: Vec<usize>,
    /// Caption every sample of a split.
    #[arg(long, conflicts_with = "sample")]
    split: Option<Split>,
    /// One PPM file per view, in view order.
    #[arg(long, num_args = 1.., conflicts_with_all = ["dataset", "sample", "split"])]
    images: Vec<PathBuf>,
    /// Target box in view 1 as x,y,w,h.
    #[arg(long, requires = "images")]
    target: Option<String>,
    /// Source box in view 1 as x,y,w,h.
    #[arg(long, requires = "images")]
    source: Option<String>,
    #[arg(long, default_value_t = 1)]
    beam: usize,
    /// Print token ids and per-token log-probabilities as JSON lines.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    sample: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// JSON array of {"candidate": ..., "references": [...]} records.
    input: PathBuf,
    #[arg(long)]
    json: bool,
    /// Add-one smoothing for the higher-order BLEU precisions.
    #[arg(long)]
    smooth: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "val")]
    split: Split,
    #[arg(long, default_value_t = 1)]
    beam: usize,
    /// Write the three run reports and evaluations here as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn one_line(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg.replace('\n', " ")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateDataset(a) => generate(a, cli.seed.unwrap_or(0)),
        Command::Train(a) => cmd_train(a, cli.seed),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Caption(a) => cmd_caption(a),
        Command::ExportAttention(a) => cmd_export(a),
        Command::DumpCheckpoint { path } => {
            let bytes = std::fs::read(&path).with_context(|| format!("{}", path.display()))?;
            print!("{}", dump(&bytes).with_context(|| format!("{}", path.display()))?);
            Ok(())
        }
        Command::Score(a) => cmd_score(a),
        Command::Ablate(a) => cmd_ablate(a, cli.seed),
    }
}

fn generate(a: GenerateArgs, seed: u64) -> Result<()> {
    let mut gen = GenConfig::default();
    if let Some(s) = a.image_size {
        gen.image_size = s;
    }
    if let Some(v) = a.views {
        gen.views = v;
    }
    if let Some(r) = a.references {
        gen.references_per_target = r;
    }
    let ds = Dataset::generate(seed, &gen, a.scenes)?;
    let stats = ds.stats();
    let (centre, band) = CALIBRATION;
    let checked = a.scenes >= CALIBRATION_MIN_SCENES;
    if checked && (stats.targets_per_image - centre).abs() > band {
        bail!(
            "calibration failure: {:.2} targets per image is outside {centre}±{band}; nothing was written",
            stats.targets_per_image
        );
    }
    let digest = ds.save(&a.out)?;
    if a.json {
        let mut v = serde_json::to_value(&stats)?;
        v["digest"] = Value::String(digest);
        v["seed"] = seed.into();
        v["calibration_checked"] = checked.into();
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        println!("dataset written to {}", a.out.display());
        println!("scenes: {} ({} views each)", stats.scenes, gen.views);
        println!("samples: {} (train {}, val {})", stats.samples, ds.train.len(), ds.val.len());
        println!("references: {}", stats.references);
        println!("targets/image: {:.2}", stats.targets_per_image);
        println!("words/instruction: {:.2}", stats.words_per_instruction);
        println!("vocabulary: {} words", stats.vocab_size);
        if !checked {
            println!("calibration: not checked (fewer than {CALIBRATION_MIN_SCENES} scenes)");
        }
        println!("digest: {digest}");
    }
    Ok(())
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{}: invalid JSON", path.display()))
}

/// Loads the config file (if any), applies overrides and the global seed.
fn train_config(file: Option<PathBuf>, pairs: &[(String, String)], seed: Option<u64>) -> Result<TrainConfig> {
    let mut v = match &file {
        Some(p) => read_json(p)?,
        None => Value::Object(Default::default()),
    };
    for (k, raw) in pairs {
        flags::apply(&mut v, k, raw)?;
    }
    if let Some(s) = seed {
        v["seed"] = s.into();
    }
    let cfg: TrainConfig = serde_json::from_value(v).context("invalid training config")?;
    cfg.validate()?;
    Ok(cfg)
}

/// CLI-level options may also appear after the first override, where clap
/// leaves them in the trailing list.
fn path_opt(slot: Option<PathBuf>, pairs: &mut Vec<(String, String)>, key: &str) -> Option<PathBuf> {
    slot.or_else(|| flags::take(pairs, key).map(PathBuf::from))
}

fn load_dataset(cfg: &TrainConfig) -> Result<Dataset> {
    let dir = cfg.dataset.as_ref().context("no dataset given (set \"dataset\" in the config or pass --dataset DIR)")?;
    Ok(Dataset::load(dir)?)
}

fn cmd_train(a: TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut pairs = flags::pairs(&a.overrides)?;
    let config = path_opt(a.config, &mut pairs, "config");
    let out = path_opt(a.out, &mut pairs, "out").context("--out CHECKPOINT is required")?;
    let report_path =
        path_opt(a.report, &mut pairs, "report").unwrap_or_else(|| out.with_extension("report.json"));
    let resume = path_opt(a.resume, &mut pairs, "resume");
    let cfg = train_config(config, &pairs, seed)?;
    let ds = load_dataset(&cfg)?;
    let start = resume.as_deref().map(Checkpoint::load).transpose()?;
    let outcome = train(&ds, &cfg, start, Some(&out))?;
    let report = &outcome.report;
    std::fs::write(&report_path, serde_json::to_string_pretty(report)?)
        .with_context(|| format!("{}", report_path.display()))?;

    println!("checkpoint: {} (step {})", out.display(), outcome.checkpoint.step);
    println!("report: {}", report_path.display());
    if let Some(last) = report.losses.last() {
        println!(
            "final loss: L {:.4}, L_per {:.4}, L_att {:.4}",
            last.total, last.perception, last.attention
        );
    }
    println!(
        "steps this run: {}{}, wall clock {:.1} s",
        report.losses.len(),
        if report.stopped_early { " (stopped early)" } else { "" },
        report.wall_clock_secs
    );
    let label = cfg.ablation.method_label();
    for (split, scores) in &report.scores {
        let notes = vec![format!("split: {split}, decoder: {}", decoder_label(cfg.beam))];
        print!("\n{}", render_table(&[TableRow { method: &label, scores }], &notes));
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let ds = Dataset::load(&a.dataset)?;
    let ev = evaluate(&ckpt, &ds, a.split, a.beam)?;
    if let Some(p) = &a.predictions {
        std::fs::write(p, serde_json::to_string_pretty(&ev.predictions)?).with_context(|| format!("{}", p.display()))?;
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&ev)?);
        return Ok(());
    }
    let label = ckpt.model.config().ablation.method_label();
    let notes = vec![
        format!("split: {} ({} samples), decoder: {}", ev.split, ev.predictions.len(), decoder_label(a.beam)),
        format!("checkpoint: {} (step {})", a.checkpoint.display(), ckpt.step),
    ];
    print!("{}", render_table(&[TableRow { method: &label, scores: &ev.scores }], &notes));
    Ok(())
}

fn parse_box(s: &str, what: &str) -> Result<[f64; 4]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("{what} box {s:?} is not x,y,w,h"))?;
    match v.as_slice() {
        &[x, y, w, h] => Ok([x, y, w, h]),
        _ => bail!("{what} box {s:?} needs exactly four numbers x,y,w,h"),
    }
}

fn cmd_caption(a: CaptionArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let captions = if !a.images.is_empty() {
        let target = parse_box(a.target.as_deref().context("--images needs --target x,y,w,h")?, "target")?;
        let source = parse_box(a.source.as_deref().context("--images needs --source x,y,w,h")?, "source")?;
        let images: Vec<Image> = a.images.iter().map(|p| Image::load(p)).collect::<mabn_dataset::Result<_>>()?;
        let inputs = SampleInputs::from_images(&images, target, source, ckpt.model.config())?;
        vec![caption_inputs(&ckpt, &inputs, a.beam)?]
    } else {
        let dir = a.dataset.as_ref().context("pass --dataset with --sample/--split, or --images")?;
        let ds = Dataset::load(dir)?;
        let ids: Vec<usize> = match a.split {
            Some(split) => ds.split(split).to_vec(),
            None if a.sample.is_empty() => bail!("nothing to caption: pass --sample ID or --split NAME"),
            None => a.sample.clone(),
        };
        ids.iter().map(|&i| caption(&ckpt, &ds, i, a.beam)).collect::<mabn_core::Result<_>>()?
    };
    let tagged = captions.len() > 1;
    for c in &captions {
        if a.json {
            println!("{}", serde_json::to_string(c)?);
        } else if tagged {
            println!("{}\t{}", c.sample.map_or("-".into(), |s| s.to_string()), c.sentence);
        } else {
            println!("{}", c.sentence);
        }
    }
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let ds = Dataset::load(&a.dataset)?;
    let out = export_attention(&ckpt, &ds, a.sample, &a.out)?;
    println!("sentence: {}", out.words.join(" "));
    println!("wrote {} files ({} heatmap sets) to {}", out.files.len(), out.heatmap_sets, a.out.display());
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let records: Vec<ScoreRecord> = serde_json::from_value(read_json(&a.input)?)
        .with_context(|| format!("{}: expected an array of {{candidate, references}} records", a.input.display()))?;
    let pairs = pairs_from_records(&records, tokenize)?;
    let mut scores = evaluate_corpus(&pairs)?;
    if a.smooth {
        let opts = BleuOptions { smoothing: true };
        scores.bleu1 = bleu_with(&pairs, 1, opts)?;
        scores.bleu2 = bleu_with(&pairs, 2, opts)?;
        scores.bleu3 = bleu_with(&pairs, 3, opts)?;
        scores.bleu4 = bleu_with(&pairs, 4, opts)?;
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&scores)?);
    } else {
        let notes = vec![format!(
            "{} records{}",
            records.len(),
            if a.smooth { ", add-one smoothed BLEU" } else { "" }
        )];
        print!("{}", render_table(&[TableRow { method: "input", scores: &scores }], &notes));
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs, seed: Option<u64>) -> Result<()> {
    let mut pairs = flags::pairs(&a.overrides)?;
    let config = path_opt(a.config, &mut pairs, "config");
    let report = path_opt(a.report, &mut pairs, "report");
    let cfg = train_config(config, &pairs, seed)?;
    let ds = load_dataset(&cfg)?;
    let (rows, table) = ablation_study(&ds, &cfg, a.split, a.beam)?;
    if let Some(p) = &report {
        std::fs::write(p, serde_json::to_string_pretty(&rows)?).with_context(|| format!("{}", p.display()))?;
    }
    print!("{table}");
    Ok(())
}
