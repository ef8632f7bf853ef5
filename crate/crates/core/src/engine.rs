//! Training, evaluation, captioning and attention export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mabn_autograd::{AdamConfig, Gradients};
use mabn_dataset::{gray_pgm, Dataset, Image, Split, Vocabulary};
use mabn_metrics::{evaluate_corpus, render_table, EvalPair, ScoreReport, TableRow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{Ablation, ModelConfig};
use crate::decode::Decoded;
use crate::error::{io_err, CoreError, Result};
use crate::inputs::SampleInputs;
use crate::model::{LossValues, MultiAbn};

/// Optional changes applied on top of a model preset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub hidden: Option<usize>,
    pub lstm_layers: Option<usize>,
    pub image_size: Option<usize>,
    pub branch_channels: Option<usize>,
    pub cond_channels: Option<usize>,
    pub mlp_hidden: Option<usize>,
    pub crop_embed: Option<usize>,
    pub word_embed: Option<usize>,
    pub max_len: Option<usize>,
    pub static_attention: Option<bool>,
    pub literal_relation: Option<bool>,
    pub average_visual_loss: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: Option<PathBuf>,
    /// `toy` or `paper-shape`.
    pub preset: String,
    pub model: ModelOverrides,
    pub ablation: Ablation,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_steps: u64,
    pub seed: u64,
    /// Save a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    pub log_every: u64,
    /// Stop once a batch's L_per falls below this value.
    pub stop_below_l_per: Option<f64>,
    /// Start every attention convolution at zero (masks at exactly 0.5).
    pub zero_attention_init: bool,
    /// Use at most this many references per target.
    pub max_references: Option<usize>,
    /// Splits scored after training.
    pub eval_splits: Vec<String>,
    /// Beam width for the final evaluation (1: greedy).
    pub beam: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            dataset: None,
            preset: "toy".into(),
            model: ModelOverrides::default(),
            ablation: Ablation::Full,
            batch_size: 32,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            max_steps: 2000,
            seed: 0,
            checkpoint_every: 0,
            log_every: 10,
            stop_below_l_per: None,
            zero_attention_init: false,
            max_references: None,
            eval_splits: vec!["val".into()],
            beam: 1,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("need lr > 0, beta1 and beta2 in [0, 1), eps > 0");
        }
        if self.beam == 0 {
            return bad("beam must be at least 1");
        }
        if self.max_references == Some(0) {
            return bad("max_references must be at least 1");
        }
        for s in &self.eval_splits {
            s.parse::<Split>().map_err(CoreError::Config)?;
        }
        Ok(())
    }

    /// Preset plus overrides for a vocabulary of `vocab_size` words.
    pub fn model_config(&self, vocab_size: usize, views: usize) -> Result<ModelConfig> {
        let mut c = ModelConfig::preset(&self.preset, vocab_size)?;
        let o = &self.model;
        c.views = views;
        c.ablation = self.ablation;
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = o.$f { c.$f = v; })* };
        }
        set!(hidden, lstm_layers, image_size, branch_channels, cond_channels, mlp_hidden, crop_embed, word_embed, max_len);
        set!(static_attention, literal_relation, average_visual_loss);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub total: f64,
    pub perception: f64,
    pub attention: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// One record per completed step.
    pub losses: Vec<LossRecord>,
    pub scores: BTreeMap<String, ScoreReport>,
    pub wall_clock_secs: f64,
    pub stopped_early: bool,
    pub config: serde_json::Value,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: RunReport,
}

fn check_vocab(ckpt: &Vocabulary, ds: &Vocabulary) -> Result<()> {
    if ckpt != ds {
        return Err(CoreError::VocabMismatch(format!(
            "checkpoint has {} words, dataset has {}; they must be identical",
            ckpt.len(),
            ds.len()
        )));
    }
    Ok(())
}

fn views_of(ds: &Dataset) -> Result<usize> {
    ds.scenes
        .first()
        .map(|s| s.views.len())
        .ok_or_else(|| CoreError::Config("dataset has no scenes".into()))
}

/// Fresh model and optimizer state for a dataset.
pub fn initial_checkpoint(ds: &Dataset, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MultiAbn::new(cfg.model_config(ds.vocab.len(), views_of(ds)?)?, &mut rng)?;
    if cfg.zero_attention_init {
        model.zero_attention();
    }
    let mut ckpt = Checkpoint::new(model, ds.vocab.clone(), rng);
    ckpt.train_config = serde_json::to_value(cfg).expect("config serializes");
    Ok(ckpt)
}

/// Mean losses and gradients over a batch. Samples run in parallel on their
/// own tapes; the reduction is in batch order, so results do not depend on
/// the thread count.
pub fn batch_gradients(model: &MultiAbn, ds: &Dataset, batch: &[(usize, usize)]) -> Result<(LossValues, Gradients)> {
    let parts: Vec<(LossValues, Gradients)> = batch
        .par_iter()
        .map(|&(sample, r)| {
            let inputs = SampleInputs::from_dataset(ds, sample, Some(r), model.config())?;
            model.loss_and_grad(&inputs)
        })
        .collect::<Result<_>>()?;
    let mut grads = Gradients::zeros(model.params());
    let (mut per, mut att) = (0.0, 0.0);
    for (l, g) in &parts {
        per += l.perception;
        att += l.attention;
        grads.add_assign(g)?;
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    let (perception, attention) = (per / n, att / n);
    Ok((LossValues { total: perception + attention, perception, attention }, grads))
}

/// Every (sample, reference) pair of the training split.
pub fn training_units(ds: &Dataset, max_references: Option<usize>) -> Vec<(usize, usize)> {
    ds.train
        .iter()
        .flat_map(|&s| {
            let n = ds.samples[s].tokens.len().min(max_references.unwrap_or(usize::MAX));
            (0..n).map(move |r| (s, r))
        })
        .collect()
}

/// Minimizes L = L_per + L_att with Adam. Resumes from `resume` when given;
/// writes checkpoints to `checkpoint_path` when given.
pub fn train(
    ds: &Dataset,
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let mut ckpt = match resume {
        Some(c) => {
            check_vocab(&c.vocab, &ds.vocab)?;
            c
        }
        None => initial_checkpoint(ds, cfg)?,
    };
    ckpt.train_config = serde_json::to_value(cfg).expect("config serializes");
    if ckpt.model.config().views != views_of(ds)? {
        return Err(CoreError::Config("checkpoint and dataset disagree on the number of views".into()));
    }
    let units = training_units(ds, cfg.max_references);
    if units.is_empty() {
        return Err(CoreError::Config("the training split is empty".into()));
    }
    let adam = cfg.adam();
    let mut losses = Vec::new();
    let mut stopped_early = false;
    let mut last_saved = match checkpoint_path {
        Some(p) if p.exists() => format!("{} (as found at start)", p.display()),
        _ => String::from("none"),
    };
    while ckpt.step < cfg.max_steps {
        let batch: Vec<(usize, usize)> =
            (0..cfg.batch_size).map(|_| units[ckpt.rng.gen_range(0..units.len())]).collect();
        let (loss, grads) = batch_gradients(&ckpt.model, ds, &batch)?;
        if !(loss.total.is_finite() && loss.perception.is_finite() && loss.attention.is_finite()) {
            return Err(CoreError::NonFiniteLoss { step: ckpt.step, checkpoint: last_saved });
        }
        losses.push(LossRecord { step: ckpt.step, total: loss.total, perception: loss.perception, attention: loss.attention });
        if cfg.log_every > 0 && ckpt.step % cfg.log_every == 0 {
            log::info!(
                "step {:>6}  L {:.5}  L_per {:.5}  L_att {:.5}",
                ckpt.step,
                loss.total,
                loss.perception,
                loss.attention
            );
        }
        if let Err(e) = ckpt.adam.step(ckpt.model.params_mut(), &grads, &adam) {
            log::error!("optimizer rejected step {}: {e}", ckpt.step);
            return Err(CoreError::NonFiniteLoss { step: ckpt.step, checkpoint: last_saved });
        }
        ckpt.step += 1;
        if let Some(path) = checkpoint_path {
            if cfg.checkpoint_every > 0 && ckpt.step % cfg.checkpoint_every == 0 {
                ckpt.save(path)?;
                last_saved = format!("{} (step {})", path.display(), ckpt.step);
            }
        }
        if cfg.stop_below_l_per.is_some_and(|t| loss.perception < t) {
            stopped_early = true;
            break;
        }
    }
    if let Some(path) = checkpoint_path {
        ckpt.save(path)?;
    }
    let mut scores = BTreeMap::new();
    for name in &cfg.eval_splits {
        let split: Split = name.parse().map_err(CoreError::Config)?;
        if !ds.split(split).is_empty() {
            scores.insert(name.clone(), evaluate(&ckpt, ds, split, cfg.beam)?.scores);
        }
    }
    let report = RunReport {
        losses,
        scores,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        stopped_early,
        config: ckpt.train_config.clone(),
    };
    Ok(TrainOutcome { checkpoint: ckpt, report })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample: usize,
    pub candidate: String,
    pub references: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub split: String,
    pub beam: usize,
    pub scores: ScoreReport,
    pub predictions: Vec<Prediction>,
}

fn decode(model: &MultiAbn, inputs: &SampleInputs, beam: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let max_len = model.config().max_len;
    if beam <= 1 {
        let d: Decoded = model.decode_greedy(inputs, max_len)?;
        Ok((d.tokens, d.log_probs))
    } else {
        let h = model.decode_beam(inputs, beam, max_len)?;
        let keep: Vec<bool> = h.raw.iter().map(|&t| h.tokens().contains(&t) && t > 3).collect();
        let lp = h.log_probs.iter().zip(&keep).filter(|(_, &k)| k).map(|(&l, _)| l).collect();
        Ok((h.tokens(), lp))
    }
}

/// Decodes every sample of a split and scores it against its references.
pub fn evaluate(ckpt: &Checkpoint, ds: &Dataset, split: Split, beam: usize) -> Result<Evaluation> {
    check_vocab(&ckpt.vocab, &ds.vocab)?;
    let ids = ds.split(split);
    if ids.is_empty() {
        return Err(CoreError::Config(format!("split {split:?} is empty")));
    }
    let model = &ckpt.model;
    let decoded: Vec<Vec<usize>> = ids
        .par_iter()
        .map(|&i| {
            let inputs = SampleInputs::from_dataset(ds, i, None, model.config())?;
            Ok(decode(model, &inputs, beam)?.0)
        })
        .collect::<Result<_>>()?;
    let mut pairs = Vec::with_capacity(ids.len());
    let mut predictions = Vec::with_capacity(ids.len());
    for (&i, tokens) in ids.iter().zip(decoded) {
        let s = &ds.samples[i];
        let words = ds.vocab.decode(&tokens);
        pairs.push(EvalPair::new(words.clone(), s.tokens.clone())?);
        predictions.push(Prediction { sample: i, candidate: words.join(" "), references: s.references.clone() });
    }
    let name = match split {
        Split::Train => "train",
        Split::Val => "val",
    };
    Ok(Evaluation { split: name.into(), beam, scores: evaluate_corpus(&pairs)?, predictions })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    /// None when the inputs came from image files rather than the dataset.
    pub sample: Option<usize>,
    pub sentence: String,
    pub token_ids: Vec<usize>,
    pub log_probs: Vec<f64>,
}

pub fn caption(ckpt: &Checkpoint, ds: &Dataset, sample: usize, beam: usize) -> Result<Caption> {
    check_vocab(&ckpt.vocab, &ds.vocab)?;
    let inputs = SampleInputs::from_dataset(ds, sample, None, ckpt.model.config())?;
    Ok(Caption { sample: Some(sample), ..caption_inputs(ckpt, &inputs, beam)? })
}

/// Captions inputs built outside the dataset, e.g. with `SampleInputs::from_images`.
pub fn caption_inputs(ckpt: &Checkpoint, inputs: &SampleInputs, beam: usize) -> Result<Caption> {
    let (token_ids, log_probs) = decode(&ckpt.model, inputs, beam)?;
    let sentence = ckpt.vocab.decode(&token_ids).join(" ");
    Ok(Caption { sample: None, sentence, token_ids, log_probs })
}

/// Attention value in (0, 1) as a byte, rounding halves up (0.5 → 128).
pub fn attention_byte(a: f64) -> u8 {
    (a * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub words: Vec<String>,
    /// Heatmap sets written, one per generated word.
    pub heatmap_sets: usize,
    pub files: Vec<PathBuf>,
}

/// Writes, for every generated word k and view j, the visual attention map
/// upsampled (nearest neighbour) to the view's size as a PGM and as a red
/// overlay PPM, plus `linguistic.txt` with one line of a_l per word.
pub fn export_attention(ckpt: &Checkpoint, ds: &Dataset, sample: usize, dir: &Path) -> Result<AttentionExport> {
    check_vocab(&ckpt.vocab, &ds.vocab)?;
    let model = &ckpt.model;
    let inputs = SampleInputs::from_dataset(ds, sample, None, model.config())?;
    let decoded = model.decode_greedy(&inputs, model.config().max_len)?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let scene = ds.scene_of(&ds.samples[sample]);
    let words: Vec<String> = ckpt.vocab.decode(&decoded.tokens);
    let s = model.config().feature_size();
    let mut files = Vec::new();
    let mut write = |name: String, bytes: Vec<u8>| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        files.push(path);
        Ok(())
    };
    let mut linguistic = String::new();
    for (k, (word, att)) in words.iter().zip(&decoded.attention).enumerate() {
        for (j, map) in att.visual.iter().enumerate() {
            let img: &Image = &scene.images[j];
            let (w, h) = (img.width, img.height);
            let mut gray = Vec::with_capacity(w * h);
            let mut overlay = img.clone();
            for y in 0..h {
                for x in 0..w {
                    let a = map.data()[(y * s / h) * s + x * s / w];
                    gray.push(attention_byte(a));
                    let px = img.get(x, y);
                    let red = (px[0] as f64 * (1.0 - a) + 255.0 * a).round() as u8;
                    let dim = |c: u8| (c as f64 * (1.0 - a)).round() as u8;
                    overlay.put(x as i64, y as i64, [red, dim(px[1]), dim(px[2])]);
                }
            }
            let stem = format!("word{:02}_{word}_view{}", k + 1, j + 1);
            write(format!("{stem}.pgm"), gray_pgm(w, h, &gray))?;
            write(format!("{stem}_overlay.ppm"), overlay.to_ppm())?;
        }
        if let Some(l) = &att.linguistic {
            let vals: Vec<String> = l.data().iter().map(|v| format!("{v:.6}")).collect();
            linguistic.push_str(&format!("{} {word} {}\n", k + 1, vals.join(" ")));
        }
    }
    if model.config().ablation.has_linguistic() {
        write("linguistic.txt".into(), linguistic.into_bytes())?;
    }
    Ok(AttentionExport { heatmap_sets: decoded.attention.len(), words, files })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub report: RunReport,
    pub evaluation: Evaluation,
}

/// Trains the full model and both single-branch variants with otherwise
/// identical settings, evaluates each on `split` and renders one table.
pub fn ablation_study(ds: &Dataset, base: &TrainConfig, split: Split, beam: usize) -> Result<(Vec<AblationRow>, String)> {
    let mut rows = Vec::new();
    for ablation in [Ablation::Full, Ablation::VabOnly, Ablation::LabOnly] {
        let cfg = TrainConfig { ablation, eval_splits: vec![], ..base.clone() };
        let out = train(ds, &cfg, None, None)?;
        let evaluation = evaluate(&out.checkpoint, ds, split, beam)?;
        rows.push(AblationRow { ablation, report: out.report, evaluation });
    }
    let names: Vec<String> = rows.iter().map(|r| r.ablation.method_label()).collect();
    let table_rows: Vec<TableRow> =
        rows.iter().zip(&names).map(|(r, n)| TableRow { method: n, scores: &r.evaluation.scores }).collect();
    let notes = vec![
        format!("split: {}, decoder: {}", rows[0].evaluation.split, decoder_label(beam)),
        format!("steps: {}, batch size: {}, seed: {}", base.max_steps, base.batch_size, base.seed),
    ];
    let table = render_table(&table_rows, &notes);
    Ok((rows, table))
}

/// Table header note for the decoder in use.
pub fn decoder_label(beam: usize) -> String {
    if beam <= 1 {
        "greedy".into()
    } else {
        format!("beam {beam}")
    }
}
