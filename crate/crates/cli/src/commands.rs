//! One function per subcommand. Each loads the config, opens the run
//! directory, does its work through the core crate, and writes outputs
//! under the run root; nothing here computes, it only wires.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};
use stforge_core::cleaning::{alignment_filter, cascade, ratio_filter, split_dev, CascadeParams};
use stforge_core::corpus::CorpusInstance;
use stforge_core::infer::{
    evaluate_checkpoint, translate_corpus, AveragedCheckpoint, EnsembleSpec,
};
use stforge_core::model::init_params;
use stforge_core::train::{Checkpoint, EpochRecord, FinetuneMode, TrainSummary};
use stforge_core::vocab::CharVocab;
use stforge_core::RngStream;

use crate::config::RunConfig;
use crate::error::{io_err, CliError, Result};
use crate::formats::alignment::read_alignment;
use crate::formats::checkpoint::{load_checkpoint, save_checkpoint, AvgMembers, CheckpointFile};
use crate::formats::manifest::{
    load_instances, read_entries, read_instances, select_entries, write_entries, ManifestEntry,
};
use crate::formats::vocab_file::{read_vocab, write_vocab};
use crate::formats::write_json;
use crate::rundir::RunDir;
use crate::synth::SynthSpec;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage { msg: msg.into() }
}

/// Arguments every run-directory subcommand shares.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run directory; created if missing.
    #[arg(long)]
    pub run: PathBuf,
    /// Config file; built-in defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overwrite outputs an earlier run left behind.
    #[arg(long)]
    pub force: bool,
}

impl RunArgs {
    fn open(&self) -> Result<(RunConfig, RunDir)> {
        let cfg = RunConfig::load(self.config.as_deref())?;
        let run = RunDir::open(&self.run, &cfg, self.force)?;
        Ok((cfg, run))
    }
}

fn path_or(run: &RunDir, given: &Option<PathBuf>, name: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| run.manifest_path(name))
}

fn parse_mode(s: &str) -> Result<FinetuneMode> {
    match s {
        "same-policy" => Ok(FinetuneMode::SamePolicy),
        "adam-anneal" => Ok(FinetuneMode::AdamAnneal),
        "nag-anneal" => Ok(FinetuneMode::NagAnneal),
        other => Err(usage(format!(
            "unknown fine-tuning mode '{other}'; expected same-policy, adam-anneal or nag-anneal"
        ))),
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for the generated corpus.
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus size in utterances.
    #[arg(long, default_value_t = 60)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Utterances planted with alignment failures.
    #[arg(long, default_value_t = 0)]
    pub plant_align: usize,
    /// Utterances planted with outlying frames/character ratios.
    #[arg(long, default_value_t = 0)]
    pub plant_ratio: usize,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    if args.out.exists() {
        let occupied = fs::read_dir(&args.out)
            .map_err(|e| io_err(&args.out, e))?
            .next()
            .is_some();
        if occupied && !args.force {
            return Err(CliError::Exists {
                path: args.out.clone(),
            });
        }
    }
    let spec = SynthSpec {
        n: args.n,
        seed: args.seed,
        plant_align: args.plant_align,
        plant_ratio: args.plant_ratio,
        ..SynthSpec::default()
    };
    let planted = crate::synth::generate(&args.out, &spec)?;
    println!(
        "synth: {} utterances ({} bad alignments, {} bad ratios) -> {}",
        args.n,
        planted.align.len(),
        planted.ratio.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct CleanAlignArgs {
    #[command(flatten)]
    pub common: RunArgs,
    /// Manifest of the corpus to filter.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Word alignment report for the manifest.
    #[arg(long)]
    pub alignment: PathBuf,
}

pub fn clean_align(args: &CleanAlignArgs) -> Result<()> {
    let (_cfg, run) = args.common.open()?;
    run.record_inputs(&[&args.manifest, &args.alignment])?;
    let entries = read_entries(&args.manifest)?;
    let instances = load_instances(&entries)?;
    let report = read_alignment(&args.alignment)?;
    let outcome = alignment_filter(instances, &report)?;
    write_entries(
        &run.claim(run.manifest_path("clean1.tsv"))?,
        &select_entries(&entries, &outcome.kept),
    )?;
    write_json(
        &run.claim(run.report_path("clean_align.json"))?,
        &outcome.report,
    )?;
    println!(
        "clean-align: kept {} of {}, removed {}",
        outcome.report.output, outcome.report.input, outcome.report.removed
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct CleanRatioArgs {
    #[command(flatten)]
    pub common: RunArgs,
    /// Manifest to filter; the run's clean1.tsv by default.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn clean_ratio(args: &CleanRatioArgs) -> Result<()> {
    let (cfg, run) = args.common.open()?;
    let manifest = path_or(&run, &args.manifest, "clean1.tsv");
    run.record_inputs(&[&manifest])?;
    let entries = read_entries(&manifest)?;
    let instances = load_instances(&entries)?;
    let outcome = ratio_filter(
        instances,
        cfg.cleaning.bin_width,
        cfg.cleaning.min_bin_count,
    )?;
    write_entries(
        &run.claim(run.manifest_path("clean2.tsv"))?,
        &select_entries(&entries, &outcome.kept),
    )?;
    write_json(
        &run.claim(run.report_path("clean_ratio.json"))?,
        &outcome.report,
    )?;
    println!(
        "clean-ratio: kept {} of {} in [{}, {}), removed {}",
        outcome.report.output,
        outcome.report.input,
        outcome.histogram.keep_lo,
        outcome.histogram.keep_hi,
        outcome.report.removed
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: RunArgs,
    /// Manifest to split into training and development parts.
    #[arg(long)]
    pub manifest: PathBuf,
}

pub fn split(args: &SplitArgs) -> Result<()> {
    let (cfg, run) = args.common.open()?;
    run.record_inputs(&[&args.manifest])?;
    let entries = read_entries(&args.manifest)?;
    let instances = load_instances(&entries)?;
    let mut rng = RngStream::new(cfg.training.seed, "split");
    let (train_set, dev_set) = split_dev(instances, cfg.cleaning.n_dev, &mut rng)?;
    write_entries(
        &run.claim(run.manifest_path("train.tsv"))?,
        &select_entries(&entries, &train_set),
    )?;
    write_entries(
        &run.claim(run.manifest_path("dev.tsv"))?,
        &select_entries(&entries, &dev_set),
    )?;
    println!("split: {} train / {} dev", train_set.len(), dev_set.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    #[command(flatten)]
    pub common: RunArgs,
    /// Manifest whose translations define the symbol set.
    #[arg(long)]
    pub manifest: PathBuf,
}

pub fn vocab(args: &VocabArgs) -> Result<()> {
    let (_cfg, run) = args.common.open()?;
    run.record_inputs(&[&args.manifest])?;
    let entries = read_entries(&args.manifest)?;
    let vocab = CharVocab::build(entries.iter().map(|e| e.translation.as_str()))?;
    write_vocab(&run.claim(run.manifest_path("vocab.txt"))?, &vocab)?;
    println!(
        "vocab: {} symbols, {} ids, fingerprint {}",
        vocab.symbols().len(),
        vocab.size(),
        &vocab.fingerprint()[..12]
    );
    Ok(())
}

#[derive(Serialize)]
struct LogLine {
    epoch: usize,
    train_loss: f64,
    dev_loss: f64,
    lr: f64,
    wall_time: f64,
}

struct EpochSink {
    log_path: PathBuf,
    ckpt_dir: PathBuf,
    start: Instant,
    saved: Vec<PathBuf>,
}

impl EpochSink {
    fn handle(&mut self, rec: &EpochRecord, ck: &Checkpoint) -> Result<()> {
        let line = serde_json::to_string(&LogLine {
            epoch: rec.epoch,
            train_loss: rec.train_loss,
            dev_loss: rec.dev_loss,
            lr: rec.lr,
            wall_time: self.start.elapsed().as_secs_f64(),
        })
        .expect("log line serializes");
        let mut f = fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(&self.log_path)
            .map_err(|e| io_err(&self.log_path, e))?;
        writeln!(f, "{line}").map_err(|e| io_err(&self.log_path, e))?;
        let path = self.ckpt_dir.join(format!("epoch_{:04}.stck", rec.epoch));
        save_checkpoint(&path, &CheckpointFile::plain(ck.clone()))?;
        self.saved.push(path);
        Ok(())
    }
}

enum Start<'a> {
    Fresh,
    From(&'a Checkpoint, FinetuneMode),
}

/// One training run into the run directory: epoch log, one checkpoint per
/// epoch under the stage's checkpoint directory, and a summary report.
#[allow(clippy::too_many_arguments)]
fn run_stage(
    run: &RunDir,
    cfg: &RunConfig,
    vocab: &CharVocab,
    train_set: &[CorpusInstance],
    dev_set: &[CorpusInstance],
    stage: Option<&str>,
    log_name: &str,
    report_name: &str,
    start: Start,
) -> Result<(TrainSummary, Vec<PathBuf>)> {
    let ckpt_dir = run.claim_checkpoint_dir(stage)?;
    let log_path = run.claim(run.log_path(log_name))?;
    let report_path = run.claim(run.report_path(report_name))?;
    fs::write(&log_path, "").map_err(|e| io_err(&log_path, e))?;
    let mut sink = EpochSink {
        log_path,
        ckpt_dir,
        start: Instant::now(),
        saved: Vec::new(),
    };
    let mut sink_err: Option<CliError> = None;
    let mut on_epoch = |rec: &EpochRecord, ck: &Checkpoint| -> stforge_core::Result<()> {
        sink.handle(rec, ck).map_err(|e| {
            let stop = stforge_core::Error::BadArgument {
                op: "epoch-sink",
                msg: e.to_string(),
            };
            sink_err = Some(e);
            stop
        })
    };
    let outcome = match start {
        Start::Fresh => {
            let mut params = init_params::<f32>(&cfg.model, vocab.size(), cfg.training.seed)?;
            stforge_core::train::train(
                &mut params,
                &cfg.model,
                vocab,
                train_set,
                dev_set,
                &cfg.optimizer,
                &cfg.loss,
                &cfg.training,
                &mut on_epoch,
            )
        }
        Start::From(ck, mode) => stforge_core::train::finetune::<f32>(
            ck,
            &cfg.model,
            vocab,
            train_set,
            dev_set,
            &cfg.optimizer,
            &cfg.loss,
            &cfg.training,
            mode,
            &mut on_epoch,
        )
        .map(|(_, summary)| summary),
    };
    if let Some(e) = sink_err {
        return Err(e);
    }
    let summary = outcome?;
    write_json(&report_path, &summary)?;
    Ok((summary, sink.saved))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: RunArgs,
    /// Training manifest; the run's train.tsv by default.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Development manifest; the run's dev.tsv by default.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Vocabulary file; the run's vocab.txt by default.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let (cfg, run) = args.common.open()?;
    let train_path = path_or(&run, &args.train, "train.tsv");
    let dev_path = path_or(&run, &args.dev, "dev.tsv");
    let vocab_path = path_or(&run, &args.vocab, "vocab.txt");
    run.record_inputs(&[&train_path, &dev_path, &vocab_path])?;
    let vocab = read_vocab(&vocab_path)?;
    let train_set = read_instances(&train_path)?;
    let dev_set = read_instances(&dev_path)?;
    let (summary, _) = run_stage(
        &run,
        &cfg,
        &vocab,
        &train_set,
        &dev_set,
        None,
        "train.jsonl",
        "train.json",
        Start::Fresh,
    )?;
    println!(
        "train: {} epochs, best dev loss {:.4} at epoch {}",
        summary.epochs_run, summary.best_dev_loss, summary.best_epoch
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: RunArgs,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// same-policy, adam-anneal or nag-anneal.
    #[arg(long, default_value = "same-policy")]
    pub mode: String,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

pub fn finetune(args: &FinetuneArgs) -> Result<()> {
    let (cfg, run) = args.common.open()?;
    let mode = parse_mode(&args.mode)?;
    let train_path = path_or(&run, &args.train, "train.tsv");
    let dev_path = path_or(&run, &args.dev, "dev.tsv");
    let vocab_path = path_or(&run, &args.vocab, "vocab.txt");
    run.record_inputs(&[&train_path, &dev_path, &vocab_path])?;
    let vocab = read_vocab(&vocab_path)?;
    let train_set = read_instances(&train_path)?;
    let dev_set = read_instances(&dev_path)?;
    let ck = load_checkpoint(&args.checkpoint)?.checkpoint;
    let (summary, _) = run_stage(
        &run,
        &cfg,
        &vocab,
        &train_set,
        &dev_set,
        Some("finetune"),
        "finetune.jsonl",
        "finetune.json",
        Start::From(&ck, mode),
    )?;
    println!(
        "finetune: {} epochs, best dev loss {:.4} at epoch {}",
        summary.epochs_run, summary.best_dev_loss, summary.best_epoch
    );
    Ok(())
}

#[derive(Serialize)]
struct AverageReport {
    window: usize,
    margin: f64,
    member_epochs: Vec<usize>,
    member_bleus: Vec<f64>,
    val_loss: f64,
}

/// Fill in missing window-member BLEU scores by decoding the dev set,
/// then average.
fn average_series(
    cfg: &RunConfig,
    series: &mut [Checkpoint],
    dev: Option<(&[CorpusInstance], &CharVocab)>,
) -> Result<AveragedCheckpoint> {
    let lo = series.len().saturating_sub(cfg.decode.avg_window);
    for ck in series[lo..].iter_mut() {
        if ck.val_bleu.is_some() {
            continue;
        }
        let (dev_set, vocab) = dev.ok_or_else(|| {
            usage(format!(
                "checkpoint at epoch {} has no recorded dev BLEU; pass --dev and --vocab to score members",
                ck.epoch
            ))
        })?;
        let report = evaluate_checkpoint(
            ck,
            dev_set,
            vocab,
            &cfg.decode.decode_config(),
            cfg.training.batch_size,
            cfg.training.seed,
        )?;
        ck.val_bleu = Some(report.dev_bleu);
    }
    let avg = stforge_core::infer::average_checkpoints(
        series,
        cfg.decode.avg_window,
        cfg.decode.avg_margin,
    )?;
    Ok(avg)
}

fn save_average(run: &RunDir, path: PathBuf, avg: &AveragedCheckpoint) -> Result<PathBuf> {
    let path = run.claim(path)?;
    save_checkpoint(
        &path,
        &CheckpointFile {
            checkpoint: avg.checkpoint.clone(),
            averaged_from: Some(AvgMembers {
                epochs: avg.member_epochs.clone(),
                bleus: avg.member_bleus.clone(),
            }),
        },
    )?;
    Ok(path)
}

fn average_report(cfg: &RunConfig, avg: &AveragedCheckpoint) -> AverageReport {
    AverageReport {
        window: cfg.decode.avg_window,
        margin: cfg.decode.avg_margin,
        member_epochs: avg.member_epochs.clone(),
        member_bleus: avg.member_bleus.clone(),
        val_loss: avg.checkpoint.val_loss,
    }
}

#[derive(Debug, Args)]
pub struct AvgCkptArgs {
    #[command(flatten)]
    pub common: RunArgs,
    /// Checkpoint files in epoch order.
    #[arg(required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Development manifest for scoring members without a recorded BLEU.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

pub fn avg_ckpt(args: &AvgCkptArgs) -> Result<()> {
    let (cfg, run) = args.common.open()?;
    let mut series = Vec::with_capacity(args.checkpoints.len());
    for path in &args.checkpoints {
        series.push(load_checkpoint(path)?.checkpoint);
    }
    let dev = match (&args.dev, &args.vocab) {
        (Some(d), Some(v)) => {
            run.record_inputs(&[d, v])?;
            Some((read_instances(d)?, read_vocab(v)?))
        }
        (None, None) => None,
        _ => return Err(usage("--dev and --vocab go together")),
    };
    let avg = average_series(
        &cfg,
        &mut series,
        dev.as_ref().map(|(d, v)| (d.as_slice(), v)),
    )?;
    let out = save_average(&run, run.checkpoint_dir(None)?.join("averaged.stck"), &avg)?;
    write_json(
        &run.claim(run.report_path("average.json"))?,
        &average_report(&cfg, &avg),
    )?;
    println!(
        "avg-ckpt: averaged {} of {} checkpoints (epochs {:?}) -> {}",
        avg.member_epochs.len(),
        args.checkpoints.len(),
        avg.member_epochs,
        out.display()
    );
    Ok(())
}

/// On-disk ensemble description: checkpoint paths relative to this file,
/// plus the vocabulary they were trained with.
#[derive(Serialize, Deserialize)]
struct EnsembleFile {
    checkpoints: Vec<String>,
    vocab_fingerprint: String,
}

fn read_ensemble(path: &Path) -> Result<(Vec<Checkpoint>, String)> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file: EnsembleFile = serde_json::from_str(&text).map_err(|e| CliError::Json {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut cks = Vec::with_capacity(file.checkpoints.len());
    for member in &file.checkpoints {
        cks.push(load_checkpoint(&base.join(member))?.checkpoint);
    }
    Ok((cks, file.vocab_fingerprint))
}

fn write_hypotheses(path: &Path, vocab: &CharVocab, ids: &[Vec<u32>]) -> Result<()> {
    let mut text = String::new();
    for h in ids {
        text.push_str(&vocab.decode(h));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[command(flatten)]
    pub common: RunArgs,
    /// Manifest of the utterances to translate.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Vocabulary file; the run's vocab.txt by default.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Checkpoint to decode with; repeat for an ensemble.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    /// Ensemble description file instead of --checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    pub ensemble: Option<PathBuf>,
}

pub fn translate(args: &TranslateArgs) -> Result<()> {
    let (cfg, run) = args.common.open()?;
    let vocab_path = path_or(&run, &args.vocab, "vocab.txt");
    run.record_inputs(&[&args.manifest, &vocab_path])?;
    let vocab = read_vocab(&vocab_path)?;
    let cks = if let Some(ens) = &args.ensemble {
        let (cks, fingerprint) = read_ensemble(ens)?;
        if fingerprint != vocab.fingerprint() {
            return Err(stforge_core::Error::VocabMismatch {
                expected: vocab.fingerprint(),
                found: fingerprint,
            }
            .into());
        }
        cks
    } else if args.checkpoint.is_empty() {
        return Err(usage("pass --checkpoint at least once, or --ensemble"));
    } else {
        let mut cks = Vec::with_capacity(args.checkpoint.len());
        for path in &args.checkpoint {
            cks.push(load_checkpoint(path)?.checkpoint);
        }
        cks
    };
    let spec = EnsembleSpec::new(cks)?;
    if spec.vocab_fingerprint != vocab.fingerprint() {
        return Err(stforge_core::Error::VocabMismatch {
            expected: vocab.fingerprint(),
            found: spec.vocab_fingerprint.clone(),
        }
        .into());
    }
    let instances = read_instances(&args.manifest)?;
    let hyps = translate_corpus(&spec, &instances, &cfg.decode.decode_config())?;
    let out = run.claim(run.report_path("translations.txt"))?;
    let ids: Vec<Vec<u32>> = hyps.into_iter().map(|h| h.ids).collect();
    write_hypotheses(&out, &vocab, &ids)?;
    println!(
        "translate: {} utterances with {} model(s) -> {}",
        instances.len(),
        spec.checkpoints.len(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub common: RunArgs,
    /// Manifest holding the reference translations.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Hypotheses, one per manifest line; the run's translations by
    /// default.
    #[arg(long)]
    pub hypotheses: Option<PathBuf>,
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    let (_cfg, run) = args.common.open()?;
    let hyp_path = args
        .hypotheses
        .clone()
        .unwrap_or_else(|| run.report_path("translations.txt"));
    run.record_inputs(&[&args.manifest, &hyp_path])?;
    let entries = read_entries(&args.manifest)?;
    let text = fs::read_to_string(&hyp_path).map_err(|e| io_err(&hyp_path, e))?;
    let hyps: Vec<String> = text.lines().map(String::from).collect();
    if hyps.len() != entries.len() {
        return Err(CliError::Format {
            path: hyp_path,
            msg: format!(
                "{} hypotheses for {} manifest lines",
                hyps.len(),
                entries.len()
            ),
        });
    }
    let refs: Vec<String> = entries.iter().map(|e| e.translation.clone()).collect();
    let report = stforge_core::infer::corpus_bleu(&hyps, &refs)?;
    write_json(&run.claim(run.report_path("score.json"))?, &report)?;
    println!(
        "score: BLEU {:.2} over {} sentences",
        report.bleu,
        entries.len()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub common: RunArgs,
    /// How stages after the first continue from the previous best
    /// checkpoint.
    #[arg(long, default_value = "same-policy")]
    pub finetune_mode: String,
}

/// The whole cascade in one invocation: dev split, vocabulary, both
/// cleaning filters, one training stage per configured dataset with each
/// stage fine-tuning the previous best, per-stage checkpoint averaging,
/// and a final decode and score of the held-out set.
pub fn pipeline(args: &PipelineArgs) -> Result<()> {
    let (cfg, run) = args.common.open()?;
    let mode = parse_mode(&args.finetune_mode)?;
    let manifest = PathBuf::from(
        cfg.data
            .manifest
            .clone()
            .ok_or_else(|| usage("the pipeline needs data.manifest in the config"))?,
    );
    run.record_inputs(&[&manifest])?;
    let entries = read_entries(&manifest)?;
    let instances = load_instances(&entries)?;

    let alignment = if cfg.cleaning.skip_alignment {
        None
    } else {
        let path = PathBuf::from(cfg.data.alignment.clone().ok_or_else(|| {
            usage("the pipeline needs data.alignment unless cleaning.skip_alignment is set")
        })?);
        run.record_inputs(&[&path])?;
        Some(read_alignment(&path)?)
    };

    // Split before cleaning so every stage trains against one dev set,
    // and build the vocabulary from the full parallel corpus so it does
    // not depend on what the filters remove.
    let mut rng = RngStream::new(cfg.training.seed, "split");
    let (parallel, dev_set) = split_dev(instances, cfg.cleaning.n_dev, &mut rng)?;
    write_entries(
        &run.claim(run.manifest_path("dev.tsv"))?,
        &select_entries(&entries, &dev_set),
    )?;
    let vocab = CharVocab::build(entries.iter().map(|e| e.translation.as_str()))?;
    write_vocab(&run.claim(run.manifest_path("vocab.txt"))?, &vocab)?;

    let lineage = cascade(
        parallel.clone(),
        alignment.as_ref(),
        &CascadeParams {
            skip_alignment: cfg.cleaning.skip_alignment,
            bin_width: cfg.cleaning.bin_width,
            min_bin_count: cfg.cleaning.min_bin_count,
        },
    )?;
    write_json(
        &run.claim(run.report_path("clean_align.json"))?,
        &lineage.alignment_report,
    )?;
    write_json(
        &run.claim(run.report_path("clean_ratio.json"))?,
        &lineage.ratio_report,
    )?;

    let stages = cfg.data.effective_stages();
    let mut prev_best: Option<Checkpoint> = None;
    let mut final_avg: Option<Checkpoint> = None;
    let mut members: Vec<String> = Vec::new();
    for stage in &stages {
        let staged = |e: CliError| CliError::Stage {
            stage: stage.clone(),
            source: Box::new(e),
        };
        let data: &[CorpusInstance] = match stage.as_str() {
            "parallel" => &parallel,
            "clean1" => &lineage.clean1,
            "clean2" => &lineage.clean2,
            other => unreachable!("stage names validated, got {other}"),
        };
        write_entries(
            &run.claim(run.manifest_path(&format!("train_{stage}.tsv")))
                .map_err(staged)?,
            &select_entries(&entries, data),
        )
        .map_err(staged)?;
        let start = match &prev_best {
            None => Start::Fresh,
            Some(ck) => Start::From(ck, mode),
        };
        let (summary, saved) = run_stage(
            &run,
            &cfg,
            &vocab,
            data,
            &dev_set,
            Some(stage),
            &format!("train_{stage}.jsonl"),
            &format!("train_{stage}.json"),
            start,
        )
        .map_err(staged)?;
        println!(
            "stage {stage}: {} utterances, {} epochs, best dev loss {:.4} at epoch {}",
            data.len(),
            summary.epochs_run,
            summary.best_dev_loss,
            summary.best_epoch
        );
        let best = load_checkpoint(&saved[summary.best_epoch])
            .map_err(staged)?
            .checkpoint;
        let mut series = Vec::with_capacity(saved.len());
        for path in &saved {
            series.push(load_checkpoint(path).map_err(staged)?.checkpoint);
        }
        let avg = average_series(&cfg, &mut series, Some((&dev_set, &vocab))).map_err(staged)?;
        let dir = run.checkpoint_dir(Some(stage)).map_err(staged)?;
        save_average(&run, dir.join("averaged.stck"), &avg).map_err(staged)?;
        write_json(
            &run.claim(run.report_path(&format!("average_{stage}.json")))
                .map_err(staged)?,
            &average_report(&cfg, &avg),
        )
        .map_err(staged)?;
        members.push(format!("{stage}/averaged.stck"));
        prev_best = Some(best);
        final_avg = Some(avg.checkpoint);
    }

    if stages.len() > 1 {
        write_json(
            &run.claim(run.checkpoint_dir(None)?.join("ensemble.json"))?,
            &EnsembleFile {
                checkpoints: members,
                vocab_fingerprint: vocab.fingerprint(),
            },
        )?;
    }

    let (eval_entries, eval_set): (Vec<ManifestEntry>, Vec<CorpusInstance>) =
        match &cfg.data.eval_manifest {
            Some(p) => {
                let path = PathBuf::from(p);
                run.record_inputs(&[&path])?;
                let e = read_entries(&path)?;
                let i = load_instances(&e)?;
                (e, i)
            }
            None => (select_entries(&entries, &dev_set), dev_set),
        };
    let final_ck = final_avg.ok_or_else(|| usage("no training stage configured"))?;
    let spec = EnsembleSpec::new(vec![final_ck])?;
    let hyps = translate_corpus(&spec, &eval_set, &cfg.decode.decode_config())?;
    let ids: Vec<Vec<u32>> = hyps.into_iter().map(|h| h.ids).collect();
    let out = run.claim(run.report_path("translations.txt"))?;
    write_hypotheses(&out, &vocab, &ids)?;
    let hyp_strings: Vec<String> = ids.iter().map(|h| vocab.decode(h)).collect();
    let refs: Vec<String> = eval_entries.iter().map(|e| e.translation.clone()).collect();
    let report = stforge_core::infer::corpus_bleu(&hyp_strings, &refs)?;
    write_json(&run.claim(run.report_path("score.json"))?, &report)?;
    println!(
        "pipeline: BLEU {:.2} over {} held-out utterances -> {}",
        report.bleu,
        eval_set.len(),
        run.root().display()
    );
    Ok(())
}
