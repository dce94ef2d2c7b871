//! Subcommand dispatch. Every artifact is read from and written to `--out`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use csirff_core::dataset::check_compatible;
use csirff_core::ls::summaries_to_csv;
use csirff_core::{
    read_records, write_records, Dataset, DatasetManifest, DatasetRecord, DatasetSplit, DevicePopulation, LsExtractor,
    LsModel,
};
use csirff_neural::{network_from_checkpoint, CheckpointKind, ModelCheckpoint};

use crate::ablation::run_ablation;
use crate::config::{ExperimentConfig, Preset};
use crate::distances::run_distance_study;
use crate::embeddings::{export_embeddings, EmbeddingStage};
use crate::error::{CliError, Result};
use crate::metrics::{run_eval, Classifier, LsClassifier, MetricsReport, NetworkClassifier};
use crate::pipeline::{self, TrainingSets, Variant};
use crate::svg;

#[derive(Debug, Parser)]
#[command(name = "csirff", version, about = "CSI fingerprinting experiments")]
pub struct Cli {
    /// Master seed; every component seed derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file overlaid on the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for all inputs and outputs.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    pub preset: Preset,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the device population.
    GenPopulation,
    /// Build the augmented dataset (or the flat-channel set with --flat).
    GenDataset(GenDatasetArgs),
    /// Stratified train/validation/test split of the dataset.
    Split,
    /// Write LS fingerprint estimates of one split part.
    ExtractLs(PartArgs),
    /// LS fingerprint distance study.
    Distances,
    /// Train one stage of a variant, or the LS baseline.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test part.
    Eval(CheckpointArgs),
    /// Train and evaluate every variant.
    Ablate(AblateArgs),
    /// Write encoder or projection embeddings of one split part.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[arg(long)]
    pub flat: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Part {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct PartArgs {
    #[arg(long, value_enum, default_value = "test")]
    pub part: Part,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Deepcrf,
    LsBaseline,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    #[arg(long, value_enum, default_value = "full")]
    pub variant: Variant,
    #[arg(long, value_enum, default_value = "deepcrf")]
    pub method: Method,
    /// Stage-1 checkpoint for stage 2; defaults to the variant's own.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum, num_args = 1.., default_values = ["full", "no_scl", "no_da", "no_da_no_scl"])]
    pub variants: Vec<Variant>,
    /// Leave out the LS baseline row.
    #[arg(long)]
    pub no_ls: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "encoder_r")]
    pub stage: EmbeddingStage,
    #[arg(long, value_enum, default_value = "test")]
    pub part: Part,
}

/// File names inside the output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn population(&self) -> PathBuf {
        self.root.join("population.csp")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.csf")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("dataset.json")
    }
    pub fn flat(&self) -> PathBuf {
        self.root.join("flat.csf")
    }
    pub fn flat_manifest(&self) -> PathBuf {
        self.root.join("flat.json")
    }
    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }
    pub fn stage1(&self, v: Variant) -> PathBuf {
        self.root.join(format!("stage1_{v}.ckpt"))
    }
    pub fn model(&self, v: Variant) -> PathBuf {
        self.root.join(format!("model_{v}.ckpt"))
    }
    pub fn ls_model(&self) -> PathBuf {
        self.root.join("ls_baseline.ckpt")
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{} not found; run `{hint}` first", path.display())))
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    at: Layout,
}

impl Ctx {
    fn population(&self) -> Result<DevicePopulation> {
        require(&self.at.population(), "gen-population")?;
        Ok(DevicePopulation::read(&self.at.population())?)
    }

    fn records(&self, pop: &DevicePopulation) -> Result<Vec<DatasetRecord>> {
        require(&self.at.dataset(), "gen-dataset")?;
        let f = read_records(&self.at.dataset())?;
        check_compatible(&f.records, pop)?;
        Ok(f.records)
    }

    fn split(&self, records: &[DatasetRecord]) -> Result<DatasetSplit> {
        if self.at.split().exists() {
            let s: DatasetSplit = serde_json::from_str(&fs::read_to_string(self.at.split())?)
                .map_err(|e| CliError::Data(format!("split.json: {e}")))?;
            let n = s.train.len() + s.val.len() + s.test.len();
            if n != records.len() {
                return Err(CliError::Data(format!("split covers {n} records, dataset has {}", records.len())));
            }
            Ok(s)
        } else {
            pipeline::split(&self.cfg, records)
        }
    }

    /// Flat-channel set, generated and saved when absent.
    fn flat(&self, pop: &DevicePopulation) -> Result<Vec<DatasetRecord>> {
        if self.at.flat().exists() {
            let f = read_records(&self.at.flat())?;
            check_compatible(&f.records, pop)?;
            return Ok(f.records);
        }
        log::info!("flat-channel set missing; generating it");
        let ds = pipeline::flat_dataset(&self.cfg, pop)?;
        self.save_dataset(&ds, &self.at.flat(), &self.at.flat_manifest(), pop)?;
        Ok(ds.records)
    }

    fn save_dataset(&self, ds: &Dataset, data: &Path, manifest: &Path, pop: &DevicePopulation) -> Result<()> {
        write_records(data, &ds.records, pop.grid.len())?;
        write(manifest, ds.manifest.to_json())
    }

    fn part(&self, records: &[DatasetRecord], part: Part) -> Result<Vec<DatasetRecord>> {
        let s = self.split(records)?;
        let idx: Vec<usize> = match part {
            Part::Train => s.train,
            Part::Val => s.val,
            Part::Test => s.test,
            Part::All => (0..records.len()).collect(),
        };
        Ok(idx.into_iter().map(|i| records[i].clone()).collect())
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = ExperimentConfig::load(cli.preset, cli.config.as_deref(), cli.seed)?;
    fs::create_dir_all(&cli.out).map_err(|e| CliError::Data(format!("{}: {e}", cli.out.display())))?;
    let ctx = Ctx { cfg, at: Layout { root: cli.out } };
    match cli.command {
        Command::GenPopulation => gen_population(&ctx),
        Command::GenDataset(a) => gen_dataset(&ctx, a.flat),
        Command::Split => split(&ctx),
        Command::ExtractLs(a) => extract_ls(&ctx, a.part),
        Command::Distances => distances(&ctx),
        Command::Train(a) => train(&ctx, &a),
        Command::Eval(a) => eval(&ctx, &a.checkpoint),
        Command::Ablate(a) => ablate(&ctx, &a),
        Command::ExportEmbeddings(a) => export(&ctx, &a),
    }
}

fn gen_population(ctx: &Ctx) -> Result<()> {
    let pop = pipeline::population(&ctx.cfg)?;
    pop.write(&ctx.at.population())?;
    println!("population {} devices, sha256 {}", pop.len(), pop.hash_hex());
    println!("min inter-class distance {:.6}", pop.min_interclass_distance()?);
    Ok(())
}

fn gen_dataset(ctx: &Ctx, flat: bool) -> Result<()> {
    let pop = ctx.population()?;
    let (ds, data, manifest) = if flat {
        (pipeline::flat_dataset(&ctx.cfg, &pop)?, ctx.at.flat(), ctx.at.flat_manifest())
    } else {
        (pipeline::dataset(&ctx.cfg, &pop)?, ctx.at.dataset(), ctx.at.manifest())
    };
    ctx.save_dataset(&ds, &data, &manifest, &pop)?;
    println!("{} records, sha256 {}", ds.records.len(), ds.manifest.dataset_hash);
    Ok(())
}

fn split(ctx: &Ctx) -> Result<()> {
    let pop = ctx.population()?;
    let records = ctx.records(&pop)?;
    let s = pipeline::split(&ctx.cfg, &records)?;
    write(&ctx.at.split(), serde_json::to_string(&s).expect("split serializes"))?;
    if ctx.at.manifest().exists() {
        let mut m = DatasetManifest::from_json(&fs::read_to_string(ctx.at.manifest())?)?;
        m.split_fallback = s.fallback;
        write(&ctx.at.manifest(), m.to_json())?;
    }
    if s.fallback {
        log::warn!("some stratum was too small; the split is not stratified");
    }
    println!("train {} val {} test {}", s.train.len(), s.val.len(), s.test.len());
    Ok(())
}

fn extract_ls(ctx: &Ctx, part: Part) -> Result<()> {
    let pop = ctx.population()?;
    let records = ctx.part(&ctx.records(&pop)?, part)?;
    let ex = LsExtractor::new(pop.grid.clone(), ctx.cfg.ls)?;
    let idx: Vec<usize> = (0..records.len()).collect();
    let est = pipeline::ls_estimates(&ex, &pop.grid, &records, &idx)?;
    let mut out = String::from("label,channel_tag,snr_db,n_faded");
    for k in 0..pop.grid.len() {
        write!(out, ",re{k},im{k}").unwrap();
    }
    out.push('\n');
    for (r, e) in records.iter().zip(&est) {
        write!(out, "{},{},{},{}", r.label, r.channel_tag.name(), r.snr_db(), e.faded_count()).unwrap();
        for v in &e.values {
            write!(out, ",{},{}", v.re, v.im).unwrap();
        }
        out.push('\n');
    }
    let path = ctx.at.root.join(format!("ls_estimates_{}.csv", part_name(part)));
    write(&path, out)?;
    println!("{} estimates -> {}", est.len(), path.display());
    Ok(())
}

fn part_name(p: Part) -> &'static str {
    match p {
        Part::Train => "train",
        Part::Val => "val",
        Part::Test => "test",
        Part::All => "all",
    }
}

fn distances(ctx: &Ctx) -> Result<()> {
    let pop = ctx.population()?;
    let records = ctx.records(&pop)?;
    let summaries = run_distance_study(&ctx.cfg, &pop, &records)?;
    write(&ctx.at.root.join("distances.csv"), summaries_to_csv(&summaries))?;
    let boxes: Vec<_> =
        summaries.iter().map(|s| (format!("{} {}", s.condition_tag, s.kind.name()), s.five_number)).collect();
    let title = format!("LS fingerprint distances at {} dB", ctx.cfg.distances.snr_db);
    write(&ctx.at.root.join("distances.svg"), svg::box_chart(&title, "distance", &boxes))?;
    for s in &summaries {
        println!(
            "{:<8} {:<5} median {:.5} [{:.5}, {:.5}] pairs {}",
            s.condition_tag,
            s.kind.name(),
            s.five_number.median,
            s.five_number.min,
            s.five_number.max,
            s.n_pairs
        );
    }
    Ok(())
}

fn train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    if a.method == Method::Deepcrf && a.stage == 1 && !a.variant.pretrains() {
        return Err(CliError::Config(format!("variant {} has no contrastive stage", a.variant)));
    }
    let pop = ctx.population()?;
    let flat = ctx.flat(&pop)?;
    let fsplit = pipeline::flat_split(&ctx.cfg, &flat)?;
    if a.method == Method::LsBaseline {
        let model = pipeline::train_ls_baseline(&ctx.cfg, &flat, &fsplit)?;
        model.checkpoint.write(&ctx.at.ls_model())?;
        println!("LS baseline -> {}", ctx.at.ls_model().display());
        return Ok(());
    }
    let records = if a.variant.augments() { ctx.records(&pop)? } else { Vec::new() };
    let split = if a.variant.augments() { ctx.split(&records)? } else { fsplit.clone() };
    let sets = TrainingSets { augmented: (&records, &split), flat: (&flat, &fsplit) };
    let (ckpt, path) = if a.stage == 1 {
        (pipeline::run_stage1(&ctx.cfg, &sets, a.variant)?, ctx.at.stage1(a.variant))
    } else {
        let init = if a.variant.pretrains() {
            let p = a.init.clone().unwrap_or_else(|| ctx.at.stage1(a.variant));
            require(&p, &format!("train --stage 1 --variant {}", a.variant))?;
            Some(ModelCheckpoint::read(&p)?)
        } else {
            None
        };
        (pipeline::run_stage2(&ctx.cfg, &sets, a.variant, init.as_ref())?, ctx.at.model(a.variant))
    };
    ckpt.write(&path)?;
    if let Some(last) = ckpt.history.last() {
        println!("{} epochs, best epoch {}, last val loss {:.4}", ckpt.history.len(), ckpt.epoch, last.val_loss);
    }
    println!("checkpoint -> {}", path.display());
    Ok(())
}

fn classifier(ctx: &Ctx, ckpt: &ModelCheckpoint, pop: &DevicePopulation) -> Result<Box<dyn Classifier>> {
    match ckpt.kind {
        CheckpointKind::Stage2 => {
            Ok(Box::new(NetworkClassifier { net: network_from_checkpoint(ckpt)?, batch_size: ctx.cfg.eval.batch_size }))
        }
        CheckpointKind::LsClassifier => Ok(Box::new(LsClassifier {
            model: LsModel::from_checkpoint(ckpt)?,
            extractor: LsExtractor::new(pop.grid.clone(), ctx.cfg.ls)?,
            grid: pop.grid.clone(),
        })),
        CheckpointKind::Stage1 => Err(CliError::Config("stage-1 checkpoints have no classifier head".into())),
    }
}

fn eval(ctx: &Ctx, path: &Path) -> Result<()> {
    let pop = ctx.population()?;
    let ckpt = ModelCheckpoint::read(path)?;
    let mut clf = classifier(ctx, &ckpt, &pop)?;
    let test = ctx.part(&ctx.records(&pop)?, Part::Test)?;
    let m = run_eval(clf.as_mut(), &test, ctx.cfg.eval.fixed_snr_db)?;
    let stem = path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    let dir = ctx.at.root.join(format!("eval_{stem}"));
    fs::create_dir_all(&dir)?;
    write_report(&dir, &m, ctx.cfg.eval.fixed_snr_db)?;
    println!("overall {:.2}% on {} records", m.accuracy, m.n_records);
    for g in &m.by_snr {
        println!("  {:>5} dB {:6.2}%", g.group, g.accuracy);
    }
    println!("report -> {}", dir.display());
    Ok(())
}

/// Report files. Everything except `runtime.json` is a pure function of the
/// inputs.
pub fn write_report(dir: &Path, m: &MetricsReport, fixed_snr_db: f64) -> Result<()> {
    write(&dir.join("by_snr.csv"), m.by_snr_csv())?;
    write(&dir.join("by_channel.csv"), m.by_channel_csv())?;
    write(&dir.join("confusion.csv"), m.confusion_csv())?;
    write(&dir.join("per_class.csv"), m.per_class_csv())?;
    write(&dir.join("runtime.json"), format!("{{\"runtime_secs\":{}}}\n", m.runtime_secs))?;
    let pts: Vec<(f64, f64)> = m.by_snr.iter().map(|g| (g.snr_db, g.accuracy)).collect();
    write(
        &dir.join("accuracy_vs_snr.svg"),
        svg::line_chart("Accuracy vs SNR", "SNR (dB)", "accuracy (%)", (0.0, 100.0), &[("model".into(), pts)]),
    )?;
    let bars: Vec<(String, f64)> = m.by_channel.iter().map(|g| (g.group.clone(), g.accuracy)).collect();
    let title = format!("Accuracy by channel at {fixed_snr_db} dB");
    write(&dir.join("accuracy_by_channel.svg"), svg::bar_chart(&title, "accuracy (%)", (0.0, 100.0), &bars))
}

fn ablate(ctx: &Ctx, a: &AblateArgs) -> Result<()> {
    let pop = ctx.population()?;
    let records = ctx.records(&pop)?;
    let split = ctx.split(&records)?;
    let manifest = DatasetManifest::from_json(&fs::read_to_string(ctx.at.manifest())?)?;
    let ds = Dataset { records, manifest };
    let mut variants = a.variants.clone();
    variants.dedup();
    let run = run_ablation(&ctx.cfg, &pop, &ds, &split, &variants, !a.no_ls)?;
    write(&ctx.at.root.join("ablation.csv"), run.table.to_csv())?;
    let series: Vec<(String, Vec<(f64, f64)>)> = run
        .table
        .rows
        .iter()
        .map(|r| (r.method.clone(), run.table.snr_db.iter().copied().zip(r.accuracy.iter().copied()).collect()))
        .collect();
    write(
        &ctx.at.root.join("ablation.svg"),
        svg::line_chart("Accuracy per variant", "SNR (dB)", "accuracy (%)", (0.0, 100.0), &series),
    )?;
    for (name, m) in &run.reports {
        let dir = ctx.at.root.join(format!("eval_{name}"));
        fs::create_dir_all(&dir)?;
        write_report(&dir, m, ctx.cfg.eval.fixed_snr_db)?;
    }
    print!("{}", run.table.to_csv());
    Ok(())
}

fn export(ctx: &Ctx, a: &ExportArgs) -> Result<()> {
    let pop = ctx.population()?;
    let ckpt = ModelCheckpoint::read(&a.checkpoint)?;
    if ckpt.kind == CheckpointKind::LsClassifier {
        return Err(CliError::Config("LS checkpoints have no embeddings".into()));
    }
    let mut net = network_from_checkpoint(&ckpt)?;
    let records = ctx.part(&ctx.records(&pop)?, a.part)?;
    let csv = export_embeddings(&mut net, &records, a.stage, ctx.cfg.eval.batch_size)?;
    let name = match a.stage {
        EmbeddingStage::EncoderR => "encoder_r",
        EmbeddingStage::ProjectionZ => "projection_z",
    };
    let path = ctx.at.root.join(format!("embeddings_{name}.csv"));
    write(&path, csv)?;
    println!("{} rows -> {}", records.len(), path.display());
    Ok(())
}
