use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use serde::de::DeserializeOwned;
use taxcode_core::dataset::{self, synth_corpus, ProductRecord};
use taxcode_core::infer::{predict_batch, PredictionRecord};
use taxcode_core::io::{atomic_write, read_jsonl, write_json_file, write_jsonl_file, IoError};
use taxcode_core::metrics::{evaluate, EvalReport};
use taxcode_core::moe::init_model;
use taxcode_core::semantic::{
    annotate_corpus, annotation_rows, annotation_table, distill_judge_with, AnnotationRow, Judge,
};
use taxcode_core::semantic::{JudgeModel, OracleJudge};
use taxcode_core::train::pipeline::{contrast_if_degenerate, label_dev, CLEANSED};
use taxcode_core::train::{fit, run_pipeline, EpochLog};
use taxcode_core::{MoeModel, Taxonomy};

use crate::config::{Manifest, Resolved};
use crate::error::{core, CliError};

const MANIFEST: &str = "run_manifest.json";

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|source| CliError::Read { path: path.to_path_buf(), source })
}

fn parse_error<E: std::error::Error + Send + Sync + 'static>(path: &Path, e: E) -> CliError {
    CliError::Parse { path: path.to_path_buf(), source: Box::new(e) }
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    read_jsonl(open(path)?).map_err(|e| match e {
        IoError::Io(source) => CliError::Read { path: path.to_path_buf(), source },
        other => parse_error(path, other),
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_reader(open(path)?).map_err(|e| parse_error(path, e))
}

fn read_taxonomy(path: &Path) -> Result<Taxonomy, CliError> {
    Taxonomy::load(open(path)?).map_err(|e| parse_error(path, e))
}

/// The path given on the command line, else the one from the config file.
fn pick(flag: &Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| CliError::Usage(format!("--{what} is required (or set paths.{what} in the config)")))
}

/// Explicit `--manifest`, else `run_manifest.json` inside an output
/// directory or `<file>.manifest.json` beside an output file.
fn manifest_path(explicit: Option<&Path>, out: &Path, out_is_dir: bool) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None if out_is_dir => out.join(MANIFEST),
        None => {
            let mut name = out.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            out.with_file_name(name)
        }
    }
}

fn write_taxonomy(path: &Path, taxonomy: &Taxonomy) -> Result<(), CliError> {
    atomic_write(path, |w| taxonomy.save(w)).map_err(core)
}

fn write_log(path: &Path, log: &[EpochLog]) -> Result<(), CliError> {
    write_jsonl_file(path, log).map_err(core)
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory for taxonomy.json and records.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write truth.jsonl: the records with their noise-free paths.
    #[arg(long)]
    with_truth: bool,
}

pub fn gen(args: &GenArgs, r: &Resolved, manifest: Option<&Path>) -> Result<(), CliError> {
    let out = pick(&args.out, &r.config.paths.out, "out")?;
    let mut m = Manifest::start("gen", r);
    let corpus = synth_corpus(&r.config.synth, r.seed()).map_err(core)?;
    let tax = out.join("taxonomy.json");
    write_taxonomy(&tax, &corpus.taxonomy)?;
    let records = out.join("records.jsonl");
    write_jsonl_file(&records, &corpus.records).map_err(core)?;
    m.output(&tax);
    m.output(&records);
    if args.with_truth {
        let truth: Vec<ProductRecord> = corpus
            .records
            .iter()
            .zip(&corpus.truth)
            .map(|(rec, path)| ProductRecord { label_path: path.clone(), ..rec.clone() })
            .collect();
        let path = out.join("truth.jsonl");
        write_jsonl_file(&path, &truth).map_err(core)?;
        m.output(&path);
    }
    println!("{} nodes, {} records -> {}", corpus.node_count, corpus.records.len(), out.display());
    m.write(&manifest_path(manifest, &out, true))
}

#[derive(Debug, Args)]
pub struct CleanseArgs {
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
    /// Output directory for cleansed.jsonl and rejections.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn cleanse(args: &CleanseArgs, r: &Resolved, manifest: Option<&Path>) -> Result<(), CliError> {
    let paths = &r.config.paths;
    let (tax_path, rec_path) =
        (pick(&args.taxonomy, &paths.taxonomy, "taxonomy")?, pick(&args.records, &paths.records, "records")?);
    let out = pick(&args.out, &paths.out, "out")?;
    let mut m = Manifest::start("cleanse", r);
    m.input("taxonomy", &tax_path);
    m.input("records", &rec_path);
    let taxonomy = read_taxonomy(&tax_path)?;
    let outcome = dataset::cleanse(read_lines(&rec_path)?, &taxonomy);
    let kept = out.join(CLEANSED);
    let rejected = out.join("rejections.jsonl");
    write_jsonl_file(&kept, &outcome.kept).map_err(core)?;
    write_jsonl_file(&rejected, &outcome.report()).map_err(core)?;
    m.output(&kept);
    m.output(&rejected);
    println!("kept {}, rejected {}", outcome.kept.len(), outcome.rejected.len());
    m.write(&manifest_path(manifest, &out, true))
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    records: Option<PathBuf>,
    /// Output directory for train.jsonl, val.jsonl and test.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn split(args: &SplitArgs, r: &Resolved, manifest: Option<&Path>) -> Result<(), CliError> {
    let rec_path = pick(&args.records, &r.config.paths.records, "records")?;
    let out = pick(&args.out, &r.config.paths.out, "out")?;
    let mut m = Manifest::start("split", r);
    m.input("records", &rec_path);
    let parts = dataset::split(read_lines(&rec_path)?, &r.pipeline().split).map_err(core)?;
    for (name, part) in [("train.jsonl", &parts.train), ("val.jsonl", &parts.val), ("test.jsonl", &parts.test)] {
        let path = out.join(name);
        write_jsonl_file(&path, part).map_err(core)?;
        m.output(&path);
    }
    println!("train {}, val {}, test {}", parts.train.len(), parts.val.len(), parts.test.len());
    m.write(&manifest_path(manifest, &out, true))
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Raw records; cleansing is the first stage.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Output directory for the stage artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn pipeline(args: &PipelineArgs, r: &Resolved, manifest: Option<&Path>) -> Result<(), CliError> {
    let paths = &r.config.paths;
    let (tax_path, rec_path) =
        (pick(&args.taxonomy, &paths.taxonomy, "taxonomy")?, pick(&args.records, &paths.records, "records")?);
    let out = pick(&args.out, &paths.out, "out")?;
    let mut m = Manifest::start("pipeline", r);
    m.input("taxonomy", &tax_path);
    m.input("records", &rec_path);
    let taxonomy = read_taxonomy(&tax_path)?;
    let outcome = run_pipeline(read_lines(&rec_path)?, &taxonomy, r.pipeline(), &out).map_err(core)?;
    for a in &outcome.artifacts {
        m.output(a);
    }
    for (name, log) in [("prelim_log.jsonl", &outcome.prelim_log), ("train_log.jsonl", &outcome.final_log)] {
        let path = out.join(name);
        write_log(&path, log)?;
        m.output(&path);
    }
    println!(
        "rejected {}, dev sample {} (judge holdout agreement {:.4})",
        outcome.rejected,
        outcome.dev.selected(),
        outcome.judge.holdout_agreement
    );
    print!("{}", outcome.report.to_table());
    m.write(&manifest_path(manifest, &out, true))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Training records; the metadata vocabularies are built from them.
    #[arg(long)]
    train: PathBuf,
    /// Validation records for best-epoch selection.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Consistency annotations (id, verdict, rationale) for the semantic loss.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Model checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch log (JSON Lines).
    #[arg(long)]
    log: Option<PathBuf>,
}

pub fn train(args: &TrainArgs, r: &Resolved, manifest: Option<&Path>) -> Result<(), CliError> {
    let paths = &r.config.paths;
    let tax_path = pick(&args.taxonomy, &paths.taxonomy, "taxonomy")?;
    let out = pick(&args.out, &paths.out, "out")?;
    let mut m = Manifest::start("train", r);
    m.input("taxonomy", &tax_path);
    m.input("train", &args.train);
    let taxonomy = read_taxonomy(&tax_path)?;
    let train: Vec<ProductRecord> = read_lines(&args.train)?;
    let val: Vec<ProductRecord> = match &args.val {
        Some(p) => {
            m.input("val", p);
            read_lines(p)?
        }
        None => Vec::new(),
    };
    let table = match &args.annotations {
        Some(p) => {
            m.input("annotations", p);
            Some(annotation_table(read_lines::<AnnotationRow>(p)?).map_err(core)?)
        }
        None => {
            if r.pipeline().train.loss_weights.omega_s < 1.0 {
                log::warn!("no annotations given: the semantic loss term is zero for every record");
            }
            None
        }
    };
    let p = r.pipeline();
    let encoder = p.encoder.clone().with_vocabularies(&train);
    let model = init_model(&taxonomy, &encoder, &p.moe, p.seed).map_err(core)?;
    let (model, log) = fit(model, &train, &val, &taxonomy, table.as_ref(), &p.train).map_err(core)?;
    atomic_write(&out, |w| model.save(w).map_err(taxcode_core::Error::from)).map_err(CliError::Core)?;
    m.output(&out);
    if let Some(path) = &args.log {
        write_log(path, &log)?;
        m.output(path);
    }
    if let Some(last) = log.last() {
        println!("epoch {}: train loss {:.6}", last.epoch, last.train_loss);
    }
    m.write(&manifest_path(manifest, &out, false))
}

#[derive(Debug, Subcommand)]
pub enum JudgeCommand {
    /// Label a dev sample with the overlap oracle and distill a judge from it.
    Distill(DistillArgs),
    /// Annotate records with consistency verdicts.
    Annotate(AnnotateArgs),
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Dev sample (records).
    #[arg(long)]
    dev: PathBuf,
    /// Judge checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the oracle labels (JSON Lines).
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
    /// Distilled judge checkpoint.
    #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
    judge: Option<PathBuf>,
    /// Use the overlap oracle instead of a distilled judge.
    #[arg(long)]
    oracle: bool,
    /// Annotation table to write (JSON Lines).
    #[arg(long)]
    out: PathBuf,
}

pub fn judge(cmd: &JudgeCommand, r: &Resolved, manifest: Option<&Path>) -> Result<(), CliError> {
    let paths = &r.config.paths;
    let oracle = OracleJudge::new(r.pipeline().judge_thresholds).map_err(core)?;
    match cmd {
        JudgeCommand::Distill(a) => {
            let tax_path = pick(&a.taxonomy, &paths.taxonomy, "taxonomy")?;
            let mut m = Manifest::start("judge distill", r);
            m.input("taxonomy", &tax_path);
            m.input("dev", &a.dev);
            let taxonomy = read_taxonomy(&tax_path)?;
            let dev: Vec<ProductRecord> = read_lines(&a.dev)?;
            let mut labeled = label_dev(&dev, &oracle, &taxonomy).map_err(core)?;
            let added = contrast_if_degenerate(&mut labeled, &oracle, &taxonomy, r.seed()).map_err(core)?;
            if added > 0 {
                log::warn!("dev labels lack a verdict class; added {added} mismatched pairs");
            }
            let judge = distill_judge_with(&labeled, &taxonomy, r.seed(), &r.pipeline().distill).map_err(core)?;
            atomic_write(&a.out, |w| judge.save(w).map_err(taxcode_core::Error::from)).map_err(CliError::Core)?;
            m.output(&a.out);
            if let Some(path) = &a.labels {
                let rows: Vec<AnnotationRow> = dev
                    .iter()
                    .zip(&labeled)
                    .map(|(rec, l)| AnnotationRow {
                        id: rec.id.clone(),
                        verdict: l.label.verdict,
                        rationale: l.label.rationale.clone(),
                    })
                    .collect();
                write_jsonl_file(path, &rows).map_err(core)?;
                m.output(path);
            }
            println!("holdout agreement {:.4} on {} pairs", judge.holdout_agreement, judge.holdout_size);
            m.write(&manifest_path(manifest, &a.out, false))
        }
        JudgeCommand::Annotate(a) => {
            let tax_path = pick(&a.taxonomy, &paths.taxonomy, "taxonomy")?;
            let rec_path = pick(&a.records, &paths.records, "records")?;
            let mut m = Manifest::start("judge annotate", r);
            m.input("taxonomy", &tax_path);
            m.input("records", &rec_path);
            let taxonomy = read_taxonomy(&tax_path)?;
            let records: Vec<ProductRecord> = read_lines(&rec_path)?;
            let distilled;
            let judge: &dyn Judge = match &a.judge {
                Some(p) => {
                    m.input("judge", p);
                    distilled = JudgeModel::load(open(p)?).map_err(|e| parse_error(p, e))?;
                    &distilled
                }
                None => &oracle,
            };
            let table = annotate_corpus(&records, judge, &taxonomy).map_err(core)?;
            write_jsonl_file(&a.out, &annotation_rows(&table)).map_err(core)?;
            m.output(&a.out);
            println!("annotated {} records", table.len());
            m.write(&manifest_path(manifest, &a.out, false))
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
    /// Prediction dump to write (JSON Lines).
    #[arg(long)]
    out: PathBuf,
    /// Rebuild each leaf-ending path from the leaf's ancestors.
    #[arg(long)]
    repath: bool,
}

pub fn predict(args: &PredictArgs, r: &Resolved, manifest: Option<&Path>) -> Result<(), CliError> {
    let paths = &r.config.paths;
    let tax_path = pick(&args.taxonomy, &paths.taxonomy, "taxonomy")?;
    let rec_path = pick(&args.records, &paths.records, "records")?;
    let mut m = Manifest::start("predict", r);
    m.input("model", &args.model);
    m.input("taxonomy", &tax_path);
    m.input("records", &rec_path);
    let taxonomy = read_taxonomy(&tax_path)?;
    let model = MoeModel::load(open(&args.model)?, Some(&taxonomy)).map_err(|e| parse_error(&args.model, e))?;
    let records: Vec<ProductRecord> = read_lines(&rec_path)?;
    let preds = predict_batch(&model, &records, &taxonomy, r.pipeline().tau_leaf, args.repath).map_err(core)?;
    let dump: Vec<PredictionRecord> =
        records.iter().zip(&preds).map(|(rec, p)| PredictionRecord::new(&rec.id, p)).collect();
    write_jsonl_file(&args.out, &dump).map_err(core)?;
    m.output(&args.out);
    println!("{} predictions -> {}", dump.len(), args.out.display());
    m.write(&manifest_path(manifest, &args.out, false))
}

#[derive(Debug, Args)]
pub struct RepathArgs {
    /// Prediction dump to rewrite.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

pub fn repath(args: &RepathArgs, r: &Resolved, manifest: Option<&Path>) -> Result<(), CliError> {
    let tax_path = pick(&args.taxonomy, &r.config.paths.taxonomy, "taxonomy")?;
    let mut m = Manifest::start("repath", r);
    m.input("pred", &args.pred);
    m.input("taxonomy", &tax_path);
    let taxonomy = read_taxonomy(&tax_path)?;
    let preds: Vec<PredictionRecord> = read_lines(&args.pred)?;
    for p in &preds {
        if !taxonomy.contains(&p.leaf) {
            return Err(CliError::Usage(format!("prediction {}: unknown leaf `{}`", p.id, p.leaf)));
        }
    }
    let fixed: Vec<PredictionRecord> = preds.iter().map(|p| p.repathed(&taxonomy)).collect();
    let changed = preds.iter().zip(&fixed).filter(|(a, b)| a.path != b.path).count();
    write_jsonl_file(&args.out, &fixed).map_err(core)?;
    m.output(&args.out);
    println!("{changed} of {} paths changed", fixed.len());
    m.write(&manifest_path(manifest, &args.out, false))
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction dump (JSON Lines).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth records (JSON Lines).
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the confidence CDF as CSV.
    #[arg(long)]
    cdf: Option<PathBuf>,
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    atomic_write(path, |w| w.write_all(text.as_bytes()).map_err(IoError::from)).map_err(core)
}

pub fn eval(args: &EvalArgs, r: &Resolved, manifest: Option<&Path>) -> Result<(), CliError> {
    let tax_path = pick(&args.taxonomy, &r.config.paths.taxonomy, "taxonomy")?;
    let mut m = Manifest::start("eval", r);
    m.input("pred", &args.pred);
    m.input("truth", &args.truth);
    m.input("taxonomy", &tax_path);
    let taxonomy = read_taxonomy(&tax_path)?;
    let preds: Vec<PredictionRecord> = read_lines(&args.pred)?;
    let truth: Vec<ProductRecord> = read_lines(&args.truth)?;
    let report = evaluate(&preds, &truth, &taxonomy, r.pipeline().include_absent_categories).map_err(core)?;
    print!("{}", report.to_table());
    if let Some(path) = &args.out {
        write_json_file(path, &report).map_err(core)?;
        m.output(path);
    }
    if let Some(path) = &args.cdf {
        write_text(path, &report.cdf_csv())?;
        m.output(path);
    }
    match (manifest, &args.out) {
        (Some(p), _) => m.write(p),
        (None, Some(out)) => m.write(&manifest_path(None, out, false)),
        (None, None) => Ok(()),
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation report JSON (from `eval --out` or the pipeline).
    #[arg(long)]
    metrics: PathBuf,
    /// Second report to compare against; differences are in points.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Write the confidence CDF as CSV.
    #[arg(long)]
    cdf: Option<PathBuf>,
}

pub fn report(args: &ReportArgs, r: &Resolved, manifest: Option<&Path>) -> Result<(), CliError> {
    let mut m = Manifest::start("report", r);
    m.input("metrics", &args.metrics);
    let report: EvalReport = read_json(&args.metrics)?;
    print!("{}", report.to_table());
    if let Some(path) = &args.baseline {
        m.input("baseline", path);
        let base: EvalReport = read_json(path)?;
        let (a, b) = (report.scores, base.scores);
        println!(
            "{:<10} {:>+7.2} {:>+7.2} {:>+7.2} {:>+7.2}",
            "vs base",
            100.0 * (a.path_macro_f1 - b.path_macro_f1),
            100.0 * (a.path_micro_f1 - b.path_micro_f1),
            100.0 * (a.leaf_macro_f1 - b.leaf_macro_f1),
            100.0 * (a.leaf_micro_f1 - b.leaf_micro_f1),
        );
    }
    if let Some(path) = &args.cdf {
        write_text(path, &report.cdf_csv())?;
        m.output(path);
    }
    match manifest {
        Some(p) => m.write(p),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_locations() {
        let out = Path::new("runs/a");
        assert_eq!(manifest_path(None, out, true), Path::new("runs/a/run_manifest.json"));
        assert_eq!(
            manifest_path(None, Path::new("runs/model.ckpt"), false),
            Path::new("runs/model.ckpt.manifest.json")
        );
        assert_eq!(manifest_path(Some(Path::new("m.json")), out, true), Path::new("m.json"));
    }

    #[test]
    fn configured_paths_are_fallbacks() {
        let flag = Some(PathBuf::from("flag"));
        let cfg = Some(PathBuf::from("cfg"));
        assert_eq!(pick(&flag, &cfg, "x").unwrap(), PathBuf::from("flag"));
        assert_eq!(pick(&None, &cfg, "x").unwrap(), PathBuf::from("cfg"));
        assert!(matches!(pick(&None, &None, "x"), Err(CliError::Usage(_))));
    }
}
