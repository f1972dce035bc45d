//! Command-line front end. [`run`] returns the process exit code: 0 on
//! success, 1 for bad data or weights, 2 for usage errors.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use lungline_core::arch::build_mobilenet_v2;
use lungline_core::data::{split_dataset, SplitSpec, COVID, VIRAL_PNEUMONIA};
use lungline_core::finetune::{OneCycle, TrainConfig, TrainHistory};
use lungline_core::metrics::confusion_matrix;
use lungline_core::preprocess::AugmentConfig;
use lungline_core::tensor::softmax;
use lungline_core::weights::WeightContainer;
use serde::Serialize;

use crate::error::{Context, Error, Result};
use crate::lwt::save_lwt_file;
use crate::manifest::{read_manifest, resolve, write_manifest};
use crate::pipeline::{
    argmax_rows, finetune, load_model, manifest_jobs, read_classes, write_classes, ImageJob,
    Pipeline, TrainInputs,
};
use crate::report::{
    evaluation_payload, footprint_payload, ClassificationPayload, Mode, Prediction, Report,
    ReportKind, SplitSummaryPayload,
};

#[derive(Debug, Parser)]
#[command(
    name = "lungline",
    version,
    about = "MobileNetV2 chest X-ray toolkit: splits, head fine-tuning, classification, evaluation and footprint reports",
    arg_required_else_help = true
)]
struct Cli {
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write the report to this file instead of standard output.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a manifest into train.csv, val.csv and test.csv with exact per-class counts.
    Split(SplitArgs),
    /// Train a fresh classifier head on frozen backbone features.
    Finetune(FinetuneArgs),
    /// Classify PNG images.
    Classify(ClassifyArgs),
    /// Confusion matrix and per-class metrics for a labelled manifest.
    Evaluate(EvaluateArgs),
    /// Parameter count and memory footprint of an architecture.
    Footprint(FootprintArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Pick from the manifest's classes.
    Auto,
    ThreeClass,
    CovidNormal,
    CovidPneumonia,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Auto)]
    preset: Preset,
    /// Per-class training counts, overriding the preset (with --val and --test).
    #[arg(long, value_delimiter = ',', requires_all = ["val", "test"])]
    train: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', requires_all = ["train", "test"])]
    val: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', requires_all = ["train", "val"])]
    test: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Class order; defaults to the sorted labels.
    #[arg(long, value_delimiter = ',')]
    class_names: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    /// Starting weights (LWT); a head of another width is replaced.
    #[arg(long, alias = "weights")]
    model: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    /// Where to write the trained weights.
    #[arg(long)]
    save: PathBuf,
    /// History CSV destination; standard output when absent.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    class_names: Option<Vec<String>>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    max_lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    dropout: Option<f64>,
    /// Augmented views of every training image added to the cached features.
    #[arg(long, default_value_t = 0)]
    augment_copies: usize,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long, alias = "weights")]
    model: PathBuf,
    #[arg(long, value_delimiter = ',')]
    class_names: Option<Vec<String>>,
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long, alias = "weights", required_unless_present = "predictions")]
    model: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Macro)]
    mode: ModeArg,
    /// Score a `path,label` CSV of predictions instead of running a model.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    class_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Micro,
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Arch {
    #[value(name = "mobilenet_v2")]
    MobilenetV2,
}

#[derive(Debug, Args)]
struct FootprintArgs {
    #[arg(long, value_enum, default_value_t = Arch::MobilenetV2)]
    arch: Arch,
    #[arg(long, default_value_t = 1000)]
    classes: usize,
    #[arg(long, default_value_t = 1.0)]
    width_mult: f64,
    #[arg(long, default_value_t = 4)]
    bytes_per_param: u64,
    /// Append published footprints of heavyweight models.
    #[arg(long)]
    compare: bool,
}

/// Runs the CLI on `argv` (without the program name) using the process's
/// standard streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// [`run`] with explicit output and diagnostic streams.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args = std::iter::once(OsString::from("lungline")).chain(argv.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind::{DisplayHelp, DisplayVersion};
            let rendered = e.render().to_string();
            return if matches!(e.kind(), DisplayHelp | DisplayVersion) {
                let _ = out.write_all(rendered.as_bytes());
                0
            } else {
                let _ = err.write_all(rendered.as_bytes());
                2
            };
        }
    };
    match dispatch(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let _ = writeln!(err, "  caused by: {s}");
                source = s.source();
            }
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let report = match &cli.command {
        Command::Split(a) => split(a)?,
        Command::Finetune(a) => return finetune_cmd(a, out, err),
        Command::Classify(a) => classify(a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Footprint(a) => footprint(a)?,
    };
    let text = match cli.format {
        Format::Json => report.to_json(),
        Format::Text => report.render_text()?,
    };
    match &cli.out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn split(a: &SplitArgs) -> Result<Report> {
    let manifest = read_manifest(&a.manifest, a.class_names.as_deref())?;
    let names = manifest.class_names();
    let spec = match (&a.train, &a.val, &a.test) {
        (Some(train), Some(val), Some(test)) => SplitSpec {
            train: train.clone(),
            val: val.clone(),
            test: test.clone(),
            seed: a.seed,
        },
        _ => match a.preset {
            Preset::ThreeClass => SplitSpec::three_class(a.seed),
            Preset::CovidNormal => SplitSpec::covid_normal(a.seed),
            Preset::CovidPneumonia => SplitSpec::covid_pneumonia(a.seed),
            Preset::Auto => match names.len() {
                3 => SplitSpec::three_class(a.seed),
                2 if names.iter().any(|n| n == VIRAL_PNEUMONIA) => {
                    SplitSpec::covid_pneumonia(a.seed)
                }
                2 => SplitSpec::covid_normal(a.seed),
                k => {
                    return Err(Error::Usage(format!(
                        "no preset for {k} classes; pass --train, --val and --test"
                    )))
                }
            },
        },
    };
    if names.len() == 2 && names[0] != COVID && a.train.is_none() {
        return Err(Error::Usage(format!(
            "presets put {COVID} first but the class order is {names:?}; pass --class-names"
        )));
    }
    let splits = split_dataset(&manifest, &spec).context(|| a.manifest.display().to_string())?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let mut files = Vec::new();
    for (name, part) in [
        ("train.csv", &splits.train),
        ("val.csv", &splits.val),
        ("test.csv", &splits.test),
    ] {
        let p = a.out_dir.join(name);
        write_manifest(&p, part)?;
        files.push(p.display().to_string());
    }
    Report::new(
        ReportKind::SplitSummary,
        &SplitSummaryPayload {
            seed: a.seed,
            classes: names.to_vec(),
            train: splits.train.class_counts(),
            val: splits.val.class_counts(),
            test: splits.test.class_counts(),
            files,
        },
    )
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    train_loss: f64,
    train_acc: f64,
    val_loss: Option<f64>,
    val_acc: Option<f64>,
    lr: f64,
}

/// Training history as CSV: `epoch,train_loss,train_acc,val_loss,val_acc,lr`;
/// validation cells are empty without a validation set.
pub fn history_csv(history: &TrainHistory) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in &history.epochs {
        w.serialize(HistoryRow {
            epoch: e.epoch,
            train_loss: e.train_loss,
            train_acc: e.train_acc,
            val_loss: e.val_loss,
            val_acc: e.val_acc,
            lr: e.lr,
        })
        .expect("in-memory CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV of numbers is UTF-8")
}

fn finetune_cmd(a: &FinetuneArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        max_lr: a.max_lr,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        seed: a.seed,
        dropout: a.dropout,
        schedule: OneCycle::default(),
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;

    let train = read_manifest(&a.train, a.class_names.as_deref())?;
    let classes = train.class_names().to_vec();
    let val = a
        .val
        .as_deref()
        .map(|p| read_manifest(p, Some(&classes)))
        .transpose()?;
    let loaded = load_model(&a.model, Some(classes.len()), a.seed)?;
    for name in &loaded.report.unused {
        let _ = writeln!(
            err,
            "warning: {}: unused tensor `{name}`",
            a.model.display()
        );
    }
    let mut pipeline = Pipeline::from_env()?;
    if a.augment_copies > 0 {
        pipeline.augment = AugmentConfig {
            seed: a.seed,
            ..AugmentConfig::default()
        };
    }
    let inputs = TrainInputs {
        train_path: &a.train,
        train: &train,
        val_path: a.val.as_deref(),
        val: val.as_ref(),
        augment_copies: a.augment_copies,
    };
    let (model, history) = finetune(&pipeline, loaded.model, &inputs, &cfg)?;
    let bytes = save_lwt_file(&WeightContainer::from_model(&model), &a.save)?;
    write_classes(&a.save, &classes)?;

    let csv = history_csv(&history);
    match &a.history {
        Some(p) => std::fs::write(p, &csv).map_err(|e| Error::io(p, e))?,
        None => out
            .write_all(csv.as_bytes())
            .map_err(|e| Error::io("<stdout>", e))?,
    }
    if let Some(last) = history.epochs.last() {
        let _ = writeln!(
            err,
            "head {} -> {} classes; {} epochs; final train acc {:.4}{}; wrote {} bytes to {}",
            loaded.source_classes,
            classes.len(),
            history.epochs.len(),
            last.train_acc,
            last.val_acc
                .map_or(String::new(), |v| format!(", val acc {v:.4}")),
            bytes,
            a.save.display()
        );
    }
    Ok(())
}

/// Class names for a model: flag, then the weight file's sidecar, then
/// `fallback`.
fn model_class_names(
    model: Option<&Path>,
    flag: Option<&[String]>,
    fallback: impl FnOnce() -> Vec<String>,
) -> Result<Vec<String>> {
    if let Some(f) = flag {
        return Ok(f.to_vec());
    }
    if let Some(m) = model {
        if let Some(names) = read_classes(m)? {
            return Ok(names);
        }
    }
    Ok(fallback())
}

fn check_width(model: &Path, names: &[String], k: usize) -> Result<()> {
    if names.len() != k {
        return Err(Error::Core {
            context: model.display().to_string(),
            source: lungline_core::Error::Config(format!(
                "model has {k} outputs but {} class names were given: {names:?}",
                names.len()
            )),
        });
    }
    Ok(())
}

fn classify(a: &ClassifyArgs) -> Result<Report> {
    let loaded = load_model(&a.model, None, 0)?;
    let k = loaded.model.num_classes();
    let names = model_class_names(Some(&a.model), a.class_names.as_deref(), || {
        (0..k).map(|i| format!("class{i}")).collect()
    })?;
    check_width(&a.model, &names, k)?;
    let jobs: Vec<ImageJob> = a
        .images
        .iter()
        .map(|p| ImageJob {
            path: p.clone(),
            draw: None,
        })
        .collect();
    let logits = Pipeline::from_env()?.logits(&loaded.model, &jobs)?;
    let probs = softmax(&logits).context(|| "softmax".into())?;
    let predictions = a
        .images
        .iter()
        .zip(argmax_rows(&logits))
        .zip(probs.data().chunks_exact(k))
        .map(|((path, index), p)| Prediction {
            path: path.display().to_string(),
            label: names[index].clone(),
            index,
            probabilities: p.to_vec(),
        })
        .collect();
    Report::new(
        ReportKind::Classification,
        &ClassificationPayload {
            classes: names,
            predictions,
        },
    )
}

fn evaluate(a: &EvaluateArgs) -> Result<Report> {
    let mode = match a.mode {
        ModeArg::Micro => Mode::Micro,
        ModeArg::Macro => Mode::Macro,
    };
    let (names, labels, preds) = match &a.predictions {
        Some(pred_path) => {
            let truth_raw = read_manifest(&a.manifest, None)?;
            let pred_raw = read_manifest(pred_path, None)?;
            let names = model_class_names(a.model.as_deref(), a.class_names.as_deref(), || {
                truth_raw
                    .class_names()
                    .iter()
                    .chain(pred_raw.class_names())
                    .cloned()
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect()
            })?;
            let truth = read_manifest(&a.manifest, Some(&names))?;
            let pred = read_manifest(pred_path, Some(&names))?;
            let by_path: BTreeMap<_, _> = pred
                .records()
                .iter()
                .map(|r| (resolve(pred_path, r), r.label))
                .collect();
            let mut preds = Vec::with_capacity(truth.len());
            for r in truth.records() {
                let p = resolve(&a.manifest, r);
                preds.push(*by_path.get(&p).ok_or_else(|| {
                    Error::manifest(pred_path, format!("no prediction for `{}`", p.display()))
                })?);
            }
            (names, truth.labels(), preds)
        }
        None => {
            let model_path = a
                .model
                .as_deref()
                .expect("clap requires --model without --predictions");
            let loaded = load_model(model_path, None, 0)?;
            let k = loaded.model.num_classes();
            let names =
                match model_class_names(Some(model_path), a.class_names.as_deref(), Vec::new)? {
                    n if !n.is_empty() => n,
                    _ => read_manifest(&a.manifest, None)?.class_names().to_vec(),
                };
            check_width(model_path, &names, k)?;
            let truth = read_manifest(&a.manifest, Some(&names))?;
            let logits =
                Pipeline::from_env()?.logits(&loaded.model, &manifest_jobs(&a.manifest, &truth))?;
            (names, truth.labels(), argmax_rows(&logits))
        }
    };
    let cm = confusion_matrix(&preds, &labels, names.len())
        .context(|| a.manifest.display().to_string())?;
    Report::new(
        ReportKind::Evaluation,
        &evaluation_payload(&names, &cm, mode)?,
    )
}

fn footprint(a: &FootprintArgs) -> Result<Report> {
    let Arch::MobilenetV2 = a.arch;
    if a.bytes_per_param == 0 {
        return Err(Error::Usage("--bytes-per-param must be positive".into()));
    }
    let model =
        build_mobilenet_v2(a.classes, a.width_mult).map_err(|e| Error::Usage(e.to_string()))?;
    Report::new(
        ReportKind::Footprint,
        &footprint_payload(
            "mobilenet_v2",
            a.classes,
            a.width_mult,
            &model.count_params(),
            a.bytes_per_param,
            a.compare,
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_with(args.iter().copied(), &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn no_arguments_prints_usage_and_exits_2() {
        let (code, out, err) = run_capture(&[]);
        assert_eq!(code, 2);
        assert!(out.is_empty());
        assert!(err.contains("Usage"), "{err}");
    }

    #[test]
    fn help_goes_to_stdout() {
        let (code, out, _) = run_capture(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("footprint"));
    }

    #[test]
    fn footprint_reports_the_imagenet_model() {
        let (code, out, _) =
            run_capture(&["footprint", "--arch", "mobilenet_v2", "--classes", "1000"]);
        assert_eq!(code, 0);
        assert!(out.contains("\"total_params\": 3538984"), "{out}");
        assert!(out.contains("\"bytes\": 14155936"));
    }

    #[test]
    fn bad_values_are_usage_errors() {
        assert_eq!(run_capture(&["footprint", "--classes", "0"]).0, 2);
        assert_eq!(run_capture(&["footprint", "--arch", "vgg16"]).0, 2);
        assert_eq!(run_capture(&["evaluate", "--manifest", "x.csv"]).0, 2);
    }

    #[test]
    fn missing_files_are_domain_errors() {
        let (code, _, err) = run_capture(&["classify", "--model", "/nonexistent/m.lwt", "a.png"]);
        assert_eq!(code, 1);
        assert!(err.contains("/nonexistent/m.lwt"), "{err}");
    }
}
