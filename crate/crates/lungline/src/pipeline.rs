//! Image → tensor → network plumbing, parallel per image.
//!
//! Every image is handled independently and results are collected in input
//! order, so the worker count never changes an output bit.

use std::path::{Path, PathBuf};

use lungline_core::arch::{build_mobilenet_v2, ModelGraph, HEAD_WEIGHT};
use lungline_core::data::DatasetManifest;
use lungline_core::finetune::{finetune_head, FeatureSet, TrainConfig, TrainHistory};
use lungline_core::preprocess::{augment, to_model_input, AugmentConfig, NormalizationSpec};
use lungline_core::weights::{bind_weights, BindReport, WeightContainer};
use lungline_core::Tensor;
use rayon::prelude::*;

use crate::error::{Context, Error, Result};
use crate::image_io::load_image;
use crate::lwt::load_lwt_file;
use crate::manifest::resolve;

pub const THREADS_ENV: &str = "LUNGLINE_THREADS";

/// Worker cap from `LUNGLINE_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
    }
}

/// One image to push through the network; `draw` selects an augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageJob {
    pub path: PathBuf,
    pub draw: Option<u64>,
}

pub struct Pipeline {
    pool: rayon::ThreadPool,
    pub norm: NormalizationSpec,
    pub augment: AugmentConfig,
}

impl Pipeline {
    pub fn new(threads: Option<usize>) -> Result<Self> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            pool,
            norm: NormalizationSpec::default(),
            augment: AugmentConfig::disabled(),
        })
    }

    pub fn from_env() -> Result<Self> {
        Self::new(thread_cap()?)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// 1×3×224×224 network input for one image.
    pub fn input(&self, job: &ImageJob) -> Result<Tensor> {
        let mut img = load_image(&job.path)?;
        if let Some(draw) = job.draw {
            img = augment(&img, &self.augment, draw).context(|| job.path.display().to_string())?;
        }
        to_model_input(&img, &self.norm)
            .and_then(|t| t.reshape(&[1, 3, 224, 224]))
            .context(|| job.path.display().to_string())
    }

    fn per_image(
        &self,
        model: &ModelGraph,
        jobs: &[ImageJob],
        f: impl Fn(&ModelGraph, &Tensor) -> lungline_core::Result<Tensor> + Sync,
    ) -> Result<Tensor> {
        let rows: Vec<Tensor> = self.pool.install(|| {
            jobs.par_iter()
                .map(|job| {
                    let x = self.input(job)?;
                    f(model, &x).context(|| job.path.display().to_string())
                })
                .collect::<Result<_>>()
        })?;
        stack_rows(&rows)
    }

    /// Backbone features, one row per job.
    pub fn features(&self, model: &ModelGraph, jobs: &[ImageJob]) -> Result<Tensor> {
        self.per_image(model, jobs, |m, x| m.forward_features(x))
    }

    /// Logits, one row per job.
    pub fn logits(&self, model: &ModelGraph, jobs: &[ImageJob]) -> Result<Tensor> {
        self.per_image(model, jobs, |m, x| m.forward(x))
    }
}

fn stack_rows(rows: &[Tensor]) -> Result<Tensor> {
    let width = rows.first().map_or(0, |r| r.len());
    if width == 0 {
        return Err(Error::Usage("no images to process".into()));
    }
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        data.extend_from_slice(r.data());
    }
    Tensor::new(&[rows.len(), width], data).context(|| "stacking per-image outputs".into())
}

pub fn manifest_jobs(manifest_path: &Path, manifest: &DatasetManifest) -> Vec<ImageJob> {
    manifest
        .records()
        .iter()
        .map(|r| ImageJob {
            path: resolve(manifest_path, r),
            draw: None,
        })
        .collect()
}

/// Number of classes the container's head was trained for.
pub fn head_classes(container: &WeightContainer) -> Option<usize> {
    container
        .get(HEAD_WEIGHT)
        .filter(|t| t.rank() == 2)
        .map(|t| t.dims()[0])
}

/// A model bound to a weight file.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: ModelGraph,
    pub report: BindReport,
    /// Head width found in the file, before any replacement.
    pub source_classes: usize,
}

/// Loads and binds a MobileNetV2 (width 1.0) weight file. When `classes` is
/// given and differs from the file's head, the head is replaced with a fresh
/// one drawn from `head_seed`.
pub fn load_model(path: &Path, classes: Option<usize>, head_seed: u64) -> Result<LoadedModel> {
    let container = load_lwt_file(path)?;
    let source_classes = head_classes(&container).ok_or_else(|| Error::Core {
        context: path.display().to_string(),
        source: lungline_core::Error::MissingParams(vec![HEAD_WEIGHT.into()]),
    })?;
    let ctx = || path.display().to_string();
    let graph = build_mobilenet_v2(source_classes, 1.0).context(ctx)?;
    let (mut model, report) = bind_weights(graph, &container).context(ctx)?;
    if let Some(k) = classes {
        if k != source_classes {
            model = model.replace_head(k, head_seed).context(ctx)?;
        }
    }
    Ok(LoadedModel {
        model,
        report,
        source_classes,
    })
}

/// Sidecar holding class names next to a weight file (`m.lwt` → `m.classes`).
pub fn classes_path(weights: &Path) -> PathBuf {
    weights.with_extension("classes")
}

pub fn read_classes(weights: &Path) -> Result<Option<Vec<String>>> {
    let p = classes_path(weights);
    match std::fs::read_to_string(&p) {
        Ok(text) => Ok(Some(
            text.lines()
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        )),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(p, e)),
    }
}

pub fn write_classes(weights: &Path, names: &[String]) -> Result<()> {
    let p = classes_path(weights);
    let mut text = names.join("\n");
    text.push('\n');
    std::fs::write(&p, text).map_err(|e| Error::io(p, e))
}

/// Cached-feature training set: every training image once without
/// augmentation, plus `augment_copies` augmented views of each (draw index
/// `copy · n + i`).
pub fn training_features(
    pipeline: &Pipeline,
    model: &ModelGraph,
    manifest_path: &Path,
    manifest: &DatasetManifest,
    augment_copies: usize,
) -> Result<FeatureSet> {
    let base = manifest_jobs(manifest_path, manifest);
    let n = base.len() as u64;
    let mut jobs = base.clone();
    for copy in 0..augment_copies as u64 {
        jobs.extend(base.iter().enumerate().map(|(i, j)| ImageJob {
            path: j.path.clone(),
            draw: Some(copy * n + i as u64),
        }));
    }
    let labels: Vec<usize> = (0..=augment_copies)
        .flat_map(|_| manifest.labels())
        .collect();
    let feats = pipeline.features(model, &jobs)?;
    FeatureSet::new(feats, labels).context(|| manifest_path.display().to_string())
}

pub struct TrainInputs<'a> {
    pub train_path: &'a Path,
    pub train: &'a DatasetManifest,
    pub val_path: Option<&'a Path>,
    pub val: Option<&'a DatasetManifest>,
    pub augment_copies: usize,
}

pub fn finetune(
    pipeline: &Pipeline,
    model: ModelGraph,
    inputs: &TrainInputs<'_>,
    cfg: &TrainConfig,
) -> Result<(ModelGraph, TrainHistory)> {
    let train = training_features(
        pipeline,
        &model,
        inputs.train_path,
        inputs.train,
        inputs.augment_copies,
    )?;
    let val = match (inputs.val_path, inputs.val) {
        (Some(p), Some(m)) if !m.is_empty() => Some(training_features(pipeline, &model, p, m, 0)?),
        _ => None,
    };
    finetune_head(model, &train, val.as_ref(), cfg).context(|| "fine-tuning".into())
}

/// Row-wise argmax.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.dims()[1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, f32::NEG_INFINITY),
                    |b, (i, &v)| if v > b.1 { (i, v) } else { b },
                )
                .0
        })
        .collect()
}
