//! Machine-readable reports.
//!
//! A [`Report`] is a kind tag plus a JSON payload. Numbers in the payload are
//! never rounded; only [`Report::render_text`] rounds, to whole percent for
//! per-class rows and one decimal for aggregates.

use lungline_core::arch::ParamCount;
use lungline_core::metrics::{
    aggregate, class_metrics, Aggregation, ClassMetrics, ClassTally, ConfusionMatrix,
    OverallMetrics,
};
use serde::{Deserialize, Serialize};

use crate::error::{Context, Result};
use crate::reference::{Comparison, REFERENCE_ROWS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    Classification,
    Evaluation,
    Footprint,
    SplitSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: ReportKind,
    pub payload: serde_json::Value,
}

impl Report {
    pub fn new(kind: ReportKind, payload: &impl Serialize) -> Result<Self> {
        Ok(Self {
            kind,
            payload: serde_json::to_value(payload)?,
        })
    }

    /// Pretty JSON with a trailing newline. Object keys are sorted, so equal
    /// reports render to equal bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("values are always serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn render_text(&self) -> Result<String> {
        let p = self.payload.clone();
        Ok(match self.kind {
            ReportKind::Evaluation => render_evaluation(&serde_json::from_value(p)?),
            ReportKind::Footprint => render_footprint(&serde_json::from_value(p)?),
            ReportKind::Classification => render_classification(&serde_json::from_value(p)?),
            ReportKind::SplitSummary => render_split(&serde_json::from_value(p)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: String,
    pub tp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub misclassification: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl ClassRow {
    fn new(class: &str, t: &ClassTally, m: &ClassMetrics) -> Self {
        Self {
            class: class.to_string(),
            tp: t.tp,
            tn: t.tn,
            fn_: t.fn_,
            fp: t.fp,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            misclassification: m.misclassification,
            sensitivity: m.sensitivity,
            specificity: m.specificity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Micro,
    Macro,
}

impl From<Mode> for Aggregation {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Micro => Aggregation::Micro,
            Mode::Macro => Aggregation::Macro,
        }
    }
}

/// Classes left out of a macro mean because the per-class value was undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excluded {
    pub precision: usize,
    pub recall: usize,
    pub f1: usize,
    pub specificity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallRow {
    pub mode: Mode,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub misclassification: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub excluded: Excluded,
}

impl OverallRow {
    fn new(mode: Mode, m: &OverallMetrics) -> Self {
        let [precision, recall, f1, specificity] = m.excluded;
        Self {
            mode,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            misclassification: m.misclassification,
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            excluded: Excluded {
                precision,
                recall,
                f1,
                specificity,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationPayload {
    pub classes: Vec<String>,
    pub samples: u64,
    /// `confusion_matrix[truth][predicted]`.
    pub confusion_matrix: Vec<Vec<u64>>,
    pub per_class: Vec<ClassRow>,
    pub overall: OverallRow,
}

/// Per-class rows plus the `mode` aggregate of a confusion matrix.
pub fn evaluation_payload(
    classes: &[String],
    cm: &ConfusionMatrix,
    mode: Mode,
) -> Result<EvaluationPayload> {
    let mut per_class = Vec::with_capacity(cm.k());
    for (c, name) in classes.iter().enumerate() {
        let t = cm.class_tally(c).context(|| format!("class `{name}`"))?;
        let m = class_metrics(&t).context(|| format!("class `{name}`"))?;
        per_class.push(ClassRow::new(name, &t, &m));
    }
    let overall = aggregate(cm, mode.into()).context(|| "aggregate".into())?;
    Ok(EvaluationPayload {
        classes: classes.to_vec(),
        samples: cm.total(),
        confusion_matrix: cm.rows().map(<[u64]>::to_vec).collect(),
        per_class,
        overall: OverallRow::new(mode, &overall),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedRow {
    pub comparison: Comparison,
    pub model: String,
    pub params: u64,
    pub memory_mb: Option<u32>,
    /// `params × 4`, for setting beside the reported memory figure.
    pub bytes_at_fp32: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintPayload {
    pub arch: String,
    pub classes: usize,
    pub width_mult: f64,
    pub trainable_params: u64,
    pub bn_running_stats: u64,
    pub total_params: u64,
    pub bytes_per_param: u64,
    pub bytes: u64,
    pub megabytes: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported: Option<Vec<ReportedRow>>,
}

pub fn footprint_payload(
    arch: &str,
    classes: usize,
    width_mult: f64,
    count: &ParamCount,
    bytes_per_param: u64,
    compare: bool,
) -> FootprintPayload {
    let bytes = lungline_core::arch::footprint_bytes(count, bytes_per_param);
    FootprintPayload {
        arch: arch.to_string(),
        classes,
        width_mult,
        trainable_params: count.trainable,
        bn_running_stats: count.bn_running_stats,
        total_params: count.total,
        bytes_per_param,
        bytes,
        megabytes: bytes as f64 / 1e6,
        reported: compare.then(|| {
            REFERENCE_ROWS
                .iter()
                .map(|r| ReportedRow {
                    comparison: r.comparison,
                    model: r.model.to_string(),
                    params: r.params,
                    memory_mb: r.memory_mb,
                    bytes_at_fp32: r.params * 4,
                })
                .collect()
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub path: String,
    pub label: String,
    pub index: usize,
    pub probabilities: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationPayload {
    pub classes: Vec<String>,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummaryPayload {
    pub seed: u64,
    pub classes: Vec<String>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub files: Vec<String>,
}

/// Aligned plain-text table; the first column is left-aligned.
fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            if i == 0 {
                s.push_str(&format!("{c:<w$}"));
            } else {
                s.push_str(&format!("{c:>w$}"));
            }
        }
        s.truncate(s.trim_end().len());
        s.push('\n');
        s
    };
    let mut out = line(headers.to_vec());
    out.push_str(&line(
        widths
            .iter()
            .map(|&w| "-".repeat(w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    ));
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

/// Whole percent, or `undef`.
pub fn pct0(v: Option<f64>) -> String {
    v.map_or_else(|| "undef".into(), |v| format!("{:.0}", v * 100.0))
}

/// Percent with one decimal, or `undef`.
pub fn pct1(v: Option<f64>) -> String {
    v.map_or_else(|| "undef".into(), |v| format!("{:.1}", v * 100.0))
}

fn render_evaluation(p: &EvaluationPayload) -> String {
    let rows: Vec<Vec<String>> = p
        .per_class
        .iter()
        .map(|r| {
            vec![
                r.class.clone(),
                r.tp.to_string(),
                r.tn.to_string(),
                r.fn_.to_string(),
                r.fp.to_string(),
                pct0(Some(r.accuracy)),
                pct0(r.precision),
                pct0(r.recall),
                pct0(Some(r.misclassification)),
                pct0(r.f1),
                pct0(r.sensitivity),
                pct0(r.specificity),
            ]
        })
        .collect();
    let mut out = table(
        &[
            "Class", "TP", "TN", "FN", "FP", "Acc", "Pre", "Rec", "Mis", "F1", "Sen", "Spe",
        ],
        &rows,
    );
    let o = &p.overall;
    let mode = match o.mode {
        Mode::Micro => "micro",
        Mode::Macro => "macro",
    };
    out.push_str(&format!(
        "\nOverall ({mode}, {} samples): acc {}  pre {}  rec {}  f1 {}  mis {}  sen {}  spe {}\n",
        p.samples,
        pct1(o.accuracy),
        pct1(o.precision),
        pct1(o.recall),
        pct1(o.f1),
        pct1(o.misclassification),
        pct1(o.sensitivity),
        pct1(o.specificity),
    ));
    let ex = o.excluded;
    if ex.precision + ex.recall + ex.f1 + ex.specificity > 0 {
        out.push_str(&format!(
            "Undefined per-class values left out: precision {}, recall {}, f1 {}, specificity {}\n",
            ex.precision, ex.recall, ex.f1, ex.specificity
        ));
    }
    let mut headers = vec!["truth \\ pred"];
    headers.extend(p.classes.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = p
        .classes
        .iter()
        .zip(&p.confusion_matrix)
        .map(|(c, row)| {
            std::iter::once(c.clone())
                .chain(row.iter().map(u64::to_string))
                .collect()
        })
        .collect();
    out.push('\n');
    out.push_str(&table(&headers, &rows));
    out
}

fn group_digits(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn render_footprint(p: &FootprintPayload) -> String {
    let mut out = format!(
        "{} ({} classes, width {}): {} parameters ({} trainable + {} batch-norm running statistics)\n\
         {} bytes at {} B/parameter = {:.1} MB\n",
        p.arch,
        p.classes,
        p.width_mult,
        group_digits(p.total_params),
        group_digits(p.trainable_params),
        group_digits(p.bn_running_stats),
        group_digits(p.bytes),
        p.bytes_per_param,
        p.megabytes,
    );
    if let Some(rows) = &p.reported {
        let rows: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.comparison.label().to_string(),
                    r.model.clone(),
                    group_digits(r.params),
                    r.memory_mb.map_or_else(|| "-".into(), |m| m.to_string()),
                    format!("{:.0}", r.bytes_at_fp32 as f64 / 1e6),
                    format!("{:.1}x", r.params as f64 / p.total_params as f64),
                ]
            })
            .collect();
        out.push_str("\nReported footprints (published figures, not recomputed):\n");
        out.push_str(&table(
            &[
                "Comparison",
                "Model",
                "Params",
                "Reported MB",
                "MB at fp32",
                "vs this",
            ],
            &rows,
        ));
    }
    out
}

fn render_classification(p: &ClassificationPayload) -> String {
    let mut headers = vec!["Image", "Label"];
    headers.extend(p.classes.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = p
        .predictions
        .iter()
        .map(|pr| {
            let mut r = vec![pr.path.clone(), pr.label.clone()];
            r.extend(pr.probabilities.iter().map(|&v| pct1(Some(v as f64))));
            r
        })
        .collect();
    table(&headers, &rows)
}

fn render_split(p: &SplitSummaryPayload) -> String {
    let mut rows: Vec<Vec<String>> = p
        .classes
        .iter()
        .enumerate()
        .map(|(c, name)| {
            vec![
                name.clone(),
                p.train[c].to_string(),
                p.val[c].to_string(),
                p.test[c].to_string(),
            ]
        })
        .collect();
    rows.push(vec![
        "Total".into(),
        p.train.iter().sum::<usize>().to_string(),
        p.val.iter().sum::<usize>().to_string(),
        p.test.iter().sum::<usize>().to_string(),
    ]);
    let mut out = table(&["Class", "Train", "Val", "Test"], &rows);
    out.push_str(&format!(
        "\nseed {}; wrote {}\n",
        p.seed,
        p.files.join(", ")
    ));
    out
}
