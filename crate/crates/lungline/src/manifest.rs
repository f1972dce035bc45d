//! CSV manifests: header `path,label`, label given as a class name.
//!
//! Image paths are resolved relative to the manifest's directory unless
//! absolute.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lungline_core::data::{DatasetManifest, Record};
use serde::{Deserialize, Serialize};

use crate::error::{Context, Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    path: String,
    label: String,
}

/// Reads a manifest. With `classes = None` the class list is the sorted set
/// of labels in the file; otherwise every label must appear in `classes`,
/// which also fixes the label indices.
pub fn read_manifest(path: &Path, classes: Option<&[String]>) -> Result<DatasetManifest> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "label"] {
        return Err(Error::manifest(
            path,
            format!(
                "header must be `path,label`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let rows: Vec<Row> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| csv_error(path, e))?;
    let names: Vec<String> = match classes {
        Some(c) => c.to_vec(),
        None => rows
            .iter()
            .map(|r| r.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    if names.is_empty() {
        return Err(Error::manifest(path, "no records and no class list"));
    }
    let mut records = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let label = names.iter().position(|n| *n == row.label).ok_or_else(|| {
            Error::manifest(
                path,
                format!(
                    "line {}: class `{}` is not one of {:?}",
                    i + 2,
                    row.label,
                    names
                ),
            )
        })?;
        records.push(Record {
            path: row.path,
            label,
        });
    }
    DatasetManifest::new(records, names).context(|| path.display().to_string())
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in manifest.records() {
        w.serialize(Row {
            path: r.path.clone(),
            label: manifest.class_names()[r.label].clone(),
        })
        .map_err(|e| csv_error(path, e))?;
    }
    if manifest.is_empty() {
        w.write_record(["path", "label"])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Location of a record's image on disk.
pub fn resolve(manifest_path: &Path, record: &Record) -> PathBuf {
    let p = Path::new(&record.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new("")).join(p)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::manifest(path, format!("{other:?}")),
    }
}
