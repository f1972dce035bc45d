//! Labeled manifests, stratified splits with exact per-class counts, and
//! batch iteration.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::ClassDeficit;
use crate::rng::SeedStream;
use crate::{Error, Result};

pub const COVID: &str = "COVID-19";
pub const NORMAL: &str = "Normal";
pub const VIRAL_PNEUMONIA: &str = "Viral Pneumonia";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub path: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    records: Vec<Record>,
    class_names: Vec<String>,
}

impl DatasetManifest {
    pub fn new(records: Vec<Record>, class_names: Vec<String>) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::Argument("manifest needs at least one class".into()));
        }
        let mut names = BTreeSet::new();
        for name in &class_names {
            if !names.insert(name.as_str()) {
                return Err(Error::Duplicate(name.clone()));
            }
        }
        let mut paths = BTreeSet::new();
        for r in &records {
            if r.label >= class_names.len() {
                return Err(Error::Index(format!(
                    "record `{}` has label {} but only {} classes exist",
                    r.path,
                    r.label,
                    class_names.len()
                )));
            }
            if !paths.insert(r.path.as_str()) {
                return Err(Error::Duplicate(r.path.clone()));
            }
        }
        Ok(Self {
            records,
            class_names,
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.class_names.len()];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }

    fn subset(&self, keep: &[bool]) -> Self {
        Self {
            records: self
                .records
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(r, _)| r.clone())
                .collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Record batches in the order given by [`batch_indices`].
    pub fn batches(
        &self,
        batch_size: usize,
        shuffle: bool,
        seed: u64,
    ) -> Result<Vec<Vec<&Record>>> {
        Ok(
            batch_indices(self.records.len(), batch_size, shuffle, seed)?
                .into_iter()
                .map(|b| b.into_iter().map(|i| &self.records[i]).collect())
                .collect(),
        )
    }
}

/// Per-class record counts for each split, indexed by class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    /// COVID-19 / Normal / Viral Pneumonia, 3,886 images.
    pub fn three_class(seed: u64) -> Self {
        Self {
            train: alloc::vec![1000, 1100, 1100],
            val: alloc::vec![100, 100, 100],
            test: alloc::vec![100, 141, 145],
            seed,
        }
    }

    /// COVID-19 / Normal.
    pub fn covid_normal(seed: u64) -> Self {
        Self {
            train: alloc::vec![1000, 1100],
            val: alloc::vec![100, 100],
            test: alloc::vec![100, 141],
            seed,
        }
    }

    /// COVID-19 / Viral Pneumonia.
    pub fn covid_pneumonia(seed: u64) -> Self {
        Self {
            train: alloc::vec![1000, 1100],
            val: alloc::vec![100, 100],
            test: alloc::vec![100, 145],
            seed,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.train.len()
    }

    pub fn per_class_total(&self, class: usize) -> usize {
        self.train[class] + self.val[class] + self.test[class]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
}

/// Splits each class independently: its records (in manifest order) are
/// shuffled with the stream derived from `(spec.seed, class index)`, then
/// the first `train[c]` go to train, the next `val[c]` to validation and
/// the next `test[c]` to test. Leftover records are not assigned. Each
/// output keeps manifest order.
pub fn split_dataset(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<Splits> {
    let k = manifest.num_classes();
    if spec.train.len() != k || spec.val.len() != k || spec.test.len() != k {
        return Err(Error::Argument(format!(
            "split spec covers {}/{}/{} classes, manifest has {k}",
            spec.train.len(),
            spec.val.len(),
            spec.test.len()
        )));
    }
    let available = manifest.class_counts();
    let deficits: Vec<ClassDeficit> = (0..k)
        .filter(|&c| spec.per_class_total(c) > available[c])
        .map(|c| ClassDeficit {
            class: manifest.class_names[c].clone(),
            requested: spec.per_class_total(c),
            available: available[c],
        })
        .collect();
    if !deficits.is_empty() {
        return Err(Error::Capacity(deficits));
    }

    let n = manifest.len();
    let mut train = alloc::vec![false; n];
    let mut val = alloc::vec![false; n];
    let mut test = alloc::vec![false; n];
    for c in 0..k {
        let mut members: Vec<usize> = (0..n).filter(|&i| manifest.records[i].label == c).collect();
        SeedStream::derive(spec.seed, c as u64).shuffle(&mut members);
        let (a, b) = (spec.train[c], spec.train[c] + spec.val[c]);
        for (rank, &i) in members.iter().enumerate().take(spec.per_class_total(c)) {
            if rank < a {
                train[i] = true;
            } else if rank < b {
                val[i] = true;
            } else {
                test[i] = true;
            }
        }
    }
    Ok(Splits {
        train: manifest.subset(&train),
        val: manifest.subset(&val),
        test: manifest.subset(&test),
    })
}

/// `ceil(n / batch_size)` batches of indices into `0..n`; only the last may
/// be short. With `shuffle` the order is a seeded Fisher-Yates permutation,
/// otherwise it is `0..n`.
pub fn batch_indices(
    n: usize,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        SeedStream::new(seed).shuffle(&mut order);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Manifest with `counts[c]` synthetic records for class `c`, paths
/// `"{class}/{i:05}.png"`.
pub fn synthetic_manifest(class_names: &[&str], counts: &[usize]) -> Result<DatasetManifest> {
    let records = class_names
        .iter()
        .zip(counts)
        .enumerate()
        .flat_map(|(label, (name, &count))| {
            (0..count).map(move |i| Record {
                path: format!("{name}/{i:05}.png"),
                label,
            })
        })
        .collect();
    DatasetManifest::new(records, class_names.iter().map(|s| s.to_string()).collect())
}
