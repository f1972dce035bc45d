//! File formats, parallel image pipeline, reports and the command-line
//! interface around [`lungline_core`].
//!
//! - [`image_io`]: PNG decoding.
//! - [`manifest`]: `path,label` CSV manifests.
//! - [`lwt`]: LWT weight files.
//! - [`pipeline`]: preprocessing, feature extraction and head fine-tuning
//!   over image files, parallel per image (`LUNGLINE_THREADS` caps workers).
//! - [`report`]: JSON reports and their text tables.
//! - [`reference`]: published footprints of heavyweight models.
//! - [`cli`]: the `lungline` command.

pub mod cli;
pub mod error;
pub mod image_io;
pub mod lwt;
pub mod manifest;
pub mod pipeline;
pub mod reference;
pub mod report;

pub use error::{Error, Result};
