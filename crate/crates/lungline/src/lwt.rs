//! LWT files on disk and over byte streams.

use std::io::{Read, Write};
use std::path::Path;

use lungline_core::weights::WeightContainer;

use crate::error::{Context, Error, Result};

/// Writes the encoded container and returns the number of bytes written.
pub fn save_lwt(container: &WeightContainer, mut sink: impl Write) -> std::io::Result<usize> {
    let bytes = container.encode();
    sink.write_all(&bytes)?;
    sink.flush()?;
    Ok(bytes.len())
}

pub fn load_lwt(
    mut source: impl Read,
) -> std::io::Result<Result<WeightContainer, lungline_core::Error>> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    Ok(WeightContainer::decode(&bytes))
}

pub fn save_lwt_file(container: &WeightContainer, path: &Path) -> Result<usize> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    save_lwt(container, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_lwt_file(path: &Path) -> Result<WeightContainer> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_lwt(std::io::BufReader::new(file))
        .map_err(|e| Error::io(path, e))?
        .context(|| path.display().to_string())
}
