//! File formats: ISBI ground-truth XML, CSV tables and the parameter container.

mod params;
mod patch;
mod tables;
mod xml;

use std::io::Write;
use std::path::{Path, PathBuf};

pub use params::{
    decode_params, encode_params, load_params, load_params_expecting, save_params, FORMAT_VERSION, MAGIC,
};
pub use patch::{crop_patch, PatchSpec, RUN_STRIDE};
pub use tables::{
    detections_from_reader, read_detections, read_tracks, tracks_from_reader, write_detections, write_detections_to,
    write_tracks, write_tracks_to,
};
pub use xml::{parse_isbi_xml, read_isbi_xml, to_isbi_xml};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("xml line {line}, column {column}: {message}")]
    Xml { line: u32, column: u32, message: String },
    #[error("csv line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("params: {0}")]
    Params(String),
    #[error(transparent)]
    Core(#[from] abha_core::Error),
}

pub type Result<T> = std::result::Result<T, IoError>;

pub(crate) fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary file in the target directory, then renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(file_error(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(file_error(dir))?;
    tmp.write_all(bytes).map_err(file_error(path))?;
    tmp.as_file().sync_all().map_err(file_error(path))?;
    tmp.persist(path).map_err(|e| IoError::File {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}
