use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::ExperimentError;

fn out_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Output {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path).map_err(out_err(path))
}

/// Writes through a sibling temporary file and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = File::create(&tmp).map_err(out_err(&tmp))?;
    f.write_all(bytes).map_err(out_err(&tmp))?;
    f.sync_all().map_err(out_err(&tmp))?;
    fs::rename(&tmp, path).map_err(out_err(path))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| ExperimentError::Artifact {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub(crate) fn read_text(path: &Path) -> Result<String, ExperimentError> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ExperimentError::MissingFile(path.to_path_buf()),
        _ => ExperimentError::Artifact {
            path: path.to_path_buf(),
            reason: e.to_string(),
        },
    })
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ExperimentError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Artifact {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Tab-separated log that is flushed after every row group.
pub(crate) struct TsvLog {
    path: PathBuf,
    file: File,
}

impl TsvLog {
    pub(crate) fn create(path: &Path, columns: &[&str]) -> Result<Self, ExperimentError> {
        if let Some(dir) = path.parent() {
            create_dir(dir)?;
        }
        let mut file = OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)
            .map_err(out_err(path))?;
        writeln!(file, "{}", columns.join("\t")).map_err(out_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub(crate) fn row(&mut self, fields: &[String]) -> Result<(), ExperimentError> {
        writeln!(self.file, "{}", fields.join("\t")).map_err(out_err(&self.path))
    }

    pub(crate) fn flush(&mut self) -> Result<(), ExperimentError> {
        self.file.flush().map_err(out_err(&self.path))
    }
}

/// Rows of a TSV file keyed by its header.
pub(crate) fn read_tsv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), ExperimentError> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| ExperimentError::Artifact {
            path: path.to_path_buf(),
            reason: "empty file".into(),
        })?
        .split('\t')
        .map(str::to_string)
        .collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}
