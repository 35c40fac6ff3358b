use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

/// Fixed 17-significant-digit form; parses back to the same double.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Output directory, created and probed for writability up front.
#[derive(Debug, Clone)]
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn prepare(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let probe = root.join(".nestmdp-write-probe");
        fs::write(&probe, b"").map_err(|e| CliError::io(&probe, e))?;
        fs::remove_file(&probe).map_err(|e| CliError::io(&probe, e))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn csv(
        &self,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let io = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(e) => CliError::io(&path, e),
            other => CliError::Config(format!("{}: {other:?}", path.display())),
        };
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        w.write_record(header).map_err(io)?;
        for row in rows {
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
