//! Output directory handling: every run echoes its resolved configuration
//! and stamps each data file with the tool version and a schema line.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(path: &Path, resolved_config: &str) -> io::Result<Self> {
        fs::create_dir_all(path)?;
        let out = Self {
            root: path.to_path_buf(),
        };
        fs::write(
            out.root.join("resolved.cfg"),
            format!("# mdiqkd {VERSION} resolved configuration\n{resolved_config}"),
        )?;
        Ok(out)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes a CSV file with a version stamp and a schema header.
    pub fn write_csv(&self, name: &str, schema: &str, rows: &[String]) -> io::Result<PathBuf> {
        let path = self.path(name);
        let mut text = format!("# mdiqkd {VERSION}\n{schema}\n");
        for row in rows {
            text.push_str(row);
            text.push('\n');
        }
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, body: &str) -> io::Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, body)?;
        Ok(path)
    }
}

/// log10 of a rate for surface exports; zero rates map to the sentinel.
pub const LOG10_ZERO_SENTINEL: f64 = -999.0;

pub fn log10_or_sentinel(rate: f64) -> (f64, u8) {
    if rate > 0.0 {
        (rate.log10(), 0)
    } else {
        (LOG10_ZERO_SENTINEL, 1)
    }
}
