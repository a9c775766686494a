use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pamacf::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A CSV file that starts with the provenance comment line.
pub struct Csv {
    path: PathBuf,
    w: BufWriter<File>,
}

impl Csv {
    pub fn create(path: &Path, hash: &str, seed: u64, columns: &str) -> Result<Self> {
        let file = File::create(path).map_err(|e| io(path, e))?;
        let mut csv = Csv { path: path.to_path_buf(), w: BufWriter::new(file) };
        csv.line(format_args!("# pamacf {VERSION} config_hash={hash} seed={seed}"))?;
        csv.line(format_args!("{columns}"))?;
        Ok(csv)
    }

    pub fn row(&mut self, fields: &[&dyn Display]) -> Result<()> {
        let mut line = String::new();
        for (k, f) in fields.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            line.push_str(&f.to_string());
        }
        self.line(format_args!("{line}"))
    }

    fn line(&mut self, args: std::fmt::Arguments) -> Result<()> {
        writeln!(self.w, "{args}").map_err(|e| io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| io(&self.path, e))
    }
}

/// Empty string for `None`, so missing values leave a blank CSV field.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Prints a line to stdout, ignoring a closed pipe.
pub fn say(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

pub fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))
}
