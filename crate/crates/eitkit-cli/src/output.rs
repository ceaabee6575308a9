//! Output-directory plumbing: CSV files and the run manifest.
//!
//! Every command writes its artifacts under `--out` and nothing anywhere
//! else. CSV files are comma-separated with a header row, `.` decimal
//! points, and LF line endings. Timings live only in the manifest, so
//! repeated runs with the same configuration produce byte-identical CSVs.

use crate::CliError;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Handle on the run's output directory.
pub struct OutDir {
    dir: PathBuf,
    started: Instant,
    timings: Vec<(String, f64)>,
}

impl OutDir {
    /// Creates `dir` (and parents) and starts the run clock.
    pub fn create(dir: &Path) -> Result<OutDir, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| {
            CliError::Usage(format!(
                "cannot create output directory {}: {e}",
                dir.display()
            ))
        })?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            started: Instant::now(),
            timings: Vec::new(),
        })
    }

    /// Path of a file inside the output directory.
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes a CSV file: header line, then one line per row. Rows are
    /// pre-rendered comma-joined strings.
    pub fn csv<I>(&self, name: &str, header: &str, rows: I) -> Result<(), CliError>
    where
        I: IntoIterator,
        I::Item: AsRef<str>,
    {
        let mut text = String::new();
        text.push_str(header);
        text.push('\n');
        for row in rows {
            text.push_str(row.as_ref());
            text.push('\n');
        }
        self.text(name, &text)
    }

    /// Writes a plain text file inside the output directory.
    pub fn text(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
    }

    /// Records a named elapsed time (seconds) for the manifest.
    pub fn timing(&mut self, label: &str, seconds: f64) {
        self.timings.push((label.to_string(), seconds));
    }

    /// Writes `manifest.txt`: the command, crate versions, the fully
    /// resolved configuration (defaults filled in), any extra result
    /// lines, and wall-clock timings. One `kind key value` record per
    /// line.
    pub fn manifest(
        mut self,
        command: &str,
        resolved: &[(String, String)],
        results: &[(String, String)],
    ) -> Result<(), CliError> {
        let total = self.started.elapsed().as_secs_f64();
        self.timings.push(("total".to_string(), total));
        let mut text = String::new();
        writeln!(text, "command {command}").unwrap();
        writeln!(text, "version eitkit {}", eitkit::VERSION).unwrap();
        writeln!(text, "version eitkit-cli {}", env!("CARGO_PKG_VERSION")).unwrap();
        for (key, value) in resolved {
            writeln!(text, "config {key} {value}").unwrap();
        }
        for (key, value) in results {
            writeln!(text, "result {key} {value}").unwrap();
        }
        for (label, secs) in &self.timings {
            writeln!(text, "timing_s {label} {secs:.3}").unwrap();
        }
        self.text("manifest.txt", &text)
    }
}

/// Renders a float for CSV output: shortest decimal string that parses
/// back to the same value, always with a `.` decimal point.
pub fn num(v: f64) -> String {
    format!("{v}")
}
