//! Header-first CSV logs that can be resumed at a step boundary.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use crate::{CliError, CliResult};

pub struct CsvLog {
    file: File,
}

impl CsvLog {
    /// Truncates `path` and writes the header.
    pub fn create(path: &Path, header: &str) -> CliResult<Self> {
        let mut file = File::create(path)?;
        writeln!(file, "{header}")?;
        Ok(Self { file })
    }

    /// Reopens a log for a run resumed at `step`: rows past `step` are
    /// dropped so the finished file matches an uninterrupted run.
    pub fn resume(path: &Path, header: &str, step: u64) -> CliResult<Self> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Self::create(path, header),
            Err(e) => return Err(e.into()),
        };
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == header => {}
            None => return Self::create(path, header),
            Some(h) => {
                return Err(CliError::Incompatible(format!(
                    "{} has header {h:?}, expected {header:?}",
                    path.display()
                )))
            }
        }
        let mut kept = format!("{header}\n");
        for line in lines {
            let row_step: u64 = line
                .split(',')
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::Incompatible(format!("{}: bad row {line:?}", path.display())))?;
            if row_step <= step {
                kept.push_str(line);
                kept.push('\n');
            }
        }
        std::fs::write(path, kept)?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self { file })
    }

    pub fn row(&mut self, line: &str) -> CliResult<()> {
        writeln!(self.file, "{line}")?;
        Ok(())
    }
}
