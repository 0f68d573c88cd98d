//! Emits tables to stdout and, when an output directory is set, one CSV
//! file per table written atomically.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::Format;
use crate::table::Table;
use crate::CliError;

pub struct Output {
    pub format: Format,
    pub out_dir: Option<PathBuf>,
}

impl Output {
    pub fn emit(&self, tables: &[Table], files: &[(&str, String)]) -> Result<(), CliError> {
        let mut stdout = String::new();
        for (i, t) in tables.iter().enumerate() {
            if i > 0 {
                stdout.push('\n');
            }
            match self.format {
                Format::Pretty => stdout += &t.to_pretty(),
                Format::Csv => {
                    stdout += &format!("# {}\n", t.name);
                    stdout += &t.to_csv();
                }
            }
        }
        print!("{stdout}");
        if let Some(dir) = &self.out_dir {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::Other(format!("cannot create {}: {e}", dir.display())))?;
            for t in tables {
                write_atomic(dir, &format!("{}.csv", t.name), t.to_csv().as_bytes())?;
            }
            for (name, body) in files {
                write_atomic(dir, name, body.as_bytes())?;
            }
        }
        Ok(())
    }
}

/// Writes to a temporary file in `dir`, then renames it into place.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let err = |e: std::io::Error| CliError::Other(format!("cannot write {}: {e}", dir.join(name).display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(bytes).map_err(err)?;
    tmp.as_file().sync_all().map_err(err)?;
    tmp.persist(dir.join(name)).map_err(|e| err(e.error))?;
    Ok(())
}

pub fn warn(msg: impl std::fmt::Display) {
    eprintln!("warning: {msg}");
}
