//! Output files written atomically as a set: on failure everything this
//! run created is removed again.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

pub struct OutputSet {
    dir: PathBuf,
    created_dir: Option<PathBuf>,
    files: Vec<PathBuf>,
}

impl OutputSet {
    /// Use `dir`, creating it (and missing parents) if needed.
    pub fn new(dir: &Path) -> CliResult<Self> {
        let created_dir = if dir.exists() {
            None
        } else {
            // remember the topmost directory we create
            let mut top = dir.to_path_buf();
            while let Some(parent) = top.parent() {
                if parent.as_os_str().is_empty() || parent.exists() {
                    break;
                }
                top = parent.to_path_buf();
            }
            std::fs::create_dir_all(dir).map_err(|source| CliError::Output {
                path: dir.display().to_string(),
                source,
            })?;
            Some(top)
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
        })
    }

    /// Create `name` in the output directory and fill it with `write`.
    pub fn write<F>(&mut self, name: &str, write: F) -> CliResult<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> CliResult<()>,
    {
        let path = self.dir.join(name);
        let io_err = |source| CliError::Output {
            path: path.display().to_string(),
            source,
        };
        let file = File::create(&path).map_err(io_err)?;
        self.files.push(path.clone());
        let mut w = BufWriter::new(file);
        write(&mut w)?;
        w.flush().map_err(io_err)?;
        Ok(())
    }

    /// Remove everything written so far.
    pub fn discard(self) {
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        if let Some(dir) = &self.created_dir {
            let _ = std::fs::remove_dir_all(dir);
        }
    }
}
