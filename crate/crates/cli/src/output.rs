//! Result files: provenance headers and all-or-nothing commits.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use tempfile::NamedTempFile;

use crate::error::{CliError, Result};

/// Prefix of the only provenance line excluded from the config hash and from
/// determinism checks.
pub const CREATED_PREFIX: &str = "# created = ";

/// What produced an output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn header(&self) -> String {
        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        format!(
            "# gsf {}\n# command = {}\n# config_sha256 = {}\n# seed = {}\n{CREATED_PREFIX}{created}\n",
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.config_hash,
            self.seed,
        )
    }
}

/// Drops the timestamp line, leaving content that repeats exactly across
/// runs with the same configuration.
pub fn strip_created(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with(CREATED_PREFIX))
        .map(|l| format!("{l}\n"))
        .collect()
}

/// Output files staged in the target directory and moved into place by
/// [`OutputSet::commit`]. Dropping the set without committing deletes every
/// staged file, so a failed command leaves no partial results behind.
pub struct OutputSet {
    dir: PathBuf,
    provenance: Provenance,
    staged: Vec<(PathBuf, NamedTempFile)>,
}

impl OutputSet {
    pub fn new(dir: &Path, provenance: Provenance) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(OutputSet {
            dir: dir.to_path_buf(),
            provenance,
            staged: Vec::new(),
        })
    }

    /// Stages a CSV file with a provenance header.
    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut tmp = self.temp()?;
        let path = self.dir.join(name);
        tmp.write_all(self.provenance.header().as_bytes())
            .map_err(|e| CliError::io(&path, e))?;
        {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(tmp.as_file_mut());
            w.write_record(header)?;
            for row in rows {
                w.write_record(&row)?;
            }
            w.flush().map_err(|e| CliError::io(&path, e))?;
        }
        self.staged.push((path, tmp));
        Ok(())
    }

    /// Stages a file whose content is produced by `write`, after the
    /// provenance header.
    pub fn with_writer<F>(&mut self, name: &str, write: F) -> Result<()>
    where
        F: FnOnce(&str, &mut fs::File) -> Result<()>,
    {
        let mut tmp = self.temp()?;
        let header = self.provenance.header();
        write(&header, tmp.as_file_mut())?;
        self.staged.push((self.dir.join(name), tmp));
        Ok(())
    }

    /// Stages a plain text file with no provenance header.
    pub fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        let mut tmp = self.temp()?;
        let path = self.dir.join(name);
        tmp.write_all(contents.as_bytes()).map_err(|e| CliError::io(&path, e))?;
        self.staged.push((path, tmp));
        Ok(())
    }

    fn temp(&self) -> Result<NamedTempFile> {
        tempfile::Builder::new()
            .prefix(".gsf-")
            .suffix(".tmp")
            .tempfile_in(&self.dir)
            .map_err(|e| CliError::io(&self.dir, e))
    }

    /// Renames every staged file to its final path.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.staged.len());
        for (path, tmp) in self.staged {
            tmp.as_file().sync_all().map_err(|e| CliError::io(&path, e))?;
            tmp.persist(&path).map_err(|e| CliError::io(&path, e.error))?;
            written.push(path);
        }
        Ok(written)
    }
}
