use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{io_err, CliResult};

/// Output directory of one run. Files handed out by [`RunDir::file`] are
/// removed again if the run fails.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    created: bool,
    files: Vec<PathBuf>,
}

impl RunDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        let created = !root.exists();
        fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(Self {
            root: root.to_path_buf(),
            created,
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn file(&mut self, name: &str) -> PathBuf {
        let path = self.root.join(name);
        if !self.files.contains(&path) {
            self.files.push(path.clone());
        }
        path
    }

    /// Names of the files handed out so far.
    pub fn names(&self) -> Vec<String> {
        self.files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect()
    }

    fn discard(self) {
        for f in &self.files {
            if f.exists() {
                if let Err(e) = fs::remove_file(f) {
                    warn!("could not remove {}: {e}", f.display());
                }
            }
        }
        if self.created {
            let _ = fs::remove_dir(&self.root);
        }
    }
}

/// Runs `body` against a fresh [`RunDir`], cleaning up after an error.
pub fn with_run_dir<T>(root: &Path, body: impl FnOnce(&mut RunDir) -> CliResult<T>) -> CliResult<T> {
    let mut dir = RunDir::create(root)?;
    match body(&mut dir) {
        Ok(v) => Ok(v),
        Err(e) => {
            dir.discard();
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::CliError;

    #[test]
    fn failure_removes_outputs() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("run");
        let res: CliResult<()> = with_run_dir(&root, |d| {
            fs::write(d.file("a.csv"), "x").unwrap();
            Err(CliError::Config("boom".into()))
        });
        assert!(res.is_err());
        assert!(!root.exists());
    }

    #[test]
    fn existing_files_survive_failure() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("keep.txt"), "k").unwrap();
        let _ = with_run_dir(tmp.path(), |d| -> CliResult<()> {
            fs::write(d.file("a.csv"), "x").unwrap();
            Err(CliError::Config("boom".into()))
        });
        assert!(tmp.path().join("keep.txt").exists());
        assert!(!tmp.path().join("a.csv").exists());
    }
}
