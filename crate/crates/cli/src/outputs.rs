//! Tracks files a command writes so a failed run leaves nothing behind.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;

#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    /// Creates `dir` and any missing parents, remembering the ones that were new.
    pub fn dir(&mut self, dir: &Path) -> Result<PathBuf> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(p) = cur {
            if p.as_os_str().is_empty() || p.exists() {
                break;
            }
            missing.push(p.to_path_buf());
            cur = p.parent();
        }
        fs::create_dir_all(dir)?;
        if let Some(top) = missing.pop() {
            self.dirs.push(top);
        }
        Ok(dir.to_path_buf())
    }

    /// Registers `path` before it is written.
    pub fn track(&mut self, path: PathBuf) -> PathBuf {
        self.files.push(path.clone());
        path
    }

    pub fn write(&mut self, path: PathBuf, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.track(path);
        fs::write(&path, contents)?;
        Ok(path)
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir_all(d);
        }
    }
}
