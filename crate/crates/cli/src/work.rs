//! Artifact layout inside a work directory.

use std::path::{Path, PathBuf};

use grammarscope_core::validate::Method;

use crate::error::CliError;

pub struct Work {
    pub root: PathBuf,
}

impl Work {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn manifest(&self, split: &str) -> PathBuf {
        self.data_dir().join(format!("{split}.txt"))
    }

    pub fn info(&self) -> PathBuf {
        self.data_dir().join("info.json")
    }

    pub fn cluster_model(&self) -> PathBuf {
        self.root.join("cluster").join("model.igwt")
    }

    pub fn cluster_log(&self) -> PathBuf {
        self.root.join("cluster").join("log.json")
    }

    pub fn seg_dir(&self, split: &str) -> PathBuf {
        self.root.join("seg").join(split)
    }

    pub fn seg_manifest(&self, split: &str) -> PathBuf {
        self.root.join("seg").join(format!("{split}.txt"))
    }

    pub fn syntax_model(&self) -> PathBuf {
        self.root.join("syntax").join("model.igwt")
    }

    pub fn syntax_plan(&self) -> PathBuf {
        self.root.join("syntax").join("plan.json")
    }

    pub fn syntax_log(&self) -> PathBuf {
        self.root.join("syntax").join("log.json")
    }

    pub fn corrupt_dir(&self, tag: &str, split: &str) -> PathBuf {
        self.root.join("corrupt").join(tag).join(split)
    }

    pub fn corrupt_manifest(&self, tag: &str, split: &str) -> PathBuf {
        self.root.join("corrupt").join(tag).join(format!("{split}.txt"))
    }

    pub fn corrupt_records(&self, tag: &str, split: &str) -> PathBuf {
        self.root.join("corrupt").join(tag).join(format!("{split}.records.jsonl"))
    }

    pub fn threshold(&self, tag: &str, method: Method) -> PathBuf {
        self.root.join("calib").join(format!("{tag}-{method}.json"))
    }

    pub fn results_dir(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn result(&self, tag: &str, method: Method) -> PathBuf {
        self.results_dir().join(format!("{tag}-{method}.json"))
    }

    pub fn histogram(&self, tag: &str, method: Method) -> PathBuf {
        self.results_dir().join(format!("{tag}-{method}.hist.csv"))
    }

    pub fn puzzle_result(&self, num_perm: usize, method: Method) -> PathBuf {
        self.results_dir().join(format!("puzzle-{num_perm}-{method}.json"))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.csv")
    }
}

/// Fails with a dependency error naming the command that produces `path`.
pub fn require(path: &Path, producer: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Missing { artifact: path.to_path_buf(), producer: producer.to_string() })
    }
}

/// Prepares an output directory: refuses a non-empty one unless `force`,
/// in which case it is cleared first.
pub fn fresh_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    let non_empty = dir.is_dir() && std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?.next().is_some();
    if non_empty {
        if !force {
            return Err(CliError::Exists(dir.to_path_buf()));
        }
        std::fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn parent_dir(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| CliError::io(p, e)),
        _ => Ok(()),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    parent_dir(path)?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// File stem used as the image name in records and reports.
pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}
