//! All-or-nothing output: files and directories are assembled under a
//! temporary sibling name and renamed into place once complete.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;

fn sibling(dest: &Path) -> PathBuf {
    let name = dest.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    dest.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

fn ensure_parent(dest: &Path) -> anyhow::Result<()> {
    if let Some(p) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

pub fn write_file(dest: &Path, contents: &str) -> anyhow::Result<()> {
    ensure_parent(dest)?;
    let tmp = sibling(dest);
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, dest).with_context(|| format!("moving output to {}", dest.display()))
}

/// A directory under construction. Dropped without [`Staging::commit`], it
/// is removed again.
pub struct Staging {
    tmp: PathBuf,
    dest: PathBuf,
    done: bool,
}

impl Staging {
    pub fn new(dest: &Path) -> anyhow::Result<Self> {
        ensure_parent(dest)?;
        let tmp = sibling(dest);
        if tmp.exists() {
            fs::remove_dir_all(&tmp).with_context(|| format!("clearing {}", tmp.display()))?;
        }
        fs::create_dir(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        Ok(Self {
            tmp,
            dest: dest.to_path_buf(),
            done: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.tmp
    }

    pub fn write(&self, rel: impl AsRef<Path>, contents: &str) -> anyhow::Result<()> {
        let p = self.tmp.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    pub fn commit(mut self) -> anyhow::Result<()> {
        if self.dest.exists() {
            fs::remove_dir_all(&self.dest)
                .with_context(|| format!("replacing {}", self.dest.display()))?;
        }
        fs::rename(&self.tmp, &self.dest)
            .with_context(|| format!("moving output to {}", self.dest.display()))?;
        self.done = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}
