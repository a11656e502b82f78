//! Artifact bookkeeping: every file a run creates is tracked so a failed run
//! can remove them, and the manifest is written by rename.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

pub struct Artifacts {
    dir: PathBuf,
    created: Vec<PathBuf>,
    names: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Artifacts {
            dir: dir.to_path_buf(),
            created: Vec::new(),
            names: Vec::new(),
        }
    }

    pub fn path(&self, name: &Path) -> PathBuf {
        self.dir.join(name)
    }

    /// Creates `name` under the output directory and writes it with `body`.
    pub fn write<F>(&mut self, name: &Path, body: F) -> std::io::Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = File::create(&path)?;
        self.created.push(path);
        self.names.push(name.display().to_string());
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush()
    }

    pub fn write_json<T: Serialize>(&mut self, name: &Path, value: &T) -> std::io::Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn remove_all(&mut self) {
        for p in self.created.drain(..) {
            let _ = fs::remove_file(p);
        }
        self.names.clear();
    }
}

/// Writes `value` to `path` through a sibling temporary file.
pub fn write_atomic<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        e
    })
}
