//! Output staging. Every command collects its files in memory and writes
//! them at the end, each through a temporary file and a rename.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), contents.into()));
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in rows {
            writer.serialize(row)?;
        }
        let bytes = writer.into_inner().context("flushing csv")?;
        self.add(name, bytes);
        Ok(())
    }

    pub fn jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut out = String::new();
        for row in rows {
            out.push_str(&serde_json::to_string(row)?);
            out.push('\n');
        }
        self.add(name, out);
        Ok(())
    }

    /// Same rows as `<stem>.csv` and `<stem>.jsonl`.
    pub fn report<T: Serialize>(&mut self, stem: &str, rows: &[T]) -> Result<()> {
        self.csv(&format!("{stem}.csv"), rows)?;
        self.jsonl(&format!("{stem}.jsonl"), rows)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.add(name, text);
        Ok(())
    }

    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, contents) in self.files {
            let target = dir.join(&name);
            let staging = dir.join(format!(".{name}.tmp"));
            fs::write(&staging, contents).with_context(|| format!("writing {}", staging.display()))?;
            fs::rename(&staging, &target).with_context(|| format!("renaming into {}", target.display()))?;
            written.push(target);
        }
        Ok(written)
    }
}
