//! CSV tables and the plain-text summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::geometry::Point;
use crate::Result;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A number with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Points are written as their coordinates joined by `;`.
pub fn point(p: &Point) -> String {
    p.as_slice()
        .iter()
        .map(|c| num(*c))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn header(config_hash: &str, seed: &str) -> String {
    format!("# germlab {VERSION} config={config_hash} seed={seed}\n")
}

/// Collects output files in memory and writes them in one pass.
#[derive(Debug)]
pub struct Sink {
    pub dir: PathBuf,
    header: String,
    files: Vec<(String, String)>,
    summary: String,
}

impl Sink {
    pub fn new(dir: PathBuf, config_hash: &str, seed: &str) -> Sink {
        Sink {
            dir,
            header: header(config_hash, seed),
            files: Vec::new(),
            summary: String::new(),
        }
    }

    pub fn table(&mut self, name: &str, columns: &str, rows: impl IntoIterator<Item = String>) {
        let mut body = String::new();
        body.push_str(&self.header);
        body.push_str(columns);
        body.push('\n');
        for r in rows {
            body.push_str(&r);
            body.push('\n');
        }
        self.files.push((format!("{name}.csv"), body));
    }

    pub fn line(&mut self, text: impl AsRef<str>) {
        let _ = writeln!(self.summary, "{}", text.as_ref());
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl AsRef<str>) {
        let verdict = if passed { "PASS" } else { "FAIL" };
        self.line(format!("check {name}: {verdict} ({})", detail.as_ref()));
    }

    pub fn summary(&self) -> &str {
        &self.summary
    }

    pub fn write(&self) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(&self.dir)?;
        let mut written = Vec::new();
        for (name, body) in &self.files {
            written.push(write_file(&self.dir, name, body)?);
        }
        let summary = format!("{}{}", self.header, self.summary);
        written.push(write_file(&self.dir, "summary.txt", &summary)?);
        Ok(written)
    }
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, body)?;
    Ok(path)
}
