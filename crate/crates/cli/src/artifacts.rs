//! Run artifacts: CSV tables, the stamped config, and a manifest.
//!
//! Numbers are written with Rust's shortest round-trip float formatting, so
//! re-running a config with the same seeds produces byte-identical tables.

use anyhow::{Context, Result};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Formats a float so it reparses to exactly the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Collects everything a run writes and stamps the manifest at the end.
pub struct RunWriter {
    dir: PathBuf,
    files: Vec<String>,
    start: Instant,
}

impl RunWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(RunWriter {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            start: Instant::now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn record(&mut self, name: &str, contents: String) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Writes `name` with the given header line and pre-rendered rows.
    pub fn write_csv(&mut self, name: &str, header: &str, rows: &[String]) -> Result<()> {
        let mut out = String::with_capacity(header.len() + 1 + rows.iter().map(|r| r.len() + 1).sum::<usize>());
        out.push_str(header);
        out.push('\n');
        for row in rows {
            out.push_str(row);
            out.push('\n');
        }
        self.record(name, out)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.record(name, text)
    }

    /// Writes `manifest.json` listing every other emitted file and returns
    /// the run directory.
    pub fn finish(mut self, experiment: &str, seeds: &[u64]) -> Result<PathBuf> {
        self.files.sort();
        let manifest = serde_json::json!({
            "experiment": experiment,
            "seeds": seeds,
            "files": self.files,
            "build": format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            "wall_time_secs": self.start.elapsed().as_secs_f64(),
        });
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(self.dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_exactly() {
        for v in [
            1.0 / 3.0,
            5.333333333333333,
            f64::MIN_POSITIVE,
            -0.0,
            1e300,
            0.1 + 0.2,
        ] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn manifest_lists_exactly_the_emitted_files() {
        let tmp = tempfile::tempdir().unwrap();
        let mut w = RunWriter::create(tmp.path()).unwrap();
        w.write_csv("a.csv", "x,y", &["1,2".to_string()]).unwrap();
        w.write_json("b.json", &serde_json::json!({"k": 1})).unwrap();
        let dir = w.finish("train", &[0, 1]).unwrap();

        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        let listed: Vec<String> = manifest["files"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap().to_string())
            .collect();
        assert_eq!(listed, vec!["a.csv".to_string(), "b.json".to_string()]);

        let mut on_disk: Vec<String> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        on_disk.sort();
        assert_eq!(on_disk, vec!["a.csv", "b.json", "manifest.json"]);
        assert_eq!(manifest["seeds"], serde_json::json!([0, 1]));
    }
}
