use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::Label;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One line of a JSONL manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub audio_path: String,
    pub transcript: String,
    pub label: Label,
    pub split: Split,
    pub source: String,
}

impl ManifestEntry {
    /// Relative audio paths are taken relative to `base` (usually the
    /// manifest's directory).
    pub fn resolve_audio(&self, base: &Path) -> PathBuf {
        let p = Path::new(&self.audio_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

/// Parses JSONL text. Blank lines are skipped; errors carry 1-based line
/// numbers.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line)
            .map_err(|e| Error::Manifest { line: line_no, message: e.to_string() })?;
        if entry.audio_path.trim().is_empty() {
            return Err(Error::Manifest { line: line_no, message: "audio_path is empty".into() });
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    parse_manifest(&std::fs::read_to_string(path)?)
}

/// `split -> label -> count`.
pub type SplitCounts = BTreeMap<Split, BTreeMap<Label, usize>>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub by_source: BTreeMap<String, SplitCounts>,
    pub total: SplitCounts,
}

impl DatasetStats {
    pub fn count(&self, source: Option<&str>, split: Split, label: Label) -> usize {
        let counts = match source {
            Some(s) => match self.by_source.get(s) {
                Some(c) => c,
                None => return 0,
            },
            None => &self.total,
        };
        counts.get(&split).and_then(|m| m.get(&label)).copied().unwrap_or(0)
    }

    /// Plain-text table: one row per source plus a totals row, one column
    /// per split and class.
    pub fn render_table(&self) -> String {
        let mut header = vec!["source".to_string()];
        for split in Split::ALL {
            for label in Label::ALL {
                header.push(format!("{split}/{label}"));
            }
        }
        header.push("total".into());

        let row = |name: &str, source: Option<&str>| {
            let mut cells = vec![name.to_string()];
            let mut sum = 0;
            for split in Split::ALL {
                for label in Label::ALL {
                    let n = self.count(source, split, label);
                    sum += n;
                    cells.push(n.to_string());
                }
            }
            cells.push(sum.to_string());
            cells
        };
        let mut rows = vec![header];
        for source in self.by_source.keys() {
            rows.push(row(source, Some(source)));
        }
        rows.push(row("Total", None));

        let widths: Vec<usize> =
            (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, &w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

pub fn dataset_stats(entries: &[ManifestEntry]) -> DatasetStats {
    let mut stats = DatasetStats::default();
    for e in entries {
        let per_source = stats.by_source.entry(e.source.clone()).or_default();
        *per_source.entry(e.split).or_default().entry(e.label).or_default() += 1;
        *stats.total.entry(e.split).or_default().entry(e.label).or_default() += 1;
    }
    stats
}
