//! Report plumbing: pass/fail check lines, JSON reports, and CSV tables.
//!
//! Everything written here is a pure function of the inputs — no
//! timestamps, durations, or machine facts — so seed-identical runs produce
//! byte-identical artifacts.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

/// One verified condition, reported as a pass/fail line.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Accumulates check lines and mirrors them to stdout as they land.
#[derive(Debug, Default)]
pub struct Checks {
    items: Vec<Check>,
}

impl Checks {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one condition and prints its pass/fail line.
    pub fn add(&mut self, name: &str, passed: bool, detail: String) {
        println!("check {name}: {} ({detail})", if passed { "PASS" } else { "FAIL" });
        self.items.push(Check { name: name.to_string(), passed, detail });
    }

    pub fn all_passed(&self) -> bool {
        self.items.iter().all(|c| c.passed)
    }

    pub fn into_items(self) -> Vec<Check> {
        self.items
    }
}

/// Writes a pretty-printed JSON report with a trailing newline.
///
/// Serialization fails on non-finite floats, so callers must map infinities
/// (e.g. the no-adversary multiplier) to `null`-able options first.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .with_context(|| format!("serializing {}", path.display()))?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Opens a CSV writer for an artifact table.
pub fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file =
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::Writer::from_writer(file))
}

/// Formats a float for CSV cells (shortest round-trip form).
pub fn cell(v: f64) -> String {
    format!("{v}")
}

/// Formats an optional float; absent values become empty cells.
pub fn opt_cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}
