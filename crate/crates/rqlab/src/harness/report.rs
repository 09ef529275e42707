//! Table-shaped experiment results and their CSV / JSON renderings.
//!
//! The CSV is the human-facing artifact: fixed column order, floats
//! printed with six significant digits. The JSON mirror keeps full float
//! precision so it parses back into an equal [`MetricsTable`] — it is the
//! machine-facing copy a `report` re-render starts from.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::OutputFormat;
use crate::error::{Error, Result};

/// The fixed CSV column header.
pub const CSV_HEADER: &str = "policy,success_rate,basic_reward_mean,basic_reward_std,\
addon_reward_mean,addon_reward_std,task_metric_mean,task_metric_std,episodes";

/// File name of the CSV rendering inside the output directory.
pub const CSV_FILE_NAME: &str = "report.csv";

/// File name of the JSON rendering inside the output directory.
pub const JSON_FILE_NAME: &str = "report.json";

/// One evaluated policy's aggregate statistics.
///
/// Returns are undiscounted episodic sums per reward channel; spreads are
/// population standard deviations over the pooled episodes (a single
/// episode therefore reports a spread of zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    /// Report row label: `prior`, a method tag, or a `#k`-suffixed tag.
    pub policy_label: String,
    /// Fraction of episodes classified as successful.
    pub success_rate: f64,
    pub basic_reward_mean: f64,
    pub basic_reward_std: f64,
    pub addon_reward_mean: f64,
    pub addon_reward_std: f64,
    pub task_metric_mean: f64,
    pub task_metric_std: f64,
    /// Episodes aggregated into this row (episodes per seed × seeds).
    pub episodes: usize,
}

impl MetricsRecord {
    pub fn validate(&self) -> Result<()> {
        if self.policy_label.is_empty() {
            return Err(Error::InvalidArgument(
                "metrics row needs a policy label".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.success_rate) {
            return Err(Error::InvalidArgument(format!(
                "success rate of '{}' is {}, expected a fraction in [0, 1]",
                self.policy_label, self.success_rate
            )));
        }
        let values = [
            ("basic reward mean", self.basic_reward_mean),
            ("basic reward spread", self.basic_reward_std),
            ("add-on reward mean", self.addon_reward_mean),
            ("add-on reward spread", self.addon_reward_std),
            ("task metric mean", self.task_metric_mean),
            ("task metric spread", self.task_metric_std),
        ];
        for (what, value) in values {
            if !value.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{what} of '{}' is {value}, expected finite",
                    self.policy_label
                )));
            }
        }
        for (what, value) in [
            ("basic reward spread", self.basic_reward_std),
            ("add-on reward spread", self.addon_reward_std),
            ("task metric spread", self.task_metric_std),
        ] {
            if value < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{what} of '{}' is {value}, expected non-negative",
                    self.policy_label
                )));
            }
        }
        if self.episodes == 0 {
            return Err(Error::InvalidArgument(format!(
                "row '{}' aggregates zero episodes",
                self.policy_label
            )));
        }
        Ok(())
    }

    fn csv_row(&self) -> String {
        // Labels are drawn from a fixed tag set and never contain commas or
        // quotes, so no CSV escaping is needed.
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.policy_label,
            format_significant(self.success_rate),
            format_significant(self.basic_reward_mean),
            format_significant(self.basic_reward_std),
            format_significant(self.addon_reward_mean),
            format_significant(self.addon_reward_std),
            format_significant(self.task_metric_mean),
            format_significant(self.task_metric_std),
            self.episodes
        )
    }
}

/// All rows of one run, prior first, methods in declaration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsTable {
    /// Name of the per-episode measurement the `task_metric_*` columns
    /// carry (depends on the environment).
    pub metric: String,
    pub records: Vec<MetricsRecord>,
}

impl MetricsTable {
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot emit an empty metrics table".into(),
            ));
        }
        for record in &self.records {
            record.validate()?;
        }
        Ok(())
    }

    /// The row for a given policy label, if present.
    pub fn find(&self, label: &str) -> Option<&MetricsRecord> {
        self.records.iter().find(|r| r.policy_label == label)
    }

    /// Renders the table as CSV: fixed header, one line per record, LF
    /// line endings, floats at six significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for record in &self.records {
            out.push_str(&record.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Writes the requested renderings into `directory` (created if missing)
/// and returns the paths written, in request order.
pub fn emit_report(
    table: &MetricsTable,
    directory: &Path,
    formats: &[OutputFormat],
) -> Result<Vec<PathBuf>> {
    table.validate()?;
    if formats.is_empty() {
        return Err(Error::Config("no output formats requested".into()));
    }
    fs::create_dir_all(directory)?;
    let mut written = Vec::with_capacity(formats.len());
    for format in formats {
        let path = match format {
            OutputFormat::Csv => {
                let path = directory.join(CSV_FILE_NAME);
                fs::write(&path, table.to_csv_string())?;
                path
            }
            OutputFormat::Json => {
                let path = directory.join(JSON_FILE_NAME);
                let mut text = serde_json::to_string_pretty(table)?;
                text.push('\n');
                fs::write(&path, text)?;
                path
            }
        };
        written.push(path);
    }
    Ok(written)
}

/// Formats a float with (up to) six significant digits, trimming trailing
/// zeros; magnitudes outside `[1e-4, 1e6)` switch to exponent notation.
/// Deterministic for a given input, which the byte-identical-rerun
/// contract relies on.
pub fn format_significant(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string(); // covers -0.0 as well
    }
    if !x.is_finite() {
        return x.to_string(); // defensive; validated tables are finite
    }
    let mut value = x;
    // Rounding to six digits can carry the magnitude into the next decade
    // (999999.9 → 1000000, 9.999999e-5 → 0.0001), changing which notation
    // applies; one re-derivation from the rounded value settles it.
    for _ in 0..2 {
        let exponent = value.abs().log10().floor() as i32;
        if (-4..6).contains(&exponent) {
            let decimals = (5 - exponent).max(0) as usize;
            let raw = format!("{value:.decimals$}");
            let rounded: f64 = raw.parse().expect("decimal formatting is parseable");
            if rounded != 0.0 && rounded.abs().log10().floor() as i32 != exponent {
                value = rounded;
                continue;
            }
            return trim_trailing_zeros(raw);
        }
        let raw = format!("{value:.5e}");
        let rounded: f64 = raw.parse().expect("exponent formatting is parseable");
        if rounded.abs().log10().floor() as i32 != exponent {
            value = rounded;
            continue;
        }
        let (mantissa, exp) = raw.split_once('e').expect("exponent formatting contains e");
        return format!("{}e{}", trim_trailing_zeros(mantissa.to_string()), exp);
    }
    unreachable!("significant-digit rendering stabilizes after one re-derivation");
}

fn trim_trailing_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let trimmed = s.trim_end_matches('0').trim_end_matches('.');
    trimmed.to_string()
}
