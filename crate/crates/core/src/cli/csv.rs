//! Metrics files: number formatting, append-only writers that can be cut
//! back to a checkpoint, and a reader for plotting.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::DiagnosticRow;
use crate::trainer::EvalResult;

pub const METRICS_HEADER: [&str; 16] = [
    "iteration",
    "l_s",
    "l_u",
    "l_m",
    "l_cm",
    "total",
    "purity",
    "reliability",
    "top1",
    "top2",
    "test_error",
    "threshold_global",
    "size_H",
    "size_Hc",
    "cam_matched",
    "wall_clock_s",
];

pub const EVALS_HEADER: [&str; 5] = ["iteration", "test_error_ema", "test_error_live", "top1_ema", "top2_ema"];

/// `%g`-style rendering with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig6).unwrap_or_default()
}

/// Buffered CSV writer over a file whose first column is the iteration.
struct RowFile {
    out: BufWriter<File>,
}

impl RowFile {
    fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", header.join(","))?;
        Ok(Self { out })
    }

    /// Keeps the header and rows with iteration ≤ `keep_through`.
    fn resume(path: &Path, header: &[&str], keep_through: u64) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let head = lines.next().unwrap_or("");
        if head != header.join(",") {
            return Err(Error::Format(format!("{}: unexpected header '{head}'", path.display())));
        }
        let mut kept = String::from(head);
        kept.push('\n');
        for line in lines {
            let it: u64 = line
                .split(',')
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad row '{line}'", path.display())))?;
            if it <= keep_through {
                kept.push_str(line);
                kept.push('\n');
            }
        }
        fs::write(path, kept)?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self { out: BufWriter::new(file) })
    }

    fn line(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.out, "{}", fields.join(","))?;
        Ok(())
    }
}

pub struct MetricsWriter(RowFile);

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        RowFile::create(path, &METRICS_HEADER).map(Self)
    }

    pub fn resume(path: &Path, keep_through: u64) -> Result<Self> {
        RowFile::resume(path, &METRICS_HEADER, keep_through).map(Self)
    }

    /// Appends one row; the wall-clock field is left empty unless
    /// `with_clock`.
    pub fn write_row(&mut self, row: &DiagnosticRow, with_clock: bool) -> Result<()> {
        let fields = [
            row.iteration.to_string(),
            format_sig6(row.l_s),
            format_sig6(row.l_u),
            format_sig6(row.l_m),
            format_sig6(row.l_cm),
            format_sig6(row.total),
            opt(row.purity),
            opt(row.reliability),
            opt(row.top1),
            opt(row.top2),
            opt(row.test_error),
            format_sig6(row.threshold_global),
            row.size_h.to_string(),
            row.size_hc.to_string(),
            row.cam_matched.to_string(),
            opt(with_clock.then_some(row.wall_clock_s)),
        ];
        self.0.line(&fields)
    }

    pub fn flush(&mut self) -> Result<()> {
        Ok(self.0.out.flush()?)
    }
}

pub struct EvalWriter(RowFile);

impl EvalWriter {
    pub fn create(path: &Path) -> Result<Self> {
        RowFile::create(path, &EVALS_HEADER).map(Self)
    }

    pub fn resume(path: &Path, keep_through: u64) -> Result<Self> {
        RowFile::resume(path, &EVALS_HEADER, keep_through).map(Self)
    }

    pub fn write(&mut self, iteration: u64, ema: &EvalResult, live: &EvalResult) -> Result<()> {
        let fields = [
            iteration.to_string(),
            format_sig6(ema.error_rate),
            format_sig6(live.error_rate),
            format_sig6(ema.topk[0]),
            opt(ema.topk.get(1).copied()),
        ];
        self.0.line(&fields)
    }

    pub fn flush(&mut self) -> Result<()> {
        Ok(self.0.out.flush()?)
    }
}

/// A parsed CSV file with a header row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Format("empty CSV".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let row: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
            if row.len() != header.len() {
                return Err(Error::Format(format!(
                    "row {} has {} fields, header has {}",
                    n + 2,
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Values of one column; empty fields are `None`.
    pub fn column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let k = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("no column '{name}'")))?;
        self.rows
            .iter()
            .map(|r| {
                let f = &r[k];
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse()
                        .map(Some)
                        .map_err(|_| Error::Format(format!("column {name}: '{f}' is not a number")))
                }
            })
            .collect()
    }
}
