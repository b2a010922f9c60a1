//! Metrics CSV: one `#` metadata line, a fixed column header, then rows.
//!
//! ```text
//! # ecc-harness-csv v1 algorithm=ecc env=two_path k=5 ...
//! seed,step,total_samples,agent,mean_return,best_so_far,snapshot_version
//! 0,1000,5000,0,3,3,2
//! 0,1000,5000,joint,3,3,2
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "ecc-harness-csv";
pub const FORMAT_VERSION: u32 = 1;
pub const COLUMNS: [&str; 7] = [
    "seed",
    "step",
    "total_samples",
    "agent",
    "mean_return",
    "best_so_far",
    "snapshot_version",
];

/// Which policy a row scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgentLabel {
    Agent(usize),
    Joint,
}

impl fmt::Display for AgentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentLabel::Agent(i) => write!(f, "{i}"),
            AgentLabel::Joint => f.write_str("joint"),
        }
    }
}

impl FromStr for AgentLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "joint" {
            return Ok(AgentLabel::Joint);
        }
        s.parse()
            .map(AgentLabel::Agent)
            .map_err(|_| Error::Csv(format!("agent must be an index or \"joint\", got {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub seed: u64,
    pub step: u64,
    pub total_samples: u64,
    pub agent: AgentLabel,
    pub mean_return: f64,
    pub best_so_far: f64,
    pub snapshot_version: u64,
}

/// `key=value` pairs of the metadata line, in key order.
pub type Metadata = BTreeMap<String, String>;

/// A metrics file: metadata plus rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub metadata: Metadata,
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }
}

fn metadata_line(meta: &Metadata) -> String {
    let mut line = format!("# {FORMAT_TAG} v{FORMAT_VERSION}");
    for (k, v) in meta {
        line.push_str(&format!(" {k}={v}"));
    }
    line
}

/// Writes the metadata line and column header.
pub fn write_header<W: Write>(meta: &Metadata, mut w: W) -> Result<()> {
    for (k, v) in meta {
        if k.contains([' ', '=']) || v.contains([' ', '\n']) || v.is_empty() {
            return Err(Error::Csv(format!("metadata entry {k:?}={v:?} is not encodable")));
        }
    }
    writeln!(w, "{}", metadata_line(meta))?;
    writeln!(w, "{}", COLUMNS.join(","))?;
    Ok(())
}

/// One data line. Floats use Rust's shortest round-trip formatting, so a
/// value read back is bit-identical to the value written.
pub fn format_row(row: &MetricRow) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        row.seed,
        row.step,
        row.total_samples,
        row.agent,
        row.mean_return,
        row.best_so_far,
        row.snapshot_version
    )
}

pub fn write_row<W: Write>(row: &MetricRow, mut w: W) -> Result<()> {
    writeln!(w, "{}", format_row(row))?;
    Ok(())
}

pub fn write_table<W: Write>(table: &MetricsTable, mut w: W) -> Result<()> {
    write_header(&table.metadata, &mut w)?;
    for row in &table.rows {
        write_row(row, &mut w)?;
    }
    Ok(())
}

fn parse_metadata(line: &str) -> Result<Metadata> {
    let mut parts = line.trim_start_matches('#').split_whitespace();
    if parts.next() != Some(FORMAT_TAG) {
        return Err(Error::Csv(format!("first line is not an {FORMAT_TAG} header")));
    }
    let version = parts.next().unwrap_or("");
    if version != format!("v{FORMAT_VERSION}") {
        return Err(Error::Csv(format!("unsupported format version {version:?}")));
    }
    parts
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Csv(format!("malformed metadata entry {kv:?}")))
        })
        .collect()
}

fn field<T: FromStr>(record: &csv::StringRecord, i: usize, line: u64) -> Result<T> {
    let raw = record.get(i).unwrap_or("");
    raw.parse()
        .map_err(|_| Error::Csv(format!("line {line}: bad {} value {raw:?}", COLUMNS[i])))
}

pub fn read_table<R: BufRead>(mut r: R) -> Result<MetricsTable> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let metadata = parse_metadata(first.trim_end())?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = reader.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != COLUMNS {
        return Err(Error::Csv(format!("unexpected columns {header:?}")));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        // line 1 is metadata, line 2 the column header
        let line = record.position().map_or(0, |p| p.line() + 1);
        rows.push(MetricRow {
            seed: field(&record, 0, line)?,
            step: field(&record, 1, line)?,
            total_samples: field(&record, 2, line)?,
            agent: field(&record, 3, line)?,
            mean_return: field(&record, 4, line)?,
            best_so_far: field(&record, 5, line)?,
            snapshot_version: field(&record, 6, line)?,
        });
    }
    Ok(MetricsTable { metadata, rows })
}

pub fn load_table(path: &Path) -> Result<MetricsTable> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Csv(format!("cannot open {}: {e}", path.display())))?;
    read_table(std::io::BufReader::new(file))
}

/// The rows of a metrics file as text, without the metadata line; this is
/// the part that must be byte-identical across reruns.
pub fn data_section(text: &str) -> &str {
    text.split_once('\n').map_or("", |(_, rest)| rest)
}
