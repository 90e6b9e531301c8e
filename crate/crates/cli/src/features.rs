//! Feature files: numeric CSV (optional single header row) or the binary
//! `DRF1` layout.

use std::path::Path;

use anyhow::{bail, Context, Result};
use driftbridge::attribution::fmt_f64;
use driftbridge::{Matrix, SampleSet};

pub const MAGIC: &[u8; 4] = b"DRF1";
const HEADER_LEN: usize = 4 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Binary,
}

/// Reads a feature file and returns its samples and raw bytes.
pub fn read(path: &Path) -> Result<(SampleSet, Vec<u8>)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let set = parse(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    Ok((set, bytes))
}

pub fn parse(bytes: &[u8]) -> Result<SampleSet> {
    if bytes.starts_with(MAGIC) {
        parse_binary(bytes)
    } else {
        parse_csv(std::str::from_utf8(bytes).context("CSV is not valid UTF-8")?)
    }
}

fn parse_binary(bytes: &[u8]) -> Result<SampleSet> {
    if bytes.len() < HEADER_LEN {
        bail!("truncated binary header");
    }
    let word = |k: usize| u64::from_le_bytes(bytes[4 + 8 * k..12 + 8 * k].try_into().unwrap());
    let (rows, cols) = (word(0) as usize, word(1) as usize);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .context("binary dimensions overflow")?;
    if bytes.len() != expected {
        bail!("binary file has {} bytes, header implies {expected}", bytes.len());
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(SampleSet::new(Matrix::from_vec(rows, cols, data)?)?)
}

fn parse_csv(text: &str) -> Result<SampleSet> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if rows == 0 && cols.is_none() => {
                cols = Some(line.split(',').count());
                continue;
            }
            Err(e) => bail!("line {}: {e}", lineno + 1),
        };
        match cols {
            Some(c) if c != values.len() => {
                bail!("line {}: expected {c} columns, found {}", lineno + 1, values.len())
            }
            _ => cols = Some(values.len()),
        }
        data.extend(values);
        rows += 1;
    }
    if rows == 0 {
        bail!("no data rows");
    }
    Ok(SampleSet::new(Matrix::from_vec(rows, cols.unwrap_or(0), data)?)?)
}

pub fn encode(set: &SampleSet, format: Format) -> Vec<u8> {
    match format {
        Format::Csv => encode_csv(set).into_bytes(),
        Format::Binary => encode_binary(set),
    }
}

/// One row per sample, 17 significant digits.
pub fn encode_csv(set: &SampleSet) -> String {
    let mut out = String::new();
    for i in 0..set.n() {
        let row: Vec<String> = set.point(i).iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn encode_binary(set: &SampleSet) -> Vec<u8> {
    let data = set.points().data();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(set.n() as u64).to_le_bytes());
    out.extend_from_slice(&(set.d() as u64).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
