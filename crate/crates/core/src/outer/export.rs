//! Line-oriented weight files:
//!
//! ```text
//! # config_hash=3f2a... seed=7
//! index w s m
//! 0 1.25 0.9 1
//! ```
//!
//! Lines starting with `#` and blank lines are ignored by the parser except
//! that `key=value` pairs on comment lines are collected into the header.

use std::collections::BTreeMap;
use std::io::Write;

use crate::{Error, Result};

const COLUMNS: &str = "index w s m";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightRecord {
    pub index: usize,
    pub w: f64,
    pub s: f64,
    pub m: bool,
}

/// `key=value` pairs written on the leading comment line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WeightFileHeader {
    pub fields: BTreeMap<String, String>,
}

impl WeightFileHeader {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(String::as_str)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.fields.insert(key.into(), value.into());
    }
}

pub fn write_weight_records<W: Write>(
    out: &mut W,
    header: &WeightFileHeader,
    records: &[WeightRecord],
) -> Result<()> {
    if !header.fields.is_empty() {
        let pairs: Vec<String> = header.fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(out, "# {}", pairs.join(" "))?;
    }
    writeln!(out, "{COLUMNS}")?;
    for r in records {
        // `{}` on f64 prints the shortest representation that round-trips
        writeln!(out, "{} {} {} {}", r.index, r.w, r.s, u8::from(r.m))?;
    }
    Ok(())
}

pub fn parse_weight_records(text: &str) -> Result<(WeightFileHeader, Vec<WeightRecord>)> {
    let mut header = WeightFileHeader::default();
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            for token in comment.split_whitespace() {
                if let Some((key, value)) = token.split_once('=') {
                    header.insert(key, value);
                }
            }
            continue;
        }
        if line.split_whitespace().eq(COLUMNS.split_whitespace()) {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(line_no, format!("expected 4 fields, found {}", fields.len())));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad index {:?}", fields[0])))?;
        let w = parse_float(fields[1], line_no, "w")?;
        let s = parse_float(fields[2], line_no, "s")?;
        if w < 0.0 {
            return Err(Error::parse(line_no, format!("negative weight {w}")));
        }
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::parse(line_no, format!("keep probability {s} outside [0, 1]")));
        }
        let m = match fields[3] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(line_no, format!("mask must be 0 or 1, got {other:?}"))),
        };
        if !seen.insert(index) {
            return Err(Error::parse(line_no, format!("duplicate index {index}")));
        }
        records.push(WeightRecord { index, w, s, m });
    }
    Ok((header, records))
}

fn parse_float(s: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::parse(line, format!("bad {what} value {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite {what}")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut header = WeightFileHeader::default();
        header.insert("config_hash", "abc");
        header.insert("seed", "3");
        let records = vec![
            WeightRecord { index: 0, w: 1.0, s: 0.25, m: false },
            WeightRecord { index: 1, w: 0.1 + 0.2, s: 1.0, m: true },
        ];
        let mut buf = Vec::new();
        write_weight_records(&mut buf, &header, &records).unwrap();
        let (h, r) = parse_weight_records(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(h, header);
        assert_eq!(r, records);
    }

    #[test]
    fn rejects_malformed_lines() {
        for bad in ["0 1 0.5", "0 -1 0.5 1", "0 1 1.5 1", "0 1 0.5 2", "x 1 0.5 1", "0 nan 0.5 1", "0 1 0.5 1\n0 1 0.5 1"] {
            assert!(parse_weight_records(bad).is_err(), "{bad}");
        }
    }
}
