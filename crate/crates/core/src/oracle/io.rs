//! Plain-text joint files.
//!
//! ```text
//! # comment
//! y 0 -1
//! y 1 1
//! zc 0 -1
//! zc 1 1
//! zs 0 -0.5 0.25
//! zs 1 0.5 -0.25
//! p 0 0 0 0.125
//! ...
//! ```
//!
//! `y`/`zc`/`zs` lines give the value (or embedding) of one category; `p`
//! lines give the probability of one `(y, zc, zs)` cell. Every category and
//! every cell must appear exactly once. Values are written in shortest
//! round-trip form, so write-then-parse is exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::DiscreteJoint;
use crate::{Error, Result};

fn num(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::parse(line, format!("bad number {tok:?}")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::parse(line, "non-finite number"))
    }
}

fn idx(tok: &str, line: usize) -> Result<usize> {
    tok.parse().map_err(|_| Error::parse(line, format!("bad index {tok:?}")))
}

/// Categories `0..k` without gaps, in order.
fn dense<T: Clone>(map: BTreeMap<usize, T>, what: &str) -> Result<Vec<T>> {
    if map.is_empty() {
        return Err(Error::parse(0, format!("no {what} lines")));
    }
    for (expected, k) in map.keys().enumerate() {
        if *k != expected {
            return Err(Error::parse(0, format!("{what} category {expected} is missing")));
        }
    }
    Ok(map.into_values().collect())
}

/// Cap on categories per variable, so hostile inputs cannot request huge
/// tables.
const MAX_CATEGORIES: usize = 4096;

pub fn parse_joint(text: &str) -> Result<DiscreteJoint> {
    let mut ys = BTreeMap::new();
    let mut zcs: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut zss: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut cells: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        let dup = || Error::parse(line, "duplicate entry");
        match toks[0] {
            "y" => {
                if toks.len() != 3 {
                    return Err(Error::parse(line, "expected `y <index> <value>`"));
                }
                let i = idx(toks[1], line)?;
                if i >= MAX_CATEGORIES || ys.insert(i, num(toks[2], line)?).is_some() {
                    return Err(dup());
                }
            }
            tag @ ("zc" | "zs") => {
                if toks.len() < 3 {
                    return Err(Error::parse(line, format!("expected `{tag} <index> <values...>`")));
                }
                let i = idx(toks[1], line)?;
                let vals = toks[2..].iter().map(|t| num(t, line)).collect::<Result<Vec<_>>>()?;
                let map = if tag == "zc" { &mut zcs } else { &mut zss };
                if i >= MAX_CATEGORIES || map.insert(i, vals).is_some() {
                    return Err(dup());
                }
            }
            "p" => {
                if toks.len() != 5 {
                    return Err(Error::parse(line, "expected `p <y> <zc> <zs> <probability>`"));
                }
                let key = (idx(toks[1], line)?, idx(toks[2], line)?, idx(toks[3], line)?);
                if cells.insert(key, num(toks[4], line)?).is_some() {
                    return Err(dup());
                }
            }
            other => return Err(Error::parse(line, format!("unknown record {other:?}"))),
        }
    }
    let y_values = dense(ys, "y")?;
    let zc_values = dense(zcs, "zc")?;
    let zs_values = dense(zss, "zs")?;
    let (ny, nc, ns) = (y_values.len(), zc_values.len(), zs_values.len());
    let total = ny
        .checked_mul(nc)
        .and_then(|v| v.checked_mul(ns))
        .ok_or_else(|| Error::parse(0, "table too large"))?;
    if cells.len() != total {
        return Err(Error::parse(0, format!("{} probability cells for a {ny}x{nc}x{ns} table", cells.len())));
    }
    let mut p = Vec::with_capacity(total);
    for y in 0..ny {
        for c in 0..nc {
            for s in 0..ns {
                let v = cells
                    .get(&(y, c, s))
                    .ok_or_else(|| Error::parse(0, format!("cell ({y}, {c}, {s}) is missing")))?;
                p.push(*v);
            }
        }
    }
    DiscreteJoint::new(y_values, zc_values, zs_values, p)
}

pub fn write_joint(joint: &DiscreteJoint) -> String {
    let mut out = String::new();
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    for (i, v) in joint.y_values().iter().enumerate() {
        let _ = writeln!(out, "y {i} {v}");
    }
    for (i, v) in joint.zc_values().iter().enumerate() {
        let _ = writeln!(out, "zc {i} {}", join(v));
    }
    for (i, v) in joint.zs_values().iter().enumerate() {
        let _ = writeln!(out, "zs {i} {}", join(v));
    }
    for (y, c, s) in joint.cells() {
        let _ = writeln!(out, "p {y} {c} {s} {}", joint.prob(y, c, s));
    }
    out
}
