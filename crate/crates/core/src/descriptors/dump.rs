//! Comma-delimited descriptor dump.
//!
//! ```text
//! # obval-descriptors v1
//! segment_id,u,v,d0,...,d28,label
//! 3,512.25,401.5,<29 values>,1
//! ```
//!
//! Values are raw (before color scaling and normalization) and written in
//! shortest round-trip decimal form, so reading a dump back is bit-exact.
//! Labels are `1` (consistent), `-1` (inconsistent) and `0` (unlabeled).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::DESCRIPTOR_LEN;

pub const DUMP_HEADER: &str = "# obval-descriptors v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DumpRow {
    pub segment_id: u32,
    pub u: f64,
    pub v: f64,
    pub raw: [f64; DESCRIPTOR_LEN],
    pub label: i8,
}

pub fn column_header() -> String {
    let mut s = String::from("segment_id,u,v");
    for i in 0..DESCRIPTOR_LEN {
        write!(s, ",d{i}").unwrap();
    }
    s.push_str(",label");
    s
}

pub fn to_string(rows: &[DumpRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 600 + 200);
    out.push_str(DUMP_HEADER);
    out.push('\n');
    out.push_str(&column_header());
    out.push('\n');
    for r in rows {
        write!(out, "{},{:?},{:?}", r.segment_id, r.u, r.v).unwrap();
        for v in &r.raw {
            write!(out, ",{v:?}").unwrap();
        }
        writeln!(out, ",{}", r.label).unwrap();
    }
    out
}

pub fn from_str(text: &str, context: &str) -> Result<Vec<DumpRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim_end() == DUMP_HEADER => {}
        _ => return Err(Error::parse(context, format!("missing `{DUMP_HEADER}` header"))),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') || line.starts_with("segment_id") {
            continue;
        }
        let err = |m: String| Error::parse(format!("{context}:{}", lineno + 1), m);
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != DESCRIPTOR_LEN + 4 {
            return Err(err(format!(
                "expected {} fields, found {}",
                DESCRIPTOR_LEN + 4,
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| err(format!("`{s}`: {e}")))
        };
        let segment_id = fields[0]
            .parse::<u32>()
            .map_err(|e| err(format!("segment_id `{}`: {e}", fields[0])))?;
        let mut raw = [0.0; DESCRIPTOR_LEN];
        for (k, f) in fields[3..3 + DESCRIPTOR_LEN].iter().enumerate() {
            raw[k] = num(f)?;
        }
        let label = fields[DESCRIPTOR_LEN + 3]
            .parse::<i8>()
            .ok()
            .filter(|l| (-1..=1).contains(l))
            .ok_or_else(|| err(format!("label `{}` not in {{-1, 0, 1}}", fields[DESCRIPTOR_LEN + 3])))?;
        rows.push(DumpRow {
            segment_id,
            u: num(fields[1])?,
            v: num(fields[2])?,
            raw,
            label,
        });
    }
    Ok(rows)
}

pub fn write(path: impl AsRef<Path>, rows: &[DumpRow]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_string(rows)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Vec<DumpRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text, &path.display().to_string())
}
