//! Minimal tab-separated reading/writing shared by all file formats.
//!
//! Fields are never quoted: stimulus words may legitimately contain `"`.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) struct Record {
    pub line: u64,
    pub fields: Vec<String>,
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Reads all data records, checking that the header matches `header` exactly
/// and that every row has the header's column count.
pub(crate) fn read_records<R: Read>(
    reader: R,
    source_name: &str,
    header: &[&str],
) -> Result<Vec<Record>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(false)
        .flexible(true)
        .comment(None)
        .from_reader(reader);

    let mut out = Vec::new();
    let mut seen_header = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::parse(source_name, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let fields: Vec<String> = rec.iter().map(|f| f.trim_end_matches('\r').to_string()).collect();
        if !seen_header {
            if fields.iter().map(String::as_str).ne(header.iter().copied()) {
                return Err(Error::parse(
                    source_name,
                    line,
                    format!("expected header `{}`, found `{}`", header.join("\\t"), fields.join("\\t")),
                ));
            }
            seen_header = true;
            continue;
        }
        if fields.len() == 1 && fields[0].is_empty() {
            continue;
        }
        if fields.len() != header.len() {
            return Err(Error::parse(
                source_name,
                line,
                format!("expected {} columns, found {}", header.len(), fields.len()),
            ));
        }
        out.push(Record { line, fields });
    }
    if !seen_header {
        return Err(Error::parse(source_name, 1, "missing header"));
    }
    Ok(out)
}

pub(crate) fn parse_f64(source_name: &str, line: u64, column: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| {
        Error::parse(source_name, line, format!("{column}: `{raw}` is not a number"))
    })?;
    if !v.is_finite() {
        return Err(Error::parse(source_name, line, format!("{column}: `{raw}` is not finite")));
    }
    Ok(v)
}

pub(crate) fn parse_u32(source_name: &str, line: u64, column: &str, raw: &str) -> Result<u32> {
    raw.trim().parse().map_err(|_| {
        Error::parse(
            source_name,
            line,
            format!("{column}: `{raw}` is not a non-negative integer"),
        )
    })
}

pub(crate) fn write_row<W: Write>(w: &mut W, fields: &[&str]) -> std::io::Result<()> {
    writeln!(w, "{}", fields.join("\t"))
}
