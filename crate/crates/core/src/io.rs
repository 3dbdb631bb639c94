//! Line-oriented file formats.
//!
//! - Secrets: one decimal domain index per line.
//! - Views: one view per line, comma-separated strictly ascending indices.
//!   An empty line is the empty view.
//! - Tabular outputs (estimates, results, channels) are CSV preceded by a
//!   `#schema=ksubset.<kind>/<version>` line.
//!
//! Lines starting with `#` are skipped by both readers.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::estimation::FrequencyVector;

pub const SCHEMA_VERSION: u32 = 1;

/// Writes the `#schema=ksubset.<kind>/<version>` header line.
pub fn write_schema_header<W: Write + ?Sized>(out: &mut W, kind: &str) -> Result<()> {
    writeln!(out, "#schema=ksubset.{kind}/{SCHEMA_VERSION}")?;
    Ok(())
}

fn trim_line(line: &[u8]) -> &[u8] {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    line.strip_suffix(b"\r").unwrap_or(line)
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_index(field: &[u8], line: usize) -> Result<usize> {
    if field.is_empty() {
        return Err(parse_error(line, "empty field"));
    }
    let mut value: usize = 0;
    for &b in field {
        if !b.is_ascii_digit() {
            return Err(parse_error(
                line,
                format!(
                    "'{}' is not a non-negative integer",
                    String::from_utf8_lossy(field).trim()
                ),
            ));
        }
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add((b - b'0') as usize))
            .ok_or_else(|| parse_error(line, "index overflows"))?;
    }
    Ok(value)
}

/// Reads lines, calling `f(line_number, bytes)` with 1-based line numbers and
/// line terminators stripped. Comment lines are skipped.
fn for_each_line<R: BufRead, F>(mut reader: R, mut f: F) -> Result<()>
where
    F: FnMut(usize, &[u8]) -> Result<()>,
{
    let mut buf = Vec::with_capacity(256);
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(());
        }
        line_no += 1;
        let line = trim_line(&buf);
        if line.first() == Some(&b'#') {
            continue;
        }
        f(line_no, line)?;
    }
}

/// Parses a secrets file: one index in `[0, d)` per line.
pub fn read_secrets<R: BufRead>(reader: R, d: usize) -> Result<Vec<usize>> {
    let mut secrets = Vec::new();
    for_each_line(reader, |line_no, line| {
        let x = parse_index(line.trim_ascii(), line_no)?;
        if x >= d {
            return Err(parse_error(
                line_no,
                format!("symbol {x} out of range for d = {d}"),
            ));
        }
        secrets.push(x);
        Ok(())
    })?;
    Ok(secrets)
}

/// Parses one view line into `out`, checking range and strict ordering.
pub fn parse_view_line(line: &[u8], d: usize, line_no: usize, out: &mut Vec<usize>) -> Result<()> {
    out.clear();
    if line.is_empty() {
        return Ok(());
    }
    for field in line.split(|&b| b == b',') {
        let j = parse_index(field.trim_ascii(), line_no)?;
        if j >= d {
            return Err(parse_error(
                line_no,
                format!("symbol {j} out of range for d = {d}"),
            ));
        }
        if let Some(&prev) = out.last() {
            if j <= prev {
                return Err(parse_error(line_no, "indices must be strictly ascending"));
            }
        }
        out.push(j);
    }
    Ok(())
}

/// Aggregates a view file into per-symbol counts. With `view_size` set,
/// every view must have exactly that many members.
pub fn read_views_frequency<R: BufRead>(
    reader: R,
    d: usize,
    view_size: Option<usize>,
) -> Result<FrequencyVector> {
    let mut freq = FrequencyVector::new(d);
    let mut members = Vec::new();
    for_each_line(reader, |line_no, line| {
        parse_view_line(line, d, line_no, &mut members)?;
        if let Some(k) = view_size {
            if members.len() != k {
                return Err(parse_error(
                    line_no,
                    format!("view has {} members, expected {k}", members.len()),
                ));
            }
        }
        freq.add_members(&members)
    })?;
    Ok(freq)
}

/// Parses a whole view file into member lists.
pub fn read_views<R: BufRead>(reader: R, d: usize) -> Result<Vec<Vec<usize>>> {
    let mut views = Vec::new();
    let mut members = Vec::new();
    for_each_line(reader, |line_no, line| {
        parse_view_line(line, d, line_no, &mut members)?;
        views.push(members.clone());
        Ok(())
    })?;
    Ok(views)
}

/// Appends the wire form of `members` plus a newline to `buf`.
pub fn push_view_line(buf: &mut Vec<u8>, members: &[usize]) {
    let mut itoa_buf = itoa::Buffer::new();
    for (i, &j) in members.iter().enumerate() {
        if i > 0 {
            buf.push(b',');
        }
        buf.extend_from_slice(itoa_buf.format(j).as_bytes());
    }
    buf.push(b'\n');
}

pub fn write_views<'a, W, I>(mut out: W, views: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a [usize]>,
{
    let mut buf = Vec::with_capacity(1 << 16);
    for v in views {
        push_view_line(&mut buf, v);
        if buf.len() >= 1 << 16 {
            out.write_all(&buf)?;
            buf.clear();
        }
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn secrets_roundtrip_and_errors() {
        let ok = read_secrets("0\n3\r\n# note\n2".as_bytes(), 4).unwrap();
        assert_eq!(ok, vec![0, 3, 2]);
        assert!(read_secrets("".as_bytes(), 4).unwrap().is_empty());

        match read_secrets("1\nx\n".as_bytes(), 4) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match read_secrets("1\n2\n4\n".as_bytes(), 4) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(read_secrets("-1\n".as_bytes(), 4).is_err());
        assert!(read_secrets("\n".as_bytes(), 4).is_err());
    }

    #[test]
    fn view_lines() {
        let views = read_views("0,2,3\n\n1\n".as_bytes(), 4).unwrap();
        assert_eq!(views, vec![vec![0, 2, 3], vec![], vec![1]]);
        for bad in ["2,1\n", "1,1\n", "1,,2\n", "0,4\n", "a\n"] {
            assert!(read_views(bad.as_bytes(), 4).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn frequency_enforces_size() {
        let f = read_views_frequency("0,1\n1,2\n".as_bytes(), 3, Some(2)).unwrap();
        assert_eq!(f.counts(), &[1, 2, 1]);
        assert_eq!(f.n(), 2);
        match read_views_frequency("0,1\n1\n".as_bytes(), 3, Some(2)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn write_then_read() {
        let views: Vec<Vec<usize>> = vec![vec![0, 5, 17], vec![], vec![3]];
        let mut buf = Vec::new();
        write_views(&mut buf, views.iter().map(|v| v.as_slice())).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "0,5,17\n\n3\n");
        assert_eq!(read_views(buf.as_slice(), 18).unwrap(), views);
    }

    #[test]
    fn schema_header() {
        let mut buf = Vec::new();
        write_schema_header(&mut buf, "estimate").unwrap();
        assert_eq!(buf, b"#schema=ksubset.estimate/1\n");
    }
}
