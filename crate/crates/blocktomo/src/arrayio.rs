//! Flat array files: one text header line, then raw 32-bit floats.
//!
//! The header is `dims: K [K [K]]` followed by a newline; the payload is the
//! row-major values as little-endian IEEE-754 single precision.  Round-trips
//! are bit-exact.

use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub fn write_array(path: &Path, dims: &[usize], values: &[f32]) -> Result<()> {
    if dims.is_empty() || dims.len() > 3 {
        return Err(Error::ArrayFormat(format!(
            "dims must list 1 to 3 sizes, got {}",
            dims.len()
        )));
    }
    let expect: usize = dims.iter().product();
    if expect != values.len() {
        return Err(Error::ArrayFormat(format!(
            "dims {dims:?} imply {expect} values, got {}",
            values.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    let dims_text: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    writeln!(w, "dims: {}", dims_text.join(" "))?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_array(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)
            .map_err(|_| Error::ArrayFormat("missing header line".into()))?;
        if byte[0] == b'\n' {
            break;
        }
        if header.len() > 256 {
            return Err(Error::ArrayFormat("header line too long".into()));
        }
        header.push(byte[0]);
    }
    let header = String::from_utf8(header)
        .map_err(|_| Error::ArrayFormat("header is not valid text".into()))?;
    let rest = header
        .strip_prefix("dims:")
        .ok_or_else(|| Error::ArrayFormat(format!("header must start with 'dims:', got '{header}'")))?;
    let dims: Vec<usize> = rest
        .split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| Error::ArrayFormat(format!("bad dimension '{tok}'")))
        })
        .collect::<Result<_>>()?;
    if dims.is_empty() || dims.len() > 3 || dims.contains(&0) {
        return Err(Error::ArrayFormat(format!("unusable dims {dims:?}")));
    }
    let count: usize = dims.iter().product();
    let mut payload = vec![0u8; count * 4];
    r.read_exact(&mut payload)
        .map_err(|_| Error::ArrayFormat("payload shorter than dims imply".into()))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::ArrayFormat("trailing bytes after payload".into()));
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((dims, values))
}
