//! Field files.
//!
//! Binary layout: the 8 magic bytes `SSGRID01`, the rank as a little-endian
//! `u64`, one little-endian `u64` per dimension, then the values as
//! little-endian `f64` in row-major order (first dimension slowest). Value
//! fields have dimensions `[nt, nx, ny]`; masks store `1.0` for stopped
//! nodes and `0.0` otherwise.

use std::io::{self, Write};

use stopsurf::model::Grid;

pub const MAGIC: &[u8; 8] = b"SSGRID01";

pub fn encode(dims: &[usize], data: &[f64]) -> Vec<u8> {
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    let mut out = Vec::with_capacity(16 + 8 * dims.len() + 8 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(dims.len() as u64).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn u64_at(bytes: &[u8], pos: usize) -> io::Result<u64> {
    bytes
        .get(pos..pos + 8)
        .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
        .ok_or_else(|| invalid("truncated header"))
}

pub fn decode(bytes: &[u8]) -> io::Result<(Vec<usize>, Vec<f64>)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(invalid("not a stopsurf grid file (bad magic)"));
    }
    let rank = u64_at(bytes, 8)? as usize;
    if rank == 0 || rank > 8 {
        return Err(invalid(format!("unsupported rank {rank}")));
    }
    let dims = (0..rank).map(|r| u64_at(bytes, 16 + 8 * r).map(|d| d as usize)).collect::<io::Result<Vec<_>>>()?;
    let start = 16 + 8 * rank;
    let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| invalid("dimensions overflow"))?;
    if bytes.len() != start + 8 * n {
        return Err(invalid(format!("expected {} data bytes, found {}", 8 * n, bytes.len().saturating_sub(start))));
    }
    let data = bytes[start..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((dims, data))
}

/// Rows `t,x,y,<name>` in storage order.
pub fn write_csv(w: &mut impl Write, grid: &Grid, name: &str, data: &[f64]) -> io::Result<()> {
    writeln!(w, "t,x,y,{name}")?;
    let mut n = 0;
    for &t in &grid.t {
        for &x in &grid.x {
            for &y in &grid.y {
                writeln!(w, "{t},{x},{y},{}", data[n])?;
                n += 1;
            }
        }
    }
    Ok(())
}

pub fn read_csv(src: &str, expected: usize) -> io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(expected);
    for (line_no, line) in src.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or("");
        let v = field.trim().parse::<f64>().map_err(|e| invalid(format!("line {}: {e}", line_no + 1)))?;
        out.push(v);
    }
    if out.len() != expected {
        return Err(invalid(format!("expected {expected} rows, found {}", out.len())));
    }
    Ok(out)
}
