//! binvox version 1 reader/writer.
//!
//! Layout: an ASCII header (`#binvox 1`, `dim d d d`, `translate tx ty tz`,
//! `scale s`, `data`) followed by run-length pairs `(value, count)` with
//! `count` in `1..=255`. Runs follow the grid storage order (x fastest, then
//! z, then y).

use std::io::Write;

use super::{GeometryError, VoxelGrid};

const MAGIC: &str = "#binvox 1";

/// Run-length pairs over a boolean sequence, each run at most 255 long.
pub fn rle_encode(values: &[bool]) -> Vec<(u8, u8)> {
    let mut runs = Vec::new();
    let mut iter = values.iter().copied().peekable();
    while let Some(v) = iter.next() {
        let mut count: u8 = 1;
        while count < u8::MAX && iter.peek() == Some(&v) {
            iter.next();
            count += 1;
        }
        runs.push((v as u8, count));
    }
    runs
}

pub fn rle_decode(runs: &[(u8, u8)]) -> Vec<bool> {
    let mut out = Vec::with_capacity(runs.iter().map(|r| r.1 as usize).sum());
    for &(v, n) in runs {
        out.extend(std::iter::repeat_n(v != 0, n as usize));
    }
    out
}

pub fn write_binvox(grid: &VoxelGrid) -> Vec<u8> {
    let d = grid.dim();
    let [tx, ty, tz] = grid.translate;
    let mut out = Vec::new();
    // Display for f64 is the shortest string that parses back to the same bits.
    let _ = write!(
        out,
        "{MAGIC}\ndim {d} {d} {d}\ntranslate {tx} {ty} {tz}\nscale {}\ndata\n",
        grid.scale()
    );
    for (v, n) in rle_encode(grid.occupancy()) {
        out.push(v);
        out.push(n);
    }
    out
}

pub fn read_binvox(bytes: &[u8]) -> Result<VoxelGrid, GeometryError> {
    let mut pos = 0;
    let mut next_line = |what: &str| -> Result<String, GeometryError> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| GeometryError::Binvox(format!("truncated header while reading {what}")))?;
        pos += end + 1;
        String::from_utf8(rest[..end].to_vec())
            .map(|s| s.trim_end_matches('\r').to_string())
            .map_err(|_| GeometryError::Binvox(format!("non-ASCII header line ({what})")))
    };

    let magic = next_line("magic")?;
    if magic.trim() != MAGIC {
        return Err(GeometryError::Binvox(format!(
            "bad magic line {magic:?}, expected {MAGIC:?}"
        )));
    }

    let mut dim = None;
    let mut translate = [0.0; 3];
    let mut scale = 1.0;
    loop {
        let line = next_line("header")?;
        let mut words = line.split_whitespace();
        match words.next() {
            Some("data") => break,
            Some("dim") => {
                let ds: Vec<usize> = words
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|e| GeometryError::Binvox(format!("bad dim line {line:?}: {e}")))?;
                if ds.len() != 3 || ds[0] != ds[1] || ds[1] != ds[2] || ds[0] == 0 {
                    return Err(GeometryError::Binvox(format!(
                        "only positive cubic grids are supported, got {line:?}"
                    )));
                }
                dim = Some(ds[0]);
            }
            Some("translate") => {
                let ts: Vec<f64> = words
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|e| GeometryError::Binvox(format!("bad translate line: {e}")))?;
                translate = ts.try_into().map_err(|_| {
                    GeometryError::Binvox(format!("translate needs 3 values: {line:?}"))
                })?;
            }
            Some("scale") => {
                scale = words
                    .next()
                    .ok_or_else(|| GeometryError::Binvox("scale line without value".into()))?
                    .parse()
                    .map_err(|e| GeometryError::Binvox(format!("bad scale: {e}")))?;
            }
            _ => return Err(GeometryError::Binvox(format!("unexpected header line {line:?}"))),
        }
    }
    let dim = dim.ok_or_else(|| GeometryError::Binvox("missing dim line".into()))?;

    let payload = &bytes[pos..];
    if payload.len() % 2 != 0 {
        return Err(GeometryError::Binvox(
            "truncated stream: odd number of run-length bytes".into(),
        ));
    }
    let runs: Vec<(u8, u8)> = payload.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    let total: usize = runs.iter().map(|r| r.1 as usize).sum();
    let expected = dim * dim * dim;
    if total != expected {
        return Err(GeometryError::Binvox(format!(
            "run lengths sum to {total}, expected {expected} voxels"
        )));
    }
    VoxelGrid::from_occupancy(dim, rle_decode(&runs), translate, scale)
}
