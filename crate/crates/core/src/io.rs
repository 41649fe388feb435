//! Snapshot files, metadata sidecars and CSV tables.
//!
//! Snapshot text format: a header line `width height n_shots`, then one line
//! per shot holding `width·height` characters `0`/`1` in row-major order.
//! Metadata lives next to it in `<file>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::snapshot::{Snapshot, SnapshotMeta, SnapshotSet};

pub fn format_snapshots(set: &SnapshotSet) -> String {
    let cells = set.width() * set.height();
    let mut out = String::with_capacity(32 + set.len() * (cells + 1));
    out.push_str(&format!("{} {} {}\n", set.width(), set.height(), set.len()));
    for shot in set.shots() {
        out.extend(shot.cells().iter().map(|&c| if c == 1 { '1' } else { '0' }));
        out.push('\n');
    }
    out
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

/// Parse the text format; errors carry the byte offset of the problem.
pub fn parse_snapshots(text: &str, meta: SnapshotMeta) -> Result<SnapshotSet> {
    let header_end = text.find('\n').unwrap_or(text.len());
    let header = &text[..header_end];
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(parse_err(0, "header must be `width height n_shots`"));
    }
    let mut nums = [0usize; 3];
    for (k, f) in fields.iter().enumerate() {
        let offset = f.as_ptr() as usize - text.as_ptr() as usize;
        nums[k] = f
            .parse()
            .map_err(|_| parse_err(offset, format!("`{f}` is not a non-negative integer")))?;
    }
    let [w, h, n] = nums;
    if w == 0 || h == 0 {
        return Err(parse_err(0, "dimensions must be positive"));
    }
    let cells = w * h;
    let mut shots = Vec::with_capacity(n);
    let mut pos = (header_end + 1).min(text.len());
    let bytes = text.as_bytes();
    for k in 0..n {
        if pos >= bytes.len() {
            return Err(parse_err(pos, format!("expected {n} shots, found {k}")));
        }
        let end = text[pos..].find('\n').map_or(bytes.len(), |e| pos + e);
        let line = text[pos..end].strip_suffix('\r').unwrap_or(&text[pos..end]);
        let mut values = Vec::with_capacity(cells);
        for (j, b) in line.bytes().enumerate() {
            match b {
                b'0' => values.push(0),
                b'1' => values.push(1),
                _ => {
                    return Err(parse_err(pos + j, format!("unexpected byte {:?} in shot {k}", b as char)));
                }
            }
        }
        if values.len() != cells {
            return Err(parse_err(
                pos,
                format!("shot {k} has {} cells, expected {cells}", values.len()),
            ));
        }
        shots.push(Snapshot::new(w, h, values)?);
        pos = end + 1;
    }
    if pos < bytes.len() && !text[pos..].trim().is_empty() {
        let skip = text[pos..].len() - text[pos..].trim_start().len();
        return Err(parse_err(pos + skip, "trailing data after the declared shots"));
    }
    SnapshotSet::new(w, h, shots, meta)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".json");
    path.with_file_name(name)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable value");
    s.push('\n');
    s
}

pub fn write_snapshot_set(path: &Path, set: &SnapshotSet) -> Result<()> {
    write_text(path, &format_snapshots(set))?;
    write_text(&sidecar_path(path), &to_json(&set.meta))
}

/// Read a snapshot file and, when present, its sidecar.
pub fn read_snapshot_set(path: &Path) -> Result<SnapshotSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let meta = if side.exists() {
        let raw = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::Parse {
            offset: byte_offset(&raw, e.line(), e.column()),
            message: format!("{}: {e}", side.display()),
        })?
    } else {
        SnapshotMeta::new()
    };
    parse_snapshots(&text, meta).map_err(|e| match e {
        Error::Parse { offset, message } => Error::Parse {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    start + column.saturating_sub(1)
}

/// Serialise rows with a header taken from the row type.
pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::invalid(format!("csv serialisation failed: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::invalid(format!("csv serialisation failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_text(path, &csv_string(rows)?)
}
