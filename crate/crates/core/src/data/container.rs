//! On-disk trajectory container.
//!
//! ```text
//! {json header}\n
//! f32 LE snapshots  [sim][step][channel][row][col]   (n_steps + 1 steps)
//! f32 LE masks      [sim][row][col]                  (only if has_mask)
//! f64 LE parameters [sim][param]
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{Split, Trajectory, TrajectoryDataset};
use crate::error::{CoreError, Result};

const FORMAT: &str = "aevit-trajectories";
const VERSION: u32 = 1;
const MAX_HEADER: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    n_sims: usize,
    n_steps: usize,
    channels: usize,
    height: usize,
    width: usize,
    dt: f64,
    param_names: Vec<String>,
    dtype: String,
    endianness: String,
    has_mask: bool,
    split: Split,
}

pub fn write_dataset(ds: &TrajectoryDataset, path: &Path) -> Result<()> {
    ds.validate()?;
    let io = |e| CoreError::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write_to(ds, &mut w).map_err(io)?;
    w.flush().map_err(io)
}

fn write_to(ds: &TrajectoryDataset, w: &mut impl Write) -> std::io::Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        n_sims: ds.len(),
        n_steps: ds.n_steps,
        channels: ds.channels,
        height: ds.height,
        width: ds.width,
        dt: ds.dt,
        param_names: ds.param_names.clone(),
        dtype: "f32".into(),
        endianness: "little".into(),
        has_mask: ds.has_mask(),
        split: ds.split,
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    for sim in &ds.sims {
        write_f32s(w, &sim.snapshots)?;
    }
    for sim in &ds.sims {
        if let Some(m) = &sim.mask {
            write_f32s(w, m)?;
        }
    }
    for sim in &ds.sims {
        for p in &sim.params {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    Ok(())
}

fn write_f32s(w: &mut impl Write, xs: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

/// Reader that tracks the byte offset for error messages.
struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        let mut filled = 0;
        while filled < n {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(format_err(
                        self.offset + filled as u64,
                        format!("payload ends inside {what}: expected {n} bytes, found {filled}"),
                    ))
                }
                Ok(k) => filled += k,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(format_err(self.offset + filled as u64, e.to_string())),
            }
        }
        self.offset += n as u64;
        Ok(buf)
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.bytes(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

fn format_err(offset: u64, detail: String) -> CoreError {
    CoreError::Format {
        what: "dataset",
        offset,
        detail,
    }
}

/// Read and validate a container written by [`write_dataset`] or by an
/// external tool following the same layout.
pub fn load_dataset(path: &Path) -> Result<TrajectoryDataset> {
    let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
    read_from(BufReader::new(file))
}

pub fn read_from(mut r: impl BufRead) -> Result<TrajectoryDataset> {
    let mut line = Vec::new();
    (&mut r)
        .take(MAX_HEADER)
        .read_until(b'\n', &mut line)
        .map_err(|e| format_err(0, e.to_string()))?;
    if line.last() != Some(&b'\n') {
        return Err(format_err(line.len() as u64, "header is not newline-terminated".into()));
    }
    let header: Header = serde_json::from_slice(&line[..line.len() - 1])
        .map_err(|e| format_err(e.column().saturating_sub(1) as u64, format!("header: {e}")))?;
    check_header(&header)?;

    let mut cur = Cursor {
        inner: r,
        offset: line.len() as u64,
    };
    let snap_len = header.channels * header.height * header.width;
    let per_sim = (header.n_steps + 1) * snap_len;
    let mut sims = Vec::with_capacity(header.n_sims);
    for i in 0..header.n_sims {
        let snapshots = cur.f32s(per_sim, &format!("snapshots of simulation {i}"))?;
        sims.push(Trajectory {
            params: Vec::new(),
            snapshots,
            mask: None,
        });
    }
    if header.has_mask {
        let hw = header.height * header.width;
        for (i, sim) in sims.iter_mut().enumerate() {
            let start = cur.offset;
            let mask = cur.f32s(hw, &format!("mask of simulation {i}"))?;
            if let Some(j) = mask.iter().position(|&m| m != 0.0 && m != 1.0) {
                return Err(format_err(
                    start + 4 * j as u64,
                    format!("mask of simulation {i} holds {} (expected 0 or 1)", mask[j]),
                ));
            }
            sim.mask = Some(mask);
        }
        check_masked_cells(&sims, snap_len, hw, line.len() as u64)?;
    }
    let np = header.param_names.len();
    for (i, sim) in sims.iter_mut().enumerate() {
        let raw = cur.bytes(np * 8, &format!("parameters of simulation {i}"))?;
        sim.params = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
    }
    let mut probe = [0u8; 1];
    if cur.inner.read(&mut probe).map_err(|e| format_err(cur.offset, e.to_string()))? != 0 {
        return Err(format_err(cur.offset, "trailing bytes after parameter records".into()));
    }

    let ds = TrajectoryDataset {
        channels: header.channels,
        height: header.height,
        width: header.width,
        n_steps: header.n_steps,
        dt: header.dt,
        param_names: header.param_names,
        split: header.split,
        sims,
    };
    ds.validate()?;
    Ok(ds)
}

fn check_header(h: &Header) -> Result<()> {
    let bad = |detail: String| Err(format_err(0, detail));
    if h.format != FORMAT {
        return bad(format!("unknown format `{}`", h.format));
    }
    if h.version != VERSION {
        return bad(format!("unsupported version {}", h.version));
    }
    if h.dtype != "f32" || h.endianness != "little" {
        return bad(format!("unsupported payload {} / {}", h.dtype, h.endianness));
    }
    if h.channels == 0 || h.height == 0 || h.width == 0 {
        return bad("zero-sized snapshot".into());
    }
    if !(h.dt.is_finite() && h.dt > 0.0) {
        return bad(format!("dt must be positive, got {}", h.dt));
    }
    Ok(())
}

/// Cells outside the mask must be exactly zero in every channel.
fn check_masked_cells(sims: &[Trajectory], snap_len: usize, hw: usize, base: u64) -> Result<()> {
    let mut offset = base;
    for (i, sim) in sims.iter().enumerate() {
        let mask = sim.mask.as_ref().unwrap();
        for (k, &v) in sim.snapshots.iter().enumerate() {
            if v != 0.0 && mask[(k % snap_len) % hw] == 0.0 {
                return Err(format_err(
                    offset + 4 * k as u64,
                    format!("simulation {i} has a nonzero value outside its mask"),
                ));
            }
        }
        offset += 4 * sim.snapshots.len() as u64;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(mask: bool) -> TrajectoryDataset {
        let m = vec![1.0, 0.0, 1.0, 1.0];
        TrajectoryDataset {
            channels: 2,
            height: 2,
            width: 2,
            n_steps: 1,
            dt: 0.5,
            param_names: vec!["a".into(), "b".into()],
            split: Split::Valid,
            sims: (0..3)
                .map(|s| Trajectory {
                    params: vec![s as f64 * 0.1, -1.5],
                    snapshots: (0..16)
                        .map(|i| if mask && i % 4 == 1 { 0.0 } else { (s * 16 + i) as f32 * 0.25 })
                        .collect(),
                    mask: mask.then(|| m.clone()),
                })
                .collect(),
        }
    }

    fn bytes_of(ds: &TrajectoryDataset) -> Vec<u8> {
        let mut out = Vec::new();
        write_to(ds, &mut out).unwrap();
        out
    }

    #[test]
    fn round_trip_is_exact() {
        for mask in [false, true] {
            let ds = sample(mask);
            let back = read_from(&bytes_of(&ds)[..]).unwrap();
            assert_eq!(back, ds);
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = bytes_of(&sample(false));
        let cut = &bytes[..bytes.len() - 3];
        match read_from(cut).unwrap_err() {
            CoreError::Format { offset, detail, .. } => {
                assert!(offset > 0 && offset <= cut.len() as u64, "{offset}");
                assert!(detail.contains("parameters of simulation 2"), "{detail}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = bytes_of(&sample(false));
        let n = bytes.len() as u64;
        bytes.push(0);
        match read_from(&bytes[..]).unwrap_err() {
            CoreError::Format { offset, .. } => assert_eq!(offset, n),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn value_outside_mask_rejected() {
        let mut ds = sample(true);
        ds.sims[1].snapshots[5] = 2.0;
        let bytes = bytes_of(&ds);
        let header_len = bytes.iter().position(|&b| b == b'\n').unwrap() as u64 + 1;
        match read_from(&bytes[..]).unwrap_err() {
            CoreError::Format { offset, .. } => assert_eq!(offset, header_len + 4 * (16 + 5)),
            e => panic!("unexpected {e}"),
        }
    }
}
