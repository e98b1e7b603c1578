//! `traj.bin` reader/writer and a CSV debug dump.
//!
//! Layout (little endian): `b"DTRJ1"`, `u32` record count, then per record a
//! `u32` start frame, `u8` scale, 16 points as 32 `f32` and 426 `f32` values.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Trajectory, DESCRIPTOR_DIMS};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"DTRJ1";
pub const POINTS_PER_RECORD: usize = 16;
pub const RECORD_BYTES: usize = 4 + 1 + 4 * (2 * POINTS_PER_RECORD + DESCRIPTOR_DIMS);

pub fn write_trajectories<W: Write>(out: &mut W, trajs: &[Trajectory]) -> Result<()> {
    let io = |e| Error::io("<traj stream>", e);
    out.write_all(MAGIC).map_err(io)?;
    let count = u32::try_from(trajs.len())
        .map_err(|_| Error::Range("too many trajectories for one file".into()))?;
    out.write_all(&count.to_le_bytes()).map_err(io)?;
    let mut buf = Vec::with_capacity(RECORD_BYTES);
    for t in trajs {
        if t.points.len() != POINTS_PER_RECORD || t.descriptor.len() != DESCRIPTOR_DIMS {
            return Err(Error::Shape(format!(
                "record needs {POINTS_PER_RECORD} points and {DESCRIPTOR_DIMS} values, got {} and {}",
                t.points.len(),
                t.descriptor.len()
            )));
        }
        buf.clear();
        buf.extend_from_slice(&t.start_frame.to_le_bytes());
        buf.push(t.scale);
        for p in &t.points {
            buf.extend_from_slice(&p[0].to_le_bytes());
            buf.extend_from_slice(&p[1].to_le_bytes());
        }
        for v in &t.descriptor {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

/// Reads a whole stream; `name` only labels diagnostics.
pub fn read_trajectories<R: Read>(input: &mut R, name: &str) -> Result<Vec<Trajectory>> {
    let fmt = |offset: u64, msg: &str| Error::Format {
        path: name.to_string(),
        offset,
        msg: msg.to_string(),
    };
    let mut head = [0u8; 9];
    read_full(input, &mut head).map_err(|_| fmt(0, "truncated header"))?;
    if &head[..5] != MAGIC {
        return Err(fmt(0, "bad magic, expected DTRJ1"));
    }
    let count = u32::from_le_bytes(head[5..9].try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    let mut rec = vec![0u8; RECORD_BYTES];
    let f32_at = |b: &[u8], i: usize| f32::from_le_bytes(b[i..i + 4].try_into().unwrap());
    for k in 0..count {
        let offset = (9 + k * RECORD_BYTES) as u64;
        read_full(input, &mut rec)
            .map_err(|_| fmt(offset, &format!("truncated record {k} of {count}")))?;
        let start_frame = u32::from_le_bytes(rec[0..4].try_into().unwrap());
        let scale = rec[4];
        let points: Vec<[f32; 2]> = (0..POINTS_PER_RECORD)
            .map(|i| [f32_at(&rec, 5 + 8 * i), f32_at(&rec, 9 + 8 * i)])
            .collect();
        let base = 5 + 8 * POINTS_PER_RECORD;
        let descriptor: Vec<f32> = (0..DESCRIPTOR_DIMS)
            .map(|i| f32_at(&rec, base + 4 * i))
            .collect();
        if points
            .iter()
            .flatten()
            .chain(&descriptor)
            .any(|v| !v.is_finite())
        {
            return Err(fmt(offset, "non-finite value in record"));
        }
        out.push(Trajectory {
            start_frame,
            scale,
            points,
            descriptor,
        });
    }
    let mut extra = [0u8; 1];
    if input.read(&mut extra).map_err(|e| Error::io(name, e))? != 0 {
        return Err(fmt(
            (9 + count * RECORD_BYTES) as u64,
            "trailing bytes after last record",
        ));
    }
    Ok(out)
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<()> {
    r.read_exact(buf)
}

pub fn save_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_trajectories(&mut w, trajs)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trajectories(&mut BufReader::new(f), &path.display().to_string())
}

/// One row per trajectory: frame, scale, points, descriptor.
pub fn write_csv<W: Write>(out: &mut W, trajs: &[Trajectory]) -> Result<()> {
    let io = |e| Error::io("<csv stream>", e);
    let mut header = vec!["start_frame".to_string(), "scale".to_string()];
    let n_points = trajs.first().map_or(POINTS_PER_RECORD, |t| t.points.len());
    for i in 0..n_points {
        header.push(format!("x{i}"));
        header.push(format!("y{i}"));
    }
    let dims = trajs
        .first()
        .map_or(DESCRIPTOR_DIMS, |t| t.descriptor.len());
    header.extend((0..dims).map(|i| format!("d{i}")));
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for t in trajs {
        let mut row = vec![t.start_frame.to_string(), t.scale.to_string()];
        row.extend(
            t.points
                .iter()
                .flat_map(|p| [p[0].to_string(), p[1].to_string()]),
        );
        row.extend(t.descriptor.iter().map(|v| v.to_string()));
        writeln!(out, "{}", row.join(",")).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize) -> Vec<Trajectory> {
        (0..n)
            .map(|k| Trajectory {
                start_frame: 3 * k as u32,
                scale: (k % 8) as u8,
                points: (0..16)
                    .map(|i| [i as f32 * 0.5 + k as f32, 1.25 * i as f32])
                    .collect(),
                descriptor: (0..DESCRIPTOR_DIMS)
                    .map(|i| ((i * 31 + k) % 97) as f32 / 97.0)
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn roundtrip_is_exact() {
        let trajs = sample(7);
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &trajs).unwrap();
        assert_eq!(buf.len(), 9 + 7 * RECORD_BYTES);
        let back = read_trajectories(&mut buf.as_slice(), "mem").unwrap();
        assert_eq!(back, trajs);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &sample(1)).unwrap();
        buf[0] = b'X';
        match read_trajectories(&mut buf.as_slice(), "t.bin") {
            Err(Error::Format { path, offset, .. }) => {
                assert_eq!(path, "t.bin");
                assert_eq!(offset, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation_reports_record_offset() {
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &sample(3)).unwrap();
        buf.truncate(9 + 2 * RECORD_BYTES + 10);
        match read_trajectories(&mut buf.as_slice(), "t.bin") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, (9 + 2 * RECORD_BYTES) as u64),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &sample(2)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), 2 + 32 + DESCRIPTOR_DIMS);
    }
}
