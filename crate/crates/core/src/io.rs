//! Trajectory persistence.
//!
//! Binary layout (all little-endian):
//!
//! | bytes | field                      |
//! |-------|----------------------------|
//! | 0..4  | magic `EFDY`               |
//! | 4..8  | format version (`u32`)     |
//! | 8..12 | dimension (`u32`)          |
//! | 12..20| time step (`f64`)          |
//! | 20..28| frame count (`u64`)        |
//! | 28    | kind tag (`u8`)            |
//!
//! followed by `count * dim` `f64` values, row-major. Metadata that does not
//! fit the header (potential, temperature, seed, offset) goes to a JSON
//! sidecar next to the file, `<name>.meta.json`.
//!
//! The CSV form has a header row `t,x1,..,xd`, writes `t = k * dt` and uses
//! the shortest representation that parses back to the same `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trajectory::{TrajKind, TrajMeta, Trajectory};

pub const MAGIC: [u8; 4] = *b"EFDY";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 29;

/// Path of the metadata sidecar belonging to `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn encode_header(traj: &Trajectory) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(&MAGIC);
    h[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    h[8..12].copy_from_slice(&(traj.dim() as u32).to_le_bytes());
    h[12..20].copy_from_slice(&traj.dt.to_le_bytes());
    h[20..28].copy_from_slice(&(traj.len() as u64).to_le_bytes());
    h[28] = traj.kind.tag();
    h
}

/// Serialize to the binary format in memory.
pub fn encode_trajectory(traj: &Trajectory) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * traj.as_flat().len());
    out.extend_from_slice(&encode_header(traj));
    for v in traj.as_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse the binary format. Metadata is left at its default.
pub fn decode_trajectory(bytes: &[u8]) -> Result<Trajectory> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt {
            offset: bytes.len() as u64,
            message: format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        });
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::Format(format!("bad magic bytes {:?}", &bytes[0..4])));
    }
    let u32_at = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let dim = u32_at(8) as usize;
    if dim == 0 {
        return Err(Error::Format("dimension is zero".into()));
    }
    let dt = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Format(format!("time step {dt} is not positive")));
    }
    let count = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let kind = TrajKind::from_tag(bytes[28]).ok_or_else(|| Error::Format(format!("unknown kind tag {}", bytes[28])))?;

    let n_values = (count as u128) * (dim as u128);
    let expected = HEADER_LEN as u128 + 8 * n_values;
    let payload = &bytes[HEADER_LEN..];
    if (bytes.len() as u128) < expected {
        // first byte of the first incomplete value
        let complete = payload.len() / 8;
        return Err(Error::Corrupt {
            offset: (HEADER_LEN + 8 * complete) as u64,
            message: format!("payload truncated: expected {expected} bytes, found {}", bytes.len()),
        });
    }
    if (bytes.len() as u128) > expected {
        return Err(Error::Corrupt {
            offset: expected as u64,
            message: format!("{} trailing bytes after payload", bytes.len() as u128 - expected),
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Trajectory::new(data, dim, dt, kind)
}

fn write_sidecar(path: &Path, meta: &TrajMeta) -> Result<()> {
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(meta)?;
    std::fs::write(&side, text).map_err(|e| Error::io(side, e))
}

fn read_sidecar(path: &Path) -> Result<TrajMeta> {
    let side = sidecar_path(path);
    match std::fs::read_to_string(&side) {
        Ok(text) => Ok(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(TrajMeta::default()),
        Err(e) => Err(Error::io(side, e)),
    }
}

/// Write the binary file and its metadata sidecar.
pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(&encode_header(traj)).map_err(io)?;
    for v in traj.as_flat() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)?;
    write_sidecar(path, &traj.meta)
}

/// Read a binary file, attaching sidecar metadata when present.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    Ok(decode_trajectory(&bytes)?.with_meta(read_sidecar(path)?))
}

/// Write `t,x1,..,xd` rows.
pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=traj.dim()).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(traj.dim() + 1);
    for (k, row) in traj.rows().enumerate() {
        record.clear();
        record.push((k as f64 * traj.dt).to_string());
        record.extend(row.iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    write_sidecar(path, &traj.meta)
}

/// Read a CSV written by [`write_trajectory_csv`]. The time step is the
/// second time stamp, or `dt_hint` for single-frame files.
pub fn read_trajectory_csv(path: &Path, kind: TrajKind, dt_hint: Option<f64>) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path)?;
    let dim = r
        .headers()?
        .len()
        .checked_sub(1)
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::Format(format!("{}: header must be t,x1,..,xd", path.display())))?;
    let mut data = Vec::new();
    let mut times = Vec::with_capacity(2);
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("{}: row {}: {e}", path.display(), line + 1)))
        };
        if times.len() < 2 {
            times.push(parse(&record[0])?);
        }
        for k in 1..=dim {
            data.push(parse(&record[k])?);
        }
    }
    let dt = match times.as_slice() {
        [t0, t1] => t1 - t0,
        _ => dt_hint.ok_or_else(|| Error::Format(format!("{}: cannot infer the time step", path.display())))?,
    };
    Ok(Trajectory::new(data, dim, dt, kind)?.with_meta(read_sidecar(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        Trajectory::from_rows(
            &[vec![0.1, -2.5], vec![1.0 / 3.0, 1e-300], vec![f64::MAX, -0.0]],
            1e-3,
            TrajKind::Langevin,
        )
        .unwrap()
        .with_meta(TrajMeta {
            potential: Some("double-well-2d".into()),
            seed: Some(9),
            ..TrajMeta::default()
        })
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.efdy");
        let t = sample();
        write_trajectory(&t, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), (HEADER_LEN + 8 * 6) as u64);
        let back = read_trajectory(&path).unwrap();
        assert!(t
            .as_flat()
            .iter()
            .zip(back.as_flat())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.dt.to_bits(), t.dt.to_bits());
        assert_eq!(back.kind, t.kind);
        assert_eq!(back.meta, t.meta);
    }

    #[test]
    fn zero_dimension_is_a_format_error() {
        let mut bytes = encode_trajectory(&sample());
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_trajectory(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_trajectory(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode_trajectory(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_trajectory(&sample());
        bytes[4] = 7;
        assert!(matches!(decode_trajectory(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_trajectory(&sample());
        match decode_trajectory(&bytes[..bytes.len() - 3]) {
            Err(Error::Corrupt { offset, .. }) => assert_eq!(offset, (HEADER_LEN + 8 * 5) as u64),
            other => panic!("expected corruption error, got {other:?}"),
        }
        assert!(matches!(decode_trajectory(&bytes[..10]), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = sample();
        write_trajectory_csv(&t, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,x1,x2\n"));
        let back = read_trajectory_csv(&path, TrajKind::Langevin, None).unwrap();
        assert_eq!(back.dim(), 2);
        assert!((back.dt - t.dt).abs() <= 1e-15);
        for (a, b) in t.as_flat().iter().zip(back.as_flat()) {
            assert!(a == b || (a - b).abs() <= 1e-15 * a.abs(), "{a} vs {b}");
        }
    }
}
