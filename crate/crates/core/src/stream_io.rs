//! Versioned binary persistence for [`EventStream`].
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic   8 bytes  "AMMEVST\x01"
//! version u32      1
//! params_fingerprint u64
//! master_seed        u64
//! n_pools            u32
//! b_paths            u64
//! per path:
//!   n_events  u32
//!   types     n_events * u16
//!   x_to_y    n_events * u8 (0 or 1)
//!   n_normals u64
//!   normals   n_normals * f64 (IEEE 754 bits)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::market::{EventStream, PathEvents};

const MAGIC: &[u8; 8] = b"AMMEVST\x01";
const VERSION: u32 = 1;

/// Writes the stream in the documented binary layout.
pub fn write_stream<W: Write>(stream: &EventStream, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&stream.params_fingerprint().to_le_bytes())?;
    w.write_all(&stream.master_seed().to_le_bytes())?;
    w.write_all(&(stream.n_pools() as u32).to_le_bytes())?;
    w.write_all(&(stream.b_paths() as u64).to_le_bytes())?;
    for path in stream.paths() {
        let n_events = path.types.len() as u32;
        w.write_all(&n_events.to_le_bytes())?;
        for t in &path.types {
            w.write_all(&t.to_le_bytes())?;
        }
        for &d in &path.x_to_y {
            w.write_all(&[d as u8])?;
        }
        w.write_all(&(path.normals.len() as u64).to_le_bytes())?;
        for z in &path.normals {
            w.write_all(&z.to_bits().to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a stream previously written by [`write_stream`].
pub fn read_stream<R: Read>(mut r: R) -> Result<EventStream> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::StreamFormat("bad magic, not an event-stream file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::StreamFormat(format!(
            "unsupported stream version {version}, expected {VERSION}"
        )));
    }
    let params_fingerprint = read_u64(&mut r)?;
    let master_seed = read_u64(&mut r)?;
    let n_pools = read_u32(&mut r)? as usize;
    if n_pools == 0 {
        return Err(Error::StreamFormat("stream declares zero pools".into()));
    }
    let b_paths = read_u64(&mut r)? as usize;
    let mut paths = Vec::with_capacity(b_paths);
    for _ in 0..b_paths {
        let n_events = read_u32(&mut r)? as usize;
        let mut types = Vec::with_capacity(n_events);
        for _ in 0..n_events {
            let mut b = [0u8; 2];
            r.read_exact(&mut b)?;
            let t = u16::from_le_bytes(b);
            if t as usize > n_pools {
                return Err(Error::StreamFormat(format!(
                    "event type {t} out of range for {n_pools} pools"
                )));
            }
            types.push(t);
        }
        let mut x_to_y = Vec::with_capacity(n_events);
        for _ in 0..n_events {
            let mut b = [0u8; 1];
            r.read_exact(&mut b)?;
            match b[0] {
                0 => x_to_y.push(false),
                1 => x_to_y.push(true),
                v => {
                    return Err(Error::StreamFormat(format!(
                        "direction flag must be 0 or 1, got {v}"
                    )))
                }
            }
        }
        let n_normals = read_u64(&mut r)? as usize;
        let expected: usize = types
            .iter()
            .map(|&t| if t == 0 { n_pools } else { 1 })
            .sum();
        if n_normals != expected {
            return Err(Error::StreamFormat(format!(
                "normal count {n_normals} does not match event types (expected {expected})"
            )));
        }
        let mut normals = Vec::with_capacity(n_normals);
        for _ in 0..n_normals {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            normals.push(f64::from_bits(u64::from_le_bytes(b)));
        }
        paths.push(PathEvents {
            types,
            x_to_y,
            normals,
        });
    }
    Ok(EventStream::from_parts(
        n_pools,
        master_seed,
        params_fingerprint,
        paths,
    ))
}

/// Saves a stream to a file.
pub fn save_stream(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_stream(stream, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Loads a stream from a file.
pub fn load_stream(path: impl AsRef<Path>) -> Result<EventStream> {
    read_stream(BufReader::new(File::open(path)?))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{draw_event_stream, MarketParams};

    fn sample_stream() -> EventStream {
        let params = MarketParams {
            b_paths: 5,
            t_horizon: 3.0,
            ..MarketParams::reference(99)
        };
        draw_event_stream(&params).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let stream = sample_stream();
        let mut buf = Vec::new();
        write_stream(&stream, &mut buf).unwrap();
        let loaded = read_stream(buf.as_slice()).unwrap();
        assert_eq!(stream, loaded);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let stream = sample_stream();
        let mut buf = Vec::new();
        write_stream(&stream, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_stream(bad.as_slice()), Err(Error::StreamFormat(_))));

        let mut bad = buf.clone();
        bad[8] = 9; // version
        assert!(matches!(read_stream(bad.as_slice()), Err(Error::StreamFormat(_))));
    }

    #[test]
    fn rejects_truncation() {
        let stream = sample_stream();
        let mut buf = Vec::new();
        write_stream(&stream, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_stream(buf.as_slice()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let stream = sample_stream();
        let dir = std::env::temp_dir().join("ammlab_stream_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("stream.bin");
        save_stream(&stream, &path).unwrap();
        let loaded = load_stream(&path).unwrap();
        assert_eq!(stream, loaded);
        std::fs::remove_file(&path).ok();
    }
}
