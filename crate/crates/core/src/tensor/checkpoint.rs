//! Binary parameter checkpoints.
//!
//! Layout: the ASCII magic `SWTA1`, then for every tensor until end of
//! file: name length (`u32` LE), UTF-8 name bytes, rank (`u32` LE), each
//! dimension (`u32` LE), and the values as little-endian `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"SWTA1";

pub fn write_checkpoint<W: Write>(mut w: W, entries: &[(String, Tensor<f32>)]) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let corrupt = |e: std::io::Error| Error::ingestion(format!("truncated checkpoint: {e}"));
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(corrupt)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::ingestion(format!(
            "unknown checkpoint magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut entries = Vec::new();
    loop {
        let name_len = match read_u32(&mut r) {
            Ok(n) => n as usize,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(corrupt(e)),
        };
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(corrupt)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::ingestion("checkpoint tensor name is not UTF-8"))?;
        let rank = read_u32(&mut r).map_err(corrupt)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r).map_err(corrupt)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(corrupt)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(entries)
}

pub fn save_checkpoint(path: &Path, entries: &[(String, Tensor<f32>)]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(f), entries).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}
