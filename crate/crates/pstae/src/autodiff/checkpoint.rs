//! Weight checkpoint file.
//!
//! Layout: magic bytes `PSTW`, format version `u32`, then one record per
//! tensor: name length (`u32`), UTF-8 name, rank (`u64`), dims (`u64` each),
//! values (`f32` each). All integers and floats little-endian. Records appear
//! in parameter insertion order and are read until EOF.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AutodiffError, ParamSet, Result, Tensor};

pub const PSTW_MAGIC: &[u8; 4] = b"PSTW";
pub const PSTW_VERSION: u32 = 1;

pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PSTW_MAGIC)?;
    w.write_all(&PSTW_VERSION.to_le_bytes())?;
    for p in params.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(p.value.shape().len() as u64).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in p.value.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint; every parameter comes back unfrozen.
pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != PSTW_MAGIC {
        return Err(AutodiffError::BadCheckpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != PSTW_VERSION {
        return Err(AutodiffError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let mut params = ParamSet::new();
    loop {
        let name_len = match read_u32(&mut r) {
            Ok(v) => v as usize,
            Err(AutodiffError::Io(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e),
        };
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| AutodiffError::BadCheckpoint(format!("non-UTF-8 name: {e}")))?;
        let rank = read_u64(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 4];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        params.insert(&name, Tensor::new(shape, data)?, false)?;
    }
    Ok(params)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_names_shapes_and_f32_values() {
        let mut ps = ParamSet::new();
        ps.insert("layer.w", Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 1.5, -2.5, 3.5]).unwrap(), false)
            .unwrap();
        ps.insert("layer.b", Tensor::new(vec![3], vec![0.25, 0.5, -0.75]).unwrap(), false).unwrap();

        let dir = std::env::temp_dir().join(format!("pstw-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("w.pstw");
        save_checkpoint(&ps, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        std::fs::remove_dir_all(&dir).ok();

        assert_eq!(loaded.len(), 2);
        let names: Vec<&str> = loaded.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["layer.w", "layer.b"]);
        let w = loaded.get("layer.w").unwrap();
        assert_eq!(w.value.shape(), &[2, 3]);
        for (a, b) in w.value.data().iter().zip(ps.get("layer.w").unwrap().value.data()) {
            assert!((a - b).abs() < 1e-6); // stored as f32
        }
    }

    #[test]
    fn magic_bytes_lead_the_file() {
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::zeros(vec![1]), false).unwrap();
        let dir = std::env::temp_dir().join(format!("pstw-magic-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.pstw");
        save_checkpoint(&ps, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::remove_dir_all(&dir).ok();
        assert_eq!(&bytes[0..4], b"PSTW");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }
}
