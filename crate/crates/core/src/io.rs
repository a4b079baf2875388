//! Binary tensor-archive format used for encoder artifacts and checkpoints.
//!
//! Layout (all little-endian):
//!   magic "IDSA", u32 format version, u32 json header length, header bytes,
//!   u32 section count, then per section: name, tensor count, and per tensor
//!   name, ndim, dims, raw f64 data.
//!
//! The header is free-form JSON supplied by the caller (config echo, hashes,
//! seeds). Round-trips are bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::IxDyn;
use sha2::{Digest, Sha256};

use crate::{Arr, CoreError};

const MAGIC: &[u8; 4] = b"IDSA";

pub struct Archive {
    pub version: u32,
    pub header: String,
    pub sections: BTreeMap<String, Vec<(String, Arr)>>,
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> Result<String, CoreError> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    if len > 1 << 24 {
        return Err(CoreError::Format(format!("unreasonable string length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| CoreError::Format(e.to_string()))
}

pub fn write_archive(
    path: &Path,
    version: u32,
    header: &str,
    sections: &[(&str, Vec<(String, Arr)>)],
) -> Result<(), CoreError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(version)?;
    write_str(&mut w, header)?;
    w.write_u32::<LittleEndian>(sections.len() as u32)?;
    for (name, tensors) in sections {
        write_str(&mut w, name)?;
        w.write_u32::<LittleEndian>(tensors.len() as u32)?;
        for (tname, t) in tensors {
            write_str(&mut w, tname)?;
            w.write_u8(t.ndim() as u8)?;
            for d in t.shape() {
                w.write_u64::<LittleEndian>(*d as u64)?;
            }
            for x in t.iter() {
                w.write_f64::<LittleEndian>(*x)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<Archive, CoreError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CoreError::Format("not a tensor archive".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    let header = read_str(&mut r)?;
    let n_sections = r.read_u32::<LittleEndian>()? as usize;
    let mut sections = BTreeMap::new();
    for _ in 0..n_sections {
        let sname = read_str(&mut r)?;
        let n_tensors = r.read_u32::<LittleEndian>()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let tname = read_str(&mut r)?;
            let ndim = r.read_u8()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.read_u64::<LittleEndian>()? as usize);
            }
            let n: usize = dims.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.read_f64::<LittleEndian>()?);
            }
            let arr = Arr::from_shape_vec(IxDyn(&dims), data)
                .map_err(|e| CoreError::Format(e.to_string()))?;
            tensors.push((tname, arr));
        }
        sections.insert(sname, tensors);
    }
    Ok(Archive { version, header, sections })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, CoreError> {
    let mut f = BufReader::new(File::open(path)?);
    let mut h = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn archive_round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("idsprite_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.idsa");
        let mut r = rng::stream(9, "io", &[]);
        let t1 = rng::normal(&mut r, &[3, 4]);
        let t2 = rng::normal(&mut r, &[2, 2, 2]);
        write_archive(
            &path,
            3,
            r#"{"kind":"test"}"#,
            &[("weights", vec![("t1".into(), t1.clone()), ("t2".into(), t2.clone())])],
        )
        .unwrap();
        let a = read_archive(&path).unwrap();
        assert_eq!(a.version, 3);
        assert_eq!(a.header, r#"{"kind":"test"}"#);
        let ws = &a.sections["weights"];
        assert_eq!(ws[0].1, t1);
        assert_eq!(ws[1].1, t2);
        // identical content writes identical bytes
        let path2 = dir.join("b.idsa");
        write_archive(
            &path2,
            3,
            r#"{"kind":"test"}"#,
            &[("weights", vec![("t1".into(), t1), ("t2".into(), t2)])],
        )
        .unwrap();
        assert_eq!(sha256_file(&path).unwrap(), sha256_file(&path2).unwrap());
    }

    #[test]
    fn rejects_non_archive() {
        let dir = std::env::temp_dir().join("idsprite_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk.bin");
        std::fs::write(&path, b"not an archive").unwrap();
        assert!(read_archive(&path).is_err());
    }
}
