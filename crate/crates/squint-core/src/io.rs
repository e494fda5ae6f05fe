//! Shared binary container used by the dataset and model file formats.
//!
//! Both formats follow the same frame: 4 magic bytes, a little-endian u32
//! format version, a little-endian u32 JSON header length, the JSON header
//! itself, then a raw little-endian f64 payload whose size is fully
//! determined by the header. Readers reject wrong magic, wrong version,
//! truncation, and trailing bytes.

use std::io::{ErrorKind, Read, Write};

use crate::{Error, Result};

pub(crate) fn write_frame_start<W: Write>(
    w: &mut W,
    magic: &[u8; 4],
    version: u32,
    header: &[u8],
) -> Result<()> {
    let len = u32::try_from(header.len())
        .map_err(|_| Error::Format("JSON header exceeds u32 length".into()))?;
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(header)?;
    Ok(())
}

/// Read and check magic + version, then return the raw JSON header bytes.
pub(crate) fn read_frame_start<R: Read>(
    r: &mut R,
    magic: &[u8; 4],
    version: u32,
    what: &str,
) -> Result<Vec<u8>> {
    let mut m = [0u8; 4];
    read_exact(r, &mut m, what)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "{what}: magic bytes {m:02x?} do not match {magic:02x?}"
        )));
    }
    let mut word = [0u8; 4];
    read_exact(r, &mut word, what)?;
    let got = u32::from_le_bytes(word);
    if got != version {
        return Err(Error::Format(format!(
            "{what}: format version {got} (this build reads version {version})"
        )));
    }
    read_exact(r, &mut word, what)?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header = vec![0u8; header_len];
    read_exact(r, &mut header, what)?;
    Ok(header)
}

/// `read_exact` that reports truncation as a format error instead of a bare
/// I/O error, so a short file is distinguishable from a broken disk.
pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::Format(format!("{what}: file truncated"))
        } else {
            Error::Io(e)
        }
    })
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, count: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    read_exact(r, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks_exact(8)")))
        .collect())
}

/// Fail if the reader still has bytes left.
pub(crate) fn expect_eof<R: Read>(r: &mut R, what: &str) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Format(format!("{what}: trailing bytes after payload"))),
    }
}
