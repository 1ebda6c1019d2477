//! Little-endian helpers shared by the `.bin` formats (`CBE1`, `CBP1`, `CBQ1`).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) const HEADER_LEN: usize = 12;

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(bytes) => Ok(bytes),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::MissingFile(path.to_path_buf()))
        }
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Parses `magic, u32, u32` and returns the two integers.
pub(crate) fn parse_header(path: &Path, bytes: &[u8], magic: &[u8; 4]) -> Result<(usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            path,
            format!("file is {} bytes, shorter than the {HEADER_LEN}-byte header", bytes.len()),
        ));
    }
    if &bytes[..4] != magic {
        return Err(Error::format(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let a = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let b = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    Ok((a, b))
}

pub(crate) fn decode_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub(crate) fn to_u32(path: &Path, what: &str, value: usize) -> Result<u32> {
    u32::try_from(value)
        .map_err(|_| Error::format(path, format!("{what} {value} does not fit in u32")))
}

pub(crate) struct LeWriter<W: Write> {
    inner: W,
}

impl<W: Write> LeWriter<W> {
    pub(crate) fn header(&mut self, magic: &[u8; 4], a: u32, b: u32) -> std::io::Result<()> {
        self.inner.write_all(magic)?;
        self.inner.write_all(&a.to_le_bytes())?;
        self.inner.write_all(&b.to_le_bytes())
    }

    pub(crate) fn f32s(&mut self, values: &[f32]) -> std::io::Result<()> {
        for v in values {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub(crate) fn finish(mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// Writes a file through `body`, mapping I/O failures onto the path.
pub(crate) fn write_file<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut LeWriter<BufWriter<fs::File>>) -> std::io::Result<()>,
{
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = LeWriter {
        inner: BufWriter::new(file),
    };
    body(&mut w).map_err(|e| Error::io(path, e))?;
    w.finish().map_err(|e| Error::io(path, e))
}
