use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    atomic_write_with(path, |f| Ok(f.write_all(bytes)?))
}

/// Like [`atomic_write`], with the content produced by `fill`. On error the
/// temp file is removed and `path` is left untouched.
pub fn atomic_write_with<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    let written = (|| {
        let mut f = BufWriter::new(File::create(&tmp)?);
        fill(&mut f)?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        Ok(())
    })();
    if let Err(e) = written {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Little-endian reader that reports truncation and bad fields as format
/// errors naming the file.
pub struct Reader<R> {
    inner: R,
    path: String,
    offset: u64,
}

impl Reader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::MissingArtifact { path: path.to_path_buf(), hint: "file does not exist".into() }
            }
            _ => Error::Io(e),
        })?;
        Ok(Self::new(BufReader::new(f), path.display().to_string()))
    }
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R, path: String) -> Self {
        Self { inner, path, offset: 0 }
    }

    pub fn format_err(&self, expected: impl Into<String>, found: impl Into<String>) -> Error {
        Error::Format {
            path: format!("{} (offset {})", self.path, self.offset),
            expected: expected.into(),
            found: found.into(),
        }
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    pub fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..])? {
                0 => return Err(self.format_err(format!("{} more bytes", buf.len() - read), "end of file (truncated)")),
                n => read += n,
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let mut got = [0u8; 4];
        self.fill(&mut got)?;
        if &got != magic {
            return Err(self.format_err(
                format!("magic {:?}", String::from_utf8_lossy(magic)),
                format!("{:?}", String::from_utf8_lossy(&got)),
            ));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.fill(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn string16(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        let b = self.bytes(n)?;
        String::from_utf8(b).map_err(|_| self.format_err("utf-8 string", "invalid bytes"))
    }

    pub fn string32(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        if n > 1 << 24 {
            return Err(self.format_err("string under 16 MiB", format!("{n} bytes")));
        }
        let b = self.bytes(n)?;
        String::from_utf8(b).map_err(|_| self.format_err("utf-8 string", "invalid bytes"))
    }

    pub fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(self.format_err("end of file", "trailing bytes")),
        }
    }
}
