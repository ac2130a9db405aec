//! Little-endian binary file helpers shared by the AFSW/AFSH/AFSL formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::{AfsError, Result};

pub struct Writer {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Writer {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|source| AfsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    fn io(&self, source: std::io::Error) -> AfsError {
        AfsError::Io {
            path: self.path.clone(),
            source,
        }
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.out.write_all(b).map_err(|e| self.io(e))
    }

    pub fn byte(&mut self, b: u8) -> Result<()> {
        self.bytes(&[b])
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64_slice(&mut self, vals: &[f64]) -> Result<()> {
        for v in vals {
            self.bytes(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| AfsError::Io {
            path: self.path.clone(),
            source: e,
        })
    }
}

pub struct Reader {
    path: PathBuf,
    input: BufReader<File>,
}

impl Reader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|source| AfsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            input: BufReader::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.input.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                AfsError::Truncated {
                    path: self.path.clone(),
                    what: what.to_string(),
                }
            } else {
                AfsError::Io {
                    path: self.path.clone(),
                    source: e,
                }
            }
        })
    }

    pub fn byte(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.exact(&mut b, what)?;
        Ok(b[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let mut raw = vec![0u8; n * 8];
        self.exact(&mut raw, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn expect_eof(&mut self, what: &str) -> Result<()> {
        let mut b = [0u8; 1];
        match self.input.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(AfsError::TrailingBytes {
                path: self.path.clone(),
                what: what.to_string(),
            }),
            Err(e) => Err(AfsError::Io {
                path: self.path.clone(),
                source: e,
            }),
        }
    }
}

pub fn expect_magic(r: &mut Reader, expected: [u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    r.exact(&mut found, "magic")?;
    if found != expected {
        return Err(AfsError::BadMagic {
            path: r.path().to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

pub fn expect_version(r: &mut Reader, expected: u8) -> Result<()> {
    let found = r.byte("version")?;
    if found != expected {
        return Err(AfsError::BadVersion {
            path: r.path().to_path_buf(),
            found,
        });
    }
    Ok(())
}
