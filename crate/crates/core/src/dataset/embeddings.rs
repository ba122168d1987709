use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::wire::{self, WireReader};
use super::{PooledEmbedding, FORMAT_VERSION};
use crate::{Error, Result};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"SPE1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingHeader {
    pub version: u32,
    pub dim: u32,
    pub num_labels: u32,
    pub num_records: u64,
}

pub struct EmbeddingWriter<W: Write> {
    inner: W,
    dim: usize,
    num_labels: u32,
    expected: u64,
    written: u64,
}

impl<W: Write> EmbeddingWriter<W> {
    pub fn new(mut inner: W, dim: u32, num_labels: u32, num_records: u64) -> Result<Self> {
        if dim == 0 || num_labels == 0 {
            return Err(Error::Param(format!(
                "embedding file requires D, L >= 1 (got D={dim}, L={num_labels})"
            )));
        }
        inner.write_all(&EMBEDDING_MAGIC)?;
        wire::put_u32(&mut inner, FORMAT_VERSION)?;
        wire::put_u32(&mut inner, dim)?;
        wire::put_u32(&mut inner, num_labels)?;
        wire::put_u64(&mut inner, num_records)?;
        Ok(Self {
            inner,
            dim: dim as usize,
            num_labels,
            expected: num_records,
            written: 0,
        })
    }

    pub fn write(&mut self, embedding: &PooledEmbedding) -> Result<()> {
        let fail = |field, message: String| Error::InvalidRecord {
            id: embedding.id.clone(),
            field,
            message,
        };
        if self.written == self.expected {
            return Err(Error::Mismatch(format!(
                "header declares {} embeddings; refusing to write `{}`",
                self.expected, embedding.id
            )));
        }
        if embedding.vector.len() != self.dim {
            return Err(fail(
                "vector",
                format!("dimension {} != D={}", embedding.vector.len(), self.dim),
            ));
        }
        if embedding.label >= self.num_labels {
            return Err(fail(
                "label",
                format!("label {} outside [0, {})", embedding.label, self.num_labels),
            ));
        }
        if embedding.vector.iter().any(|v| !v.is_finite()) {
            return Err(fail("vector", "non-finite value".into()));
        }
        wire::put_string(&mut self.inner, &embedding.id)?;
        wire::put_u32(&mut self.inner, embedding.label)?;
        wire::put_f32s(&mut self.inner, &embedding.vector)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.expected {
            return Err(Error::Mismatch(format!(
                "header declares {} embeddings but {} were written",
                self.expected, self.written
            )));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

impl EmbeddingWriter<BufWriter<File>> {
    pub fn create(path: &Path, dim: u32, num_labels: u32, num_records: u64) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        Self::new(BufWriter::new(file), dim, num_labels, num_records)
    }
}

/// Writes `embeddings` as an `SPE1` stream. Every vector must have length
/// `dim`.
pub fn write_embeddings<W: Write>(
    out: W,
    dim: u32,
    num_labels: u32,
    embeddings: &[PooledEmbedding],
) -> Result<W> {
    let mut writer = EmbeddingWriter::new(out, dim, num_labels, embeddings.len() as u64)?;
    for e in embeddings {
        writer.write(e)?;
    }
    writer.finish()
}

pub fn read_embeddings<R: Read>(input: R) -> Result<EmbeddingReader<R>> {
    EmbeddingReader::new(input)
}

pub struct EmbeddingReader<R> {
    wire: WireReader<R>,
    header: EmbeddingHeader,
    next: u64,
    done: bool,
}

impl<R: Read> EmbeddingReader<R> {
    pub fn new(input: R) -> Result<Self> {
        let mut wire = WireReader::new(input);
        let magic: [u8; 4] = wire.array("magic")?;
        if magic != EMBEDDING_MAGIC {
            return Err(wire.error(
                0,
                format!(
                    "bad magic {:?}, expected \"SPE1\"",
                    String::from_utf8_lossy(&magic)
                ),
            ));
        }
        let version = wire.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(wire.error(4, format!("unsupported version {version}")));
        }
        let dim = wire.u32("D")?;
        let num_labels = wire.u32("L")?;
        if dim == 0 || num_labels == 0 {
            return Err(wire.error(8, format!("invalid D={dim} or L={num_labels}")));
        }
        let num_records = wire.u64("N")?;
        Ok(Self {
            wire,
            header: EmbeddingHeader {
                version,
                dim,
                num_labels,
                num_records,
            },
            next: 0,
            done: false,
        })
    }

    pub fn header(&self) -> &EmbeddingHeader {
        &self.header
    }

    pub fn read_all(self) -> Result<Vec<PooledEmbedding>> {
        self.collect()
    }

    fn read_one(&mut self) -> Result<PooledEmbedding> {
        self.wire.set_record(Some(self.next));
        let id = self.wire.string("id")?;
        let at = self.wire.offset();
        let label = self.wire.u32("label")?;
        if label >= self.header.num_labels {
            return Err(self.wire.error(
                at,
                format!(
                    "embedding `{id}`: label {label} outside [0, {})",
                    self.header.num_labels
                ),
            ));
        }
        let vector = self.wire.f32s(self.header.dim as usize, "vector")?;
        self.wire.set_record(None);
        Ok(PooledEmbedding { id, label, vector })
    }
}

impl EmbeddingReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::new(BufReader::new(file))
    }
}

impl<R: Read> Iterator for EmbeddingReader<R> {
    type Item = Result<PooledEmbedding>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.next == self.header.num_records {
            self.done = true;
            return self.wire.expect_eof().err().map(Err);
        }
        let item = self.read_one();
        match item {
            Ok(_) => self.next += 1,
            Err(_) => self.done = true,
        }
        Some(item)
    }
}
