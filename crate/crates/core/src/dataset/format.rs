use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::wire::{self, WireReader};
use super::{DatasetHeader, DatasetShape, UtteranceRecord, FORMAT_VERSION};
use crate::{Error, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"SPD1";

/// Streaming `SPD1` writer. The record count goes into the header up front,
/// so it must be known when the writer is created; [`Self::finish`] checks
/// that exactly that many records were written.
pub struct DatasetWriter<W: Write> {
    inner: W,
    shape: DatasetShape,
    expected: u64,
    written: u64,
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(mut inner: W, shape: DatasetShape, num_records: u64) -> Result<Self> {
        shape.validate()?;
        inner.write_all(&DATASET_MAGIC)?;
        wire::put_u32(&mut inner, FORMAT_VERSION)?;
        wire::put_u32(&mut inner, shape.dim)?;
        wire::put_u32(&mut inner, shape.groups)?;
        wire::put_u32(&mut inner, shape.codebook_size)?;
        wire::put_u32(&mut inner, shape.num_labels)?;
        wire::put_u64(&mut inner, num_records)?;
        Ok(Self {
            inner,
            shape,
            expected: num_records,
            written: 0,
        })
    }

    pub fn write_record(&mut self, record: &UtteranceRecord) -> Result<()> {
        if self.written == self.expected {
            return Err(Error::Mismatch(format!(
                "header declares {} records; refusing to write `{}`",
                self.expected, record.id
            )));
        }
        record.validate(&self.shape)?;
        let w = &mut self.inner;
        wire::put_string(w, &record.id)?;
        wire::put_u32(w, record.label)?;
        wire::put_u32(w, record.num_frames() as u32)?;
        wire::put_f32s(w, record.features())?;
        wire::put_u16s(w, record.indices())?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.expected {
            return Err(Error::Mismatch(format!(
                "header declares {} records but {} were written",
                self.expected, self.written
            )));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

impl DatasetWriter<BufWriter<File>> {
    pub fn create(path: &Path, shape: DatasetShape, num_records: u64) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        Self::new(BufWriter::new(file), shape, num_records)
    }
}

/// Writes a whole dataset to `out`.
pub fn write_dataset<W: Write>(
    out: W,
    shape: DatasetShape,
    records: &[UtteranceRecord],
) -> Result<W> {
    let mut writer = DatasetWriter::new(out, shape, records.len() as u64)?;
    for record in records {
        writer.write_record(record)?;
    }
    writer.finish()
}

/// Opens an `SPD1` stream: parses the header and returns a reader that
/// yields records one at a time.
pub fn read_dataset<R: Read>(input: R) -> Result<DatasetReader<R>> {
    DatasetReader::new(input)
}

/// Streaming `SPD1` reader. Every record is validated against the header
/// as it is decoded. After the first error the iterator is exhausted.
pub struct DatasetReader<R> {
    wire: WireReader<R>,
    header: DatasetHeader,
    next: u64,
    failed: bool,
}

impl<R: Read> DatasetReader<R> {
    pub fn new(input: R) -> Result<Self> {
        let mut wire = WireReader::new(input);
        let magic: [u8; 4] = wire.array("magic")?;
        if magic != DATASET_MAGIC {
            return Err(wire.error(
                0,
                format!(
                    "bad magic {:?}, expected \"SPD1\"",
                    String::from_utf8_lossy(&magic)
                ),
            ));
        }
        let version = wire.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(wire.error(4, format!("unsupported version {version}")));
        }
        let shape = DatasetShape {
            dim: wire.u32("F")?,
            groups: wire.u32("G")?,
            codebook_size: wire.u32("V")?,
            num_labels: wire.u32("L")?,
        };
        shape.validate().map_err(|e| wire.error(8, e.to_string()))?;
        let num_records = wire.u64("N")?;
        Ok(Self {
            wire,
            header: DatasetHeader {
                version,
                shape,
                num_records,
            },
            next: 0,
            failed: false,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn shape(&self) -> DatasetShape {
        self.header.shape
    }

    /// Drains the remaining records into memory.
    pub fn read_all(self) -> Result<Vec<UtteranceRecord>> {
        self.collect()
    }

    fn read_record(&mut self) -> Result<UtteranceRecord> {
        let index = self.next;
        let shape = self.header.shape;
        self.wire.set_record(Some(index));
        let id = self.wire.string("id")?;
        let label_at = self.wire.offset();
        let label = self.wire.u32("label")?;
        if label >= shape.num_labels {
            return Err(self.wire.error(
                label_at,
                format!(
                    "record `{id}`: label {label} outside [0, {})",
                    shape.num_labels
                ),
            ));
        }
        let t_at = self.wire.offset();
        let frames = self.wire.u32("T")? as usize;
        if frames == 0 {
            return Err(self
                .wire
                .error(t_at, format!("record `{id}`: zero-length utterance")));
        }
        let dim = shape.dim as usize;
        let groups = shape.groups as usize;
        let (n_feat, n_idx) = frames
            .checked_mul(dim)
            .zip(frames.checked_mul(groups))
            .filter(|(a, b)| a.checked_mul(4).is_some() && b.checked_mul(2).is_some())
            .ok_or_else(|| {
                self.wire
                    .error(t_at, format!("record `{id}`: T={frames} too large"))
            })?;
        let c_at = self.wire.offset();
        let features = self.wire.f32s(n_feat, "C")?;
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(self.wire.error(
                c_at + 4 * pos as u64,
                format!("record `{id}`: non-finite frame value"),
            ));
        }
        let q_at = self.wire.offset();
        let indices = self.wire.u16s(n_idx, "Q")?;
        if let Some(pos) = indices
            .iter()
            .position(|&q| u32::from(q) >= shape.codebook_size)
        {
            return Err(self.wire.error(
                q_at + 2 * pos as u64,
                format!(
                    "record `{id}`: index {} outside [0, {})",
                    indices[pos], shape.codebook_size
                ),
            ));
        }
        self.wire.set_record(None);
        UtteranceRecord::new(id, label, dim, groups, features, indices)
    }
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::new(BufReader::new(file))
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<UtteranceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if self.next == self.header.num_records {
            self.failed = true;
            self.wire.set_record(None);
            return match self.wire.expect_eof() {
                Ok(()) => None,
                Err(e) => Some(Err(e)),
            };
        }
        let item = self.read_record();
        match item {
            Ok(_) => self.next += 1,
            Err(_) => self.failed = true,
        }
        Some(item)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.header.num_records - self.next) as usize;
        if self.failed {
            (0, Some(0))
        } else {
            (0, Some(left + 1))
        }
    }
}
