//! On-disk datasets of utterances and pooled embeddings.
//!
//! Two little-endian binary formats live here:
//!
//! * `SPD1` datasets: a 32-byte header (`magic`, `version`, `F`, `G`, `V`,
//!   `L` as u32, `N` as u64) followed by `N` records. Each record is
//!   `u32 id_len`, the id bytes, `u32 label`, `u32 T`, then `T·F` f32 frame
//!   values (frame-major) and `T·G` u16 codebook indices. Indices are stored
//!   0-based, in `[0, V)`.
//! * `SPE1` embeddings: a 24-byte header (`magic`, `version`, `D`, `L` as
//!   u32, `N` as u64) followed by `N` records of `u32 id_len`, id bytes,
//!   `u32 label`, and `D` f32 values.
//!
//! Class names may be kept next to a dataset in a plain-text sidecar
//! (`<dataset>.labels.txt`, one name per line, line number = label id).

mod embeddings;
mod format;
mod synthetic;
pub(crate) mod wire;

use std::fs;
use std::path::{Path, PathBuf};

pub use embeddings::{
    read_embeddings, write_embeddings, EmbeddingHeader, EmbeddingReader, EmbeddingWriter,
    EMBEDDING_MAGIC,
};
pub use format::{read_dataset, write_dataset, DatasetReader, DatasetWriter, DATASET_MAGIC};
pub use synthetic::{generate_synthetic, SyntheticDataset, SyntheticSpec};

use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Dimensions shared by every record of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetShape {
    /// Feature dimension `F` of each frame vector.
    pub dim: u32,
    /// Number of codebook groups `G`.
    pub groups: u32,
    /// Centroids per group `V`.
    pub codebook_size: u32,
    /// Number of label classes `L`.
    pub num_labels: u32,
}

impl DatasetShape {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.groups == 0 || self.codebook_size == 0 || self.num_labels == 0 {
            return Err(Error::Param(format!(
                "dataset shape requires F, G, V, L >= 1 (got F={}, G={}, V={}, L={})",
                self.dim, self.groups, self.codebook_size, self.num_labels
            )));
        }
        if self.codebook_size > u32::from(u16::MAX) + 1 {
            return Err(Error::Param(format!(
                "V={} does not fit 16-bit indices",
                self.codebook_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub shape: DatasetShape,
    pub num_records: u64,
}

/// A single utterance: `T` frames of `F` features plus `G` codebook indices
/// per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub label: u32,
    dim: usize,
    groups: usize,
    features: Vec<f32>,
    indices: Vec<u16>,
}

impl UtteranceRecord {
    /// Builds a record from frame-major buffers. Only shapes are checked
    /// here; value ranges are checked against a header by [`Self::validate`].
    pub fn new(
        id: impl Into<String>,
        label: u32,
        dim: usize,
        groups: usize,
        features: Vec<f32>,
        indices: Vec<u16>,
    ) -> Result<Self> {
        let id = id.into();
        if dim == 0 || groups == 0 {
            return Err(Error::InvalidRecord {
                id,
                field: "shape",
                message: "F and G must be at least 1".into(),
            });
        }
        if !features.len().is_multiple_of(dim) {
            return Err(Error::InvalidRecord {
                id,
                field: "C",
                message: format!("{} values is not a multiple of F={dim}", features.len()),
            });
        }
        let frames = features.len() / dim;
        if indices.len() != frames * groups {
            return Err(Error::InvalidRecord {
                id,
                field: "Q",
                message: format!(
                    "expected {frames}x{groups}={} indices, got {}",
                    frames * groups,
                    indices.len()
                ),
            });
        }
        Ok(Self {
            id,
            label,
            dim,
            groups,
            features,
            indices,
        })
    }

    /// Like [`Self::new`] but takes 64-bit features, rounding each value to
    /// the nearest 32-bit float.
    pub fn from_f64(
        id: impl Into<String>,
        label: u32,
        dim: usize,
        groups: usize,
        features: &[f64],
        indices: Vec<u16>,
    ) -> Result<Self> {
        let features = features.iter().map(|&v| v as f32).collect();
        Self::new(id, label, dim, groups, features, indices)
    }

    /// Number of frames `T`.
    pub fn num_frames(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn indices(&self) -> &[u16] {
        &self.indices
    }

    pub fn frames(&self) -> Frames<'_> {
        Frames {
            data: &self.features,
            dim: self.dim,
        }
    }

    pub fn codes(&self) -> Codes<'_> {
        Codes {
            data: &self.indices,
            groups: self.groups,
        }
    }

    /// Checks the record against the dataset shape. The first violation is
    /// reported with the record id and the offending field.
    pub fn validate(&self, shape: &DatasetShape) -> Result<()> {
        let fail = |field: &'static str, message: String| Error::InvalidRecord {
            id: self.id.clone(),
            field,
            message,
        };
        if self.id.len() > u32::MAX as usize {
            return Err(fail("id", "id longer than 2^32-1 bytes".into()));
        }
        if self.label >= shape.num_labels {
            return Err(fail(
                "label",
                format!("label {} outside [0, {})", self.label, shape.num_labels),
            ));
        }
        if self.dim != shape.dim as usize {
            return Err(fail(
                "C",
                format!("feature dim {} != header F={}", self.dim, shape.dim),
            ));
        }
        if self.groups != shape.groups as usize {
            return Err(fail(
                "Q",
                format!("group count {} != header G={}", self.groups, shape.groups),
            ));
        }
        let frames = self.num_frames();
        if frames == 0 {
            return Err(fail("T", "zero-length utterance".into()));
        }
        if frames > u32::MAX as usize {
            return Err(fail("T", format!("{frames} frames exceeds u32")));
        }
        if let Some(pos) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(fail(
                "C",
                format!(
                    "non-finite value {} at frame {}, dim {}",
                    self.features[pos],
                    pos / self.dim,
                    pos % self.dim
                ),
            ));
        }
        if let Some(pos) = self
            .indices
            .iter()
            .position(|&q| u32::from(q) >= shape.codebook_size)
        {
            return Err(fail(
                "Q",
                format!(
                    "index {} at frame {}, group {} outside [0, {})",
                    self.indices[pos],
                    pos / self.groups,
                    pos % self.groups,
                    shape.codebook_size
                ),
            ));
        }
        Ok(())
    }
}

/// Borrowed `T×F` frame matrix, row-major.
#[derive(Debug, Clone, Copy)]
pub struct Frames<'a> {
    data: &'a [f32],
    dim: usize,
}

impl<'a> Frames<'a> {
    pub fn new(data: &'a [f32], dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values cannot form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &'a [f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'a, f32> {
        self.data.chunks_exact(self.dim)
    }
}

/// Borrowed `T×G` matrix of codebook indices, row-major.
#[derive(Debug, Clone, Copy)]
pub struct Codes<'a> {
    data: &'a [u16],
    groups: usize,
}

impl<'a> Codes<'a> {
    pub fn new(data: &'a [u16], groups: usize) -> Result<Self> {
        if groups == 0 || !data.len().is_multiple_of(groups) {
            return Err(Error::Shape(format!(
                "{} indices cannot form tuples of {groups} groups",
                data.len()
            )));
        }
        Ok(Self { data, groups })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.groups
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn tuple(&self, t: usize) -> &'a [u16] {
        &self.data[t * self.groups..(t + 1) * self.groups]
    }

    pub fn tuples(&self) -> std::slice::ChunksExact<'a, u16> {
        self.data.chunks_exact(self.groups)
    }
}

/// A fixed-size utterance embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledEmbedding {
    pub id: String,
    pub label: u32,
    pub vector: Vec<f32>,
}

/// Sidecar path for a dataset: `<dataset>.labels.txt`.
pub fn labels_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.as_os_str().to_owned();
    name.push(".labels.txt");
    PathBuf::from(name)
}

pub fn write_label_names(path: &Path, names: &[String]) -> Result<()> {
    let mut text = String::new();
    for name in names {
        if name.contains('\n') {
            return Err(Error::Param(format!(
                "label name {name:?} contains a newline"
            )));
        }
        text.push_str(name);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

pub fn read_label_names(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}
