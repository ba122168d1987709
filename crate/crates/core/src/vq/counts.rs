use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dataset::wire::{self, WireReader};
use crate::dataset::{Codes, DatasetShape, UtteranceRecord};
use crate::{Error, Result};

pub const COUNTS_MAGIC: [u8; 4] = *b"SPC1";

/// Index occurrence counts over a training set.
///
/// `group_counts` holds, per group `g`, how often each index appears in
/// that group (`N_g`); `tuple_counts` holds how often each full tuple
/// appears (`N`). Counts from independent shards combine with
/// [`CodebookCounts::merge`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodebookCounts {
    groups: usize,
    codebook_size: usize,
    group_counts: Vec<u64>,
    tuple_counts: BTreeMap<Vec<u16>, u64>,
    total_frames: u64,
}

impl CodebookCounts {
    pub fn new(groups: usize, codebook_size: usize) -> Self {
        Self {
            groups,
            codebook_size,
            group_counts: vec![0; groups * codebook_size],
            tuple_counts: BTreeMap::new(),
            total_frames: 0,
        }
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn total_frames(&self) -> u64 {
        self.total_frames
    }

    /// `N_g(index)`; indices never seen, including ones outside `[0, V)`,
    /// count as 0.
    pub fn group_count(&self, group: usize, index: u16) -> u64 {
        let index = index as usize;
        if group >= self.groups || index >= self.codebook_size {
            return 0;
        }
        self.group_counts[group * self.codebook_size + index]
    }

    /// The dense `V`-length count table of one group.
    pub fn group_table(&self, group: usize) -> &[u64] {
        &self.group_counts[group * self.codebook_size..(group + 1) * self.codebook_size]
    }

    /// `N(tuple)`.
    pub fn tuple_count(&self, tuple: &[u16]) -> u64 {
        self.tuple_counts.get(tuple).copied().unwrap_or(0)
    }

    pub fn tuple_counts(&self) -> &BTreeMap<Vec<u16>, u64> {
        &self.tuple_counts
    }

    /// Number of distinct indices seen in each group.
    pub fn distinct_per_group(&self) -> Vec<usize> {
        (0..self.groups)
            .map(|g| self.group_table(g).iter().filter(|&&c| c > 0).count())
            .collect()
    }

    pub fn add(&mut self, codes: &Codes<'_>) -> Result<()> {
        if codes.groups() != self.groups {
            return Err(Error::Shape(format!(
                "codes have {} groups, counts expect {}",
                codes.groups(),
                self.groups
            )));
        }
        for tuple in codes.tuples() {
            if let Some(q) = tuple.iter().find(|&&q| q as usize >= self.codebook_size) {
                return Err(Error::Shape(format!(
                    "index {q} outside [0, {})",
                    self.codebook_size
                )));
            }
        }
        for tuple in codes.tuples() {
            for (g, &q) in tuple.iter().enumerate() {
                self.group_counts[g * self.codebook_size + q as usize] += 1;
            }
            match self.tuple_counts.get_mut(tuple) {
                Some(c) => *c += 1,
                None => {
                    self.tuple_counts.insert(tuple.to_vec(), 1);
                }
            }
        }
        self.total_frames += codes.len() as u64;
        Ok(())
    }

    pub fn add_record(&mut self, record: &UtteranceRecord) -> Result<()> {
        self.add(&record.codes())
    }

    /// Elementwise sum with counts from another shard.
    pub fn merge(&mut self, other: &CodebookCounts) -> Result<()> {
        if other.groups != self.groups || other.codebook_size != self.codebook_size {
            return Err(Error::Shape(format!(
                "cannot merge counts with G={}, V={} into G={}, V={}",
                other.groups, other.codebook_size, self.groups, self.codebook_size
            )));
        }
        for (a, b) in self.group_counts.iter_mut().zip(&other.group_counts) {
            *a += b;
        }
        for (tuple, c) in &other.tuple_counts {
            *self.tuple_counts.entry(tuple.clone()).or_insert(0) += c;
        }
        self.total_frames += other.total_frames;
        Ok(())
    }

    fn check_totals(&self) -> std::result::Result<(), String> {
        for g in 0..self.groups {
            let s: u64 = self.group_table(g).iter().sum();
            if s != self.total_frames {
                return Err(format!(
                    "group {g} counts sum to {s}, total_frames is {}",
                    self.total_frames
                ));
            }
        }
        let s: u64 = self.tuple_counts.values().sum();
        if s != self.total_frames {
            return Err(format!(
                "tuple counts sum to {s}, total_frames is {}",
                self.total_frames
            ));
        }
        Ok(())
    }

    /// `SPC1`: magic, `G` u32, `V` u32, `total_frames` u64, then `G` dense
    /// `V`-length u64 tables, then a u64 entry count followed by
    /// `(G × u16 tuple, u64 count)` entries in lexicographic tuple order.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<W> {
        out.write_all(&COUNTS_MAGIC)?;
        wire::put_u32(&mut out, self.groups as u32)?;
        wire::put_u32(&mut out, self.codebook_size as u32)?;
        wire::put_u64(&mut out, self.total_frames)?;
        for &c in &self.group_counts {
            wire::put_u64(&mut out, c)?;
        }
        wire::put_u64(&mut out, self.tuple_counts.len() as u64)?;
        for (tuple, &c) in &self.tuple_counts {
            wire::put_u16s(&mut out, tuple)?;
            wire::put_u64(&mut out, c)?;
        }
        out.flush()?;
        Ok(out)
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = WireReader::new(input);
        let magic: [u8; 4] = r.array("magic")?;
        if magic != COUNTS_MAGIC {
            return Err(r.error(
                0,
                format!(
                    "bad magic {:?}, expected \"SPC1\"",
                    String::from_utf8_lossy(&magic)
                ),
            ));
        }
        let groups = r.u32("G")? as usize;
        let codebook_size = r.u32("V")? as usize;
        if groups == 0 || codebook_size == 0 || codebook_size > 1 << 16 {
            return Err(r.error(4, format!("invalid G={groups} or V={codebook_size}")));
        }
        let total_frames = r.u64("total_frames")?;
        let mut group_counts = Vec::new();
        for _ in 0..groups * codebook_size {
            group_counts.push(r.u64("group count")?);
        }
        let entries = r.u64("tuple entry count")?;
        let mut tuple_counts = BTreeMap::new();
        for _ in 0..entries {
            let at = r.offset();
            let tuple = r.u16s(groups, "tuple")?;
            if tuple.iter().any(|&q| q as usize >= codebook_size) {
                return Err(r.error(at, format!("tuple {tuple:?} outside [0, {codebook_size})")));
            }
            let c = r.u64("tuple count")?;
            if tuple_counts.insert(tuple, c).is_some() {
                return Err(r.error(at, "duplicate tuple entry"));
            }
        }
        r.expect_eof()?;
        let counts = Self {
            groups,
            codebook_size,
            group_counts,
            tuple_counts,
            total_frames,
        };
        let end = r.offset();
        counts.check_totals().map_err(|m| r.error(end, m))?;
        Ok(counts)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_to(BufWriter::new(file))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

/// Counts every frame of every record.
pub fn build_counts<'a>(
    shape: &DatasetShape,
    records: impl IntoIterator<Item = &'a UtteranceRecord>,
) -> Result<CodebookCounts> {
    let mut counts = CodebookCounts::new(shape.groups as usize, shape.codebook_size as usize);
    let mut any = false;
    for record in records {
        counts.add_record(record)?;
        any = true;
    }
    if !any {
        return Err(Error::Param(
            "cannot build counts from an empty dataset".into(),
        ));
    }
    Ok(counts)
}
