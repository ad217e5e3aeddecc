use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Row-major shape, e.g. `[out, in]` for a dense weight.
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Flat parameter vector θ plus its named layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    pub layout: Vec<Segment>,
}

impl ParameterVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Result<&Segment> {
        self.layout
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Argument(format!("no parameter segment named '{name}'")))
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        let seg = self.segment(name)?;
        Ok(&self.values[seg.range()])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let range = self.segment(name)?.range();
        Ok(&mut self.values[range])
    }

    /// Flat indices covered by the named segments, in the given order.
    pub fn indices(&self, names: &[String]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for name in names {
            out.extend(self.segment(name)?.range());
        }
        Ok(out)
    }

    /// Segments must tile `0..len` without gaps or overlaps.
    pub fn validate(&self) -> Result<()> {
        let mut segs: Vec<&Segment> = self.layout.iter().collect();
        segs.sort_by_key(|s| s.offset);
        let mut next = 0;
        for s in segs {
            if s.offset != next {
                return Err(Error::Config(format!("segment '{}' starts at {} (expected {next})", s.name, s.offset)));
            }
            if s.shape.iter().product::<usize>() != s.len {
                return Err(Error::Config(format!("segment '{}' shape {:?} != len {}", s.name, s.shape, s.len)));
            }
            next += s.len;
        }
        if next != self.values.len() {
            return Err(Error::Config(format!("layout covers {next} values, vector has {}", self.values.len())));
        }
        Ok(())
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn values_from_le_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
        if !bytes.len().is_multiple_of(8) {
            return Err(Error::Config(format!("parameter file length {} is not a multiple of 8", bytes.len())));
        }
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

/// Builds disjoint, contiguous segments in declaration order.
#[derive(Debug, Default)]
pub(crate) struct LayoutBuilder {
    pub segments: Vec<Segment>,
    next: usize,
}

impl LayoutBuilder {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let len = shape.iter().product();
        let offset = self.next;
        self.segments.push(Segment { name: name.into(), offset, len, shape: shape.to_vec() });
        self.next += len;
        offset
    }

    pub fn total(&self) -> usize {
        self.next
    }
}

/// The JSON sidecar that sits next to a parameter file.
pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}
