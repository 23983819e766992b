use std::ops::Range;

use super::NnError;

/// A named block of a [`ParameterVector`], row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        Segment { name: name.into(), shape: shape.to_vec() }
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Flat array of trainable weights with a fixed segment table.
///
/// The segment order is the storage order: segment `k` occupies the values
/// immediately after segment `k - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    layout: Vec<Segment>,
    values: Vec<f64>,
}

const FORMAT_VERSION: u8 = 1;

impl ParameterVector {
    pub fn zeros(layout: Vec<Segment>) -> Self {
        let n = layout.iter().map(Segment::size).sum();
        ParameterVector { layout, values: vec![0.0; n] }
    }

    /// Rebuilds a vector from a layout and its flattened values.
    pub fn unflatten(layout: Vec<Segment>, values: Vec<f64>) -> Result<Self, NnError> {
        let n: usize = layout.iter().map(Segment::size).sum();
        if n != values.len() {
            return Err(NnError::Dimension { what: "parameter values", expected: n, got: values.len() });
        }
        Ok(ParameterVector { layout, values })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Offset range of the segment at position `index` in the layout.
    pub fn range_of(&self, index: usize) -> Range<usize> {
        let start: usize = self.layout[..index].iter().map(Segment::size).sum();
        start..start + self.layout[index].size()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        let idx = self.layout.iter().position(|s| s.name == name)?;
        Some(&self.values[self.range_of(idx)])
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Same layout with every segment name prefixed, used to keep the
    /// parameter namespaces of separate learners disjoint.
    pub fn prefixed(mut self, prefix: &str) -> Self {
        for seg in &mut self.layout {
            seg.name = format!("{prefix}{}", seg.name);
        }
        self
    }

    /// Little-endian encoding: version byte, segment table, then values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.values.len() * 8);
        write_into(&mut out, self);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut cursor = bytes;
        let pv = read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(NnError::Format(format!("{} trailing bytes", cursor.len())));
        }
        Ok(pv)
    }
}

pub(crate) fn write_into(out: &mut Vec<u8>, pv: &ParameterVector) {
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(pv.layout.len() as u32).to_le_bytes());
    for seg in &pv.layout {
        let name = seg.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(seg.shape.len() as u8);
        for &d in &seg.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    out.extend_from_slice(&(pv.values.len() as u64).to_le_bytes());
    for v in &pv.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn take<'a>(cursor: &mut &'a [u8], n: usize) -> Result<&'a [u8], NnError> {
    if cursor.len() < n {
        return Err(NnError::Format("unexpected end of parameter data".into()));
    }
    let (head, tail) = cursor.split_at(n);
    *cursor = tail;
    Ok(head)
}

/// Reads one encoded vector from the front of `cursor`, advancing it.
pub(crate) fn read_from(cursor: &mut &[u8]) -> Result<ParameterVector, NnError> {
    let version = take(cursor, 1)?[0];
    if version != FORMAT_VERSION {
        return Err(NnError::Format(format!("parameter format version {version}, expected {FORMAT_VERSION}")));
    }
    let nseg = u32::from_le_bytes(take(cursor, 4)?.try_into().unwrap()) as usize;
    let mut layout = Vec::with_capacity(nseg);
    for _ in 0..nseg {
        let nlen = u16::from_le_bytes(take(cursor, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(cursor, nlen)?).map_err(|e| NnError::Format(format!("segment name: {e}")))?.to_string();
        let ndim = take(cursor, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(cursor, 4)?.try_into().unwrap()) as usize);
        }
        layout.push(Segment { name, shape });
    }
    let n = u64::from_le_bytes(take(cursor, 8)?.try_into().unwrap()) as usize;
    let raw = take(cursor, n.checked_mul(8).ok_or_else(|| NnError::Format("length overflow".into()))?)?;
    let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    ParameterVector::unflatten(layout, values)
}
