//! Binary container: named, typed, little-endian n-d arrays.
//!
//! ```text
//! "CVS1" | version u16 | count u16 | count × record
//! record = name_len u16 | name utf-8 | dtype u8 | rank u8 | dims u32×rank | payload
//! ```
//! dtype: 0 = f32, 1 = f64, 2 = u8. Payload is row-major, innermost
//! dimension last. Parsing validates every length before returning.

use std::path::Path;

use crate::sim::{ChannelStack, CovarianceField, Domain, SimError};

pub const MAGIC: &[u8; 4] = b"CVS1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ContainerError {
    #[error("not a container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated at byte {offset}: need {needed} bytes, {available} left")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("unknown dtype code {0}")]
    BadDType(u8),
    #[error("record name is not valid UTF-8")]
    BadName,
    #[error("duplicate record name {0:?}")]
    DuplicateName(String),
    #[error("too many records or dimensions for the format")]
    Overflow,
    #[error("record {name:?}: dims {dims:?} do not match {len} elements")]
    DimsMismatch { name: String, dims: Vec<u32>, len: usize },
    #[error("missing record {0:?}")]
    MissingRecord(String),
    #[error("record {name:?}: expected {expected}")]
    WrongType { name: String, expected: String },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U8 = 2,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self, ContainerError> {
        match c {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            2 => Ok(DType::U8),
            other => Err(ContainerError::BadDType(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Data {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl Data {
    pub fn dtype(&self) -> DType {
        match self {
            Data::F32(_) => DType::F32,
            Data::F64(_) => DType::F64,
            Data::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Data::F32(v) => v.len(),
            Data::F64(v) => v.len(),
            Data::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Data,
}

impl Record {
    pub fn new(name: impl Into<String>, dims: Vec<u32>, data: Data) -> Result<Self, ContainerError> {
        let name = name.into();
        let count = dims.iter().map(|d| *d as usize).product::<usize>();
        if count != data.len() {
            return Err(ContainerError::DimsMismatch { name, dims, len: data.len() });
        }
        if dims.len() > u8::MAX as usize || name.len() > u16::MAX as usize {
            return Err(ContainerError::Overflow);
        }
        Ok(Self { name, dims, data })
    }
}

/// Ordered set of uniquely named records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    records: Vec<Record>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(ContainerError::Truncated { offset: self.pos, needed: n, available });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.name.as_str())
    }

    pub fn push(&mut self, r: Record) -> Result<(), ContainerError> {
        if self.get(&r.name).is_some() {
            return Err(ContainerError::DuplicateName(r.name));
        }
        if self.records.len() == u16::MAX as usize {
            return Err(ContainerError::Overflow);
        }
        self.records.push(r);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Record, ContainerError> {
        self.get(name).ok_or_else(|| ContainerError::MissingRecord(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u16).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.data.dtype() as u8);
            out.push(r.dims.len() as u8);
            for d in &r.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &r.data {
                Data::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Data::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Data::U8(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, ContainerError> {
        let mut rd = Reader { buf, pos: 0 };
        if rd.take(4).map_err(|_| ContainerError::BadMagic)? != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let version = rd.u16()?;
        if version != VERSION {
            return Err(ContainerError::UnsupportedVersion(version));
        }
        let count = rd.u16()?;
        let mut c = Container::new();
        for _ in 0..count {
            let name_len = rd.u16()? as usize;
            let name = std::str::from_utf8(rd.take(name_len)?).map_err(|_| ContainerError::BadName)?.to_string();
            let dtype = DType::from_code(rd.u8()?)?;
            let rank = rd.u8()? as usize;
            let dims = (0..rank).map(|_| rd.u32()).collect::<Result<Vec<_>, _>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d as usize))
                .ok_or(ContainerError::Overflow)?;
            let bytes = rd.take(count.checked_mul(dtype.size()).ok_or(ContainerError::Overflow)?)?;
            let data = match dtype {
                DType::F32 => Data::F32(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect()),
                DType::F64 => Data::F64(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect()),
                DType::U8 => Data::U8(bytes.to_vec()),
            };
            c.push(Record::new(name, dims, data)?)?;
        }
        if rd.pos != buf.len() {
            return Err(ContainerError::TrailingBytes(buf.len() - rd.pos));
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<(), ContainerError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| io_err(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, ContainerError> {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// `{prefix}/c`: f64 `[6, H, W]` channel planes; `{prefix}/domain`: u8 (0 linear, 1 log).
    pub fn put_field(&mut self, prefix: &str, field: &CovarianceField) -> Result<(), ContainerError> {
        let s = crate::sim::to_channels(field);
        let data: Vec<f64> = s.planes.iter().flatten().copied().collect();
        self.push(Record::new(
            format!("{prefix}/c"),
            vec![6, field.height as u32, field.width as u32],
            Data::F64(data),
        )?)?;
        let tag = match field.domain {
            Domain::Linear => 0,
            Domain::Log => 1,
        };
        self.push(Record::new(format!("{prefix}/domain"), vec![1], Data::U8(vec![tag]))?)
    }

    pub fn get_field(&self, prefix: &str) -> Result<CovarianceField, ContainerError> {
        let name = format!("{prefix}/c");
        let r = self.require(&name)?;
        let (Data::F64(v), [6, h, w]) = (&r.data, r.dims.as_slice()) else {
            return Err(ContainerError::WrongType { name, expected: "f64 [6, H, W] covariance planes".into() });
        };
        let (h, w) = (*h as usize, *w as usize);
        let mut stack = ChannelStack::zeros(w, h);
        for (k, plane) in stack.planes.iter_mut().enumerate() {
            plane.copy_from_slice(&v[k * w * h..(k + 1) * w * h]);
        }
        let dname = format!("{prefix}/domain");
        let domain = match &self.require(&dname)?.data {
            Data::U8(t) if t == &[0] => Domain::Linear,
            Data::U8(t) if t == &[1] => Domain::Log,
            _ => return Err(ContainerError::WrongType { name: dname, expected: "u8 domain tag 0 or 1".into() }),
        };
        Ok(crate::sim::from_channels(&stack, domain)?)
    }

    /// `masks/{name}`: u8 `[H, W]`.
    pub fn put_mask(&mut self, name: &str, width: usize, height: usize, mask: &[bool]) -> Result<(), ContainerError> {
        self.push(Record::new(
            format!("masks/{name}"),
            vec![height as u32, width as u32],
            Data::U8(mask.iter().map(|m| u8::from(*m)).collect()),
        )?)
    }

    /// All `masks/*` records as `(name, mask)`.
    pub fn masks(&self) -> Result<Vec<(String, Vec<bool>)>, ContainerError> {
        self.records
            .iter()
            .filter_map(|r| r.name.strip_prefix("masks/").map(|n| (n, r)))
            .map(|(n, r)| match &r.data {
                Data::U8(v) => Ok((n.to_string(), v.iter().map(|b| *b != 0).collect())),
                _ => Err(ContainerError::WrongType { name: r.name.clone(), expected: "u8 mask".into() }),
            })
            .collect()
    }

    pub fn put_text(&mut self, name: &str, text: &str) -> Result<(), ContainerError> {
        self.push(Record::new(name, vec![text.len() as u32], Data::U8(text.as_bytes().to_vec()))?)
    }

    pub fn get_text(&self, name: &str) -> Result<String, ContainerError> {
        match &self.require(name)?.data {
            Data::U8(v) => String::from_utf8(v.clone()).map_err(|_| ContainerError::BadName),
            _ => Err(ContainerError::WrongType { name: name.into(), expected: "u8 text".into() }),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> ContainerError {
    ContainerError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::HermitianMatrix2;
    use num_complex::Complex64;

    fn sample() -> Container {
        let mut c = Container::new();
        c.push(Record::new("a", vec![2, 3], Data::F32(vec![1.5, -0.0, f32::MIN_POSITIVE, 3.0, f32::MAX, -7.25])).unwrap())
            .unwrap();
        c.push(Record::new("b/x", vec![2], Data::F64(vec![std::f64::consts::PI, -1e-300])).unwrap()).unwrap();
        c.push(Record::new("ü", vec![0], Data::U8(vec![])).unwrap()).unwrap();
        c.push(Record::new("s", vec![], Data::U8(vec![9])).unwrap()).unwrap();
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"CVS1");
        assert_eq!(Container::from_bytes(&bytes).unwrap(), c);
        assert_eq!(Container::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn header_layout() {
        let mut c = Container::new();
        c.push(Record::new("ab", vec![1], Data::U8(vec![7])).unwrap()).unwrap();
        assert_eq!(c.to_bytes(), vec![b'C', b'V', b'S', b'1', 1, 0, 1, 0, 2, 0, b'a', b'b', 2, 1, 1, 0, 0, 0, 7]);
    }

    #[test]
    fn truncation_detected_at_every_length() {
        let bytes = sample().to_bytes();
        for n in 0..bytes.len() {
            assert!(Container::from_bytes(&bytes[..n]).is_err(), "prefix {n} accepted");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(Container::from_bytes(&extra), Err(ContainerError::TrailingBytes(1)));
    }

    #[test]
    fn rejects_bad_input() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert_eq!(Container::from_bytes(&bytes), Err(ContainerError::BadMagic));
        let mut c = sample();
        assert!(matches!(
            c.push(Record::new("a", vec![1], Data::U8(vec![0])).unwrap()),
            Err(ContainerError::DuplicateName(_))
        ));
        assert!(Record::new("x", vec![2, 2], Data::U8(vec![0; 3])).is_err());
        let mut v2 = sample().to_bytes();
        v2[4] = 2;
        assert_eq!(Container::from_bytes(&v2), Err(ContainerError::UnsupportedVersion(2)));
    }

    #[test]
    fn field_and_mask_records() {
        let data = vec![
            HermitianMatrix2::diag(1.0, 2.0),
            HermitianMatrix2::new(0.5, 0.25, Complex64::new(0.1, -0.2)),
            HermitianMatrix2::IDENTITY,
        ];
        let f = CovarianceField::new(3, 1, Domain::Linear, data).unwrap();
        let mut c = Container::new();
        c.put_field("clean", &f).unwrap();
        c.put_mask("region_00", 3, 1, &[true, false, true]).unwrap();
        c.put_text("config/text", "depth = 5\n").unwrap();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.get_field("clean").unwrap(), f);
        assert_eq!(back.masks().unwrap(), vec![("region_00".to_string(), vec![true, false, true])]);
        assert_eq!(back.get_text("config/text").unwrap(), "depth = 5\n");
        assert!(matches!(back.get_field("nope"), Err(ContainerError::MissingRecord(_))));
    }
}
