//! Section-table binary container shared by avatar assets, rig files,
//! reconstructor weights and feature dumps.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0   magic        b"GAVA"
//! 4   version      u16 (= 1)
//! 6   kind         u16 (1 avatar, 2 rig, 3 tensors)
//! 8   count        u32 number of sections
//! 12  reserved     u32 (= 0)
//! 16  table        count × 88-byte entries
//!       name       [u8; 32] utf-8, NUL padded
//!       dtype      u8 (0 f32, 1 f64, 2 u32, 3 i32, 4 u8)
//!       ndim       u8 (1..=4)
//!       reserved   [u8; 6]
//!       shape      [u64; 4] unused dims are 0
//!       offset     u64 absolute byte offset of the payload
//!       length     u64 payload byte length
//! ...  payloads, each starting on a 64-byte boundary, zero padded
//! ```

use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"GAVA";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
pub const ENTRY_LEN: usize = 88;
pub const NAME_LEN: usize = 32;
pub const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum ContainerKind {
    Avatar = 1,
    Rig = 2,
    Tensors = 3,
}

impl ContainerKind {
    fn from_u16(v: u16) -> Option<Self> {
        match v {
            1 => Some(Self::Avatar),
            2 => Some(Self::Rig),
            3 => Some(Self::Tensors),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U32 = 2,
    I32 = 3,
    U8 = 4,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::U32 | DType::I32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }

    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::F32),
            1 => Some(Self::F64),
            2 => Some(Self::U32),
            3 => Some(Self::I32),
            4 => Some(Self::U8),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected \"GAVA\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {found} (expected {VERSION})")]
    VersionMismatch { found: u16 },
    #[error("wrong container kind: expected {expected:?}, found code {found}")]
    WrongKind { expected: ContainerKind, found: u16 },
    #[error("file truncated in header or section table")]
    TruncatedHeader,
    #[error("section \"{section}\" is truncated: payload ends at byte {end}, file has {len} bytes")]
    TruncatedSection { section: String, end: u64, len: u64 },
    #[error("section \"{section}\" is malformed: {reason}")]
    MalformedSection { section: String, reason: String },
    #[error("missing section \"{0}\"")]
    MissingSection(String),
}

/// One named, typed, shaped array.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl Section {
    pub fn f32(name: &str, shape: &[usize], values: &[f32]) -> Self {
        Self::raw(name, DType::F32, shape, values.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    pub fn f64(name: &str, shape: &[usize], values: &[f64]) -> Self {
        Self::raw(name, DType::F64, shape, values.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    pub fn u32(name: &str, shape: &[usize], values: &[u32]) -> Self {
        Self::raw(name, DType::U32, shape, values.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    pub fn i32(name: &str, shape: &[usize], values: &[i32]) -> Self {
        Self::raw(name, DType::I32, shape, values.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    pub fn u8(name: &str, values: &[u8]) -> Self {
        Self::raw(name, DType::U8, &[values.len()], values.to_vec())
    }

    fn raw(name: &str, dtype: DType, shape: &[usize], data: Vec<u8>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>() * dtype.size(), data.len());
        Self { name: name.to_owned(), dtype, shape: shape.to_vec(), data }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    fn malformed(&self, reason: impl Into<String>) -> ContainerError {
        ContainerError::MalformedSection { section: self.name.clone(), reason: reason.into() }
    }

    fn check_dtype(&self, dtype: DType) -> Result<(), ContainerError> {
        if self.dtype != dtype {
            return Err(self.malformed(format!("dtype {:?}, expected {:?}", self.dtype, dtype)));
        }
        Ok(())
    }

    /// Fails unless the shape equals `expected`; `None` entries match anything.
    pub fn expect_shape(&self, expected: &[Option<usize>]) -> Result<(), ContainerError> {
        let ok = self.shape.len() == expected.len()
            && self.shape.iter().zip(expected).all(|(s, e)| e.is_none_or(|e| e == *s));
        if !ok {
            return Err(self.malformed(format!("shape {:?}, expected {:?}", self.shape, expected)));
        }
        Ok(())
    }

    pub fn to_f32(&self) -> Result<Vec<f32>, ContainerError> {
        self.check_dtype(DType::F32)?;
        Ok(self.data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn to_f64(&self) -> Result<Vec<f64>, ContainerError> {
        self.check_dtype(DType::F64)?;
        Ok(self.data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    /// Reads either float dtype, widening f32.
    pub fn to_f64_lossless(&self) -> Result<Vec<f64>, ContainerError> {
        match self.dtype {
            DType::F32 => Ok(self.to_f32()?.into_iter().map(f64::from).collect()),
            _ => self.to_f64(),
        }
    }

    pub fn to_u32(&self) -> Result<Vec<u32>, ContainerError> {
        self.check_dtype(DType::U32)?;
        Ok(self.data.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn to_u8(&self) -> Result<&[u8], ContainerError> {
        self.check_dtype(DType::U8)?;
        Ok(&self.data)
    }

    pub fn to_i32(&self) -> Result<Vec<i32>, ContainerError> {
        self.check_dtype(DType::I32)?;
        Ok(self.data.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: ContainerKind,
    pub sections: Vec<Section>,
}

impl Container {
    pub fn new(kind: ContainerKind) -> Self {
        Self { kind, sections: Vec::new() }
    }

    pub fn push(&mut self, section: Section) {
        self.sections.push(section);
    }

    pub fn get(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Section, ContainerError> {
        self.get(name).ok_or_else(|| ContainerError::MissingSection(name.to_owned()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let table_end = HEADER_LEN + ENTRY_LEN * self.sections.len();
        let mut offsets = Vec::with_capacity(self.sections.len());
        let mut cursor = align_up(table_end);
        let mut end = cursor;
        for s in &self.sections {
            offsets.push(cursor);
            end = cursor + s.data.len();
            cursor = align_up(end);
        }
        // no padding after the final payload
        let cursor = end;
        let mut out = Vec::with_capacity(cursor);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind as u16).to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for (s, &off) in self.sections.iter().zip(&offsets) {
            let mut name = [0u8; NAME_LEN];
            let bytes = s.name.as_bytes();
            assert!(bytes.len() <= NAME_LEN, "section name too long: {}", s.name);
            assert!((1..=4).contains(&s.shape.len()), "section rank must be 1..=4");
            name[..bytes.len()].copy_from_slice(bytes);
            out.extend_from_slice(&name);
            out.push(s.dtype as u8);
            out.push(s.shape.len() as u8);
            out.extend_from_slice(&[0u8; 6]);
            for d in 0..4 {
                let dim = s.shape.get(d).copied().unwrap_or(0) as u64;
                out.extend_from_slice(&dim.to_le_bytes());
            }
            out.extend_from_slice(&(off as u64).to_le_bytes());
            out.extend_from_slice(&(s.data.len() as u64).to_le_bytes());
        }
        for (s, &off) in self.sections.iter().zip(&offsets) {
            out.resize(off, 0);
            out.extend_from_slice(&s.data);
        }
        out.resize(cursor, 0);
        out
    }

    pub fn parse(bytes: &[u8], expected: ContainerKind) -> Result<Self, ContainerError> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && bytes[..4] != MAGIC {
                return Err(ContainerError::BadMagic(bytes[..4].try_into().unwrap()));
            }
            return Err(ContainerError::TruncatedHeader);
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(ContainerError::BadMagic(magic));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(ContainerError::VersionMismatch { found: version });
        }
        let kind_code = u16::from_le_bytes([bytes[6], bytes[7]]);
        let kind = match ContainerKind::from_u16(kind_code) {
            Some(k) if k == expected => k,
            _ => return Err(ContainerError::WrongKind { expected, found: kind_code }),
        };
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let table_end = count
            .checked_mul(ENTRY_LEN)
            .and_then(|t| t.checked_add(HEADER_LEN))
            .ok_or(ContainerError::TruncatedHeader)?;
        if bytes.len() < table_end {
            return Err(ContainerError::TruncatedHeader);
        }
        let file_len = bytes.len() as u64;
        let mut sections = Vec::with_capacity(count);
        for i in 0..count {
            let e = &bytes[HEADER_LEN + i * ENTRY_LEN..HEADER_LEN + (i + 1) * ENTRY_LEN];
            let name_bytes = &e[..NAME_LEN];
            let end = name_bytes.iter().position(|&b| b == 0).unwrap_or(NAME_LEN);
            let name = String::from_utf8_lossy(&name_bytes[..end]).into_owned();
            let malformed =
                |reason: String| ContainerError::MalformedSection { section: name.clone(), reason };
            if sections.iter().any(|s: &Section| s.name == name) {
                return Err(malformed("duplicate section name".to_owned()));
            }
            let dtype = DType::from_u8(e[32]).ok_or_else(|| malformed(format!("unknown dtype code {}", e[32])))?;
            let ndim = e[33] as usize;
            if !(1..=4).contains(&ndim) {
                return Err(malformed(format!("rank {ndim} out of range")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for d in 0..ndim {
                let at = 40 + d * 8;
                shape.push(u64::from_le_bytes(e[at..at + 8].try_into().unwrap()) as usize);
            }
            let offset = u64::from_le_bytes(e[72..80].try_into().unwrap());
            let length = u64::from_le_bytes(e[80..88].try_into().unwrap());
            let payload_end = offset.saturating_add(length);
            if payload_end > file_len {
                return Err(ContainerError::TruncatedSection { section: name, end: payload_end, len: file_len });
            }
            let expected_len = shape
                .iter()
                .try_fold(dtype.size() as u64, |acc, &d| acc.checked_mul(d as u64));
            if expected_len != Some(length) {
                return Err(malformed(format!("length {length} does not match shape {shape:?} of {dtype:?}")));
            }
            if (offset as usize) < table_end {
                return Err(malformed("payload overlaps the section table".to_owned()));
            }
            let data = bytes[offset as usize..payload_end as usize].to_vec();
            sections.push(Section { name, dtype, shape, data });
        }
        Ok(Self { kind, sections })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>, expected: ContainerKind) -> Result<Self, ContainerError> {
        let bytes = std::fs::read(path)?;
        Self::parse(&bytes, expected)
    }
}

fn align_up(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new(ContainerKind::Tensors);
        c.push(Section::f32("a", &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        c.push(Section::i32("parents", &[3], &[-1, 0, 1]));
        c.push(Section::f64("x", &[1], &[std::f64::consts::PI]));
        c
    }

    #[test]
    fn payloads_are_aligned() {
        let bytes = sample().to_bytes();
        assert_eq!(bytes.len() % ALIGN, 8, "file ends at the last payload byte");
        for i in 0..3 {
            let at = HEADER_LEN + i * ENTRY_LEN + 72;
            let off = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
            assert_eq!(off as usize % ALIGN, 0);
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let back = Container::parse(&c.to_bytes(), ContainerKind::Tensors).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.require("parents").unwrap().to_i32().unwrap(), vec![-1, 0, 1]);
    }

    #[test]
    fn rejects_bad_magic_and_version_and_kind() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Container::parse(&bytes, ContainerKind::Tensors), Err(ContainerError::BadMagic(_))));

        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            Container::parse(&bytes, ContainerKind::Tensors),
            Err(ContainerError::VersionMismatch { found: 9 })
        ));

        let bytes = sample().to_bytes();
        assert!(matches!(Container::parse(&bytes, ContainerKind::Avatar), Err(ContainerError::WrongKind { .. })));
    }

    #[test]
    fn truncation_names_the_section() {
        let bytes = sample().to_bytes();
        // the last section's payload starts at the final 64-byte block
        let cut = &bytes[..bytes.len() - ALIGN + 4];
        match Container::parse(cut, ContainerKind::Tensors) {
            Err(ContainerError::TruncatedSection { section, .. }) => assert_eq!(section, "x"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(Container::parse(&bytes[..20], ContainerKind::Tensors), Err(ContainerError::TruncatedHeader)));
    }

    #[test]
    fn dtype_mismatch_is_reported() {
        let c = sample();
        let err = c.require("a").unwrap().to_f64().unwrap_err();
        assert!(err.to_string().contains("\"a\""));
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut c = Container::new(ContainerKind::Tensors);
        c.push(Section::f32("a", &[1], &[1.0]));
        c.push(Section::f32("a", &[1], &[2.0]));
        match Container::parse(&c.to_bytes(), ContainerKind::Tensors) {
            Err(ContainerError::MalformedSection { section, .. }) => assert_eq!(section, "a"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
