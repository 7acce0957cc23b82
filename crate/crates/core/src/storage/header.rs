//! Binary container header.
//!
//! ```text
//! magic        8 bytes  "SAVUCNT1"
//! version      u32
//! dtype        u8       0 = u16, 1 = f32, 2 = f64
//! ndims        u8       <= 8
//! shape        u64 x ndims
//! chunk_shape  u64 x ndims
//! name         u16 length + UTF-8
//! labels       u8 count, each u16 length + UTF-8
//! patterns     u8 count, each { u16 length + UTF-8 name,
//!                               u8 n_core, u8 x n_core,
//!                               u8 n_slice, u8 x n_slice }
//! ```
//!
//! All integers are little-endian. The chunk index (one u64 per chunk,
//! row-major over the chunk grid) follows immediately.

use std::collections::BTreeMap;

use crate::model::{DType, DatasetDescriptor, Pattern};

use super::StorageError;

pub const MAGIC: &[u8; 8] = b"SAVUCNT1";
pub const VERSION: u32 = 1;
pub const MAX_DIMS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerHeader {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub chunk_shape: Vec<usize>,
    pub name: String,
    pub axis_labels: Vec<String>,
    pub patterns: Vec<Pattern>,
}

impl ContainerHeader {
    pub fn new(descriptor: &DatasetDescriptor, chunk_shape: &[usize]) -> Result<Self, StorageError> {
        descriptor.validate()?;
        let header = ContainerHeader {
            dtype: descriptor.dtype,
            shape: descriptor.shape.clone(),
            chunk_shape: chunk_shape.to_vec(),
            name: descriptor.name.clone(),
            axis_labels: descriptor.axis_labels.clone(),
            patterns: descriptor.patterns.values().cloned().collect(),
        };
        header.check()?;
        Ok(header)
    }

    fn check(&self) -> Result<(), StorageError> {
        let ndims = self.shape.len();
        if ndims > MAX_DIMS {
            return Err(StorageError::CorruptHeader(format!("{ndims} dimensions exceeds {MAX_DIMS}")));
        }
        if self.chunk_shape.len() != ndims
            || self
                .chunk_shape
                .iter()
                .zip(&self.shape)
                .any(|(&c, &s)| c == 0 || c > s)
        {
            return Err(StorageError::InvalidChunkShape {
                shape: self.shape.clone(),
                chunk: self.chunk_shape.clone(),
            });
        }
        if self.patterns.len() > u8::MAX as usize || self.axis_labels.len() > u8::MAX as usize {
            return Err(StorageError::CorruptHeader("too many patterns or labels".into()));
        }
        Ok(())
    }

    pub fn descriptor(&self) -> DatasetDescriptor {
        DatasetDescriptor {
            name: self.name.clone(),
            shape: self.shape.clone(),
            dtype: self.dtype,
            axis_labels: self.axis_labels.clone(),
            patterns: self
                .patterns
                .iter()
                .map(|p| (p.name.clone(), p.clone()))
                .collect(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn pattern(&self, name: &str) -> Option<&Pattern> {
        self.patterns.iter().find(|p| p.name == name)
    }

    pub fn encode(&self) -> Result<Vec<u8>, StorageError> {
        let mut out = Vec::with_capacity(256);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype.code());
        out.push(self.shape.len() as u8);
        for &s in &self.shape {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        for &c in &self.chunk_shape {
            out.extend_from_slice(&(c as u64).to_le_bytes());
        }
        put_str(&mut out, &self.name)?;
        out.push(self.axis_labels.len() as u8);
        for label in &self.axis_labels {
            put_str(&mut out, label)?;
        }
        out.push(self.patterns.len() as u8);
        for p in &self.patterns {
            put_str(&mut out, &p.name)?;
            out.push(p.core_dims.len() as u8);
            out.extend(p.core_dims.iter().map(|&d| d as u8));
            out.push(p.slice_dims.len() as u8);
            out.extend(p.slice_dims.iter().map(|&d| d as u8));
        }
        Ok(out)
    }

    /// Decodes a header, returning it with its encoded length.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), StorageError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(StorageError::BadMagic);
        }
        let mut r = Reader { bytes, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != VERSION {
            return Err(StorageError::UnsupportedVersion(version));
        }
        let dtype = DType::from_code(r.u8()?)?;
        let ndims = r.u8()? as usize;
        if ndims > MAX_DIMS {
            return Err(StorageError::CorruptHeader(format!("{ndims} dimensions")));
        }
        let shape = (0..ndims).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        let chunk_shape = (0..ndims).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        let name = r.string()?;
        let n_labels = r.u8()?;
        let axis_labels = (0..n_labels).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
        let n_patterns = r.u8()?;
        let mut patterns = Vec::with_capacity(n_patterns as usize);
        for _ in 0..n_patterns {
            let pname = r.string()?;
            let n_core = r.u8()?;
            let core = (0..n_core).map(|_| r.u8().map(usize::from)).collect::<Result<Vec<_>, _>>()?;
            let n_slice = r.u8()?;
            let slice = (0..n_slice).map(|_| r.u8().map(usize::from)).collect::<Result<Vec<_>, _>>()?;
            let pattern = Pattern::new(pname, &core, &slice);
            pattern.validate(ndims)?;
            patterns.push(pattern);
        }
        let header = ContainerHeader {
            dtype,
            shape,
            chunk_shape,
            name,
            axis_labels,
            patterns,
        };
        if header.shape.contains(&0) {
            return Err(StorageError::CorruptHeader("zero extent".into()));
        }
        header.check()?;
        Ok((header, r.pos))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), StorageError> {
    let len = u16::try_from(s.len()).map_err(|_| StorageError::CorruptHeader(format!("string too long: {} bytes", s.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], StorageError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(StorageError::CorruptHeader(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, StorageError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, StorageError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, StorageError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, StorageError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, StorageError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| StorageError::CorruptHeader(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> ContainerHeader {
        let d = DatasetDescriptor::new("tomo", vec![3, 5], DType::U16, vec!["y.pixel".into(), "x.pixel".into()])
            .with_pattern(Pattern::new("ROWS", &[1], &[0]));
        ContainerHeader::new(&d, &[2, 2]).unwrap()
    }

    #[test]
    fn exact_bytes() {
        let bytes = header().encode().unwrap();
        let mut expected = b"SAVUCNT1".to_vec();
        expected.extend_from_slice(&[1, 0, 0, 0]); // version
        expected.extend_from_slice(&[0, 2]); // dtype u16, ndims
        for v in [3u64, 5, 2, 2] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        expected.extend_from_slice(&[4, 0]);
        expected.extend_from_slice(b"tomo");
        expected.push(2);
        expected.extend_from_slice(&[7, 0]);
        expected.extend_from_slice(b"y.pixel");
        expected.extend_from_slice(&[7, 0]);
        expected.extend_from_slice(b"x.pixel");
        expected.push(1);
        expected.extend_from_slice(&[4, 0]);
        expected.extend_from_slice(b"ROWS");
        expected.extend_from_slice(&[1, 1, 1, 0]);
        assert_eq!(bytes, expected);
        let (decoded, len) = ContainerHeader::decode(&bytes).unwrap();
        assert_eq!(decoded, header());
        assert_eq!(len, bytes.len());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(ContainerHeader::decode(b"SAVU"), Err(StorageError::BadMagic)));
        assert!(matches!(ContainerHeader::decode(b"NOTMAGIC...."), Err(StorageError::BadMagic)));
        let mut bytes = header().encode().unwrap();
        bytes[8] = 7;
        assert!(matches!(ContainerHeader::decode(&bytes), Err(StorageError::UnsupportedVersion(7))));
        let bytes = header().encode().unwrap();
        assert!(matches!(
            ContainerHeader::decode(&bytes[..20]),
            Err(StorageError::CorruptHeader(_))
        ));
    }

    #[test]
    fn chunk_shape_bounds() {
        let d = DatasetDescriptor::new("t", vec![4, 4], DType::F32, vec![String::new(); 2]);
        assert!(matches!(
            ContainerHeader::new(&d, &[0, 2]),
            Err(StorageError::InvalidChunkShape { .. })
        ));
        assert!(matches!(
            ContainerHeader::new(&d, &[5, 2]),
            Err(StorageError::InvalidChunkShape { .. })
        ));
        assert!(ContainerHeader::new(&d, &[4, 1]).is_ok());
    }
}
