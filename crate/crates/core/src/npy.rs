//! NPY array files: little-endian, C-order, format version 1.0 on write
//! (1.0 through 3.0 accepted on read).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Clone, Debug, PartialEq)]
pub enum NpyData {
    U8(Vec<u8>),
    I64(Vec<i64>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl NpyData {
    fn len(&self) -> usize {
        match self {
            NpyData::U8(v) => v.len(),
            NpyData::I64(v) => v.len(),
            NpyData::F32(v) => v.len(),
            NpyData::F64(v) => v.len(),
        }
    }

    fn descr(&self) -> &'static str {
        match self {
            NpyData::U8(_) => "|u1",
            NpyData::I64(_) => "<i8",
            NpyData::F32(_) => "<f4",
            NpyData::F64(_) => "<f8",
        }
    }
}

/// An n-dimensional array as stored in an `.npy` file.
#[derive(Clone, Debug, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn new(shape: Vec<usize>, data: NpyData) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Npy(format!(
                "shape {shape:?} holds {n} elements but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn u8(shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        Self::new(shape, NpyData::U8(data))
    }

    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, NpyData::F32(data))
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.len() == 0
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            NpyData::U8(v) => Some(v),
            _ => None,
        }
    }

    /// Values widened or narrowed to `f32`.
    pub fn to_f32_vec(&self) -> Vec<f32> {
        match &self.data {
            NpyData::U8(v) => v.iter().map(|&x| x as f32).collect(),
            NpyData::I64(v) => v.iter().map(|&x| x as f32).collect(),
            NpyData::F32(v) => v.clone(),
            NpyData::F64(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = match self.shape.len() {
            0 => "()".to_string(),
            1 => format!("({},)", self.shape[0]),
            _ => format!(
                "({})",
                self.shape
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        };
        let mut header = format!(
            "{{'descr': '{}', 'fortran_order': False, 'shape': {shape}, }}",
            self.data.descr()
        );
        // magic(6) + version(2) + len(2) + header + '\n' must be a multiple of 64
        let unpadded = 10 + header.len() + 1;
        header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
        header.push('\n');

        let mut out = Vec::with_capacity(10 + header.len() + self.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        match &self.data {
            NpyData::U8(v) => out.extend_from_slice(v),
            NpyData::I64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            NpyData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            NpyData::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..6] != MAGIC {
            return Err(Error::Npy("missing NPY magic string".into()));
        }
        let (header_len, start) = match bytes[6] {
            1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
            2 | 3 => {
                if bytes.len() < 12 {
                    return Err(Error::Npy("truncated header".into()));
                }
                (
                    u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                    12,
                )
            }
            v => return Err(Error::Npy(format!("unsupported format version {v}"))),
        };
        let header = bytes
            .get(start..start + header_len)
            .ok_or_else(|| Error::Npy("truncated header".into()))?;
        let header =
            std::str::from_utf8(header).map_err(|_| Error::Npy("header is not text".into()))?;
        let descr = dict_value(header, "descr")?;
        let descr = descr.trim_matches(|c| c == '\'' || c == '"');
        if dict_value(header, "fortran_order")?.trim() != "False" {
            return Err(Error::Npy(
                "fortran-ordered arrays are not supported".into(),
            ));
        }
        let shape = parse_shape(&dict_value(header, "shape")?)?;
        let n: usize = shape.iter().product();
        let body = &bytes[start + header_len..];

        fn take<const W: usize>(
            body: &[u8],
            n: usize,
        ) -> Result<impl Iterator<Item = [u8; W]> + '_> {
            if body.len() < n * W {
                return Err(Error::Npy(format!(
                    "expected {} data bytes, found {}",
                    n * W,
                    body.len()
                )));
            }
            Ok(body[..n * W]
                .chunks_exact(W)
                .map(|c| <[u8; W]>::try_from(c).expect("chunk width")))
        }

        let data = match descr {
            "|u1" | "<u1" | "u1" | "|b1" => {
                if body.len() < n {
                    return Err(Error::Npy(format!(
                        "expected {n} data bytes, found {}",
                        body.len()
                    )));
                }
                NpyData::U8(body[..n].to_vec())
            }
            "<i8" => NpyData::I64(take::<8>(body, n)?.map(i64::from_le_bytes).collect()),
            "<f4" => NpyData::F32(take::<4>(body, n)?.map(f32::from_le_bytes).collect()),
            "<f8" => NpyData::F64(take::<8>(body, n)?.map(f64::from_le_bytes).collect()),
            other => return Err(Error::Npy(format!("unsupported dtype {other}"))),
        };
        Self::new(shape, data)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Raw text of `key`'s value in the header's Python dict literal.
fn dict_value(header: &str, key: &str) -> Result<String> {
    let needle_sq = format!("'{key}'");
    let needle_dq = format!("\"{key}\"");
    let pos = header
        .find(&needle_sq)
        .or_else(|| header.find(&needle_dq))
        .ok_or_else(|| Error::Npy(format!("header lacks `{key}`")))?;
    let rest = &header[pos + key.len() + 2..];
    let rest = rest
        .trim_start()
        .strip_prefix(':')
        .ok_or_else(|| Error::Npy(format!("malformed `{key}` entry")))?
        .trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')').map(|i| i + 1)
    } else {
        rest.find(',').or_else(|| rest.find('}'))
    }
    .ok_or_else(|| Error::Npy(format!("unterminated `{key}` entry")))?;
    Ok(rest[..end].to_string())
}

fn parse_shape(text: &str) -> Result<Vec<usize>> {
    let inner = text
        .trim()
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| Error::Npy(format!("bad shape {text}")))?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim_end_matches('L')
                .parse::<usize>()
                .map_err(|_| Error::Npy(format!("bad shape entry {s}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_64_byte_aligned_v1() {
        let a = NpyArray::u8(vec![2, 3], vec![1, 2, 3, 4, 5, 6]).unwrap();
        let bytes = a.to_bytes();
        assert_eq!(&bytes[..8], b"\x93NUMPY\x01\x00");
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0);
        let header = std::str::from_utf8(&bytes[10..10 + hlen]).unwrap();
        assert!(header.starts_with("{'descr': '|u1', 'fortran_order': False, 'shape': (2, 3), }"));
        assert!(header.ends_with('\n'));
        assert_eq!(&bytes[10 + hlen..], &[1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn scalar_and_vector_shapes() {
        let v = NpyArray::f32(vec![3], vec![1.0, -2.5, 3.25]).unwrap();
        assert!(String::from_utf8_lossy(&v.to_bytes()).contains("'shape': (3,)"));
        assert_eq!(NpyArray::from_bytes(&v.to_bytes()).unwrap(), v);
        let s = NpyArray::new(vec![], NpyData::F64(vec![7.0])).unwrap();
        assert_eq!(NpyArray::from_bytes(&s.to_bytes()).unwrap(), s);
    }

    #[test]
    fn reads_numpy_written_header() {
        // header as emitted by numpy.save for np.zeros((2,2), dtype='<f8')
        let mut bytes = b"\x93NUMPY\x01\x00".to_vec();
        let mut h = "{'descr': '<f8', 'fortran_order': False, 'shape': (2, 2), }".to_string();
        while (10 + h.len() + 1) % 64 != 0 {
            h.push(' ');
        }
        h.push('\n');
        bytes.extend_from_slice(&(h.len() as u16).to_le_bytes());
        bytes.extend_from_slice(h.as_bytes());
        bytes.extend_from_slice(&[0u8; 32]);
        let a = NpyArray::from_bytes(&bytes).unwrap();
        assert_eq!(a.shape, vec![2, 2]);
        assert_eq!(a.data, NpyData::F64(vec![0.0; 4]));
    }

    #[test]
    fn rejects_truncated_and_fortran() {
        let a = NpyArray::u8(vec![4], vec![1, 2, 3, 4]).unwrap();
        let b = a.to_bytes();
        assert!(NpyArray::from_bytes(&b[..b.len() - 1]).is_err());
        let f = String::from_utf8_lossy(&b).replace("False", "True ");
        assert!(NpyArray::from_bytes(f.as_bytes()).is_err());
        assert!(NpyArray::from_bytes(b"not an npy").is_err());
    }
}
