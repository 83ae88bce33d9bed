//! Minimal NPY v1.0 reader/writer for little-endian float32, C-order arrays.
//!
//! Only `<f4` payloads are accepted. Headers are padded so that the payload
//! starts on a 64-byte boundary, matching what numpy writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 6] = *b"\x93NUMPY";
const ALIGN: usize = 64;

/// A decoded NPY array: shape plus row-major payload.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NpyArray {
    pub fn into_matrix(self) -> Result<Array2<f32>> {
        match self.shape.as_slice() {
            &[rows, cols] => Array2::from_shape_vec((rows, cols), self.data)
                .map_err(|e| Error::Npy(e.to_string())),
            other => Err(Error::Npy(format!("expected a 2-d array, got shape {other:?}"))),
        }
    }

    pub fn into_vector(self) -> Result<Array1<f32>> {
        match self.shape.as_slice() {
            &[_] => Ok(Array1::from_vec(self.data)),
            other => Err(Error::Npy(format!("expected a 1-d array, got shape {other:?}"))),
        }
    }
}

fn header_text(shape: &[usize]) -> String {
    let shape_repr = match shape {
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let dict = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {shape_repr}, }}");
    // magic(6) + version(2) + header_len(2) + dict + padding + '\n'
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    format!("{dict}{}\n", " ".repeat(pad))
}

/// Encodes an array into NPY bytes.
pub fn encode(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(Error::mismatch("npy payload", expected, data.len()));
    }
    let header = header_text(shape);
    let header_len = u16::try_from(header.len())
        .map_err(|_| Error::Npy("header longer than 65535 bytes".into()))?;
    let mut out = Vec::with_capacity(10 + header.len() + data.len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes NPY bytes.
pub fn decode(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || bytes[..6] != MAGIC {
        return Err(Error::Npy("bad magic".into()));
    }
    let (major, _minor) = (bytes[6], bytes[7]);
    let (header_len, header_start) = match major {
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
        v => return Err(Error::Npy(format!("unsupported version {v}"))),
    };
    let header_end = header_start + header_len;
    let header = bytes
        .get(header_start..header_end)
        .ok_or_else(|| Error::Npy("truncated header".into()))?;
    let header =
        std::str::from_utf8(header).map_err(|_| Error::Npy("header is not valid text".into()))?;

    let descr = dict_value(header, "descr")?;
    let descr = descr.trim_matches(|c| c == '\'' || c == '"');
    if descr != "<f4" {
        return Err(Error::Npy(format!("unsupported dtype {descr}, expected <f4")));
    }
    if dict_value(header, "fortran_order")? != "False" {
        return Err(Error::Npy("fortran order is not supported".into()));
    }
    let shape = parse_shape(dict_value(header, "shape")?)?;

    let n: usize = shape.iter().product();
    let payload = &bytes[header_end..];
    if payload.len() != n * 4 {
        return Err(Error::Npy(format!(
            "payload holds {} bytes, shape {:?} needs {}",
            payload.len(),
            shape,
            n * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(NpyArray { shape, data })
}

fn dict_value<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    let pat_single = format!("'{key}'");
    let pat_double = format!("\"{key}\"");
    let start = header
        .find(&pat_single)
        .map(|i| i + pat_single.len())
        .or_else(|| header.find(&pat_double).map(|i| i + pat_double.len()))
        .ok_or_else(|| Error::Npy(format!("header has no '{key}' entry")))?;
    let rest = header[start..].trim_start();
    let rest = rest
        .strip_prefix(':')
        .ok_or_else(|| Error::Npy(format!("malformed '{key}' entry")))?
        .trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')').map(|i| i + 1)
    } else {
        rest.find(|c| c == ',' || c == '}')
    }
    .ok_or_else(|| Error::Npy(format!("unterminated '{key}' entry")))?;
    Ok(rest[..end].trim())
}

fn parse_shape(text: &str) -> Result<Vec<usize>> {
    let inner = text
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| Error::Npy(format!("malformed shape {text}")))?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Npy(format!("malformed shape {text}")))
        })
        .collect()
}

/// Reads only the header of an NPY file and returns the array shape.
pub fn read_shape(path: &Path) -> Result<Vec<usize>> {
    use std::io::Read;

    let mut file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingArray(path.to_path_buf()))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut prefix = [0u8; 12];
    file.read_exact(&mut prefix[..10]).map_err(|e| Error::io(path, e))?;
    if prefix[..6] != MAGIC {
        return Err(Error::Npy(format!("{}: bad magic", path.display())));
    }
    let header_len = if prefix[6] == 1 {
        u16::from_le_bytes([prefix[8], prefix[9]]) as usize
    } else {
        file.read_exact(&mut prefix[10..12]).map_err(|e| Error::io(path, e))?;
        u32::from_le_bytes([prefix[8], prefix[9], prefix[10], prefix[11]]) as usize
    };
    let mut header = vec![0u8; header_len];
    file.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    let header = std::str::from_utf8(&header)
        .map_err(|_| Error::Npy(format!("{}: header is not valid text", path.display())))?;
    parse_shape(dict_value(header, "shape")?)
}

pub fn read(path: &Path) -> Result<NpyArray> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingArray(path.to_path_buf()))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    decode(&bytes).map_err(|e| match e {
        Error::Npy(msg) => Error::Npy(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    let bytes = encode(shape, data)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f32>> {
    read(path)?.into_matrix()
}

pub fn read_vector(path: &Path) -> Result<Array1<f32>> {
    read(path)?.into_vector()
}

pub fn write_matrix(path: &Path, m: ArrayView2<'_, f32>) -> Result<()> {
    let data: Vec<f32> = m.iter().copied().collect();
    write(path, &[m.nrows(), m.ncols()], &data)
}

pub fn write_vector(path: &Path, v: &[f32]) -> Result<()> {
    write(path, &[v.len()], v)
}

/// Writes an f64 matrix, narrowing to float32.
pub fn write_matrix_f64(path: &Path, m: ArrayView2<'_, f64>) -> Result<()> {
    let data: Vec<f32> = m.iter().map(|&v| v as f32).collect();
    write(path, &[m.nrows(), m.ncols()], &data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_aligned_and_numpy_shaped() {
        let bytes = encode(&[3, 4], &[0.0; 12]).unwrap();
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + header_len) % 64, 0);
        let header = std::str::from_utf8(&bytes[10..10 + header_len]).unwrap();
        assert!(header.starts_with("{'descr': '<f4', 'fortran_order': False, 'shape': (3, 4), }"));
        assert!(header.ends_with('\n'));

        let one_d = encode(&[5], &[0.0; 5]).unwrap();
        let h = std::str::from_utf8(&one_d[10..]).unwrap();
        assert!(h.contains("'shape': (5,)"));
    }

    #[test]
    fn rejects_other_dtypes_and_fortran_order() {
        let mut bytes = encode(&[2], &[1.0, 2.0]).unwrap();
        let text = String::from_utf8_lossy(&bytes[10..]).replace("<f4", "<f8");
        bytes.truncate(10);
        bytes.extend_from_slice(text.as_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Npy(_))));

        let bytes = encode(&[2], &[1.0, 2.0]).unwrap();
        let text = String::from_utf8_lossy(&bytes).replace("False", "True ");
        assert!(decode(text.as_bytes()).is_err());
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut bytes = encode(&[2, 2], &[1.0; 4]).unwrap();
        bytes.pop();
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn missing_file_is_reported_as_missing_array() {
        let err = read(Path::new("/nonexistent/a.npy")).unwrap_err();
        assert!(err.to_string().contains("missing array"));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_identical(
            rows in 1usize..6,
            cols in 1usize..6,
            bits in proptest::collection::vec(any::<u32>(), 36),
        ) {
            let data: Vec<f32> = bits[..rows * cols].iter().map(|b| f32::from_bits(*b)).collect();
            let back = decode(&encode(&[rows, cols], &data).unwrap()).unwrap();
            prop_assert_eq!(back.shape, vec![rows, cols]);
            let a: Vec<u32> = data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
