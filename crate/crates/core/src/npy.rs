//! Minimal reader/writer for the NumPy `.npy` format.
//!
//! Supports little-endian `f4`, `f8`, `i4`, `i8` and `u1` payloads in C order.
//! Writing always produces version 1.0 files with a 64-byte aligned header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub(crate) const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F4,
    F8,
    I4,
    I8,
    U1,
}

impl Dtype {
    fn parse(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(Dtype::F4),
            "<f8" => Ok(Dtype::F8),
            "<i4" => Ok(Dtype::I4),
            "<i8" => Ok(Dtype::I8),
            "|u1" | "<u1" => Ok(Dtype::U1),
            other => Err(Error::Npy(format!("unsupported dtype descriptor '{other}'"))),
        }
    }

    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F4 => "<f4",
            Dtype::F8 => "<f8",
            Dtype::I4 => "<i4",
            Dtype::I8 => "<i8",
            Dtype::U1 => "|u1",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F4 | Dtype::I4 => 4,
            Dtype::F8 | Dtype::I8 => 8,
            Dtype::U1 => 1,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, Dtype::F4 | Dtype::F8)
    }

    fn decode(self, bytes: &[u8], out: &mut Vec<f64>) {
        match self {
            Dtype::F4 => out.extend(
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64),
            ),
            Dtype::F8 => out.extend(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))),
            Dtype::I4 => out.extend(
                bytes
                    .chunks_exact(4)
                    .map(|b| i32::from_le_bytes(b.try_into().unwrap()) as f64),
            ),
            Dtype::I8 => out.extend(
                bytes
                    .chunks_exact(8)
                    .map(|b| i64::from_le_bytes(b.try_into().unwrap()) as f64),
            ),
            Dtype::U1 => out.extend(bytes.iter().map(|&b| b as f64)),
        }
    }
}

/// Parsed header of an npy file on disk.
#[derive(Debug, Clone)]
pub struct NpyFile {
    path: PathBuf,
    dtype: Dtype,
    shape: Vec<usize>,
    data_offset: u64,
}

impl NpyFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let mut r = BufReader::new(File::open(&path)?);
        let (dtype, shape, data_offset) =
            read_header(&mut r).map_err(|e| Error::Npy(format!("{}: {e}", path.display())))?;
        let file = Self {
            path,
            dtype,
            shape,
            data_offset,
        };
        let expected = data_offset + (file.len() * dtype.size()) as u64;
        let actual = std::fs::metadata(&file.path)?.len();
        if actual < expected {
            return Err(Error::Npy(format!(
                "{}: truncated payload ({actual} bytes, need {expected})",
                file.path.display()
            )));
        }
        Ok(file)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn reader(&self) -> Result<NpyReader<'_>> {
        Ok(NpyReader {
            file: self,
            inner: BufReader::new(File::open(&self.path)?),
            buf: Vec::new(),
        })
    }
}

pub struct NpyReader<'a> {
    file: &'a NpyFile,
    inner: BufReader<File>,
    buf: Vec<u8>,
}

impl NpyReader<'_> {
    fn seek_row(&mut self, row: usize) -> Result<()> {
        let offset = self.file.data_offset + (row * self.file.row_len() * self.file.dtype.size()) as u64;
        self.inner.seek(SeekFrom::Start(offset))?;
        Ok(())
    }

    fn read_raw_rows(&mut self, count: usize, out: &mut Vec<f64>) -> Result<()> {
        let bytes = count * self.file.row_len() * self.file.dtype.size();
        self.buf.resize(bytes, 0);
        self.inner.read_exact(&mut self.buf)?;
        self.file.dtype.decode(&self.buf, out);
        Ok(())
    }

    /// Rows `[start, start + len)` as a `len x row_len` matrix.
    pub fn read_rows(&mut self, start: usize, len: usize) -> Result<DMatrix<f64>> {
        let n = self.file.shape.first().copied().unwrap_or(1);
        if start + len > n {
            return Err(Error::Npy(format!(
                "row range {start}..{} exceeds {n} rows",
                start + len
            )));
        }
        self.seek_row(start)?;
        let mut vals = Vec::with_capacity(len * self.file.row_len());
        self.read_raw_rows(len, &mut vals)?;
        Ok(DMatrix::from_row_slice(len, self.file.row_len(), &vals))
    }

    /// The given (ascending) rows as a matrix; contiguous runs are read together.
    pub fn read_selected(&mut self, rows: &[usize]) -> Result<DMatrix<f64>> {
        let mut vals = Vec::with_capacity(rows.len() * self.file.row_len());
        let mut i = 0;
        while i < rows.len() {
            let mut j = i + 1;
            while j < rows.len() && rows[j] == rows[j - 1] + 1 {
                j += 1;
            }
            self.seek_row(rows[i])?;
            self.read_raw_rows(j - i, &mut vals)?;
            i = j;
        }
        Ok(DMatrix::from_row_slice(rows.len(), self.file.row_len(), &vals))
    }
}

fn read_header<R: Read>(r: &mut R) -> std::result::Result<(Dtype, Vec<usize>, u64), String> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| e.to_string())?;
    if &magic[..6] != MAGIC {
        return Err("bad magic string".into());
    }
    let major = magic[6];
    let (header_len, prefix) = match major {
        1 => {
            let mut b = [0u8; 2];
            r.read_exact(&mut b).map_err(|e| e.to_string())?;
            (u16::from_le_bytes(b) as usize, 10)
        }
        2 | 3 => {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|e| e.to_string())?;
            (u32::from_le_bytes(b) as usize, 12)
        }
        v => return Err(format!("unsupported format version {v}")),
    };
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header).map_err(|e| e.to_string())?;
    let header = String::from_utf8(header).map_err(|_| "header is not valid text".to_string())?;

    let descr = dict_value(&header, "descr")?;
    let descr = descr.trim().trim_matches(|c| c == '\'' || c == '"');
    let dtype = Dtype::parse(descr).map_err(|e| e.to_string())?;

    match dict_value(&header, "fortran_order")?.trim() {
        "False" => {}
        "True" => return Err("Fortran-ordered arrays are not supported".into()),
        other => return Err(format!("bad fortran_order value '{other}'")),
    }

    let shape_str = dict_value(&header, "shape")?;
    let shape_str = shape_str
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or("shape is not a tuple")?;
    let shape = shape_str
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.trim_end_matches('L').parse::<usize>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    Ok((dtype, shape, (prefix + header_len) as u64))
}

/// Raw text of the value for `key` in a Python dict literal.
fn dict_value<'a>(header: &'a str, key: &str) -> std::result::Result<&'a str, String> {
    let pat_single = format!("'{key}'");
    let pat_double = format!("\"{key}\"");
    let start = header
        .find(&pat_single)
        .map(|i| i + pat_single.len())
        .or_else(|| header.find(&pat_double).map(|i| i + pat_double.len()))
        .ok_or_else(|| format!("header missing '{key}'"))?;
    let rest = header[start..]
        .trim_start()
        .strip_prefix(':')
        .ok_or_else(|| format!("malformed entry for '{key}'"))?;
    let rest = rest.trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')').map(|i| i + 1)
    } else if rest.starts_with('\'') || rest.starts_with('"') {
        let q = rest.as_bytes()[0] as char;
        rest[1..].find(q).map(|i| i + 2)
    } else {
        rest.find([',', '}'])
    }
    .ok_or_else(|| format!("unterminated value for '{key}'"))?;
    Ok(&rest[..end])
}

fn write_header<W: Write>(w: &mut W, dtype: Dtype, shape: &[usize]) -> Result<()> {
    let shape_str = match shape {
        [n] => format!("({n},)"),
        dims => format!("({})", dims.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")),
    };
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {shape_str}, }}",
        dtype.descr()
    );
    // magic(6) + version(2) + len(2) + dict + '\n' padded to a multiple of 64
    let unpadded = 10 + dict.len() + 1;
    dict.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    dict.push('\n');
    let len = u16::try_from(dict.len()).map_err(|_| Error::Npy("header too long".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&[1, 0])?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(dict.as_bytes())?;
    Ok(())
}

fn write_matrix(path: &Path, m: &DMatrix<f64>, dtype: Dtype) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, dtype, &[m.nrows(), m.ncols()])?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = m[(r, c)];
            match dtype {
                Dtype::F4 => w.write_all(&(v as f32).to_le_bytes())?,
                _ => w.write_all(&v.to_le_bytes())?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Write a 2-D `<f8` array.
pub fn write_f64(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    write_matrix(path.as_ref(), m, Dtype::F8)
}

/// Write a 2-D `<f4` array (values are rounded to single precision).
pub fn write_f32(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    write_matrix(path.as_ref(), m, Dtype::F4)
}

/// Write a 1-D `<i8` array of class ids.
pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_header(&mut w, Dtype::I8, &[labels.len()])?;
    for &l in labels {
        w.write_all(&(l as i64).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a 2-D float array (1-D arrays become a single column).
pub fn read_f64(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let file = NpyFile::open(path)?;
    let (rows, cols) = match file.shape() {
        [n] => (*n, 1),
        [n, d] => (*n, *d),
        s => return Err(Error::Npy(format!("expected 1-D or 2-D array, found shape {s:?}"))),
    };
    let mut reader = file.reader()?;
    reader.seek_row(0)?;
    let mut vals = Vec::with_capacity(rows * cols);
    reader.read_raw_rows(rows, &mut vals)?;
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

/// Read a 1-D array of non-negative integral class ids.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let file = NpyFile::open(path)?;
    let n = match file.shape() {
        [n] => *n,
        [n, 1] => *n,
        s => return Err(Error::Npy(format!("labels must be 1-D, found shape {s:?}"))),
    };
    let mut reader = file.reader()?;
    reader.seek_row(0)?;
    let mut vals = Vec::with_capacity(n);
    reader.read_raw_rows(n, &mut vals)?;
    vals.into_iter()
        .map(|v| {
            if v.is_finite() && v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Npy(format!(
                    "{}: label value {v} is not a class id",
                    file.path().display()
                )))
            }
        })
        .collect()
}
