//! Row-block sources for multi-pass streaming over feature matrices.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::npy::{self, NpyFile};

/// Environment variable overriding the layer-block cache location.
pub const CACHE_DIR_ENV: &str = "SKETCHFER_CACHE_DIR";

/// A re-iterable sequence of row blocks. Every call to `visit_blocks` must
/// yield the same rows in the same order.
pub trait BlockSource: Sync {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    fn visit_blocks(&self, f: &mut dyn FnMut(&DMatrix<f64>) -> Result<()>) -> Result<()>;

    fn collect(&self) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.n_rows(), self.n_cols());
        let mut at = 0;
        self.visit_blocks(&mut |b| {
            if at + b.nrows() > out.nrows() || b.ncols() != out.ncols() {
                return Err(Error::DimensionMismatch("block exceeds declared shape".into()));
            }
            out.rows_mut(at, b.nrows()).copy_from(b);
            at += b.nrows();
            Ok(())
        })?;
        if at != out.nrows() {
            return Err(Error::RowCountMismatch {
                expected: out.nrows(),
                actual: at,
            });
        }
        Ok(out)
    }
}

/// Borrowed in-memory matrix split into fixed-size row blocks.
#[derive(Debug, Clone, Copy)]
pub struct InMemory<'a> {
    data: &'a DMatrix<f64>,
    block_rows: usize,
}

impl<'a> InMemory<'a> {
    pub fn new(data: &'a DMatrix<f64>, block_rows: usize) -> Self {
        Self {
            data,
            block_rows: block_rows.max(1),
        }
    }
}

impl BlockSource for InMemory<'_> {
    fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    fn n_cols(&self) -> usize {
        self.data.ncols()
    }

    fn visit_blocks(&self, f: &mut dyn FnMut(&DMatrix<f64>) -> Result<()>) -> Result<()> {
        if self.block_rows >= self.data.nrows() {
            return f(self.data);
        }
        let mut start = 0;
        while start < self.data.nrows() {
            let len = self.block_rows.min(self.data.nrows() - start);
            f(&self.data.rows(start, len).into_owned())?;
            start += len;
        }
        Ok(())
    }

    fn collect(&self) -> Result<DMatrix<f64>> {
        Ok(self.data.clone())
    }
}

/// Rows of a 2-D npy file, optionally restricted to an ascending selection,
/// decoded to `f64` block by block.
#[derive(Debug, Clone)]
pub struct NpyRows {
    file: NpyFile,
    rows: Option<Vec<usize>>,
    block_rows: usize,
}

impl NpyRows {
    pub fn open(path: impl AsRef<Path>, rows: Option<Vec<usize>>, block_rows: usize) -> Result<Self> {
        let file = NpyFile::open(path)?;
        if file.shape().len() != 2 {
            return Err(Error::Npy(format!(
                "{}: expected a 2-D array, found shape {:?}",
                file.path().display(),
                file.shape()
            )));
        }
        if let Some(sel) = &rows {
            if sel.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidParameter(
                    "row selection must be strictly ascending".into(),
                ));
            }
            if sel.last().is_some_and(|&r| r >= file.shape()[0]) {
                return Err(Error::InvalidParameter("row selection exceeds file rows".into()));
            }
        }
        Ok(Self {
            file,
            rows,
            block_rows: block_rows.max(1),
        })
    }
}

impl BlockSource for NpyRows {
    fn n_rows(&self) -> usize {
        self.rows.as_ref().map_or(self.file.shape()[0], Vec::len)
    }

    fn n_cols(&self) -> usize {
        self.file.shape()[1]
    }

    fn visit_blocks(&self, f: &mut dyn FnMut(&DMatrix<f64>) -> Result<()>) -> Result<()> {
        let mut reader = self.file.reader()?;
        match &self.rows {
            None => {
                let n = self.file.shape()[0];
                let mut start = 0;
                while start < n {
                    let len = self.block_rows.min(n - start);
                    f(&reader.read_rows(start, len)?)?;
                    start += len;
                }
            }
            Some(sel) => {
                for chunk in sel.chunks(self.block_rows) {
                    f(&reader.read_selected(chunk)?)?;
                }
            }
        }
        Ok(())
    }
}

/// Spills the blocks of a source to per-block npy files on the first pass
/// and replays them on later passes.
#[derive(Debug)]
pub struct BlockCache {
    dir: PathBuf,
    n_rows: usize,
    n_cols: usize,
    blocks: Vec<PathBuf>,
}

impl BlockCache {
    /// Default cache root: `$SKETCHFER_CACHE_DIR`, else a `sketchfer-cache`
    /// directory under the system temp dir.
    pub fn default_root() -> PathBuf {
        std::env::var_os(CACHE_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| std::env::temp_dir().join("sketchfer-cache"))
    }

    /// Stream `source` once, passing every block to `on_block` while writing
    /// it under `dir`.
    pub fn fill(
        dir: impl Into<PathBuf>,
        source: &dyn BlockSource,
        on_block: &mut dyn FnMut(&DMatrix<f64>) -> Result<()>,
    ) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut blocks = Vec::new();
        source.visit_blocks(&mut |b| {
            let path = dir.join(format!("block_{:06}.npy", blocks.len()));
            npy::write_f64(&path, b)?;
            blocks.push(path);
            on_block(b)
        })?;
        Ok(Self {
            dir,
            n_rows: source.n_rows(),
            n_cols: source.n_cols(),
            blocks,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl BlockSource for BlockCache {
    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn n_cols(&self) -> usize {
        self.n_cols
    }

    fn visit_blocks(&self, f: &mut dyn FnMut(&DMatrix<f64>) -> Result<()>) -> Result<()> {
        for path in &self.blocks {
            f(&npy::read_f64(path)?)?;
        }
        Ok(())
    }
}

impl Drop for BlockCache {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.dir);
    }
}
