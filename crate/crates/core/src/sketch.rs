//! Implicit stacked CountSketch.
//!
//! A [`SketchSpec`] describes a random `M x n` matrix with exactly `s` nonzeros
//! per column: `s` independent CountSketches of `M / s` buckets each, stacked
//! vertically, with entries `±1/√s`. The matrix is never stored. The bucket and
//! sign of item `i` in stack `j` are a pure function of `(seed, j, i)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::stream::BlockSource;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Upper bound on the number of nonzeros [`materialize`] will produce.
pub const MATERIALIZE_LIMIT: usize = 10_000_000;

/// SplitMix64 finalizer.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent 64-bit seed from a parent seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(mix64(seed ^ GOLDEN).wrapping_add(tag.wrapping_mul(GOLDEN)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Hashing {
    Count {
        seed: u64,
    },
    /// `S = I`. Only valid with `n_buckets == n_input` and one stack; used
    /// where a full landmark set is wanted.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SketchSpec {
    hashing: Hashing,
    n_input: usize,
    n_buckets: usize,
    n_stacks: usize,
}

/// Build a stacked CountSketch over `n_input` items.
pub fn make_sketch(seed: u64, n_input: usize, n_buckets: usize, n_stacks: usize) -> Result<SketchSpec> {
    if n_stacks == 0 || n_buckets < n_stacks {
        return Err(Error::InvalidDimensions(format!(
            "need n_buckets >= n_stacks >= 1, got n_buckets={n_buckets}, n_stacks={n_stacks}"
        )));
    }
    if !n_buckets.is_multiple_of(n_stacks) {
        return Err(Error::InvalidDimensions(format!(
            "n_buckets={n_buckets} is not divisible by n_stacks={n_stacks}"
        )));
    }
    if n_input == 0 {
        return Err(Error::InvalidDimensions("n_input must be at least 1".into()));
    }
    Ok(SketchSpec {
        hashing: Hashing::Count { seed },
        n_input,
        n_buckets,
        n_stacks,
    })
}

impl SketchSpec {
    /// The identity "sketch" over `n` items (one stack, `n` buckets).
    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimensions("n_input must be at least 1".into()));
        }
        Ok(SketchSpec {
            hashing: Hashing::Identity,
            n_input: n,
            n_buckets: n,
            n_stacks: 1,
        })
    }

    pub fn n_input(&self) -> usize {
        self.n_input
    }

    pub fn n_buckets(&self) -> usize {
        self.n_buckets
    }

    pub fn n_stacks(&self) -> usize {
        self.n_stacks
    }

    pub fn seed(&self) -> Option<u64> {
        match self.hashing {
            Hashing::Count { seed } => Some(seed),
            Hashing::Identity => None,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.hashing == Hashing::Identity
    }

    pub fn buckets_per_stack(&self) -> usize {
        self.n_buckets / self.n_stacks
    }

    /// Magnitude of every nonzero entry, `1/√s`.
    pub fn scale(&self) -> f64 {
        1.0 / (self.n_stacks as f64).sqrt()
    }

    /// Global bucket index and signed entry of `item` in `stack`.
    #[inline]
    pub fn entry(&self, stack: usize, item: usize) -> (usize, f64) {
        match self.hashing {
            Hashing::Identity => (item, 1.0),
            Hashing::Count { seed } => {
                let key = mix64(seed.wrapping_add(GOLDEN.wrapping_mul(stack as u64 + 1)));
                let h = mix64(key ^ mix64((item as u64).wrapping_add(GOLDEN)));
                let width = self.buckets_per_stack() as u64;
                let local = (((h >> 32) * width) >> 32) as usize;
                let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
                (stack * self.buckets_per_stack() + local, sign * self.scale())
            }
        }
    }

    fn check_item_range(&self, item: usize) -> Result<()> {
        if item >= self.n_input {
            return Err(Error::RowCountMismatch {
                expected: self.n_input,
                actual: item + 1,
            });
        }
        Ok(())
    }
}

/// A per-layer feature matrix (rows are samples).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: DMatrix<f64>,
    pub layer_id: usize,
}

impl FeatureMatrix {
    pub fn new(data: DMatrix<f64>, layer_id: usize) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData(format!("layer {layer_id}")));
        }
        Ok(Self { data, layer_id })
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }
}

/// Streaming accumulator for `S·X`. Rows must arrive in order.
#[derive(Debug)]
pub struct RowSketcher<'a> {
    spec: &'a SketchSpec,
    acc: Option<DMatrix<f64>>,
    rows_seen: usize,
    // (bucket, value) per stack for the current block, reused across blocks
    scratch: Vec<(usize, f64)>,
}

impl<'a> RowSketcher<'a> {
    pub fn new(spec: &'a SketchSpec) -> Self {
        Self {
            spec,
            acc: None,
            rows_seen: 0,
            scratch: Vec::new(),
        }
    }

    pub fn push_block(&mut self, block: &DMatrix<f64>) -> Result<()> {
        let d = block.ncols();
        let acc = self.acc.get_or_insert_with(|| DMatrix::zeros(self.spec.n_buckets, d));
        if acc.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "block has {d} columns, previous blocks had {}",
                acc.ncols()
            )));
        }
        if block.nrows() == 0 {
            return Ok(());
        }
        self.spec.check_item_range(self.rows_seen + block.nrows() - 1)?;

        let s = self.spec.n_stacks;
        self.scratch.clear();
        for r in 0..block.nrows() {
            for j in 0..s {
                self.scratch.push(self.spec.entry(j, self.rows_seen + r));
            }
        }
        for c in 0..d {
            let src = block.column(c);
            let mut dst = acc.column_mut(c);
            for (r, x) in src.iter().enumerate() {
                for &(bucket, val) in &self.scratch[r * s..(r + 1) * s] {
                    dst[bucket] += val * x;
                }
            }
        }
        self.rows_seen += block.nrows();
        Ok(())
    }

    pub fn finish(self) -> Result<DMatrix<f64>> {
        if self.rows_seen != self.spec.n_input {
            return Err(Error::RowCountMismatch {
                expected: self.spec.n_input,
                actual: self.rows_seen,
            });
        }
        Ok(self.acc.unwrap_or_else(|| DMatrix::zeros(self.spec.n_buckets, 0)))
    }
}

/// `S·X` in one pass over the row blocks of `source`.
pub fn sketch_rows(spec: &SketchSpec, source: &dyn BlockSource) -> Result<DMatrix<f64>> {
    let mut sketcher = RowSketcher::new(spec);
    source.visit_blocks(&mut |block| sketcher.push_block(block))?;
    let out = sketcher.finish()?;
    if out.ncols() != source.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "source declares {} columns, blocks had {}",
            source.n_cols(),
            out.ncols()
        )));
    }
    Ok(out)
}

/// Feature hashing `X·S^T` (`N x M`): each column of `X` lands in its `s`
/// buckets with the hashed sign.
pub fn sketch_features(spec: &SketchSpec, x: &FeatureMatrix) -> Result<DMatrix<f64>> {
    if spec.n_input != x.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "sketch hashes {} features, matrix has {} columns",
            spec.n_input,
            x.n_cols()
        )));
    }
    let mut out = DMatrix::zeros(x.n_rows(), spec.n_buckets);
    for c in 0..x.n_cols() {
        for j in 0..spec.n_stacks {
            let (bucket, val) = spec.entry(j, c);
            out.column_mut(bucket).axpy(val, &x.data.column(c), 1.0);
        }
    }
    Ok(out)
}

/// Explicit sparse form of a sketch, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSketch {
    pub n_rows: usize,
    pub n_cols: usize,
    /// `columns[i]` lists the `(row, value)` nonzeros of column `i`.
    pub columns: Vec<Vec<(usize, f64)>>,
}

impl SparseSketch {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for (c, col) in self.columns.iter().enumerate() {
            for &(r, v) in col {
                m[(r, c)] += v;
            }
        }
        m
    }
}

pub fn materialize(spec: &SketchSpec) -> Result<SparseSketch> {
    let entries = spec.n_input.saturating_mul(spec.n_stacks);
    if entries > MATERIALIZE_LIMIT {
        return Err(Error::TooLarge {
            entries,
            limit: MATERIALIZE_LIMIT,
        });
    }
    let columns = (0..spec.n_input)
        .map(|i| (0..spec.n_stacks).map(|j| spec.entry(j, i)).collect())
        .collect();
    Ok(SparseSketch {
        n_rows: spec.n_buckets,
        n_cols: spec.n_input,
        columns,
    })
}
