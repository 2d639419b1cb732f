//! Dense tensor values and the eager kernels every graph op lowers to.
//!
//! Tensors are row-major, immutable once built, and carry one of three
//! element types. Kernels are pure functions over `&TensorValue`.

mod elementwise;
pub(crate) mod layout;
pub(crate) mod linalg;
pub(crate) mod reduce;

use std::fmt;

pub use elementwise::{binary, broadcast_shapes, select, unary, BinaryOp, UnaryOp};
pub use layout::{
    concat, gather_rows, length, merge_leading, range, reshape, reshape_leading, scatter_add_rows,
    scatter_rows, scatter_update, slice, stack, tile_leading, transpose, where_true, zeros,
};
pub use linalg::{conv2d, conv2d_backprop_filter, conv2d_backprop_input, conv_padding, matmul};
pub use reduce::{broadcast_to, normalize_axes, reduce_sum, sum_to_shape, sum_to_shape_axes};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("incompatible shapes: {0}")]
    IncompatibleShapes(String),
    #[error("dtype mismatch: expected {expected}, found {found}")]
    DTypeMismatch { expected: DType, found: DType },
    #[error("rank error: {0}")]
    RankError(String),
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: i64, rank: usize },
    #[error("duplicate axis {0}")]
    DuplicateAxis(i64),
    #[error("index {index} out of bounds for dimension of size {bound}")]
    IndexOutOfBounds { index: i64, bound: usize },
    #[error("index {0} appears in more than one index set")]
    IndexCollision(i64),
    #[error("index sets cover {covered} of {total} rows")]
    IncompleteCover { covered: usize, total: usize },
    #[error("{0:?} is not a permutation")]
    BadPermutation(Vec<usize>),
    #[error("data length {len} does not match shape {shape}")]
    DataLength { len: usize, shape: Shape },
    #[error("integer division by zero")]
    DivisionByZero,
    #[error("negative count {0}")]
    NegativeCount(i64),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

// ── DType ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DType {
    F64,
    I64,
    Bool,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F64 => "f64",
            DType::I64 => "i64",
            DType::Bool => "bool",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "f64" => Some(DType::F64),
            "i64" => Some(DType::I64),
            "bool" => Some(DType::Bool),
            _ => None,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

// ── Shape ──────────────────────────────────────────────────────────

/// Ordered list of dimension sizes. Rank 0 is a scalar.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        Shape(dims.into())
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.0.is_empty()
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }

    /// A new shape with `lead` prepended.
    pub fn prepend(&self, lead: usize) -> Shape {
        let mut dims = Vec::with_capacity(self.0.len() + 1);
        dims.push(lead);
        dims.extend_from_slice(&self.0);
        Shape(dims)
    }

    /// The shape without its leading dimension.
    pub fn tail(&self) -> Shape {
        Shape(self.0.get(1..).unwrap_or(&[]).to_vec())
    }

    pub fn concat(&self, other: &Shape) -> Shape {
        let mut dims = self.0.clone();
        dims.extend_from_slice(&other.0);
        Shape(dims)
    }

    pub fn into_dims(self) -> Vec<usize> {
        self.0
    }
}

impl From<Vec<usize>> for Shape {
    fn from(v: Vec<usize>) -> Self {
        Shape(v)
    }
}

impl From<&[usize]> for Shape {
    fn from(v: &[usize]) -> Self {
        Shape(v.to_vec())
    }
}

impl<const N: usize> From<[usize; N]> for Shape {
    fn from(v: [usize; N]) -> Self {
        Shape(v.to_vec())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

// ── Buffer / TensorValue ───────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum Buffer {
    F64(Vec<f64>),
    I64(Vec<i64>),
    Bool(Vec<bool>),
}

impl Buffer {
    pub fn dtype(&self) -> DType {
        match self {
            Buffer::F64(_) => DType::F64,
            Buffer::I64(_) => DType::I64,
            Buffer::Bool(_) => DType::Bool,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Buffer::F64(v) => v.len(),
            Buffer::I64(v) => v.len(),
            Buffer::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros(dtype: DType, len: usize) -> Buffer {
        match dtype {
            DType::F64 => Buffer::F64(vec![0.0; len]),
            DType::I64 => Buffer::I64(vec![0; len]),
            DType::Bool => Buffer::Bool(vec![false; len]),
        }
    }

    /// New buffer holding `self[idx[k]]` at position `k`.
    pub(crate) fn take(&self, idx: &[usize]) -> Buffer {
        match self {
            Buffer::F64(v) => Buffer::F64(idx.iter().map(|&i| v[i]).collect()),
            Buffer::I64(v) => Buffer::I64(idx.iter().map(|&i| v[i]).collect()),
            Buffer::Bool(v) => Buffer::Bool(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Concatenate same-typed buffers.
    pub(crate) fn concat(dtype: DType, parts: &[&Buffer]) -> Buffer {
        match dtype {
            DType::F64 => Buffer::F64(
                parts
                    .iter()
                    .flat_map(|b| match b {
                        Buffer::F64(v) => v.iter().copied(),
                        _ => unreachable!("dtype checked by caller"),
                    })
                    .collect(),
            ),
            DType::I64 => Buffer::I64(
                parts
                    .iter()
                    .flat_map(|b| match b {
                        Buffer::I64(v) => v.iter().copied(),
                        _ => unreachable!("dtype checked by caller"),
                    })
                    .collect(),
            ),
            DType::Bool => Buffer::Bool(
                parts
                    .iter()
                    .flat_map(|b| match b {
                        Buffer::Bool(v) => v.iter().copied(),
                        _ => unreachable!("dtype checked by caller"),
                    })
                    .collect(),
            ),
        }
    }

    /// Copy `src[s]` into `self[d]` for each `(d, s)` pair.
    pub(crate) fn copy_from(&mut self, src: &Buffer, pairs: impl Iterator<Item = (usize, usize)>) {
        match (self, src) {
            (Buffer::F64(d), Buffer::F64(s)) => pairs.for_each(|(i, j)| d[i] = s[j]),
            (Buffer::I64(d), Buffer::I64(s)) => pairs.for_each(|(i, j)| d[i] = s[j]),
            (Buffer::Bool(d), Buffer::Bool(s)) => pairs.for_each(|(i, j)| d[i] = s[j]),
            _ => unreachable!("dtype checked by caller"),
        }
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    shape: Shape,
    data: Buffer,
}

impl TensorValue {
    pub fn new(shape: impl Into<Shape>, data: Buffer) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(TensorError::DataLength { len: data.len(), shape });
        }
        Ok(TensorValue { shape, data })
    }

    /// F64 tensor from dims and data. Panics on a length mismatch.
    pub fn f64(dims: &[usize], data: Vec<f64>) -> Self {
        Self::new(dims.to_vec(), Buffer::F64(data)).expect("data length matches shape")
    }

    /// I64 tensor from dims and data. Panics on a length mismatch.
    pub fn i64(dims: &[usize], data: Vec<i64>) -> Self {
        Self::new(dims.to_vec(), Buffer::I64(data)).expect("data length matches shape")
    }

    /// Bool tensor from dims and data. Panics on a length mismatch.
    pub fn bool(dims: &[usize], data: Vec<bool>) -> Self {
        Self::new(dims.to_vec(), Buffer::Bool(data)).expect("data length matches shape")
    }

    pub fn scalar_f64(v: f64) -> Self {
        TensorValue { shape: Shape::scalar(), data: Buffer::F64(vec![v]) }
    }

    pub fn scalar_i64(v: i64) -> Self {
        TensorValue { shape: Shape::scalar(), data: Buffer::I64(vec![v]) }
    }

    pub fn scalar_bool(v: bool) -> Self {
        TensorValue { shape: Shape::scalar(), data: Buffer::Bool(vec![v]) }
    }

    pub fn vec_f64(v: Vec<f64>) -> Self {
        TensorValue { shape: Shape::new([v.len()]), data: Buffer::F64(v) }
    }

    pub fn vec_i64(v: Vec<i64>) -> Self {
        TensorValue { shape: Shape::new([v.len()]), data: Buffer::I64(v) }
    }

    pub fn zeros(dtype: DType, shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        let data = Buffer::zeros(dtype, shape.numel());
        TensorValue { shape, data }
    }

    pub fn filled_f64(shape: impl Into<Shape>, v: f64) -> Self {
        let shape = shape.into();
        let data = Buffer::F64(vec![v; shape.numel()]);
        TensorValue { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &Buffer {
        &self.data
    }

    pub fn into_parts(self) -> (Shape, Buffer) {
        (self.shape, self.data)
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            Buffer::F64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match &self.data {
            Buffer::I64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<&[bool]> {
        match &self.data {
            Buffer::Bool(v) => Some(v),
            _ => None,
        }
    }

    pub(crate) fn expect_dtype(&self, dtype: DType) -> Result<()> {
        if self.dtype() == dtype {
            Ok(())
        } else {
            Err(TensorError::DTypeMismatch { expected: dtype, found: self.dtype() })
        }
    }

    pub(crate) fn f64_data(&self) -> Result<&[f64]> {
        self.as_f64().ok_or(TensorError::DTypeMismatch { expected: DType::F64, found: self.dtype() })
    }

    pub(crate) fn i64_data(&self) -> Result<&[i64]> {
        self.as_i64().ok_or(TensorError::DTypeMismatch { expected: DType::I64, found: self.dtype() })
    }

    pub(crate) fn bool_data(&self) -> Result<&[bool]> {
        self.as_bool()
            .ok_or(TensorError::DTypeMismatch { expected: DType::Bool, found: self.dtype() })
    }

    /// Value of a rank-0 I64 tensor.
    pub fn to_scalar_i64(&self) -> Result<i64> {
        let v = self.i64_data()?;
        if !self.shape.is_scalar() {
            return Err(TensorError::RankError(format!("expected scalar, got shape {}", self.shape)));
        }
        Ok(v[0])
    }

    /// Value of a rank-0 Bool tensor.
    pub fn to_scalar_bool(&self) -> Result<bool> {
        let v = self.bool_data()?;
        if !self.shape.is_scalar() {
            return Err(TensorError::RankError(format!("expected scalar, got shape {}", self.shape)));
        }
        Ok(v[0])
    }

    /// Elements converted to f64 (bools as 0/1).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            Buffer::F64(v) => v.clone(),
            Buffer::I64(v) => v.iter().map(|&x| x as f64).collect(),
            Buffer::Bool(v) => v.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Same data under a new shape; element count must match.
    pub(crate) fn with_shape(&self, shape: Shape) -> Result<TensorValue> {
        if shape.numel() != self.numel() {
            return Err(TensorError::IncompatibleShapes(format!(
                "cannot reshape {} into {}",
                self.shape, shape
            )));
        }
        Ok(TensorValue { shape, data: self.data.clone() })
    }

    /// Largest absolute elementwise difference, treating equal non-finite
    /// values as identical. `None` if shapes or dtypes differ.
    pub fn max_abs_diff(&self, other: &TensorValue) -> Option<f64> {
        if self.shape != other.shape || self.dtype() != other.dtype() {
            return None;
        }
        let a = self.to_f64_vec();
        let b = other.to_f64_vec();
        let mut worst = 0.0f64;
        for (x, y) in a.iter().zip(&b) {
            let d = if x == y || (x.is_nan() && y.is_nan()) { 0.0 } else { (x - y).abs() };
            let d = if d.is_nan() { f64::INFINITY } else { d };
            worst = worst.max(d);
        }
        Some(worst)
    }

    /// True when shapes/dtypes match and every element is within `tol`.
    pub fn all_close(&self, other: &TensorValue, tol: f64) -> bool {
        self.max_abs_diff(other).is_some_and(|d| d <= tol)
    }
}

impl fmt::Display for TensorValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{{", self.dtype(), self.shape)?;
        match &self.data {
            Buffer::F64(v) => write_list(f, v.iter().map(|x| format!("{x:?}"))),
            Buffer::I64(v) => write_list(f, v.iter().map(|x| x.to_string())),
            Buffer::Bool(v) => write_list(f, v.iter().map(|x| x.to_string())),
        }?;
        write!(f, "}}")
    }
}

fn write_list(f: &mut fmt::Formatter<'_>, items: impl Iterator<Item = String>) -> fmt::Result {
    for (i, s) in items.enumerate() {
        if i > 0 {
            write!(f, ",")?;
        }
        f.write_str(&s)?;
    }
    Ok(())
}

/// Iterate over all multi-indices of `dims` in row-major order.
pub(crate) struct IndexIter {
    dims: Vec<usize>,
    cur: Vec<usize>,
    done: bool,
}

impl IndexIter {
    pub(crate) fn new(dims: &[usize]) -> Self {
        IndexIter { dims: dims.to_vec(), cur: vec![0; dims.len()], done: dims.contains(&0) }
    }
}

impl Iterator for IndexIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.cur.clone();
        let mut k = self.dims.len();
        loop {
            if k == 0 {
                self.done = true;
                break;
            }
            k -= 1;
            self.cur[k] += 1;
            if self.cur[k] < self.dims[k] {
                break;
            }
            self.cur[k] = 0;
        }
        Some(out)
    }
}

/// For every element of `out` (row-major), the flat index of the source
/// element it reads under broadcasting. `src` must broadcast to `out`.
pub(crate) fn broadcast_index_map(src: &Shape, out: &Shape) -> Vec<usize> {
    if src == out {
        return (0..out.numel()).collect();
    }
    let n = out.numel();
    if src.numel() == 1 {
        return vec![0; n];
    }
    let offset = out.rank() - src.rank();
    let src_strides = src.strides();
    // effective stride per output axis (0 where broadcast)
    let eff: Vec<usize> = (0..out.rank())
        .map(|ax| {
            if ax < offset {
                0
            } else {
                let s = ax - offset;
                if src.dims()[s] == 1 {
                    0
                } else {
                    src_strides[s]
                }
            }
        })
        .collect();
    let mut map = Vec::with_capacity(n);
    fill_strided(out.dims(), &eff, 0, &mut map);
    map
}

/// Row-major walk over `dims`, pushing `base + Σ index·stride`.
fn fill_strided(dims: &[usize], strides: &[usize], base: usize, map: &mut Vec<usize>) {
    match dims {
        [] => map.push(base),
        [d] => map.extend((0..*d).map(|i| base + i * strides[0])),
        [d, rest @ ..] => {
            for i in 0..*d {
                fill_strided(rest, &strides[1..], base + i * strides[0], map);
            }
        }
    }
}
