//! Data-movement kernels: reshape, transpose, concat, gather/scatter, ...
//!
//! Each computes a source-index list and copies through `Buffer::take`.

use super::{broadcast_index_map, broadcast_shapes, Buffer, DType, IndexIter, Result, Shape};
use super::{TensorError, TensorValue};

pub(crate) fn normalize_axis(axis: i64, rank: usize) -> Result<usize> {
    let r = rank as i64;
    let a = if axis < 0 { axis + r } else { axis };
    if a < 0 || a >= r {
        return Err(TensorError::AxisOutOfRange { axis, rank });
    }
    Ok(a as usize)
}

pub fn reshape(x: &TensorValue, shape: &Shape) -> Result<TensorValue> {
    x.with_shape(shape.clone())
}

/// Reshape so that the result has shape `[n, tail...]`.
pub fn reshape_leading(x: &TensorValue, n: usize, tail: &Shape) -> Result<TensorValue> {
    x.with_shape(tail.prepend(n))
}

/// Fold the first two axes into one.
pub fn merge_leading(x: &TensorValue) -> Result<TensorValue> {
    if x.rank() < 2 {
        return Err(TensorError::RankError(format!(
            "merge_leading needs rank >= 2, got {}",
            x.shape()
        )));
    }
    let d = x.dims();
    let mut dims = vec![d[0] * d[1]];
    dims.extend_from_slice(&d[2..]);
    x.with_shape(Shape::new(dims))
}

/// Broadcast `x` to `[n, tail...]`.
pub fn tile_leading(x: &TensorValue, n: usize, tail: &Shape) -> Result<TensorValue> {
    let out = tail.prepend(n);
    if broadcast_shapes(x.shape(), &out)? != out {
        return Err(TensorError::IncompatibleShapes(format!(
            "cannot tile {} to {}",
            x.shape(),
            out
        )));
    }
    let map = broadcast_index_map(x.shape(), &out);
    TensorValue::new(out, x.data().take(&map))
}

pub fn transpose(x: &TensorValue, perm: &[usize]) -> Result<TensorValue> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
    {
        return Err(TensorError::BadPermutation(perm.to_vec()));
    }
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        return Ok(x.clone());
    }
    let in_dims = x.dims();
    let in_strides = x.shape().strides();
    let out_dims: Vec<usize> = perm.iter().map(|&p| in_dims[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let map: Vec<usize> = IndexIter::new(&out_dims)
        .map(|idx| idx.iter().zip(&strides).map(|(i, s)| i * s).sum())
        .collect();
    TensorValue::new(out_dims, x.data().take(&map))
}

pub fn concat(xs: &[&TensorValue], axis: i64) -> Result<TensorValue> {
    let first = xs
        .first()
        .ok_or_else(|| TensorError::IncompatibleShapes("concat of zero tensors".into()))?;
    let rank = first.rank();
    let ax = normalize_axis(axis, rank)?;
    let dtype = first.dtype();
    let mut total = 0;
    for x in xs {
        x.expect_dtype(dtype)?;
        let ok = x.rank() == rank
            && x.dims().iter().zip(first.dims()).enumerate().all(|(k, (a, b))| k == ax || a == b);
        if !ok {
            return Err(TensorError::IncompatibleShapes(format!(
                "concat along axis {ax}: {} vs {}",
                first.shape(),
                x.shape()
            )));
        }
        total += x.dims()[ax];
    }
    let outer: usize = first.dims()[..ax].iter().product();
    let inner: usize = first.dims()[ax + 1..].iter().product();
    let mut out_dims = first.dims().to_vec();
    out_dims[ax] = total;
    // interleave chunks: for each outer index, each input contributes dims[ax]*inner elements
    let mut chunks: Vec<&Buffer> = Vec::new();
    let mut pieces = Vec::new();
    for o in 0..outer {
        for x in xs {
            let c = x.dims()[ax] * inner;
            let idx: Vec<usize> = (o * c..(o + 1) * c).collect();
            pieces.push(x.data().take(&idx));
        }
    }
    chunks.extend(pieces.iter());
    TensorValue::new(out_dims, Buffer::concat(dtype, &chunks))
}

/// Stack equal-shaped tensors along a new axis.
pub fn stack(xs: &[&TensorValue], axis: usize) -> Result<TensorValue> {
    let first = xs
        .first()
        .ok_or_else(|| TensorError::IncompatibleShapes("stack of zero tensors".into()))?;
    if axis > first.rank() {
        return Err(TensorError::AxisOutOfRange { axis: axis as i64, rank: first.rank() + 1 });
    }
    for x in xs {
        x.expect_dtype(first.dtype())?;
        if x.shape() != first.shape() {
            return Err(TensorError::IncompatibleShapes(format!(
                "stack: {} vs {}",
                first.shape(),
                x.shape()
            )));
        }
    }
    let mut unsq = first.dims().to_vec();
    unsq.insert(axis, 1);
    let expanded: Vec<TensorValue> =
        xs.iter().map(|x| x.with_shape(Shape::new(unsq.clone()))).collect::<Result<_>>()?;
    let refs: Vec<&TensorValue> = expanded.iter().collect();
    concat(&refs, axis as i64)
}

/// Keep `len` entries starting at `start` along `axis`.
pub fn slice(x: &TensorValue, axis: usize, start: usize, len: usize) -> Result<TensorValue> {
    if axis >= x.rank() {
        return Err(TensorError::AxisOutOfRange { axis: axis as i64, rank: x.rank() });
    }
    let dim = x.dims()[axis];
    if start + len > dim {
        return Err(TensorError::IncompatibleShapes(format!(
            "slice [{start}, {}) exceeds dimension {dim} of {}",
            start + len,
            x.shape()
        )));
    }
    let mut out_dims = x.dims().to_vec();
    out_dims[axis] = len;
    let strides = x.shape().strides();
    let map: Vec<usize> = IndexIter::new(&out_dims)
        .map(|idx| {
            idx.iter()
                .enumerate()
                .map(|(k, &i)| (if k == axis { i + start } else { i }) * strides[k])
                .sum()
        })
        .collect();
    TensorValue::new(out_dims, x.data().take(&map))
}

fn check_row_index(i: i64, bound: usize) -> Result<usize> {
    if i < 0 || i as usize >= bound {
        return Err(TensorError::IndexOutOfBounds { index: i, bound });
    }
    Ok(i as usize)
}

fn index_vector(idx: &TensorValue) -> Result<(Vec<i64>, bool)> {
    let v = idx.i64_data()?;
    match idx.rank() {
        0 => Ok((v.to_vec(), true)),
        1 => Ok((v.to_vec(), false)),
        r => Err(TensorError::RankError(format!("index must have rank 0 or 1, got {r}"))),
    }
}

/// Rows of `x` selected by `idx` (rank 0: one row, rank 1: a list).
pub fn gather_rows(x: &TensorValue, idx: &TensorValue) -> Result<TensorValue> {
    if x.rank() == 0 {
        return Err(TensorError::RankError("gather_rows on a scalar".into()));
    }
    let (ids, scalar) = index_vector(idx)?;
    let rows = x.dims()[0];
    let row_len: usize = x.dims()[1..].iter().product();
    let mut map = Vec::with_capacity(ids.len() * row_len);
    for &i in &ids {
        let r = check_row_index(i, rows)?;
        map.extend(r * row_len..(r + 1) * row_len);
    }
    let tail = x.shape().tail();
    let shape = if scalar { tail } else { tail.prepend(ids.len()) };
    TensorValue::new(shape, x.data().take(&map))
}

/// Stitch `parts` back together: row `j` of `parts[k]` lands at `index_sets[k][j]`.
pub fn scatter_rows(
    index_sets: &[&TensorValue],
    parts: &[&TensorValue],
    total: usize,
) -> Result<TensorValue> {
    if index_sets.len() != parts.len() || parts.is_empty() {
        return Err(TensorError::IncompatibleShapes(format!(
            "scatter_rows needs matching non-empty lists, got {} index sets and {} parts",
            index_sets.len(),
            parts.len()
        )));
    }
    let dtype = parts[0].dtype();
    let first = parts[0];
    if first.rank() == 0 {
        return Err(TensorError::RankError("scatter_rows parts must have rank >= 1".into()));
    }
    let tail = first.shape().tail();
    let row_len = tail.numel();
    let mut owner: Vec<Option<(usize, usize)>> = vec![None; total];
    for (k, (set, part)) in index_sets.iter().zip(parts).enumerate() {
        part.expect_dtype(dtype)?;
        if set.rank() != 1 {
            return Err(TensorError::RankError("scatter_rows index sets must be rank 1".into()));
        }
        if part.rank() == 0 || part.shape().tail() != tail || part.dims()[0] != set.numel() {
            return Err(TensorError::IncompatibleShapes(format!(
                "scatter_rows part {k} has shape {} for {} indices (row shape {tail})",
                part.shape(),
                set.numel()
            )));
        }
        for (j, &i) in set.i64_data()?.iter().enumerate() {
            let r = check_row_index(i, total)?;
            if owner[r].is_some() {
                return Err(TensorError::IndexCollision(i));
            }
            owner[r] = Some((k, j));
        }
    }
    let covered = owner.iter().filter(|o| o.is_some()).count();
    if covered != total {
        return Err(TensorError::IncompleteCover { covered, total });
    }
    let mut out = Buffer::zeros(dtype, total * row_len);
    for (r, o) in owner.iter().enumerate() {
        let (k, j) = o.expect("cover checked");
        out.copy_from(parts[k].data(), (0..row_len).map(|e| (r * row_len + e, j * row_len + e)));
    }
    TensorValue::new(tail.prepend(total), out)
}

/// Zeros of shape `[total, rest...]` with `updates` rows added at `idx`.
/// Duplicate indices accumulate.
pub fn scatter_add_rows(updates: &TensorValue, idx: &TensorValue, total: usize) -> Result<TensorValue> {
    let (ids, scalar) = index_vector(idx)?;
    let rest = if scalar {
        updates.shape().clone()
    } else {
        if updates.rank() == 0 || updates.dims()[0] != ids.len() {
            return Err(TensorError::IncompatibleShapes(format!(
                "scatter_add_rows: {} updates for {} indices",
                updates.shape(),
                ids.len()
            )));
        }
        updates.shape().tail()
    };
    let row_len = rest.numel();
    let shape = rest.prepend(total);
    match updates.data() {
        Buffer::F64(u) => {
            let mut out = vec![0.0; shape.numel()];
            for (j, &i) in ids.iter().enumerate() {
                let r = check_row_index(i, total)?;
                for e in 0..row_len {
                    out[r * row_len + e] += u[j * row_len + e];
                }
            }
            TensorValue::new(shape, Buffer::F64(out))
        }
        Buffer::I64(u) => {
            let mut out = vec![0i64; shape.numel()];
            for (j, &i) in ids.iter().enumerate() {
                let r = check_row_index(i, total)?;
                for e in 0..row_len {
                    out[r * row_len + e] += u[j * row_len + e];
                }
            }
            TensorValue::new(shape, Buffer::I64(out))
        }
        Buffer::Bool(_) => Err(TensorError::DTypeMismatch { expected: DType::F64, found: DType::Bool }),
    }
}

/// Copy of `acc` with rows at `idx` replaced by `rows` (last write wins).
pub fn scatter_update(acc: &TensorValue, idx: &TensorValue, rows: &TensorValue) -> Result<TensorValue> {
    acc.expect_dtype(rows.dtype())?;
    if acc.rank() == 0 {
        return Err(TensorError::RankError("scatter_update on a scalar".into()));
    }
    let (ids, scalar) = index_vector(idx)?;
    let tail = acc.shape().tail();
    let expected = if scalar { tail.clone() } else { tail.prepend(ids.len()) };
    if rows.shape() != &expected {
        return Err(TensorError::IncompatibleShapes(format!(
            "scatter_update: rows {} do not match {expected}",
            rows.shape()
        )));
    }
    let row_len = tail.numel();
    let mut out = acc.data().clone();
    for (j, &i) in ids.iter().enumerate() {
        let r = check_row_index(i, acc.dims()[0])?;
        out.copy_from(rows.data(), (0..row_len).map(|e| (r * row_len + e, j * row_len + e)));
    }
    TensorValue::new(acc.shape().clone(), out)
}

/// `[0, 1, ..., n-1]` as I64.
pub fn range(n: i64) -> Result<TensorValue> {
    if n < 0 {
        return Err(TensorError::NegativeCount(n));
    }
    Ok(TensorValue::vec_i64((0..n).collect()))
}

/// Positions of `true` entries in a rank-1 bool tensor.
pub fn where_true(b: &TensorValue) -> Result<TensorValue> {
    let v = b.bool_data()?;
    if b.rank() != 1 {
        return Err(TensorError::RankError(format!("where_true needs rank 1, got {}", b.shape())));
    }
    Ok(TensorValue::vec_i64(
        v.iter().enumerate().filter(|(_, &t)| t).map(|(i, _)| i as i64).collect(),
    ))
}

/// Leading dimension as an I64 scalar.
pub fn length(x: &TensorValue) -> Result<TensorValue> {
    if x.rank() == 0 {
        return Err(TensorError::RankError("length of a scalar".into()));
    }
    Ok(TensorValue::scalar_i64(x.dims()[0] as i64))
}

pub fn zeros(dtype: DType, n: usize, tail: &Shape) -> TensorValue {
    TensorValue::zeros(dtype, tail.prepend(n))
}
