use super::layout::normalize_axis;
use super::{broadcast_index_map, broadcast_shapes, Buffer, DType, IndexIter, Result, Shape};
use super::{TensorError, TensorValue};

/// Resolve negative axes and reject duplicates. Result is sorted.
pub fn normalize_axes(axes: &[i64], rank: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(axes.len());
    for &a in axes {
        let n = normalize_axis(a, rank)?;
        if out.contains(&n) {
            return Err(TensorError::DuplicateAxis(a));
        }
        out.push(n);
    }
    out.sort_unstable();
    Ok(out)
}

pub(crate) fn reduce_shape(shape: &Shape, axes: &[i64]) -> Result<Shape> {
    let norm = normalize_axes(axes, shape.rank())?;
    Ok(Shape::new(
        shape
            .dims()
            .iter()
            .enumerate()
            .filter(|(k, _)| !norm.contains(k))
            .map(|(_, &d)| d)
            .collect::<Vec<_>>(),
    ))
}

/// Sum over `axes`, dropping them. Contributions are accumulated in
/// row-major order of the input.
pub fn reduce_sum(x: &TensorValue, axes: &[i64]) -> Result<TensorValue> {
    let norm = normalize_axes(axes, x.rank())?;
    let out_shape = reduce_shape(x.shape(), axes)?;
    if norm.is_empty() {
        return Ok(x.clone());
    }
    let out_strides = out_shape.strides();
    // output stride contributed by each input axis (0 for reduced axes)
    let mut per_axis = vec![0usize; x.rank()];
    let mut k = 0;
    for (ax, s) in per_axis.iter_mut().enumerate() {
        if !norm.contains(&ax) {
            *s = out_strides[k];
            k += 1;
        }
    }
    let targets = IndexIter::new(x.dims()).map(|idx| idx.iter().zip(&per_axis).map(|(i, s)| i * s).sum::<usize>());
    let data = match x.data() {
        Buffer::F64(v) => {
            let mut out = vec![0.0; out_shape.numel()];
            for (t, &e) in targets.zip(v) {
                out[t] += e;
            }
            Buffer::F64(out)
        }
        Buffer::I64(v) => {
            let mut out = vec![0i64; out_shape.numel()];
            for (t, &e) in targets.zip(v) {
                out[t] += e;
            }
            Buffer::I64(out)
        }
        Buffer::Bool(_) => {
            return Err(TensorError::DTypeMismatch { expected: DType::F64, found: DType::Bool })
        }
    };
    TensorValue::new(out_shape, data)
}

/// Axes of `src` that must be summed to undo a broadcast of `target` to `src`.
pub fn sum_to_shape_axes(src: &Shape, target: &Shape) -> Result<Vec<usize>> {
    if target.rank() > src.rank() || broadcast_shapes(target, src)? != *src {
        return Err(TensorError::IncompatibleShapes(format!("cannot sum {src} down to {target}")));
    }
    let lead = src.rank() - target.rank();
    let mut axes: Vec<usize> = (0..lead).collect();
    for (k, &t) in target.dims().iter().enumerate() {
        if t == 1 && src.dims()[lead + k] != 1 {
            axes.push(lead + k);
        }
    }
    Ok(axes)
}

/// Sum `x` down to `target`, the inverse of broadcasting `target` up to `x`.
pub fn sum_to_shape(x: &TensorValue, target: &Shape) -> Result<TensorValue> {
    let axes: Vec<i64> = sum_to_shape_axes(x.shape(), target)?.into_iter().map(|a| a as i64).collect();
    reduce_sum(x, &axes)?.with_shape(target.clone())
}

pub fn broadcast_to(x: &TensorValue, target: &Shape) -> Result<TensorValue> {
    if broadcast_shapes(x.shape(), target)? != *target {
        return Err(TensorError::IncompatibleShapes(format!(
            "cannot broadcast {} to {target}",
            x.shape()
        )));
    }
    let map = broadcast_index_map(x.shape(), target);
    TensorValue::new(target.clone(), x.data().take(&map))
}
