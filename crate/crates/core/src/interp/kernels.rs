use crate::graph::Op;
use crate::tensor::{self, Result, TensorError, TensorValue};

fn count(t: &TensorValue) -> Result<usize> {
    let n = t.to_scalar_i64()?;
    if n < 0 {
        return Err(TensorError::NegativeCount(n));
    }
    Ok(n as usize)
}

/// Evaluate a stateless, non-block op on concrete inputs.
pub fn eval_op(op: &Op, a: &[&TensorValue]) -> Result<TensorValue> {
    Ok(match op {
        Op::Constant(t) => t.clone(),
        Op::Unary(u) => tensor::unary(*u, a[0])?,
        Op::Binary(b) => tensor::binary(*b, a[0], a[1])?,
        Op::Select => tensor::select(a[0], a[1], a[2])?,
        Op::MatMul => tensor::matmul(a[0], a[1])?,
        Op::Conv2d => tensor::conv2d(a[0], a[1])?,
        Op::Conv2dBackpropInput => tensor::conv2d_backprop_input(a[0], a[1])?,
        Op::Conv2dBackpropFilter { kernel } => tensor::conv2d_backprop_filter(a[0], a[1], *kernel)?,
        Op::ReduceSum { axes } => tensor::reduce_sum(a[0], axes)?,
        Op::SumToShape { shape } => tensor::sum_to_shape(a[0], shape)?,
        Op::BroadcastTo { shape } => tensor::broadcast_to(a[0], shape)?,
        Op::Concat { axis } => tensor::concat(a, *axis)?,
        Op::Stack { axis } => tensor::stack(a, *axis)?,
        Op::Reshape { shape } => tensor::reshape(a[0], shape)?,
        Op::Transpose { perm } => tensor::transpose(a[0], perm)?,
        Op::Slice { axis, start, len } => tensor::slice(a[0], *axis, *start, *len)?,
        Op::GatherRows => tensor::gather_rows(a[0], a[1])?,
        Op::ScatterRows { parts } => {
            let total = a[..*parts].iter().map(|s| s.numel()).sum();
            tensor::scatter_rows(&a[..*parts], &a[*parts..], total)?
        }
        Op::ScatterAddRows => tensor::scatter_add_rows(a[0], a[1], count(a[2])?)?,
        Op::ScatterUpdate => tensor::scatter_update(a[0], a[1], a[2])?,
        Op::TileLeading { tail } => tensor::tile_leading(a[0], count(a[1])?, tail)?,
        Op::MergeLeading => tensor::merge_leading(a[0])?,
        Op::ReshapeLeading { tail } => tensor::reshape_leading(a[0], count(a[1])?, tail)?,
        Op::Range => tensor::range(a[0].to_scalar_i64()?)?,
        Op::WhereTrue => tensor::where_true(a[0])?,
        Op::Length => tensor::length(a[0])?,
        Op::Zeros { dtype, tail } => tensor::zeros(*dtype, count(a[0])?, tail),
        other => unreachable!("{} is not a pure kernel", other.kind()),
    })
}
