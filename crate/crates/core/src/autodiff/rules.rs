use std::collections::HashMap;

use super::{zeros_like, GradError, Result};
use crate::graph::{Graph, GraphError, Node, Op, OpKind, ValueRef};
use crate::tensor::{normalize_axes, BinaryOp, DType, Shape, TensorValue, UnaryOp};

/// Input cotangents (one slot per input) from output cotangents.
pub type VjpRule = fn(&mut Graph, &Node, &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>>;

#[derive(Clone, Default)]
pub struct VjpRules {
    map: HashMap<OpKind, VjpRule>,
}

impl VjpRules {
    pub fn standard() -> Self {
        use OpKind::*;
        let mut r = VjpRules::default();
        for k in [Neg, Exp, Log, Relu, Tanh, Sigmoid, Square] {
            r.insert(k, unary);
        }
        for k in [Add, Sub, Mul, Div, Max, Min] {
            r.insert(k, binary);
        }
        let table: [(OpKind, VjpRule); 23] = [
            (Select, select),
            (MatMul, matmul),
            (Conv2d, conv2d),
            (Conv2dBackpropInput, conv2d_backprop_input),
            (Conv2dBackpropFilter, conv2d_backprop_filter),
            (ReduceSum, reduce_sum),
            (SumToShape, sum_to_shape),
            (BroadcastTo, broadcast_to),
            (Concat, concat),
            (Stack, stack),
            (Reshape, restore_shape),
            (MergeLeading, restore_shape),
            (ReshapeLeading, restore_shape),
            (Transpose, transpose),
            (Slice, slice),
            (GatherRows, gather_rows),
            (ScatterRows, scatter_rows),
            (ScatterAddRows, scatter_add_rows),
            (ScatterUpdate, scatter_update),
            (TileLeading, tile_leading),
            (Length, no_gradient),
            (Less, no_gradient),
            (Equal, no_gradient),
        ];
        for (k, f) in table {
            r.insert(k, f);
        }
        r
    }

    pub fn insert(&mut self, kind: OpKind, f: VjpRule) {
        self.map.insert(kind, f);
    }

    pub fn remove(&mut self, kind: OpKind) -> Option<VjpRule> {
        self.map.remove(&kind)
    }

    pub fn get(&self, kind: OpKind) -> Option<VjpRule> {
        self.map.get(&kind).copied()
    }
}

fn shape_of(g: &Graph, node: &Node, v: ValueRef) -> Result<Shape> {
    g.shape_of(v).cloned().ok_or(GradError::UnknownShape { node: node.id, kind: node.op.kind() })
}

fn cot(cots: &[Option<ValueRef>]) -> ValueRef {
    cots[0].expect("single-output node with a cotangent")
}

/// Sum `c` down to the shape of `target` when broadcasting widened it.
fn unbroadcast(g: &mut Graph, node: &Node, c: ValueRef, target: ValueRef) -> Result<ValueRef> {
    let to = shape_of(g, node, target)?;
    if g.shape_of(c) == Some(&to) {
        return Ok(c);
    }
    Ok(ValueRef::new(g.add_node(Op::SumToShape { shape: to }, vec![c], [])?, 0))
}

fn zero(g: &mut Graph) -> Result<ValueRef> {
    Ok(g.scalar_f64(0.0)?)
}

fn one1(g: &mut Graph, op: Op, x: ValueRef) -> Result<ValueRef> {
    Ok(ValueRef::new(g.add_node(op, vec![x], [])?, 0))
}

fn no_gradient(_g: &mut Graph, node: &Node, _cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    Ok(vec![None; node.inputs.len()])
}

fn unary(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let c = cot(cots);
    let x = node.inputs[0];
    let y = node.output(0);
    let Op::Unary(u) = node.op else { unreachable!() };
    let d = match u {
        UnaryOp::Neg => g.neg(c)?,
        UnaryOp::Exp => g.mul(c, y)?,
        UnaryOp::Log => g.div(c, x)?,
        UnaryOp::Relu => {
            // zero at the kink
            let z = zero(g)?;
            let pos = g.less(z, x)?;
            g.select(pos, c, z)?
        }
        UnaryOp::Tanh => {
            let one = g.scalar_f64(1.0)?;
            let yy = g.mul(y, y)?;
            let d = g.sub(one, yy)?;
            g.mul(c, d)?
        }
        UnaryOp::Sigmoid => {
            let one = g.scalar_f64(1.0)?;
            let om = g.sub(one, y)?;
            let d = g.mul(y, om)?;
            g.mul(c, d)?
        }
        UnaryOp::Square => {
            let two = g.scalar_f64(2.0)?;
            let tx = g.mul(two, x)?;
            g.mul(c, tx)?
        }
        UnaryOp::Not => return no_gradient(g, node, cots),
    };
    Ok(vec![Some(d)])
}

fn binary(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let c = cot(cots);
    let (a, b) = (node.inputs[0], node.inputs[1]);
    let Op::Binary(op) = node.op else { unreachable!() };
    let (da, db) = match op {
        BinaryOp::Add => (c, c),
        BinaryOp::Sub => (c, g.neg(c)?),
        BinaryOp::Mul => (g.mul(c, b)?, g.mul(c, a)?),
        BinaryOp::Div => {
            let y = node.output(0);
            let da = g.div(c, b)?;
            let t = g.mul(da, y)?;
            (da, g.neg(t)?)
        }
        BinaryOp::Max | BinaryOp::Min => {
            // ties go to the second operand
            let first = if op == BinaryOp::Max { g.less(b, a)? } else { g.less(a, b)? };
            let z = zero(g)?;
            (g.select(first, c, z)?, g.select(first, z, c)?)
        }
        BinaryOp::Less | BinaryOp::Equal => return no_gradient(g, node, cots),
    };
    Ok(vec![Some(unbroadcast(g, node, da, a)?), Some(unbroadcast(g, node, db, b)?)])
}

fn select(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let c = cot(cots);
    let (p, a, b) = (node.inputs[0], node.inputs[1], node.inputs[2]);
    let z = zero(g)?;
    let da = g.select(p, c, z)?;
    let db = g.select(p, z, c)?;
    Ok(vec![None, Some(unbroadcast(g, node, da, a)?), Some(unbroadcast(g, node, db, b)?)])
}

fn swap_last(rank: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..rank).collect();
    p.swap(rank - 2, rank - 1);
    p
}

fn matmul(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let c = cot(cots);
    let (a, b) = (node.inputs[0], node.inputs[1]);
    let r = shape_of(g, node, a)?.rank();
    let bt = g.transpose(b, &swap_last(r))?;
    let at = g.transpose(a, &swap_last(r))?;
    Ok(vec![Some(g.matmul(c, bt)?), Some(g.matmul(at, c)?)])
}

fn kernel_of(g: &Graph, node: &Node, f: ValueRef) -> Result<[usize; 2]> {
    let s = shape_of(g, node, f)?;
    Ok([s.dims()[0], s.dims()[1]])
}

fn conv2d(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let c = cot(cots);
    let (x, f) = (node.inputs[0], node.inputs[1]);
    let kernel = kernel_of(g, node, f)?;
    let dx = g.add_node(Op::Conv2dBackpropInput, vec![c, f], [])?;
    let df = g.add_node(Op::Conv2dBackpropFilter { kernel }, vec![x, c], [])?;
    Ok(vec![Some(ValueRef::new(dx, 0)), Some(ValueRef::new(df, 0))])
}

fn conv2d_backprop_input(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let c = cot(cots);
    let (dy, f) = (node.inputs[0], node.inputs[1]);
    let kernel = kernel_of(g, node, f)?;
    let ddy = g.conv2d(c, f)?;
    let df = g.add_node(Op::Conv2dBackpropFilter { kernel }, vec![c, dy], [])?;
    Ok(vec![Some(ddy), Some(ValueRef::new(df, 0))])
}

fn conv2d_backprop_filter(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let c = cot(cots);
    let (x, dy) = (node.inputs[0], node.inputs[1]);
    let ddy = g.conv2d(x, c)?;
    let dx = g.add_node(Op::Conv2dBackpropInput, vec![dy, c], [])?;
    Ok(vec![Some(ValueRef::new(dx, 0)), Some(ddy)])
}

fn reduce_sum(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let c = cot(cots);
    let Op::ReduceSum { axes } = &node.op else { unreachable!() };
    let s = shape_of(g, node, node.inputs[0])?;
    let axes = normalize_axes(axes, s.rank())
        .map_err(|source| GraphError::Tensor { node: node.id, kind: node.op.kind(), source })?;
    let kept: Vec<usize> = s.dims().iter().enumerate().map(|(k, &d)| if axes.contains(&k) { 1 } else { d }).collect();
    let r = g.reshape(c, kept)?;
    Ok(vec![Some(one1(g, Op::BroadcastTo { shape: s }, r)?)])
}

fn sum_to_shape(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let s = shape_of(g, node, node.inputs[0])?;
    Ok(vec![Some(one1(g, Op::BroadcastTo { shape: s }, cot(cots))?)])
}

fn broadcast_to(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    Ok(vec![Some(unbroadcast(g, node, cot(cots), node.inputs[0])?)])
}

/// Reshape-like ops: the cotangent takes the input's shape back.
fn restore_shape(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let s = shape_of(g, node, node.inputs[0])?;
    let mut out = vec![Some(g.reshape(cot(cots), s)?)];
    out.resize(node.inputs.len(), None);
    Ok(out)
}

fn transpose(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let Op::Transpose { perm } = &node.op else { unreachable!() };
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    Ok(vec![Some(g.transpose(cot(cots), &inv)?)])
}

fn slice(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let Op::Slice { axis, start, len } = node.op else { unreachable!() };
    let s = shape_of(g, node, node.inputs[0])?;
    let c = cot(cots);
    let mut pieces = Vec::new();
    let pad = |g: &mut Graph, n: usize| -> Result<ValueRef> {
        let mut d = s.dims().to_vec();
        d[axis] = n;
        Ok(g.constant(TensorValue::zeros(DType::F64, d))?)
    };
    if start > 0 {
        pieces.push(pad(g, start)?);
    }
    pieces.push(c);
    let after = s.dims()[axis] - start - len;
    if after > 0 {
        pieces.push(pad(g, after)?);
    }
    let r = if pieces.len() == 1 { c } else { g.concat(&pieces, axis as i64)? };
    Ok(vec![Some(r)])
}

fn concat(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let Op::Concat { axis } = node.op else { unreachable!() };
    let c = cot(cots);
    let first = shape_of(g, node, node.inputs[0])?;
    let ax = (if axis < 0 { axis + first.rank() as i64 } else { axis }) as usize;
    let mut at = 0;
    let mut out = Vec::with_capacity(node.inputs.len());
    for &x in &node.inputs {
        let len = shape_of(g, node, x)?.dims()[ax];
        out.push(Some(g.slice(c, ax, at, len)?));
        at += len;
    }
    Ok(out)
}

fn stack(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let Op::Stack { axis } = node.op else { unreachable!() };
    let c = cot(cots);
    let mut out = Vec::with_capacity(node.inputs.len());
    for (k, &x) in node.inputs.iter().enumerate() {
        let s = shape_of(g, node, x)?;
        let piece = g.slice(c, axis, k, 1)?;
        out.push(Some(g.reshape(piece, s)?));
    }
    Ok(out)
}

fn rows_of(g: &Graph, node: &Node, x: ValueRef) -> Result<i64> {
    Ok(shape_of(g, node, x)?.dims()[0] as i64)
}

fn gather_rows(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let (x, idx) = (node.inputs[0], node.inputs[1]);
    let total = g.scalar_i64(rows_of(g, node, x)?)?;
    let d = g.add_node(Op::ScatterAddRows, vec![cot(cots), idx, total], [])?;
    Ok(vec![Some(ValueRef::new(d, 0)), None])
}

fn scatter_add_rows(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let d = g.gather_rows(cot(cots), node.inputs[1])?;
    Ok(vec![Some(d), None, None])
}

/// Index rows are assumed distinct, as everywhere scatter_update is emitted.
fn scatter_update(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let c = cot(cots);
    let (idx, rows) = (node.inputs[1], node.inputs[2]);
    let z = zeros_like(g, rows)?;
    let dacc = g.add_node(Op::ScatterUpdate, vec![c, idx, z], [])?;
    let drows = g.gather_rows(c, idx)?;
    Ok(vec![Some(ValueRef::new(dacc, 0)), None, Some(drows)])
}

fn scatter_rows(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let Op::ScatterRows { parts } = node.op else { unreachable!() };
    let c = cot(cots);
    let mut out = vec![None; parts];
    for k in 0..parts {
        out.push(Some(g.gather_rows(c, node.inputs[k])?));
    }
    Ok(out)
}

fn tile_leading(g: &mut Graph, node: &Node, cots: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let d = unbroadcast(g, node, cot(cots), node.inputs[0])?;
    Ok(vec![Some(d), None])
}
