//! Converters for stateless ops, and the registry that maps op kinds to
//! converters.

use std::collections::HashMap;

use super::{control, stateful, Conv, Cx, Repr, Result, Vectorizer, Wrapped};
use crate::graph::{Graph, Node, Op, OpKind, ValueRef};
use crate::tensor::{sum_to_shape_axes, Shape};

pub type Converter = fn(&mut Vectorizer, &mut Graph, &Cx, &Node, &[Wrapped]) -> Result<Conv>;

#[derive(Clone, Default)]
pub struct Registry {
    map: HashMap<OpKind, Converter>,
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn standard() -> Self {
        use OpKind::*;
        let mut r = Registry::empty();
        for k in [Neg, Exp, Log, Relu, Tanh, Sigmoid, Square, Not] {
            r.insert(k, unary);
        }
        for k in [Add, Sub, Mul, Div, Max, Min, Less, Equal, Select] {
            r.insert(k, elementwise);
        }
        r.insert(MatMul, matmul);
        r.insert(Conv2d, conv_fold);
        r.insert(Conv2dBackpropInput, conv_fold);
        r.insert(Conv2dBackpropFilter, backprop_filter);
        r.insert(ReduceSum, reduce_sum);
        r.insert(SumToShape, sum_to_shape);
        r.insert(BroadcastTo, broadcast_to);
        r.insert(Concat, concat);
        r.insert(Stack, stack);
        r.insert(Reshape, reshape);
        r.insert(Transpose, transpose);
        r.insert(Slice, slice);
        r.insert(GatherRows, gather_rows);
        r.insert(ScatterAddRows, scatter_add_rows);
        r.insert(ScatterUpdate, scatter_update);
        r.insert(TileLeading, tile_leading);
        r.insert(MergeLeading, merge_leading);
        r.insert(ReshapeLeading, reshape_leading);
        r.insert(Length, length);
        r.insert(ReadVariable, stateful::read_variable);
        r.insert(Assign, stateful::assign);
        r.insert(AssignAdd, stateful::assign_add);
        r.insert(RandomUniform, stateful::random_uniform);
        r.insert(Cond, control::cond);
        r.insert(While, control::while_loop);
        r.insert(Parfor, control::parfor);
        r
    }

    pub fn insert(&mut self, kind: OpKind, f: Converter) {
        self.map.insert(kind, f);
    }

    pub fn remove(&mut self, kind: OpKind) -> Option<Converter> {
        self.map.remove(&kind)
    }

    pub fn get(&self, kind: OpKind) -> Option<Converter> {
        self.map.get(&kind).copied()
    }

    pub fn contains(&self, kind: OpKind) -> bool {
        self.map.contains_key(&kind)
    }
}

fn done(v: ValueRef, node: &Node) -> Result<Conv> {
    Ok(Conv::Done(vec![Wrapped::stacked(v, node.outputs[0].clone())]))
}

fn shapes<'a>(ins: &'a [Wrapped]) -> Option<Vec<&'a Shape>> {
    ins.iter().map(|w| w.shape()).collect()
}

fn ones(k: usize) -> Vec<usize> {
    vec![1; k]
}

fn shift_axis(a: i64) -> i64 {
    if a >= 0 {
        a + 1
    } else {
        a
    }
}

impl Vectorizer<'_> {
    /// Stacked form of every input.
    fn all_stacked(&self, out: &mut Graph, cx: &Cx, ins: &[Wrapped]) -> Result<Vec<ValueRef>> {
        ins.iter().map(|w| self.materialize(out, cx, w)).collect()
    }

    /// `x` is stacked `[n]+s`; reshape to `[n]+tail`.
    fn relead(&self, out: &mut Graph, cx: &Cx, x: ValueRef, tail: impl Into<Shape>) -> Result<ValueRef> {
        self.emit(out, Op::ReshapeLeading { tail: tail.into() }, vec![x, cx.iters])
    }

    fn merge(&self, out: &mut Graph, x: ValueRef) -> Result<ValueRef> {
        self.emit(out, Op::MergeLeading, vec![x])
    }

    /// `range(n) * m` as I64 `[n]`.
    fn row_base(&self, out: &mut Graph, cx: &Cx, m: usize) -> Result<ValueRef> {
        let r = cx.range(out)?;
        let m = out.scalar_i64(m as i64)?;
        Ok(out.mul(r, m)?)
    }

    /// Flat row ids into a merged `[n*m, ...]` tensor for a stacked
    /// per-iteration index of rank 0 or 1. Returns the ids and,
    /// for rank 1, the per-iteration index count.
    fn flat_index(&self, out: &mut Graph, cx: &Cx, m: usize, idx: &Wrapped) -> Result<Option<(ValueRef, Option<usize>)>> {
        let Some(s) = idx.shape() else { return Ok(None) };
        let iv = self.materialize(out, cx, idx)?;
        let base = self.row_base(out, cx, m)?;
        match s.rank() {
            0 => Ok(Some((out.add(base, iv)?, None))),
            1 => {
                let k = s.dims()[0];
                let base = self.relead(out, cx, base, [1])?;
                let flat = out.add(base, iv)?;
                Ok(Some((self.merge(out, flat)?, Some(k))))
            }
            _ => Ok(None),
        }
    }
}

fn unary(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let x = vz.value(out, cx, &ins[0])?;
    let y = vz.emit(out, node.op.clone(), vec![x])?;
    done(y, node)
}

/// Binary ops and select: broadcast per-iteration shapes under a shared
/// leading iteration axis.
fn elementwise(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Some(ss) = shapes(ins) else { return Ok(Conv::Unsupported("unknown per-iteration shape".into())) };
    let r = ss.iter().map(|s| s.rank()).max().unwrap_or(0);
    let mut vals = Vec::with_capacity(ins.len());
    for (w, s) in ins.iter().zip(ss) {
        if w.stacked || vz.policy.materialize_inputs {
            let v = vz.materialize(out, cx, w)?;
            vals.push(if s.rank() < r {
                let mut tail = ones(r - s.rank());
                tail.extend_from_slice(s.dims());
                vz.relead(out, cx, v, tail)?
            } else {
                v
            });
        } else {
            let v = vz.value(out, cx, w)?;
            vals.push(if s.rank() > 0 {
                let mut dims = ones(r + 1 - s.rank());
                dims.extend_from_slice(s.dims());
                out.reshape(v, dims)?
            } else {
                v
            });
        }
    }
    let y = vz.emit(out, node.op.clone(), vals)?;
    done(y, node)
}

fn matmul(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let (Some(sa), Some(sb), Some(so)) = (ins[0].shape(), ins[1].shape(), node.outputs[0].shape.as_ref()) else {
        return Ok(Conv::Unsupported("unknown per-iteration shape".into()));
    };
    let (sa, sb, so) = (sa.clone(), sb.clone(), so.clone());
    let (a_st, b_st) = if vz.policy.materialize_inputs { (true, true) } else { (ins[0].stacked, ins[1].stacked) };
    let y = match (a_st, b_st, sa.rank()) {
        (true, true, 2) => {
            let a = vz.materialize(out, cx, &ins[0])?;
            let b = vz.materialize(out, cx, &ins[1])?;
            out.matmul(a, b)?
        }
        (true, false, 2) => {
            let a = vz.value(out, cx, &ins[0])?;
            let b = vz.value(out, cx, &ins[1])?;
            let flat = vz.merge(out, a)?;
            let r = out.matmul(flat, b)?;
            vz.relead(out, cx, r, so)?
        }
        (false, true, 2) => {
            let a = vz.value(out, cx, &ins[0])?;
            let b = vz.value(out, cx, &ins[1])?;
            let bt = out.transpose(b, &[0, 2, 1])?;
            let flat = vz.merge(out, bt)?;
            let at = out.transpose(a, &[1, 0])?;
            let r = out.matmul(flat, at)?;
            let r = vz.relead(out, cx, r, [sb.dims()[1], sa.dims()[0]])?;
            out.transpose(r, &[0, 2, 1])?
        }
        _ => {
            // batched per iteration: fold iterations into the batch axis
            let a = vz.materialize(out, cx, &ins[0])?;
            let b = vz.materialize(out, cx, &ins[1])?;
            let a = vz.merge(out, a)?;
            let b = vz.merge(out, b)?;
            let r = out.matmul(a, b)?;
            vz.relead(out, cx, r, so)?
        }
    };
    done(y, node)
}

/// conv2d and its input gradient: fold iterations into the batch axis.
fn conv_fold(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    if ins[1].stacked || (vz.policy.materialize_inputs && !ins[0].stacked) {
        return Ok(Conv::Unsupported("filter differs per iteration".into()));
    }
    let Some(so) = node.outputs[0].shape.clone() else {
        return Ok(Conv::Unsupported("unknown per-iteration shape".into()));
    };
    let x = vz.value(out, cx, &ins[0])?;
    let f = vz.value(out, cx, &ins[1])?;
    let flat = vz.merge(out, x)?;
    let r = vz.emit(out, node.op.clone(), vec![flat, f])?;
    let y = vz.relead(out, cx, r, so)?;
    done(y, node)
}

/// Leading dims in front of NHWC are groups, so the iteration axis is one more.
fn backprop_filter(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let vals = vz.all_stacked(out, cx, ins)?;
    let y = vz.emit(out, node.op.clone(), vals)?;
    done(y, node)
}

fn reduce_sum(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Op::ReduceSum { axes } = &node.op else { unreachable!() };
    let x = vz.materialize(out, cx, &ins[0])?;
    let axes: Vec<i64> = axes.iter().map(|&a| shift_axis(a)).collect();
    let y = out.reduce_sum(x, &axes)?;
    done(y, node)
}

fn sum_to_shape(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Op::SumToShape { shape } = &node.op else { unreachable!() };
    let Some(s) = ins[0].shape() else { return Ok(Conv::Unsupported("unknown per-iteration shape".into())) };
    let Ok(axes) = sum_to_shape_axes(s, shape) else {
        return Ok(Conv::Unsupported("shapes do not broadcast".into()));
    };
    let axes: Vec<i64> = axes.into_iter().map(|a| a as i64 + 1).collect();
    let x = vz.materialize(out, cx, &ins[0])?;
    let r = out.reduce_sum(x, &axes)?;
    let y = vz.relead(out, cx, r, shape.clone())?;
    done(y, node)
}

fn broadcast_to(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Op::BroadcastTo { shape } = &node.op else { unreachable!() };
    let Some(s) = ins[0].shape() else { return Ok(Conv::Unsupported("unknown per-iteration shape".into())) };
    let mut x = vz.materialize(out, cx, &ins[0])?;
    if s.rank() < shape.rank() {
        let mut tail = ones(shape.rank() - s.rank());
        tail.extend_from_slice(s.dims());
        x = vz.relead(out, cx, x, tail)?;
    }
    let y = vz.emit(out, Op::TileLeading { tail: shape.clone() }, vec![x, cx.iters])?;
    done(y, node)
}

fn concat(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Op::Concat { axis } = &node.op else { unreachable!() };
    let vals = vz.all_stacked(out, cx, ins)?;
    let y = out.concat(&vals, shift_axis(*axis))?;
    done(y, node)
}

fn stack(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Op::Stack { axis } = &node.op else { unreachable!() };
    let vals = vz.all_stacked(out, cx, ins)?;
    let y = out.stack(&vals, axis + 1)?;
    done(y, node)
}

fn reshape(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Op::Reshape { shape } = &node.op else { unreachable!() };
    let x = vz.materialize(out, cx, &ins[0])?;
    let y = vz.relead(out, cx, x, shape.clone())?;
    done(y, node)
}

fn transpose(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Op::Transpose { perm } = &node.op else { unreachable!() };
    let x = vz.materialize(out, cx, &ins[0])?;
    let mut p = vec![0];
    p.extend(perm.iter().map(|&a| a + 1));
    let y = out.transpose(x, &p)?;
    done(y, node)
}

fn slice(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Op::Slice { axis, start, len } = &node.op else { unreachable!() };
    let x = vz.materialize(out, cx, &ins[0])?;
    let y = out.slice(x, axis + 1, *start, *len)?;
    done(y, node)
}

fn gather_rows(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let (x, idx) = (&ins[0], &ins[1]);
    let Some(sx) = x.shape().cloned() else { return Ok(Conv::Unsupported("unknown per-iteration shape".into())) };
    if !x.stacked && !vz.policy.materialize_inputs {
        let xv = vz.value(out, cx, x)?;
        if idx.repr == Repr::Iota {
            // rows 0..n of X
            let rows = sx.dims()[0];
            return match cx.static_n {
                Some(n) if n == rows => done(xv, node),
                Some(n) if n < rows => done(out.slice_leading(xv, n)?, node),
                _ => {
                    let r = cx.range(out)?;
                    done(out.gather_rows(xv, r)?, node)
                }
            };
        }
        let Some(si) = idx.shape() else { return Ok(Conv::Unsupported("unknown index shape".into())) };
        let iv = vz.value(out, cx, idx)?;
        if si.rank() == 0 {
            return done(out.gather_rows(xv, iv)?, node);
        }
        let k = si.dims()[0];
        let flat = vz.merge(out, iv)?;
        let g = out.gather_rows(xv, flat)?;
        let mut tail = vec![k];
        tail.extend_from_slice(&sx.dims()[1..]);
        return done(vz.relead(out, cx, g, tail)?, node);
    }
    // stacked table: index into the merged [n*m, ...] rows
    let m = sx.dims()[0];
    let Some((flat, k)) = vz.flat_index(out, cx, m, idx)? else {
        return Ok(Conv::Unsupported("unknown index shape".into()));
    };
    let xv = vz.materialize(out, cx, x)?;
    let merged = vz.merge(out, xv)?;
    let g = out.gather_rows(merged, flat)?;
    match k {
        None => done(g, node),
        Some(k) => {
            let mut tail = vec![k];
            tail.extend_from_slice(&sx.dims()[1..]);
            done(vz.relead(out, cx, g, tail)?, node)
        }
    }
}

fn scatter_add_rows(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Some(total) = vz.static_i64(out, &ins[2]) else {
        return Ok(Conv::Unsupported("row count differs per iteration or is not constant".into()));
    };
    let Some(so) = node.outputs[0].shape.clone() else { return Ok(Conv::Unsupported("unknown per-iteration shape".into())) };
    let total = total as usize;
    let Some((flat, k)) = vz.flat_index(out, cx, total, &ins[1])? else {
        return Ok(Conv::Unsupported("unknown index shape".into()));
    };
    let mut u = vz.materialize(out, cx, &ins[0])?;
    if k.is_some() {
        u = vz.merge(out, u)?;
    }
    let t = out.scalar_i64(total as i64)?;
    let nt = out.mul(cx.iters, t)?;
    let s = vz.emit(out, Op::ScatterAddRows, vec![u, flat, nt])?;
    done(vz.relead(out, cx, s, so)?, node)
}

fn scatter_update(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Some(sa) = ins[0].shape().cloned() else { return Ok(Conv::Unsupported("unknown per-iteration shape".into())) };
    let Some((flat, k)) = vz.flat_index(out, cx, sa.dims()[0], &ins[1])? else {
        return Ok(Conv::Unsupported("unknown index shape".into()));
    };
    let acc = vz.materialize(out, cx, &ins[0])?;
    let acc = vz.merge(out, acc)?;
    let mut rows = vz.materialize(out, cx, &ins[2])?;
    if k.is_some() {
        rows = vz.merge(out, rows)?;
    }
    let s = vz.emit(out, Op::ScatterUpdate, vec![acc, flat, rows])?;
    done(vz.relead(out, cx, s, sa)?, node)
}

fn tile_leading(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Op::TileLeading { tail } = &node.op else { unreachable!() };
    let (Some(m), Some(sx)) = (vz.static_i64(out, &ins[1]), ins[0].shape()) else {
        return Ok(Conv::Unsupported("tile count is not a constant".into()));
    };
    let mut full = vec![m as usize];
    full.extend_from_slice(tail.dims());
    let mut x = vz.materialize(out, cx, &ins[0])?;
    if sx.rank() < full.len() {
        let mut t = ones(full.len() - sx.rank());
        t.extend_from_slice(sx.dims());
        x = vz.relead(out, cx, x, t)?;
    }
    let y = vz.emit(out, Op::TileLeading { tail: Shape::new(full) }, vec![x, cx.iters])?;
    done(y, node)
}

fn merge_leading(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Some(so) = node.outputs[0].shape.clone() else { return Ok(Conv::Unsupported("unknown per-iteration shape".into())) };
    let x = vz.materialize(out, cx, &ins[0])?;
    done(vz.relead(out, cx, x, so)?, node)
}

fn reshape_leading(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Op::ReshapeLeading { tail } = &node.op else { unreachable!() };
    let Some(m) = vz.static_i64(out, &ins[1]) else {
        return Ok(Conv::Unsupported("leading size is not a constant".into()));
    };
    let x = vz.materialize(out, cx, &ins[0])?;
    done(vz.relead(out, cx, x, tail.prepend(m as usize))?, node)
}

fn length(vz: &mut Vectorizer, out: &mut Graph, _cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Some(s) = ins[0].shape() else { return Ok(Conv::Unsupported("unknown per-iteration shape".into())) };
    let c = vz.const_i64(out, s.dims()[0] as i64)?;
    Ok(Conv::Done(vec![Wrapped::unstacked(c, node.outputs[0].clone())]))
}
