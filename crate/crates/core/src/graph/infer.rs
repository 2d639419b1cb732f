//! Build-time type and shape inference.

use super::{binary_kind, unary_kind, Graph, GraphError, NodeId, Op, OpKind, Result, ValueRef, ValueType};
use crate::tensor::linalg::{backprop_filter_shape, conv2d_shape, matmul_shape};
use crate::tensor::reduce::reduce_shape;
use crate::tensor::{broadcast_shapes, normalize_axes, sum_to_shape_axes, DType, Shape, TensorError};

struct Ctx<'a> {
    g: &'a Graph,
    id: NodeId,
    kind: OpKind,
    inputs: &'a [ValueRef],
}

impl Ctx<'_> {
    fn ty(&self, k: usize) -> &ValueType {
        self.g.value_type(self.inputs[k])
    }

    fn shape(&self, k: usize) -> Option<&Shape> {
        self.ty(k).shape.as_ref()
    }

    fn tensor(&self, source: TensorError) -> GraphError {
        GraphError::Tensor { node: self.id, kind: self.kind, source }
    }

    fn attr(&self, msg: impl Into<String>) -> GraphError {
        GraphError::BadAttr { node: self.id, kind: self.kind, msg: msg.into() }
    }

    fn mismatch(&self, msg: impl Into<String>) -> GraphError {
        GraphError::TypeMismatch { node: self.id, kind: self.kind, msg: msg.into() }
    }

    fn arity(&self, expected: usize) -> Result<()> {
        if self.inputs.len() != expected {
            return Err(GraphError::ArityMismatch {
                node: self.id,
                kind: self.kind,
                what: "inputs".into(),
                expected,
                found: self.inputs.len(),
            });
        }
        Ok(())
    }

    fn dtype(&self, k: usize, expected: DType) -> Result<()> {
        let found = self.ty(k).dtype;
        if found != expected {
            return Err(self.tensor(TensorError::DTypeMismatch { expected, found }));
        }
        Ok(())
    }

    fn numeric(&self, k: usize) -> Result<DType> {
        match self.ty(k).dtype {
            DType::Bool => Err(self.tensor(TensorError::DTypeMismatch { expected: DType::F64, found: DType::Bool })),
            d => Ok(d),
        }
    }

    fn same_dtype(&self, a: usize, b: usize) -> Result<DType> {
        let (da, db) = (self.ty(a).dtype, self.ty(b).dtype);
        if da != db {
            return Err(self.tensor(TensorError::DTypeMismatch { expected: da, found: db }));
        }
        Ok(da)
    }

    /// Input `k` must be an I64 scalar; returns its value if constant.
    fn count(&self, k: usize) -> Result<Option<usize>> {
        self.dtype(k, DType::I64)?;
        if let Some(s) = self.shape(k) {
            if !s.is_scalar() {
                return Err(self.tensor(TensorError::RankError(format!("count must be a scalar, got {s}"))));
            }
        }
        match self.g.const_i64(self.inputs[k]) {
            Some(n) if n < 0 => Err(self.tensor(TensorError::NegativeCount(n))),
            Some(n) => Ok(Some(n as usize)),
            None => Ok(None),
        }
    }

    /// Index input: I64 with rank 0 or 1.
    fn index(&self, k: usize) -> Result<()> {
        self.dtype(k, DType::I64)?;
        match self.shape(k) {
            Some(s) if s.rank() > 1 => {
                Err(self.tensor(TensorError::RankError(format!("index must have rank 0 or 1, got {s}"))))
            }
            _ => Ok(()),
        }
    }

    fn lead(&self, n: Option<usize>, tail: &Shape) -> Option<Shape> {
        n.map(|n| tail.prepend(n))
    }

    fn block_arity(&self, what: &str, expected: usize, found: usize) -> Result<()> {
        if expected != found {
            return Err(GraphError::ArityMismatch { node: self.id, kind: self.kind, what: what.into(), expected, found });
        }
        Ok(())
    }

    /// Subgraph params must accept the types in `args`.
    fn params_accept(&self, role: &str, sub: &Graph, args: &[ValueType]) -> Result<()> {
        self.block_arity(&format!("{role} params"), args.len(), sub.param_count())?;
        for r in sub.params() {
            let Op::Param { index, ty } = &sub.node(r.node).op else { unreachable!() };
            if !ty.compatible(&args[*index]) {
                return Err(self.mismatch(format!("{role} param {index} is {ty}, given {}", args[*index])));
            }
        }
        Ok(())
    }

    fn input_types(&self, range: std::ops::Range<usize>) -> Vec<ValueType> {
        range.map(|k| self.ty(k).clone()).collect()
    }
}

fn out(dtype: DType, shape: Option<Shape>) -> Vec<ValueType> {
    vec![ValueType { dtype, shape }]
}

/// Elementwise join of two optional shapes under broadcasting.
fn bcast(c: &Ctx, a: Option<&Shape>, b: Option<&Shape>) -> Result<Option<Shape>> {
    match (a, b) {
        (Some(a), Some(b)) => broadcast_shapes(a, b).map(Some).map_err(|e| c.tensor(e)),
        _ => Ok(None),
    }
}

impl Graph {
    pub(crate) fn infer(&self, id: NodeId, op: &Op, inputs: &[ValueRef]) -> Result<Vec<ValueType>> {
        let c = Ctx { g: self, id, kind: op.kind(), inputs };
        let tensor = |e: TensorError| c.tensor(e);
        Ok(match op {
            Op::Constant(t) => {
                c.arity(0)?;
                vec![ValueType::of(t)]
            }
            Op::Placeholder { ty, .. } | Op::Param { ty, .. } => {
                c.arity(0)?;
                vec![ty.clone()]
            }
            Op::LoopVar => {
                c.arity(0)?;
                vec![ValueType::scalar(DType::I64)]
            }
            Op::Unary(u) => {
                c.arity(1)?;
                let d = c.ty(0).dtype;
                let r = u.result_dtype(d).ok_or_else(|| c.attr(format!("{} does not accept {d}", unary_kind(*u))))?;
                out(r, c.shape(0).cloned())
            }
            Op::Binary(b) => {
                c.arity(2)?;
                let d = c.same_dtype(0, 1)?;
                let r = b.result_dtype(d).ok_or_else(|| c.attr(format!("{} does not accept {d}", binary_kind(*b))))?;
                out(r, bcast(&c, c.shape(0), c.shape(1))?)
            }
            Op::Select => {
                c.arity(3)?;
                c.dtype(0, DType::Bool)?;
                let d = c.same_dtype(1, 2)?;
                let ab = bcast(&c, c.shape(1), c.shape(2))?;
                out(d, bcast(&c, c.shape(0), ab.as_ref())?)
            }
            Op::MatMul => {
                c.arity(2)?;
                let d = c.same_dtype(0, 1)?;
                c.numeric(0)?;
                let s = match (c.shape(0), c.shape(1)) {
                    (Some(a), Some(b)) => Some(matmul_shape(a, b).map_err(tensor)?),
                    _ => None,
                };
                out(d, s)
            }
            Op::Conv2d => {
                c.arity(2)?;
                c.dtype(0, DType::F64)?;
                c.dtype(1, DType::F64)?;
                let s = match (c.shape(0), c.shape(1)) {
                    (Some(x), Some(f)) => Some(conv2d_shape(x, f).map_err(tensor)?),
                    _ => None,
                };
                out(DType::F64, s)
            }
            Op::Conv2dBackpropInput => {
                c.arity(2)?;
                c.dtype(0, DType::F64)?;
                c.dtype(1, DType::F64)?;
                let s = match (c.shape(0), c.shape(1)) {
                    (Some(g), Some(f)) => match (g.dims(), f.dims()) {
                        ([b, h, w, c2], [_, _, c1, fc2]) if c2 == fc2 => Some(Shape::new([*b, *h, *w, *c1])),
                        _ => {
                            return Err(tensor(TensorError::IncompatibleShapes(format!(
                                "conv2d_backprop_input: cotangent {g} vs filter {f}"
                            ))))
                        }
                    },
                    _ => None,
                };
                out(DType::F64, s)
            }
            Op::Conv2dBackpropFilter { kernel } => {
                c.arity(2)?;
                c.dtype(0, DType::F64)?;
                c.dtype(1, DType::F64)?;
                if kernel.contains(&0) {
                    return Err(c.attr("kernel dims must be positive"));
                }
                let s = match (c.shape(0), c.shape(1)) {
                    (Some(x), Some(g)) => Some(backprop_filter_shape(x, g, *kernel).map_err(tensor)?),
                    _ => None,
                };
                out(DType::F64, s)
            }
            Op::ReduceSum { axes } => {
                c.arity(1)?;
                let d = c.numeric(0)?;
                let s = match c.shape(0) {
                    Some(s) => Some(reduce_shape(s, axes).map_err(tensor)?),
                    None => None,
                };
                out(d, s)
            }
            Op::SumToShape { shape } => {
                c.arity(1)?;
                let d = c.numeric(0)?;
                if let Some(s) = c.shape(0) {
                    sum_to_shape_axes(s, shape).map_err(tensor)?;
                }
                out(d, Some(shape.clone()))
            }
            Op::BroadcastTo { shape } => {
                c.arity(1)?;
                if let Some(s) = c.shape(0) {
                    if broadcast_shapes(s, shape).map_err(tensor)? != *shape {
                        return Err(tensor(TensorError::IncompatibleShapes(format!("cannot broadcast {s} to {shape}"))));
                    }
                }
                out(c.ty(0).dtype, Some(shape.clone()))
            }
            Op::Concat { axis } => {
                if inputs.is_empty() {
                    return Err(c.attr("concat needs at least one input"));
                }
                let d = c.ty(0).dtype;
                for k in 1..inputs.len() {
                    c.same_dtype(0, k)?;
                }
                let shapes: Option<Vec<&Shape>> = (0..inputs.len()).map(|k| c.shape(k)).collect();
                let s = match shapes {
                    Some(shapes) => Some(concat_shape(&shapes, *axis).map_err(tensor)?),
                    None => None,
                };
                out(d, s)
            }
            Op::Stack { axis } => {
                if inputs.is_empty() {
                    return Err(c.attr("stack needs at least one input"));
                }
                let d = c.ty(0).dtype;
                for k in 1..inputs.len() {
                    c.same_dtype(0, k)?;
                }
                let shapes: Option<Vec<&Shape>> = (0..inputs.len()).map(|k| c.shape(k)).collect();
                let s = match shapes {
                    Some(shapes) => {
                        if shapes.iter().any(|s| *s != shapes[0]) {
                            return Err(tensor(TensorError::IncompatibleShapes("stack inputs differ in shape".into())));
                        }
                        if *axis > shapes[0].rank() {
                            return Err(tensor(TensorError::AxisOutOfRange {
                                axis: *axis as i64,
                                rank: shapes[0].rank() + 1,
                            }));
                        }
                        let mut dims = shapes[0].dims().to_vec();
                        dims.insert(*axis, shapes.len());
                        Some(Shape::new(dims))
                    }
                    None => None,
                };
                out(d, s)
            }
            Op::Reshape { shape } => {
                c.arity(1)?;
                if let Some(s) = c.shape(0) {
                    if s.numel() != shape.numel() {
                        return Err(tensor(TensorError::IncompatibleShapes(format!("cannot reshape {s} to {shape}"))));
                    }
                }
                out(c.ty(0).dtype, Some(shape.clone()))
            }
            Op::Transpose { perm } => {
                c.arity(1)?;
                let mut seen = vec![false; perm.len()];
                if perm.iter().any(|&p| p >= perm.len() || std::mem::replace(&mut seen[p], true)) {
                    return Err(tensor(TensorError::BadPermutation(perm.clone())));
                }
                let s = match c.shape(0) {
                    Some(s) if s.rank() != perm.len() => return Err(tensor(TensorError::BadPermutation(perm.clone()))),
                    Some(s) => Some(Shape::new(perm.iter().map(|&p| s.dims()[p]).collect::<Vec<_>>())),
                    None => None,
                };
                out(c.ty(0).dtype, s)
            }
            Op::Slice { axis, start, len } => {
                c.arity(1)?;
                let s = match c.shape(0) {
                    Some(s) => {
                        if *axis >= s.rank() {
                            return Err(tensor(TensorError::AxisOutOfRange { axis: *axis as i64, rank: s.rank() }));
                        }
                        if start + len > s.dims()[*axis] {
                            return Err(tensor(TensorError::IncompatibleShapes(format!(
                                "slice [{start}, {}) exceeds axis {axis} of {s}",
                                start + len
                            ))));
                        }
                        let mut dims = s.dims().to_vec();
                        dims[*axis] = *len;
                        Some(Shape::new(dims))
                    }
                    None => None,
                };
                out(c.ty(0).dtype, s)
            }
            Op::GatherRows => {
                c.arity(2)?;
                c.index(1)?;
                let s = match (c.shape(0), c.shape(1)) {
                    (Some(x), _) if x.rank() == 0 => {
                        return Err(tensor(TensorError::RankError("gather_rows on a scalar".into())))
                    }
                    (Some(x), Some(i)) if i.rank() == 0 => Some(x.tail()),
                    (Some(x), Some(i)) => Some(x.tail().prepend(i.dims()[0])),
                    _ => None,
                };
                out(c.ty(0).dtype, s)
            }
            Op::ScatterRows { parts } => {
                if *parts == 0 {
                    return Err(c.attr("scatter_rows needs at least one part"));
                }
                c.arity(2 * parts)?;
                let d = c.ty(*parts).dtype;
                let mut total = Some(0usize);
                let mut tail: Option<Shape> = None;
                for k in 0..*parts {
                    c.dtype(k, DType::I64)?;
                    c.same_dtype(*parts, parts + k)?;
                    match c.shape(k) {
                        Some(s) if s.rank() != 1 => {
                            return Err(tensor(TensorError::RankError("scatter_rows index sets must be rank 1".into())))
                        }
                        Some(s) => total = total.map(|t| t + s.dims()[0]),
                        None => total = None,
                    }
                    if let Some(p) = c.shape(parts + k) {
                        if p.rank() == 0 {
                            return Err(tensor(TensorError::RankError("scatter_rows parts must have rank >= 1".into())));
                        }
                        if let Some(s) = c.shape(k) {
                            if p.dims()[0] != s.dims()[0] {
                                return Err(tensor(TensorError::IncompatibleShapes(format!(
                                    "scatter_rows part {k} has shape {p} for {} indices",
                                    s.dims()[0]
                                ))));
                            }
                        }
                        match &tail {
                            Some(t) if *t != p.tail() => {
                                return Err(tensor(TensorError::IncompatibleShapes(format!(
                                    "scatter_rows part {k} has rows {} vs {t}",
                                    p.tail()
                                ))))
                            }
                            _ => tail = Some(p.tail()),
                        }
                    }
                }
                let all_known = (0..*parts).all(|k| c.shape(parts + k).is_some());
                let s = match (total, tail) {
                    (Some(t), Some(tail)) if all_known => Some(tail.prepend(t)),
                    _ => None,
                };
                out(d, s)
            }
            Op::ScatterAddRows => {
                c.arity(3)?;
                let d = c.numeric(0)?;
                c.index(1)?;
                let total = c.count(2)?;
                let rest = match (c.shape(0), c.shape(1)) {
                    (Some(u), Some(i)) if i.rank() == 0 => Some(u.clone()),
                    (Some(u), Some(i)) => {
                        if u.rank() == 0 || u.dims()[0] != i.dims()[0] {
                            return Err(tensor(TensorError::IncompatibleShapes(format!(
                                "scatter_add_rows: {u} updates for {i} indices"
                            ))));
                        }
                        Some(u.tail())
                    }
                    _ => None,
                };
                out(d, rest.and_then(|r| c.lead(total, &r)))
            }
            Op::ScatterUpdate => {
                c.arity(3)?;
                let d = c.same_dtype(0, 2)?;
                c.index(1)?;
                if let (Some(acc), Some(i), Some(rows)) = (c.shape(0), c.shape(1), c.shape(2)) {
                    if acc.rank() == 0 {
                        return Err(tensor(TensorError::RankError("scatter_update on a scalar".into())));
                    }
                    let expected = if i.rank() == 0 { acc.tail() } else { acc.tail().prepend(i.dims()[0]) };
                    if *rows != expected {
                        return Err(tensor(TensorError::IncompatibleShapes(format!(
                            "scatter_update: rows {rows} do not match {expected}"
                        ))));
                    }
                }
                out(d, c.shape(0).cloned())
            }
            Op::TileLeading { tail } => {
                c.arity(2)?;
                let n = c.count(1)?;
                if let Some(x) = c.shape(0) {
                    let probe = tail.prepend(n.unwrap_or(1));
                    let lead_ok = x.rank() <= tail.rank() || n.is_none() || x.dims()[0] == 1 || Some(x.dims()[0]) == n;
                    let rest = if x.rank() > tail.rank() { x.tail() } else { x.clone() };
                    let ok = x.rank() <= probe.rank()
                        && lead_ok
                        && broadcast_shapes(&rest, tail).map(|s| s == *tail).unwrap_or(false);
                    if !ok {
                        return Err(tensor(TensorError::IncompatibleShapes(format!("cannot tile {x} to [n]+{tail}"))));
                    }
                }
                out(c.ty(0).dtype, c.lead(n, tail))
            }
            Op::MergeLeading => {
                c.arity(1)?;
                let s = match c.shape(0) {
                    Some(s) if s.rank() < 2 => {
                        return Err(tensor(TensorError::RankError(format!("merge_leading needs rank >= 2, got {s}"))))
                    }
                    Some(s) => {
                        let d = s.dims();
                        let mut dims = vec![d[0] * d[1]];
                        dims.extend_from_slice(&d[2..]);
                        Some(Shape::new(dims))
                    }
                    None => None,
                };
                out(c.ty(0).dtype, s)
            }
            Op::ReshapeLeading { tail } => {
                c.arity(2)?;
                let n = c.count(1)?;
                if let (Some(x), Some(n)) = (c.shape(0), n) {
                    if x.numel() != n * tail.numel() {
                        return Err(tensor(TensorError::IncompatibleShapes(format!("cannot reshape {x} to [{n}]+{tail}"))));
                    }
                }
                out(c.ty(0).dtype, c.lead(n, tail))
            }
            Op::Range => {
                c.arity(1)?;
                let n = c.count(0)?;
                out(DType::I64, n.map(|n| Shape::new([n])))
            }
            Op::WhereTrue => {
                c.arity(1)?;
                c.dtype(0, DType::Bool)?;
                if let Some(s) = c.shape(0) {
                    if s.rank() != 1 {
                        return Err(tensor(TensorError::RankError(format!("where_true needs rank 1, got {s}"))));
                    }
                }
                out(DType::I64, None)
            }
            Op::Length => {
                c.arity(1)?;
                if let Some(s) = c.shape(0) {
                    if s.rank() == 0 {
                        return Err(tensor(TensorError::RankError("length of a scalar".into())));
                    }
                }
                vec![ValueType::scalar(DType::I64)]
            }
            Op::Zeros { dtype, tail } => {
                c.arity(1)?;
                let n = c.count(0)?;
                out(*dtype, c.lead(n, tail))
            }
            Op::ReadVariable { name } => {
                c.arity(0)?;
                let v = self
                    .variables
                    .get(name)
                    .ok_or_else(|| GraphError::UnknownVariable { node: id, name: name.clone() })?;
                vec![ValueType::of(v)]
            }
            Op::Assign { name } | Op::AssignAdd { name } => {
                c.arity(1)?;
                let v = self
                    .variables
                    .get(name)
                    .ok_or_else(|| GraphError::UnknownVariable { node: id, name: name.clone() })?;
                if matches!(op, Op::AssignAdd { .. }) {
                    c.numeric(0)?;
                }
                let vt = ValueType::of(v);
                if !vt.compatible(c.ty(0)) {
                    return Err(c.mismatch(format!("variable {name:?} is {vt}, value is {}", c.ty(0))));
                }
                Vec::new()
            }
            Op::RandomUniform { shape } => match inputs.len() {
                0 => out(DType::F64, Some(shape.clone())),
                1 => {
                    let n = c.count(0)?;
                    out(DType::F64, c.lead(n, shape))
                }
                found => {
                    return Err(GraphError::ArityMismatch { node: id, kind: c.kind, what: "inputs".into(), expected: 0, found })
                }
            },
            Op::Cond(b) => {
                if inputs.is_empty() {
                    return Err(c.attr("cond needs a predicate input"));
                }
                c.dtype(0, DType::Bool)?;
                if matches!(c.shape(0), Some(s) if !s.is_scalar()) {
                    return Err(GraphError::NonScalarCondition(id));
                }
                let caps = c.input_types(1..inputs.len());
                c.params_accept("then", &b.then_branch, &caps)?;
                c.params_accept("else", &b.else_branch, &caps)?;
                let (t, e) = (b.then_branch.outputs(), b.else_branch.outputs());
                c.block_arity("else outputs", t.len(), e.len())?;
                let mut outs = Vec::with_capacity(t.len());
                for (k, (&tr, &er)) in t.iter().zip(e).enumerate() {
                    let (tt, et) = (b.then_branch.value_type(tr), b.else_branch.value_type(er));
                    if tt.dtype != et.dtype {
                        return Err(c.mismatch(format!("branch output {k}: then {tt}, else {et}")));
                    }
                    let shape = if tt.shape == et.shape { tt.shape.clone() } else { None };
                    outs.push(ValueType { dtype: tt.dtype, shape });
                }
                outs
            }
            Op::While(w) => {
                if w.carried > inputs.len() {
                    return Err(c.attr(format!("{} carried values but {} inputs", w.carried, inputs.len())));
                }
                let all = c.input_types(0..inputs.len());
                c.params_accept("cond", &w.cond, &all)?;
                c.params_accept("body", &w.body, &all)?;
                c.block_arity("cond outputs", 1, w.cond.outputs().len())?;
                let ct = w.cond.value_type(w.cond.outputs()[0]);
                if ct.dtype != DType::Bool || matches!(&ct.shape, Some(s) if !s.is_scalar()) {
                    return Err(GraphError::NonScalarCondition(id));
                }
                c.block_arity("body outputs", w.carried, w.body.outputs().len())?;
                for (k, &r) in w.body.outputs().iter().enumerate() {
                    let bt = w.body.value_type(r);
                    if !bt.compatible(&all[k]) {
                        return Err(c.mismatch(format!("carried value {k}: initial {}, body {bt}", all[k])));
                    }
                }
                all[..w.carried].to_vec()
            }
            Op::Parfor(p) => {
                if inputs.is_empty() {
                    return Err(c.attr("parfor needs an iteration count"));
                }
                let n = c.count(0)?;
                let caps = c.input_types(1..inputs.len());
                c.params_accept("body", &p.body, &caps)?;
                p.body
                    .outputs()
                    .iter()
                    .map(|&r| {
                        let t = p.body.value_type(r);
                        ValueType { dtype: t.dtype, shape: t.shape.as_ref().and_then(|s| c.lead(n, s)) }
                    })
                    .collect()
            }
        })
    }
}

fn concat_shape(shapes: &[&Shape], axis: i64) -> Result<Shape, TensorError> {
    let first = shapes[0];
    if first.rank() == 0 {
        return Err(TensorError::RankError("concat of scalars".into()));
    }
    let ax = normalize_axes(&[axis], first.rank())?[0];
    let mut total = 0;
    for s in shapes {
        let same_rest = s.rank() == first.rank()
            && s.dims().iter().zip(first.dims()).enumerate().all(|(k, (a, b))| k == ax || a == b);
        if !same_rest {
            return Err(TensorError::IncompatibleShapes(format!("concat {first} with {s} on axis {axis}")));
        }
        total += s.dims()[ax];
    }
    let mut dims = first.dims().to_vec();
    dims[ax] = total;
    Ok(Shape::new(dims))
}
