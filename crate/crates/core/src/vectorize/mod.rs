//! Static vectorization of parallel-for loops.
//!
//! A parfor body is walked in topological order and every node is handed
//! to a converter looked up by its [`OpKind`]. Converters see *wrapped*
//! inputs: either loop-invariant values (one copy for all iterations) or
//! stacked values whose leading axis runs over the iterations. Nodes
//! without a usable converter are run by a sequential loop instead.

mod control;
mod rules;
mod stateful;

use std::cell::Cell;
use std::collections::BTreeSet;
use std::fmt;

use crate::graph::{topo_order, Graph, GraphError, Node, NodeId, Op, OpKind, ParforBlock, ValueRef, ValueType, WhileBlock};
use crate::tensor::{BinaryOp, DType, Shape};

pub use rules::{Converter, Registry};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VectorizeError {
    #[error("node {node} ({kind}): {source}")]
    Convert { node: String, kind: OpKind, source: GraphError },
    #[error("node {node}: assign of an iteration-dependent value to {name:?}")]
    StatefulNotSupported { node: String, name: String },
    #[error("node {node} ({kind}): {msg}")]
    Unconvertible { node: String, kind: OpKind, msg: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T, E = VectorizeError> = std::result::Result<T, E>;

/// How a converted value is represented in the generated graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Repr {
    Value(ValueRef),
    /// `range(iters)` of the current context, not yet emitted.
    Iota,
}

/// A body value after conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct Wrapped {
    pub repr: Repr,
    /// Leading axis runs over iterations.
    pub stacked: bool,
    /// Per-iteration type in the source body.
    pub ty: ValueType,
}

impl Wrapped {
    pub fn unstacked(v: ValueRef, ty: ValueType) -> Self {
        Wrapped { repr: Repr::Value(v), stacked: false, ty }
    }

    pub fn stacked(v: ValueRef, ty: ValueType) -> Self {
        Wrapped { repr: Repr::Value(v), stacked: true, ty }
    }

    pub fn iota() -> Self {
        Wrapped { repr: Repr::Iota, stacked: true, ty: ValueType::scalar(DType::I64) }
    }

    /// Static per-iteration shape.
    pub fn shape(&self) -> Option<&Shape> {
        self.ty.shape.as_ref()
    }
}

/// Iteration context for one generated graph.
#[derive(Debug)]
pub struct Cx {
    /// I64 scalar: the number of iterations handled here.
    pub iters: ValueRef,
    pub static_n: Option<usize>,
    /// Value the source loop variable stands for.
    pub index: Repr,
    range: Cell<Option<ValueRef>>,
}

impl Cx {
    pub fn new(iters: ValueRef, static_n: Option<usize>, index: Repr) -> Self {
        Cx { iters, static_n, index, range: Cell::new(None) }
    }

    /// `range(iters)`, emitted at most once per context.
    pub fn range(&self, out: &mut Graph) -> Result<ValueRef> {
        if let Some(r) = self.range.get() {
            return Ok(r);
        }
        let r = ValueRef::new(out.add_node(Op::Range, vec![self.iters], [])?, 0);
        self.range.set(Some(r));
        Ok(r)
    }

    pub fn index_value(&self, out: &mut Graph) -> Result<ValueRef> {
        match self.index {
            Repr::Value(v) => Ok(v),
            Repr::Iota => self.range(out),
        }
    }
}

/// What to do with assign of a stacked value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StatefulPolicy {
    #[default]
    Error,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Policy {
    /// Send every (non-block) node through the sequential loop.
    pub force_fallback: bool,
    /// Skip converter fast paths that rely on unstacked inputs: everything
    /// is materialized first.
    pub materialize_inputs: bool,
    pub stateful: StatefulPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Invariant,
    Converted,
    Fallback,
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Route::Invariant => "invariant",
            Route::Converted => "converted",
            Route::Fallback => "fallback",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diag {
    /// Slash-separated node path from the parfor body, e.g. `4/then/2`.
    pub node: String,
    pub kind: OpKind,
    pub route: Route,
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics(pub Vec<Diag>);

impl Diagnostics {
    pub fn fallbacks(&self) -> impl Iterator<Item = &Diag> {
        self.0.iter().filter(|d| d.route == Route::Fallback)
    }

    pub fn count(&self, route: Route) -> usize {
        self.0.iter().filter(|d| d.route == route).count()
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.0 {
            write!(f, "node {} ({}): {}", d.node, d.kind, d.route)?;
            if !d.note.is_empty() {
                write!(f, " ({})", d.note)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Result of a converter.
pub enum Conv {
    Done(Vec<Wrapped>),
    /// The converter declines; the node goes to the sequential loop.
    Unsupported(String),
}

/// Iteration count handed to [`vectorize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterCount {
    Static(usize),
    /// Read from param 0 at run time.
    Dynamic,
}

/// A vectorized parfor as a standalone subgraph.
#[derive(Debug, Clone)]
pub struct Vectorized {
    /// Params: `[iters, captures...]`; outputs are the stacked results.
    pub graph: Graph,
    pub diagnostics: Diagnostics,
}

pub struct Vectorizer<'r> {
    registry: &'r Registry,
    pub policy: Policy,
    diags: Vec<Diag>,
    path: Vec<String>,
}

/// Vectorize one parfor block into a standalone subgraph.
pub fn vectorize(block: &ParforBlock, iters: IterCount, policy: Policy) -> Result<Vectorized> {
    vectorize_with(&Registry::standard(), block, iters, policy)
}

/// [`vectorize`] with a caller-supplied converter table.
pub fn vectorize_with(registry: &Registry, block: &ParforBlock, iters: IterCount, policy: Policy) -> Result<Vectorized> {
    let mut vz = Vectorizer::new(registry, policy);
    let graph = vz.vectorize_block(block, iters)?;
    Ok(Vectorized { graph, diagnostics: vz.diagnostics() })
}

/// Replace every parfor in `g` (including those nested in other blocks)
/// with equivalent parfor-free code.
pub fn vectorize_graph(g: &Graph, policy: Policy) -> Result<(Graph, Diagnostics)> {
    let registry = Registry::standard();
    let mut vz = Vectorizer::new(&registry, policy);
    let out = vz.lower(g)?;
    Ok((out, vz.diagnostics()))
}

/// Control set standing for a source node in the generated graph.
type Anchors = Vec<BTreeSet<NodeId>>;

fn mirror_ctrl(out: &mut Graph, first: usize, node: &Node, anchors: &mut Anchors) -> Result<()> {
    let mut ctrl = BTreeSet::new();
    for d in &node.control_deps {
        ctrl.extend(anchors[d.0].iter().copied());
    }
    let emitted: BTreeSet<NodeId> = (first..out.len()).map(NodeId).collect();
    for &e in &emitted {
        for &d in &ctrl {
            if d.0 < first {
                out.add_control_dep(e, d)?;
            }
        }
    }
    anchors[node.id.0] = if emitted.is_empty() { ctrl } else { emitted };
    Ok(())
}

/// Fresh subgraph of `parent` with one param per type.
pub fn fragment(parent: &Graph, types: &[ValueType]) -> Result<(Graph, Vec<ValueRef>)> {
    let mut g = Graph::fragment_of(parent);
    let ps = types
        .iter()
        .enumerate()
        .map(|(index, ty)| g.param(index, ty.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((g, ps))
}

/// Does any subgraph of `op` read the enclosing loop variable?
fn has_free_loop_var(op: &Op) -> bool {
    if matches!(op, Op::Parfor(_)) {
        return false;
    }
    op.subgraphs()
        .iter()
        .any(|(_, g)| g.nodes().iter().any(|n| matches!(n.op, Op::LoopVar) || has_free_loop_var(&n.op)))
}

impl<'r> Vectorizer<'r> {
    pub fn new(registry: &'r Registry, policy: Policy) -> Self {
        Vectorizer { registry, policy, diags: Vec::new(), path: Vec::new() }
    }

    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics(self.diags.clone())
    }

    fn here(&self) -> String {
        self.path.join("/")
    }

    pub fn err(&self, node: &Node, msg: impl Into<String>) -> VectorizeError {
        VectorizeError::Unconvertible { node: self.here(), kind: node.op.kind(), msg: msg.into() }
    }

    fn note(&mut self, node: &Node, route: Route, note: impl Into<String>) {
        self.diags.push(Diag { node: self.here(), kind: node.op.kind(), route, note: note.into() });
    }

    /// Run `f` with `seg` pushed on the diagnostic path.
    pub(crate) fn nested<T>(&mut self, seg: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.path.push(seg.to_string());
        let r = f(self);
        self.path.pop();
        r
    }

    /// Convert with diagnostics discarded afterwards (used for probing).
    pub(crate) fn trial<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let mark = self.diags.len();
        let r = f(self);
        self.diags.truncate(mark);
        r
    }

    // ── value helpers ──

    pub fn value(&self, out: &mut Graph, cx: &Cx, w: &Wrapped) -> Result<ValueRef> {
        match w.repr {
            Repr::Value(v) => Ok(v),
            Repr::Iota => cx.range(out),
        }
    }

    /// Stacked form of `w`: unchanged if already stacked, tiled otherwise.
    pub fn materialize(&self, out: &mut Graph, cx: &Cx, w: &Wrapped) -> Result<ValueRef> {
        let v = self.value(out, cx, w)?;
        if w.stacked {
            return Ok(v);
        }
        let tail = w.shape().cloned().ok_or_else(|| {
            VectorizeError::Unconvertible {
                node: self.here(),
                kind: OpKind::TileLeading,
                msg: "cannot tile a value of unknown shape".into(),
            }
        })?;
        Ok(ValueRef::new(out.add_node(Op::TileLeading { tail }, vec![v, cx.iters], [])?, 0))
    }

    pub fn emit(&self, out: &mut Graph, op: Op, inputs: Vec<ValueRef>) -> Result<ValueRef> {
        Ok(ValueRef::new(out.add_node(op, inputs, [])?, 0))
    }

    pub fn const_i64(&self, out: &mut Graph, v: i64) -> Result<ValueRef> {
        Ok(out.scalar_i64(v)?)
    }

    /// Integer value of a wrapped unstacked scalar, when it is a constant.
    pub fn static_i64(&self, out: &Graph, w: &Wrapped) -> Option<i64> {
        match (w.repr, w.stacked) {
            (Repr::Value(v), false) => out.const_i64(v),
            _ => None,
        }
    }

    // ── walking ──

    /// Convert every node of `body`, with `params` standing for its params.
    pub fn convert_body(&mut self, out: &mut Graph, cx: &Cx, body: &Graph, params: &[Wrapped]) -> Result<Vec<Wrapped>> {
        let mut env: Vec<Option<Vec<Wrapped>>> = vec![None; body.len()];
        let mut anchors: Anchors = vec![BTreeSet::new(); body.len()];
        for id in topo_order(body)? {
            let node = body.node(id);
            if let Op::Param { index, .. } = node.op {
                env[id.0] = Some(vec![params[index].clone()]);
                continue;
            }
            let ins: Vec<Wrapped> =
                node.inputs.iter().map(|r| env[r.node.0].as_ref().expect("topological order")[r.port].clone()).collect();
            let first = out.len();
            self.path.push(id.to_string());
            let outs = self.convert_node(out, cx, node, &ins);
            let outs = match outs {
                Err(VectorizeError::Graph(source)) => {
                    Err(VectorizeError::Convert { node: self.here(), kind: node.op.kind(), source })
                }
                r => r,
            };
            self.path.pop();
            env[id.0] = Some(outs?);
            mirror_ctrl(out, first, node, &mut anchors)?;
        }
        Ok(body.outputs().iter().map(|r| env[r.node.0].as_ref().expect("outputs converted")[r.port].clone()).collect())
    }

    fn convert_node(&mut self, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Vec<Wrapped>> {
        let op = &node.op;
        let pure = !op.is_stateful() && !op.is_block() && !matches!(op, Op::LoopVar | Op::Param { .. });
        if pure && ins.iter().all(|w| !w.stacked) {
            let vals = ins.iter().map(|w| self.value(out, cx, w)).collect::<Result<Vec<_>>>()?;
            let id = out.add_node(op.clone(), vals, [])?;
            self.note(node, Route::Invariant, "");
            return Ok(self.wrap_all(out, id, node, false));
        }
        if matches!(op, Op::LoopVar) {
            self.note(node, Route::Converted, "");
            return Ok(vec![Wrapped { repr: cx.index, stacked: true, ty: node.outputs[0].clone() }]);
        }
        if self.policy.force_fallback && !op.is_block() {
            return self.fallback(out, cx, node, ins, "forced");
        }
        let reason = match self.registry.get(op.kind()) {
            Some(f) => match f(self, out, cx, node, ins)? {
                Conv::Done(ws) => {
                    if !op.is_block() {
                        self.note(node, Route::Converted, "");
                    }
                    return Ok(ws);
                }
                Conv::Unsupported(why) => why,
            },
            None => "no converter registered".to_string(),
        };
        self.fallback(out, cx, node, ins, &reason)
    }

    /// Wrap every output port of generated node `id` with the source types.
    pub fn wrap_all(&self, _out: &Graph, id: NodeId, node: &Node, stacked: bool) -> Vec<Wrapped> {
        node.outputs
            .iter()
            .enumerate()
            .map(|(p, ty)| Wrapped { repr: Repr::Value(ValueRef::new(id, p)), stacked, ty: ty.clone() })
            .collect()
    }

    /// Sequential loop over the iterations, writing each result row into
    /// a zero-initialised accumulator.
    pub fn fallback(&mut self, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped], reason: &str) -> Result<Vec<Wrapped>> {
        if has_free_loop_var(&node.op) {
            return Err(self.err(node, format!("cannot loop over a block reading the loop variable ({reason})")));
        }
        let mut tails = Vec::with_capacity(node.outputs.len());
        for ty in &node.outputs {
            match &ty.shape {
                Some(s) => tails.push((ty.dtype, s.clone())),
                None => return Err(self.err(node, format!("fallback needs static output shapes ({reason})"))),
            }
        }
        let zero = out.scalar_i64(0)?;
        let mut carried = vec![zero];
        for (dtype, tail) in &tails {
            carried.push(self.emit(out, Op::Zeros { dtype: *dtype, tail: tail.clone() }, vec![cx.iters])?);
        }
        let mut caps = vec![cx.iters];
        for w in ins {
            caps.push(self.value(out, cx, w)?);
        }
        let mut all = carried.clone();
        all.extend_from_slice(&caps);
        let types: Vec<ValueType> = all.iter().map(|&r| out.value_type(r).clone()).collect();
        let nc = carried.len();

        let (mut cond, p) = fragment(out, &types)?;
        let c = cond.less(p[0], p[nc])?;
        cond.set_outputs(vec![c])?;

        let (mut body, p) = fragment(out, &types)?;
        let j = p[0];
        let mut rows = Vec::with_capacity(ins.len());
        for (k, w) in ins.iter().enumerate() {
            let v = p[nc + 1 + k];
            rows.push(if w.stacked { body.gather_rows(v, j)? } else { v });
        }
        let y = body.add_node(node.op.clone(), rows, [])?;
        let one = body.scalar_i64(1)?;
        let mut next = vec![body.add(j, one)?];
        for k in 0..tails.len() {
            let acc = p[1 + k];
            next.push(ValueRef::new(body.add_node(Op::ScatterUpdate, vec![acc, j, ValueRef::new(y, k)], [])?, 0));
        }
        body.set_outputs(next)?;

        let w = out.add_node(Op::While(Box::new(WhileBlock { carried: nc, cond, body })), all, [])?;
        self.note(node, Route::Fallback, reason);
        Ok(node
            .outputs
            .iter()
            .enumerate()
            .map(|(k, ty)| Wrapped::stacked(ValueRef::new(w, k + 1), ty.clone()))
            .collect())
    }

    // ── entry points ──

    fn vectorize_block(&mut self, block: &ParforBlock, iters: IterCount) -> Result<Graph> {
        let mut types = vec![ValueType::scalar(DType::I64)];
        let mut caps_ty = Vec::new();
        for p in block.body.params() {
            let Op::Param { ty, .. } = &block.body.node(p.node).op else { unreachable!() };
            caps_ty.push(ty.clone());
        }
        types.extend(caps_ty.iter().cloned());
        let (mut out, ps) = fragment(&block.body, &types)?;
        let (n, static_n) = match iters {
            IterCount::Static(n) => (out.scalar_i64(n as i64)?, Some(n)),
            IterCount::Dynamic => (ps[0], None),
        };
        let cx = Cx::new(n, static_n, Repr::Iota);
        let caps: Vec<Wrapped> = ps[1..].iter().zip(caps_ty).map(|(&p, ty)| Wrapped::unstacked(p, ty)).collect();
        let ws = self.convert_body(&mut out, &cx, &block.body, &caps)?;
        let outs = ws.iter().map(|w| self.materialize(&mut out, &cx, w)).collect::<Result<Vec<_>>>()?;
        out.set_outputs(outs)?;
        Ok(out)
    }

    /// Vectorize `g` in place of its parfor nodes.
    fn lower(&mut self, g: &Graph) -> Result<Graph> {
        let mut out = Graph::fragment_of(g);
        let mut env: Vec<Option<Vec<ValueRef>>> = vec![None; g.len()];
        let mut anchors: Anchors = vec![BTreeSet::new(); g.len()];
        for id in topo_order(g)? {
            let node = g.node(id);
            let ins: Vec<ValueRef> = node.inputs.iter().map(|r| env[r.node.0].as_ref().expect("topological order")[r.port]).collect();
            let first = out.len();
            let outs = match &node.op {
                Op::Parfor(p) => {
                    self.path.push(id.to_string());
                    let r = self.inline_parfor(&mut out, p, &ins);
                    self.path.pop();
                    r?
                }
                op => {
                    let op = match op {
                        Op::Cond(c) => {
                            let mut c = (**c).clone();
                            c.then_branch = self.lower(&c.then_branch)?;
                            c.else_branch = self.lower(&c.else_branch)?;
                            Op::Cond(Box::new(c))
                        }
                        Op::While(w) => {
                            let mut w = (**w).clone();
                            w.cond = self.lower(&w.cond)?;
                            w.body = self.lower(&w.body)?;
                            Op::While(Box::new(w))
                        }
                        op => op.clone(),
                    };
                    let nid = out.add_node(op, ins, [])?;
                    out.all_outputs(nid)
                }
            };
            env[id.0] = Some(outs);
            mirror_ctrl(&mut out, first, node, &mut anchors)?;
        }
        let outs = g.outputs().iter().map(|r| env[r.node.0].as_ref().expect("outputs lowered")[r.port]).collect();
        out.set_outputs(outs)?;
        Ok(out)
    }

    fn inline_parfor(&mut self, out: &mut Graph, p: &ParforBlock, ins: &[ValueRef]) -> Result<Vec<ValueRef>> {
        let n = ins[0];
        let static_n = out.const_i64(n).map(|v| v.max(0) as usize);
        let cx = Cx::new(n, static_n, Repr::Iota);
        let caps: Vec<Wrapped> = ins[1..].iter().map(|&c| Wrapped::unstacked(c, out.value_type(c).clone())).collect();
        let ws = self.convert_body(out, &cx, &p.body, &caps)?;
        ws.iter().map(|w| self.materialize(out, &cx, w)).collect()
    }
}

/// `0 < x` for an I64 scalar `x`.
pub(crate) fn positive(out: &mut Graph, x: ValueRef) -> Result<ValueRef> {
    let zero = out.scalar_i64(0)?;
    Ok(out.binary(BinaryOp::Less, zero, x)?)
}
