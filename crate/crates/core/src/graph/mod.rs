//! Dataflow IR.
//!
//! A [`Graph`] is an id-ordered list of [`Node`]s. Structured control flow
//! (conditionals, while loops, parallel-for loops) is stored as a single
//! block node owning its subgraphs; each subgraph is itself a `Graph`
//! whose `param` nodes bind the block's captured inputs and whose
//! `outputs` list is what the block exports.

mod infer;
mod text;
mod topo;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::tensor::{BinaryOp, DType, Shape, TensorError, TensorValue, UnaryOp};

pub use text::{deserialize, serialize};
pub use topo::{topo_order, validate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One output port of one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueRef {
    pub node: NodeId,
    pub port: usize,
}

impl ValueRef {
    pub fn new(node: NodeId, port: usize) -> Self {
        ValueRef { node, port }
    }
}

impl fmt::Display for ValueRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node.0, self.port)
    }
}

/// Static type of a value: dtype is always known, shape may not be.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ValueType {
    pub dtype: DType,
    pub shape: Option<Shape>,
}

impl ValueType {
    pub fn new(dtype: DType, shape: impl Into<Shape>) -> Self {
        ValueType { dtype, shape: Some(shape.into()) }
    }

    pub fn unknown(dtype: DType) -> Self {
        ValueType { dtype, shape: None }
    }

    pub fn scalar(dtype: DType) -> Self {
        ValueType { dtype, shape: Some(Shape::scalar()) }
    }

    pub fn of(t: &TensorValue) -> Self {
        ValueType { dtype: t.dtype(), shape: Some(t.shape().clone()) }
    }

    /// Two types agree if dtypes match and known shapes are equal.
    pub fn compatible(&self, other: &ValueType) -> bool {
        self.dtype == other.dtype
            && match (&self.shape, &other.shape) {
                (Some(a), Some(b)) => a == b,
                _ => true,
            }
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.shape {
            Some(s) => write!(f, "{}{}", self.dtype, s),
            None => write!(f, "{}[?]", self.dtype),
        }
    }
}

// ── Blocks ─────────────────────────────────────────────────────────

/// Conditional. Node inputs: `[pred, captures...]`; both branches take the
/// captures as params and export the same number of values.
#[derive(Debug, Clone, PartialEq)]
pub struct CondBlock {
    pub then_branch: Graph,
    pub else_branch: Graph,
}

/// While loop. Node inputs: `[carried..., captures...]`. Both subgraphs
/// take all inputs as params; `cond` exports one bool scalar, `body`
/// exports the next carried values.
#[derive(Debug, Clone, PartialEq)]
pub struct WhileBlock {
    pub carried: usize,
    pub cond: Graph,
    pub body: Graph,
}

/// Parallel-for. Node inputs: `[iters, captures...]`; the body takes the
/// captures as params and reads the iteration index through `loop_var`.
/// Each body output is stacked along a new leading axis of size `iters`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParforBlock {
    pub body: Graph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Cond,
    While,
    Parfor,
}

// ── Ops ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Constant(TensorValue),
    Placeholder { name: String, ty: ValueType },
    Param { index: usize, ty: ValueType },
    LoopVar,
    Unary(UnaryOp),
    Binary(BinaryOp),
    Select,
    MatMul,
    Conv2d,
    Conv2dBackpropInput,
    Conv2dBackpropFilter { kernel: [usize; 2] },
    ReduceSum { axes: Vec<i64> },
    SumToShape { shape: Shape },
    BroadcastTo { shape: Shape },
    Concat { axis: i64 },
    Stack { axis: usize },
    Reshape { shape: Shape },
    Transpose { perm: Vec<usize> },
    Slice { axis: usize, start: usize, len: usize },
    GatherRows,
    /// Inputs: `parts` index sets followed by `parts` row blocks.
    ScatterRows { parts: usize },
    /// Inputs: `(updates, idx, total)`.
    ScatterAddRows,
    /// Inputs: `(acc, idx, rows)`.
    ScatterUpdate,
    /// Inputs: `(x, n)`; broadcasts `x` to `[n, tail...]`.
    TileLeading { tail: Shape },
    MergeLeading,
    /// Inputs: `(x, n)`; reshapes `x` to `[n, tail...]`.
    ReshapeLeading { tail: Shape },
    Range,
    WhereTrue,
    Length,
    /// Input: `n`; zeros of shape `[n, tail...]`.
    Zeros { dtype: DType, tail: Shape },
    ReadVariable { name: String },
    Assign { name: String },
    AssignAdd { name: String },
    /// No inputs: uniform `[0,1)` of `shape`. One input `n`: shape `[n, shape...]`.
    RandomUniform { shape: Shape },
    Cond(Box<CondBlock>),
    While(Box<WhileBlock>),
    Parfor(Box<ParforBlock>),
}

macro_rules! op_kinds {
    ($($variant:ident => $name:literal),* $(,)?) => {
        /// Fieldless tag for every op signature; the converter registry key.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum OpKind { $($variant),* }

        impl OpKind {
            pub const ALL: &'static [OpKind] = &[$(OpKind::$variant),*];

            pub fn name(self) -> &'static str {
                match self { $(OpKind::$variant => $name),* }
            }

            pub fn from_name(s: &str) -> Option<OpKind> {
                match s { $($name => Some(OpKind::$variant),)* _ => None }
            }
        }
    };
}

op_kinds! {
    Constant => "constant",
    Placeholder => "placeholder",
    Param => "param",
    LoopVar => "loop_var",
    Neg => "neg",
    Exp => "exp",
    Log => "log",
    Relu => "relu",
    Tanh => "tanh",
    Sigmoid => "sigmoid",
    Square => "square",
    Not => "not",
    Add => "add",
    Sub => "sub",
    Mul => "mul",
    Div => "div",
    Max => "max",
    Min => "min",
    Less => "less",
    Equal => "equal",
    Select => "select",
    MatMul => "matmul",
    Conv2d => "conv2d",
    Conv2dBackpropInput => "conv2d_backprop_input",
    Conv2dBackpropFilter => "conv2d_backprop_filter",
    ReduceSum => "reduce_sum",
    SumToShape => "sum_to_shape",
    BroadcastTo => "broadcast_to",
    Concat => "concat",
    Stack => "stack",
    Reshape => "reshape",
    Transpose => "transpose",
    Slice => "slice",
    GatherRows => "gather_rows",
    ScatterRows => "scatter_rows",
    ScatterAddRows => "scatter_add_rows",
    ScatterUpdate => "scatter_update",
    TileLeading => "tile_leading",
    MergeLeading => "merge_leading",
    ReshapeLeading => "reshape_leading",
    Range => "range",
    WhereTrue => "where_true",
    Length => "length",
    Zeros => "zeros",
    ReadVariable => "read_variable",
    Assign => "assign",
    AssignAdd => "assign_add",
    RandomUniform => "random_uniform",
    Cond => "cond",
    While => "while",
    Parfor => "parfor",
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) fn unary_kind(op: UnaryOp) -> OpKind {
    match op {
        UnaryOp::Neg => OpKind::Neg,
        UnaryOp::Exp => OpKind::Exp,
        UnaryOp::Log => OpKind::Log,
        UnaryOp::Relu => OpKind::Relu,
        UnaryOp::Tanh => OpKind::Tanh,
        UnaryOp::Sigmoid => OpKind::Sigmoid,
        UnaryOp::Square => OpKind::Square,
        UnaryOp::Not => OpKind::Not,
    }
}

pub(crate) fn binary_kind(op: BinaryOp) -> OpKind {
    match op {
        BinaryOp::Add => OpKind::Add,
        BinaryOp::Sub => OpKind::Sub,
        BinaryOp::Mul => OpKind::Mul,
        BinaryOp::Div => OpKind::Div,
        BinaryOp::Max => OpKind::Max,
        BinaryOp::Min => OpKind::Min,
        BinaryOp::Less => OpKind::Less,
        BinaryOp::Equal => OpKind::Equal,
    }
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Constant(_) => OpKind::Constant,
            Op::Placeholder { .. } => OpKind::Placeholder,
            Op::Param { .. } => OpKind::Param,
            Op::LoopVar => OpKind::LoopVar,
            Op::Unary(u) => unary_kind(*u),
            Op::Binary(b) => binary_kind(*b),
            Op::Select => OpKind::Select,
            Op::MatMul => OpKind::MatMul,
            Op::Conv2d => OpKind::Conv2d,
            Op::Conv2dBackpropInput => OpKind::Conv2dBackpropInput,
            Op::Conv2dBackpropFilter { .. } => OpKind::Conv2dBackpropFilter,
            Op::ReduceSum { .. } => OpKind::ReduceSum,
            Op::SumToShape { .. } => OpKind::SumToShape,
            Op::BroadcastTo { .. } => OpKind::BroadcastTo,
            Op::Concat { .. } => OpKind::Concat,
            Op::Stack { .. } => OpKind::Stack,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Transpose { .. } => OpKind::Transpose,
            Op::Slice { .. } => OpKind::Slice,
            Op::GatherRows => OpKind::GatherRows,
            Op::ScatterRows { .. } => OpKind::ScatterRows,
            Op::ScatterAddRows => OpKind::ScatterAddRows,
            Op::ScatterUpdate => OpKind::ScatterUpdate,
            Op::TileLeading { .. } => OpKind::TileLeading,
            Op::MergeLeading => OpKind::MergeLeading,
            Op::ReshapeLeading { .. } => OpKind::ReshapeLeading,
            Op::Range => OpKind::Range,
            Op::WhereTrue => OpKind::WhereTrue,
            Op::Length => OpKind::Length,
            Op::Zeros { .. } => OpKind::Zeros,
            Op::ReadVariable { .. } => OpKind::ReadVariable,
            Op::Assign { .. } => OpKind::Assign,
            Op::AssignAdd { .. } => OpKind::AssignAdd,
            Op::RandomUniform { .. } => OpKind::RandomUniform,
            Op::Cond(_) => OpKind::Cond,
            Op::While(_) => OpKind::While,
            Op::Parfor(_) => OpKind::Parfor,
        }
    }

    /// Reads or writes a variable or the RNG.
    pub fn is_stateful(&self) -> bool {
        matches!(
            self,
            Op::ReadVariable { .. } | Op::Assign { .. } | Op::AssignAdd { .. } | Op::RandomUniform { .. }
        )
    }

    pub fn block_kind(&self) -> Option<BlockKind> {
        match self {
            Op::Cond(_) => Some(BlockKind::Cond),
            Op::While(_) => Some(BlockKind::While),
            Op::Parfor(_) => Some(BlockKind::Parfor),
            _ => None,
        }
    }

    pub fn is_block(&self) -> bool {
        matches!(self, Op::Cond(_) | Op::While(_) | Op::Parfor(_))
    }

    /// Subgraphs owned by a block op, with their role names.
    pub fn subgraphs(&self) -> Vec<(&'static str, &Graph)> {
        match self {
            Op::Cond(c) => vec![("then", &c.then_branch), ("else", &c.else_branch)],
            Op::While(w) => vec![("cond", &w.cond), ("body", &w.body)],
            Op::Parfor(p) => vec![("body", &p.body)],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub op: Op,
    pub inputs: Vec<ValueRef>,
    pub control_deps: BTreeSet<NodeId>,
    /// Inferred output types; the length is the output arity.
    pub outputs: Vec<ValueType>,
}

impl Node {
    pub fn output(&self, port: usize) -> ValueRef {
        ValueRef::new(self.id, port)
    }
}

// ── Errors ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("node {node}: input {input} does not resolve")]
    UnknownInput { node: NodeId, input: ValueRef },
    #[error("node {node}: control dependency on unknown node {dep}")]
    UnknownControlDep { node: NodeId, dep: NodeId },
    #[error("node {0} references itself")]
    SelfEdge(NodeId),
    #[error("node {node} ({kind}): bad attribute: {msg}")]
    BadAttr { node: NodeId, kind: OpKind, msg: String },
    #[error("node {node} ({kind}): {source}")]
    Tensor { node: NodeId, kind: OpKind, source: TensorError },
    #[error("node {node} ({kind}): {what}: expected {expected}, found {found}")]
    ArityMismatch { node: NodeId, kind: OpKind, what: String, expected: usize, found: usize },
    #[error("node {node} ({kind}): {msg}")]
    TypeMismatch { node: NodeId, kind: OpKind, msg: String },
    #[error("node {0}: condition must be a bool scalar")]
    NonScalarCondition(NodeId),
    #[error("node {node}: unknown variable {name:?}")]
    UnknownVariable { node: NodeId, name: String },
    #[error("node {0}: loop_var outside a parfor body")]
    LoopVarOutsideParfor(NodeId),
    #[error("node {node}: param index {index} but the subgraph has {count} params")]
    BadParam { node: NodeId, index: usize, count: usize },
    #[error("cycle among nodes {0:?}")]
    CycleDetected(BTreeSet<NodeId>),
    #[error("graph output {0} does not resolve")]
    UnknownOutput(ValueRef),
    #[error("{context}: {source}")]
    InSubgraph { context: String, source: Box<GraphError> },
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

// ── Graph ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    variables: BTreeMap<String, TensorValue>,
    outputs: Vec<ValueRef>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Empty subgraph that sees the same variable declarations as `parent`.
    pub fn fragment_of(parent: &Graph) -> Self {
        Graph { nodes: Vec::new(), variables: parent.variables.clone(), outputs: Vec::new() }
    }

    /// Build a graph from raw nodes without checking anything. Use
    /// [`validate`] before executing it.
    pub fn from_nodes_unchecked(
        nodes: Vec<Node>,
        variables: BTreeMap<String, TensorValue>,
        outputs: Vec<ValueRef>,
    ) -> Self {
        Graph { nodes, variables, outputs }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn get(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.0)
    }

    pub fn variables(&self) -> &BTreeMap<String, TensorValue> {
        &self.variables
    }

    pub fn outputs(&self) -> &[ValueRef] {
        &self.outputs
    }

    pub fn set_outputs(&mut self, outputs: Vec<ValueRef>) -> Result<()> {
        for &o in &outputs {
            if self.try_value_type(o).is_none() {
                return Err(GraphError::UnknownOutput(o));
            }
        }
        self.outputs = outputs;
        Ok(())
    }

    /// Number of `param` nodes, i.e. the arity this subgraph expects.
    pub fn param_count(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Param { index, .. } => Some(index + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Param node refs ordered by index.
    pub fn params(&self) -> Vec<ValueRef> {
        let mut ps: Vec<(usize, ValueRef)> = self
            .nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Param { index, .. } => Some((index, n.output(0))),
                _ => None,
            })
            .collect();
        ps.sort();
        ps.into_iter().map(|(_, r)| r).collect()
    }

    pub fn declare_variable(&mut self, name: impl Into<String>, init: TensorValue) {
        self.variables.insert(name.into(), init);
    }

    pub fn value_type(&self, r: ValueRef) -> &ValueType {
        &self.nodes[r.node.0].outputs[r.port]
    }

    pub fn try_value_type(&self, r: ValueRef) -> Option<&ValueType> {
        self.nodes.get(r.node.0).and_then(|n| n.outputs.get(r.port))
    }

    /// Static shape of `r`, if inferred.
    pub fn shape_of(&self, r: ValueRef) -> Option<&Shape> {
        self.value_type(r).shape.as_ref()
    }

    /// Scalar I64 value behind `r` when it is known at build time: a
    /// constant, the length of a value with a static leading axis, or
    /// scalar arithmetic over those.
    pub fn const_i64(&self, r: ValueRef) -> Option<i64> {
        let node = self.nodes.get(r.node.0)?;
        match &node.op {
            Op::Constant(t) if t.rank() == 0 => t.as_i64().map(|v| v[0]),
            Op::Length => self.shape_of(node.inputs[0]).and_then(|s| s.dims().first()).map(|&d| d as i64),
            Op::Binary(op) if node.outputs[0].shape.as_ref().is_some_and(Shape::is_scalar) => {
                let a = self.const_i64(node.inputs[0])?;
                let b = self.const_i64(node.inputs[1])?;
                match op {
                    BinaryOp::Add => a.checked_add(b),
                    BinaryOp::Sub => a.checked_sub(b),
                    BinaryOp::Mul => a.checked_mul(b),
                    BinaryOp::Div => a.checked_div(b),
                    BinaryOp::Max => Some(a.max(b)),
                    BinaryOp::Min => Some(a.min(b)),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    /// Append a node after checking its inputs and inferring output types.
    pub fn add_node(
        &mut self,
        op: Op,
        inputs: Vec<ValueRef>,
        control_deps: impl IntoIterator<Item = NodeId>,
    ) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        for &input in &inputs {
            if self.try_value_type(input).is_none() {
                return Err(GraphError::UnknownInput { node: id, input });
            }
        }
        let control_deps: BTreeSet<NodeId> = control_deps.into_iter().collect();
        if let Some(&dep) = control_deps.iter().find(|d| d.0 >= self.nodes.len()) {
            return Err(GraphError::UnknownControlDep { node: id, dep });
        }
        let outputs = self.infer(id, &op, &inputs)?;
        self.nodes.push(Node { id, op, inputs, control_deps, outputs });
        Ok(id)
    }

    /// Add a control edge `dep → node`.
    pub fn add_control_dep(&mut self, node: NodeId, dep: NodeId) -> Result<()> {
        if dep.0 >= self.nodes.len() || node.0 >= self.nodes.len() {
            return Err(GraphError::UnknownControlDep { node, dep });
        }
        if node == dep {
            return Err(GraphError::SelfEdge(node));
        }
        self.nodes[node.0].control_deps.insert(dep);
        Ok(())
    }

    fn add1(&mut self, op: Op, inputs: Vec<ValueRef>) -> Result<ValueRef> {
        Ok(ValueRef::new(self.add_node(op, inputs, [])?, 0))
    }

    // ── builder helpers ──

    pub fn constant(&mut self, t: TensorValue) -> Result<ValueRef> {
        self.add1(Op::Constant(t), vec![])
    }

    pub fn scalar_f64(&mut self, v: f64) -> Result<ValueRef> {
        self.constant(TensorValue::scalar_f64(v))
    }

    pub fn scalar_i64(&mut self, v: i64) -> Result<ValueRef> {
        self.constant(TensorValue::scalar_i64(v))
    }

    pub fn placeholder(&mut self, name: &str, dtype: DType, shape: impl Into<Shape>) -> Result<ValueRef> {
        self.add1(Op::Placeholder { name: name.into(), ty: ValueType::new(dtype, shape) }, vec![])
    }

    pub fn param(&mut self, index: usize, ty: ValueType) -> Result<ValueRef> {
        self.add1(Op::Param { index, ty }, vec![])
    }

    pub fn loop_var(&mut self) -> Result<ValueRef> {
        self.add1(Op::LoopVar, vec![])
    }

    pub fn unary(&mut self, op: UnaryOp, x: ValueRef) -> Result<ValueRef> {
        self.add1(Op::Unary(op), vec![x])
    }

    pub fn binary(&mut self, op: BinaryOp, a: ValueRef, b: ValueRef) -> Result<ValueRef> {
        self.add1(Op::Binary(op), vec![a, b])
    }

    pub fn add(&mut self, a: ValueRef, b: ValueRef) -> Result<ValueRef> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: ValueRef, b: ValueRef) -> Result<ValueRef> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: ValueRef, b: ValueRef) -> Result<ValueRef> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: ValueRef, b: ValueRef) -> Result<ValueRef> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn less(&mut self, a: ValueRef, b: ValueRef) -> Result<ValueRef> {
        self.binary(BinaryOp::Less, a, b)
    }

    pub fn neg(&mut self, x: ValueRef) -> Result<ValueRef> {
        self.unary(UnaryOp::Neg, x)
    }

    pub fn select(&mut self, c: ValueRef, a: ValueRef, b: ValueRef) -> Result<ValueRef> {
        self.add1(Op::Select, vec![c, a, b])
    }

    pub fn matmul(&mut self, a: ValueRef, b: ValueRef) -> Result<ValueRef> {
        self.add1(Op::MatMul, vec![a, b])
    }

    pub fn conv2d(&mut self, x: ValueRef, f: ValueRef) -> Result<ValueRef> {
        self.add1(Op::Conv2d, vec![x, f])
    }

    pub fn reduce_sum(&mut self, x: ValueRef, axes: &[i64]) -> Result<ValueRef> {
        self.add1(Op::ReduceSum { axes: axes.to_vec() }, vec![x])
    }

    pub fn concat(&mut self, xs: &[ValueRef], axis: i64) -> Result<ValueRef> {
        self.add1(Op::Concat { axis }, xs.to_vec())
    }

    pub fn stack(&mut self, xs: &[ValueRef], axis: usize) -> Result<ValueRef> {
        self.add1(Op::Stack { axis }, xs.to_vec())
    }

    pub fn reshape(&mut self, x: ValueRef, shape: impl Into<Shape>) -> Result<ValueRef> {
        self.add1(Op::Reshape { shape: shape.into() }, vec![x])
    }

    pub fn transpose(&mut self, x: ValueRef, perm: &[usize]) -> Result<ValueRef> {
        self.add1(Op::Transpose { perm: perm.to_vec() }, vec![x])
    }

    pub fn slice(&mut self, x: ValueRef, axis: usize, start: usize, len: usize) -> Result<ValueRef> {
        self.add1(Op::Slice { axis, start, len }, vec![x])
    }

    /// First `len` rows of `x`.
    pub fn slice_leading(&mut self, x: ValueRef, len: usize) -> Result<ValueRef> {
        self.slice(x, 0, 0, len)
    }

    pub fn gather_rows(&mut self, x: ValueRef, idx: ValueRef) -> Result<ValueRef> {
        self.add1(Op::GatherRows, vec![x, idx])
    }

    pub fn scatter_rows(&mut self, index_sets: &[ValueRef], parts: &[ValueRef]) -> Result<ValueRef> {
        let mut inputs = index_sets.to_vec();
        inputs.extend_from_slice(parts);
        self.add1(Op::ScatterRows { parts: parts.len() }, inputs)
    }

    pub fn length(&mut self, x: ValueRef) -> Result<ValueRef> {
        self.add1(Op::Length, vec![x])
    }

    pub fn read_variable(&mut self, name: &str) -> Result<ValueRef> {
        self.add1(Op::ReadVariable { name: name.into() }, vec![])
    }

    pub fn assign(&mut self, name: &str, v: ValueRef) -> Result<NodeId> {
        self.add_node(Op::Assign { name: name.into() }, vec![v], [])
    }

    pub fn assign_add(&mut self, name: &str, v: ValueRef) -> Result<NodeId> {
        self.add_node(Op::AssignAdd { name: name.into() }, vec![v], [])
    }

    pub fn random_uniform(&mut self, shape: impl Into<Shape>) -> Result<ValueRef> {
        self.add1(Op::RandomUniform { shape: shape.into() }, vec![])
    }

    /// Build a subgraph whose params mirror the types of `captures`.
    pub fn build_fragment<F>(&self, captures: &[ValueRef], f: F) -> Result<Graph>
    where
        F: FnOnce(&mut Graph, &[ValueRef]) -> Result<Vec<ValueRef>>,
    {
        let types: Vec<ValueType> = captures.iter().map(|&c| self.value_type(c).clone()).collect();
        fragment_with_params(self, &types, f)
    }

    /// `if pred { then(captures) } else { else_(captures) }`.
    pub fn cond<T, E>(&mut self, pred: ValueRef, captures: &[ValueRef], then: T, else_: E) -> Result<Vec<ValueRef>>
    where
        T: FnOnce(&mut Graph, &[ValueRef]) -> Result<Vec<ValueRef>>,
        E: FnOnce(&mut Graph, &[ValueRef]) -> Result<Vec<ValueRef>>,
    {
        let then_branch = self.build_fragment(captures, then)?;
        let else_branch = self.build_fragment(captures, else_)?;
        let mut inputs = vec![pred];
        inputs.extend_from_slice(captures);
        let id = self.add_node(Op::Cond(Box::new(CondBlock { then_branch, else_branch })), inputs, [])?;
        Ok(self.all_outputs(id))
    }

    /// `while cond(carried, captures) { carried = body(carried, captures) }`.
    ///
    /// Both closures receive params laid out as `[carried..., captures...]`.
    pub fn while_loop<C, B>(
        &mut self,
        init: &[ValueRef],
        captures: &[ValueRef],
        cond: C,
        body: B,
    ) -> Result<Vec<ValueRef>>
    where
        C: FnOnce(&mut Graph, &[ValueRef]) -> Result<Vec<ValueRef>>,
        B: FnOnce(&mut Graph, &[ValueRef]) -> Result<Vec<ValueRef>>,
    {
        let mut inputs = init.to_vec();
        inputs.extend_from_slice(captures);
        let cond = self.build_fragment(&inputs, cond)?;
        let body = self.build_fragment(&inputs, body)?;
        let block = WhileBlock { carried: init.len(), cond, body };
        let id = self.add_node(Op::While(Box::new(block)), inputs, [])?;
        Ok(self.all_outputs(id))
    }

    /// Parallel-for over `iters` iterations. The body receives the loop
    /// variable and the capture params.
    pub fn parfor<B>(&mut self, iters: ValueRef, captures: &[ValueRef], body: B) -> Result<Vec<ValueRef>>
    where
        B: FnOnce(&mut Graph, ValueRef, &[ValueRef]) -> Result<Vec<ValueRef>>,
    {
        let body = self.build_fragment(captures, |g, params| {
            let i = g.loop_var()?;
            body(g, i, params)
        })?;
        let mut inputs = vec![iters];
        inputs.extend_from_slice(captures);
        let id = self.add_node(Op::Parfor(Box::new(ParforBlock { body })), inputs, [])?;
        Ok(self.all_outputs(id))
    }

    pub fn all_outputs(&self, id: NodeId) -> Vec<ValueRef> {
        (0..self.node(id).outputs.len()).map(|p| ValueRef::new(id, p)).collect()
    }

    /// Copy the nodes of subgraph `frag` into `self`, binding its params
    /// to `args`. Returns the copies of `frag`'s outputs.
    pub fn inline(&mut self, frag: &Graph, args: &[ValueRef]) -> Result<Vec<ValueRef>> {
        let mut map: Vec<Option<NodeId>> = vec![None; frag.len()];
        let mut bound: Vec<Option<ValueRef>> = vec![None; frag.len()];
        for id in topo_order(frag)? {
            let node = frag.node(id);
            if let Op::Param { index, .. } = node.op {
                let a = *args.get(index).ok_or(GraphError::BadParam { node: id, index, count: args.len() })?;
                bound[id.0] = Some(a);
                continue;
            }
            let resolve = |r: &ValueRef| match bound[r.node.0] {
                Some(a) => a,
                None => ValueRef::new(map[r.node.0].expect("topological order"), r.port),
            };
            let inputs = node.inputs.iter().map(resolve).collect();
            let ctrl: Vec<NodeId> = node.control_deps.iter().filter_map(|d| map[d.0]).collect();
            map[id.0] = Some(self.add_node(node.op.clone(), inputs, ctrl)?);
        }
        Ok(frag
            .outputs()
            .iter()
            .map(|r| bound[r.node.0].unwrap_or_else(|| ValueRef::new(map[r.node.0].expect("copied"), r.port)))
            .collect())
    }
}

/// New subgraph of `parent` with one param per entry of `types`.
pub fn fragment_with_params<F>(parent: &Graph, types: &[ValueType], f: F) -> Result<Graph>
where
    F: FnOnce(&mut Graph, &[ValueRef]) -> Result<Vec<ValueRef>>,
{
    let mut g = Graph::fragment_of(parent);
    let params = types
        .iter()
        .enumerate()
        .map(|(index, ty)| g.param(index, ty.clone()))
        .collect::<Result<Vec<_>>>()?;
    let outs = f(&mut g, &params)?;
    g.set_outputs(outs)?;
    Ok(g)
}
