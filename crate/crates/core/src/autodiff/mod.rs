//! Reverse-mode gradients over straight-line graph regions.

mod rules;

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{Graph, GraphError, NodeId, OpKind, ValueRef, ValueType};
use crate::tensor::{DType, Shape, TensorValue};

pub use rules::{VjpRule, VjpRules};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GradError {
    #[error("gradient target must be an f64 scalar, got {0}")]
    NonScalarOutput(ValueType),
    #[error("node {node} ({kind}) has no gradient rule")]
    NonDifferentiableOp { node: NodeId, kind: OpKind },
    #[error("node {node}: cotangent {found} does not match output {expected}")]
    ShapeMismatch { node: NodeId, expected: ValueType, found: ValueType },
    #[error("node {node} ({kind}): gradient needs a static shape")]
    UnknownShape { node: NodeId, kind: OpKind },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T, E = GradError> = std::result::Result<T, E>;

/// Forward nodes on some path from `wrt` to `output`, in id order, plus
/// the cotangent accumulated so far for each value.
#[derive(Debug, Default)]
pub struct GradTape {
    pub region: Vec<NodeId>,
    cotangents: BTreeMap<ValueRef, ValueRef>,
}

impl GradTape {
    pub fn record(g: &Graph, output: ValueRef, wrt: &[ValueRef]) -> Self {
        let mut up = BTreeSet::new();
        let mut stack = vec![output.node];
        while let Some(id) = stack.pop() {
            if up.insert(id) {
                stack.extend(g.node(id).inputs.iter().map(|r| r.node));
            }
        }
        // descendants of wrt, walked in id order (inputs always precede users)
        let mut down: BTreeSet<NodeId> = wrt.iter().map(|r| r.node).collect();
        for n in g.nodes() {
            if n.inputs.iter().any(|r| down.contains(&r.node)) {
                down.insert(n.id);
            }
        }
        GradTape { region: up.intersection(&down).copied().collect(), cotangents: BTreeMap::new() }
    }

    pub fn cotangent(&self, v: ValueRef) -> Option<ValueRef> {
        self.cotangents.get(&v).copied()
    }

    fn accumulate(&mut self, g: &mut Graph, v: ValueRef, c: ValueRef) -> Result<()> {
        let c = match self.cotangents.get(&v) {
            Some(&prev) => g.add(prev, c)?,
            None => c,
        };
        self.cotangents.insert(v, c);
        Ok(())
    }
}

/// Append nodes computing d`output`/d`wrt[k]` for each k.
pub fn gradient(g: &mut Graph, output: ValueRef, wrt: &[ValueRef]) -> Result<Vec<ValueRef>> {
    gradient_with(&VjpRules::standard(), g, output, wrt)
}

pub fn gradient_with(rules: &VjpRules, g: &mut Graph, output: ValueRef, wrt: &[ValueRef]) -> Result<Vec<ValueRef>> {
    let ty = g.value_type(output).clone();
    if ty.dtype != DType::F64 || ty.shape.as_ref().map_or(true, |s| !s.is_scalar()) {
        return Err(GradError::NonScalarOutput(ty));
    }
    let mut tape = GradTape::record(g, output, wrt);
    let region: BTreeSet<NodeId> = tape.region.iter().copied().collect();
    let seed = g.scalar_f64(1.0)?;
    tape.cotangents.insert(output, seed);
    for &id in tape.region.clone().iter().rev() {
        let node = g.node(id).clone();
        let cots: Vec<Option<ValueRef>> = (0..node.outputs.len()).map(|p| tape.cotangent(ValueRef::new(id, p))).collect();
        if cots.iter().all(Option::is_none) {
            continue;
        }
        // nodes fed only from outside the region pass their cotangent to the caller
        if !node.inputs.iter().any(|r| region.contains(&r.node)) {
            continue;
        }
        let kind = node.op.kind();
        let rule = rules.get(kind).ok_or(GradError::NonDifferentiableOp { node: id, kind })?;
        for (p, c) in cots.iter().enumerate() {
            if let Some(c) = c {
                let found = g.value_type(*c).clone();
                if !found.compatible(&node.outputs[p]) {
                    return Err(GradError::ShapeMismatch { node: id, expected: node.outputs[p].clone(), found });
                }
            }
        }
        let ins = rule(g, &node, &cots)?;
        for (k, c) in ins.into_iter().enumerate() {
            if let Some(c) = c {
                if g.value_type(node.inputs[k]).dtype == DType::F64 {
                    tape.accumulate(g, node.inputs[k], c)?;
                }
            }
        }
    }
    wrt.iter()
        .map(|&w| match tape.cotangent(w) {
            Some(c) => Ok(c),
            None => zeros_like(g, w),
        })
        .collect()
}

/// Zeros with the static shape and dtype of `v`.
pub fn zeros_like(g: &mut Graph, v: ValueRef) -> Result<ValueRef> {
    let ty = g.value_type(v).clone();
    let shape: Shape = ty.shape.ok_or(GradError::UnknownShape { node: v.node, kind: g.node(v.node).op.kind() })?;
    Ok(g.constant(TensorValue::zeros(ty.dtype, shape))?)
}

/// Input cotangents of one node for the given output cotangents.
pub fn vjp(g: &mut Graph, node: NodeId, cotangents: &[Option<ValueRef>]) -> Result<Vec<Option<ValueRef>>> {
    let n = g.node(node).clone();
    let kind = n.op.kind();
    let rules = VjpRules::standard();
    let rule = rules.get(kind).ok_or(GradError::NonDifferentiableOp { node, kind })?;
    rule(g, &n, cotangents)
}
