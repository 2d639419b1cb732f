//! pfor and the constructs built on it: jacobians, per-example gradients,
//! map_fn, hessians.

pub mod numeric;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::autodiff::{gradient, GradError, GradTape};
use crate::graph::{Graph, GraphError, Node, NodeId, Op, ParforBlock, ValueRef};
use crate::tensor::{Shape, TensorValue};
use crate::vectorize::{vectorize, Diagnostics, IterCount, Policy, VectorizeError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Vectorize(#[from] VectorizeError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{0}")]
    Shape(String),
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;

/// How a pfor is turned into graph nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PforMode {
    /// Vectorize the body and inline the result.
    Vectorize(Policy),
    /// Leave a PARFOR node for the interpreter.
    Keep,
}

impl Default for PforMode {
    fn default() -> Self {
        PforMode::Vectorize(Policy::default())
    }
}

#[derive(Debug, Clone)]
pub struct Pfor {
    pub outputs: Vec<ValueRef>,
    pub diagnostics: Diagnostics,
}

/// Build the body once with the loop variable and the captures as params,
/// then vectorize it. Outputs have a leading axis of size `iters`.
pub fn pfor<F>(g: &mut Graph, iters: ValueRef, captures: &[ValueRef], body: F) -> Result<Vec<ValueRef>>
where
    F: FnOnce(&mut Graph, ValueRef, &[ValueRef]) -> Result<Vec<ValueRef>>,
{
    Ok(pfor_with(g, iters, captures, PforMode::default(), body)?.outputs)
}

pub fn pfor_with<F>(g: &mut Graph, iters: ValueRef, captures: &[ValueRef], mode: PforMode, body: F) -> Result<Pfor>
where
    F: FnOnce(&mut Graph, ValueRef, &[ValueRef]) -> Result<Vec<ValueRef>>,
{
    let mut err = None;
    let frag = g.build_fragment(captures, |b, params| {
        let i = b.loop_var()?;
        match body(b, i, params) {
            Ok(outs) => Ok(outs),
            Err(e) => {
                err = Some(e);
                Ok(vec![])
            }
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let block = ParforBlock { body: frag };
    let mut args = vec![iters];
    args.extend_from_slice(captures);
    match mode {
        PforMode::Keep => {
            let id = g.add_node(Op::Parfor(Box::new(block)), args, [])?;
            Ok(Pfor { outputs: g.all_outputs(id), diagnostics: Diagnostics::default() })
        }
        PforMode::Vectorize(policy) => {
            let count = match g.const_i64(iters) {
                Some(n) if n >= 0 => IterCount::Static(n as usize),
                _ => IterCount::Dynamic,
            };
            let v = vectorize(&block, count, policy)?;
            let outputs = g.inline(&v.graph, &args)?;
            Ok(Pfor { outputs, diagnostics: v.diagnostics })
        }
    }
}

fn static_shape(g: &Graph, v: ValueRef, what: &str) -> Result<Shape> {
    g.shape_of(v).cloned().ok_or_else(|| AppError::Shape(format!("{what} {v} needs a static shape")))
}

/// Copy the nodes between `input` and `output` into `body`; everything
/// else they read comes in through `outside` (a capture list being built).
struct Cloner {
    region: Vec<Node>,
    outside: Vec<ValueRef>,
    copied: BTreeMap<ValueRef, TensorValue>,
}

impl Cloner {
    fn new(src: &Graph, output: ValueRef, input: ValueRef) -> Self {
        let region = GradTape::record(src, output, &[input])
            .region
            .into_iter()
            .filter(|&n| n != input.node)
            .map(|n| src.node(n).clone())
            .collect();
        Cloner { region, outside: vec![input], copied: BTreeMap::new() }
    }

    /// Values read by the region from outside it, `input` first.
    /// Scalar constants are copied instead so that shapes depending on them
    /// stay static inside the body.
    fn captures(&mut self, src: &Graph) -> Vec<ValueRef> {
        let inside: BTreeSet<NodeId> = self.region.iter().map(|n| n.id).collect();
        for node in &self.region {
            for r in &node.inputs {
                if inside.contains(&r.node) || self.outside.contains(r) || self.copied.contains_key(r) {
                    continue;
                }
                match &src.node(r.node).op {
                    Op::Constant(t) if t.rank() == 0 => {
                        self.copied.insert(*r, t.clone());
                    }
                    _ => self.outside.push(*r),
                }
            }
        }
        self.outside.clone()
    }

    /// Replay the region inside `body` whose params mirror `captures()`.
    fn replay(&self, body: &mut Graph, params: &[ValueRef], output: ValueRef) -> Result<ValueRef> {
        let mut map: HashMap<ValueRef, ValueRef> = self.outside.iter().copied().zip(params.iter().copied()).collect();
        for (r, t) in &self.copied {
            map.insert(*r, body.constant(t.clone())?);
        }
        for node in &self.region {
            let id = node.id;
            let inputs = node.inputs.iter().map(|r| map[r]).collect();
            let nid = body.add_node(node.op.clone(), inputs, [])?;
            for p in 0..node.outputs.len() {
                map.insert(ValueRef::new(id, p), ValueRef::new(nid, p));
            }
        }
        Ok(map[&output])
    }
}

/// `d output / d input` with shape `output.shape + input.shape`, one
/// pfor iteration per output element.
pub fn jacobian(g: &mut Graph, output: ValueRef, input: ValueRef) -> Result<ValueRef> {
    Ok(jacobian_with(g, output, input, PforMode::default())?.outputs[0])
}

pub fn jacobian_with(g: &mut Graph, output: ValueRef, input: ValueRef, mode: PforMode) -> Result<Pfor> {
    let out_shape = static_shape(g, output, "jacobian output")?;
    let in_shape = static_shape(g, input, "jacobian input")?;
    let m = out_shape.numel();
    let mut cl = Cloner::new(g, output, input);
    let caps = cl.captures(g);
    let iters = g.scalar_i64(m as i64)?;
    let mut p = pfor_with(g, iters, &caps, mode, |b, i, params| {
        let y = cl.replay(b, params, output)?;
        let flat = b.reshape(y, [m])?;
        let yi = b.gather_rows(flat, i)?;
        Ok(gradient(b, yi, &[params[0]])?)
    })?;
    let full = out_shape.concat(&in_shape);
    p.outputs[0] = g.reshape(p.outputs[0], full)?;
    Ok(p)
}

/// Second derivatives of a scalar `f`, as the jacobian of its jacobian.
pub fn hessian(g: &mut Graph, f: ValueRef, input: ValueRef) -> Result<ValueRef> {
    let j = jacobian(g, f, input)?;
    jacobian(g, j, input)
}

/// One gradient per example: `loss_body` builds a scalar loss for example
/// `i`; gradients are taken with respect to `captures[k]` for `k` in `wrt`.
pub fn per_example_gradients<F>(
    g: &mut Graph,
    batch: ValueRef,
    captures: &[ValueRef],
    wrt: &[usize],
    loss_body: F,
) -> Result<Vec<ValueRef>>
where
    F: FnOnce(&mut Graph, ValueRef, &[ValueRef]) -> Result<ValueRef>,
{
    Ok(per_example_gradients_with(g, batch, captures, wrt, PforMode::default(), loss_body)?.outputs)
}

pub fn per_example_gradients_with<F>(
    g: &mut Graph,
    batch: ValueRef,
    captures: &[ValueRef],
    wrt: &[usize],
    mode: PforMode,
    loss_body: F,
) -> Result<Pfor>
where
    F: FnOnce(&mut Graph, ValueRef, &[ValueRef]) -> Result<ValueRef>,
{
    pfor_with(g, batch, captures, mode, |b, i, params| {
        let loss = loss_body(b, i, params)?;
        let targets: Vec<ValueRef> = wrt.iter().map(|&k| params[k]).collect();
        Ok(gradient(b, loss, &targets)?)
    })
}

/// Apply `f` to every row of `x`. `f` sees the row and the params for
/// `captures`.
pub fn map_fn<F>(g: &mut Graph, x: ValueRef, captures: &[ValueRef], f: F) -> Result<Vec<ValueRef>>
where
    F: FnOnce(&mut Graph, ValueRef, &[ValueRef]) -> Result<Vec<ValueRef>>,
{
    Ok(map_fn_with(g, x, captures, PforMode::default(), f)?.outputs)
}

pub fn map_fn_with<F>(g: &mut Graph, x: ValueRef, captures: &[ValueRef], mode: PforMode, f: F) -> Result<Pfor>
where
    F: FnOnce(&mut Graph, ValueRef, &[ValueRef]) -> Result<Vec<ValueRef>>,
{
    let iters = match g.shape_of(x) {
        Some(s) if s.rank() > 0 => g.scalar_i64(s.dims()[0] as i64)?,
        _ => g.length(x)?,
    };
    let mut caps = vec![x];
    caps.extend_from_slice(captures);
    pfor_with(g, iters, &caps, mode, |b, i, params| {
        let row = b.gather_rows(params[0], i)?;
        f(b, row, &params[1..])
    })
}
