//! Converters for ops touching variables or the RNG.

use super::{fragment, positive, Conv, Cx, Result, StatefulPolicy, VectorizeError, Vectorizer, Wrapped};
use crate::graph::{CondBlock, Graph, Node, Op, ValueRef};

pub(super) fn read_variable(vz: &mut Vectorizer, out: &mut Graph, _cx: &Cx, node: &Node, _ins: &[Wrapped]) -> Result<Conv> {
    let v = vz.emit(out, node.op.clone(), vec![])?;
    Ok(Conv::Done(vec![Wrapped::unstacked(v, node.outputs[0].clone())]))
}

/// Updates commute, so their sum is applied once.
pub(super) fn assign_add(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let v = vz.materialize(out, cx, &ins[0])?;
    let total = out.reduce_sum(v, &[0])?;
    out.add_node(node.op.clone(), vec![total], [])?;
    Ok(Conv::Done(vec![]))
}

pub(super) fn assign(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Op::Assign { name } = &node.op else { unreachable!() };
    if ins[0].stacked {
        return match vz.policy.stateful {
            StatefulPolicy::Error => Err(VectorizeError::StatefulNotSupported { node: vz.here(), name: name.clone() }),
            StatefulPolicy::Fallback => Ok(Conv::Unsupported("assign of an iteration-dependent value".into())),
        };
    }
    // one write, and none at all when there are no iterations
    let v = vz.value(out, cx, &ins[0])?;
    let ty = out.value_type(v).clone();
    let (mut then_branch, p) = fragment(out, &[ty.clone()])?;
    then_branch.add_node(node.op.clone(), vec![p[0]], [])?;
    then_branch.set_outputs(vec![])?;
    let (mut else_branch, _) = fragment(out, &[ty])?;
    else_branch.set_outputs(vec![])?;
    let pred = positive(out, cx.iters)?;
    out.add_node(Op::Cond(Box::new(CondBlock { then_branch, else_branch })), vec![pred, v], [])?;
    Ok(Conv::Done(vec![]))
}

/// One draw with the iteration axis in front. Values differ from a
/// per-iteration draw; only the distribution matches.
pub(super) fn random_uniform(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Op::RandomUniform { shape } = &node.op else { unreachable!() };
    let shape = match ins.first() {
        None => shape.clone(),
        Some(m) => match vz.static_i64(out, m) {
            Some(m) if m >= 0 => shape.prepend(m as usize),
            _ => return Ok(Conv::Unsupported("draw size is not a constant".into())),
        },
    };
    let v: ValueRef = vz.emit(out, Op::RandomUniform { shape }, vec![cx.iters])?;
    Ok(Conv::Done(vec![Wrapped::stacked(v, node.outputs[0].clone())]))
}
