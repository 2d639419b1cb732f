use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use super::{Graph, GraphError, NodeId, Op};

/// Predecessor sets (data and control), ignoring references to missing nodes.
fn predecessors(g: &Graph) -> Vec<BTreeSet<usize>> {
    let n = g.len();
    g.nodes()
        .iter()
        .map(|node| {
            node.inputs
                .iter()
                .map(|r| r.node.0)
                .chain(node.control_deps.iter().map(|d| d.0))
                .filter(|&p| p < n)
                .collect()
        })
        .collect()
}

/// Kahn's algorithm; ties go to the smallest id.
pub fn topo_order(g: &Graph) -> Result<Vec<NodeId>, GraphError> {
    let n = g.len();
    let preds = predecessors(g);
    let mut succs = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for (i, ps) in preds.iter().enumerate() {
        indeg[i] = ps.len();
        for &p in ps {
            succs[p].push(i);
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(NodeId(i));
        for &s in &succs[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.push(Reverse(s));
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    // Of the unplaced nodes, drop those that merely sit downstream of a
    // cycle: peel off nodes with no unplaced successor until stable.
    let mut left: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] > 0).collect();
    loop {
        let sinks: Vec<usize> = left.iter().copied().filter(|&i| !succs[i].iter().any(|s| left.contains(s))).collect();
        if sinks.is_empty() {
            break;
        }
        for s in sinks {
            left.remove(&s);
        }
    }
    Err(GraphError::CycleDetected(left.into_iter().map(NodeId).collect()))
}

/// Check every structural rule and report all violations.
pub fn validate(g: &Graph) -> Result<(), Vec<GraphError>> {
    let mut errs = Vec::new();
    check(g, None, false, &mut errs);
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

fn check(g: &Graph, params: Option<usize>, in_parfor: bool, errs: &mut Vec<GraphError>) {
    let n = g.len();
    for (i, node) in g.nodes().iter().enumerate() {
        let id = node.id;
        let before = errs.len();
        if id.0 != i {
            errs.push(GraphError::BadAttr { node: id, kind: node.op.kind(), msg: format!("stored at position {i}") });
        }
        for &r in &node.inputs {
            if r.node == id {
                errs.push(GraphError::SelfEdge(id));
            } else if g.try_value_type(r).is_none() {
                errs.push(GraphError::UnknownInput { node: id, input: r });
            }
        }
        for &d in &node.control_deps {
            if d == id {
                errs.push(GraphError::SelfEdge(id));
            } else if d.0 >= n {
                errs.push(GraphError::UnknownControlDep { node: id, dep: d });
            }
        }
        match &node.op {
            Op::LoopVar if !in_parfor => errs.push(GraphError::LoopVarOutsideParfor(id)),
            Op::Param { index, .. } => {
                let count = params.unwrap_or(0);
                if *index >= count {
                    errs.push(GraphError::BadParam { node: id, index: *index, count });
                }
            }
            Op::Cond(_) | Op::While(_) | Op::Parfor(_) => {
                let count = match node.op {
                    Op::While(_) => node.inputs.len(),
                    _ => node.inputs.len().saturating_sub(1),
                };
                let inner_parfor = in_parfor || matches!(node.op, Op::Parfor(_));
                for (role, sub) in node.op.subgraphs() {
                    let mut sub_errs = Vec::new();
                    check(sub, Some(count), inner_parfor, &mut sub_errs);
                    errs.extend(sub_errs.into_iter().map(|e| GraphError::InSubgraph {
                        context: format!("node {id} {role}"),
                        source: Box::new(e),
                    }));
                }
            }
            _ => {}
        }
        if errs.len() > before {
            continue;
        }
        match g.infer(id, &node.op, &node.inputs) {
            Ok(types) if types != node.outputs => errs.push(GraphError::TypeMismatch {
                node: id,
                kind: node.op.kind(),
                msg: "recorded output types differ from inferred ones".into(),
            }),
            Ok(_) => {}
            Err(e) => errs.push(e),
        }
    }
    for &o in g.outputs() {
        if g.try_value_type(o).is_none() {
            errs.push(GraphError::UnknownOutput(o));
        }
    }
    if let Err(e) = topo_order(g) {
        errs.push(e);
    }
}
