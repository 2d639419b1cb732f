//! Converters for COND, WHILE and nested PARFOR blocks.

use super::{fragment, positive, Conv, Cx, Repr, Result, Vectorizer, Wrapped};
use crate::graph::{CondBlock, Graph, Node, Op, ValueRef, ValueType, WhileBlock};
use crate::tensor::{DType, UnaryOp};

/// Values a fragment needs to rebuild `cx` and `ws` from its params.
fn export(cx: &Cx, ws: &[Wrapped]) -> Vec<ValueRef> {
    let mut v = vec![cx.iters];
    if let Repr::Value(i) = cx.index {
        v.push(i);
    }
    v.extend(ws.iter().filter_map(|w| match w.repr {
        Repr::Value(r) => Some(r),
        Repr::Iota => None,
    }));
    v
}

/// Inverse of [`export`] inside a fragment whose params start with `p`.
fn import(p: &[ValueRef], cx: &Cx, ws: &[Wrapped]) -> (Cx, Vec<Wrapped>) {
    let mut k = 1;
    let index = match cx.index {
        Repr::Value(_) => {
            k += 1;
            Repr::Value(p[1])
        }
        Repr::Iota => Repr::Iota,
    };
    let ws = ws
        .iter()
        .map(|w| match w.repr {
            Repr::Value(_) => {
                k += 1;
                Wrapped { repr: Repr::Value(p[k - 1]), ..w.clone() }
            }
            Repr::Iota => w.clone(),
        })
        .collect();
    (Cx::new(p[0], cx.static_n, index), ws)
}

fn types(out: &Graph, vs: &[ValueRef]) -> Vec<ValueType> {
    vs.iter().map(|&v| out.value_type(v).clone()).collect()
}

/// Rows `idx` of every stacked value; the loop index is gathered too.
fn gather_all(out: &mut Graph, cx: &Cx, ws: &[Wrapped], idx: ValueRef) -> Result<(Repr, Vec<Wrapped>)> {
    let pick = |out: &mut Graph, r: Repr| -> Result<Repr> {
        Ok(Repr::Value(match r {
            Repr::Iota => idx,
            Repr::Value(v) => out.gather_rows(v, idx)?,
        }))
    };
    let index = pick(out, cx.index)?;
    let mut gathered = Vec::with_capacity(ws.len());
    for w in ws {
        gathered.push(if w.stacked { Wrapped { repr: pick(out, w.repr)?, ..w.clone() } } else { w.clone() });
    }
    Ok((index, gathered))
}

fn is_stateful(g: &Graph) -> bool {
    g.nodes().iter().any(|n| n.op.is_stateful() || n.op.subgraphs().iter().any(|(_, s)| is_stateful(s)))
}

impl Vectorizer<'_> {
    fn stacked_out(&self, out: &mut Graph, cx: &Cx, ws: &[Wrapped]) -> Result<Vec<ValueRef>> {
        ws.iter().map(|w| self.materialize(out, cx, w)).collect()
    }

    fn per_iter_tail(&self, node: &Node, k: usize) -> Result<crate::tensor::Shape> {
        node.outputs[k].shape.clone().ok_or_else(|| self.err(node, format!("output {k} has no static shape")))
    }
}

pub(super) fn cond(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Op::Cond(b) = &node.op else { unreachable!() };
    let caps = &ins[1..];
    if !ins[0].stacked {
        return cond_invariant(vz, out, cx, node, b, ins);
    }
    // each iteration takes one side: run both sides on their own rows
    let p = vz.materialize(out, cx, &ins[0])?;
    let np = out.unary(UnaryOp::Not, p)?;
    let sides = [(out.add_node(Op::WhereTrue, vec![p], [])?, "then", &b.then_branch), (out.add_node(Op::WhereTrue, vec![np], [])?, "else", &b.else_branch)];
    let mut idx_sets = Vec::new();
    let mut parts: Vec<Vec<ValueRef>> = Vec::new();
    for (id, seg, branch) in sides {
        let set = ValueRef::new(id, 0);
        let count = out.length(set)?;
        let (index, sub) = gather_all(out, cx, caps, set)?;
        let bcx = Cx::new(count, None, index);
        let inputs = export(&bcx, &sub);
        let tys = types(out, &inputs);

        let (mut then_g, ps) = fragment(out, &tys)?;
        let (icx, iws) = import(&ps, &bcx, &sub);
        let ws = vz.nested(seg, |vz| vz.convert_body(&mut then_g, &icx, branch, &iws))?;
        let rows = vz.stacked_out(&mut then_g, &icx, &ws)?;
        then_g.set_outputs(rows)?;

        let (mut else_g, ps) = fragment(out, &tys)?;
        let mut zeros = Vec::new();
        for (k, ty) in node.outputs.iter().enumerate() {
            let tail = vz.per_iter_tail(node, k)?;
            zeros.push(vz.emit(&mut else_g, Op::Zeros { dtype: ty.dtype, tail }, vec![ps[0]])?);
        }
        else_g.set_outputs(zeros)?;

        let pred = positive(out, count)?;
        let mut all = vec![pred];
        all.extend(inputs);
        let guard = out.add_node(Op::Cond(Box::new(CondBlock { then_branch: then_g, else_branch: else_g })), all, [])?;
        idx_sets.push(set);
        parts.push(out.all_outputs(guard));
    }
    let mut res = Vec::with_capacity(node.outputs.len());
    for (k, ty) in node.outputs.iter().enumerate() {
        let v = out.scatter_rows(&idx_sets, &[parts[0][k], parts[1][k]])?;
        res.push(Wrapped::stacked(v, ty.clone()));
    }
    Ok(Conv::Done(res))
}

/// Same branch for every iteration: a single COND over all rows.
fn cond_invariant(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, b: &CondBlock, ins: &[Wrapped]) -> Result<Conv> {
    let caps = &ins[1..];
    let inputs = export(cx, caps);
    let tys = types(out, &inputs);
    let mut sides = Vec::new();
    for (seg, branch) in [("then", &b.then_branch), ("else", &b.else_branch)] {
        let (mut g, ps) = fragment(out, &tys)?;
        let (icx, iws) = import(&ps, cx, caps);
        let ws = vz.nested(seg, |vz| vz.convert_body(&mut g, &icx, branch, &iws))?;
        sides.push((g, icx, ws));
    }
    let stacked: Vec<bool> = (0..node.outputs.len()).map(|k| sides[0].2[k].stacked || sides[1].2[k].stacked).collect();
    let mut graphs = Vec::new();
    for (mut g, icx, ws) in sides {
        let mut outs = Vec::with_capacity(ws.len());
        for (w, &st) in ws.iter().zip(&stacked) {
            outs.push(if st { vz.materialize(&mut g, &icx, w)? } else { vz.value(&mut g, &icx, w)? });
        }
        g.set_outputs(outs)?;
        graphs.push(g);
    }
    let else_branch = graphs.pop().expect("two sides");
    let then_branch = graphs.pop().expect("two sides");
    let pred = vz.value(out, cx, &ins[0])?;
    let mut all = vec![pred];
    all.extend(inputs);
    let id = out.add_node(Op::Cond(Box::new(CondBlock { then_branch, else_branch })), all, [])?;
    Ok(Conv::Done(
        node.outputs
            .iter()
            .enumerate()
            .map(|(k, ty)| Wrapped { repr: Repr::Value(ValueRef::new(id, k)), stacked: stacked[k], ty: ty.clone() })
            .collect(),
    ))
}

pub(super) fn while_loop(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Op::While(w) = &node.op else { unreachable!() };
    let nc = w.carried;
    // carried values become stacked once any trip makes them iteration-dependent
    let mut st: Vec<bool> = ins[..nc].iter().map(|x| x.stacked).collect();
    let cond_stacked = loop {
        let (c, body) = vz.trial(|vz| probe_while(vz, out, cx, w, ins, &st))?;
        let next: Vec<bool> = st.iter().zip(&body).map(|(a, b)| *a || *b).collect();
        if next == st {
            break c;
        }
        st = next;
    };
    if cond_stacked {
        while_general(vz, out, cx, node, w, ins)
    } else {
        while_invariant(vz, out, cx, node, w, ins, &st)
    }
}

/// Stackedness of (cond output, body outputs) for carried stackedness `st`.
fn probe_while(vz: &mut Vectorizer, out: &Graph, cx: &Cx, w: &WhileBlock, ins: &[Wrapped], st: &[bool]) -> Result<(bool, Vec<bool>)> {
    let mut scratch = out.clone();
    let tcx = Cx::new(cx.iters, cx.static_n, cx.index);
    let mut params = ins.to_vec();
    for (k, p) in params.iter_mut().enumerate().take(st.len()) {
        if st[k] && !p.stacked {
            let v = vz.materialize(&mut scratch, &tcx, p)?;
            *p = Wrapped::stacked(v, p.ty.clone());
        }
    }
    let c = vz.convert_body(&mut scratch, &tcx, &w.cond, &params)?;
    let b = vz.convert_body(&mut scratch, &tcx, &w.body, &params)?;
    Ok((c[0].stacked, b.iter().map(|x| x.stacked).collect()))
}

/// The condition is the same for every iteration, so all rows run the
/// same number of trips.
fn while_invariant(
    vz: &mut Vectorizer,
    out: &mut Graph,
    cx: &Cx,
    node: &Node,
    w: &WhileBlock,
    ins: &[Wrapped],
    st: &[bool],
) -> Result<Conv> {
    let nc = w.carried;
    let caps = &ins[nc..];
    let mut inputs = Vec::with_capacity(ins.len() + 2);
    for (k, x) in ins[..nc].iter().enumerate() {
        inputs.push(if st[k] { vz.materialize(out, cx, x)? } else { vz.value(out, cx, x)? });
    }
    inputs.extend(export(cx, caps));
    let tys = types(out, &inputs);
    let open = |ps: &[ValueRef]| -> (Cx, Vec<Wrapped>) {
        let (icx, iws) = import(&ps[nc..], cx, caps);
        let mut params: Vec<Wrapped> =
            (0..nc).map(|k| Wrapped { repr: Repr::Value(ps[k]), stacked: st[k], ty: ins[k].ty.clone() }).collect();
        params.extend(iws);
        (icx, params)
    };

    let (mut cg, ps) = fragment(out, &tys)?;
    let (icx, params) = open(&ps);
    let c = vz.nested("cond", |vz| vz.convert_body(&mut cg, &icx, &w.cond, &params))?;
    let cv = vz.value(&mut cg, &icx, &c[0])?;
    cg.set_outputs(vec![cv])?;

    let (mut bg, ps) = fragment(out, &tys)?;
    let (icx, params) = open(&ps);
    let r = vz.nested("body", |vz| vz.convert_body(&mut bg, &icx, &w.body, &params))?;
    let mut next = Vec::with_capacity(nc);
    for (k, x) in r.iter().enumerate() {
        next.push(if st[k] { vz.materialize(&mut bg, &icx, x)? } else { vz.value(&mut bg, &icx, x)? });
    }
    bg.set_outputs(next)?;

    let id = out.add_node(Op::While(Box::new(WhileBlock { carried: nc, cond: cg, body: bg })), inputs, [])?;
    Ok(Conv::Done(
        node.outputs
            .iter()
            .enumerate()
            .map(|(k, ty)| Wrapped { repr: Repr::Value(ValueRef::new(id, k)), stacked: st[k], ty: ty.clone() })
            .collect(),
    ))
}

/// Iterations leave the loop at different trips. The loop carries the
/// indices of the rows still running plus the full stacked state; each
/// trip runs the condition on the running rows, keeps the survivors and
/// runs the body on those only.
fn while_general(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, w: &WhileBlock, ins: &[Wrapped]) -> Result<Conv> {
    let nc = w.carried;
    let caps = &ins[nc..];
    let i0 = cx.range(out)?;
    let mut inputs = vec![i0];
    for x in &ins[..nc] {
        inputs.push(vz.materialize(out, cx, x)?);
    }
    inputs.extend(export(cx, caps));
    let mut tys = types(out, &inputs);
    tys[0] = ValueType::unknown(DType::I64);

    let (mut cg, ps) = fragment(out, &tys)?;
    let live = cg.length(ps[0])?;
    let c = positive(&mut cg, live)?;
    cg.set_outputs(vec![c])?;

    let (mut bg, ps) = fragment(out, &tys)?;
    let active = ps[0];
    let state: Vec<ValueRef> = ps[1..=nc].to_vec();
    let (fcx, fcaps) = import(&ps[1 + nc..], cx, caps);
    let mut full: Vec<Wrapped> =
        (0..nc).map(|k| Wrapped::stacked(state[k], ins[k].ty.clone())).collect();
    full.extend(fcaps);

    // condition over the running rows
    let k = bg.length(active)?;
    let (aidx, aws) = gather_all(&mut bg, &fcx, &full, active)?;
    let acx = Cx::new(k, None, aidx);
    let c = vz.nested("cond", |vz| vz.convert_body(&mut bg, &acx, &w.cond, &aws))?;
    let keep = vz.materialize(&mut bg, &acx, &c[0])?;
    let j = ValueRef::new(bg.add_node(Op::WhereTrue, vec![keep], [])?, 0);
    let survivors = bg.gather_rows(active, j)?;
    let k2 = bg.length(survivors)?;

    // body over the survivors, guarded against an empty set
    let (sidx, sws) = gather_all(&mut bg, &fcx, &full, survivors)?;
    let scx = Cx::new(k2, None, sidx);
    let mut ginputs = vec![survivors];
    ginputs.extend_from_slice(&state);
    ginputs.extend(export(&scx, &sws));
    let gtys = types(&bg, &ginputs);

    let (mut tg, gp) = fragment(&bg, &gtys)?;
    let (tcx, tws) = import(&gp[1 + nc..], &scx, &sws);
    let r = vz.nested("body", |vz| vz.convert_body(&mut tg, &tcx, &w.body, &tws))?;
    let mut next = Vec::with_capacity(nc);
    for (kk, x) in r.iter().enumerate() {
        let rows = vz.materialize(&mut tg, &tcx, x)?;
        next.push(vz.emit(&mut tg, Op::ScatterUpdate, vec![gp[1 + kk], gp[0], rows])?);
    }
    tg.set_outputs(next)?;

    let (mut eg, gp) = fragment(&bg, &gtys)?;
    eg.set_outputs(gp[1..=nc].to_vec())?;

    let pred = positive(&mut bg, k2)?;
    let mut all = vec![pred];
    all.extend(ginputs);
    let guard = bg.add_node(Op::Cond(Box::new(CondBlock { then_branch: tg, else_branch: eg })), all, [])?;
    let mut outs = vec![survivors];
    outs.extend(bg.all_outputs(guard));
    bg.set_outputs(outs)?;

    let id = out.add_node(Op::While(Box::new(WhileBlock { carried: nc + 1, cond: cg, body: bg })), inputs, [])?;
    Ok(Conv::Done(
        node.outputs
            .iter()
            .enumerate()
            .map(|(k, ty)| Wrapped::stacked(ValueRef::new(id, k + 1), ty.clone()))
            .collect(),
    ))
}

/// Nested parfor. A stateless inner loop that sees only invariant values
/// is converted once for all outer iterations; otherwise both loops are
/// flattened into one over `n*m` iterations.
pub(super) fn parfor(vz: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> Result<Conv> {
    let Op::Parfor(p) = &node.op else { unreachable!() };
    let Some(m) = vz.static_i64(out, &ins[0]) else {
        return Ok(Conv::Unsupported("inner iteration count is not a constant".into()));
    };
    let m = m.max(0) as usize;
    let caps = &ins[1..];
    let mv = out.scalar_i64(m as i64)?;

    if caps.iter().all(|w| !w.stacked) && !is_stateful(&p.body) {
        let icx = Cx::new(mv, Some(m), Repr::Iota);
        let ws = vz.nested("body", |vz| vz.convert_body(out, &icx, &p.body, caps))?;
        let mut res = Vec::with_capacity(ws.len());
        for (w, ty) in ws.iter().zip(&node.outputs) {
            let v = vz.materialize(out, &icx, w)?;
            res.push(Wrapped::unstacked(v, ty.clone()));
        }
        return Ok(Conv::Done(res));
    }

    let total = out.mul(cx.iters, mv)?;
    let fcx0 = Cx::new(total, cx.static_n.map(|n| n * m), Repr::Iota);
    let flat = fcx0.range(out)?;
    let div = out.scalar_i64(m.max(1) as i64)?;
    let outer = out.div(flat, div)?;
    let base = out.mul(outer, mv)?;
    let inner = out.sub(flat, base)?;
    let (_, fcaps) = gather_all(out, cx, caps, outer)?;
    let fcx = Cx::new(total, fcx0.static_n, Repr::Value(inner));
    let ws = vz.nested("body", |vz| vz.convert_body(out, &fcx, &p.body, &fcaps))?;
    let mut res = Vec::with_capacity(ws.len());
    for (k, (w, ty)) in ws.iter().zip(&node.outputs).enumerate() {
        let v = vz.materialize(out, &fcx, w)?;
        let tail = vz.per_iter_tail(node, k)?;
        let y = vz.emit(out, Op::ReshapeLeading { tail }, vec![v, cx.iters])?;
        res.push(Wrapped::stacked(y, ty.clone()));
    }
    Ok(Conv::Done(res))
}
