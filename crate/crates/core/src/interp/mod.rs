//! Reference executor.
//!
//! Everything is evaluated over a list of *lanes*. A plain run has one
//! lane; a parallel-for body runs with one lane per iteration, and nested
//! blocks narrow the lane list to the iterations that reach them. Each
//! node is dispatched for all of its lanes before the next node starts,
//! which gives lock-step SIMD semantics, and stateful nodes touch the
//! store lane by lane in ascending order.

mod kernels;
mod state;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::graph::{topo_order, Graph, GraphError, NodeId, Op, OpKind, ParforBlock, ValueRef, ValueType};
use crate::tensor::{stack, Shape, TensorError, TensorValue};

pub use kernels::eval_op;
pub use state::{Access, AccessKind, ActiveSet, RngState, VariableStore};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error("node {node} ({kind}): {source}")]
    Kernel { node: NodeId, kind: OpKind, source: TensorError },
    #[error("no feed for placeholder {0:?}")]
    MissingFeed(String),
    #[error("feed {name:?} should be {expected}, got {found}")]
    FeedMismatch { name: String, expected: ValueType, found: String },
    #[error("node {node}: iterations produced shapes {first} and {other}")]
    ShapeVariance { node: NodeId, first: Shape, other: Shape },
    #[error("node {0}: zero iterations and no static row shape")]
    UnknownEmptyShape(NodeId),
    #[error("step budget of {0} node executions exceeded")]
    BudgetExceeded(u64),
    #[error("node {0}: loop_var evaluated outside a parfor")]
    UnboundLoopVar(NodeId),
    #[error("node {node}: {msg}")]
    State { node: NodeId, msg: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Feeds = HashMap<String, TensorValue>;

/// One value per lane.
type Lanes = Vec<Arc<TensorValue>>;

#[derive(Debug, Clone, Copy, Default)]
pub struct ExecOptions {
    /// Abort once this many (node, lane) executions have happened.
    pub budget: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecResult {
    pub outputs: Vec<TensorValue>,
    /// Number of (node, lane) executions, params excluded.
    pub dispatch_count: u64,
}

struct Interp<'a> {
    feeds: &'a Feeds,
    store: &'a mut VariableStore,
    rng: &'a mut RngState,
    budget: Option<u64>,
    dispatched: u64,
    orders: HashMap<*const Graph, Arc<Vec<NodeId>>>,
}

/// Run `g` and return its declared outputs.
pub fn execute(g: &Graph, feeds: &Feeds, store: &mut VariableStore, rng: &mut RngState) -> Result<Vec<TensorValue>, ExecError> {
    Ok(execute_with(g, feeds, g.outputs(), store, rng, ExecOptions::default())?.outputs)
}

/// Run `g` and return the values behind `fetches`.
pub fn execute_with(
    g: &Graph,
    feeds: &Feeds,
    fetches: &[ValueRef],
    store: &mut VariableStore,
    rng: &mut RngState,
    opts: ExecOptions,
) -> Result<ExecResult, ExecError> {
    let mut it = Interp { feeds, store, rng, budget: opts.budget, dispatched: 0, orders: HashMap::new() };
    let vals = it.run(g, &[], &[None])?;
    let outputs = fetches
        .iter()
        .map(|r| {
            let v = vals[r.node.0].as_ref().ok_or(GraphError::UnknownOutput(*r))?;
            Ok(v[r.port][0].as_ref().clone())
        })
        .collect::<Result<Vec<_>, ExecError>>()?;
    Ok(ExecResult { outputs, dispatch_count: it.dispatched })
}

/// Run a subgraph with concrete values bound to its params.
pub fn execute_fragment(
    g: &Graph,
    params: &[TensorValue],
    store: &mut VariableStore,
    rng: &mut RngState,
    opts: ExecOptions,
) -> Result<ExecResult, ExecError> {
    let feeds = Feeds::new();
    let mut it = Interp { feeds: &feeds, store, rng, budget: opts.budget, dispatched: 0, orders: HashMap::new() };
    let ps: Vec<Lanes> = params.iter().map(|p| vec![Arc::new(p.clone())]).collect();
    let outs = it.fragment(g, &ps, &[None])?;
    Ok(ExecResult {
        outputs: outs.into_iter().map(|l| l[0].as_ref().clone()).collect(),
        dispatch_count: it.dispatched,
    })
}

/// Run a parfor body for `n` iterations under lock-step semantics.
pub fn execute_parfor_simd(
    block: &ParforBlock,
    n: usize,
    captures: &[TensorValue],
    store: &mut VariableStore,
    rng: &mut RngState,
) -> Result<Vec<TensorValue>, ExecError> {
    Ok(execute_parfor_simd_with(block, n, captures, store, rng, ExecOptions::default())?.outputs)
}

pub fn execute_parfor_simd_with(
    block: &ParforBlock,
    n: usize,
    captures: &[TensorValue],
    store: &mut VariableStore,
    rng: &mut RngState,
    opts: ExecOptions,
) -> Result<ExecResult, ExecError> {
    let feeds = Feeds::new();
    let mut it = Interp { feeds: &feeds, store, rng, budget: opts.budget, dispatched: 0, orders: HashMap::new() };
    let caps: Vec<Lanes> = captures.iter().map(|c| vec![Arc::new(c.clone())]).collect();
    let outs = it.parfor(NodeId(0), &block.body, &[n], &caps)?;
    Ok(ExecResult {
        outputs: outs.into_iter().map(|mut l| Arc::try_unwrap(l.remove(0)).unwrap_or_else(|a| (*a).clone())).collect(),
        dispatch_count: it.dispatched,
    })
}

fn pick(l: &Lanes, pos: &[usize]) -> Lanes {
    pos.iter().map(|&p| l[p].clone()).collect()
}

impl Interp<'_> {
    fn order(&mut self, g: &Graph) -> Result<Arc<Vec<NodeId>>, ExecError> {
        let key = g as *const Graph;
        if let Some(o) = self.orders.get(&key) {
            return Ok(o.clone());
        }
        let o = Arc::new(topo_order(g)?);
        self.orders.insert(key, o.clone());
        Ok(o)
    }

    fn charge(&mut self, lanes: usize) -> Result<(), ExecError> {
        self.dispatched += lanes as u64;
        match self.budget {
            Some(b) if self.dispatched > b => Err(ExecError::BudgetExceeded(b)),
            _ => Ok(()),
        }
    }

    /// Evaluate every node of `g`; result is indexed `[node][port][lane]`.
    fn run(&mut self, g: &Graph, params: &[Lanes], loop_var: &[Option<i64>]) -> Result<Vec<Option<Vec<Lanes>>>, ExecError> {
        let lanes = loop_var.len();
        let mut vals: Vec<Option<Vec<Lanes>>> = vec![None; g.len()];
        let order = self.order(g)?;
        for &id in order.iter() {
            let node = g.node(id);
            let arg = |vals: &[Option<Vec<Lanes>>], k: usize| -> Lanes {
                let r = node.inputs[k];
                vals[r.node.0].as_ref().expect("topological order")[r.port].clone()
            };
            let args: Vec<Lanes> = (0..node.inputs.len()).map(|k| arg(&vals, k)).collect();
            let kerr = |source: TensorError| ExecError::Kernel { node: id, kind: node.op.kind(), source };
            if let Op::Param { index, .. } = node.op {
                vals[id.0] = Some(vec![params[index].clone()]);
                continue;
            }
            self.charge(lanes)?;
            let out: Vec<Lanes> = match &node.op {
                Op::Param { .. } => unreachable!(),
                Op::Placeholder { name, ty } => {
                    let v = self.feeds.get(name).ok_or_else(|| ExecError::MissingFeed(name.clone()))?;
                    if !ty.compatible(&ValueType::of(v)) {
                        return Err(ExecError::FeedMismatch {
                            name: name.clone(),
                            expected: ty.clone(),
                            found: format!("{}{}", v.dtype(), v.shape()),
                        });
                    }
                    let v = Arc::new(v.clone());
                    vec![vec![v; lanes]]
                }
                Op::Constant(t) => {
                    let v = Arc::new(t.clone());
                    vec![vec![v; lanes]]
                }
                Op::LoopVar => {
                    let l = loop_var
                        .iter()
                        .map(|j| j.map(|j| Arc::new(TensorValue::scalar_i64(j))).ok_or(ExecError::UnboundLoopVar(id)))
                        .collect::<Result<Lanes, _>>()?;
                    vec![l]
                }
                Op::ReadVariable { name } => {
                    let l = (0..lanes)
                        .map(|_| {
                            self.store.read(id, name).map(Arc::new).ok_or_else(|| ExecError::State {
                                node: id,
                                msg: format!("unknown variable {name:?}"),
                            })
                        })
                        .collect::<Result<Lanes, _>>()?;
                    vec![l]
                }
                Op::Assign { name } => {
                    for lane in 0..lanes {
                        let v = args[0][lane].as_ref().clone();
                        self.store.write(id, name, v).map_err(|msg| ExecError::State { node: id, msg })?;
                    }
                    vec![]
                }
                Op::AssignAdd { name } => {
                    for lane in 0..lanes {
                        let cur = self.store.read(id, name).ok_or_else(|| ExecError::State {
                            node: id,
                            msg: format!("unknown variable {name:?}"),
                        })?;
                        let v = crate::tensor::binary(crate::tensor::BinaryOp::Add, &cur, &args[0][lane]).map_err(kerr)?;
                        self.store.write(id, name, v).map_err(|msg| ExecError::State { node: id, msg })?;
                    }
                    vec![]
                }
                Op::RandomUniform { shape } => {
                    let mut l = Lanes::with_capacity(lanes);
                    for lane in 0..lanes {
                        let s = match args.first() {
                            Some(n) => {
                                let n = n[lane].to_scalar_i64().map_err(kerr)?;
                                if n < 0 {
                                    return Err(kerr(TensorError::NegativeCount(n)));
                                }
                                shape.prepend(n as usize)
                            }
                            None => shape.clone(),
                        };
                        l.push(Arc::new(self.rng.draw(&s)));
                    }
                    vec![l]
                }
                Op::Cond(b) => {
                    let mut then_pos = Vec::new();
                    let mut else_pos = Vec::new();
                    for lane in 0..lanes {
                        if args[0][lane].to_scalar_bool().map_err(kerr)? {
                            then_pos.push(lane)
                        } else {
                            else_pos.push(lane)
                        }
                    }
                    let arity = node.outputs.len();
                    let mut out: Vec<Vec<Option<Arc<TensorValue>>>> = vec![vec![None; lanes]; arity];
                    for (sub, pos) in [(&b.then_branch, &then_pos), (&b.else_branch, &else_pos)] {
                        if pos.is_empty() {
                            continue;
                        }
                        let sub_params: Vec<Lanes> = args[1..].iter().map(|a| pick(a, pos)).collect();
                        let lv: Vec<Option<i64>> = pos.iter().map(|&p| loop_var[p]).collect();
                        let res = self.fragment(sub, &sub_params, &lv)?;
                        for (k, l) in res.into_iter().enumerate() {
                            for (j, v) in l.into_iter().enumerate() {
                                out[k][pos[j]] = Some(v);
                            }
                        }
                    }
                    out.into_iter().map(|l| l.into_iter().map(|v| v.expect("every lane takes a branch")).collect()).collect()
                }
                Op::While(w) => {
                    let mut state: Vec<Lanes> = args.clone();
                    let mut active: Vec<usize> = (0..lanes).collect();
                    loop {
                        let sub = |state: &[Lanes], active: &[usize]| -> Vec<Lanes> {
                            state.iter().map(|s| pick(s, active)).collect()
                        };
                        let lv: Vec<Option<i64>> = active.iter().map(|&p| loop_var[p]).collect();
                        let keep = self.fragment(&w.cond, &sub(&state, &active), &lv)?;
                        let mut next = Vec::with_capacity(active.len());
                        for (j, &p) in active.iter().enumerate() {
                            if keep[0][j].to_scalar_bool().map_err(kerr)? {
                                next.push(p);
                            }
                        }
                        active = next;
                        if active.is_empty() {
                            break;
                        }
                        let lv: Vec<Option<i64>> = active.iter().map(|&p| loop_var[p]).collect();
                        let res = self.fragment(&w.body, &sub(&state, &active), &lv)?;
                        for (k, l) in res.into_iter().enumerate() {
                            for (j, v) in l.into_iter().enumerate() {
                                state[k][active[j]] = v;
                            }
                        }
                    }
                    state.truncate(w.carried);
                    state
                }
                Op::Parfor(p) => {
                    let mut counts = Vec::with_capacity(lanes);
                    for lane in 0..lanes {
                        let n = args[0][lane].to_scalar_i64().map_err(kerr)?;
                        if n < 0 {
                            return Err(kerr(TensorError::NegativeCount(n)));
                        }
                        counts.push(n as usize);
                    }
                    self.parfor(id, &p.body, &counts, &args[1..])?
                }
                op => {
                    let mut l = Lanes::with_capacity(lanes);
                    for lane in 0..lanes {
                        let a: Vec<&TensorValue> = args.iter().map(|x| x[lane].as_ref()).collect();
                        l.push(Arc::new(eval_op(op, &a).map_err(kerr)?));
                    }
                    vec![l]
                }
            };
            vals[id.0] = Some(out);
        }
        Ok(vals)
    }

    /// Run a subgraph and collect its declared outputs.
    fn fragment(&mut self, g: &Graph, params: &[Lanes], loop_var: &[Option<i64>]) -> Result<Vec<Lanes>, ExecError> {
        let vals = self.run(g, params, loop_var)?;
        Ok(g.outputs().iter().map(|r| vals[r.node.0].as_ref().expect("outputs evaluated")[r.port].clone()).collect())
    }

    /// Lane `l` runs `counts[l]` iterations; results are stacked per lane.
    fn parfor(&mut self, id: NodeId, body: &Graph, counts: &[usize], caps: &[Lanes]) -> Result<Vec<Lanes>, ExecError> {
        let mut owner = Vec::new();
        let mut lv = Vec::new();
        for (l, &n) in counts.iter().enumerate() {
            for j in 0..n {
                owner.push(l);
                lv.push(Some(j as i64));
            }
        }
        let params: Vec<Lanes> = caps.iter().map(|c| pick(c, &owner)).collect();
        let res = if lv.is_empty() { vec![Vec::new(); body.outputs().len()] } else { self.fragment(body, &params, &lv)? };
        let mut outs = Vec::with_capacity(res.len());
        for (k, rows) in res.iter().enumerate() {
            let mut per_lane = Lanes::with_capacity(counts.len());
            let mut start = 0;
            for &n in counts {
                let chunk = &rows[start..start + n];
                start += n;
                let v = if n == 0 {
                    let ty = body.value_type(body.outputs()[k]);
                    let s = ty.shape.as_ref().ok_or(ExecError::UnknownEmptyShape(id))?;
                    TensorValue::zeros(ty.dtype, s.prepend(0))
                } else {
                    let first = chunk[0].shape();
                    if let Some(bad) = chunk.iter().find(|r| r.shape() != first) {
                        return Err(ExecError::ShapeVariance { node: id, first: first.clone(), other: bad.shape().clone() });
                    }
                    let refs: Vec<&TensorValue> = chunk.iter().map(|r| r.as_ref()).collect();
                    stack(&refs, 0).map_err(|source| ExecError::Kernel { node: id, kind: OpKind::Parfor, source })?
                };
                per_lane.push(Arc::new(v));
            }
            outs.push(per_lane);
        }
        Ok(outs)
    }
}

/// Convenience: a store initialised from the graph's declared variables.
pub fn store_for(g: &Graph) -> VariableStore {
    VariableStore::from_initial(g.variables())
}

/// Declared variables as a plain map, for comparing final states.
pub fn snapshot(store: &VariableStore) -> BTreeMap<String, TensorValue> {
    store.values().clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DType;

    fn run(g: &Graph) -> Vec<TensorValue> {
        execute(g, &Feeds::new(), &mut store_for(g), &mut RngState::new(0)).unwrap()
    }

    #[test]
    fn add_constants() {
        let mut g = Graph::new();
        let a = g.scalar_f64(2.0).unwrap();
        let b = g.scalar_f64(3.0).unwrap();
        let c = g.add(a, b).unwrap();
        g.set_outputs(vec![c]).unwrap();
        assert_eq!(run(&g), vec![TensorValue::scalar_f64(5.0)]);
    }

    #[test]
    fn while_counts_to_four() {
        let mut g = Graph::new();
        let zero = g.scalar_i64(0).unwrap();
        let r = g
            .while_loop(
                &[zero],
                &[],
                |b, p| {
                    let four = b.scalar_i64(4)?;
                    Ok(vec![b.less(p[0], four)?])
                },
                |b, p| {
                    let one = b.scalar_i64(1)?;
                    Ok(vec![b.add(p[0], one)?])
                },
            )
            .unwrap();
        g.set_outputs(r).unwrap();
        assert_eq!(run(&g), vec![TensorValue::scalar_i64(4)]);
    }

    #[test]
    fn chained_assign_add() {
        let mut g = Graph::new();
        g.declare_variable("v", TensorValue::scalar_f64(1.5));
        let two = g.scalar_f64(2.0).unwrap();
        let a1 = g.assign_add("v", two).unwrap();
        let a2 = g.assign_add("v", two).unwrap();
        g.add_control_dep(a2, a1).unwrap();
        let r = g.add_node(Op::ReadVariable { name: "v".into() }, vec![], [a2]).unwrap();
        g.set_outputs(vec![ValueRef::new(r, 0)]).unwrap();
        let mut store = store_for(&g);
        let out = execute(&g, &Feeds::new(), &mut store, &mut RngState::new(0)).unwrap();
        assert_eq!(out, vec![TensorValue::scalar_f64(5.5)]);
        let kinds: Vec<AccessKind> = store.log().iter().map(|a| a.kind).collect();
        use AccessKind::*;
        assert_eq!(kinds, vec![Read, Write, Read, Write, Read]);
    }

    fn cond_body(g: &mut Graph, n: i64) -> ValueRef {
        let n = g.scalar_i64(n).unwrap();
        g.parfor(n, &[], |b, i, _| {
            let two = b.scalar_i64(2)?;
            let p = b.less(i, two)?;
            b.cond(
                p,
                &[i],
                |b, c| {
                    let two = b.scalar_i64(2)?;
                    Ok(vec![b.mul(two, c[0])?])
                },
                |b, c| {
                    let ten = b.scalar_i64(10)?;
                    Ok(vec![b.add(c[0], ten)?])
                },
            )
        })
        .unwrap()[0]
    }

    #[test]
    fn simd_cond() {
        let mut g = Graph::new();
        let o = cond_body(&mut g, 4);
        g.set_outputs(vec![o]).unwrap();
        assert_eq!(run(&g), vec![TensorValue::vec_i64(vec![0, 2, 12, 13])]);
    }

    #[test]
    fn simd_add_of_rows() {
        let x = TensorValue::f64(&[10, 20], (0..200).map(|v| v as f64 * 0.5).collect());
        let y = TensorValue::f64(&[10, 20], (0..200).map(|v| (v as f64).sin()).collect());
        let mut g = Graph::new();
        let xp = g.placeholder("x", DType::F64, [10, 20]).unwrap();
        let yp = g.placeholder("y", DType::F64, [10, 20]).unwrap();
        let n = g.scalar_i64(10).unwrap();
        let id = g.len();
        g.parfor(n, &[xp, yp], |b, i, p| {
            let xi = b.gather_rows(p[0], i)?;
            let yi = b.gather_rows(p[1], i)?;
            Ok(vec![b.add(xi, yi)?])
        })
        .unwrap();
        let Op::Parfor(block) = &g.node(NodeId(id)).op else { panic!() };
        let mut st = VariableStore::new();
        let out = execute_parfor_simd(block, 10, &[x.clone(), y.clone()], &mut st, &mut RngState::new(0)).unwrap();
        let expect = crate::tensor::binary(crate::tensor::BinaryOp::Add, &x, &y).unwrap();
        assert!(out[0].all_close(&expect, 1e-12));
        let empty = execute_parfor_simd(block, 0, &[x, y], &mut st, &mut RngState::new(0)).unwrap();
        assert_eq!(empty[0].dims(), &[0, 20]);
    }

    #[test]
    fn budget_stops_runaway_loop() {
        let mut g = Graph::new();
        let zero = g.scalar_i64(0).unwrap();
        let r = g
            .while_loop(
                &[zero],
                &[],
                |b, _| Ok(vec![b.constant(TensorValue::scalar_bool(true))?]),
                |b, p| {
                    let one = b.scalar_i64(1)?;
                    Ok(vec![b.add(p[0], one)?])
                },
            )
            .unwrap();
        g.set_outputs(r).unwrap();
        let err = execute_with(
            &g,
            &Feeds::new(),
            g.outputs(),
            &mut VariableStore::new(),
            &mut RngState::new(0),
            ExecOptions { budget: Some(1000) },
        )
        .unwrap_err();
        assert_eq!(err, ExecError::BudgetExceeded(1000));
    }

    #[test]
    fn shape_variance_is_an_error() {
        let mut g = Graph::new();
        let n = g.scalar_i64(3).unwrap();
        let out = g
            .parfor(n, &[], |b, i, _| {
                let one = b.scalar_i64(1)?;
                let k = b.add(i, one)?;
                let r = b.add_node(Op::Range, vec![k], [])?;
                Ok(vec![ValueRef::new(r, 0)])
            })
            .unwrap();
        g.set_outputs(out).unwrap();
        let err = execute(&g, &Feeds::new(), &mut VariableStore::new(), &mut RngState::new(0)).unwrap_err();
        assert!(matches!(err, ExecError::ShapeVariance { .. }));
    }
}
