use pforvec::graph::{Graph, GraphError, NodeId, Op, OpKind, ParforBlock, ValueRef};
use pforvec::interp::{execute_fragment, execute_parfor_simd, ExecOptions, RngState, VariableStore};
use pforvec::tensor::{DType, TensorValue};
use pforvec::vectorize::{vectorize, vectorize_with, IterCount, Policy, Registry, Route, StatefulPolicy, VectorizeError};

type Body = dyn Fn(&mut Graph, ValueRef, &[ValueRef]) -> Result<Vec<ValueRef>, GraphError>;

fn block(caps: &[TensorValue], vars: &[(&str, TensorValue)], body: &Body) -> ParforBlock {
    let mut g = Graph::new();
    for (name, v) in vars {
        g.declare_variable(*name, v.clone());
    }
    let cs: Vec<ValueRef> = caps.iter().map(|c| g.constant(c.clone()).unwrap()).collect();
    let n = g.scalar_i64(1).unwrap();
    g.parfor(n, &cs, |b, i, p| body(b, i, p)).unwrap();
    let Op::Parfor(p) = &g.node(NodeId(g.len() - 1)).op else { panic!("not a parfor") };
    (**p).clone()
}

fn store(vars: &[(&str, TensorValue)]) -> VariableStore {
    let mut s = VariableStore::new();
    for (name, v) in vars {
        s.insert(*name, v.clone());
    }
    s
}

fn run_vec(
    b: &ParforBlock,
    n: usize,
    caps: &[TensorValue],
    iters: IterCount,
    policy: Policy,
    st: &mut VariableStore,
) -> (Vec<TensorValue>, u64) {
    let v = vectorize(b, iters, policy).unwrap();
    let mut params = vec![TensorValue::scalar_i64(n as i64)];
    params.extend(caps.iter().cloned());
    let r = execute_fragment(&v.graph, &params, st, &mut RngState::new(3), ExecOptions::default()).unwrap();
    (r.outputs, r.dispatch_count)
}

fn oracle(b: &ParforBlock, n: usize, caps: &[TensorValue], st: &mut VariableStore) -> Vec<TensorValue> {
    execute_parfor_simd(b, n, caps, st, &mut RngState::new(3)).unwrap()
}

/// Vectorized (static and dynamic count, fast and generic paths) equals the oracle.
fn check(b: &ParforBlock, ns: &[usize], caps: &[TensorValue], vars: &[(&str, TensorValue)]) {
    for &n in ns {
        let mut so = store(vars);
        let want = oracle(b, n, caps, &mut so);
        for iters in [IterCount::Static(n), IterCount::Dynamic] {
            for materialize_inputs in [false, true] {
                let policy = Policy { materialize_inputs, ..Policy::default() };
                let mut sv = store(vars);
                let (got, _) = run_vec(b, n, caps, iters, policy, &mut sv);
                assert_eq!(got.len(), want.len());
                for (g, w) in got.iter().zip(&want) {
                    assert_eq!(g.shape(), w.shape(), "n={n} {iters:?} generic={materialize_inputs}");
                    assert!(g.all_close(w, 1e-9), "n={n} {iters:?}: {g} vs {w}");
                }
                assert_eq!(sv.values(), so.values(), "final variables, n={n}");
            }
        }
    }
}

fn seq(dims: &[usize], scale: f64) -> TensorValue {
    let k: usize = dims.iter().product();
    TensorValue::f64(dims, (0..k).map(|v| (v as f64 * 0.37 - 1.3) * scale).collect())
}

fn row_add(b: &mut Graph, i: ValueRef, p: &[ValueRef]) -> Result<Vec<ValueRef>, GraphError> {
    let x = b.gather_rows(p[0], i)?;
    let y = b.gather_rows(p[1], i)?;
    Ok(vec![b.add(x, y)?])
}

#[test]
fn rows_of_two_matrices_add_to_the_sum() {
    let caps = [seq(&[10, 20], 1.0), seq(&[10, 20], -0.5)];
    let b = block(&caps, &[], &row_add);
    let v = vectorize(&b, IterCount::Static(10), Policy::default()).unwrap();
    // gather by the iteration index over all rows is the table itself
    assert!(v.graph.nodes().iter().all(|n| n.op.kind() != OpKind::GatherRows));
    assert_eq!(v.graph.nodes().iter().filter(|n| n.op.kind() == OpKind::Add).count(), 1);
    assert_eq!(v.diagnostics.count(Route::Fallback), 0);
    let (got, _) = run_vec(&b, 10, &caps, IterCount::Static(10), Policy::default(), &mut VariableStore::new());
    let want = pforvec::tensor::binary(pforvec::tensor::BinaryOp::Add, &caps[0], &caps[1]).unwrap();
    assert_eq!(got[0], want);
    check(&b, &[0, 1, 3, 7, 10], &caps, &[]);
}

#[test]
fn zero_iterations_give_empty_leading_axis() {
    let caps = [seq(&[10, 20], 1.0), seq(&[10, 20], 2.0)];
    let b = block(&caps, &[], &row_add);
    let (got, _) = run_vec(&b, 0, &caps, IterCount::Dynamic, Policy::default(), &mut VariableStore::new());
    assert_eq!(got[0].dims(), &[0, 20]);
}

#[test]
fn broadcast_against_invariant_matrix() {
    // X[y,z] + Y[i] with Y[n,z]
    let caps = [seq(&[3, 4], 1.0), seq(&[7, 4], 0.3)];
    let b = block(&caps, &[], &|b, i, p| {
        let y = b.gather_rows(p[1], i)?;
        Ok(vec![b.add(p[0], y)?])
    });
    let v = vectorize(&b, IterCount::Dynamic, Policy::default()).unwrap();
    let reshapes: Vec<_> = v.graph.nodes().iter().filter(|n| matches!(n.op, Op::Reshape { .. } | Op::ReshapeLeading { .. })).collect();
    assert_eq!(reshapes.len(), 2);
    check(&b, &[0, 1, 3, 7], &caps, &[]);
}

#[test]
fn matmul_forms() {
    let caps = [seq(&[7, 2, 3], 1.0), seq(&[3, 4], 0.5), seq(&[4, 2], -0.7), seq(&[7, 3, 4], 0.2)];
    // stacked @ invariant
    let b = block(&caps, &[], &|b, i, p| {
        let a = b.gather_rows(p[0], i)?;
        Ok(vec![b.matmul(a, p[1])?])
    });
    check(&b, &[0, 1, 3, 7], &caps, &[]);
    // invariant @ stacked
    let b = block(&caps, &[], &|b, i, p| {
        let a = b.gather_rows(p[0], i)?;
        Ok(vec![b.matmul(p[2], a)?])
    });
    check(&b, &[0, 1, 3, 7], &caps, &[]);
    // stacked @ stacked
    let b = block(&caps, &[], &|b, i, p| {
        let a = b.gather_rows(p[0], i)?;
        let c = b.gather_rows(p[3], i)?;
        Ok(vec![b.matmul(a, c)?])
    });
    check(&b, &[0, 1, 3, 7], &caps, &[]);
    let v = vectorize(&b, IterCount::Dynamic, Policy::default()).unwrap();
    assert_eq!(v.diagnostics.count(Route::Fallback), 0);
}

#[test]
fn reductions_layout_and_axis_shifts() {
    let caps = [seq(&[7, 2, 3], 1.0), seq(&[3], 0.5)];
    let b = block(&caps, &[], &|b, i, p| {
        let a = b.gather_rows(p[0], i)?;
        let s0 = b.reduce_sum(a, &[0])?;
        let s1 = b.reduce_sum(a, &[-1])?;
        let t = b.transpose(a, &[1, 0])?;
        let r = b.reshape(t, [6])?;
        let c = b.concat(&[s0, p[1]], 0)?;
        let st = b.stack(&[s0, p[1]], 1)?;
        let sl = b.slice(a, 1, 1, 2)?;
        let e = b.unary(pforvec::tensor::UnaryOp::Tanh, a)?;
        let all = b.reduce_sum(e, &[])?;
        Ok(vec![s0, s1, r, c, st, sl, all])
    });
    check(&b, &[0, 1, 3, 7], &caps, &[]);
}

#[test]
fn index_arithmetic_and_indirect_gather() {
    let caps = [seq(&[9, 3], 1.0), TensorValue::vec_i64(vec![4, 0, 8, 2, 2, 1, 7])];
    let b = block(&caps, &[], &|b, i, p| {
        let k = b.gather_rows(p[1], i)?;
        let row = b.gather_rows(p[0], k)?;
        let two = b.scalar_i64(2)?;
        let ii = b.mul(i, two)?;
        Ok(vec![row, ii])
    });
    check(&b, &[0, 1, 3, 7], &caps, &[]);
}

#[test]
fn gather_from_a_stacked_table() {
    let caps = [seq(&[7, 6, 2], 1.0), TensorValue::vec_i64(vec![4, 0, 3, 2, 2, 1, 0])];
    let b = block(&caps, &[], &|b, i, p| {
        let t = b.gather_rows(p[0], i)?;
        let k = b.gather_rows(p[1], i)?;
        let r = b.gather_rows(t, k)?;
        let ks = b.constant(TensorValue::vec_i64(vec![0, 0, 1]))?;
        let rk = b.add(ks, k)?;
        let rs = b.gather_rows(t, rk)?;
        Ok(vec![r, rs])
    });
    check(&b, &[0, 1, 3, 7], &caps, &[]);
}

fn cond_body(b: &mut Graph, i: ValueRef, _p: &[ValueRef]) -> Result<Vec<ValueRef>, GraphError> {
    let two = b.scalar_i64(2)?;
    let c = b.less(i, two)?;
    b.cond(
        c,
        &[i],
        |t, q| {
            let two = t.scalar_i64(2)?;
            Ok(vec![t.mul(two, q[0])?])
        },
        |e, q| {
            let ten = e.scalar_i64(10)?;
            Ok(vec![e.add(q[0], ten)?])
        },
    )
}

#[test]
fn cond_splits_iterations() {
    let b = block(&[], &[], &cond_body);
    let (got, _) = run_vec(&b, 4, &[], IterCount::Static(4), Policy::default(), &mut VariableStore::new());
    assert_eq!(got[0], TensorValue::vec_i64(vec![0, 2, 12, 13]));
    check(&b, &[0, 1, 2, 3, 7], &[], &[]);
}

#[test]
fn cond_all_one_side() {
    let b = block(&[], &[], &|b, i, _| {
        let zero = b.scalar_i64(0)?;
        let c = b.less(i, zero)?;
        b.cond(c, &[i], |t, q| Ok(vec![t.neg(q[0])?]), |_, q| Ok(vec![q[0]]))
    });
    let (got, _) = run_vec(&b, 3, &[], IterCount::Dynamic, Policy::default(), &mut VariableStore::new());
    assert_eq!(got[0], TensorValue::vec_i64(vec![0, 1, 2]));
    check(&b, &[0, 1, 3], &[], &[]);
}

#[test]
fn cond_on_invariant_predicate() {
    let caps = [TensorValue::scalar_bool(true), seq(&[7, 2], 1.0)];
    let b = block(&caps, &[], &|b, i, p| {
        let x = b.gather_rows(p[1], i)?;
        b.cond(p[0], &[x, p[1]], |t, q| Ok(vec![t.neg(q[0])?, q[1]]), |_, q| Ok(vec![q[0], q[1]]))
    });
    let v = vectorize(&b, IterCount::Dynamic, Policy::default()).unwrap();
    assert!(v.graph.nodes().iter().all(|n| n.op.kind() != OpKind::WhereTrue));
    check(&b, &[0, 1, 3, 7], &caps, &[]);
}

fn count_up(b: &mut Graph, i: ValueRef, _p: &[ValueRef]) -> Result<Vec<ValueRef>, GraphError> {
    let r0 = b.scalar_i64(0)?;
    b.while_loop(
        &[r0],
        &[i],
        |c, q| Ok(vec![c.less(q[0], q[1])?]),
        |c, q| {
            let one = c.scalar_i64(1)?;
            Ok(vec![c.add(q[0], one)?])
        },
    )
}

#[test]
fn while_with_iteration_dependent_trip_count() {
    let b = block(&[], &[], &count_up);
    let (got, _) = run_vec(&b, 5, &[], IterCount::Dynamic, Policy::default(), &mut VariableStore::new());
    assert_eq!(got[0], TensorValue::vec_i64(vec![0, 1, 2, 3, 4]));
    let (got, _) = run_vec(&b, 0, &[], IterCount::Dynamic, Policy::default(), &mut VariableStore::new());
    assert_eq!(got[0].dims(), &[0]);
    check(&b, &[0, 1, 3, 7], &[], &[]);
}

#[test]
fn while_with_invariant_condition_runs_fixed_trips() {
    let caps = [seq(&[9, 2], 1.0)];
    let b = block(&caps, &[], &|b, i, p| {
        let x = b.gather_rows(p[0], i)?;
        let k0 = b.scalar_i64(0)?;
        b.while_loop(
            &[k0, x],
            &[],
            |c, q| {
                let three = c.scalar_i64(3)?;
                Ok(vec![c.less(q[0], three)?])
            },
            |c, q| {
                let one = c.scalar_i64(1)?;
                let two = c.scalar_f64(2.0)?;
                Ok(vec![c.add(q[0], one)?, c.mul(q[1], two)?])
            },
        )
    });
    let v = vectorize(&b, IterCount::Dynamic, Policy::default()).unwrap();
    assert!(v.graph.nodes().iter().all(|n| n.op.kind() != OpKind::WhereTrue));
    let d: Vec<u64> = [1, 4, 9]
        .iter()
        .map(|&n| run_vec(&b, n, &caps, IterCount::Dynamic, Policy::default(), &mut VariableStore::new()).1)
        .collect();
    assert!(d.windows(2).all(|w| w[0] == w[1]), "{d:?}");
    check(&b, &[0, 1, 3, 7, 9], &caps, &[]);
}

#[test]
fn cond_inside_while_and_while_inside_cond() {
    let caps = [seq(&[7, 3], 1.0)];
    let b = block(&caps, &[], &|b, i, p| {
        let x = b.gather_rows(p[0], i)?;
        let r0 = b.scalar_i64(0)?;
        let w = b.while_loop(
            &[r0, x],
            &[i],
            |c, q| Ok(vec![c.less(q[0], q[2])?]),
            |c, q| {
                let one = c.scalar_i64(1)?;
                let r = c.add(q[0], one)?;
                let two = c.scalar_i64(2)?;
                let pred = c.less(q[0], two)?;
                let y = c.cond(pred, &[q[1]], |t, z| Ok(vec![t.neg(z[0])?]), |e, z| {
                    let h = e.scalar_f64(0.5)?;
                    Ok(vec![e.mul(z[0], h)?])
                })?;
                Ok(vec![r, y[0]])
            },
        )?;
        let three = b.scalar_i64(3)?;
        let pred = b.less(i, three)?;
        let in_cond = b.cond(pred, &[i, x], |t, q| count_up_from(t, q[0], q[1]), |_, q| Ok(vec![q[1]]))?;
        Ok(vec![w[0], w[1], in_cond[0]])
    });
    check(&b, &[0, 1, 3, 7], &caps, &[]);
}

fn count_up_from(t: &mut Graph, i: ValueRef, x: ValueRef) -> Result<Vec<ValueRef>, GraphError> {
    let r0 = t.scalar_i64(0)?;
    let w = t.while_loop(
        &[r0, x],
        &[i],
        |c, q| Ok(vec![c.less(q[0], q[2])?]),
        |c, q| {
            let one = c.scalar_i64(1)?;
            let a = c.scalar_f64(1.5)?;
            Ok(vec![c.add(q[0], one)?, c.add(q[1], a)?])
        },
    )?;
    Ok(vec![w[1]])
}

#[test]
fn nested_parfor_is_flattened() {
    let caps = [seq(&[7, 4], 1.0), seq(&[4], 0.5)];
    let b = block(&caps, &[], &|b, i, p| {
        let x = b.gather_rows(p[0], i)?;
        let m = b.scalar_i64(4)?;
        let inner = b.parfor(m, &[x, p[1], i], |c, j, q| {
            let e = c.gather_rows(q[0], j)?;
            let f = c.gather_rows(q[1], j)?;
            let k = c.add(j, q[2])?;
            Ok(vec![c.mul(e, f)?, k])
        })?;
        // inner loop seeing only invariant values
        let inv = b.parfor(m, &[p[1]], |c, j, q| Ok(vec![c.gather_rows(q[0], j)?]))?;
        Ok(vec![inner[0], inner[1], inv[0]])
    });
    let v = vectorize(&b, IterCount::Dynamic, Policy::default()).unwrap();
    assert_eq!(v.diagnostics.count(Route::Fallback), 0, "{}", v.diagnostics);
    check(&b, &[0, 1, 3, 7], &caps, &[]);
}

#[test]
fn assign_add_is_reduced_once() {
    let vars = [("v", TensorValue::scalar_i64(0))];
    let b = block(&[], &vars, &|b, i, _| {
        b.assign_add("v", i)?;
        Ok(vec![])
    });
    let v = vectorize(&b, IterCount::Static(4), Policy::default()).unwrap();
    assert_eq!(v.graph.nodes().iter().filter(|n| n.op.kind() == OpKind::AssignAdd).count(), 1);
    let mut st = store(&vars);
    run_vec(&b, 4, &[], IterCount::Static(4), Policy::default(), &mut st);
    assert_eq!(st.get("v"), Some(&TensorValue::scalar_i64(6)));
    check(&b, &[0, 1, 3, 7], &[], &vars);
}

#[test]
fn read_variable_runs_once() {
    let vars = [("w", TensorValue::vec_f64(vec![1.0, 2.0]))];
    let caps = [seq(&[7, 2], 1.0)];
    let b = block(&caps, &vars, &|b, i, p| {
        let w = b.read_variable("w")?;
        let x = b.gather_rows(p[0], i)?;
        Ok(vec![b.mul(w, x)?])
    });
    let v = vectorize(&b, IterCount::Dynamic, Policy::default()).unwrap();
    assert_eq!(v.graph.nodes().iter().filter(|n| n.op.kind() == OpKind::ReadVariable).count(), 1);
    let mut st = store(&vars);
    run_vec(&b, 7, &caps, IterCount::Dynamic, Policy::default(), &mut st);
    assert_eq!(st.log().len(), 1);
    check(&b, &[0, 1, 3, 7], &caps, &vars);
}

#[test]
fn assign_of_iteration_value_is_rejected_by_default() {
    let vars = [("v", TensorValue::scalar_i64(0))];
    let b = block(&[], &vars, &|b, i, _| {
        b.assign("v", i)?;
        Ok(vec![])
    });
    let err = vectorize(&b, IterCount::Dynamic, Policy::default()).unwrap_err();
    assert!(matches!(err, VectorizeError::StatefulNotSupported { ref name, .. } if name == "v"));
    let policy = Policy { stateful: StatefulPolicy::Fallback, ..Policy::default() };
    let v = vectorize(&b, IterCount::Dynamic, policy).unwrap();
    assert_eq!(v.diagnostics.count(Route::Fallback), 1);
    for n in [0, 1, 5] {
        let mut so = store(&vars);
        oracle(&b, n, &[], &mut so);
        let mut sv = store(&vars);
        run_vec(&b, n, &[], IterCount::Dynamic, policy, &mut sv);
        assert_eq!(sv.values(), so.values());
    }
}

#[test]
fn assign_of_invariant_value_writes_once() {
    let vars = [("v", TensorValue::scalar_f64(0.0))];
    let caps = [TensorValue::scalar_f64(2.5)];
    let b = block(&caps, &vars, &|b, _i, p| {
        b.assign("v", p[0])?;
        Ok(vec![])
    });
    let mut st = store(&vars);
    run_vec(&b, 6, &caps, IterCount::Dynamic, Policy::default(), &mut st);
    assert_eq!(st.log().len(), 1);
    check(&b, &[0, 1, 3], &caps, &vars);
}

#[test]
fn random_draw_gains_a_leading_axis() {
    let b = block(&[], &[], &|b, _i, _| Ok(vec![b.random_uniform([3])?]));
    let (got, _) = run_vec(&b, 5, &[], IterCount::Dynamic, Policy::default(), &mut VariableStore::new());
    assert_eq!(got[0].dims(), &[5, 3]);
    assert!(got[0].as_f64().unwrap().iter().all(|v| (0.0..1.0).contains(v)));
    let v = vectorize(&b, IterCount::Dynamic, Policy::default()).unwrap();
    assert_eq!(v.graph.nodes().iter().filter(|n| n.op.kind() == OpKind::RandomUniform).count(), 1);
}

#[test]
fn forced_fallback_matches_and_scales_with_n() {
    let caps = [seq(&[16, 3], 1.0), seq(&[16, 3], 2.0)];
    let b = block(&caps, &[], &row_add);
    let forced = Policy { force_fallback: true, ..Policy::default() };
    let mut counts = Vec::new();
    for n in [0, 4, 16] {
        let (conv, dc) = run_vec(&b, n, &caps, IterCount::Dynamic, Policy::default(), &mut VariableStore::new());
        let (fb, df) = run_vec(&b, n, &caps, IterCount::Dynamic, forced, &mut VariableStore::new());
        assert_eq!(conv, fb);
        counts.push((dc, df));
    }
    assert_eq!(counts[1].0, counts[2].0);
    assert!(counts[2].1 > 3 * counts[1].1 && counts[1].1 > counts[0].1, "{counts:?}");
}

#[test]
fn unregistered_kind_falls_back() {
    let caps = [seq(&[7, 3], 1.0), seq(&[7, 3], 2.0)];
    let b = block(&caps, &[], &row_add);
    let mut reg = Registry::standard();
    reg.remove(OpKind::Add);
    let v = vectorize_with(&reg, &b, IterCount::Dynamic, Policy::default()).unwrap();
    let fb: Vec<_> = v.diagnostics.fallbacks().collect();
    assert_eq!(fb.len(), 1);
    assert_eq!(fb[0].kind, OpKind::Add);
    for n in [0, 1, 7] {
        let mut params = vec![TensorValue::scalar_i64(n as i64)];
        params.extend(caps.iter().cloned());
        let got = execute_fragment(&v.graph, &params, &mut VariableStore::new(), &mut RngState::new(0), ExecOptions::default())
            .unwrap()
            .outputs;
        assert_eq!(got, oracle(&b, n, &caps, &mut VariableStore::new()));
    }
}

#[test]
fn dispatch_count_is_independent_of_n() {
    let caps = [seq(&[256, 8], 1.0), seq(&[256, 8], 2.0), seq(&[8, 4], 0.1)];
    let b = block(&caps, &[], &|b, i, p| {
        let s = row_add(b, i, p)?;
        let r = b.reshape(s[0], [1, 8])?;
        let m = b.matmul(r, p[2])?;
        Ok(vec![b.unary(pforvec::tensor::UnaryOp::Relu, m)?])
    });
    let counts: Vec<u64> = [1, 16, 256]
        .iter()
        .map(|&n| run_vec(&b, n, &caps, IterCount::Dynamic, Policy::default(), &mut VariableStore::new()).1)
        .collect();
    assert!(counts.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
}

#[test]
fn iteration_dependent_shape_is_rejected() {
    let b = block(&[], &[], &|b, i, _| {
        let z = b.add_node(Op::Zeros { dtype: DType::F64, tail: [2].into() }, vec![i], [])?;
        Ok(vec![ValueRef::new(z, 0)])
    });
    // zeros sized by the iteration index differs in shape per iteration
    let v = vectorize(&b, IterCount::Dynamic, Policy::default());
    assert!(v.is_err());
}

#[test]
fn convolutions_fold_iterations_into_the_batch() {
    let caps = [seq(&[5, 2, 6, 6, 2], 0.1), seq(&[3, 3, 2, 4], 0.2), seq(&[5, 2, 6, 6, 4], 0.3)];
    let b = block(&caps, &[], &|b, i, p| {
        let x = b.gather_rows(p[0], i)?;
        let gy = b.gather_rows(p[2], i)?;
        let y = b.conv2d(x, p[1])?;
        let gx = b.add_node(Op::Conv2dBackpropInput, vec![gy, p[1]], [])?;
        let gf = b.add_node(Op::Conv2dBackpropFilter { kernel: [3, 3] }, vec![x, gy], [])?;
        Ok(vec![y, ValueRef::new(gx, 0), ValueRef::new(gf, 0)])
    });
    check(&b, &[0, 1, 3, 5], &caps, &[]);
}

#[test]
fn whole_graph_lowering_removes_parfors() {
    let mut g = Graph::new();
    let x = g.constant(seq(&[6, 3], 1.0)).unwrap();
    let n = g.placeholder("n", DType::I64, []).unwrap();
    let two = g.scalar_i64(2).unwrap();
    let big = g.less(two, n).unwrap();
    let out = g
        .cond(
            big,
            &[n, x],
            |t, q| {
                t.parfor(q[0], &[q[1]], |b, i, p| {
                    let r = b.gather_rows(p[0], i)?;
                    Ok(vec![b.neg(r)?])
                })
            },
            |e, q| Ok(vec![e.slice_leading(q[1], 2)?]),
        )
        .unwrap();
    g.set_outputs(out).unwrap();
    let (lowered, diags) = pforvec::vectorize::vectorize_graph(&g, Policy::default()).unwrap();
    assert_eq!(diags.count(Route::Fallback), 0);
    fn has_parfor(g: &Graph) -> bool {
        g.nodes().iter().any(|n| n.op.kind() == OpKind::Parfor || n.op.subgraphs().iter().any(|(_, s)| has_parfor(s)))
    }
    assert!(has_parfor(&g) && !has_parfor(&lowered));
    assert!(pforvec::graph::validate(&lowered).is_ok());
    for k in [0, 2, 5] {
        let mut feeds = pforvec::interp::Feeds::new();
        feeds.insert("n".into(), TensorValue::scalar_i64(k));
        let run = |g: &Graph| pforvec::interp::execute(g, &feeds, &mut VariableStore::new(), &mut RngState::new(0)).unwrap();
        assert_eq!(run(&g), run(&lowered));
    }
}
