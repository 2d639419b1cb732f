//! Properties checked over randomly generated parfor bodies.

use proptest::prelude::*;

use pforvec::gen::{check_case, generate, Case, GenConfig, Outcome, Weights};
use pforvec::graph::{deserialize, serialize, topo_order, Graph, Op, ParforBlock, ValueRef};
use pforvec::interp::{
    execute_fragment, execute_parfor_simd, execute_parfor_simd_with, ActiveSet, ExecOptions, RngState, VariableStore,
};
use pforvec::tensor::{gather_rows, stack, TensorValue};
use pforvec::vectorize::{vectorize, IterCount, Policy, Registry, Route};

fn case(seed: u64, cfg: &GenConfig) -> Case {
    generate(seed, 0, cfg).unwrap()
}

fn deep() -> GenConfig {
    GenConfig { max_depth: 4, ..GenConfig::default() }
}

fn stateless() -> GenConfig {
    GenConfig { weights: Weights { stateful: 0, ..Weights::default() }, ..deep() }
}

/// The same body exporting `extra` alongside its outputs.
fn exporting(block: &ParforBlock, extra: &[ValueRef]) -> ParforBlock {
    let mut body = block.body.clone();
    let mut outs = body.outputs().to_vec();
    outs.extend_from_slice(extra);
    body.set_outputs(outs).unwrap();
    ParforBlock { body }
}

/// Top-level ports of the body other than params.
fn ports(body: &Graph) -> Vec<ValueRef> {
    body.nodes()
        .iter()
        .filter(|n| !matches!(n.op, Op::Param { .. }))
        .flat_map(|n| (0..n.outputs.len()).map(move |p| ValueRef::new(n.id, p)))
        .collect()
}

fn rows(t: &TensorValue) -> Vec<TensorValue> {
    (0..t.dims()[0]).map(|k| gather_rows(t, &TensorValue::scalar_i64(k as i64)).unwrap()).collect()
}

fn oracle(case: &Case, block: &ParforBlock, n: usize) -> Vec<TensorValue> {
    execute_parfor_simd(block, n, &case.captures, &mut case.variable_store(), &mut RngState::new(1)).unwrap()
}

fn check_topo(g: &Graph) {
    let order = topo_order(g).unwrap();
    let mut seen = vec![usize::MAX; g.len()];
    for (pos, id) in order.iter().enumerate() {
        assert_eq!(seen[id.0], usize::MAX, "node {id} listed twice");
        seen[id.0] = pos;
    }
    for n in g.nodes() {
        for r in &n.inputs {
            assert!(seen[r.node.0] < seen[n.id.0]);
        }
        for d in &n.control_deps {
            assert!(seen[d.0] < seen[n.id.0]);
        }
        for (_, sub) in n.op.subgraphs() {
            check_topo(sub);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn topological_order_respects_edges(seed in any::<u64>()) {
        check_topo(&case(seed, &deep()).graph);
    }

    #[test]
    fn text_form_is_a_fixed_point(seed in any::<u64>()) {
        let text = serialize(&case(seed, &deep()).graph);
        let again = serialize(&deserialize(&text).unwrap());
        prop_assert_eq!(text, again);
    }

    #[test]
    fn inferred_shapes_match_runtime(seed in any::<u64>()) {
        let c = case(seed, &deep());
        let body = &c.block.body;
        let known: Vec<ValueRef> = ports(body).into_iter().filter(|&r| body.shape_of(r).is_some()).collect();
        let out = oracle(&c, &exporting(&c.block, &known), 3);
        let skip = body.outputs().len();
        for (r, v) in known.iter().zip(&out[skip..]) {
            prop_assert_eq!(v.shape(), &body.shape_of(*r).unwrap().prepend(3), "value {}", r);
            prop_assert_eq!(v.dtype(), body.value_type(*r).dtype);
        }
    }

    #[test]
    fn lock_step_equals_independent_runs(seed in any::<u64>(), n in 0usize..=7) {
        let c = case(seed, &stateless());
        let want = oracle(&c, &c.block, n);
        // run iteration k alone with the loop variable fixed to k
        let mut per = vec![vec![]; want.len()];
        for k in 0..n {
            let nodes = c.block.body.nodes().iter().cloned().map(|mut node| {
                if matches!(node.op, Op::LoopVar) {
                    node.op = Op::Constant(TensorValue::scalar_i64(k as i64));
                }
                node
            }).collect();
            let body = Graph::from_nodes_unchecked(nodes, c.block.body.variables().clone(), c.block.body.outputs().to_vec());
            let r = execute_fragment(&body, &c.captures, &mut c.variable_store(), &mut RngState::new(1), ExecOptions::default()).unwrap();
            for (p, v) in r.outputs.into_iter().enumerate() {
                per[p].push(v);
            }
        }
        if n > 0 {
            for (w, vs) in want.iter().zip(&per) {
                let refs: Vec<&TensorValue> = vs.iter().collect();
                prop_assert!(w.all_close(&stack(&refs, 0).unwrap(), 1e-9));
            }
        }
    }

    #[test]
    fn vectorized_matches_interpreter(seed in any::<u64>()) {
        let o = check_case(&case(seed, &deep()), &[0, 1, 3, 7], &Registry::standard(), ExecOptions { budget: Some(1_000_000) });
        prop_assert_eq!(o, Outcome::Pass);
    }

    #[test]
    fn fast_paths_equal_generic_paths(seed in any::<u64>(), n in 0usize..=7) {
        let c = case(seed, &deep());
        let run = |materialize_inputs| {
            let v = vectorize(&c.block, IterCount::Static(n), Policy { materialize_inputs, ..Policy::default() }).unwrap();
            let mut st = c.variable_store();
            let mut params = vec![TensorValue::scalar_i64(n as i64)];
            params.extend(c.captures.iter().cloned());
            let out = execute_fragment(&v.graph, &params, &mut st, &mut RngState::new(1), ExecOptions::default()).unwrap().outputs;
            (out, st.values().clone())
        };
        let (fast, fs) = run(false);
        let (generic, gs) = run(true);
        for (a, b) in fast.iter().zip(&generic) {
            prop_assert!(a.all_close(b, 1e-9));
        }
        for (k, v) in &fs {
            prop_assert!(v.all_close(&gs[k], 1e-9));
        }
    }

    #[test]
    fn unstacked_values_are_iteration_independent(seed in any::<u64>()) {
        let c = case(seed, &deep());
        let v = vectorize(&c.block, IterCount::Dynamic, Policy::default()).unwrap();
        let body = &c.block.body;
        let invariant: Vec<ValueRef> = ports(body)
            .into_iter()
            .filter(|r| v.diagnostics.0.iter().any(|d| d.route == Route::Invariant && d.node == r.node.to_string()))
            .filter(|r| body.value_type(*r).shape.is_some())
            .collect();
        let out = oracle(&c, &exporting(&c.block, &invariant), 5);
        for v in &out[body.outputs().len()..] {
            let rs = rows(v);
            for r in &rs[1..] {
                prop_assert_eq!(r, &rs[0]);
            }
        }
    }

    #[test]
    fn dispatch_count_is_flat_without_control_flow(seed in any::<u64>()) {
        let cfg = GenConfig { weights: Weights { control: 0, ..Weights::default() }, ..deep() };
        let c = case(seed, &cfg);
        let count = |n: usize, policy: Policy| {
            let v = vectorize(&c.block, IterCount::Dynamic, policy).unwrap();
            let mut params = vec![TensorValue::scalar_i64(n as i64)];
            params.extend(c.captures.iter().cloned());
            let r = execute_fragment(&v.graph, &params, &mut c.variable_store(), &mut RngState::new(1), ExecOptions::default()).unwrap();
            (r.dispatch_count, v.diagnostics.count(Route::Fallback))
        };
        let (d1, fb) = count(1, Policy::default());
        prop_assume!(fb == 0);
        prop_assert_eq!(count(3, Policy::default()).0, d1);
        prop_assert_eq!(count(7, Policy::default()).0, d1);
        let forced = Policy { force_fallback: true, ..Policy::default() };
        let (f1, _) = count(1, forced);
        let (f7, _) = count(7, forced);
        prop_assert!(f7 > f1 || c.block.body.len() <= c.block.body.param_count() + 1);
    }

    #[test]
    fn partition_splits_the_active_set(flags in prop::collection::vec(any::<bool>(), 0..32)) {
        let s = ActiveSet::full(flags.len());
        let (t, f) = s.partition(&flags);
        let mut all: Vec<usize> = t.indices().iter().chain(f.indices()).copied().collect();
        prop_assert!(t.indices().iter().all(|i| !f.indices().contains(i)));
        all.sort();
        prop_assert_eq!(all, s.indices().to_vec());
    }

    #[test]
    fn commutative_updates_ignore_iteration_order(perm in Just((0..8usize).collect::<Vec<_>>()).prop_shuffle()) {
        let xs = TensorValue::f64(&[8, 3], (0..24).map(|v| (v as f64 * 0.61).sin()).collect());
        let mut g = Graph::new();
        g.declare_variable("acc", TensorValue::zeros(pforvec::tensor::DType::F64, [3]));
        let x = g.constant(xs.clone()).unwrap();
        let n = g.scalar_i64(8).unwrap();
        g.parfor(n, &[x], |b, i, p| {
            let r = b.gather_rows(p[0], i)?;
            let t = b.unary(pforvec::tensor::UnaryOp::Tanh, r)?;
            b.assign_add("acc", t)?;
            Ok(vec![t])
        }).unwrap();
        let Op::Parfor(block) = &g.nodes().last().unwrap().op else { unreachable!() };
        let run = |x: &TensorValue| {
            let mut st = VariableStore::from_initial(g.variables());
            execute_parfor_simd_with(block, 8, &[x.clone()], &mut st, &mut RngState::new(0), ExecOptions::default()).unwrap();
            st.get("acc").unwrap().clone()
        };
        let idx = TensorValue::vec_i64(perm.iter().map(|&k| k as i64).collect());
        let shuffled = gather_rows(&xs, &idx).unwrap();
        prop_assert!(run(&xs).all_close(&run(&shuffled), 1e-12));
    }
}
