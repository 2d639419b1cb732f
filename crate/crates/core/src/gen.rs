//! Random parfor bodies for differential testing against the interpreter.
//!
//! Every case captures the same tables: `X: f64[8,3]`, `W: f64[3,3]`,
//! `v: f64[3]`, `c: f64[]` and `K: i64[8]` (entries in `0..5`). Bodies are
//! valid for any iteration count up to [`ROWS`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{fragment_with_params, CondBlock, Graph, GraphError, Op, ParforBlock, ValueRef, ValueType, WhileBlock};
use crate::interp::{execute_fragment, execute_parfor_simd_with, ExecError, ExecOptions, RngState, VariableStore};
use crate::tensor::{BinaryOp, DType, Shape, TensorValue, UnaryOp};
use crate::vectorize::{vectorize_with, IterCount, Policy, Registry};

type Result<T> = std::result::Result<T, GraphError>;

/// Largest iteration count a generated body supports.
pub const ROWS: usize = 8;
const WIDTH: usize = 3;
const KEY_BOUND: i64 = 5;
/// Fresh targets for `assign`; each is written at most once per case.
const ASSIGN_SLOTS: usize = 6;

/// Relative odds of each op category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Weights {
    pub elementwise: u32,
    pub structural: u32,
    pub control: u32,
    pub stateful: u32,
}

impl Default for Weights {
    fn default() -> Self {
        Weights { elementwise: 60, structural: 15, control: 15, stateful: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenConfig {
    /// Deepest nesting of control-flow blocks.
    pub max_depth: usize,
    pub weights: Weights,
    /// Ops per top-level body; nested bodies get fewer.
    pub max_ops: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { max_depth: 3, weights: Weights::default(), max_ops: 8 }
    }
}

#[derive(Debug, Clone)]
pub struct Case {
    /// The parfor in context: captures as constants, iteration count as
    /// the placeholder `n`.
    pub graph: Graph,
    pub block: ParforBlock,
    pub captures: Vec<TensorValue>,
    pub variables: Vec<(String, TensorValue)>,
}

#[derive(Debug, Clone, Copy)]
struct Val {
    r: ValueRef,
    /// Bound on the absolute value of every element.
    bound: f64,
    stacked: bool,
}

#[derive(Debug, Clone, Copy)]
struct Int {
    r: ValueRef,
    /// Elements lie in `0..hi`.
    hi: i64,
    stacked: bool,
}

#[derive(Debug, Clone)]
struct Scope {
    table: ValueRef,
    keys: ValueRef,
    vals: Vec<Val>,
    ints: Vec<Int>,
    stateful: bool,
}

struct Gen {
    rng: ChaCha8Rng,
    cfg: GenConfig,
    slots: usize,
}

fn add1(g: &mut Graph, op: Op, inputs: Vec<ValueRef>) -> Result<ValueRef> {
    let id = g.add_node(op, inputs, [])?;
    Ok(ValueRef::new(id, 0))
}

fn dims(g: &Graph, r: ValueRef) -> Vec<usize> {
    g.shape_of(r).map(|s| s.dims().to_vec()).unwrap_or_default()
}

fn seeded(rng: &mut ChaCha8Rng, d: &[usize], scale: f64) -> TensorValue {
    let k: usize = d.iter().product();
    TensorValue::f64(d, (0..k).map(|_| (rng.gen_range(-scale..scale) * 1e3).round() / 1e3).collect())
}

/// Case `index` of the corpus for `seed`.
pub fn generate(seed: u64, index: u64, cfg: &GenConfig) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index);
    let captures = vec![
        seeded(&mut rng, &[ROWS, WIDTH], 1.5),
        seeded(&mut rng, &[WIDTH, WIDTH], 1.0),
        seeded(&mut rng, &[WIDTH], 1.0),
        seeded(&mut rng, &[], 1.0),
        TensorValue::vec_i64((0..ROWS).map(|_| rng.gen_range(0..KEY_BOUND)).collect()),
    ];
    let mut variables = vec![
        ("acc".to_string(), TensorValue::zeros(DType::F64, [WIDTH])),
        ("w".to_string(), seeded(&mut rng, &[WIDTH], 1.0)),
    ];
    for k in 0..ASSIGN_SLOTS {
        variables.push((format!("s{k}"), TensorValue::zeros(DType::F64, [WIDTH])));
    }
    let mut g = Graph::new();
    for (name, v) in &variables {
        g.declare_variable(name.clone(), v.clone());
    }
    let caps: Vec<ValueRef> = captures.iter().map(|c| g.constant(c.clone())).collect::<Result<_>>()?;
    let n = g.placeholder("n", DType::I64, Shape::scalar())?;
    let mut gen = Gen { rng, cfg: *cfg, slots: 0 };
    let types: Vec<ValueType> = caps.iter().map(|&c| g.value_type(c).clone()).collect();
    let body = fragment_with_params(&g, &types, |b, p| {
        let i = b.loop_var()?;
        let row = b.gather_rows(p[0], i)?;
        let scope = Scope {
            table: p[0],
            keys: p[4],
            vals: vec![
                Val { r: p[1], bound: 1.0, stacked: false },
                Val { r: p[2], bound: 1.0, stacked: false },
                Val { r: p[3], bound: 1.0, stacked: false },
                Val { r: row, bound: 1.5, stacked: true },
            ],
            ints: vec![Int { r: i, hi: ROWS as i64, stacked: true }],
            stateful: true,
        };
        let ops = gen.rng.gen_range(2..=gen.cfg.max_ops.max(2));
        let scope = gen.body(b, scope, 0, ops)?;
        gen.outputs(&scope)
    })?;
    let block = ParforBlock { body };
    let mut inputs = vec![n];
    inputs.extend(caps);
    g.add_node(Op::Parfor(Box::new(block.clone())), inputs, [])?;
    Ok(Case { graph: g, block, captures, variables })
}

impl Gen {
    fn pick<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        &xs[self.rng.gen_range(0..xs.len())]
    }

    /// Recent values are more likely.
    fn pick_val(&mut self, s: &Scope) -> Val {
        let n = s.vals.len();
        if self.rng.gen_bool(0.5) {
            s.vals[n - 1]
        } else {
            s.vals[self.rng.gen_range(0..n)]
        }
    }

    fn pick_shaped(&mut self, g: &Graph, s: &Scope, want: &[usize]) -> Option<Val> {
        let hits: Vec<Val> = s.vals.iter().copied().filter(|v| dims(g, v.r) == want).collect();
        (!hits.is_empty()).then(|| *self.pick(&hits))
    }

    fn push(&self, g: &mut Graph, s: &mut Scope, r: ValueRef, bound: f64, stacked: bool) -> Result<()> {
        let (r, bound) = if bound > 50.0 || !bound.is_finite() { (g.unary(UnaryOp::Tanh, r)?, 1.0) } else { (r, bound) };
        s.vals.push(Val { r, bound, stacked });
        Ok(())
    }

    fn body(&mut self, g: &mut Graph, mut s: Scope, level: usize, ops: usize) -> Result<Scope> {
        let w = self.cfg.weights;
        // control flow thins out with depth
        let control = if level >= self.cfg.max_depth { 0 } else { w.control / (level as u32 + 1) };
        let stateful = if s.stateful { w.stateful } else { 0 };
        let total = w.elementwise + w.structural + control + stateful;
        for _ in 0..ops {
            let mut roll = if total == 0 { 0 } else { self.rng.gen_range(0..total) };
            if roll < w.elementwise || total == 0 {
                self.elementwise(g, &mut s)?;
                continue;
            }
            roll -= w.elementwise;
            if roll < w.structural {
                self.structural(g, &mut s)?;
                continue;
            }
            roll -= w.structural;
            if roll < control {
                self.control(g, &mut s, level)?;
            } else {
                self.stateful(g, &mut s)?;
            }
        }
        Ok(s)
    }

    fn outputs(&mut self, s: &Scope) -> Result<Vec<ValueRef>> {
        let mut outs = vec![s.vals[s.vals.len() - 1].r];
        for _ in 0..self.rng.gen_range(0..2) {
            let v = self.pick_val(s);
            if !outs.contains(&v.r) {
                outs.push(v.r);
            }
        }
        if self.rng.gen_bool(0.3) {
            outs.push(self.pick(&s.ints).r);
        }
        Ok(outs)
    }

    fn elementwise(&mut self, g: &mut Graph, s: &mut Scope) -> Result<()> {
        let a = self.pick_val(s);
        match self.rng.gen_range(0..10) {
            0..=4 => {
                let op = *self.pick(&[UnaryOp::Neg, UnaryOp::Tanh, UnaryOp::Sigmoid, UnaryOp::Relu, UnaryOp::Square, UnaryOp::Exp]);
                let bound = match op {
                    UnaryOp::Tanh | UnaryOp::Sigmoid => 1.0,
                    UnaryOp::Square => a.bound * a.bound,
                    UnaryOp::Exp => a.bound.exp(),
                    _ => a.bound,
                };
                let r = g.unary(op, a.r)?;
                self.push(g, s, r, bound, a.stacked)
            }
            5..=8 => {
                let b = self.pick_val(s);
                let op = *self.pick(&[BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Max, BinaryOp::Min]);
                let bound = match op {
                    BinaryOp::Add | BinaryOp::Sub => a.bound + b.bound,
                    BinaryOp::Mul => a.bound * b.bound,
                    _ => a.bound.max(b.bound),
                };
                let r = g.binary(op, a.r, b.r)?;
                self.push(g, s, r, bound, a.stacked || b.stacked)
            }
            _ => {
                let b = self.pick_val(s);
                let p = g.less(a.r, b.r)?;
                let r = g.select(p, a.r, b.r)?;
                self.push(g, s, r, a.bound.max(b.bound), a.stacked || b.stacked)
            }
        }
    }

    fn int_below(&mut self, g: &mut Graph, s: &mut Scope, hi: i64) -> Result<Int> {
        let fits: Vec<Int> = s.ints.iter().copied().filter(|k| k.hi <= hi).collect();
        if !fits.is_empty() && self.rng.gen_bool(0.7) {
            return Ok(*self.pick(&fits));
        }
        // k mod hi through integer division
        let k = *self.pick(&s.ints);
        let m = g.scalar_i64(hi)?;
        let q = g.div(k.r, m)?;
        let qm = g.mul(q, m)?;
        let r = g.sub(k.r, qm)?;
        let out = Int { r, hi, stacked: k.stacked };
        s.ints.push(out);
        Ok(out)
    }

    fn structural(&mut self, g: &mut Graph, s: &mut Scope) -> Result<()> {
        let w = WIDTH;
        match self.rng.gen_range(0..9) {
            0 => {
                let (Some(v), Some(m)) = (self.pick_shaped(g, s, &[w]), self.pick_shaped(g, s, &[w, w])) else {
                    return self.elementwise(g, s);
                };
                let row = g.reshape(v.r, [1, w])?;
                let (a, b) = if self.rng.gen_bool(0.5) { (row, m.r) } else { (m.r, g.reshape(v.r, [w, 1])?) };
                let p = g.matmul(a, b)?;
                let r = g.reshape(p, [w])?;
                self.push(g, s, r, w as f64 * v.bound * m.bound, v.stacked || m.stacked)
            }
            1 => {
                let Some(a) = self.pick_shaped(g, s, &[w, w]) else { return self.elementwise(g, s) };
                let b = self.pick_shaped(g, s, &[w, w]).expect("a exists");
                let r = g.matmul(a.r, b.r)?;
                self.push(g, s, r, w as f64 * a.bound * b.bound, a.stacked || b.stacked)
            }
            2 => {
                let a = self.pick_val(s);
                let rank = dims(g, a.r).len();
                if rank == 0 {
                    return self.elementwise(g, s);
                }
                let axes: Vec<i64> = match (rank, self.rng.gen_range(0..4)) {
                    (1, 0) => vec![-1],
                    (1, _) => vec![0],
                    (_, 0) => vec![0],
                    (_, 1) => vec![1],
                    (_, 2) => vec![-1, 0],
                    _ => vec![-2],
                };
                let r = g.reduce_sum(a.r, &axes)?;
                self.push(g, s, r, a.bound * (w * w) as f64, a.stacked)
            }
            3 => {
                let a = self.pick_val(s);
                let d = dims(g, a.r);
                if d.is_empty() {
                    return self.elementwise(g, s);
                }
                let b = self.pick_shaped(g, s, &d).expect("a exists");
                let axis = self.rng.gen_range(0..d.len());
                let cat = g.concat(&[a.r, b.r], if self.rng.gen_bool(0.5) { axis as i64 } else { axis as i64 - d.len() as i64 })?;
                let start = self.rng.gen_range(0..=d[axis]);
                let r = g.slice(cat, axis, start, d[axis])?;
                self.push(g, s, r, a.bound.max(b.bound), a.stacked || b.stacked)
            }
            4 => {
                let a = self.pick_val(s);
                let d = dims(g, a.r);
                let r = match d.len() {
                    2 => g.transpose(a.r, &[1, 0])?,
                    1 => {
                        let b = self.pick_shaped(g, s, &d).expect("a exists");
                        let st = g.stack(&[a.r, b.r], self.rng.gen_range(0..2))?;
                        let r = g.reshape(st, [2 * w])?;
                        let r = g.slice(r, 0, self.rng.gen_range(0..=w), w)?;
                        return self.push(g, s, r, a.bound.max(b.bound), a.stacked || b.stacked);
                    }
                    _ => add1(g, Op::BroadcastTo { shape: Shape::new([w]) }, vec![a.r])?,
                };
                self.push(g, s, r, a.bound, a.stacked)
            }
            5 => {
                let k = self.int_below(g, s, ROWS as i64)?;
                let r = g.gather_rows(s.table, k.r)?;
                self.push(g, s, r, 1.5, k.stacked)
            }
            6 => {
                let k = self.int_below(g, s, ROWS as i64)?;
                let r = g.gather_rows(s.keys, k.r)?;
                s.ints.push(Int { r, hi: KEY_BOUND, stacked: k.stacked });
                Ok(())
            }
            7 => {
                let Some(a) = self.pick_shaped(g, s, &[w, w]) else { return self.elementwise(g, s) };
                let k = self.int_below(g, s, w as i64)?;
                let r = g.gather_rows(a.r, k.r)?;
                self.push(g, s, r, a.bound, a.stacked || k.stacked)
            }
            _ => {
                let (Some(x), Some(f)) = (self.pick_shaped(g, s, &[w, w]), self.pick_shaped(g, s, &[w, w])) else {
                    return self.elementwise(g, s);
                };
                let xi = g.reshape(x.r, [1, w, w, 1])?;
                let fi = g.reshape(f.r, [w, w, 1, 1])?;
                let c = g.conv2d(xi, fi)?;
                let r = g.reshape(c, [w, w])?;
                self.push(g, s, r, (w * w) as f64 * x.bound * f.bound, x.stacked || f.stacked)
            }
        }
    }

    /// Captures for a nested block: the two tables, then some values and
    /// some ints.
    fn captures(&mut self, s: &Scope) -> (Vec<Val>, Vec<Int>) {
        let mut vals = vec![];
        for _ in 0..self.rng.gen_range(1..=3) {
            let v = self.pick_val(s);
            if !vals.iter().any(|u: &Val| u.r == v.r) {
                vals.push(v);
            }
        }
        let mut ints = vec![];
        for _ in 0..self.rng.gen_range(1..=2) {
            let k = *self.pick(&s.ints);
            if !ints.iter().any(|u: &Int| u.r == k.r) {
                ints.push(k);
            }
        }
        (vals, ints)
    }

    fn inner_scope(&self, params: &[ValueRef], vals: &[Val], ints: &[Int], stateful: bool, lift: bool) -> Scope {
        Scope {
            table: params[0],
            keys: params[1],
            vals: vals.iter().zip(&params[2..]).map(|(v, &r)| Val { r, stacked: v.stacked || lift, ..*v }).collect(),
            ints: ints.iter().zip(&params[2 + vals.len()..]).map(|(k, &r)| Int { r, stacked: k.stacked || lift, ..*k }).collect(),
            stateful,
        }
    }

    fn inputs(s: &Scope, vals: &[Val], ints: &[Int]) -> Vec<ValueRef> {
        let mut xs = vec![s.table, s.keys];
        xs.extend(vals.iter().map(|v| v.r));
        xs.extend(ints.iter().map(|k| k.r));
        xs
    }

    fn sub_ops(&mut self, level: usize) -> usize {
        let hi = self.cfg.max_ops.saturating_sub(2 * (level + 1)).max(1);
        self.rng.gen_range(1..=hi)
    }

    fn control(&mut self, g: &mut Graph, s: &mut Scope, level: usize) -> Result<()> {
        match self.rng.gen_range(0..10) {
            0..=4 => self.cond(g, s, level),
            5..=8 => self.while_loop(g, s, level),
            _ => self.parfor(g, s, level),
        }
    }

    fn cond(&mut self, g: &mut Graph, s: &mut Scope, level: usize) -> Result<()> {
        let (pred, pred_stacked) = if self.rng.gen_bool(0.5) {
            let k = *self.pick(&s.ints);
            let c = g.scalar_i64(self.rng.gen_range(0..=k.hi))?;
            (g.less(k.r, c)?, k.stacked)
        } else {
            let a = self.pick_val(s);
            let axes: Vec<i64> = (0..dims(g, a.r).len() as i64).collect();
            let t = g.reduce_sum(a.r, &axes)?;
            let c = g.scalar_f64(self.rng.gen_range(-1.0..1.0))?;
            (g.less(t, c)?, a.stacked)
        };
        let (vals, ints) = self.captures(s);
        let inputs = Self::inputs(s, &vals, &ints);
        let types: Vec<ValueType> = inputs.iter().map(|&r| g.value_type(r).clone()).collect();
        let want = dims(g, vals[0].r);
        let mut bound: f64 = 0.0;
        let mut stacked = pred_stacked;
        let mut branches = vec![];
        for _ in 0..2 {
            let ops = self.sub_ops(level);
            let mut out = None;
            let frag = fragment_with_params(g, &types, |b, p| {
                let inner = self.inner_scope(p, &vals, &ints, s.stateful, false);
                let inner = self.body(b, inner, level + 1, ops)?;
                let v = self.pick_shaped(b, &inner, &want).expect("capture has the shape");
                out = Some(v);
                Ok(vec![v.r])
            })?;
            let v = out.expect("branch built");
            bound = bound.max(v.bound);
            stacked |= v.stacked;
            branches.push(frag);
        }
        let else_branch = branches.pop().expect("two branches");
        let then_branch = branches.pop().expect("two branches");
        let mut node_inputs = vec![pred];
        node_inputs.extend(inputs);
        let r = add1(g, Op::Cond(Box::new(CondBlock { then_branch, else_branch })), node_inputs)?;
        self.push(g, s, r, bound, stacked)
    }

    fn while_loop(&mut self, g: &mut Graph, s: &mut Scope, level: usize) -> Result<()> {
        // trip count below KEY_BOUND, possibly iteration-dependent
        let limit = if self.rng.gen_bool(0.6) {
            let fits: Vec<Int> = s.ints.iter().copied().filter(|k| k.hi <= KEY_BOUND).collect();
            if fits.is_empty() {
                self.int_below(g, s, KEY_BOUND)?
            } else {
                *self.pick(&fits)
            }
        } else {
            let c = self.rng.gen_range(0..KEY_BOUND);
            Int { r: g.scalar_i64(c)?, hi: c + 1, stacked: false }
        };
        let acc = self.pick_val(s);
        let t0 = g.scalar_i64(0)?;
        let (vals, ints) = self.captures(s);
        let mut caps = Self::inputs(s, &vals, &ints);
        caps.push(limit.r);
        let mut inputs = vec![t0, acc.r];
        inputs.extend(&caps);
        let types: Vec<ValueType> = inputs.iter().map(|&r| g.value_type(r).clone()).collect();
        let cond = fragment_with_params(g, &types, |b, p| Ok(vec![b.less(p[0], *p.last().expect("limit"))?]))?;
        let want = dims(g, acc.r);
        let ops = self.sub_ops(level);
        let body = fragment_with_params(g, &types, |b, p| {
            let one = b.scalar_i64(1)?;
            let t = b.add(p[0], one)?;
            // everything inside may differ per iteration once trip counts do
            let mut inner = self.inner_scope(&p[2..], &vals, &ints, false, true);
            inner.vals.push(Val { r: p[1], bound: acc.bound.max(1.0), stacked: true });
            inner.ints.push(Int { r: p[0], hi: limit.hi, stacked: true });
            let inner = self.body(b, inner, level + 1, ops)?;
            let v = self.pick_shaped(b, &inner, &want).expect("carried value has the shape");
            let next = b.unary(UnaryOp::Tanh, v.r)?;
            Ok(vec![t, next])
        })?;
        let id = g.add_node(Op::While(Box::new(WhileBlock { carried: 2, cond, body })), inputs, [])?;
        let stacked = acc.stacked || limit.stacked || vals.iter().any(|v| v.stacked) || ints.iter().any(|k| k.stacked);
        self.push(g, s, ValueRef::new(id, 1), acc.bound.max(1.0), stacked)?;
        s.ints.push(Int { r: ValueRef::new(id, 0), hi: limit.hi.max(1), stacked: limit.stacked });
        Ok(())
    }

    fn parfor(&mut self, g: &mut Graph, s: &mut Scope, level: usize) -> Result<()> {
        let m = self.rng.gen_range(1..=WIDTH);
        let (vals, ints) = self.captures(s);
        let caps = Self::inputs(s, &vals, &ints);
        let types: Vec<ValueType> = caps.iter().map(|&r| g.value_type(r).clone()).collect();
        let want = dims(g, vals[0].r);
        let ops = self.sub_ops(level);
        let mut out = None;
        let body = fragment_with_params(g, &types, |b, p| {
            let j = b.loop_var()?;
            let mut inner = self.inner_scope(p, &vals, &ints, false, false);
            inner.ints.push(Int { r: j, hi: m as i64, stacked: true });
            let row = b.gather_rows(inner.table, j)?;
            inner.vals.push(Val { r: row, bound: 1.5, stacked: true });
            let inner = self.body(b, inner, level + 1, ops)?;
            let v = self.pick_shaped(b, &inner, &want).expect("capture has the shape");
            out = Some(v);
            Ok(vec![v.r])
        })?;
        let v = out.expect("body built");
        let iters = g.scalar_i64(m as i64)?;
        let mut inputs = vec![iters];
        inputs.extend(caps);
        let r = add1(g, Op::Parfor(Box::new(ParforBlock { body })), inputs)?;
        let r = g.reduce_sum(r, &[0])?;
        let stacked = vals.iter().any(|v| v.stacked) || ints.iter().any(|k| k.stacked);
        self.push(g, s, r, v.bound * m as f64, stacked)
    }

    fn stateful(&mut self, g: &mut Graph, s: &mut Scope) -> Result<()> {
        let w = WIDTH;
        match self.rng.gen_range(0..3) {
            0 => {
                let r = g.read_variable("w")?;
                self.push(g, s, r, 1.0, false)
            }
            1 => {
                let v = match self.pick_shaped(g, s, &[w]) {
                    Some(v) => v,
                    None => return self.elementwise(g, s),
                };
                g.assign_add("acc", v.r)?;
                Ok(())
            }
            _ => {
                let fixed: Vec<Val> = s.vals.iter().copied().filter(|v| !v.stacked && dims(g, v.r) == [w]).collect();
                if fixed.is_empty() || self.slots >= ASSIGN_SLOTS {
                    return self.elementwise(g, s);
                }
                let v = *self.pick(&fixed);
                g.assign(&format!("s{}", self.slots), v.r)?;
                self.slots += 1;
                Ok(())
            }
        }
    }
}

/// Result of running one case against the interpreter.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Pass,
    /// The vectorized graph disagrees with the interpreter, or could not be built.
    Mismatch(String),
    /// The interpreter itself failed on the body.
    Error(String),
}

/// Vectorize `case` (static and dynamic counts) and compare outputs and
/// final variables with the lock-step interpreter for each `n`.
pub fn check_case(case: &Case, ns: &[usize], registry: &Registry, opts: ExecOptions) -> Outcome {
    for &n in ns {
        let mut want_store = case.variable_store();
        let want = match execute_parfor_simd_with(&case.block, n, &case.captures, &mut want_store, &mut RngState::new(1), opts) {
            Ok(r) => r.outputs,
            Err(e) => return Outcome::Error(format!("n={n}: interpreter: {e}")),
        };
        for iters in [IterCount::Static(n), IterCount::Dynamic] {
            let v = match vectorize_with(registry, &case.block, iters, Policy::default()) {
                Ok(v) => v,
                Err(e) => return Outcome::Mismatch(format!("{iters:?}: vectorize: {e}")),
            };
            let mut store = case.variable_store();
            let mut params = vec![TensorValue::scalar_i64(n as i64)];
            params.extend(case.captures.iter().cloned());
            let got = match execute_fragment(&v.graph, &params, &mut store, &mut RngState::new(1), opts) {
                Ok(r) => r.outputs,
                Err(e @ ExecError::BudgetExceeded(_)) => return Outcome::Error(format!("n={n} {iters:?}: vectorized run: {e}")),
                Err(e) => return Outcome::Mismatch(format!("n={n} {iters:?}: vectorized run: {e}")),
            };
            if got.len() != want.len() {
                return Outcome::Mismatch(format!("n={n} {iters:?}: {} outputs, expected {}", got.len(), want.len()));
            }
            for (k, (a, b)) in got.iter().zip(&want).enumerate() {
                if !a.all_close(b, 1e-9) {
                    return Outcome::Mismatch(format!("n={n} {iters:?}: output {k}: got {a}, expected {b}"));
                }
            }
            for (name, b) in want_store.values() {
                match store.get(name) {
                    Some(a) if a.all_close(b, 1e-9) => {}
                    a => return Outcome::Mismatch(format!("n={n} {iters:?}: variable {name}: got {a:?}, expected {b}")),
                }
            }
        }
    }
    Outcome::Pass
}

impl Case {
    pub fn variable_store(&self) -> VariableStore {
        let mut s = VariableStore::new();
        for (name, v) in &self.variables {
            s.insert(name.clone(), v.clone());
        }
        s
    }
}
