//! Line-oriented text form of a graph.
//!
//! ```text
//! graph v1
//! var w = f64[2]{0.5,1.0}
//! 0 = placeholder(name="x", ty=f64[4,2])
//! 1 = constant(value=i64[]{4})
//! 2 = parfor(inputs=[1:0, 0:0]) {
//!   body {
//!     0 = param(index=0, ty=f64[4,2])
//!     1 = loop_var()
//!     2 = gather_rows(inputs=[0:0, 1:0])
//!     outputs [2:0]
//!   }
//! }
//! outputs [2:0]
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{CondBlock, Graph, GraphError, NodeId, Op, OpKind, ParforBlock, ValueRef, ValueType, WhileBlock};
use crate::tensor::{BinaryOp, Buffer, DType, Shape, TensorValue, UnaryOp};

const HEADER: &str = "graph v1";

pub fn serialize(g: &Graph) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for (name, v) in g.variables() {
        let _ = writeln!(out, "var {} = {v}", quote(name));
    }
    write_body(&mut out, g, 0);
    out
}

fn quote(s: &str) -> String {
    let mut q = String::with_capacity(s.len() + 2);
    q.push('"');
    for ch in s.chars() {
        match ch {
            '"' => q.push_str("\\\""),
            '\\' => q.push_str("\\\\"),
            '\n' => q.push_str("\\n"),
            c => q.push(c),
        }
    }
    q.push('"');
    q
}

fn refs(rs: &[ValueRef]) -> String {
    let items: Vec<String> = rs.iter().map(|r| r.to_string()).collect();
    format!("[{}]", items.join(", "))
}

fn ints<T: ToString>(xs: &[T]) -> String {
    let items: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(","))
}

fn attrs(op: &Op) -> Vec<(&'static str, String)> {
    match op {
        Op::Constant(t) => vec![("value", t.to_string())],
        Op::Placeholder { name, ty } => vec![("name", quote(name)), ("ty", ty.to_string())],
        Op::Param { index, ty } => vec![("index", index.to_string()), ("ty", ty.to_string())],
        Op::Conv2dBackpropFilter { kernel } => vec![("kernel", ints(kernel))],
        Op::ReduceSum { axes } => vec![("axes", ints(axes))],
        Op::SumToShape { shape } | Op::BroadcastTo { shape } | Op::Reshape { shape } | Op::RandomUniform { shape } => {
            vec![("shape", shape.to_string())]
        }
        Op::Concat { axis } => vec![("axis", axis.to_string())],
        Op::Stack { axis } => vec![("axis", axis.to_string())],
        Op::Transpose { perm } => vec![("perm", ints(perm))],
        Op::Slice { axis, start, len } => {
            vec![("axis", axis.to_string()), ("start", start.to_string()), ("len", len.to_string())]
        }
        Op::ScatterRows { parts } => vec![("parts", parts.to_string())],
        Op::TileLeading { tail } | Op::ReshapeLeading { tail } => vec![("tail", tail.to_string())],
        Op::Zeros { dtype, tail } => vec![("dtype", dtype.to_string()), ("tail", tail.to_string())],
        Op::ReadVariable { name } | Op::Assign { name } | Op::AssignAdd { name } => vec![("name", quote(name))],
        Op::While(w) => vec![("carried", w.carried.to_string())],
        _ => Vec::new(),
    }
}

fn write_body(out: &mut String, g: &Graph, depth: usize) {
    let pad = "  ".repeat(depth);
    for node in g.nodes() {
        let mut parts: Vec<String> = attrs(&node.op).into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        if !node.inputs.is_empty() {
            parts.push(format!("inputs={}", refs(&node.inputs)));
        }
        let _ = write!(out, "{pad}{} = {}({})", node.id, node.op.kind(), parts.join(", "));
        if !node.control_deps.is_empty() {
            let deps: Vec<usize> = node.control_deps.iter().map(|d| d.0).collect();
            let _ = write!(out, " ctrl={}", ints(&deps));
        }
        let subs = node.op.subgraphs();
        if subs.is_empty() {
            out.push('\n');
            continue;
        }
        out.push_str(" {\n");
        for (role, sub) in subs {
            let _ = writeln!(out, "{pad}  {role} {{");
            write_body(out, sub, depth + 2);
            let _ = writeln!(out, "{pad}  }}");
        }
        let _ = writeln!(out, "{pad}}}");
    }
    if !g.outputs().is_empty() {
        let _ = writeln!(out, "{pad}outputs {}", refs(g.outputs()));
    }
}

// ── parsing ────────────────────────────────────────────────────────

fn perr(line: usize, col: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Parse { line, col, msg: msg.into() }
}

/// Character cursor over one line; columns are 1-based.
struct Cur<'a> {
    s: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cur<'a> {
    fn new(s: &'a str, line: usize) -> Self {
        Cur { s, pos: 0, line }
    }

    fn col(&self) -> usize {
        self.s[..self.pos].chars().count() + 1
    }

    fn err(&self, msg: impl Into<String>) -> GraphError {
        perr(self.line, self.col(), msg)
    }

    fn rest(&self) -> &'a str {
        &self.s[self.pos..]
    }

    fn ws(&mut self) {
        let r = self.rest();
        self.pos += r.len() - r.trim_start().len();
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.ws();
        if self.rest().starts_with(tok) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) -> Result<(), GraphError> {
        if self.eat(tok) {
            Ok(())
        } else {
            let found = self.rest().chars().next().map(|c| format!("{c:?}")).unwrap_or("end of line".into());
            Err(self.err(format!("expected {tok:?}, found {found}")))
        }
    }

    fn end(&mut self) -> Result<(), GraphError> {
        self.ws();
        if self.rest().is_empty() {
            Ok(())
        } else {
            Err(self.err(format!("unexpected trailing text {:?}", self.rest())))
        }
    }

    /// Identifier-ish run: letters, digits, `_`, `-`, `+`, `.`.
    fn word(&mut self) -> &'a str {
        self.ws();
        let r = self.rest();
        let n = r
            .char_indices()
            .find(|(_, c)| !(c.is_alphanumeric() || matches!(c, '_' | '-' | '+' | '.')))
            .map(|(i, _)| i)
            .unwrap_or(r.len());
        self.pos += n;
        &r[..n]
    }

    fn int<T: std::str::FromStr>(&mut self) -> Result<T, GraphError> {
        self.ws();
        let col = self.col();
        let w = self.word();
        w.parse().map_err(|_| perr(self.line, col, format!("expected an integer, found {w:?}")))
    }

    fn list<T>(&mut self, mut item: impl FnMut(&mut Self) -> Result<T, GraphError>) -> Result<Vec<T>, GraphError> {
        self.expect("[")?;
        let mut xs = Vec::new();
        if self.eat("]") {
            return Ok(xs);
        }
        loop {
            xs.push(item(self)?);
            if self.eat("]") {
                return Ok(xs);
            }
            self.expect(",")?;
        }
    }

    fn value_ref(&mut self) -> Result<ValueRef, GraphError> {
        let node = self.int::<usize>()?;
        self.expect(":")?;
        let port = self.int::<usize>()?;
        Ok(ValueRef::new(NodeId(node), port))
    }

    fn string(&mut self) -> Result<String, GraphError> {
        self.expect("\"")?;
        let mut s = String::new();
        let mut chars = self.rest().char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.pos += i + 1;
                    return Ok(s);
                }
                '\\' => match chars.next() {
                    Some((_, 'n')) => s.push('\n'),
                    Some((_, e @ ('"' | '\\'))) => s.push(e),
                    _ => return Err(self.err("bad escape in string")),
                },
                c => s.push(c),
            }
        }
        Err(self.err("unterminated string"))
    }

    fn dtype(&mut self) -> Result<DType, GraphError> {
        self.ws();
        let col = self.col();
        let w = self.word();
        DType::from_name(w).ok_or_else(|| perr(self.line, col, format!("unknown dtype {w:?}")))
    }

    fn shape(&mut self) -> Result<Shape, GraphError> {
        Ok(Shape::new(self.list(|c| c.int::<usize>())?))
    }

    fn value_type(&mut self) -> Result<ValueType, GraphError> {
        let dtype = self.dtype()?;
        if self.eat("[?]") {
            return Ok(ValueType::unknown(dtype));
        }
        Ok(ValueType { dtype, shape: Some(self.shape()?) })
    }

    fn tensor(&mut self) -> Result<TensorValue, GraphError> {
        let dtype = self.dtype()?;
        let shape = self.shape()?;
        self.expect("{")?;
        let col = self.col();
        let close = self.rest().find('}').ok_or_else(|| self.err("unterminated tensor literal"))?;
        let body = &self.rest()[..close];
        let items: Vec<&str> = if body.trim().is_empty() { Vec::new() } else { body.split(',').map(str::trim).collect() };
        let bad = |w: &str| perr(self.line, col, format!("bad {dtype} element {w:?}"));
        let data = match dtype {
            DType::F64 => Buffer::F64(items.iter().map(|w| w.parse::<f64>().map_err(|_| bad(w))).collect::<Result<_, _>>()?),
            DType::I64 => Buffer::I64(items.iter().map(|w| w.parse::<i64>().map_err(|_| bad(w))).collect::<Result<_, _>>()?),
            DType::Bool => {
                Buffer::Bool(items.iter().map(|w| w.parse::<bool>().map_err(|_| bad(w))).collect::<Result<_, _>>()?)
            }
        };
        self.pos += close + 1;
        TensorValue::new(shape, data).map_err(|e| perr(self.line, col, e.to_string()))
    }
}

enum Attr {
    Int(i64),
    Ints(Vec<i64>),
    Refs(Vec<ValueRef>),
    Str(String),
    Tensor(TensorValue),
    Type(ValueType),
    DType(DType),
}

struct Attrs {
    map: BTreeMap<&'static str, Attr>,
    line: usize,
    col: usize,
}

const ATTR_KEYS: &[&str] = &[
    "value", "name", "ty", "index", "kernel", "axes", "shape", "axis", "perm", "start", "len", "parts", "tail",
    "dtype", "carried", "inputs",
];

impl Attrs {
    fn parse(c: &mut Cur) -> Result<Attrs, GraphError> {
        let (line, col) = (c.line, c.col());
        c.expect("(")?;
        let mut map = BTreeMap::new();
        if !c.eat(")") {
            loop {
                c.ws();
                let kcol = c.col();
                let key = c.word();
                let key = *ATTR_KEYS
                    .iter()
                    .find(|k| **k == key)
                    .ok_or_else(|| perr(c.line, kcol, format!("unknown attribute {key:?}")))?;
                c.expect("=")?;
                let v = match key {
                    "value" => Attr::Tensor(c.tensor()?),
                    "name" => Attr::Str(c.string()?),
                    "ty" => Attr::Type(c.value_type()?),
                    "dtype" => Attr::DType(c.dtype()?),
                    "inputs" => Attr::Refs(c.list(|c| c.value_ref())?),
                    "kernel" | "axes" | "shape" | "perm" | "tail" => Attr::Ints(c.list(|c| c.int::<i64>())?),
                    _ => Attr::Int(c.int::<i64>()?),
                };
                if map.insert(key, v).is_some() {
                    return Err(perr(c.line, kcol, format!("duplicate attribute {key:?}")));
                }
                if c.eat(")") {
                    break;
                }
                c.expect(",")?;
            }
        }
        Ok(Attrs { map, line, col })
    }

    fn err(&self, msg: impl Into<String>) -> GraphError {
        perr(self.line, self.col, msg)
    }

    fn take(&mut self, key: &str) -> Result<Attr, GraphError> {
        self.map.remove(key).ok_or_else(|| self.err(format!("missing attribute {key:?}")))
    }

    fn usize(&mut self, key: &str) -> Result<usize, GraphError> {
        match self.take(key)? {
            Attr::Int(v) if v >= 0 => Ok(v as usize),
            _ => Err(self.err(format!("attribute {key:?} must be a non-negative integer"))),
        }
    }

    fn i64(&mut self, key: &str) -> Result<i64, GraphError> {
        match self.take(key)? {
            Attr::Int(v) => Ok(v),
            _ => Err(self.err(format!("attribute {key:?} must be an integer"))),
        }
    }

    fn ints(&mut self, key: &str) -> Result<Vec<i64>, GraphError> {
        match self.take(key)? {
            Attr::Ints(v) => Ok(v),
            _ => Err(self.err(format!("attribute {key:?} must be an integer list"))),
        }
    }

    fn usizes(&mut self, key: &str) -> Result<Vec<usize>, GraphError> {
        let v = self.ints(key)?;
        if v.iter().any(|&x| x < 0) {
            return Err(self.err(format!("attribute {key:?} must be non-negative")));
        }
        Ok(v.into_iter().map(|x| x as usize).collect())
    }

    fn shape(&mut self, key: &str) -> Result<Shape, GraphError> {
        Ok(Shape::new(self.usizes(key)?))
    }

    fn string(&mut self, key: &str) -> Result<String, GraphError> {
        match self.take(key)? {
            Attr::Str(s) => Ok(s),
            _ => Err(self.err(format!("attribute {key:?} must be a string"))),
        }
    }

    fn ty(&mut self) -> Result<ValueType, GraphError> {
        match self.take("ty")? {
            Attr::Type(t) => Ok(t),
            _ => Err(self.err("attribute \"ty\" must be a type")),
        }
    }

    fn finish(self) -> Result<(), GraphError> {
        match self.map.keys().next() {
            Some(k) => Err(self.err(format!("unexpected attribute {k:?}"))),
            None => Ok(()),
        }
    }
}

struct Lines<'a> {
    lines: Vec<(usize, &'a str)>,
    at: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        let l = self.lines.get(self.at).copied();
        self.at += 1;
        l
    }

    fn last_line(&self) -> usize {
        self.lines.last().map(|l| l.0).unwrap_or(1)
    }
}

pub fn deserialize(text: &str) -> Result<Graph, GraphError> {
    let mut lines = Lines {
        lines: text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty()).collect(),
        at: 0,
    };
    match lines.next() {
        Some((_, l)) if l.trim() == HEADER => {}
        Some((n, _)) => return Err(perr(n, 1, format!("expected header {HEADER:?}"))),
        None => return Err(perr(1, 1, format!("expected header {HEADER:?}"))),
    }
    let mut g = Graph::new();
    while let Some(&(n, l)) = lines.lines.get(lines.at) {
        let mut c = Cur::new(l, n);
        if !c.eat("var ") {
            break;
        }
        lines.at += 1;
        let name = c.string()?;
        c.expect("=")?;
        let v = c.tensor()?;
        c.end()?;
        g.declare_variable(name, v);
    }
    parse_body(&mut lines, &mut g, false)?;
    Ok(g)
}

/// Read node lines into `g` until `}` (when nested) or end of input.
fn parse_body(lines: &mut Lines, g: &mut Graph, nested: bool) -> Result<(), GraphError> {
    let mut outputs_seen = false;
    loop {
        let Some((n, l)) = lines.next() else {
            if nested {
                return Err(perr(lines.last_line(), 1, "unexpected end of input inside a block"));
            }
            return Ok(());
        };
        let mut c = Cur::new(l, n);
        if c.eat("}") {
            if !nested {
                return Err(perr(n, c.col() - 1, "unbalanced \"}\""));
            }
            return c.end();
        }
        if outputs_seen {
            return Err(c.err("nothing may follow the outputs line"));
        }
        if c.eat("outputs") {
            let outs = c.list(|c| c.value_ref())?;
            c.end()?;
            g.set_outputs(outs).map_err(|e| perr(n, 1, e.to_string()))?;
            outputs_seen = true;
            continue;
        }
        parse_node(&mut c, lines, g)?;
    }
}

fn parse_node(c: &mut Cur, lines: &mut Lines, g: &mut Graph) -> Result<(), GraphError> {
    let line = c.line;
    c.eat("node ");
    c.ws();
    let id_col = c.col();
    let id: usize = c.int()?;
    if id != g.len() {
        return Err(perr(line, id_col, format!("node id {id} out of sequence, expected {}", g.len())));
    }
    c.expect("=")?;
    c.ws();
    let kcol = c.col();
    let kname = c.word();
    let kind = OpKind::from_name(kname).ok_or_else(|| perr(line, kcol, format!("unknown op kind {kname:?}")))?;
    let mut a = Attrs::parse(c)?;
    let inputs = match a.map.remove("inputs") {
        Some(Attr::Refs(r)) => r,
        Some(_) => unreachable!(),
        None => Vec::new(),
    };
    let ctrl: Vec<NodeId> = if c.eat("ctrl=") { c.list(|c| c.int::<usize>())?.into_iter().map(NodeId).collect() } else { Vec::new() };
    let opens = c.eat("{");
    c.end()?;
    let is_block = matches!(kind, OpKind::Cond | OpKind::While | OpKind::Parfor);
    if opens != is_block {
        let msg = if is_block { "block needs a \"{\" section" } else { "only blocks take a \"{\" section" };
        return Err(perr(line, kcol, msg));
    }
    let op = if is_block {
        let roles: &[&str] = match kind {
            OpKind::Cond => &["then", "else"],
            OpKind::While => &["cond", "body"],
            _ => &["body"],
        };
        let mut subs = Vec::new();
        for role in roles {
            let (n, l) = lines.next().ok_or_else(|| perr(lines.last_line(), 1, "unexpected end of input"))?;
            let mut rc = Cur::new(l, n);
            rc.expect(role)?;
            rc.expect("{")?;
            rc.end()?;
            let mut sub = Graph::fragment_of(g);
            parse_body(lines, &mut sub, true)?;
            subs.push(sub);
        }
        let (n, l) = lines.next().ok_or_else(|| perr(lines.last_line(), 1, "unexpected end of input"))?;
        let mut ec = Cur::new(l, n);
        ec.expect("}")?;
        ec.end()?;
        let mut subs = subs.into_iter();
        let mut next = || subs.next().expect("one per role");
        match kind {
            OpKind::Cond => Op::Cond(Box::new(CondBlock { then_branch: next(), else_branch: next() })),
            OpKind::While => {
                let carried = a.usize("carried")?;
                Op::While(Box::new(WhileBlock { carried, cond: next(), body: next() }))
            }
            _ => Op::Parfor(Box::new(ParforBlock { body: next() })),
        }
    } else {
        build_op(kind, &mut a)?
    };
    a.finish()?;
    g.add_node(op, inputs, ctrl).map_err(|e| perr(line, kcol, e.to_string()))?;
    Ok(())
}

fn unary_of(kind: OpKind) -> Option<UnaryOp> {
    UnaryOp::ALL.iter().copied().find(|&u| super::unary_kind(u) == kind)
}

fn binary_of(kind: OpKind) -> Option<BinaryOp> {
    BinaryOp::ALL.iter().copied().find(|&b| super::binary_kind(b) == kind)
}

fn build_op(kind: OpKind, a: &mut Attrs) -> Result<Op, GraphError> {
    if let Some(u) = unary_of(kind) {
        return Ok(Op::Unary(u));
    }
    if let Some(b) = binary_of(kind) {
        return Ok(Op::Binary(b));
    }
    Ok(match kind {
        OpKind::Constant => match a.take("value")? {
            Attr::Tensor(t) => Op::Constant(t),
            _ => return Err(a.err("attribute \"value\" must be a tensor")),
        },
        OpKind::Placeholder => Op::Placeholder { name: a.string("name")?, ty: a.ty()? },
        OpKind::Param => Op::Param { index: a.usize("index")?, ty: a.ty()? },
        OpKind::LoopVar => Op::LoopVar,
        OpKind::Select => Op::Select,
        OpKind::MatMul => Op::MatMul,
        OpKind::Conv2d => Op::Conv2d,
        OpKind::Conv2dBackpropInput => Op::Conv2dBackpropInput,
        OpKind::Conv2dBackpropFilter => match a.usizes("kernel")?[..] {
            [k1, k2] => Op::Conv2dBackpropFilter { kernel: [k1, k2] },
            _ => return Err(a.err("kernel needs two dims")),
        },
        OpKind::ReduceSum => Op::ReduceSum { axes: a.ints("axes")? },
        OpKind::SumToShape => Op::SumToShape { shape: a.shape("shape")? },
        OpKind::BroadcastTo => Op::BroadcastTo { shape: a.shape("shape")? },
        OpKind::Concat => Op::Concat { axis: a.i64("axis")? },
        OpKind::Stack => Op::Stack { axis: a.usize("axis")? },
        OpKind::Reshape => Op::Reshape { shape: a.shape("shape")? },
        OpKind::Transpose => Op::Transpose { perm: a.usizes("perm")? },
        OpKind::Slice => Op::Slice { axis: a.usize("axis")?, start: a.usize("start")?, len: a.usize("len")? },
        OpKind::GatherRows => Op::GatherRows,
        OpKind::ScatterRows => Op::ScatterRows { parts: a.usize("parts")? },
        OpKind::ScatterAddRows => Op::ScatterAddRows,
        OpKind::ScatterUpdate => Op::ScatterUpdate,
        OpKind::TileLeading => Op::TileLeading { tail: a.shape("tail")? },
        OpKind::MergeLeading => Op::MergeLeading,
        OpKind::ReshapeLeading => Op::ReshapeLeading { tail: a.shape("tail")? },
        OpKind::Range => Op::Range,
        OpKind::WhereTrue => Op::WhereTrue,
        OpKind::Length => Op::Length,
        OpKind::Zeros => {
            let dtype = match a.take("dtype")? {
                Attr::DType(d) => d,
                _ => return Err(a.err("attribute \"dtype\" must be a dtype")),
            };
            Op::Zeros { dtype, tail: a.shape("tail")? }
        }
        OpKind::ReadVariable => Op::ReadVariable { name: a.string("name")? },
        OpKind::Assign => Op::Assign { name: a.string("name")? },
        OpKind::AssignAdd => Op::AssignAdd { name: a.string("name")? },
        OpKind::RandomUniform => Op::RandomUniform { shape: a.shape("shape")? },
        _ => unreachable!("elementwise and block kinds handled by the caller"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_graph_is_header_only() {
        let g = Graph::new();
        let s = serialize(&g);
        assert_eq!(s, "graph v1\n");
        assert_eq!(deserialize(&s).unwrap(), g);
    }

    #[test]
    fn parfor_block_round_trips() {
        let mut g = Graph::new();
        let a = g.placeholder("a", DType::F64, [10, 3]).unwrap();
        let b = g.placeholder("b", DType::F64, [10, 3]).unwrap();
        let n = g.scalar_i64(10).unwrap();
        let outs = g
            .parfor(n, &[a, b], |g, i, p| {
                let ai = g.gather_rows(p[0], i)?;
                let bi = g.gather_rows(p[1], i)?;
                Ok(vec![g.add(ai, bi)?, g.sub(ai, bi)?])
            })
            .unwrap();
        assert_eq!(outs.len(), 2);
        g.set_outputs(outs).unwrap();
        let s = serialize(&g);
        assert!(s.contains("body {"), "{s}");
        let back = deserialize(&s).unwrap();
        assert_eq!(back, g);
        assert_eq!(serialize(&back), s);
    }

    #[test]
    fn floats_keep_exact_bits() {
        let mut g = Graph::new();
        let vals = vec![0.1, -0.0, 1e-300, f64::INFINITY, f64::NEG_INFINITY, 1.0 / 3.0];
        g.declare_variable("w q\"", TensorValue::vec_f64(vals.clone()));
        g.constant(TensorValue::vec_f64(vals)).unwrap();
        let back = deserialize(&serialize(&g)).unwrap();
        assert_eq!(back, g);
        let bits = |g: &Graph| match &g.nodes()[0].op {
            Op::Constant(t) => t.as_f64().unwrap().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            _ => unreachable!(),
        };
        assert_eq!(bits(&back), bits(&g));
    }

    #[test]
    fn unknown_kind_is_named() {
        let err = deserialize("graph v1\nnode 0 = frobnicate\n").unwrap_err();
        match err {
            GraphError::Parse { line, col, msg } => {
                assert_eq!((line, col), (2, 10));
                assert!(msg.contains("frobnicate"), "{msg}");
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn bad_header_and_trailing_text() {
        assert!(matches!(deserialize("graph v2\n"), Err(GraphError::Parse { line: 1, .. })));
        let e = deserialize("graph v1\n0 = constant(value=f64[]{1.0}) junk\n").unwrap_err();
        assert!(matches!(e, GraphError::Parse { line: 2, .. }));
    }
}
