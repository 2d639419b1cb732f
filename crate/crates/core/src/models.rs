//! Small fixed models written at batch size one, with seeded weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, GraphError, ValueRef};
use crate::tensor::{Shape, TensorValue, UnaryOp};

type Result<T> = std::result::Result<T, GraphError>;

type Forward = fn(&mut Graph, ValueRef, &[ValueRef]) -> Result<ValueRef>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Linear,
    Mlp,
    MnistLike,
    LstmUnrolled,
}

#[derive(Clone)]
pub struct Model {
    pub kind: ModelKind,
    /// Shape of one example.
    pub input: Shape,
    /// Shape of one output.
    pub output: Shape,
    pub params: Vec<TensorValue>,
    forward: Forward,
}

fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> TensorValue {
    let k: usize = dims.iter().product();
    TensorValue::f64(dims, (0..k).map(|_| rng.gen_range(-scale..scale)).collect())
}

/// Weights scaled by 1/sqrt(fan_in).
fn dense(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> (TensorValue, TensorValue) {
    let s = 1.0 / (fan_in as f64).sqrt();
    (uniform(rng, &[fan_in, fan_out], s), uniform(rng, &[fan_out], s))
}

/// `x [k] -> x·W + b [m]`.
fn affine(b: &mut Graph, x: ValueRef, w: ValueRef, bias: ValueRef) -> Result<ValueRef> {
    let k = b.shape_of(x).map_or(0, |s| s.numel());
    let m = b.shape_of(w).map_or(0, |s| s.dims()[1]);
    let row = b.reshape(x, [1, k])?;
    let y = b.matmul(row, w)?;
    let y = b.reshape(y, [m])?;
    b.add(y, bias)
}

fn linear_fwd(b: &mut Graph, x: ValueRef, p: &[ValueRef]) -> Result<ValueRef> {
    affine(b, x, p[0], p[1])
}

fn mlp_fwd(b: &mut Graph, x: ValueRef, p: &[ValueRef]) -> Result<ValueRef> {
    let h = affine(b, x, p[0], p[1])?;
    let h = b.unary(UnaryOp::Tanh, h)?;
    affine(b, h, p[2], p[3])
}

/// conv 3x3 -> relu -> 2x2 average pool -> dense.
fn mnist_fwd(b: &mut Graph, x: ValueRef, p: &[ValueRef]) -> Result<ValueRef> {
    let x = b.reshape(x, [1, 28, 28, 1])?;
    let c = b.conv2d(x, p[0])?;
    let c = b.add(c, p[1])?;
    let c = b.unary(UnaryOp::Relu, c)?;
    let c = b.reshape(c, [14, 2, 14, 2, 4])?;
    let pooled = b.reduce_sum(c, &[1, 3])?;
    let quarter = b.scalar_f64(0.25)?;
    let pooled = b.mul(pooled, quarter)?;
    let flat = b.reshape(pooled, [14 * 14 * 4])?;
    affine(b, flat, p[2], p[3])
}

const LSTM_STEPS: usize = 10;
const LSTM_IN: usize = 16;
const LSTM_STATE: usize = 32;

fn lstm_fwd(b: &mut Graph, x: ValueRef, p: &[ValueRef]) -> Result<ValueRef> {
    let s = LSTM_STATE;
    let mut h = b.constant(TensorValue::zeros(crate::tensor::DType::F64, [1, s]))?;
    let mut c = h;
    for t in 0..LSTM_STEPS {
        let xt = b.slice(x, 0, t, 1)?;
        let xh = b.concat(&[xt, h], 1)?;
        let z = b.matmul(xh, p[0])?;
        let z = b.add(z, p[1])?;
        let gate = |b: &mut Graph, k: usize, op: UnaryOp| -> Result<ValueRef> {
            let g = b.slice(z, 1, k * s, s)?;
            b.unary(op, g)
        };
        let i = gate(b, 0, UnaryOp::Sigmoid)?;
        let f = gate(b, 1, UnaryOp::Sigmoid)?;
        let o = gate(b, 2, UnaryOp::Sigmoid)?;
        let u = gate(b, 3, UnaryOp::Tanh)?;
        let keep = b.mul(f, c)?;
        let write = b.mul(i, u)?;
        c = b.add(keep, write)?;
        let tc = b.unary(UnaryOp::Tanh, c)?;
        h = b.mul(o, tc)?;
    }
    b.reshape(h, [s])
}

impl Model {
    /// 64-dim projection.
    pub fn linear(seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, bias) = dense(&mut rng, 64, 64);
        Model { kind: ModelKind::Linear, input: Shape::new([64]), output: Shape::new([64]), params: vec![w, bias], forward: linear_fwd }
    }

    /// Two dense layers with a tanh between them.
    pub fn mlp(seed: u64, input: usize, hidden: usize, output: usize) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w1, b1) = dense(&mut rng, input, hidden);
        let (w2, b2) = dense(&mut rng, hidden, output);
        Model {
            kind: ModelKind::Mlp,
            input: Shape::new([input]),
            output: Shape::new([output]),
            params: vec![w1, b1, w2, b2],
            forward: mlp_fwd,
        }
    }

    pub fn mnist_like(seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let filter = uniform(&mut rng, &[3, 3, 1, 4], 1.0 / 3.0);
        let fb = uniform(&mut rng, &[4], 0.1);
        let (w, bias) = dense(&mut rng, 14 * 14 * 4, 10);
        Model {
            kind: ModelKind::MnistLike,
            input: Shape::new([28, 28, 1]),
            output: Shape::new([10]),
            params: vec![filter, fb, w, bias],
            forward: mnist_fwd,
        }
    }

    /// Ten statically unrolled LSTM steps over a [10, 16] sequence.
    pub fn lstm_unrolled(seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, bias) = dense(&mut rng, LSTM_IN + LSTM_STATE, 4 * LSTM_STATE);
        Model {
            kind: ModelKind::LstmUnrolled,
            input: Shape::new([LSTM_STEPS, LSTM_IN]),
            output: Shape::new([LSTM_STATE]),
            params: vec![w, bias],
            forward: lstm_fwd,
        }
    }

    /// Parameters as constants of `g`.
    pub fn constants(&self, g: &mut Graph) -> Result<Vec<ValueRef>> {
        self.params.iter().map(|p| g.constant(p.clone())).collect()
    }

    /// One example in, one output out. `params` mirror `self.params`.
    pub fn forward(&self, b: &mut Graph, x: ValueRef, params: &[ValueRef]) -> Result<ValueRef> {
        (self.forward)(b, x, params)
    }

    /// Squared error against `target`.
    pub fn loss(&self, b: &mut Graph, x: ValueRef, target: ValueRef, params: &[ValueRef]) -> Result<ValueRef> {
        let y = self.forward(b, x, params)?;
        let d = b.sub(y, target)?;
        let sq = b.unary(UnaryOp::Square, d)?;
        let axes: Vec<i64> = (0..self.output.rank() as i64).collect();
        b.reduce_sum(sq, &axes)
    }

    /// Seeded inputs with a leading batch axis.
    pub fn inputs(&self, batch: usize, seed: u64) -> TensorValue {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        uniform(&mut rng, self.input.prepend(batch).dims(), 1.0)
    }

    /// Seeded targets with a leading batch axis.
    pub fn targets(&self, batch: usize, seed: u64) -> TensorValue {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a27);
        uniform(&mut rng, self.output.prepend(batch).dims(), 1.0)
    }
}

/// The linear model written with an explicit batch axis: `X·W + b`.
pub fn linear_batched(g: &mut Graph, x: ValueRef, params: &[ValueRef]) -> Result<ValueRef> {
    let y = g.matmul(x, params[0])?;
    g.add(y, params[1])
}
