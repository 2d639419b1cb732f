use super::{broadcast_index_map, Buffer, DType, Result, Shape, TensorError, TensorValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
    Less,
    Equal,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 8] = [
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
        BinaryOp::Max,
        BinaryOp::Min,
        BinaryOp::Less,
        BinaryOp::Equal,
    ];

    pub fn is_comparison(self) -> bool {
        matches!(self, BinaryOp::Less | BinaryOp::Equal)
    }

    /// Result dtype for operands of `dtype`, or `None` if unsupported.
    pub fn result_dtype(self, dtype: DType) -> Option<DType> {
        match (self, dtype) {
            (BinaryOp::Less | BinaryOp::Equal, DType::F64 | DType::I64) => Some(DType::Bool),
            (BinaryOp::Equal, DType::Bool) => Some(DType::Bool),
            (_, DType::Bool) => None,
            (_, d) => Some(d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Relu,
    Tanh,
    Sigmoid,
    Square,
    Not,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 8] = [
        UnaryOp::Neg,
        UnaryOp::Exp,
        UnaryOp::Log,
        UnaryOp::Relu,
        UnaryOp::Tanh,
        UnaryOp::Sigmoid,
        UnaryOp::Square,
        UnaryOp::Not,
    ];

    pub fn result_dtype(self, dtype: DType) -> Option<DType> {
        match (self, dtype) {
            (UnaryOp::Not, DType::Bool) => Some(DType::Bool),
            (UnaryOp::Not, _) | (_, DType::Bool) => None,
            (UnaryOp::Neg | UnaryOp::Relu | UnaryOp::Square, d) => Some(d),
            (_, DType::F64) => Some(DType::F64),
            _ => None,
        }
    }
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shapes(a: &Shape, b: &Shape) -> Result<Shape> {
    let rank = a.rank().max(b.rank());
    let mut dims = vec![0; rank];
    for (k, out) in dims.iter_mut().enumerate() {
        let da = dim_from_right(a, rank - 1 - k);
        let db = dim_from_right(b, rank - 1 - k);
        *out = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::IncompatibleShapes(format!(
                    "cannot broadcast {a} with {b}"
                )))
            }
        };
    }
    Ok(Shape::new(dims))
}

fn dim_from_right(s: &Shape, k: usize) -> usize {
    if k < s.rank() {
        s.dims()[s.rank() - 1 - k]
    } else {
        1
    }
}

fn check_same_dtype(a: &TensorValue, b: &TensorValue) -> Result<()> {
    if a.dtype() != b.dtype() {
        return Err(TensorError::DTypeMismatch { expected: a.dtype(), found: b.dtype() });
    }
    Ok(())
}

fn zip_map<A: Copy, B: Copy, O>(
    a: &[A],
    am: &[usize],
    b: &[B],
    bm: &[usize],
    f: impl Fn(A, B) -> O,
) -> Vec<O> {
    am.iter().zip(bm).map(|(&i, &j)| f(a[i], b[j])).collect()
}

fn try_zip_map<A: Copy, B: Copy, O>(
    a: &[A],
    am: &[usize],
    b: &[B],
    bm: &[usize],
    f: impl Fn(A, B) -> Result<O>,
) -> Result<Vec<O>> {
    am.iter().zip(bm).map(|(&i, &j)| f(a[i], b[j])).collect()
}

pub fn binary(op: BinaryOp, a: &TensorValue, b: &TensorValue) -> Result<TensorValue> {
    check_same_dtype(a, b)?;
    if op.result_dtype(a.dtype()).is_none() {
        return Err(TensorError::DTypeMismatch {
            expected: if op == BinaryOp::Equal { DType::Bool } else { DType::F64 },
            found: a.dtype(),
        });
    }
    let out = broadcast_shapes(a.shape(), b.shape())?;
    let am = broadcast_index_map(a.shape(), &out);
    let bm = broadcast_index_map(b.shape(), &out);
    use BinaryOp::*;
    let data = match (a.data(), b.data()) {
        (Buffer::F64(x), Buffer::F64(y)) => match op {
            Add => Buffer::F64(zip_map(x, &am, y, &bm, |p, q| p + q)),
            Sub => Buffer::F64(zip_map(x, &am, y, &bm, |p, q| p - q)),
            Mul => Buffer::F64(zip_map(x, &am, y, &bm, |p, q| p * q)),
            Div => Buffer::F64(zip_map(x, &am, y, &bm, |p, q| p / q)),
            Max => Buffer::F64(zip_map(x, &am, y, &bm, |p: f64, q| if q > p { q } else { p })),
            Min => Buffer::F64(zip_map(x, &am, y, &bm, |p: f64, q| if q < p { q } else { p })),
            Less => Buffer::Bool(zip_map(x, &am, y, &bm, |p, q| p < q)),
            Equal => Buffer::Bool(zip_map(x, &am, y, &bm, |p, q| p == q)),
        },
        (Buffer::I64(x), Buffer::I64(y)) => match op {
            Add => Buffer::I64(zip_map(x, &am, y, &bm, i64::wrapping_add)),
            Sub => Buffer::I64(zip_map(x, &am, y, &bm, i64::wrapping_sub)),
            Mul => Buffer::I64(zip_map(x, &am, y, &bm, i64::wrapping_mul)),
            Div => Buffer::I64(try_zip_map(x, &am, y, &bm, |p, q| {
                p.checked_div(q).ok_or(TensorError::DivisionByZero)
            })?),
            Max => Buffer::I64(zip_map(x, &am, y, &bm, i64::max)),
            Min => Buffer::I64(zip_map(x, &am, y, &bm, i64::min)),
            Less => Buffer::Bool(zip_map(x, &am, y, &bm, |p, q| p < q)),
            Equal => Buffer::Bool(zip_map(x, &am, y, &bm, |p, q| p == q)),
        },
        (Buffer::Bool(x), Buffer::Bool(y)) => Buffer::Bool(zip_map(x, &am, y, &bm, |p, q| p == q)),
        _ => unreachable!("dtypes checked above"),
    };
    TensorValue::new(out, data)
}

pub fn unary(op: UnaryOp, x: &TensorValue) -> Result<TensorValue> {
    if op.result_dtype(x.dtype()).is_none() {
        let expected = if op == UnaryOp::Not { DType::Bool } else { DType::F64 };
        return Err(TensorError::DTypeMismatch { expected, found: x.dtype() });
    }
    use UnaryOp::*;
    let data = match x.data() {
        Buffer::F64(v) => {
            let f: fn(f64) -> f64 = match op {
                Neg => |a| -a,
                Exp => f64::exp,
                Log => f64::ln,
                Relu => |a| if a > 0.0 { a } else { 0.0 },
                Tanh => f64::tanh,
                Sigmoid => |a| 1.0 / (1.0 + (-a).exp()),
                Square => |a| a * a,
                Not => unreachable!(),
            };
            Buffer::F64(v.iter().map(|&a| f(a)).collect())
        }
        Buffer::I64(v) => {
            let f: fn(i64) -> i64 = match op {
                Neg => i64::wrapping_neg,
                Relu => |a| a.max(0),
                Square => |a| a.wrapping_mul(a),
                _ => unreachable!(),
            };
            Buffer::I64(v.iter().map(|&a| f(a)).collect())
        }
        Buffer::Bool(v) => Buffer::Bool(v.iter().map(|&a| !a).collect()),
    };
    TensorValue::new(x.shape().clone(), data)
}

/// Elementwise `cond ? a : b` with three-way broadcasting.
pub fn select(cond: &TensorValue, a: &TensorValue, b: &TensorValue) -> Result<TensorValue> {
    let c = cond.bool_data()?;
    check_same_dtype(a, b)?;
    let out = broadcast_shapes(&broadcast_shapes(cond.shape(), a.shape())?, b.shape())?;
    let cm = broadcast_index_map(cond.shape(), &out);
    let am = broadcast_index_map(a.shape(), &out);
    let bm = broadcast_index_map(b.shape(), &out);
    let pick = |k: usize| if c[cm[k]] { (true, am[k]) } else { (false, bm[k]) };
    let n = out.numel();
    let data = match (a.data(), b.data()) {
        (Buffer::F64(x), Buffer::F64(y)) => Buffer::F64(
            (0..n).map(|k| match pick(k) { (true, i) => x[i], (false, i) => y[i] }).collect(),
        ),
        (Buffer::I64(x), Buffer::I64(y)) => Buffer::I64(
            (0..n).map(|k| match pick(k) { (true, i) => x[i], (false, i) => y[i] }).collect(),
        ),
        (Buffer::Bool(x), Buffer::Bool(y)) => Buffer::Bool(
            (0..n).map(|k| match pick(k) { (true, i) => x[i], (false, i) => y[i] }).collect(),
        ),
        _ => unreachable!("dtypes checked above"),
    };
    TensorValue::new(out, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(d: &[usize]) -> Shape {
        Shape::new(d.to_vec())
    }

    #[test]
    fn broadcast_examples() {
        // [y,z] vs [n,1,z]
        assert_eq!(broadcast_shapes(&s(&[3, 4]), &s(&[5, 1, 4])).unwrap(), s(&[5, 3, 4]));
        assert_eq!(broadcast_shapes(&s(&[]), &s(&[4, 5])).unwrap(), s(&[4, 5]));
        assert_eq!(broadcast_shapes(&s(&[3, 1]), &s(&[1, 4])).unwrap(), s(&[3, 4]));
        assert!(matches!(
            broadcast_shapes(&s(&[3]), &s(&[4])),
            Err(TensorError::IncompatibleShapes(_))
        ));
    }

    #[test]
    fn binary_examples() {
        let a = TensorValue::f64(&[2], vec![1.0, 2.0]);
        let b = TensorValue::f64(&[2], vec![3.0, 4.0]);
        assert_eq!(binary(BinaryOp::Add, &a, &b).unwrap(), TensorValue::f64(&[2], vec![4.0, 6.0]));
        let five = TensorValue::scalar_f64(5.0);
        let v = TensorValue::f64(&[3], vec![1.0, 2.0, 3.0]);
        assert_eq!(
            binary(BinaryOp::Add, &five, &v).unwrap(),
            TensorValue::f64(&[3], vec![6.0, 7.0, 8.0])
        );
        let l = binary(
            BinaryOp::Less,
            &TensorValue::f64(&[2], vec![1.0, 5.0]),
            &TensorValue::f64(&[2], vec![3.0, 3.0]),
        )
        .unwrap();
        assert_eq!(l, TensorValue::bool(&[2], vec![true, false]));
    }

    #[test]
    fn binary_rejects_mixed_dtypes() {
        let a = TensorValue::scalar_f64(1.0);
        let b = TensorValue::scalar_i64(1);
        assert!(matches!(binary(BinaryOp::Add, &a, &b), Err(TensorError::DTypeMismatch { .. })));
    }

    #[test]
    fn float_division_by_zero_is_ieee() {
        let r = binary(
            BinaryOp::Div,
            &TensorValue::f64(&[2], vec![1.0, 0.0]),
            &TensorValue::scalar_f64(0.0),
        )
        .unwrap();
        let v = r.as_f64().unwrap();
        assert!(v[0].is_infinite() && v[1].is_nan());
        let e = binary(BinaryOp::Div, &TensorValue::scalar_i64(1), &TensorValue::scalar_i64(0));
        assert_eq!(e, Err(TensorError::DivisionByZero));
    }

    #[test]
    fn unary_examples() {
        let x = TensorValue::f64(&[3], vec![-1.0, 0.0, 2.0]);
        assert_eq!(unary(UnaryOp::Relu, &x).unwrap(), TensorValue::f64(&[3], vec![0.0, 0.0, 2.0]));
        let nn = unary(UnaryOp::Neg, &unary(UnaryOp::Neg, &x).unwrap()).unwrap();
        assert_eq!(nn, x);
        let s = unary(UnaryOp::Sigmoid, &TensorValue::scalar_f64(0.0)).unwrap();
        assert_eq!(s, TensorValue::scalar_f64(0.5));
        assert!(unary(UnaryOp::Exp, &TensorValue::scalar_i64(1)).is_err());
    }

    #[test]
    fn select_broadcasts() {
        let c = TensorValue::bool(&[2, 1], vec![true, false]);
        let a = TensorValue::f64(&[2], vec![1.0, 2.0]);
        let b = TensorValue::scalar_f64(0.0);
        let r = select(&c, &a, &b).unwrap();
        assert_eq!(r, TensorValue::f64(&[2, 2], vec![1.0, 2.0, 0.0, 0.0]));
    }
}
