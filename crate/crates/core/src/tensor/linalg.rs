use super::{Buffer, DType, Result, Shape, TensorError, TensorValue};

fn matmul_into<T>(a: &[T], b: &[T], out: &mut [T], x: usize, y: usize, z: usize)
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Mul<Output = T>,
{
    // i-k-j order keeps the inner loop contiguous in `b` and `out`
    for i in 0..x {
        let row = &mut out[i * z..(i + 1) * z];
        for (j, o) in row.iter_mut().enumerate() {
            *o = a[i * y] * b[j];
        }
        for k in 1..y {
            let aik = a[i * y + k];
            for (o, &bkj) in row.iter_mut().zip(&b[k * z..(k + 1) * z]) {
                *o = *o + aik * bkj;
            }
        }
    }
}

/// `[x,y]·[y,z] → [x,z]`, or batched `[n,x,y]·[n,y,z] → [n,x,z]`.
pub fn matmul(a: &TensorValue, b: &TensorValue) -> Result<TensorValue> {
    if a.dtype() != b.dtype() {
        return Err(TensorError::DTypeMismatch { expected: a.dtype(), found: b.dtype() });
    }
    let out_shape = matmul_shape(a.shape(), b.shape())?;
    let (batch, x, y, z) = match (a.dims(), b.dims()) {
        ([x, y], [_, z]) => (1, *x, *y, *z),
        ([n, x, y], [_, _, z]) => (*n, *x, *y, *z),
        _ => unreachable!("checked by matmul_shape"),
    };
    let data = match (a.data(), b.data()) {
        (Buffer::F64(av), Buffer::F64(bv)) => {
            let mut out = vec![0.0; batch * x * z];
            if y > 0 {
                for n in 0..batch {
                    matmul_into(
                        &av[n * x * y..(n + 1) * x * y],
                        &bv[n * y * z..(n + 1) * y * z],
                        &mut out[n * x * z..(n + 1) * x * z],
                        x,
                        y,
                        z,
                    );
                }
            }
            Buffer::F64(out)
        }
        (Buffer::I64(av), Buffer::I64(bv)) => {
            let mut out = vec![0i64; batch * x * z];
            if y > 0 {
                for n in 0..batch {
                    matmul_into(
                        &av[n * x * y..(n + 1) * x * y],
                        &bv[n * y * z..(n + 1) * y * z],
                        &mut out[n * x * z..(n + 1) * x * z],
                        x,
                        y,
                        z,
                    );
                }
            }
            Buffer::I64(out)
        }
        _ => return Err(TensorError::DTypeMismatch { expected: DType::F64, found: a.dtype() }),
    };
    TensorValue::new(out_shape, data)
}

pub(crate) fn matmul_shape(a: &Shape, b: &Shape) -> Result<Shape> {
    match (a.dims(), b.dims()) {
        ([x, y], [y2, z]) if y == y2 => Ok(Shape::new([*x, *z])),
        ([n, x, y], [n2, y2, z]) if n == n2 && y == y2 => Ok(Shape::new([*n, *x, *z])),
        ([_, _], [_, _]) | ([_, _, _], [_, _, _]) => Err(TensorError::IncompatibleShapes(format!(
            "matmul {a} · {b}"
        ))),
        _ => Err(TensorError::RankError(format!("matmul needs rank 2·2 or 3·3, got {a} · {b}"))),
    }
}

/// Zero padding (before, after) for a SAME convolution with kernel size `k`.
pub fn conv_padding(k: usize) -> (usize, usize) {
    let before = k.saturating_sub(1) / 2;
    (before, k.saturating_sub(1) - before)
}

fn conv_dims(x: &Shape, f: &Shape) -> Result<([usize; 4], [usize; 4])> {
    match (x.dims(), f.dims()) {
        ([b, h, w, c1], [k1, k2, fc1, c2]) => {
            if c1 != fc1 {
                return Err(TensorError::IncompatibleShapes(format!(
                    "conv2d input channels {c1} vs filter {fc1}"
                )));
            }
            Ok(([*b, *h, *w, *c1], [*k1, *k2, *fc1, *c2]))
        }
        _ => Err(TensorError::RankError(format!("conv2d needs NHWC input and HWIO filter, got {x} and {f}"))),
    }
}

pub(crate) fn conv2d_shape(x: &Shape, f: &Shape) -> Result<Shape> {
    let ([b, h, w, _], [_, _, _, c2]) = conv_dims(x, f)?;
    Ok(Shape::new([b, h, w, c2]))
}

/// Stride-1 SAME convolution, NHWC input, HWIO filter.
pub fn conv2d(x: &TensorValue, f: &TensorValue) -> Result<TensorValue> {
    let ([b, h, w, c1], [k1, k2, _, c2]) = conv_dims(x.shape(), f.shape())?;
    let xv = x.f64_data()?;
    let fv = f.f64_data()?;
    let (p1, _) = conv_padding(k1);
    let (p2, _) = conv_padding(k2);
    let mut out = vec![0.0; b * h * w * c2];
    for n in 0..b {
        for i in 0..h {
            for j in 0..w {
                let o_base = ((n * h + i) * w + j) * c2;
                for p in 0..k1 {
                    let Some(yi) = (i + p).checked_sub(p1).filter(|&v| v < h) else { continue };
                    for q in 0..k2 {
                        let Some(xj) = (j + q).checked_sub(p2).filter(|&v| v < w) else { continue };
                        let x_base = ((n * h + yi) * w + xj) * c1;
                        for c in 0..c1 {
                            let xval = xv[x_base + c];
                            let f_base = ((p * k2 + q) * c1 + c) * c2;
                            for o in 0..c2 {
                                out[o_base + o] += xval * fv[f_base + o];
                            }
                        }
                    }
                }
            }
        }
    }
    TensorValue::new([b, h, w, c2], Buffer::F64(out))
}

/// Gradient of `conv2d(x, f)` with respect to `x`, given output cotangent `g`.
pub fn conv2d_backprop_input(g: &TensorValue, f: &TensorValue) -> Result<TensorValue> {
    let (gd, fd) = match (g.dims(), f.dims()) {
        ([b, h, w, c2], [k1, k2, c1, fc2]) if c2 == fc2 => ([*b, *h, *w, *c2], [*k1, *k2, *c1, *fc2]),
        _ => {
            return Err(TensorError::IncompatibleShapes(format!(
                "conv2d_backprop_input: cotangent {} vs filter {}",
                g.shape(),
                f.shape()
            )))
        }
    };
    let [b, h, w, c2] = gd;
    let [k1, k2, c1, _] = fd;
    let gv = g.f64_data()?;
    let fv = f.f64_data()?;
    let (p1, _) = conv_padding(k1);
    let (p2, _) = conv_padding(k2);
    let mut dx = vec![0.0; b * h * w * c1];
    for n in 0..b {
        for i in 0..h {
            for j in 0..w {
                let g_base = ((n * h + i) * w + j) * c2;
                for p in 0..k1 {
                    let Some(yi) = (i + p).checked_sub(p1).filter(|&v| v < h) else { continue };
                    for q in 0..k2 {
                        let Some(xj) = (j + q).checked_sub(p2).filter(|&v| v < w) else { continue };
                        let x_base = ((n * h + yi) * w + xj) * c1;
                        for c in 0..c1 {
                            let f_base = ((p * k2 + q) * c1 + c) * c2;
                            let mut acc = 0.0;
                            for o in 0..c2 {
                                acc += gv[g_base + o] * fv[f_base + o];
                            }
                            dx[x_base + c] += acc;
                        }
                    }
                }
            }
        }
    }
    TensorValue::new([b, h, w, c1], Buffer::F64(dx))
}

pub(crate) fn backprop_filter_shape(x: &Shape, g: &Shape, k: [usize; 2]) -> Result<Shape> {
    let (xd, gd) = (x.dims(), g.dims());
    let ok = xd.len() >= 4 && xd.len() == gd.len() && xd[..xd.len() - 1] == gd[..gd.len() - 1];
    if !ok {
        return Err(TensorError::IncompatibleShapes(format!(
            "conv2d_backprop_filter: input {x} vs cotangent {g}"
        )));
    }
    let groups = &xd[..xd.len() - 4];
    let mut dims = groups.to_vec();
    dims.extend_from_slice(&[k[0], k[1], xd[xd.len() - 1], gd[gd.len() - 1]]);
    Ok(Shape::new(dims))
}

/// Gradient of `conv2d(x, f)` with respect to a `k[0]×k[1]` filter.
///
/// Any dims in front of NHWC are independent groups, each producing its
/// own filter gradient.
pub fn conv2d_backprop_filter(x: &TensorValue, g: &TensorValue, k: [usize; 2]) -> Result<TensorValue> {
    let out_shape = backprop_filter_shape(x.shape(), g.shape(), k)?;
    let xd = x.dims();
    let r = xd.len();
    let (b, h, w, c1) = (xd[r - 4], xd[r - 3], xd[r - 2], xd[r - 1]);
    let c2 = g.dims()[r - 1];
    let groups: usize = xd[..r - 4].iter().product();
    let [k1, k2] = k;
    let xv = x.f64_data()?;
    let gv = g.f64_data()?;
    let (p1, _) = conv_padding(k1);
    let (p2, _) = conv_padding(k2);
    let fsize = k1 * k2 * c1 * c2;
    let mut df = vec![0.0; groups * fsize];
    for grp in 0..groups {
        let xoff = grp * b * h * w * c1;
        let goff = grp * b * h * w * c2;
        let dfo = &mut df[grp * fsize..(grp + 1) * fsize];
        for n in 0..b {
            for i in 0..h {
                for j in 0..w {
                    let g_base = goff + ((n * h + i) * w + j) * c2;
                    for p in 0..k1 {
                        let Some(yi) = (i + p).checked_sub(p1).filter(|&v| v < h) else { continue };
                        for q in 0..k2 {
                            let Some(xj) = (j + q).checked_sub(p2).filter(|&v| v < w) else { continue };
                            let x_base = xoff + ((n * h + yi) * w + xj) * c1;
                            for c in 0..c1 {
                                let xval = xv[x_base + c];
                                let f_base = ((p * k2 + q) * c1 + c) * c2;
                                for o in 0..c2 {
                                    dfo[f_base + o] += xval * gv[g_base + o];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    TensorValue::new(out_shape, Buffer::F64(df))
}
