//! Shape manipulation and elementwise arithmetic.

use crate::error::{shape_err, Result};
use crate::gemm::{gemm, matmul, View, ViewMut};
use crate::tape::Var;
use crate::tensor::Tensor;

fn same_shape(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<Vec<usize>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return shape_err(op, format!("{sa:?} vs {sb:?}"));
    }
    Ok(sa)
}

pub fn add<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let shape = same_shape("add", &a, &b)?;
    let (va, vb) = (a.value(), b.value());
    let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
    let out = Tensor::new(shape, data)?;
    Ok(a.tape().record(
        out,
        &[a, b],
        Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
    ))
}

pub fn sub<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let shape = same_shape("sub", &a, &b)?;
    let (va, vb) = (a.value(), b.value());
    let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
    let out = Tensor::new(shape, data)?;
    Ok(a.tape().record(
        out,
        &[a, b],
        Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|x| -x))]),
    ))
}

/// Elementwise product.
pub fn mul<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let shape = same_shape("mul", &a, &b)?;
    let (va, vb) = (a.value(), b.value());
    let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
    let out = Tensor::new(shape.clone(), data)?;
    Ok(a.tape().record(
        out,
        &[a, b],
        Box::new(move |g, needs| {
            let ga = needs[0].then(|| {
                let d = g.data().iter().zip(vb.data()).map(|(g, y)| g * y).collect();
                Tensor::new(shape.clone(), d).unwrap()
            });
            let gb = needs[1].then(|| {
                let d = g.data().iter().zip(va.data()).map(|(g, x)| g * x).collect();
                Tensor::new(shape.clone(), d).unwrap()
            });
            vec![ga, gb]
        }),
    ))
}

/// Elementwise product with a constant tensor of the same shape.
pub fn mul_const<'t>(a: Var<'t>, c: &Tensor) -> Result<Var<'t>> {
    if a.shape() != c.shape() {
        return shape_err("mul_const", format!("{:?} vs {:?}", a.shape(), c.shape()));
    }
    let va = a.value();
    let data = va.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
    let out = Tensor::new(c.shape().to_vec(), data)?;
    let c = c.clone();
    Ok(a.tape().record(
        out,
        &[a],
        Box::new(move |g, _| {
            let d = g.data().iter().zip(c.data()).map(|(g, y)| g * y).collect();
            vec![Some(Tensor::new(c.shape().to_vec(), d).unwrap())]
        }),
    ))
}

pub fn scale<'t>(a: Var<'t>, factor: f64) -> Var<'t> {
    let out = a.value().map(|x| x * factor);
    a.tape()
        .record(out, &[a], Box::new(move |g, _| vec![Some(g.map(|x| x * factor))]))
}

pub fn sum(a: Var<'_>) -> Var<'_> {
    let va = a.value();
    let shape = va.shape().to_vec();
    let out = Tensor::scalar(va.sum());
    a.tape().record(
        out,
        &[a],
        Box::new(move |g, _| vec![Some(Tensor::full(shape.clone(), g.data()[0]))]),
    )
}

pub fn mean(a: Var<'_>) -> Var<'_> {
    let n = a.value().len().max(1) as f64;
    scale(sum(a), 1.0 / n)
}

pub fn reshape<'t>(a: Var<'t>, shape: &[usize]) -> Result<Var<'t>> {
    let src_shape = a.shape();
    let out = (*a.value()).clone().reshape(shape.to_vec())?;
    Ok(a.tape().record(
        out,
        &[a],
        Box::new(move |g, _| vec![Some(g.clone().reshape(src_shape.clone()).unwrap())]),
    ))
}

/// Concatenates along the last axis; earlier operands' features come first.
pub fn concat<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let Some(first) = parts.first() else {
        return shape_err("concat", "no operands");
    };
    let s0 = first.shape();
    let lead = &s0[..s0.len() - 1];
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let s = p.shape();
        if s.len() != s0.len() || &s[..s.len() - 1] != lead {
            return shape_err("concat", format!("leading dims {:?} vs {:?}", s0, s));
        }
        widths.push(s[s.len() - 1]);
    }
    let rows: usize = lead.iter().product();
    let total: usize = widths.iter().sum();
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let mut data = vec![0.0; rows * total];
    for r in 0..rows {
        let mut off = r * total;
        for (v, &w) in values.iter().zip(&widths) {
            data[off..off + w].copy_from_slice(&v.data()[r * w..(r + 1) * w]);
            off += w;
        }
    }
    let mut out_shape = lead.to_vec();
    out_shape.push(total);
    let out = Tensor::new(out_shape, data)?;
    let lead = lead.to_vec();
    Ok(first.tape().record(
        out,
        parts,
        Box::new(move |g, needs| {
            let mut start = 0;
            widths
                .iter()
                .zip(needs)
                .map(|(&w, &need)| {
                    let s = start;
                    start += w;
                    need.then(|| {
                        let mut d = vec![0.0; rows * w];
                        for r in 0..rows {
                            d[r * w..(r + 1) * w]
                                .copy_from_slice(&g.data()[r * total + s..r * total + s + w]);
                        }
                        let mut shape = lead.clone();
                        shape.push(w);
                        Tensor::new(shape, d).unwrap()
                    })
                })
                .collect()
        }),
    ))
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Slice `len` entries starting at `start` along `axis`.
pub fn narrow<'t>(a: Var<'t>, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
    let shape = a.shape();
    if axis >= shape.len() || start + len > shape[axis] {
        return shape_err(
            "narrow",
            format!("axis {axis} range {start}..{} outside {:?}", start + len, shape),
        );
    }
    let (outer, extent, inner) = split_axis(&shape, axis);
    let va = a.value();
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        data.extend_from_slice(&va.data()[base..base + len * inner]);
    }
    let mut out_shape = shape.clone();
    out_shape[axis] = len;
    let out = Tensor::new(out_shape, data)?;
    Ok(a.tape().record(
        out,
        &[a],
        Box::new(move |g, _| {
            let mut d = vec![0.0; outer * extent * inner];
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                d[base..base + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::new(shape.clone(), d).unwrap())]
        }),
    ))
}

/// Gathers entries along `axis` at `indices` (repeats allowed); the
/// backward pass scatter-adds into the source positions.
pub fn index_select<'t>(a: Var<'t>, axis: usize, indices: &[usize]) -> Result<Var<'t>> {
    let shape = a.shape();
    if axis >= shape.len() {
        return shape_err("index_select", format!("axis {axis} outside {shape:?}"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= shape[axis]) {
        return shape_err("index_select", format!("index {bad} outside axis {axis} of {shape:?}"));
    }
    let (outer, extent, inner) = split_axis(&shape, axis);
    let len = indices.len();
    let va = a.value();
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        for &i in indices {
            let base = (o * extent + i) * inner;
            data.extend_from_slice(&va.data()[base..base + inner]);
        }
    }
    let mut out_shape = shape.clone();
    out_shape[axis] = len;
    let out = Tensor::new(out_shape, data)?;
    let indices = indices.to_vec();
    Ok(a.tape().record(
        out,
        &[a],
        Box::new(move |g, _| {
            let mut d = vec![0.0; outer * extent * inner];
            for o in 0..outer {
                for (j, &i) in indices.iter().enumerate() {
                    let src = (o * len + j) * inner;
                    let dst = (o * extent + i) * inner;
                    for (x, y) in d[dst..dst + inner].iter_mut().zip(&g.data()[src..src + inner]) {
                        *x += y;
                    }
                }
            }
            vec![Some(Tensor::new(shape.clone(), d).unwrap())]
        }),
    ))
}

fn swap_middle(data: &[f64], outer: usize, a: usize, b: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        let base = o * a * b * c;
        for i in 0..a {
            for j in 0..b {
                let src = base + (i * b + j) * c;
                let dst = base + (j * a + i) * c;
                out[dst..dst + c].copy_from_slice(&data[src..src + c]);
            }
        }
    }
    out
}

/// Swaps the two spatial axes of `[S,H,W,C]` (or `[H,W,C]`).
pub fn transpose_hw(a: Var<'_>) -> Result<Var<'_>> {
    let shape = a.shape();
    let (outer, h, w, c) = match shape.as_slice() {
        [h, w, c] => (1, *h, *w, *c),
        [s, h, w, c] => (*s, *h, *w, *c),
        _ => return shape_err("transpose_hw", format!("expected rank 3 or 4, got {shape:?}")),
    };
    let data = swap_middle(a.value().data(), outer, h, w, c);
    let mut out_shape = shape.clone();
    let r = shape.len();
    out_shape.swap(r - 3, r - 2);
    let out = Tensor::new(out_shape, data)?;
    Ok(a.tape().record(
        out,
        &[a],
        Box::new(move |g, _| {
            let d = swap_middle(g.data(), outer, w, h, c);
            vec![Some(Tensor::new(shape.clone(), d).unwrap())]
        }),
    ))
}

/// `x[M,K] * w[K,N] + b[N]`.
pub fn linear<'t>(x: Var<'t>, w: Var<'t>, b: Option<Var<'t>>) -> Result<Var<'t>> {
    let (xs, ws) = (x.shape(), w.shape());
    let (m, k, n) = match (xs.as_slice(), ws.as_slice()) {
        ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
        _ => return shape_err("linear", format!("input {xs:?} with weight {ws:?}")),
    };
    if let Some(b) = &b {
        if b.shape() != [n] {
            return shape_err("linear", format!("bias {:?}, expected [{n}]", b.shape()));
        }
    }
    let (vx, vw) = (x.value(), w.value());
    let mut out = matmul(vx.data(), vw.data(), m, k, n);
    if let Some(b) = &b {
        let vb = b.value();
        for row in out.chunks_mut(n) {
            for (o, bb) in row.iter_mut().zip(vb.data()) {
                *o += bb;
            }
        }
    }
    let out = Tensor::new(vec![m, n], out)?;
    let mut parents = vec![x, w];
    parents.extend(b);
    Ok(x.tape().record(
        out,
        &parents,
        Box::new(move |g, needs| {
            let gx = needs[0].then(|| {
                let mut d = vec![0.0; m * k];
                gemm(
                    m,
                    n,
                    k,
                    1.0,
                    View::rows(g.data(), 0, n),
                    View::transposed(vw.data(), 0, n),
                    0.0,
                    ViewMut::rows(&mut d, 0, k),
                );
                Tensor::new(vec![m, k], d).unwrap()
            });
            let gw = needs[1].then(|| {
                let mut d = vec![0.0; k * n];
                gemm(
                    k,
                    m,
                    n,
                    1.0,
                    View::transposed(vx.data(), 0, k),
                    View::rows(g.data(), 0, n),
                    0.0,
                    ViewMut::rows(&mut d, 0, n),
                );
                Tensor::new(vec![k, n], d).unwrap()
            });
            let mut grads = vec![gx, gw];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| {
                    let mut d = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (a, b) in d.iter_mut().zip(row) {
                            *a += b;
                        }
                    }
                    Tensor::new(vec![n], d).unwrap()
                }));
            }
            grads
        }),
    ))
}
