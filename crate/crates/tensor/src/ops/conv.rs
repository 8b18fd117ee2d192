//! "Same" 2-D convolution and strided transposed convolution on
//! channels-last feature maps `[S, H, W, C]` (rank 3 means `S = 1`).

use crate::error::{shape_err, Result};
use crate::gemm::{convert, gemm, Scalar, View, ViewMut};
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct MapDims {
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
}

fn map_dims(op: &'static str, shape: &[usize]) -> Result<MapDims> {
    match *shape {
        [h, w, c] => Ok(MapDims { batch: 1, h, w, c }),
        [batch, h, w, c] => Ok(MapDims { batch, h, w, c }),
        _ => shape_err(op, format!("expected [S,H,W,C] or [H,W,C], got {shape:?}")),
    }
}

fn out_shape(in_shape: &[usize], h: usize, w: usize, c: usize) -> Vec<usize> {
    if in_shape.len() == 3 {
        vec![h, w, c]
    } else {
        vec![in_shape[0], h, w, c]
    }
}

fn check_kernel(
    op: &'static str,
    kernel: &[usize],
    cin: usize,
    square: Option<usize>,
) -> Result<(usize, usize)> {
    let [kh, kw, kc, cout] = *kernel else {
        return shape_err(op, format!("kernel must be [k,k,C_in,C_out], got {kernel:?}"));
    };
    if kh != kw {
        return shape_err(op, format!("kernel must be square, got {kh}x{kw}"));
    }
    if let Some(k) = square {
        if kh != k {
            return shape_err(op, format!("expected {k}x{k} kernel, got {kh}x{kw}"));
        }
    }
    if kc != cin {
        return shape_err(
            op,
            format!("kernel expects {kc} input features but the input has {cin}"),
        );
    }
    Ok((kh, cout))
}

fn check_bias(op: &'static str, bias: &Option<Var<'_>>, cout: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return shape_err(op, format!("bias {:?}, expected [{cout}]", b.shape()));
        }
    }
    Ok(())
}

/// Zero-padded copy of the input in the compute precision.
fn padded<T: Scalar>(x: &[f64], d: MapDims, p: usize) -> Vec<T> {
    let (hp, wp) = (d.h + 2 * p, d.w + 2 * p);
    let mut out = vec![T::default(); d.batch * hp * wp * d.c];
    for s in 0..d.batch {
        for y in 0..d.h {
            let src = ((s * d.h + y) * d.w) * d.c;
            let dst = ((s * hp + y + p) * wp + p) * d.c;
            for (o, &v) in out[dst..dst + d.w * d.c]
                .iter_mut()
                .zip(&x[src..src + d.w * d.c])
            {
                *o = T::from_f64(v);
            }
        }
    }
    out
}

/// Odd-size "same" convolution:
/// `out[s,y,x,o] = bias[o] + sum_{dy,dx,i} in[s,y+dy-p,x+dx-p,i] * kernel[dy,dx,i,o]`
/// with zeros outside the map.
pub fn conv2d<'t>(input: Var<'t>, kernel: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
    let in_shape = input.shape();
    let d = map_dims("conv2d", &in_shape)?;
    let (k, cout) = check_kernel("conv2d", &kernel.shape(), d.c, None)?;
    if k % 2 == 0 {
        return shape_err("conv2d", format!("kernel size must be odd, got {k}"));
    }
    if d.h == 0 || d.w == 0 {
        return shape_err("conv2d", "spatial extents must be at least 1");
    }
    check_bias("conv2d", &bias, cout)?;

    let fast = input.tape().fast_math();
    let (vx, vk) = (input.value(), kernel.value());
    let mut out = if fast {
        conv_same_forward::<f32>(vx.data(), d, vk.data(), k, cout)
    } else {
        conv_same_forward::<f64>(vx.data(), d, vk.data(), k, cout)
    };
    if let Some(b) = &bias {
        add_bias(&mut out, b.value().data());
    }
    let out = Tensor::new(out_shape(&in_shape, d.h, d.w, cout), out)?;

    let mut parents = vec![input, kernel];
    parents.extend(bias);
    Ok(input.tape().record(
        out,
        &parents,
        Box::new(move |g, needs| {
            let (gx, gk) = if fast {
                conv_same_backward::<f32>(vx.data(), d, vk.data(), k, cout, g.data(), needs)
            } else {
                conv_same_backward::<f64>(vx.data(), d, vk.data(), k, cout, g.data(), needs)
            };
            let mut grads = vec![
                gx.map(|v| Tensor::new(in_shape.clone(), v).unwrap()),
                gk.map(|v| Tensor::new(vec![k, k, d.c, cout], v).unwrap()),
            ];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| bias_grad(g.data(), cout)));
            }
            grads
        }),
    ))
}

fn add_bias(out: &mut [f64], bias: &[f64]) {
    let c = bias.len();
    for px in out.chunks_mut(c) {
        for (o, b) in px.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn bias_grad(g: &[f64], c: usize) -> Tensor {
    let mut d = vec![0.0; c];
    for px in g.chunks(c) {
        for (a, b) in d.iter_mut().zip(px) {
            *a += b;
        }
    }
    Tensor::new(vec![c], d).unwrap()
}

// Each output pixel's receptive patch is gathered into one row of a patch
// matrix `[H*W, k*k*C]` whose column order matches the kernel's row-major
// `[k, k, C_in]` prefix, so the forward pass, the kernel gradient and the
// input gradient are each a single product. The forward pass uses the
// column-major copy, which the GEMM packs faster for tall outputs.

/// Gathers the `k*k` patches of sample `s` of the padded map.
fn im2col<T: Scalar>(xp: &[T], d: MapDims, k: usize, s: usize, col: &mut [T]) {
    let p = k / 2;
    let (hp, wp) = (d.h + 2 * p, d.w + 2 * p);
    let base = s * hp * wp * d.c;
    let width = k * k * d.c;
    for y in 0..d.h {
        for x in 0..d.w {
            let row = &mut col[(y * d.w + x) * width..(y * d.w + x + 1) * width];
            for dy in 0..k {
                let src = base + ((y + dy) * wp + x) * d.c;
                let dst = dy * k * d.c;
                row[dst..dst + k * d.c].copy_from_slice(&xp[src..src + k * d.c]);
            }
        }
    }
}

/// Adds column-matrix rows back onto their patches (adjoint of [`im2col`]).
fn col2im<T: Scalar + std::ops::AddAssign>(col: &[T], d: MapDims, k: usize, gxp: &mut [T]) {
    let p = k / 2;
    let wp = d.w + 2 * p;
    let width = k * k * d.c;
    for y in 0..d.h {
        for x in 0..d.w {
            let row = &col[(y * d.w + x) * width..(y * d.w + x + 1) * width];
            for dy in 0..k {
                let dst = ((y + dy) * wp + x) * d.c;
                let src = dy * k * d.c;
                for (o, v) in gxp[dst..dst + k * d.c].iter_mut().zip(&row[src..src + k * d.c]) {
                    *o += *v;
                }
            }
        }
    }
}

/// Column-major variant of [`im2col`]: row `(dy*k + dx)*C + i` of the
/// result holds channel `i` of every pixel's `(dy, dx)` neighbour, so the
/// forward product reads its large operand contiguously along the pixels.
fn im2col_t<T: Scalar>(x: &[f64], d: MapDims, k: usize, s: usize, planes: &mut [T], col_t: &mut [T]) {
    let p = k / 2;
    let (hp, wp) = (d.h + 2 * p, d.w + 2 * p);
    let pixels = d.h * d.w;
    planes.fill(T::default());
    for y in 0..d.h {
        for xx in 0..d.w {
            let src = ((s * d.h + y) * d.w + xx) * d.c;
            for i in 0..d.c {
                planes[(i * hp + y + p) * wp + xx + p] = T::from_f64(x[src + i]);
            }
        }
    }
    for dy in 0..k {
        for dx in 0..k {
            for i in 0..d.c {
                let row = ((dy * k + dx) * d.c + i) * pixels;
                for y in 0..d.h {
                    let src = (i * hp + y + dy) * wp + dx;
                    col_t[row + y * d.w..row + (y + 1) * d.w].copy_from_slice(&planes[src..src + d.w]);
                }
            }
        }
    }
}

fn conv_same_forward<T: Scalar>(
    x: &[f64],
    d: MapDims,
    kernel: &[f64],
    k: usize,
    cout: usize,
) -> Vec<f64> {
    let p = k / 2;
    let pixels = d.h * d.w;
    let width = k * k * d.c;
    let kt = convert::<T>(kernel);
    let mut planes = vec![T::default(); d.c * (d.h + 2 * p) * (d.w + 2 * p)];
    let mut col_t = vec![T::default(); pixels * width];
    let mut prod = vec![T::default(); pixels * cout];
    let mut out = Vec::with_capacity(d.batch * pixels * cout);
    for s in 0..d.batch {
        im2col_t(x, d, k, s, &mut planes, &mut col_t);
        gemm(
            pixels,
            width,
            cout,
            T::from_f64(1.0),
            View::transposed(&col_t, 0, pixels),
            View::rows(&kt, 0, cout),
            T::default(),
            ViewMut::rows(&mut prod, 0, cout),
        );
        out.extend(prod.iter().map(|v| v.to_f64()));
    }
    out
}

#[allow(clippy::type_complexity)]
fn conv_same_backward<T: Scalar + std::ops::AddAssign>(
    x: &[f64],
    d: MapDims,
    kernel: &[f64],
    k: usize,
    cout: usize,
    g: &[f64],
    needs: &[bool],
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let p = k / 2;
    let (hp, wp) = (d.h + 2 * p, d.w + 2 * p);
    let pixels = d.h * d.w;
    let width = k * k * d.c;
    let one = T::from_f64(1.0);
    let xp = if needs[1] { padded::<T>(x, d, p) } else { Vec::new() };
    let kt = convert::<T>(kernel);

    let mut gk = needs[1].then(|| vec![T::default(); width * cout]);
    let mut gx = needs[0].then(|| vec![0.0; x.len()]);
    let mut col = vec![T::default(); pixels * width];
    let mut gxp = vec![T::default(); if needs[0] { hp * wp * d.c } else { 0 }];

    for s in 0..d.batch {
        let gs = convert::<T>(&g[s * pixels * cout..(s + 1) * pixels * cout]);
        if let Some(gk) = gk.as_mut() {
            im2col(&xp, d, k, s, &mut col);
            gemm(
                width,
                pixels,
                cout,
                one,
                View::transposed(&col, 0, width),
                View::rows(&gs, 0, cout),
                one,
                ViewMut::rows(gk, 0, cout),
            );
        }
        if let Some(gx) = gx.as_mut() {
            gemm(
                pixels,
                cout,
                width,
                one,
                View::rows(&gs, 0, cout),
                View::transposed(&kt, 0, cout),
                T::default(),
                ViewMut::rows(&mut col, 0, width),
            );
            gxp.fill(T::default());
            col2im(&col, d, k, &mut gxp);
            for y in 0..d.h {
                let src = ((y + p) * wp + p) * d.c;
                let dst = ((s * d.h + y) * d.w) * d.c;
                for (o, v) in gx[dst..dst + d.w * d.c]
                    .iter_mut()
                    .zip(&gxp[src..src + d.w * d.c])
                {
                    *o = v.to_f64();
                }
            }
        }
    }
    (gx, gk.map(|v| v.into_iter().map(T::to_f64).collect()))
}

/// Transposed convolution: zero-stuff the input by `stride`, take the full
/// correlation with the kernel, then crop `crop` samples from every border.
/// Output extent per axis is `(n-1)*stride + k - 2*crop`; with `k=6`,
/// `stride=2`, `crop=2` this is exactly `2n`.
pub fn conv_transpose2d<'t>(
    input: Var<'t>,
    kernel: Var<'t>,
    bias: Option<Var<'t>>,
    stride: usize,
    crop: usize,
) -> Result<Var<'t>> {
    let in_shape = input.shape();
    let d = map_dims("conv_transpose2d", &in_shape)?;
    let (k, cout) = check_kernel("conv_transpose2d", &kernel.shape(), d.c, None)?;
    if d.h == 0 || d.w == 0 || stride == 0 {
        return shape_err("conv_transpose2d", "spatial extents and stride must be at least 1");
    }
    if (d.h - 1) * stride + k < 2 * crop + 1 || (d.w - 1) * stride + k < 2 * crop + 1 {
        return shape_err("conv_transpose2d", format!("crop {crop} removes the whole output"));
    }
    check_bias("conv_transpose2d", &bias, cout)?;
    let geo = TransposeGeometry {
        d,
        k,
        cout,
        stride,
        crop,
        oh: (d.h - 1) * stride + k - 2 * crop,
        ow: (d.w - 1) * stride + k - 2 * crop,
    };

    let fast = input.tape().fast_math();
    let (vx, vk) = (input.value(), kernel.value());
    let mut out = if fast {
        transpose_forward::<f32>(vx.data(), vk.data(), geo)
    } else {
        transpose_forward::<f64>(vx.data(), vk.data(), geo)
    };
    if let Some(b) = &bias {
        add_bias(&mut out, b.value().data());
    }
    let out = Tensor::new(out_shape(&in_shape, geo.oh, geo.ow, cout), out)?;

    let mut parents = vec![input, kernel];
    parents.extend(bias);
    Ok(input.tape().record(
        out,
        &parents,
        Box::new(move |g, needs| {
            let (gx, gk) = if fast {
                transpose_backward::<f32>(vx.data(), vk.data(), geo, g.data(), needs)
            } else {
                transpose_backward::<f64>(vx.data(), vk.data(), geo, g.data(), needs)
            };
            let mut grads = vec![
                gx.map(|v| Tensor::new(in_shape.clone(), v).unwrap()),
                gk.map(|v| Tensor::new(vec![k, k, d.c, cout], v).unwrap()),
            ];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| bias_grad(g.data(), cout)));
            }
            grads
        }),
    ))
}

#[derive(Clone, Copy)]
struct TransposeGeometry {
    d: MapDims,
    k: usize,
    cout: usize,
    stride: usize,
    crop: usize,
    oh: usize,
    ow: usize,
}

impl TransposeGeometry {
    /// Output coordinate receiving input index `i` through kernel tap `t`
    /// (correlation convention, so the tap index is mirrored).
    fn target(&self, i: usize, t: usize, extent: usize) -> Option<usize> {
        let pos = (i * self.stride + self.k - 1 - t) as isize - self.crop as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

fn transpose_forward<T: Scalar>(x: &[f64], kernel: &[f64], geo: TransposeGeometry) -> Vec<f64> {
    let TransposeGeometry { d, k, cout, .. } = geo;
    let hw = d.h * d.w;
    let xt = convert::<T>(x);
    let kt = convert::<T>(kernel);
    let mut tmp = vec![T::default(); hw * cout];
    let mut out = vec![0.0; d.batch * geo.oh * geo.ow * cout];
    for s in 0..d.batch {
        for ty in 0..k {
            for tx in 0..k {
                let tap = (ty * k + tx) * d.c * cout;
                gemm(
                    hw,
                    d.c,
                    cout,
                    T::from_f64(1.0),
                    View::rows(&xt, s * hw * d.c, d.c),
                    View::rows(&kt, tap, cout),
                    T::from_f64(0.0),
                    ViewMut::rows(&mut tmp, 0, cout),
                );
                for iy in 0..d.h {
                    let Some(oy) = geo.target(iy, ty, geo.oh) else { continue };
                    for ix in 0..d.w {
                        let Some(ox) = geo.target(ix, tx, geo.ow) else { continue };
                        let src = (iy * d.w + ix) * cout;
                        let dst = ((s * geo.oh + oy) * geo.ow + ox) * cout;
                        for o in 0..cout {
                            out[dst + o] += tmp[src + o].to_f64();
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::type_complexity)]
fn transpose_backward<T: Scalar>(
    x: &[f64],
    kernel: &[f64],
    geo: TransposeGeometry,
    g: &[f64],
    needs: &[bool],
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let TransposeGeometry { d, k, cout, .. } = geo;
    let hw = d.h * d.w;
    let xt = convert::<T>(x);
    let kt = convert::<T>(kernel);
    let one = T::from_f64(1.0);
    let mut gathered = vec![T::default(); hw * cout];
    let mut gx = needs[0].then(|| vec![T::default(); x.len()]);
    let mut gk = needs[1].then(|| vec![T::default(); kernel.len()]);
    for s in 0..d.batch {
        for ty in 0..k {
            for tx in 0..k {
                gathered.fill(T::default());
                for iy in 0..d.h {
                    let Some(oy) = geo.target(iy, ty, geo.oh) else { continue };
                    for ix in 0..d.w {
                        let Some(ox) = geo.target(ix, tx, geo.ow) else { continue };
                        let dst = (iy * d.w + ix) * cout;
                        let src = ((s * geo.oh + oy) * geo.ow + ox) * cout;
                        for o in 0..cout {
                            gathered[dst + o] = T::from_f64(g[src + o]);
                        }
                    }
                }
                let tap = (ty * k + tx) * d.c * cout;
                if let Some(gx) = gx.as_mut() {
                    gemm(
                        hw,
                        cout,
                        d.c,
                        one,
                        View::rows(&gathered, 0, cout),
                        View::transposed(&kt, tap, cout),
                        one,
                        ViewMut::rows(gx, s * hw * d.c, d.c),
                    );
                }
                if let Some(gk) = gk.as_mut() {
                    gemm(
                        d.c,
                        hw,
                        cout,
                        one,
                        View::transposed(&xt, s * hw * d.c, d.c),
                        View::rows(&gathered, 0, cout),
                        one,
                        ViewMut::rows(gk, tap, cout),
                    );
                }
            }
        }
    }
    let back = |v: Vec<T>| v.into_iter().map(T::to_f64).collect();
    (gx.map(back), gk.map(back))
}
