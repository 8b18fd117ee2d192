use crate::error::{shape_err, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

/// 2x2 max-pooling with stride 2 over `[S,H,W,C]` (or `[H,W,C]`).
///
/// Odd extents behave as if padded with `-inf`, giving `ceil(H/2) x ceil(W/2)`.
/// Gradients go to the window's maximum; ties resolve to the first element
/// in row-major window order.
pub fn maxpool2x2(input: Var<'_>) -> Result<Var<'_>> {
    let shape = input.shape();
    let (batch, h, w, c) = match *shape.as_slice() {
        [h, w, c] => (1, h, w, c),
        [s, h, w, c] => (s, h, w, c),
        _ => return shape_err("maxpool2x2", format!("expected rank 3 or 4, got {shape:?}")),
    };
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let v = input.value();
    let x = v.data();
    let mut out = vec![0.0; batch * oh * ow * c];
    let mut argmax = vec![0u32; out.len()];
    for s in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let (y, xx) = (2 * oy + dy, 2 * ox + dx);
                        if y >= h || xx >= w {
                            continue;
                        }
                        let idx = ((s * h + y) * w + xx) * c + ch;
                        if best_idx == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                    let o = ((s * oh + oy) * ow + ox) * c + ch;
                    out[o] = best;
                    argmax[o] = best_idx as u32;
                }
            }
        }
    }
    let out_shape = if shape.len() == 3 {
        vec![oh, ow, c]
    } else {
        vec![batch, oh, ow, c]
    };
    let out = Tensor::new(out_shape, out)?;
    Ok(input.tape().record(
        out,
        &[input],
        Box::new(move |g, _| {
            let mut gx = vec![0.0; shape.iter().product()];
            for (gv, &idx) in g.data().iter().zip(&argmax) {
                gx[idx as usize] += gv;
            }
            vec![Some(Tensor::new(shape.clone(), gx).unwrap())]
        }),
    ))
}
