//! Fused GRU and LSTM sequence ops.
//!
//! Both take a batch of `M` independent sequences `[M, T, K]` that share one
//! set of weights and return every hidden state `[M, T, H]` in the input's
//! time order. With `reverse` the recurrence runs from `t = T-1` down to 0.
//! Backpropagation through time happens inside the op.

use crate::error::{shape_err, Result};
use crate::gemm::{gemm, matmul, View, ViewMut};
use crate::tape::Var;
use crate::tensor::Tensor;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// GRU weights with gate blocks ordered `[reset | update | candidate]`:
///
/// ```text
/// r  = sigmoid(x Wx_r + h Wh_r + b_r)
/// z  = sigmoid(x Wx_z + h Wh_z + b_z)
/// n  = tanh(x Wx_n + b_n + r * (h Wh_n))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GruWeights<'t> {
    /// `[K, 3H]`
    pub w_x: Var<'t>,
    /// `[H, 3H]`
    pub w_h: Var<'t>,
    /// `[3H]`
    pub bias: Var<'t>,
}

/// LSTM weights with gate blocks ordered `[input | forget | cell | output]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'t> {
    /// `[K, 4H]`
    pub w_x: Var<'t>,
    /// `[H, 4H]`
    pub w_h: Var<'t>,
    /// `[4H]`
    pub bias: Var<'t>,
}

struct SeqDims {
    m: usize,
    t: usize,
    k: usize,
    h: usize,
}

fn seq_dims(
    op: &'static str,
    x: &[usize],
    w_x: &[usize],
    w_h: &[usize],
    bias: &[usize],
    gates: usize,
) -> Result<SeqDims> {
    let [m, t, k] = *x else {
        return shape_err(op, format!("input must be [M,T,K], got {x:?}"));
    };
    let [wk, wg] = *w_x else {
        return shape_err(op, format!("input weights must be rank 2, got {w_x:?}"));
    };
    if wk != k || wg % gates != 0 {
        return shape_err(
            op,
            format!("input weights {w_x:?} do not match input width {k} with {gates} gates"),
        );
    }
    let h = wg / gates;
    if w_h != [h, gates * h] || bias != [gates * h] {
        return shape_err(
            op,
            format!("recurrent weights {w_h:?} / bias {bias:?} inconsistent with hidden size {h}"),
        );
    }
    Ok(SeqDims { m, t, k, h })
}

fn check_state(op: &'static str, state: &Option<Var<'_>>, m: usize, h: usize) -> Result<()> {
    if let Some(s) = state {
        if s.shape() != [m, h] {
            return shape_err(op, format!("initial state {:?}, expected [{m}, {h}]", s.shape()));
        }
    }
    Ok(())
}

/// Time index processed at step `s`.
fn time_at(step: usize, t: usize, reverse: bool) -> usize {
    if reverse {
        t - 1 - step
    } else {
        step
    }
}

/// `x[M*T, K] * W[K, G] + b`, rows in (sequence, time) order.
fn input_projection(x: &[f64], w: &[f64], b: &[f64], rows: usize, k: usize, g: usize) -> Vec<f64> {
    let mut a = matmul(x, w, rows, k, g);
    for row in a.chunks_mut(g) {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
    a
}

/// Weight gradients shared by both cells: `dWx = X^T dA`, `dX = dA Wx^T`, `db = sum dA`.
fn input_grads(
    x: &[f64],
    w_x: &[f64],
    da: &[f64],
    d: &SeqDims,
    g: usize,
    needs: (bool, bool, bool),
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let rows = d.m * d.t;
    let gx = needs.0.then(|| {
        let mut out = vec![0.0; rows * d.k];
        gemm(
            rows,
            g,
            d.k,
            1.0,
            View::rows(da, 0, g),
            View::transposed(w_x, 0, g),
            0.0,
            ViewMut::rows(&mut out, 0, d.k),
        );
        Tensor::new(vec![d.m, d.t, d.k], out).unwrap()
    });
    let gw = needs.1.then(|| {
        let mut out = vec![0.0; d.k * g];
        gemm(
            d.k,
            rows,
            g,
            1.0,
            View::transposed(x, 0, d.k),
            View::rows(da, 0, g),
            0.0,
            ViewMut::rows(&mut out, 0, g),
        );
        Tensor::new(vec![d.k, g], out).unwrap()
    });
    let gb = needs.2.then(|| {
        let mut out = vec![0.0; g];
        for row in da.chunks(g) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Tensor::new(vec![g], out).unwrap()
    });
    (gx, gw, gb)
}

fn assemble_parents<'t>(x: Var<'t>, w_x: Var<'t>, w_h: Var<'t>, b: Var<'t>, states: &[Option<Var<'t>>]) -> Vec<Var<'t>> {
    let mut parents = vec![x, w_x, w_h, b];
    parents.extend(states.iter().flatten().copied());
    parents
}

pub fn gru_seq<'t>(
    x: Var<'t>,
    w: &GruWeights<'t>,
    h0: Option<Var<'t>>,
    reverse: bool,
) -> Result<Var<'t>> {
    let d = seq_dims("gru_seq", &x.shape(), &w.w_x.shape(), &w.w_h.shape(), &w.bias.shape(), 3)?;
    check_state("gru_seq", &h0, d.m, d.h)?;
    let (m, t, h) = (d.m, d.t, d.h);
    let g = 3 * h;
    let (vx, vwx, vwh, vb) = (x.value(), w.w_x.value(), w.w_h.value(), w.bias.value());
    let a = input_projection(vx.data(), vwx.data(), vb.data(), m * t, d.k, g);

    // Step-major saved activations: index [step][seq][unit].
    let per = m * h;
    let mut r_s = vec![0.0; t * per];
    let mut z_s = vec![0.0; t * per];
    let mut n_s = vec![0.0; t * per];
    let mut un_s = vec![0.0; t * per];
    let mut hprev_s = vec![0.0; t * per];
    let mut out = vec![0.0; m * t * h];

    let mut hcur = match &h0 {
        Some(h0) => h0.value().data().to_vec(),
        None => vec![0.0; per],
    };
    let mut u = vec![0.0; m * g];
    for step in 0..t {
        let ti = time_at(step, t, reverse);
        gemm(
            m,
            h,
            g,
            1.0,
            View::rows(&hcur, 0, h),
            View::rows(vwh.data(), 0, g),
            0.0,
            ViewMut::rows(&mut u, 0, g),
        );
        hprev_s[step * per..(step + 1) * per].copy_from_slice(&hcur);
        for s in 0..m {
            let arow = &a[(s * t + ti) * g..(s * t + ti + 1) * g];
            let urow = &u[s * g..(s + 1) * g];
            for j in 0..h {
                let idx = step * per + s * h + j;
                let r = sigmoid(arow[j] + urow[j]);
                let z = sigmoid(arow[h + j] + urow[h + j]);
                let un = urow[2 * h + j];
                let n = (arow[2 * h + j] + r * un).tanh();
                let hp = hcur[s * h + j];
                let hn = (1.0 - z) * n + z * hp;
                r_s[idx] = r;
                z_s[idx] = z;
                n_s[idx] = n;
                un_s[idx] = un;
                hcur[s * h + j] = hn;
                out[(s * t + ti) * h + j] = hn;
            }
        }
    }

    let out = Tensor::new(vec![m, t, h], out)?;
    let has_h0 = h0.is_some();
    let parents = assemble_parents(x, w.w_x, w.w_h, w.bias, &[h0]);
    Ok(x.tape().record(
        out,
        &parents,
        Box::new(move |gout, needs| {
            let gout = gout.data();
            let mut da = vec![0.0; m * t * g];
            let mut dwh = vec![0.0; h * g];
            let mut carry = vec![0.0; per];
            let mut du = vec![0.0; m * g];
            let mut dprev = vec![0.0; per];
            for step in (0..t).rev() {
                let ti = time_at(step, t, reverse);
                for s in 0..m {
                    for j in 0..h {
                        let idx = step * per + s * h + j;
                        let dh = carry[s * h + j] + gout[(s * t + ti) * h + j];
                        let (r, z, n, un) = (r_s[idx], z_s[idx], n_s[idx], un_s[idx]);
                        let hp = hprev_s[idx];
                        let dn = dh * (1.0 - z);
                        let dz = dh * (hp - n);
                        let dnp = dn * (1.0 - n * n);
                        let drp = dnp * un * r * (1.0 - r);
                        let dzp = dz * z * (1.0 - z);
                        let arow = (s * t + ti) * g;
                        da[arow + j] = drp;
                        da[arow + h + j] = dzp;
                        da[arow + 2 * h + j] = dnp;
                        du[s * g + j] = drp;
                        du[s * g + h + j] = dzp;
                        du[s * g + 2 * h + j] = dnp * r;
                        dprev[s * h + j] = dh * z;
                    }
                }
                gemm(
                    h,
                    m,
                    g,
                    1.0,
                    View::transposed(&hprev_s, step * per, h),
                    View::rows(&du, 0, g),
                    1.0,
                    ViewMut::rows(&mut dwh, 0, g),
                );
                gemm(
                    m,
                    g,
                    h,
                    1.0,
                    View::rows(&du, 0, g),
                    View::transposed(vwh.data(), 0, g),
                    1.0,
                    ViewMut::rows(&mut dprev, 0, h),
                );
                std::mem::swap(&mut carry, &mut dprev);
            }
            let (gx, gwx, gb) =
                input_grads(vx.data(), vwx.data(), &da, &d, g, (needs[0], needs[1], needs[3]));
            let mut grads = vec![
                gx,
                gwx,
                needs[2].then(|| Tensor::new(vec![h, g], dwh.clone()).unwrap()),
                gb,
            ];
            if has_h0 {
                grads.push(needs[4].then(|| Tensor::new(vec![m, h], carry.clone()).unwrap()));
            }
            grads
        }),
    ))
}

/// ```text
/// i = sigmoid(.), f = sigmoid(.), g = tanh(.), o = sigmoid(.)
/// c' = f * c + i * g
/// h' = o * tanh(c')
/// ```
pub fn lstm_seq<'t>(
    x: Var<'t>,
    w: &LstmWeights<'t>,
    h0: Option<Var<'t>>,
    c0: Option<Var<'t>>,
    reverse: bool,
) -> Result<Var<'t>> {
    let d = seq_dims("lstm_seq", &x.shape(), &w.w_x.shape(), &w.w_h.shape(), &w.bias.shape(), 4)?;
    check_state("lstm_seq", &h0, d.m, d.h)?;
    check_state("lstm_seq", &c0, d.m, d.h)?;
    let (m, t, h) = (d.m, d.t, d.h);
    let g = 4 * h;
    let (vx, vwx, vwh, vb) = (x.value(), w.w_x.value(), w.w_h.value(), w.bias.value());
    let a = input_projection(vx.data(), vwx.data(), vb.data(), m * t, d.k, g);

    let per = m * h;
    // gates[step][seq][4H] after nonlinearity
    let mut gates = vec![0.0; t * m * g];
    let mut tanh_c = vec![0.0; t * per];
    let mut cprev_s = vec![0.0; t * per];
    let mut hprev_s = vec![0.0; t * per];
    let mut out = vec![0.0; m * t * h];

    let mut hcur = h0.as_ref().map_or_else(|| vec![0.0; per], |v| v.value().data().to_vec());
    let mut ccur = c0.as_ref().map_or_else(|| vec![0.0; per], |v| v.value().data().to_vec());
    let mut u = vec![0.0; m * g];
    for step in 0..t {
        let ti = time_at(step, t, reverse);
        gemm(
            m,
            h,
            g,
            1.0,
            View::rows(&hcur, 0, h),
            View::rows(vwh.data(), 0, g),
            0.0,
            ViewMut::rows(&mut u, 0, g),
        );
        hprev_s[step * per..(step + 1) * per].copy_from_slice(&hcur);
        cprev_s[step * per..(step + 1) * per].copy_from_slice(&ccur);
        for s in 0..m {
            let arow = &a[(s * t + ti) * g..(s * t + ti + 1) * g];
            let urow = &u[s * g..(s + 1) * g];
            let grow = (step * m + s) * g;
            for j in 0..h {
                let i = sigmoid(arow[j] + urow[j]);
                let f = sigmoid(arow[h + j] + urow[h + j]);
                let gg = (arow[2 * h + j] + urow[2 * h + j]).tanh();
                let o = sigmoid(arow[3 * h + j] + urow[3 * h + j]);
                let c = f * ccur[s * h + j] + i * gg;
                let tc = c.tanh();
                let hn = o * tc;
                gates[grow + j] = i;
                gates[grow + h + j] = f;
                gates[grow + 2 * h + j] = gg;
                gates[grow + 3 * h + j] = o;
                tanh_c[step * per + s * h + j] = tc;
                ccur[s * h + j] = c;
                hcur[s * h + j] = hn;
                out[(s * t + ti) * h + j] = hn;
            }
        }
    }

    let out = Tensor::new(vec![m, t, h], out)?;
    let (has_h0, has_c0) = (h0.is_some(), c0.is_some());
    let parents = assemble_parents(x, w.w_x, w.w_h, w.bias, &[h0, c0]);
    Ok(x.tape().record(
        out,
        &parents,
        Box::new(move |gout, needs| {
            let gout = gout.data();
            let mut da = vec![0.0; m * t * g];
            let mut dwh = vec![0.0; h * g];
            let mut carry_h = vec![0.0; per];
            let mut carry_c = vec![0.0; per];
            let mut du = vec![0.0; m * g];
            let mut dprev = vec![0.0; per];
            for step in (0..t).rev() {
                let ti = time_at(step, t, reverse);
                for s in 0..m {
                    let grow = (step * m + s) * g;
                    for j in 0..h {
                        let idx = step * per + s * h + j;
                        let dh = carry_h[s * h + j] + gout[(s * t + ti) * h + j];
                        let (i, f, gg, o) = (
                            gates[grow + j],
                            gates[grow + h + j],
                            gates[grow + 2 * h + j],
                            gates[grow + 3 * h + j],
                        );
                        let tc = tanh_c[idx];
                        let dc = carry_c[s * h + j] + dh * o * (1.0 - tc * tc);
                        let dip = dc * gg * i * (1.0 - i);
                        let dfp = dc * cprev_s[idx] * f * (1.0 - f);
                        let dgp = dc * i * (1.0 - gg * gg);
                        let dop = dh * tc * o * (1.0 - o);
                        carry_c[s * h + j] = dc * f;
                        let arow = (s * t + ti) * g;
                        for (q, v) in [dip, dfp, dgp, dop].into_iter().enumerate() {
                            da[arow + q * h + j] = v;
                            du[s * g + q * h + j] = v;
                        }
                    }
                }
                gemm(
                    h,
                    m,
                    g,
                    1.0,
                    View::transposed(&hprev_s, step * per, h),
                    View::rows(&du, 0, g),
                    1.0,
                    ViewMut::rows(&mut dwh, 0, g),
                );
                gemm(
                    m,
                    g,
                    h,
                    1.0,
                    View::rows(&du, 0, g),
                    View::transposed(vwh.data(), 0, g),
                    0.0,
                    ViewMut::rows(&mut dprev, 0, h),
                );
                std::mem::swap(&mut carry_h, &mut dprev);
            }
            let (gx, gwx, gb) =
                input_grads(vx.data(), vwx.data(), &da, &d, g, (needs[0], needs[1], needs[3]));
            let mut grads = vec![
                gx,
                gwx,
                needs[2].then(|| Tensor::new(vec![h, g], dwh.clone()).unwrap()),
                gb,
            ];
            let mut next = 4;
            if has_h0 {
                grads.push(needs[next].then(|| Tensor::new(vec![m, h], carry_h.clone()).unwrap()));
                next += 1;
            }
            if has_c0 {
                grads.push(needs[next].then(|| Tensor::new(vec![m, h], carry_c.clone()).unwrap()));
            }
            grads
        }),
    ))
}
