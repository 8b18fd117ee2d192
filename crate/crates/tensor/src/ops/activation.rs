use crate::tape::Var;
use crate::tensor::Tensor;

/// Exponential linear unit with unit scale: `x` for `x > 0`, `exp(x) - 1` otherwise.
pub fn elu(x: Var<'_>) -> Var<'_> {
    let out = x.value().map(|v| if v > 0.0 { v } else { v.exp_m1() });
    let saved = out.clone();
    x.tape().record(
        out,
        &[x],
        Box::new(move |g, _| {
            // For x <= 0 the derivative exp(x) equals output + 1.
            let d = g
                .data()
                .iter()
                .zip(saved.data())
                .map(|(g, &y)| if y > 0.0 { *g } else { g * (y + 1.0) })
                .collect();
            vec![Some(Tensor::new(saved.shape().to_vec(), d).unwrap())]
        }),
    )
}

pub fn tanh(x: Var<'_>) -> Var<'_> {
    let out = x.value().map(f64::tanh);
    let saved = out.clone();
    x.tape().record(
        out,
        &[x],
        Box::new(move |g, _| {
            let d = g
                .data()
                .iter()
                .zip(saved.data())
                .map(|(g, y)| g * (1.0 - y * y))
                .collect();
            vec![Some(Tensor::new(saved.shape().to_vec(), d).unwrap())]
        }),
    )
}

pub fn sigmoid(x: Var<'_>) -> Var<'_> {
    let out = x.value().map(crate::ops::recurrent::sigmoid);
    let saved = out.clone();
    x.tape().record(
        out,
        &[x],
        Box::new(move |g, _| {
            let d = g
                .data()
                .iter()
                .zip(saved.data())
                .map(|(g, y)| g * y * (1.0 - y))
                .collect();
            vec![Some(Tensor::new(saved.shape().to_vec(), d).unwrap())]
        }),
    )
}
