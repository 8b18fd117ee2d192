use crate::error::{shape_err, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute error. The subgradient at an exact tie is 0.
pub fn l1_loss<'t>(pred: Var<'t>, target: &Tensor) -> Result<Var<'t>> {
    let ones = Tensor::full(target.shape().to_vec(), 1.0);
    masked_l1_loss(pred, target, &ones)
}

/// Weighted mean absolute error `sum(m * |p - t|) / sum(m)`; zero-weight
/// elements (padding) contribute neither to the value nor to the gradient.
pub fn masked_l1_loss<'t>(pred: Var<'t>, target: &Tensor, mask: &Tensor) -> Result<Var<'t>> {
    let shape = pred.shape();
    if shape != target.shape() || shape != mask.shape() {
        return shape_err(
            "l1_loss",
            format!(
                "pred {:?}, target {:?}, mask {:?}",
                shape,
                target.shape(),
                mask.shape()
            ),
        );
    }
    let vp = pred.value();
    let weight: f64 = mask.sum();
    let norm = if weight > 0.0 { 1.0 / weight } else { 0.0 };
    let total: f64 = vp
        .data()
        .iter()
        .zip(target.data())
        .zip(mask.data())
        .map(|((p, t), m)| m * (p - t).abs())
        .sum();
    let grad: Vec<f64> = vp
        .data()
        .iter()
        .zip(target.data())
        .zip(mask.data())
        .map(|((p, t), m)| m * sign(p - t) * norm)
        .collect();
    Ok(pred.tape().record(
        Tensor::scalar(total * norm),
        &[pred],
        Box::new(move |g, _| {
            let s = g.data()[0];
            let d = grad.iter().map(|v| v * s).collect();
            vec![Some(Tensor::new(shape.clone(), d).unwrap())]
        }),
    ))
}
