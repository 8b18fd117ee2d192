//! Finite-difference check of the recurrent-convolutional pair with respect
//! to its input and every trainable parameter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rcunet_tensor::gradcheck::cases::{project, separated, uniform, STEP};
use rcunet_tensor::gradcheck::{check_gradients, GradCheckReport};
use rcunet_tensor::{ParamId, ParamStore, TensorError};

use super::layers::{Ctx, Init, Mode, RcPair};
use super::spec::Axis;
use crate::error::{CoreError, Result};

/// RC pair on a `[2, 4, 4, 3]` map with 4 recurrent units and 3 output
/// maps; even seeds sweep frequency, odd seeds time.
pub fn rc_pair_case(seed: u64) -> Result<GradCheckReport> {
    let axis = if seed.is_multiple_of(2) { Axis::Freq } else { Axis::Time };
    let mut store = ParamStore::new();
    let rc = RcPair::new(
        &mut Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        },
        "rc",
        3,
        4,
        axis,
        3,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let ids: Vec<ParamId> = store
        .iter()
        .filter(|p| p.kind.is_trainable())
        .map(|p| store.id_of(&p.name).expect("registered"))
        .collect();
    let mut inputs = vec![separated(&[2, 4, 4, 3], &mut rng)];
    for &id in &ids {
        let shape = store.get(id).value.shape().to_vec();
        inputs.push(uniform(&shape, 0.5, &mut rng));
    }
    let store = &store;
    let report = check_gradients(&inputs, STEP, |tape, vars| {
        let mut ctx = Ctx::new(tape, store, Mode::Train);
        for (id, v) in ids.iter().zip(&vars[1..]) {
            ctx.overrides.insert(*id, *v);
        }
        let y = rc.forward(&mut ctx, vars[0]).map_err(|e| match e {
            CoreError::Tensor(t) => t,
            other => TensorError::InvalidArgument {
                op: "rc_pair",
                detail: other.to_string(),
            },
        })?;
        project(y, seed)
    })?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rcunet_tensor::gradcheck::cases::TOLERANCE;

    #[test]
    fn both_axes_pass() {
        for seed in 0..2 {
            let r = rc_pair_case(seed).unwrap();
            assert!(r.max_rel_error < TOLERANCE, "seed {seed}: {r:?}");
        }
    }
}
