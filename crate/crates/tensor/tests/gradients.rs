use rcunet_tensor::gradcheck::cases::{self, TOLERANCE};

#[test]
fn every_op_passes_finite_differences() {
    for (name, case) in cases::all() {
        for seed in 0..3 {
            let report = case(seed).unwrap();
            assert!(
                report.max_rel_error < TOLERANCE,
                "{name} seed {seed}: {report:?}"
            );
            assert!(report.checked > 0);
        }
    }
}
