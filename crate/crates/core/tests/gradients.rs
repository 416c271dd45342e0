mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dense_gradients(seed in any::<u64>()) {
        let err = dense_error(seed);
        prop_assert!(err < GRAD_TOL, "rel err {}", err);
    }

    #[test]
    fn conv_gradients(seed in any::<u64>()) {
        let err = conv_error(seed);
        prop_assert!(err < GRAD_TOL, "rel err {}", err);
    }

    #[test]
    fn layer_norm_gradients(seed in any::<u64>()) {
        let err = layer_norm_error(seed);
        prop_assert!(err < GRAD_TOL, "rel err {}", err);
    }

    #[test]
    fn attention_gradients(seed in any::<u64>()) {
        let err = attention_error(seed);
        prop_assert!(err < GRAD_TOL, "rel err {}", err);
    }

    #[test]
    fn loss_gradients(seed in any::<u64>()) {
        for (name, err) in [
            ("bce", bce_error(seed)),
            ("consistency", consistency_error(seed)),
            ("contrastive", contrastive_error(seed)),
            ("total", total_error(seed)),
        ] {
            prop_assert!(err < GRAD_TOL, "{} rel err {}", name, err);
        }
    }
}
