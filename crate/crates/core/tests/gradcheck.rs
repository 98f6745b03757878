mod common;

use channelvit::models::Variant;
use common::{check_all_ops, check_model};

#[test]
fn every_op_matches_central_differences_over_ten_seeds() {
    for seed in 0..10 {
        let report = check_all_ops(seed);
        assert!(report.passed(), "seed {seed}: {:#?}", report.failures);
    }
}

#[test]
fn full_model_gradients_match_on_a_parameter_sample() {
    for variant in Variant::ALL {
        for seed in 0..3 {
            let report = check_model(variant, seed, 0.05);
            assert!(report.checked > 20, "{} sampled only {}", variant.as_str(), report.checked);
            assert!(report.passed(), "{:#?}", report.failures);
        }
    }
}
