//! Cross-module invariants on the public API.

use ou_kernels::experiments::{ExperimentConfig, Operator};
use ou_kernels::mehler::{dkdt, evaluate_kernel, mehler_k};
use ou_kernels::oracle::scalar_zero_count;
use ou_kernels::report::config_hash;
use ou_kernels::verify::battery_models;
use ou_kernels::zeros::{ZeroScanner, T_FLOOR};
use ou_kernels::OuModel;
use proptest::prelude::*;

fn jordan() -> OuModel {
    battery_models().into_iter().find(|m| m.name == "jordan2d").unwrap().model
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_positive_and_derivative_consistent(t in 0.01f64..5.0, a in -2.0f64..2.0, b in -2.0f64..2.0,
                                                 c in -2.0f64..2.0, d in -2.0f64..2.0) {
        let m = jordan();
        let e = evaluate_kernel(&m, t, &[a, b], &[c, d]).unwrap();
        prop_assert!(e.k > 0.0);
        prop_assert!((e.dk_dt - e.k * e.n).abs() <= 1e-12 * e.k.max(1.0) * e.n.abs().max(1.0));
        prop_assert_eq!(dkdt(&m, t, &[a, b], &[c, d]).unwrap(), e.dk_dt);
    }

    #[test]
    fn standard_kernel_is_symmetric(t in 0.01f64..5.0, x in -3.0f64..3.0, u in -3.0f64..3.0) {
        let m = OuModel::standard(1);
        let (k1, k2) = (mehler_k(&m, t, &[x], &[u]).unwrap(), mehler_k(&m, t, &[u], &[x]).unwrap());
        prop_assert!((k1 - k2).abs() <= 1e-12 * k1);
    }

    #[test]
    fn scalar_scan_matches_cubic(x in -4.0f64..4.0, u in -4.0f64..4.0) {
        let model = OuModel::standard(1);
        let scanner = ZeroScanner::new(&model, 2048).unwrap();
        let scan = scanner.scan(&[x], &[u], false).unwrap();
        prop_assert_eq!(scan.count, scalar_zero_count(x, u, T_FLOOR));
    }

    #[test]
    fn config_hash_ignores_key_order(seed in any::<u64>(), alpha in 3.0f64..1e4) {
        let a: serde_json::Value = serde_json::from_str(&format!(r#"{{"seed":{seed},"alpha":{alpha}}}"#)).unwrap();
        let b: serde_json::Value = serde_json::from_str(&format!(r#"{{"alpha":{alpha},"seed":{seed}}}"#)).unwrap();
        prop_assert_eq!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn alpha_grid_must_exceed_two(alpha in 0.0f64..2.0) {
        let mut cfg = ExperimentConfig::new(OuModel::standard(1).config(), "imagpow:0.5");
        cfg.alpha_grid = vec![alpha, 10.0];
        prop_assert!(cfg.validate().is_err());
    }
}

#[test]
fn operator_names_round_trip() {
    for op in Operator::ALL {
        assert_eq!(op.name().parse::<Operator>().unwrap(), op);
    }
}
