mod common;

use prepline_core::dataset::{Column, Dataset};
use prepline_core::ops::{apply_physical, catalog, lookup, BoundOp, Family};
use prepline_core::rng::SeededRng;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn shape_and_finiteness_contracts(seed in any::<u64>()) {
        let d = common::random_table(&mut SeededRng::new(seed));
        for op in common::bound_catalog() {
            let v = common::contract_violation(&op, &d);
            prop_assert!(v.is_none(), "{:?}", v);
        }
    }

    #[test]
    fn idempotent_where_claimed(seed in any::<u64>()) {
        let d = common::random_table(&mut SeededRng::new(seed));
        for name in common::IDEMPOTENT_OPS {
            let v = common::idempotence_violation(name, &d);
            prop_assert!(v.is_none(), "{:?}", v);
        }
    }
}

#[test]
fn closed_form_examples() {
    let failures = common::closed_form_failures();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn catalog_counts() {
    assert_eq!(Family::ALL.len(), 6);
    assert_eq!(catalog().len(), 18);
    for f in Family::ALL {
        assert!(f.ops().count() >= 2, "{f:?}");
    }
}

#[test]
fn poly_features_is_not_idempotent() {
    let d = Dataset::new("d", vec![Column::numeric_dense("a", &[1.0, 2.0]), Column::numeric_dense("b", &[3.0, 5.0])]).unwrap();
    let op = BoundOp::with_defaults(lookup("poly_features").unwrap()).unwrap();
    let once = apply_physical(&op, &d).unwrap();
    assert_ne!(apply_physical(&op, &once).unwrap().column_count(), once.column_count());
}
