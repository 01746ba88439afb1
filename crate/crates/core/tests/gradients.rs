mod common;

use common::{check, ROLES};
use proptest::prelude::*;

/// Agreement required between tape and central-difference gradients.
const TOL: f64 = 1e-6;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tape_gradients_match_central_differences(seed in any::<u64>()) {
        for role in ROLES {
            let err = check(role, seed);
            prop_assert!(err < TOL, "{role:?} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn worst_case_over_fixed_seeds() {
    for role in ROLES {
        let worst = (0..10).map(|s| check(role, s)).fold(0.0, f64::max);
        println!("{role:?} {worst:e}");
        assert!(worst < TOL, "{role:?}: {worst:e}");
    }
}
