mod common;

use proptest::prelude::*;

use common::*;
use semode_core::traj_c2::C2Config;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn c0_output_conforms(seed in any::<u64>()) {
        let (c, p) = random_case(&mut rng(seed));
        prop_assert_eq!(check_c0(&c, &p), Ok(()));
    }

    #[test]
    fn partition_matches_exhaustive_search(seed in any::<u64>()) {
        prop_assert_eq!(check_partition(&mut rng(seed)), Ok(()));
    }

    #[test]
    fn tails_meet_junction_and_limits(seed in any::<u64>(), m in 0usize..6) {
        prop_assert_eq!(check_tail(UNBOUNDED[m], &mut rng(seed)), Ok(()));
    }

    #[test]
    fn integrate_twice_recovers_second_derivative(seed in any::<u64>()) {
        prop_assert!(check_integrate_twice(&mut rng(seed)).is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>()) {
        prop_assert!(check_gradient(&mut rng(seed)).is_ok());
    }

    #[test]
    fn exact_c2_fits_are_smooth_and_conform(seed in any::<u64>()) {
        let (c, p) = random_case(&mut rng(seed));
        if let Err(e) = check_c2(&c, &p, &C2Config::default()) {
            prop_assert!(false, "{}", e);
        }
    }
}

#[test]
fn initial_slope_table_is_sharp() {
    let mut r = rng(5);
    for c in table_rows() {
        for _ in 0..5 {
            assert_eq!(check_sharpness(&c, &mut r), Ok(()));
        }
    }
}
