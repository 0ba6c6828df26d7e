use proptest::prelude::*;
use restlog_core::slicing::{mlts, stws, LogSlice};

mod common;
use common::{build_queue, check_slice_invariants, dt_strategy, oracle, queue_strategy};

fn ids(slices: &[LogSlice]) -> Vec<Vec<u64>> {
    slices.iter().map(|s| s.entry_ids()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(600))]

    #[test]
    fn mlts_matches_oracle(raw in queue_strategy(), dt in dt_strategy()) {
        let q = build_queue(&raw);
        prop_assert_eq!(ids(&mlts(&q, dt)), oracle(&q, dt, false));
    }

    #[test]
    fn stws_matches_oracle(raw in queue_strategy(), dt in dt_strategy()) {
        let q = build_queue(&raw);
        prop_assert_eq!(ids(&stws(&q, dt)), oracle(&q, dt, true));
    }

    #[test]
    fn slices_partition_queue_and_respect_bounds(raw in queue_strategy(), dt in dt_strategy()) {
        let q = build_queue(&raw);
        for (sliding, slices) in [(false, mlts(&q, dt)), (true, stws(&q, dt))] {
            let checked = check_slice_invariants(&q, &slices, dt, sliding);
            prop_assert!(checked.is_ok(), "{:?}", checked);
        }
    }
}
