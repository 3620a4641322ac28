// Copyright (c) The fastpay-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Randomized end-to-end runs of the simulator. The acceptance target runs
//! the same properties with more cases and fixed seeds.

use fastpay_core::simulator::{
    oracle_mismatches, random_script, reference_execution, run_scenario, CommitteeShape, Schedule,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn committee() -> impl Strategy<Value = CommitteeShape> {
    (0usize..3, prop::sample::select(vec![1u32, 2, 4])).prop_map(|(faults_tolerated, shards)| CommitteeShape {
        faults_tolerated,
        shards,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn no_schedule_breaks_safety(shape in committee(), seed in any::<u64>(), users in 2u32..7, honest in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let script = random_script(&mut rng, users, 8, honest);
        let trace = run_scenario(shape, Schedule::random(seed, shape.faults_tolerated), &script).unwrap();
        let violations: Vec<_> = trace.violations().collect();
        prop_assert!(violations.is_empty(), "{:?}\n{}", violations, script);
    }

    #[test]
    fn honest_clients_match_the_reference(shape in committee(), seed in any::<u64>(), users in 2u32..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let script = random_script(&mut rng, users, 10, true);
        let trace = run_scenario(shape, Schedule::random(seed, shape.faults_tolerated), &script).unwrap();
        let reference = reference_execution(&script).unwrap();
        prop_assert_eq!(&trace.outcomes, &reference.outcomes, "{}", script);
        prop_assert!(trace.unsettled.is_empty());
        prop_assert!(oracle_mismatches(&trace, &reference).is_empty(), "{:?} vs {:?}\n{}", trace.balances, reference.balances, script);
        prop_assert_eq!(&trace.payouts, &reference.payouts);
    }
}
