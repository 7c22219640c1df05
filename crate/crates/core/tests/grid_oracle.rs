mod common;

use safebo_core::grid::Variant;

#[test]
fn safeopt_steps_match_enumeration() {
    for seed in 0..40 {
        common::check_random_instance(seed, Variant::SafeOpt).unwrap();
    }
}

#[test]
fn losbo_steps_match_enumeration() {
    for seed in 100..140 {
        common::check_random_instance(seed, Variant::Losbo).unwrap();
    }
}
