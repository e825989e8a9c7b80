mod common;

use common::oracle::*;

const INSTANCES: u64 = 120;

#[test]
fn wald_curve_matches_dense_inverse_oracle() {
    wald_curve_matches_dense_inverse(INSTANCES).unwrap();
}

#[test]
fn partial_break_matches_dense_inverse_oracle() {
    partial_break_matches_dense_inverse(INSTANCES / 4).unwrap();
}

#[test]
fn eicker_white_matrix_matches_loop_oracle() {
    eicker_white_matrix_matches_loop(INSTANCES).unwrap();
}

#[test]
fn scores_and_omega_match_double_sum_oracle() {
    scores_and_omega_match_double_sums(INSTANCES).unwrap();
}

#[test]
fn wald_reparametrization_invariance() {
    wald_is_invariant_to_reparametrization(INSTANCES).unwrap();
}
