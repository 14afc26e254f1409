mod common;

const CASES: u32 = 1000;

#[test]
fn projections_are_idempotent() {
    common::projection_idempotence(CASES).unwrap();
}

#[test]
fn projections_satisfy_the_obtuse_angle_condition() {
    common::projection_optimality(CASES).unwrap();
}

#[test]
fn projections_are_nonexpansive() {
    common::projection_nonexpansive(CASES).unwrap();
}

#[test]
fn cobb_douglas_is_homogeneous_of_degree_one() {
    common::cobb_douglas_homogeneity(CASES).unwrap();
}

#[test]
fn cobb_douglas_euler_identity() {
    common::cobb_douglas_euler(CASES).unwrap();
}

#[test]
fn cobb_douglas_pseudo_gradient_is_monotone() {
    common::cobb_douglas_monotone(CASES).unwrap();
}

#[test]
fn gradients_match_central_differences() {
    common::gradients_match_finite_differences(CASES).unwrap();
}
