mod common;

use common::*;
use gazesep::losses::RankVariant;

fn assert_report(r: GradReport) {
    assert!(r.passed(), "{} at D={}: worst {:e} over {} points ({} skipped)", r.name, r.dim, r.worst, r.checked, r.skipped);
}

#[test]
fn distill_gradient() {
    DIMS.iter().for_each(|&d| assert_report(distill_suite(d)));
}

#[test]
fn irrelevant_gradient() {
    DIMS.iter().for_each(|&d| assert_report(irrelevant_suite(d)));
}

#[test]
fn gaze_gradient_away_from_collinearity() {
    DIMS.iter().for_each(|&d| assert_report(gaze_suite(d)));
}

#[test]
fn rank_gradient_away_from_hinge() {
    DIMS.iter().for_each(|&d| assert_report(rank_suite(d)));
}

#[test]
fn variant_gradients() {
    for kind in RankVariant::ALL {
        DIMS.iter().for_each(|&d| assert_report(variant_suite(kind, d)));
    }
}

#[test]
fn mock_text_token_gradient() {
    DIMS.iter().for_each(|&d| assert_report(mock_encoder_suite(d)));
}

#[test]
fn prompt_objective_gradient() {
    DIMS.iter().for_each(|&d| assert_report(pco_suite(d)));
}

#[test]
fn relative_error_is_scale_free() {
    assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    assert!((relative_error(&[1.0, 0.0], &[1.0, 1e-3]) - 1e-3).abs() < 1e-9);
}
