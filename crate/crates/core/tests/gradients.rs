use std::time::Instant;

use tritrain::gradsuite::gradient_suite;

#[test]
fn every_analytic_gradient_matches_finite_differences() {
    let start = Instant::now();
    let results = gradient_suite(20, 2024).unwrap();
    for r in &results {
        assert!(r.cases >= 20);
        assert!(r.max_rel_err < 1e-4, "{}: relative error {:.3e}", r.name, r.max_rel_err);
    }
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn second_seed_also_passes() {
    for r in gradient_suite(20, 99).unwrap() {
        assert!(r.max_rel_err < 1e-4, "{}: relative error {:.3e}", r.name, r.max_rel_err);
    }
}
