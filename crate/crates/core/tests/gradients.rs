mod common;

use std::time::Instant;

use common::gradsuite::*;
use gssl::autodiff::{GradCheckOptions, OP_NAMES};

const TOL: f64 = 1e-3;

fn assert_all_pass(results: &[CaseResult]) {
    for r in results {
        println!(
            "{:<20} max_rel_err {:.2e} checked {:>5} skipped {:>3}",
            r.label, r.report.max_rel_err, r.report.checked, r.report.skipped_kinks
        );
    }
    let failing: Vec<_> = results.iter().filter(|r| !r.report.passes(TOL)).map(|r| (&r.label, &r.report.worst)).collect();
    assert!(failing.is_empty(), "{failing:#?}");
}

#[test]
fn every_op_matches_finite_differences() {
    let results = check_ops(GradCheckOptions::default());
    assert_all_pass(&results);
    let covered = ops_covered(&results);
    let missing: Vec<_> = OP_NAMES.iter().filter(|op| !covered.contains(*op)).collect();
    assert!(missing.is_empty(), "ops without a check: {missing:?}");
}

#[test]
fn every_method_loss_matches_finite_differences() {
    let start = Instant::now();
    assert_all_pass(&check_methods(GradCheckOptions::default()));
    println!("method suite took {:.1?}", start.elapsed());
}
