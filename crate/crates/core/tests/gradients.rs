mod common;

use common::gradient_suite;

#[test]
fn analytic_gradients_match_finite_differences() {
    for check in gradient_suite(20) {
        println!("{:<28} points {:>3}  max rel err {:.2e}", check.name, check.points, check.max_rel_err);
        assert!(check.max_rel_err <= 1e-4, "{} gradient mismatch: {:.3e}", check.name, check.max_rel_err);
    }
}
