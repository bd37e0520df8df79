mod common;

use common::{learning_gradient_error, reconstruction_gradient_error};

#[test]
fn learning_gradient_matches_central_differences() {
    for i in 0..24 {
        let err = learning_gradient_error(i);
        assert!(err <= 1e-5, "instance {i}: relative error {err:e}");
    }
}

#[test]
fn reconstruction_gradient_matches_central_differences() {
    for i in 0..24 {
        let err = reconstruction_gradient_error(i);
        assert!(err <= 1e-4, "instance {i}: relative error {err:e}");
    }
}
