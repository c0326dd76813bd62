//! Fixtures shared by the benchmarks.

use priormatch_core::{PmfHyper, RngHandle};

/// Gamma(10, 1) factors on both sides, K = 25.
pub fn row_a() -> PmfHyper {
    PmfHyper::from_shape_rate(25, 10.0, 1.0, 10.0, 1.0).expect("valid hyperparameters")
}

pub fn rng() -> RngHandle {
    RngHandle::new(1)
}
