//! Helpers shared by unit tests.

use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::numerics::{GradCheckConfig, GradCheckReport, NumericsError, ParamStore, Tensor};

pub fn to_numerics(e: ModelError) -> NumericsError {
    match e {
        ModelError::Numerics(n) => n,
        other => NumericsError::Shape(other.to_string()),
    }
}

/// Moves every parameter off its structured initialization (zero biases put
/// ReLUs exactly on their kink).
pub fn jitter_params(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        let noise = Tensor::randn(store.get(id).shape(), 0.1, rng);
        store.get_mut(id).add_assign(&noise);
    }
}

pub fn check_seeds(f: impl Fn(u64) -> GradCheckReport) {
    for seed in 0..3 {
        let r = f(seed);
        let bad: Vec<_> = r.coords.iter().filter(|c| !c.smooth || c.rel_err > 1e-4).collect();
        assert!(r.passed, "seed {seed}: max rel err {} non-smooth {} {bad:?}", r.max_rel_err, r.non_smooth);
    }
}

pub fn gc() -> GradCheckConfig {
    GradCheckConfig::default()
}
