//! Fixtures shared by the benchmarks.

use qkcm_core::{sample_environment, EnvParams, Environment, ModelKind};

/// Square window of side `side` with easy density `pi`.
pub fn window(kind: ModelKind, pi: f64, side: usize, seed: u64) -> Environment {
    sample_environment(EnvParams::new(kind, pi, side, side, seed)).expect("valid benchmark parameters")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_has_requested_shape() {
        let env = window(ModelKind::MixedFa, 0.5, 9, 1);
        assert_eq!((env.width(), env.height()), (9, 9));
    }
}
