//! Shared fixtures for the benchmarks.

use gaussmag_core::{
    build_step_matrices, derive_couplings, initial_state, FilterConfig, GaussianState, PhysicalParams,
};

/// Default-parameter run of `t_final` seconds at `tau = 1e-8` s.
pub fn fixture_config(t_final: f64) -> FilterConfig {
    let mut c = FilterConfig::new(
        derive_couplings(&PhysicalParams::default()).expect("defaults are valid"),
        1e-12,
    );
    c.t_final = t_final;
    c
}

/// Prior state after a few interaction maps, so the field, atoms and probe
/// are all correlated.
pub fn correlated_state() -> GaussianState {
    let c = fixture_config(1e-3);
    let m = build_step_matrices(&c.couplings, 1e-6, 1.0, false).expect("valid step");
    let mut state = initial_state(c.prior_width, 1.0).expect("valid prior");
    for _ in 0..3 {
        state = state.linear_transform(&m.s).expect("dimensions agree");
    }
    state
}
