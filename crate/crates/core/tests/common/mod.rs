#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use zipgrid::scenario::{load_scenario, Scenario};
use zipgrid::{Network, NetworkState};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

pub fn scenario(name: &str) -> Scenario {
    load_scenario(scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Random state with voltages in `v_range`, currents in ±`i_max`.
pub fn random_state(rng: &mut StdRng, net: &Network, v_range: (f64, f64), i_max: f64) -> NetworkState {
    let (n, m) = (net.n(), net.m());
    NetworkState::new(
        DVector::from_fn(n, |_, _| rng.random_range(-i_max..i_max)),
        DVector::from_fn(m, |_, _| rng.random_range(-i_max..i_max)),
        DVector::from_fn(n, |_, _| rng.random_range(v_range.0..v_range.1)),
    )
}

pub fn random_vector(rng: &mut StdRng, len: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(lo..hi))
}
