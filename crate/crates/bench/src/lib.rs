//! Fixtures shared by the benchmarks.

use wpt_charge::experiment::{placement, setup_for};
use wpt_charge::{ExperimentConfig, Scheme, SimulationSetup};

/// The default 18-device network at cluster radius `d`, placement 0.
pub fn default_setup(scheme: Scheme, d: f64) -> SimulationSetup {
    let config = ExperimentConfig::default();
    let weights = config.weights().expect("default weights");
    let scenario = placement(&config, &weights, d, 0).expect("placement");
    setup_for(&config, scenario, scheme, &weights).expect("setup")
}
