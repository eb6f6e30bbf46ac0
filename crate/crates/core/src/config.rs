//! Experiment configuration files.
//!
//! Configs are TOML. Every key is optional; omitted keys take the defaults
//! below. Units: meters, watts, joules, seconds, hertz.
//!
//! ```toml
//! seed = 1
//! trials = 5               # trials per placement
//! placements = 5
//! out_dir = "results"
//! schemes = ["Singl-Univ", "Propo-Univ", "EqlPower"]
//! d_grid = [3.0, 3.9]      # cluster radii (m)
//! p0_grid = [0.25, 0.5, 1.0]
//! weights = [[63, 27, 0], [21, 9, 0], [6, 3, 1], [1, 0, 0]]
//! thresholds = [0.0, 0.3, 0.5, 0.9, 1.0]   # fractions of capacity
//!
//! [physical]
//! tx_power = 1.0
//! battery_capacity_mah = 1000.0
//!
//! [consumption]
//! active_power = 0.012
//! active_probability = 0.25
//! ```
//!
//! Battery capacity is `battery_capacity_mah * 3.6 * battery_voltage` joules,
//! so the default 1000 mAh at 1 V is 3600 J.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::device::{BatteryStateConfig, ConsumptionModel};
use crate::error::{Error, Result};
use crate::policy::{Scheme, WeightingMatrix};
use crate::topology::{friis_beta, ScenarioParams};

/// Physical constants of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalConfig {
    /// Total transmit power per EN (W).
    pub tx_power: f64,
    pub path_loss_exponent: f64,
    pub carrier_frequency: f64,
    pub block_length: f64,
    pub subchannels_per_en: usize,
    /// Sub-channel bandwidth (Hz). Recorded only; gains are per sub-channel.
    pub subchannel_bandwidth: f64,
    pub battery_voltage: f64,
    pub battery_capacity_mah: f64,
    pub tx_antenna_gain: f64,
    pub rx_antenna_gain: f64,
    /// RF-to-DC efficiency.
    pub efficiency: f64,
    /// Pilot slot as a block fraction.
    pub pilot_fraction: f64,
    /// Feedback slot per vote of the longest vote list, as a block fraction.
    pub feedback_slot_per_vote: f64,
    /// Initial battery level as a fraction of capacity.
    pub initial_fraction: f64,
    /// Overrides the Friis constant computed from gains and frequency.
    pub beta: Option<f64>,
    pub outage_quorum: Option<usize>,
    pub wds_per_en: usize,
}

impl Default for PhysicalConfig {
    fn default() -> Self {
        PhysicalConfig {
            tx_power: 1.0,
            path_loss_exponent: 2.0,
            carrier_frequency: 915e6,
            block_length: 0.5,
            subchannels_per_en: 30,
            subchannel_bandwidth: 10e3,
            battery_voltage: 1.0,
            battery_capacity_mah: 1000.0,
            tx_antenna_gain: 2.0,
            rx_antenna_gain: 2.0,
            efficiency: 0.51,
            pilot_fraction: 0.02,
            feedback_slot_per_vote: 0.01,
            initial_fraction: 0.75,
            beta: None,
            outage_quorum: None,
            wds_per_en: 6,
        }
    }
}

impl PhysicalConfig {
    pub fn capacity(&self) -> f64 {
        self.battery_capacity_mah * 3.6 * self.battery_voltage
    }

    pub fn beta(&self) -> f64 {
        self.beta
            .unwrap_or_else(|| friis_beta(self.tx_antenna_gain, self.rx_antenna_gain, self.carrier_frequency))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Trials per placement.
    pub trials: usize,
    pub placements: usize,
    pub out_dir: PathBuf,
    pub physical: PhysicalConfig,
    pub consumption: ConsumptionModel,
    pub schemes: Vec<Scheme>,
    /// Weighting matrix; the 4-state example matrix when omitted.
    pub weights: Option<Vec<Vec<f64>>>,
    /// Battery-state thresholds as fractions of capacity.
    pub thresholds: Vec<f64>,
    /// Cluster radii (m).
    pub d_grid: Vec<f64>,
    /// Radius for single-radius presets (m).
    pub fixed_d: f64,
    pub p0_grid: Vec<f64>,
    /// Power exponents of the weighting family.
    pub r_grid: Vec<f64>,
    /// Votes cast in the two lowest states.
    pub feedback_grid: Vec<usize>,
    /// `E[Q]/E[E]` values for the battery-model error study.
    pub ratio_grid: Vec<f64>,
    pub study_blocks: u64,
    /// Lifetime that counts as perpetual in the power search (hours).
    pub target_hours: f64,
    pub search_tolerance: f64,
    pub power_cap: f64,
    pub max_blocks: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            trials: 5,
            placements: 5,
            out_dir: PathBuf::from("results"),
            physical: PhysicalConfig::default(),
            consumption: ConsumptionModel::default(),
            schemes: Scheme::ALL.to_vec(),
            weights: None,
            thresholds: vec![0.0, 0.3, 0.5, 0.9, 1.0],
            d_grid: vec![3.0, 3.3, 3.6, 3.9],
            fixed_d: 3.0,
            p0_grid: vec![0.25, 0.5, 1.0],
            r_grid: vec![2.0, 3.0, 4.0, 5.0, 6.0],
            feedback_grid: vec![1, 2, 3, 4, 5],
            ratio_grid: vec![0.5, 1.0, 1.5, 2.0],
            study_blocks: 100_000,
            target_hours: 500.0,
            search_tolerance: 0.02,
            power_cap: 10.0,
            max_blocks: crate::engine::DEFAULT_MAX_BLOCKS,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a config; errors name the offending field.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::config(path, inner.message().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Switches to the full evaluation counts: 15 placements of 10 trials.
    pub fn paper_scale(mut self) -> Self {
        self.placements = 15;
        self.trials = 10;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, xs: &[f64]| -> Result<()> {
            if xs.is_empty() {
                return Err(Error::config(name, "must not be empty"));
            }
            if let Some(i) = xs.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::config(
                    format!("{name}[{i}]"),
                    format!("must be positive, got {}", xs[i]),
                ));
            }
            Ok(())
        };
        positive("d_grid", &self.d_grid)?;
        positive("fixed_d", &[self.fixed_d])?;
        positive("r_grid", &self.r_grid)?;
        if self.p0_grid.is_empty() || self.p0_grid.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::config("p0_grid", "must be non-empty with values >= 0"));
        }
        if self.ratio_grid.is_empty() || self.ratio_grid.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::config("ratio_grid", "must be non-empty with values >= 0"));
        }
        if self.feedback_grid.is_empty() || self.feedback_grid.iter().any(|a| !(1..=5).contains(a)) {
            return Err(Error::config(
                "feedback_grid",
                "must be non-empty with values in 1..=5",
            ));
        }
        if self.schemes.is_empty() {
            return Err(Error::config("schemes", "must not be empty"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if self.placements == 0 {
            return Err(Error::config("placements", "must be at least 1"));
        }
        if !(self.target_hours >= 0.0) || !(self.search_tolerance > 0.0) || !(self.power_cap > 0.0) {
            return Err(Error::config("target_hours", "search settings must be positive"));
        }
        if self.physical.wds_per_en == 0 {
            return Err(Error::config("physical.wds_per_en", "must be at least 1"));
        }
        if !(self.physical.capacity() > 0.0) {
            return Err(Error::config(
                "physical.battery_capacity_mah",
                "capacity must be positive",
            ));
        }
        self.consumption
            .validate()
            .map_err(|e| Error::config("consumption", e.to_string()))?;
        let states = self
            .battery_states()
            .map_err(|e| Error::config("thresholds", e.to_string()))?;
        let w = self
            .weights()
            .map_err(|e| Error::config("weights", e.to_string()))?;
        if w.num_states() != states.num_states() {
            return Err(Error::config(
                "weights",
                format!(
                    "{} rows for {} battery states",
                    w.num_states(),
                    states.num_states()
                ),
            ));
        }
        let params = self.scenario_params(&w);
        if !(params.alpha1 + params.alpha2 < 1.0) {
            return Err(Error::config(
                "physical.pilot_fraction",
                "signaling must leave time for power transfer",
            ));
        }
        Ok(())
    }

    pub fn weights(&self) -> Result<WeightingMatrix> {
        match &self.weights {
            Some(rows) => WeightingMatrix::new(rows.clone()),
            None => Ok(WeightingMatrix::example()),
        }
    }

    pub fn battery_states(&self) -> Result<BatteryStateConfig> {
        BatteryStateConfig::from_fractions(&self.thresholds, self.physical.capacity())
    }

    /// Scenario constants, with the feedback slot sized for `weights`.
    pub fn scenario_params(&self, weights: &WeightingMatrix) -> ScenarioParams {
        let p = &self.physical;
        let capacity = p.capacity();
        ScenarioParams {
            n_per_en: p.subchannels_per_en,
            beta: p.beta(),
            delta: p.path_loss_exponent,
            p0: p.tx_power,
            eta: p.efficiency,
            block_length: p.block_length,
            alpha1: p.pilot_fraction,
            alpha2: weights.feedback_fraction(p.feedback_slot_per_vote),
            battery_capacity: capacity,
            initial_energy: p.initial_fraction * capacity,
            outage_quorum: p.outage_quorum,
        }
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_toml_str(&text)
}
