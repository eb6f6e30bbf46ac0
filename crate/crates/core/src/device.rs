//! Wireless devices: batteries, consumption and vote casting.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::strongest_indices;
use crate::error::{Error, Result};
use crate::policy::WeightingMatrix;
use crate::rng::SimRng;
use crate::topology::NetworkScenario;

/// Battery state index `r` in `1..=I`; state `r` covers `(b_{r-1}, b_r]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BatteryState(u8);

impl BatteryState {
    /// Panics unless `r >= 1`.
    pub fn new(r: usize) -> Self {
        assert!(
            (1..=u8::MAX as usize).contains(&r),
            "battery state {r} out of range"
        );
        BatteryState(r as u8)
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }

    /// Zero-based row in the weighting matrix.
    pub fn row(self) -> usize {
        self.0 as usize - 1
    }
}

/// Ascending thresholds `b_0 = 0 < b_1 < ... < b_I = C`, in joules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryStateConfig {
    thresholds: Vec<f64>,
}

impl BatteryStateConfig {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidThresholds(m));
        if thresholds.len() < 2 {
            return bad("need at least b_0 and b_I".into());
        }
        if thresholds.len() - 1 > u8::MAX as usize {
            return bad("too many battery states".into());
        }
        if thresholds[0] != 0.0 {
            return bad(format!("b_0 must be 0, got {}", thresholds[0]));
        }
        if !thresholds.iter().all(|b| b.is_finite()) || thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("thresholds must be strictly ascending: {thresholds:?}"));
        }
        Ok(BatteryStateConfig { thresholds })
    }

    /// Thresholds given as fractions of `capacity`.
    pub fn from_fractions(fractions: &[f64], capacity: f64) -> Result<Self> {
        let cfg = Self::new(fractions.iter().map(|f| f * capacity).collect())?;
        if (cfg.capacity() - capacity).abs() > 1e-12 * capacity {
            return Err(Error::InvalidThresholds("last fraction must be 1".into()));
        }
        Ok(cfg)
    }

    /// `{0, 0.3C, 0.5C, 0.9C, C}`.
    pub fn default_for(capacity: f64) -> Self {
        Self::from_fractions(&[0.0, 0.3, 0.5, 0.9, 1.0], capacity).expect("valid defaults")
    }

    pub fn num_states(&self) -> usize {
        self.thresholds.len() - 1
    }

    pub fn capacity(&self) -> f64 {
        *self.thresholds.last().unwrap()
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }
}

/// State `r` with `energy` in `(b_{r-1}, b_r]`; empty batteries read as
/// state 1 and overcharged ones as state `I`.
pub fn classify_battery_state(energy: f64, config: &BatteryStateConfig) -> BatteryState {
    let inner = &config.thresholds[1..config.thresholds.len() - 1];
    BatteryState::new(1 + inner.iter().take_while(|&&b| b < energy).count())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatteryMode {
    /// Clamped to `[0, C]` every block.
    #[default]
    Exact,
    /// Unclamped; a battery at or above `C` harvests nothing.
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceState {
    pub residual_energy: f64,
    pub battery_state: BatteryState,
    pub overcharged: bool,
    pub in_outage: bool,
}

impl DeviceState {
    pub fn new(energy: f64, config: &BatteryStateConfig) -> Self {
        DeviceState {
            residual_energy: energy,
            battery_state: classify_battery_state(energy, config),
            overcharged: energy >= config.capacity(),
            in_outage: energy <= 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsumptionModel {
    /// Draw while the device is active (W).
    pub active_power: f64,
    /// Probability a block is active.
    pub active_probability: f64,
    /// Power spent per reported sub-channel index during the feedback slot (W).
    pub feedback_power_per_vote: f64,
}

impl Default for ConsumptionModel {
    /// 12 mW with probability 1/4 (3 mW average), 0.1 mW per vote.
    fn default() -> Self {
        ConsumptionModel {
            active_power: 12e-3,
            active_probability: 0.25,
            feedback_power_per_vote: 0.1e-3,
        }
    }
}

impl ConsumptionModel {
    /// Always-on drain with no feedback cost.
    pub fn constant(power: f64) -> Self {
        ConsumptionModel {
            active_power: power,
            active_probability: 1.0,
            feedback_power_per_vote: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.active_probability)
            || !(self.active_power >= 0.0)
            || !(self.feedback_power_per_vote >= 0.0)
        {
            return Err(Error::config(
                "consumption",
                format!("powers must be >= 0 and probability in [0, 1]: {self:?}"),
            ));
        }
        Ok(())
    }

    pub fn mean_power(&self) -> f64 {
        self.active_power * self.active_probability
    }

    /// Energy for one block given the activity outcome.
    #[inline]
    pub fn block_energy(&self, active: bool, votes_cast: usize, block_length: f64, alpha2: f64) -> f64 {
        let base = if active {
            self.active_power * block_length
        } else {
            0.0
        };
        base + self.feedback_power_per_vote * alpha2 * block_length * votes_cast as f64
    }
}

/// Samples one block's consumption, feedback included.
pub fn sample_consumption(
    model: &ConsumptionModel,
    votes_cast: usize,
    scenario: &NetworkScenario,
    rng: &mut SimRng,
) -> f64 {
    let active = rng.random::<f64>() < model.active_probability;
    model.block_energy(active, votes_cast, scenario.block_length, scenario.alpha2)
}

/// Ranked sub-channel indices, strongest first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RankedVotes(pub Vec<usize>);

impl RankedVotes {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Zero-based rank of `subchannel`, if voted for.
    pub fn rank_of(&self, subchannel: usize) -> Option<usize> {
        self.0.iter().position(|&j| j == subchannel)
    }
}

pub fn cast_votes(device: &DeviceState, gains_row: &[f64], weights: &WeightingMatrix) -> RankedVotes {
    if device.in_outage {
        return RankedVotes::default();
    }
    let mut out = Vec::new();
    strongest_indices(gains_row, weights.votes_for(device.battery_state), &mut out);
    RankedVotes(out)
}

/// Outcome of one battery update, with the energy the clamps removed or added.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryUpdate {
    pub state: DeviceState,
    /// Harvested energy that actually entered the battery.
    pub stored: f64,
    /// Harvested energy lost to a full battery.
    pub wasted: f64,
    /// Consumption the empty battery could not supply.
    pub shortfall: f64,
}

pub fn update_battery_exact(
    device: &DeviceState,
    consumed: f64,
    harvested: f64,
    config: &BatteryStateConfig,
) -> BatteryUpdate {
    let capacity = config.capacity();
    let raw = device.residual_energy - consumed + harvested;
    let wasted = (raw - capacity).max(0.0);
    let shortfall = (-raw).max(0.0);
    let energy = raw.clamp(0.0, capacity);
    BatteryUpdate {
        state: DeviceState {
            residual_energy: energy,
            battery_state: classify_battery_state(energy, config),
            overcharged: false,
            in_outage: energy <= 0.0,
        },
        stored: harvested - wasted,
        wasted,
        shortfall,
    }
}

pub fn update_battery_approx(
    device: &DeviceState,
    consumed: f64,
    harvested: f64,
    config: &BatteryStateConfig,
) -> BatteryUpdate {
    let capacity = config.capacity();
    let accepted = if device.residual_energy >= capacity {
        0.0
    } else {
        harvested
    };
    let energy = device.residual_energy - consumed + accepted;
    BatteryUpdate {
        state: DeviceState {
            residual_energy: energy,
            battery_state: classify_battery_state(energy, config),
            overcharged: energy >= capacity,
            in_outage: energy <= 0.0,
        },
        stored: accepted,
        wasted: harvested - accepted,
        shortfall: 0.0,
    }
}

pub fn update_battery(
    mode: BatteryMode,
    device: &DeviceState,
    consumed: f64,
    harvested: f64,
    config: &BatteryStateConfig,
) -> BatteryUpdate {
    match mode {
        BatteryMode::Exact => update_battery_exact(device, consumed, harvested, config),
        BatteryMode::Approximate => update_battery_approx(device, consumed, harvested, config),
    }
}
