//! Discrete-time simulator and policy library for voting-based distributed
//! charging control in broadband wireless power transfer (WPT) networks.
//!
//! Energy nodes (ENs) broadcast RF power over frequency sub-channels; battery
//! powered wireless devices (WDs) report their coarse battery state and vote
//! for their strongest sub-channels. Each EN then splits its transmit power
//! over its own sub-channels using only those votes. The crate models the
//! block-fading channel, device batteries, the nine allocation schemes, the
//! lifetime simulation loop and the Martingale-based lifetime estimator.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod analysis;
pub mod channel;
pub mod config;
pub mod device;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod policy;
pub mod report;
pub mod rng;
pub mod stats;
pub mod topology;

pub use channel::{BlockChannel, ChannelModel, ChannelRealization, Exponential, FadingDistribution};
pub use config::ExperimentConfig;
pub use device::{BatteryMode, BatteryState, BatteryStateConfig, ConsumptionModel, DeviceState, RankedVotes};
pub use engine::{MonteCarloSummary, RunStatistics, SimulationSetup};
pub use error::{Error, Result};
pub use policy::{ChargingPolicy, PowerAllocation, Scheme, VoteSheet, WeightingMatrix};
pub use topology::{NetworkScenario, Position};
