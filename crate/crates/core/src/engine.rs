//! The per-block charging protocol, lifetime runs and Monte Carlo trials.
//!
//! Each block: ENs read the battery states reported at the end of the
//! previous block, WDs vote on the current channel, every EN allocates its
//! power, then devices consume, harvest and update their batteries. A run ends
//! once `outage_quorum` devices are simultaneously out of energy.

use rayon::prelude::*;

use crate::channel::{build_channel, BlockChannel, ChannelModel, ChannelRealization};
use crate::device::{
    sample_consumption, update_battery, BatteryMode, BatteryStateConfig, ConsumptionModel, DeviceState,
};
use crate::error::{Error, Result};
use crate::policy::{ChargingPolicy, PowerAllocation, Scheme, VoteSheet, WeightingMatrix};
use crate::rng::{self, SeedKey};
use crate::topology::NetworkScenario;

/// Block fraction of feedback time per vote in the longest vote list.
pub const FEEDBACK_SLOT_PER_VOTE: f64 = 0.01;

pub const DEFAULT_MAX_BLOCKS: u64 = 100_000_000;

/// Everything a lifetime run needs besides its seed.
#[derive(Debug, Clone)]
pub struct SimulationSetup {
    pub scenario: NetworkScenario,
    pub scheme: Scheme,
    pub weights: WeightingMatrix,
    pub states: BatteryStateConfig,
    pub consumption: ConsumptionModel,
    pub mode: BatteryMode,
    pub channel: ChannelModel,
    pub max_blocks: u64,
}

impl SimulationSetup {
    /// Example weights, default thresholds and consumption, exact batteries.
    pub fn new(scenario: NetworkScenario, scheme: Scheme) -> Self {
        let states = BatteryStateConfig::default_for(scenario.battery_capacity);
        SimulationSetup {
            scenario,
            scheme,
            weights: WeightingMatrix::example(),
            states,
            consumption: ConsumptionModel::default(),
            mode: BatteryMode::Exact,
            channel: ChannelModel::default(),
            max_blocks: DEFAULT_MAX_BLOCKS,
        }
    }

    /// Replaces `W` and sizes the feedback slot `alpha2` to its longest row.
    pub fn with_weights(mut self, weights: WeightingMatrix) -> Self {
        self.scenario.alpha2 = weights.feedback_fraction(FEEDBACK_SLOT_PER_VOTE);
        self.weights = weights;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_consumption(mut self, consumption: ConsumptionModel) -> Self {
        self.consumption = consumption;
        self
    }

    pub fn with_mode(mut self, mode: BatteryMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_channel(mut self, channel: ChannelModel) -> Self {
        self.channel = channel;
        self
    }

    pub fn with_max_blocks(mut self, max_blocks: u64) -> Self {
        self.max_blocks = max_blocks;
        self
    }

    pub fn with_quorum(mut self, quorum: usize) -> Self {
        self.scenario.outage_quorum = quorum;
        self
    }

    pub fn with_p0(mut self, p0: f64) -> Self {
        self.scenario.p0 = p0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.consumption.validate()?;
        if self.weights.num_states() != self.states.num_states() {
            return Err(Error::InvalidWeights(format!(
                "W has {} rows but there are {} battery states",
                self.weights.num_states(),
                self.states.num_states()
            )));
        }
        if (self.states.capacity() - self.scenario.battery_capacity).abs()
            > 1e-9 * self.scenario.battery_capacity
        {
            return Err(Error::InvalidThresholds(
                "top threshold must equal the battery capacity".into(),
            ));
        }
        Ok(())
    }
}

/// Aggregates of one lifetime run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStatistics {
    pub seed: u64,
    /// Seconds; `blocks * T`.
    pub lifetime: f64,
    pub blocks: u64,
    /// Stopped by `max_blocks` rather than by outages.
    pub censored: bool,
    pub outages: usize,
    pub eps0: f64,
    pub eps_r: f64,
    /// Time-average arriving RF power per WD (W).
    pub lambda: Vec<f64>,
    /// Time-average consumed power per WD (W).
    pub mu: Vec<f64>,
    /// Fraction of arriving energy lost to a full battery.
    pub alpha: Vec<f64>,
    /// Largest per-WD energy-ledger mismatch relative to the energy moved.
    pub ledger_error: f64,
}

impl RunStatistics {
    pub fn num_wds(&self) -> usize {
        self.lambda.len()
    }
}

/// Optional per-block record.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace {
    pub block: u64,
    /// Residual energy per WD after the update.
    pub energy: Vec<f64>,
    pub harvested: Vec<f64>,
    pub consumed: Vec<f64>,
    /// Sub-channels carrying power.
    pub active_channels: usize,
    /// One bit per WD: battery state changed this block.
    pub state_changed: Vec<bool>,
}

/// `eta * fraction * T * sum_j P_j h_{wd,j}`; `fraction` is the share of the
/// block left for power transfer (`1 - alpha1 - alpha2`, or 1 without signaling).
pub fn harvested_energy(
    alloc: &PowerAllocation,
    realization: &ChannelRealization,
    wd: usize,
    scenario: &NetworkScenario,
    fraction: f64,
) -> f64 {
    let sets = scenario.channel_sets();
    let received = crate::channel::weighted_gain(alloc, realization.row(wd), &sets);
    scenario.eta * fraction * scenario.block_length * received
}

#[derive(Debug, Clone, Copy, Default)]
struct Ledger {
    arriving: f64,
    stored: f64,
    wasted: f64,
    consumed: f64,
    shortfall: f64,
}

/// A lifetime run in progress.
pub struct Simulation<'a> {
    setup: &'a SimulationSetup,
    policy: Box<dyn ChargingPolicy>,
    channel: Box<dyn BlockChannel + Send>,
    key: SeedKey,
    seed: u64,
    fraction: f64,
    devices: Vec<DeviceState>,
    sheet: VoteSheet,
    alloc: PowerAllocation,
    consumed: Vec<f64>,
    harvested: Vec<f64>,
    changed: Vec<bool>,
    ledger: Vec<Ledger>,
    block: u64,
    outages: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(setup: &'a SimulationSetup, seed: u64) -> Result<Self> {
        setup.validate()?;
        let scenario = &setup.scenario;
        let k = scenario.num_wds();
        let policy = setup.scheme.policy();
        let devices = vec![DeviceState::new(scenario.initial_energy, &setup.states); k];
        let outages = devices.iter().filter(|d| d.in_outage).count();
        Ok(Simulation {
            fraction: policy.transfer_fraction(scenario),
            policy,
            channel: build_channel(scenario, setup.channel),
            key: SeedKey::new(seed),
            seed,
            sheet: VoteSheet::new(k),
            alloc: PowerAllocation::uniform(scenario),
            consumed: vec![0.0; k],
            harvested: vec![0.0; k],
            changed: vec![false; k],
            ledger: vec![Ledger::default(); k],
            devices,
            setup,
            block: 0,
            outages,
        })
    }

    pub fn devices(&self) -> &[DeviceState] {
        &self.devices
    }

    pub fn blocks(&self) -> u64 {
        self.block
    }

    pub fn outages(&self) -> usize {
        self.outages
    }

    pub fn is_finished(&self) -> bool {
        self.outages >= self.setup.scenario.outage_quorum
    }

    /// Consumption per WD in the last block (0 for devices already in outage).
    pub fn last_consumed(&self) -> &[f64] {
        &self.consumed
    }

    /// Arriving RF energy per WD in the last block.
    pub fn last_harvested(&self) -> &[f64] {
        &self.harvested
    }

    pub fn allocation(&self) -> &PowerAllocation {
        &self.alloc
    }

    /// Runs one block of the protocol.
    pub fn step_block(&mut self) {
        let setup = self.setup;
        let scenario = &setup.scenario;
        let key = self.key.path(&[rng::BLOCK, self.block]);
        self.channel.begin_block(key.child(rng::CHANNEL).rng());

        // Steps 1-3: battery states from the previous block end, then votes.
        for (k, dev) in self.devices.iter().enumerate() {
            self.sheet.set_state(k, dev.battery_state);
            let count = if dev.in_outage {
                0
            } else {
                self.policy.votes_for(dev.battery_state, &setup.weights)
            };
            self.channel.strongest(k, count, self.sheet.votes_mut(k));
        }

        // Step 4: every EN allocates from the shared sheet.
        let mut policy_rng = key.child(rng::POLICY).rng();
        self.policy.allocate(
            &self.sheet,
            &setup.weights,
            scenario,
            &mut policy_rng,
            &mut self.alloc,
        );

        let mut consumption_rng = key.child(rng::CONSUMPTION).rng();
        let gain = scenario.eta * self.fraction * scenario.block_length;
        for k in 0..self.devices.len() {
            let votes = self.sheet.votes(k).len();
            let e = sample_consumption(&setup.consumption, votes, scenario, &mut consumption_rng);
            let dev = self.devices[k];
            if dev.in_outage {
                self.consumed[k] = 0.0;
                self.harvested[k] = 0.0;
                self.changed[k] = false;
                continue;
            }
            let q = if scenario.p0 > 0.0 {
                gain * self.channel.received(k, &self.alloc)
            } else {
                0.0
            };
            let up = update_battery(setup.mode, &dev, e, q, &setup.states);
            let l = &mut self.ledger[k];
            l.arriving += q;
            l.stored += up.stored;
            l.wasted += up.wasted;
            l.consumed += e;
            l.shortfall += up.shortfall;
            self.consumed[k] = e;
            self.harvested[k] = q;
            self.changed[k] = up.state.battery_state != dev.battery_state;
            if up.state.in_outage {
                self.outages += 1;
            }
            self.devices[k] = up.state;
        }
        self.block += 1;
    }

    pub fn trace(&self) -> BlockTrace {
        BlockTrace {
            block: self.block,
            energy: self.devices.iter().map(|d| d.residual_energy).collect(),
            harvested: self.harvested.clone(),
            consumed: self.consumed.clone(),
            active_channels: self.alloc.active_channels(self.setup.scenario.n_per_en),
            state_changed: self.changed.clone(),
        }
    }

    /// Runs until the quorum of outages or `max_blocks`.
    pub fn run(mut self, mut on_block: Option<&mut dyn FnMut(&BlockTrace)>) -> RunStatistics {
        while !self.is_finished() && self.block < self.setup.max_blocks {
            self.step_block();
            if let Some(f) = on_block.as_mut() {
                f(&self.trace());
            }
        }
        self.statistics()
    }

    pub fn statistics(&self) -> RunStatistics {
        let scenario = &self.setup.scenario;
        let lifetime = self.block as f64 * scenario.block_length;
        let rate = |x: f64| if lifetime > 0.0 { x / lifetime } else { 0.0 };
        let mut ledger_error: f64 = 0.0;
        for (l, d) in self.ledger.iter().zip(&self.devices) {
            let predicted = scenario.initial_energy + l.stored - l.consumed + l.shortfall;
            let scale = scenario.initial_energy + l.stored + l.consumed;
            if scale > 0.0 {
                ledger_error = ledger_error.max((predicted - d.residual_energy).abs() / scale);
            }
        }
        RunStatistics {
            seed: self.seed,
            lifetime,
            blocks: self.block,
            censored: !self.is_finished(),
            outages: self.outages,
            eps0: scenario.initial_total_energy(),
            eps_r: self.devices.iter().map(|d| d.residual_energy).sum(),
            lambda: self.ledger.iter().map(|l| rate(l.arriving)).collect(),
            mu: self.ledger.iter().map(|l| rate(l.consumed)).collect(),
            alpha: self
                .ledger
                .iter()
                .map(|l| {
                    if l.arriving > 0.0 {
                        l.wasted / l.arriving
                    } else {
                        0.0
                    }
                })
                .collect(),
            ledger_error,
        }
    }
}

/// One run from `seed` until `outage_quorum` outages or `max_blocks`.
pub fn run_lifetime(setup: &SimulationSetup, seed: u64) -> Result<RunStatistics> {
    Ok(Simulation::new(setup, seed)?.run(None))
}

/// As [`run_lifetime`], calling `on_block` after every block.
pub fn run_lifetime_traced(
    setup: &SimulationSetup,
    seed: u64,
    on_block: &mut dyn FnMut(&BlockTrace),
) -> Result<RunStatistics> {
    Ok(Simulation::new(setup, seed)?.run(Some(on_block)))
}

/// Seed of trial `trial` under `master`.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    SeedKey::new(master).path(&[rng::TRIAL, trial]).value()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub runs: Vec<RunStatistics>,
    /// Mean lifetime in seconds; censored runs count at their lower bound.
    pub mean_lifetime: f64,
    /// Sample standard deviation (0 for a single run).
    pub std_lifetime: f64,
    pub censored: usize,
}

impl MonteCarloSummary {
    pub fn from_runs(runs: Vec<RunStatistics>) -> Self {
        let lifetimes: Vec<f64> = runs.iter().map(|r| r.lifetime).collect();
        MonteCarloSummary {
            mean_lifetime: crate::stats::mean(&lifetimes),
            std_lifetime: crate::stats::std_dev(&lifetimes),
            censored: runs.iter().filter(|r| r.censored).count(),
            runs,
        }
    }

    pub fn min_lifetime(&self) -> f64 {
        self.runs.iter().map(|r| r.lifetime).fold(f64::INFINITY, f64::min)
    }
}

/// Runs the given seeds in parallel; results come back in seed order and are
/// identical to a sequential run.
pub fn run_seeds(setup: &SimulationSetup, seeds: &[u64]) -> Result<MonteCarloSummary> {
    setup.validate()?;
    let runs = seeds
        .par_iter()
        .map(|&s| run_lifetime(setup, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloSummary::from_runs(runs))
}

/// `trials` independent runs with seeds derived from `master`.
pub fn monte_carlo(setup: &SimulationSetup, trials: usize, master: u64) -> Result<MonteCarloSummary> {
    if trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    let seeds: Vec<u64> = (0..trials as u64).map(|t| trial_seed(master, t)).collect();
    run_seeds(setup, &seeds)
}

/// Sequential reference for [`monte_carlo`].
pub fn monte_carlo_sequential(
    setup: &SimulationSetup,
    trials: usize,
    master: u64,
) -> Result<MonteCarloSummary> {
    let runs = (0..trials as u64)
        .map(|t| run_lifetime(setup, trial_seed(master, t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloSummary::from_runs(runs))
}
