//! Block-fading sub-channel gains.
//!
//! Each block, the gain of sub-channel `j` towards WD `k` is an independent
//! draw from a unit-mean fading law scaled by the path-loss mean of the EN
//! owning `j`. Two samplers implement [`BlockChannel`]:
//!
//! * [`DenseChannel`] draws the full `K x MN` matrix every block.
//! * [`OrderStatChannel`] draws lazily. Within one EN's group the `N` gains
//!   towards a WD are exchangeable, so the group is fully described by its
//!   top order statistics, a uniformly random assignment of those to
//!   positions, and the remaining gains drawn i.i.d. below the smallest
//!   revealed value. Only what votes and harvesting touch is ever drawn.
//!
//! Both produce the same joint distribution of votes and received power.

use std::fmt::Debug;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};

use crate::policy::{EnPower, PowerAllocation};
use crate::rng::SimRng;
use crate::topology::NetworkScenario;

/// Uniform draw on the open interval (0, 1).
#[inline]
pub(crate) fn open01(rng: &mut SimRng) -> f64 {
    ((rng.random::<u64>() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Unit-mean fading power law.
///
/// The order-statistic sampler needs the survival function and its inverse;
/// the provided methods derive everything else from them.
pub trait FadingDistribution: Send + Sync + Debug {
    fn sample_unit(&self, rng: &mut SimRng) -> f64;

    fn survival(&self, x: f64) -> f64;

    fn inverse_survival(&self, s: f64) -> f64;

    /// Largest of `n` i.i.d. draws, with its survival value.
    fn sample_max(&self, n: usize, rng: &mut SimRng) -> (f64, f64) {
        // ln U of a uniform U is -Exp(1); the ziggurat avoids a logarithm.
        let e: f64 = Exp1.sample(rng);
        let w = -(-e / n as f64).exp_m1();
        (self.inverse_survival(w), w)
    }

    /// Largest of `n` i.i.d. draws conditioned to lie below a value whose
    /// survival is `s_limit`.
    fn sample_max_below(&self, n: usize, s_limit: f64, rng: &mut SimRng) -> (f64, f64) {
        let e: f64 = Exp1.sample(rng);
        let w = -(-e / n as f64).exp_m1();
        let s = s_limit * (1.0 - w) + w;
        (self.inverse_survival(s), s)
    }

    /// One draw conditioned to lie below `x_limit` (survival `s_limit`).
    fn sample_below(&self, x_limit: f64, s_limit: f64, rng: &mut SimRng) -> f64 {
        let _ = x_limit;
        let u = open01(rng);
        self.inverse_survival(s_limit * (1.0 - u) + u)
    }

    /// Sum of `n` i.i.d. draws.
    fn sample_sum(&self, n: usize, rng: &mut SimRng) -> f64 {
        (0..n).map(|_| self.sample_unit(rng)).sum()
    }
}

/// Rayleigh fading: exponentially distributed power gains.
#[derive(Debug, Clone, Copy, Default)]
pub struct Exponential;

impl FadingDistribution for Exponential {
    #[inline]
    fn sample_unit(&self, rng: &mut SimRng) -> f64 {
        Exp1.sample(rng)
    }

    #[inline]
    fn survival(&self, x: f64) -> f64 {
        (-x).exp()
    }

    #[inline]
    fn inverse_survival(&self, s: f64) -> f64 {
        -s.ln()
    }

    #[inline]
    fn sample_below(&self, x_limit: f64, s_limit: f64, rng: &mut SimRng) -> f64 {
        if s_limit < 0.25 {
            loop {
                let x: f64 = Exp1.sample(rng);
                if x < x_limit {
                    return x;
                }
            }
        }
        let u = open01(rng);
        -(s_limit * (1.0 - u) + u).ln()
    }

    fn sample_sum(&self, n: usize, rng: &mut SimRng) -> f64 {
        if n == 0 {
            return 0.0;
        }
        Gamma::new(n as f64, 1.0).expect("positive shape").sample(rng)
    }
}

/// Dense `K x MN` matrix of power gains for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    num_subchannels: usize,
    gains: Vec<f64>,
}

impl ChannelRealization {
    pub fn zeros(num_wds: usize, num_subchannels: usize) -> Self {
        ChannelRealization {
            num_subchannels,
            gains: vec![0.0; num_wds * num_subchannels],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let num_subchannels = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == num_subchannels), "ragged rows");
        ChannelRealization {
            num_subchannels,
            gains: rows.into_iter().flatten().collect(),
        }
    }

    pub fn num_wds(&self) -> usize {
        self.gains.len().checked_div(self.num_subchannels).unwrap_or(0)
    }

    pub fn num_subchannels(&self) -> usize {
        self.num_subchannels
    }

    pub fn gain(&self, wd: usize, subchannel: usize) -> f64 {
        self.gains[wd * self.num_subchannels + subchannel]
    }

    pub fn row(&self, wd: usize) -> &[f64] {
        &self.gains[wd * self.num_subchannels..(wd + 1) * self.num_subchannels]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.gains
    }

    fn fill(
        &mut self,
        means: &[f64],
        m: usize,
        owners: &[usize],
        dist: &dyn FadingDistribution,
        rng: &mut SimRng,
    ) {
        for (k, row) in self.gains.chunks_exact_mut(self.num_subchannels).enumerate() {
            let wd_means = &means[k * m..(k + 1) * m];
            for (h, &o) in row.iter_mut().zip(owners) {
                *h = wd_means[o] * dist.sample_unit(rng);
            }
        }
    }
}

fn flat_means(scenario: &NetworkScenario) -> Vec<f64> {
    scenario
        .mean_gain_table()
        .expect("validated scenario has positive distances")
        .concat()
}

/// Draws one block of exponential fading for every WD and sub-channel.
pub fn sample_block(scenario: &NetworkScenario, rng: &mut SimRng) -> ChannelRealization {
    sample_block_with(scenario, &Exponential, rng)
}

pub fn sample_block_with(
    scenario: &NetworkScenario,
    dist: &dyn FadingDistribution,
    rng: &mut SimRng,
) -> ChannelRealization {
    let mut real = ChannelRealization::zeros(scenario.num_wds(), scenario.num_subchannels());
    real.fill(
        &flat_means(scenario),
        scenario.num_ens(),
        &scenario.subchannel_owner,
        dist,
        rng,
    );
    real
}

/// Indices of the `count` largest entries of `row`, largest first; equal
/// gains rank the lower index first.
pub fn strongest_indices(row: &[f64], count: usize, out: &mut Vec<usize>) {
    out.clear();
    let count = count.min(row.len());
    if count == 0 {
        return;
    }
    for (j, &g) in row.iter().enumerate() {
        if out.len() == count {
            // strict: a later equal gain never displaces an earlier index
            if g <= row[out[count - 1]] {
                continue;
            }
            out.pop();
        }
        let at = out.partition_point(|&i| row[i] >= g);
        out.insert(at, j);
    }
}

/// Per-block access to sub-channel gains, as the protocol consumes them.
///
/// Call order within a block: [`begin_block`](Self::begin_block), then for
/// each WD at most one [`strongest`](Self::strongest) followed by at most one
/// [`received`](Self::received).
pub trait BlockChannel {
    fn begin_block(&mut self, rng: SimRng);

    /// The `count` strongest sub-channels of `wd`, strongest first.
    fn strongest(&mut self, wd: usize, count: usize, out: &mut Vec<usize>);

    /// `sum_j P_j h_{wd,j}` for this block's allocation.
    fn received(&mut self, wd: usize, alloc: &PowerAllocation) -> f64;
}

/// Which [`BlockChannel`] implementation the engine should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelModel {
    Dense,
    #[default]
    OrderStatistics,
}

#[derive(Debug)]
pub struct DenseChannel {
    dist: Arc<dyn FadingDistribution>,
    means: Vec<f64>,
    m: usize,
    owners: Vec<usize>,
    sets: Vec<Vec<usize>>,
    realization: ChannelRealization,
}

impl DenseChannel {
    pub fn new(scenario: &NetworkScenario, dist: Arc<dyn FadingDistribution>) -> Self {
        DenseChannel {
            dist,
            means: flat_means(scenario),
            m: scenario.num_ens(),
            owners: scenario.subchannel_owner.clone(),
            sets: scenario.channel_sets(),
            realization: ChannelRealization::zeros(scenario.num_wds(), scenario.num_subchannels()),
        }
    }

    pub fn realization(&self) -> &ChannelRealization {
        &self.realization
    }
}

impl BlockChannel for DenseChannel {
    fn begin_block(&mut self, mut rng: SimRng) {
        self.realization
            .fill(&self.means, self.m, &self.owners, self.dist.as_ref(), &mut rng);
    }

    fn strongest(&mut self, wd: usize, count: usize, out: &mut Vec<usize>) {
        strongest_indices(self.realization.row(wd), count, out);
    }

    fn received(&mut self, wd: usize, alloc: &PowerAllocation) -> f64 {
        weighted_gain(alloc, self.realization.row(wd), &self.sets)
    }
}

/// `sum_j P_j h_j` against one dense gain row.
pub fn weighted_gain(alloc: &PowerAllocation, row: &[f64], sets: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    for (en, power) in alloc.per_en().iter().enumerate() {
        match power {
            EnPower::Uniform(p) => {
                if *p != 0.0 {
                    total += p * sets[en].iter().map(|&j| row[j]).sum::<f64>();
                }
            }
            EnPower::Channels(list) => {
                total += list.iter().map(|&(j, p)| p * row[j]).sum::<f64>();
            }
        }
    }
    total
}

#[derive(Debug, Clone, Default)]
struct RevealedGroup {
    /// (position in group, unit-mean gain), descending by gain.
    items: Vec<(u32, f64)>,
    /// Survival value of the smallest revealed gain.
    s_low: f64,
}

impl RevealedGroup {
    fn reset(&mut self) {
        self.items.clear();
        self.s_low = 1.0;
    }

    fn lowest(&self) -> f64 {
        self.items.last().map_or(f64::INFINITY, |&(_, x)| x)
    }
}

#[derive(Debug)]
pub struct OrderStatChannel<D: FadingDistribution = Exponential> {
    dist: D,
    m: usize,
    n: usize,
    /// `means[wd * m + en]`
    means: Vec<f64>,
    sets: Vec<Vec<usize>>,
    /// Position of each global sub-channel inside its owner's group.
    position: Vec<u32>,
    groups: Vec<RevealedGroup>,
    cursors: Vec<usize>,
    rng: SimRng,
}

impl<D: FadingDistribution> OrderStatChannel<D> {
    pub fn new(scenario: &NetworkScenario, dist: D) -> Self {
        let sets = scenario.channel_sets();
        let mut position = vec![0u32; scenario.num_subchannels()];
        for set in &sets {
            for (p, &j) in set.iter().enumerate() {
                position[j] = p as u32;
            }
        }
        let m = scenario.num_ens();
        OrderStatChannel {
            dist,
            m,
            n: scenario.n_per_en,
            means: flat_means(scenario),
            sets,
            position,
            groups: vec![
                RevealedGroup {
                    items: Vec::new(),
                    s_low: 1.0
                };
                scenario.num_wds() * m
            ],
            cursors: vec![0; m],
            rng: crate::rng::SeedKey::new(0).rng(),
        }
    }

    fn reveal_next(&mut self, g: usize) -> bool {
        let n = self.n;
        let group = &mut self.groups[g];
        let r = group.items.len();
        if r == n {
            return false;
        }
        let (x, s) = if r == 0 {
            self.dist.sample_max(n, &mut self.rng)
        } else {
            self.dist.sample_max_below(n - r, group.s_low, &mut self.rng)
        };
        let pos = loop {
            let p = self.rng.random_range(0..n as u32);
            if !group.items.iter().any(|&(q, _)| q == p) {
                break p;
            }
        };
        group.items.push((pos, x));
        group.s_low = s;
        true
    }

    fn unit_gain(&mut self, g: usize, pos: u32) -> f64 {
        let group = &self.groups[g];
        if let Some(&(_, x)) = group.items.iter().find(|&&(q, _)| q == pos) {
            return x;
        }
        if group.items.is_empty() {
            self.dist.sample_unit(&mut self.rng)
        } else {
            let (x_low, s_low) = (group.lowest(), group.s_low);
            self.dist.sample_below(x_low, s_low, &mut self.rng)
        }
    }

    fn unit_group_sum(&mut self, g: usize) -> f64 {
        let group = &self.groups[g];
        let r = group.items.len();
        if r == 0 {
            return self.dist.sample_sum(self.n, &mut self.rng);
        }
        let known: f64 = group.items.iter().map(|&(_, x)| x).sum();
        let (x_low, s_low) = (group.lowest(), group.s_low);
        let rest: f64 = (r..self.n)
            .map(|_| self.dist.sample_below(x_low, s_low, &mut self.rng))
            .sum();
        known + rest
    }
}

impl<D: FadingDistribution> BlockChannel for OrderStatChannel<D> {
    fn begin_block(&mut self, rng: SimRng) {
        self.rng = rng;
        for g in &mut self.groups {
            g.reset();
        }
    }

    fn strongest(&mut self, wd: usize, count: usize, out: &mut Vec<usize>) {
        out.clear();
        let count = count.min(self.m * self.n);
        if count == 0 {
            return;
        }
        let base = wd * self.m;
        for i in 0..self.m {
            if self.groups[base + i].items.is_empty() {
                self.reveal_next(base + i);
            }
            self.cursors[i] = 0;
        }
        while out.len() < count {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let g = base + i;
                if self.cursors[i] == self.groups[g].items.len() && !self.reveal_next(g) {
                    continue;
                }
                let gain = self.groups[g].items[self.cursors[i]].1 * self.means[g];
                if best.is_none_or(|(_, b)| gain > b) {
                    best = Some((i, gain));
                }
            }
            let Some((i, _)) = best else { break };
            let pos = self.groups[base + i].items[self.cursors[i]].0;
            out.push(self.sets[i][pos as usize]);
            self.cursors[i] += 1;
        }
    }

    fn received(&mut self, wd: usize, alloc: &PowerAllocation) -> f64 {
        let base = wd * self.m;
        let mut total = 0.0;
        for (en, power) in alloc.per_en().iter().enumerate() {
            let g = base + en;
            let mean = self.means[g];
            match power {
                EnPower::Uniform(p) => {
                    if *p != 0.0 {
                        total += p * mean * self.unit_group_sum(g);
                    }
                }
                EnPower::Channels(list) => {
                    for &(j, p) in list {
                        total += p * mean * self.unit_gain(g, self.position[j]);
                    }
                }
            }
        }
        total
    }
}

/// Boxed channel for the selected model with exponential fading.
pub fn build_channel(scenario: &NetworkScenario, model: ChannelModel) -> Box<dyn BlockChannel + Send> {
    match model {
        ChannelModel::Dense => Box::new(DenseChannel::new(scenario, Arc::new(Exponential))),
        ChannelModel::OrderStatistics => Box::new(OrderStatChannel::new(scenario, Exponential)),
    }
}
