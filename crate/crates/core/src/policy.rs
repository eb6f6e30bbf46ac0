//! Vote weighting, tallying and per-EN power allocation.
//!
//! Every EN sees the same battery states and ranked votes, tallies only the
//! votes that name its own sub-channels, and splits its power `P0` over them
//! without talking to the other ENs.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::device::{BatteryState, RankedVotes};
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::topology::NetworkScenario;

/// Vote weights indexed by (battery state, vote rank).
///
/// The non-zero entries of row `r` set how many votes a device in state `r`
/// casts, and their values weight those votes by rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct WeightingMatrix {
    rows: Vec<Vec<f64>>,
    votes: Vec<usize>,
}

impl WeightingMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidWeights(m));
        if rows.is_empty() || rows[0].is_empty() {
            return bad("matrix must have at least one row and column".into());
        }
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return bad("rows must all have the same length".into());
        }
        if rows.iter().flatten().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("weights must be finite and non-negative".into());
        }
        let votes = rows
            .iter()
            .map(|r| r.iter().filter(|&&w| w > 0.0).count())
            .collect();
        let matrix = WeightingMatrix { rows, votes };
        for warning in matrix.structure_warnings() {
            log::warn!("weighting matrix: {warning}");
        }
        Ok(matrix)
    }

    /// The 4-state example matrix; equals `power_exponent(3.0)`.
    pub fn example() -> Self {
        Self::new(vec![
            vec![63.0, 27.0, 0.0],
            vec![21.0, 9.0, 0.0],
            vec![6.0, 3.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap()
    }

    /// `[[7r^2, 3r^2, 0], [7r, 3r, 0], [6, 3, 1], [1, 0, 0]]`.
    pub fn power_exponent(r: f64) -> Result<Self> {
        Self::new(vec![
            vec![7.0 * r * r, 3.0 * r * r, 0.0],
            vec![7.0 * r, 3.0 * r, 0.0],
            vec![6.0, 3.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ])
    }

    /// Feedback-amount family: states 1 and 2 cast `amount` votes (1..=5),
    /// states 3 and 4 keep the example rows.
    pub fn feedback_amount(amount: usize) -> Result<Self> {
        const LOW: [&[f64]; 5] = [
            &[90.0],
            &[63.0, 27.0],
            &[63.0, 27.0, 9.0],
            &[63.0, 27.0, 9.0, 3.0],
            &[63.0, 27.0, 9.0, 3.0, 1.0],
        ];
        const MID: [&[f64]; 5] = [
            &[30.0],
            &[21.0, 9.0],
            &[21.0, 9.0, 3.0],
            &[21.0, 9.0, 3.0, 1.0],
            &[21.0, 9.0, 3.0, 1.0, 1.0],
        ];
        if !(1..=5).contains(&amount) {
            return Err(Error::InvalidWeights(format!(
                "feedback amount {amount} not in 1..=5"
            )));
        }
        let width = amount.max(3);
        let pad = |xs: &[f64]| {
            let mut v = xs.to_vec();
            v.resize(width, 0.0);
            v
        };
        Self::new(vec![
            pad(LOW[amount - 1]),
            pad(MID[amount - 1]),
            pad(&[6.0, 3.0, 1.0]),
            pad(&[1.0]),
        ])
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn max_columns(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Votes cast in `state`: the number of non-zero entries in its row.
    #[inline]
    pub fn votes_for(&self, state: BatteryState) -> usize {
        self.votes[state.row().min(self.votes.len() - 1)]
    }

    /// Weight of the vote ranked `rank` (zero-based) by a device in `state`.
    #[inline]
    pub fn weight(&self, state: BatteryState, rank: usize) -> f64 {
        self.rows[state.row().min(self.rows.len() - 1)]
            .get(rank)
            .copied()
            .unwrap_or(0.0)
    }

    /// Largest number of votes any state casts.
    pub fn max_votes(&self) -> usize {
        self.votes.iter().copied().max().unwrap_or(0)
    }

    /// Feedback slot length as a block fraction, sized for the longest vote list.
    pub fn feedback_fraction(&self, per_vote: f64) -> f64 {
        self.max_votes() as f64 * per_vote
    }

    /// Violations of the recommended shape: non-zeros form a non-increasing
    /// prefix of each row, and row sums do not grow with the state index.
    pub fn structure_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            let nz = self.votes[i];
            if row[..nz].contains(&0.0) {
                out.push(format!("row {} has a zero before a non-zero entry", i + 1));
            }
            if row[..nz].windows(2).any(|w| w[1] > w[0]) {
                out.push(format!("row {} increases left to right", i + 1));
            }
        }
        let sums: Vec<f64> = self.rows.iter().map(|r| r.iter().sum()).collect();
        if sums.windows(2).any(|w| w[1] > w[0]) {
            out.push(format!("row sums increase with battery state: {sums:?}"));
        }
        out
    }
}

impl TryFrom<Vec<Vec<f64>>> for WeightingMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<WeightingMatrix> for Vec<Vec<f64>> {
    fn from(w: WeightingMatrix) -> Self {
        w.rows
    }
}

/// What each EN observes in a block: every WD's battery state and votes.
#[derive(Debug, Clone, Default)]
pub struct VoteSheet {
    states: Vec<BatteryState>,
    votes: Vec<RankedVotes>,
}

impl VoteSheet {
    pub fn new(num_wds: usize) -> Self {
        VoteSheet {
            states: vec![BatteryState::new(1); num_wds],
            votes: vec![RankedVotes::default(); num_wds],
        }
    }

    pub fn from_entries(entries: Vec<(BatteryState, RankedVotes)>) -> Self {
        let (states, votes) = entries.into_iter().unzip();
        VoteSheet { states, votes }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, wd: usize) -> BatteryState {
        self.states[wd]
    }

    pub fn votes(&self, wd: usize) -> &RankedVotes {
        &self.votes[wd]
    }

    pub fn set_state(&mut self, wd: usize, state: BatteryState) {
        self.states[wd] = state;
    }

    /// Buffer for `wd`'s votes, to be overwritten in place.
    pub fn votes_mut(&mut self, wd: usize) -> &mut Vec<usize> {
        &mut self.votes[wd].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (BatteryState, &RankedVotes)> {
        self.states.iter().copied().zip(&self.votes)
    }

    pub fn total_votes(&self) -> usize {
        self.votes.iter().map(RankedVotes::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TallyRule {
    /// Count votes from every WD.
    Universal,
    /// Count only votes from the lowest battery state among the WDs voting
    /// for this EN's sub-channels.
    Prioritized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Weight each vote by the matrix entry for (state, rank).
    Matrix,
    /// Every vote counts 1.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationRule {
    /// All of `P0` on the top-voted sub-channel.
    Single,
    /// `P0` split in proportion to the tallies.
    Proportional,
}

/// Weighted vote totals for all sub-channels under `rule`, written to
/// `out[j]` for every global `j`.
pub fn tally_all(
    sheet: &VoteSheet,
    weights: &WeightingMatrix,
    rule: TallyRule,
    weighting: Weighting,
    scenario: &NetworkScenario,
    out: &mut [f64],
) {
    out.fill(0.0);
    let weight = |state, rank| match weighting {
        Weighting::Matrix => weights.weight(state, rank),
        Weighting::Unit => 1.0,
    };
    match rule {
        TallyRule::Universal => {
            for (state, votes) in sheet.iter() {
                for (rank, &j) in votes.as_slice().iter().enumerate() {
                    out[j] += weight(state, rank);
                }
            }
        }
        TallyRule::Prioritized => {
            let mut lowest = vec![u8::MAX as usize + 1; scenario.num_ens()];
            for (state, votes) in sheet.iter() {
                for &j in votes.as_slice() {
                    let en = scenario.owner(j);
                    lowest[en] = lowest[en].min(state.get());
                }
            }
            for (state, votes) in sheet.iter() {
                for (rank, &j) in votes.as_slice().iter().enumerate() {
                    if state.get() == lowest[scenario.owner(j)] {
                        out[j] += weight(state, rank);
                    }
                }
            }
        }
    }
}

/// Tallies for one EN, aligned with `channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tally {
    pub channels: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tally {
    pub fn get(&self, subchannel: usize) -> Option<f64> {
        self.channels
            .iter()
            .position(|&j| j == subchannel)
            .map(|p| self.values[p])
    }
}

fn tally_en(
    sheet: &VoteSheet,
    weights: &WeightingMatrix,
    en: usize,
    scenario: &NetworkScenario,
    rule: TallyRule,
) -> Tally {
    let mut all = vec![0.0; scenario.num_subchannels()];
    tally_all(sheet, weights, rule, Weighting::Matrix, scenario, &mut all);
    let channels: Vec<usize> = scenario.channels_of(en).collect();
    let values = channels.iter().map(|&j| all[j]).collect();
    Tally { channels, values }
}

/// `v_j = sum_k 1[j in W_k] W[B_k, R_jk]` for `j` owned by `en`.
pub fn tally_universal(
    sheet: &VoteSheet,
    weights: &WeightingMatrix,
    en: usize,
    scenario: &NetworkScenario,
) -> Tally {
    tally_en(sheet, weights, en, scenario, TallyRule::Universal)
}

/// As [`tally_universal`], restricted to voters in the lowest state among
/// those voting for `en`'s sub-channels.
pub fn tally_prioritized(
    sheet: &VoteSheet,
    weights: &WeightingMatrix,
    en: usize,
    scenario: &NetworkScenario,
) -> Tally {
    tally_en(sheet, weights, en, scenario, TallyRule::Prioritized)
}

/// All power on the largest tally, ties drawn uniformly; uniform `P0/N` when
/// nothing was voted for.
pub fn allocate_single(v: &[f64], p0: f64, rng: &mut SimRng) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![0.0; n];
    match pick_single(v, rng) {
        Some(best) => out[best] = p0,
        None => out.fill(p0 / n as f64),
    }
    out
}

fn pick_single(v: &[f64], rng: &mut SimRng) -> Option<usize> {
    let max = v.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return None;
    }
    let ties = v.iter().filter(|&&x| x == max).count();
    let pick = if ties > 1 { rng.random_range(0..ties) } else { 0 };
    v.iter()
        .enumerate()
        .filter(|&(_, &x)| x == max)
        .nth(pick)
        .map(|(i, _)| i)
}

/// `P_j = P0 v_j / sum v`; uniform `P0/N` when nothing was voted for.
pub fn allocate_proportional(v: &[f64], p0: f64) -> Vec<f64> {
    let n = v.len();
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return vec![p0 / n as f64; n];
    }
    v.iter().map(|&x| p0 * x / total).collect()
}

/// One EN's transmit powers for a block.
#[derive(Debug, Clone, PartialEq)]
pub enum EnPower {
    /// The same power on each of the EN's sub-channels.
    Uniform(f64),
    /// Powers on the listed sub-channels; all others are silent.
    Channels(Vec<(usize, f64)>),
}

/// Transmit power per sub-channel, grouped by owning EN.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    per_en: Vec<EnPower>,
}

impl PowerAllocation {
    pub fn uniform(scenario: &NetworkScenario) -> Self {
        let p = scenario.p0 / scenario.n_per_en as f64;
        PowerAllocation {
            per_en: vec![EnPower::Uniform(p); scenario.num_ens()],
        }
    }

    pub fn from_per_en(per_en: Vec<EnPower>) -> Self {
        PowerAllocation { per_en }
    }

    pub fn per_en(&self) -> &[EnPower] {
        &self.per_en
    }

    pub fn per_en_mut(&mut self) -> &mut [EnPower] {
        &mut self.per_en
    }

    /// Total power radiated by `en`.
    pub fn en_total(&self, en: usize, n_per_en: usize) -> f64 {
        match &self.per_en[en] {
            EnPower::Uniform(p) => p * n_per_en as f64,
            EnPower::Channels(list) => list.iter().map(|&(_, p)| p).sum(),
        }
    }

    /// Number of sub-channels carrying power.
    pub fn active_channels(&self, n_per_en: usize) -> usize {
        self.per_en
            .iter()
            .map(|e| match e {
                EnPower::Uniform(p) if *p > 0.0 => n_per_en,
                EnPower::Uniform(_) => 0,
                EnPower::Channels(list) => list.iter().filter(|&&(_, p)| p > 0.0).count(),
            })
            .sum()
    }

    pub fn to_dense(&self, scenario: &NetworkScenario) -> Vec<f64> {
        let mut dense = vec![0.0; scenario.num_subchannels()];
        for (j, slot) in dense.iter_mut().enumerate() {
            if let EnPower::Uniform(p) = self.per_en[scenario.owner(j)] {
                *slot = p;
            }
        }
        for e in &self.per_en {
            if let EnPower::Channels(list) = e {
                for &(j, p) in list {
                    dense[j] = p;
                }
            }
        }
        dense
    }
}

/// The nine charging schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    SinglUniv,
    SinglPrio,
    PropoUniv,
    PropoPrio,
    EqlPower,
    SinglUnwt,
    PropoUnwt,
    SinglGreedy,
    PropoGreedy,
}

impl Scheme {
    pub const ALL: [Scheme; 9] = [
        Scheme::SinglUniv,
        Scheme::SinglPrio,
        Scheme::PropoUniv,
        Scheme::PropoPrio,
        Scheme::EqlPower,
        Scheme::SinglUnwt,
        Scheme::PropoUnwt,
        Scheme::SinglGreedy,
        Scheme::PropoGreedy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::SinglUniv => "Singl-Univ",
            Scheme::SinglPrio => "Singl-Prio",
            Scheme::PropoUniv => "Propo-Univ",
            Scheme::PropoPrio => "Propo-Prio",
            Scheme::EqlPower => "EqlPower",
            Scheme::SinglUnwt => "Singl-Unwt",
            Scheme::PropoUnwt => "Propo-Unwt",
            Scheme::SinglGreedy => "Singl-Greedy",
            Scheme::PropoGreedy => "Propo-Greedy",
        }
    }

    pub fn policy(self) -> Box<dyn ChargingPolicy> {
        use AllocationRule::*;
        use TallyRule::*;
        use Weighting::*;
        let voting = |tally, weighting, allocation, greedy| {
            Box::new(VotingPolicy {
                scheme: self,
                tally,
                weighting,
                allocation,
                greedy,
            }) as Box<dyn ChargingPolicy>
        };
        match self {
            Scheme::SinglUniv => voting(Universal, Matrix, Single, false),
            Scheme::SinglPrio => voting(Prioritized, Matrix, Single, false),
            Scheme::PropoUniv => voting(Universal, Matrix, Proportional, false),
            Scheme::PropoPrio => voting(Prioritized, Matrix, Proportional, false),
            Scheme::SinglUnwt => voting(Universal, Unit, Single, false),
            Scheme::PropoUnwt => voting(Universal, Unit, Proportional, false),
            Scheme::SinglGreedy => voting(Universal, Unit, Single, true),
            Scheme::PropoGreedy => voting(Universal, Unit, Proportional, true),
            Scheme::EqlPower => Box::new(EqualPower),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

impl Serialize for Scheme {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Scheme {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn make_policy(name: &str) -> Result<Box<dyn ChargingPolicy>> {
    Ok(name.parse::<Scheme>()?.policy())
}

/// A power allocation function of (battery states, votes).
pub trait ChargingPolicy: Send + Sync + fmt::Debug {
    fn scheme(&self) -> Scheme;

    /// Votes a device in `state` reports.
    fn votes_for(&self, state: BatteryState, weights: &WeightingMatrix) -> usize;

    /// Share of each block spent on power transfer rather than signaling.
    fn transfer_fraction(&self, scenario: &NetworkScenario) -> f64;

    fn allocate(
        &self,
        sheet: &VoteSheet,
        weights: &WeightingMatrix,
        scenario: &NetworkScenario,
        rng: &mut SimRng,
        out: &mut PowerAllocation,
    );
}

/// Channel-oblivious baseline: `P0/N` on every sub-channel and no signaling.
#[derive(Debug, Clone, Copy)]
pub struct EqualPower;

impl ChargingPolicy for EqualPower {
    fn scheme(&self) -> Scheme {
        Scheme::EqlPower
    }

    fn votes_for(&self, _: BatteryState, _: &WeightingMatrix) -> usize {
        0
    }

    fn transfer_fraction(&self, _: &NetworkScenario) -> f64 {
        1.0
    }

    fn allocate(
        &self,
        _: &VoteSheet,
        _: &WeightingMatrix,
        scenario: &NetworkScenario,
        _: &mut SimRng,
        out: &mut PowerAllocation,
    ) {
        *out = PowerAllocation::uniform(scenario);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VotingPolicy {
    pub scheme: Scheme,
    pub tally: TallyRule,
    pub weighting: Weighting,
    pub allocation: AllocationRule,
    /// Every device reports only its single best sub-channel.
    pub greedy: bool,
}

impl ChargingPolicy for VotingPolicy {
    fn scheme(&self) -> Scheme {
        self.scheme
    }

    fn votes_for(&self, state: BatteryState, weights: &WeightingMatrix) -> usize {
        if self.greedy {
            1
        } else {
            weights.votes_for(state)
        }
    }

    fn transfer_fraction(&self, scenario: &NetworkScenario) -> f64 {
        1.0 - scenario.alpha1 - scenario.alpha2
    }

    fn allocate(
        &self,
        sheet: &VoteSheet,
        weights: &WeightingMatrix,
        scenario: &NetworkScenario,
        rng: &mut SimRng,
        out: &mut PowerAllocation,
    ) {
        let mut tallies = vec![0.0; scenario.num_subchannels()];
        tally_all(sheet, weights, self.tally, self.weighting, scenario, &mut tallies);
        let m = scenario.num_ens();
        if out.per_en.len() != m {
            out.per_en = vec![EnPower::Channels(Vec::new()); m];
        }
        let p0 = scenario.p0;
        let uniform = p0 / scenario.n_per_en as f64;
        // Scan ENs in channel order; channel sets are the owner classes.
        let mut best = vec![(0.0f64, 0usize); m];
        let mut sums = vec![0.0f64; m];
        for (j, &v) in tallies.iter().enumerate() {
            let en = scenario.owner(j);
            sums[en] += v;
            if v > best[en].0 {
                best[en] = (v, 1);
            } else if v > 0.0 && v == best[en].0 {
                best[en].1 += 1;
            }
        }
        for en in 0..m {
            if sums[en] <= 0.0 {
                out.per_en[en] = EnPower::Uniform(uniform);
                continue;
            }
            let mut list = match std::mem::replace(&mut out.per_en[en], EnPower::Uniform(0.0)) {
                EnPower::Channels(mut l) => {
                    l.clear();
                    l
                }
                EnPower::Uniform(_) => Vec::new(),
            };
            match self.allocation {
                AllocationRule::Single => {
                    let (max, ties) = best[en];
                    let pick = if ties > 1 { rng.random_range(0..ties) } else { 0 };
                    let j = tallies
                        .iter()
                        .enumerate()
                        .filter(|&(j, &v)| v == max && scenario.owner(j) == en)
                        .nth(pick)
                        .map(|(j, _)| j)
                        .expect("tie set is non-empty");
                    list.push((j, p0));
                }
                AllocationRule::Proportional => {
                    let total = sums[en];
                    list.extend(
                        tallies
                            .iter()
                            .enumerate()
                            .filter(|&(j, &v)| v > 0.0 && scenario.owner(j) == en)
                            .map(|(j, &v)| (j, p0 * v / total)),
                    );
                }
            }
            out.per_en[en] = EnPower::Channels(list);
        }
    }
}
