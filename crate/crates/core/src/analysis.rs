//! Lifetime analysis: the closed-form expected lifetime, rate estimation,
//! the compensated-energy drift check, the approximate-dynamics error study
//! and the minimum-power search.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::device::BatteryMode;
use crate::engine::{monte_carlo, run_lifetime, trial_seed, MonteCarloSummary, Simulation, SimulationSetup};
use crate::error::{Error, Result};
use crate::rng::{self, SeedKey};
use crate::stats;

/// Inputs and result of the closed-form lifetime estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LifetimeEstimate {
    pub expected_lifetime: f64,
    pub eps0: f64,
    pub eps_r: f64,
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// `(eps0 - eps_r) / (sum mu - sum (1 - alpha) lambda)`.
pub fn expected_lifetime(eps0: f64, eps_r: f64, mu: &[f64], lambda: &[f64], alpha: &[f64]) -> Result<f64> {
    let drain: f64 =
        mu.iter().sum::<f64>() - lambda.iter().zip(alpha).map(|(l, a)| (1.0 - a) * l).sum::<f64>();
    if !(drain > 0.0) {
        return Err(Error::InfiniteLifetime { drain });
    }
    Ok((eps0 - eps_r) / drain)
}

/// Pooled rates from exact-mode runs that stop at the first outage.
#[derive(Debug, Clone)]
pub struct RateEstimate {
    pub estimate: LifetimeEstimate,
    /// The uncensored runs the rates were measured on.
    pub runs: MonteCarloSummary,
    pub excluded: usize,
}

impl RateEstimate {
    pub fn simulated_lifetime(&self) -> f64 {
        self.runs.mean_lifetime
    }

    pub fn relative_error(&self) -> f64 {
        (self.estimate.expected_lifetime - self.simulated_lifetime()).abs() / self.simulated_lifetime()
    }
}

/// Runs `trials` lifetimes with `K^ = 1` in exact mode and pools each WD's
/// energies over all of them: `lambda_k = sum Q / sum L`, `mu_k = sum E / sum L`,
/// `alpha_k = wasted / arriving`. `eps_r` is the trial mean.
pub fn estimate_rates(setup: &SimulationSetup, trials: usize, seed: u64) -> Result<RateEstimate> {
    let setup = setup.clone().with_quorum(1).with_mode(BatteryMode::Exact);
    let all = monte_carlo(&setup, trials, seed)?;
    let total = all.runs.len();
    let runs: Vec<_> = all.runs.into_iter().filter(|r| !r.censored).collect();
    let excluded = total - runs.len();
    if excluded > 0 {
        log::warn!("estimate_rates: {excluded} censored run(s) excluded");
    }
    if runs.is_empty() {
        return Err(Error::AllCensored(total));
    }
    let k = setup.scenario.num_wds();
    let time: f64 = runs.iter().map(|r| r.lifetime).sum();
    let mut arriving = vec![0.0; k];
    let mut wasted = vec![0.0; k];
    let mut consumed = vec![0.0; k];
    for r in &runs {
        for w in 0..k {
            let q = r.lambda[w] * r.lifetime;
            arriving[w] += q;
            wasted[w] += r.alpha[w] * q;
            consumed[w] += r.mu[w] * r.lifetime;
        }
    }
    let per_time = |x: &Vec<f64>| {
        x.iter()
            .map(|v| if time > 0.0 { v / time } else { 0.0 })
            .collect::<Vec<_>>()
    };
    let lambda = per_time(&arriving);
    let mu = per_time(&consumed);
    let alpha: Vec<f64> = arriving
        .iter()
        .zip(&wasted)
        .map(|(a, w)| if *a > 0.0 { w / a } else { 0.0 })
        .collect();
    let eps0 = setup.scenario.initial_total_energy();
    let eps_r = stats::mean(&runs.iter().map(|r| r.eps_r).collect::<Vec<_>>());
    let expected = expected_lifetime(eps0, eps_r, &mu, &lambda, &alpha)?;
    Ok(RateEstimate {
        estimate: LifetimeEstimate {
            expected_lifetime: expected,
            eps0,
            eps_r,
            mu,
            lambda,
            alpha,
        },
        runs: MonteCarloSummary::from_runs(runs),
        excluded,
    })
}

/// How conditional means are stratified in the drift check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    /// Per WD and its own battery state.
    PerDevice,
    /// Per WD and the whole battery-state vector; meant for tiny networks.
    Vector,
}

#[derive(Debug, Clone)]
pub struct DriftConfig {
    pub blocks: u64,
    pub trials: usize,
    /// Trials of the pre-pass that estimates conditional means.
    pub pre_trials: usize,
    pub conditioning: Conditioning,
    /// Strata with fewer pre-pass samples are skipped.
    pub min_samples: usize,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            blocks: 10_000,
            trials: 50,
            pre_trials: 50,
            conditioning: Conditioning::PerDevice,
            min_samples: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    /// Mean one-step change of the compensated energy per device-block (J).
    pub drift: f64,
    /// Standard error of `drift`, including the conditional-mean estimates.
    pub std_error: f64,
    /// Mean consumption per device-block, for scale.
    pub block_energy: f64,
    pub samples: usize,
    pub skipped_strata: Vec<String>,
    pub skipped_samples: usize,
}

impl DriftReport {
    pub fn z(&self) -> f64 {
        if self.std_error > 0.0 {
            self.drift / self.std_error
        } else if self.drift == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// Two-sided p-value of a zero-mean test.
    pub fn p_value(&self) -> f64 {
        2.0 * (1.0 - stats::normal_cdf(self.z().abs()))
    }

    /// Zero drift is not rejected at `confidence`, or the drift is within
    /// rounding of zero.
    pub fn is_zero_mean(&self, confidence: f64) -> bool {
        self.drift.abs() <= 1e-12 * self.block_energy.max(f64::MIN_POSITIVE)
            || self.p_value() > 1.0 - confidence
    }
}

type StratumKey = Vec<u16>;

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    e: f64,
    q: f64,
    ee: f64,
    qq: f64,
    eq: f64,
}

impl Moments {
    fn add(&mut self, e: f64, q: f64) {
        self.n += 1.0;
        self.e += e;
        self.q += q;
        self.ee += e * e;
        self.qq += q * q;
        self.eq += e * q;
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.e += o.e;
        self.q += o.q;
        self.ee += o.ee;
        self.qq += o.qq;
        self.eq += o.eq;
    }

    fn mean_e(&self) -> f64 {
        self.e / self.n
    }

    fn mean_q(&self) -> f64 {
        self.q / self.n
    }

    /// Sampling variances of the two means and their covariance.
    fn mean_covariance(&self) -> (f64, f64, f64) {
        let n = self.n;
        let d = n * (n - 1.0).max(1.0);
        let ve = (self.ee - self.e * self.e / n) / d;
        let vq = (self.qq - self.q * self.q / n) / d;
        let c = (self.eq - self.e * self.q / n) / d;
        (ve.max(0.0), vq.max(0.0), c)
    }
}

fn stratum(conditioning: Conditioning, wd: usize, sim: &Simulation) -> StratumKey {
    let devices = sim.devices();
    let mut key = vec![wd as u16];
    match conditioning {
        Conditioning::PerDevice => key.push(devices[wd].battery_state.get() as u16),
        Conditioning::Vector => key.extend(devices.iter().map(|d| d.battery_state.get() as u16)),
    }
    key
}

fn describe(key: &StratumKey) -> String {
    let states: Vec<String> = key[1..].iter().map(|s| s.to_string()).collect();
    format!("wd {} | B = ({})", key[0], states.join(","))
}

fn pre_pass(
    setup: &SimulationSetup,
    cfg: &DriftConfig,
    key: SeedKey,
) -> Result<BTreeMap<StratumKey, Moments>> {
    let parts = (0..cfg.pre_trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut sim = Simulation::new(setup, key.path(&[0, t]).value())?;
            let mut local: BTreeMap<StratumKey, Moments> = BTreeMap::new();
            while sim.blocks() < cfg.blocks && !sim.is_finished() {
                let before: Vec<(StratumKey, bool)> = (0..sim.devices().len())
                    .map(|k| (stratum(cfg.conditioning, k, &sim), sim.devices()[k].in_outage))
                    .collect();
                sim.step_block();
                for (k, (s, out)) in before.into_iter().enumerate() {
                    if !out {
                        local
                            .entry(s)
                            .or_default()
                            .add(sim.last_consumed()[k], sim.last_harvested()[k]);
                    }
                }
            }
            Ok(local)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut merged: BTreeMap<StratumKey, Moments> = BTreeMap::new();
    for part in parts {
        for (k, m) in part {
            merged.entry(k).or_default().merge(&m);
        }
    }
    Ok(merged)
}

#[derive(Debug, Default)]
struct MainPass {
    sum: f64,
    block_sq: Vec<(f64, f64)>,
    consumed: f64,
    samples: usize,
    skipped: usize,
    skipped_strata: std::collections::BTreeSet<StratumKey>,
    /// Per stratum: samples, and samples with the battery below capacity.
    usage: BTreeMap<StratumKey, (f64, f64)>,
}

/// Estimates the one-step drift of `Z = X + Y`, where `Y` adds back each
/// block's conditional mean consumption and removes the conditional mean
/// harvest unless the battery is already full. Runs in approximate mode.
pub fn martingale_drift_check(setup: &SimulationSetup, cfg: &DriftConfig, seed: u64) -> Result<DriftReport> {
    let setup = setup.clone().with_mode(BatteryMode::Approximate);
    let root = SeedKey::new(seed).child(rng::STUDY);
    let means = pre_pass(&setup, cfg, root.child(0))?;
    let capacity = setup.scenario.battery_capacity;
    let main_key = root.child(1);

    let parts = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut sim = Simulation::new(&setup, main_key.path(&[1, t]).value())?;
            let mut acc = MainPass::default();
            while sim.blocks() < cfg.blocks && !sim.is_finished() {
                let before: Vec<_> = (0..sim.devices().len())
                    .map(|k| (stratum(cfg.conditioning, k, &sim), sim.devices()[k]))
                    .collect();
                sim.step_block();
                let (mut block_sum, mut block_n) = (0.0, 0.0);
                for (k, (s, dev)) in before.into_iter().enumerate() {
                    if dev.in_outage {
                        continue;
                    }
                    let m = match means.get(&s) {
                        Some(m) if m.n >= cfg.min_samples as f64 => m,
                        _ => {
                            acc.skipped += 1;
                            acc.skipped_strata.insert(s);
                            continue;
                        }
                    };
                    let charging = dev.residual_energy < capacity;
                    let e = sim.last_consumed()[k];
                    let q = if charging { sim.last_harvested()[k] } else { 0.0 };
                    let compensation = m.mean_e() - if charging { m.mean_q() } else { 0.0 };
                    block_sum += -e + q + compensation;
                    block_n += 1.0;
                    acc.consumed += e;
                    let u = acc.usage.entry(s).or_default();
                    u.0 += 1.0;
                    if charging {
                        u.1 += 1.0;
                    }
                }
                if block_n > 0.0 {
                    acc.sum += block_sum;
                    acc.block_sq.push((block_sum, block_n));
                    acc.samples += block_n as usize;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total = MainPass::default();
    for p in parts {
        total.sum += p.sum;
        total.block_sq.extend(p.block_sq);
        total.consumed += p.consumed;
        total.samples += p.samples;
        total.skipped += p.skipped;
        total.skipped_strata.extend(p.skipped_strata);
        for (k, (a, b)) in p.usage {
            let u = total.usage.entry(k).or_default();
            u.0 += a;
            u.1 += b;
        }
    }
    let n = total.samples as f64;
    if total.samples == 0 {
        return Err(Error::config(
            "drift",
            "no usable samples; all strata were skipped",
        ));
    }
    let drift = total.sum / n;
    // Block sums are martingale differences, hence uncorrelated across blocks.
    let var_main: f64 = total
        .block_sq
        .iter()
        .map(|&(s, c)| (s - c * drift).powi(2))
        .sum::<f64>()
        / (n * n);
    // Error carried in from the estimated conditional means.
    let mut var_pre = 0.0;
    for (key, &(all, charging)) in &total.usage {
        let (ve, vq, c) = means[key].mean_covariance();
        let (we, wq) = (all / n, charging / n);
        var_pre += we * we * ve + wq * wq * vq - 2.0 * we * wq * c;
    }
    Ok(DriftReport {
        drift,
        std_error: (var_main + var_pre.max(0.0)).sqrt(),
        block_energy: total.consumed / n,
        samples: total.samples,
        skipped_strata: total.skipped_strata.iter().map(describe).collect(),
        skipped_samples: total.skipped,
    })
}

/// Parameters of the exact-versus-approximate battery comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelingErrorSetup {
    pub capacity: f64,
    /// `E[E]` as a fraction of capacity.
    pub consumption_fraction: f64,
    /// Start and reset level as a fraction of capacity.
    pub initial_fraction: f64,
}

impl Default for ModelingErrorSetup {
    fn default() -> Self {
        ModelingErrorSetup {
            capacity: 3600.0,
            consumption_fraction: 1e-3,
            initial_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelingError {
    pub ratio: f64,
    /// Mean per-block net harvest `Q_stored - E` under exact dynamics (J).
    pub exact_net: f64,
    pub approx_net: f64,
    /// `|exact_net - approx_net| / E[E]`.
    pub error: f64,
}

/// Drives exact and approximate batteries with the same exponential `Q` and
/// `E` draws for `blocks` blocks per ratio `E[Q]/E[E]`. A battery that empties
/// restarts at the initial level; the emptying block still counts its full
/// unclamped net energy, so only the overcharge rule separates the two.
pub fn modeling_error_study(
    setup: &ModelingErrorSetup,
    ratios: &[f64],
    blocks: u64,
    seed: u64,
) -> Result<Vec<ModelingError>> {
    if ratios.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
        return Err(Error::config("ratios", "must be finite and non-negative"));
    }
    let c = setup.capacity;
    let mean_e = setup.consumption_fraction * c;
    let start = setup.initial_fraction * c;
    Ok(ratios
        .par_iter()
        .enumerate()
        .map(|(i, &ratio)| {
            let mut rng = SeedKey::new(seed).path(&[rng::STUDY, i as u64]).rng();
            let mean_q = ratio * mean_e;
            let (mut xe, mut xa) = (start, start);
            let (mut net_e, mut net_a) = (0.0, 0.0);
            for _ in 0..blocks {
                let e = mean_e * rng.sample::<f64, _>(Exp1);
                let q = if mean_q > 0.0 {
                    mean_q * rng.sample::<f64, _>(Exp1)
                } else {
                    0.0
                };

                let raw = xe - e + q;
                let next = raw.min(c);
                net_e += next - xe;
                xe = if next <= 0.0 { start } else { next };

                let accepted = if xa >= c { 0.0 } else { q };
                let next = xa - e + accepted;
                net_a += next - xa;
                xa = if next <= 0.0 { start } else { next };
            }
            let exact_net = net_e / blocks as f64;
            let approx_net = net_a / blocks as f64;
            ModelingError {
                ratio,
                exact_net,
                approx_net,
                error: (exact_net - approx_net).abs() / mean_e,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSearch {
    /// Midpoint of the final bracket (W).
    pub p0: f64,
    pub low: f64,
    pub high: f64,
    pub evaluations: usize,
}

/// Whether every trial at `p0` lives at least `target` seconds. Trials run in
/// order and stop at the first failure; runs are capped at the target.
pub fn reaches_target(
    setup: &SimulationSetup,
    p0: f64,
    target: f64,
    trials: usize,
    seed: u64,
) -> Result<bool> {
    let max_blocks = (target / setup.scenario.block_length).ceil() as u64;
    let setup = setup.clone().with_p0(p0).with_max_blocks(max_blocks);
    for t in 0..trials as u64 {
        let r = run_lifetime(&setup, trial_seed(seed, t))?;
        if !(r.censored || r.lifetime >= target) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Bisection for the smallest `P0` in `[0, cap]` at which all trials reach
/// `target` seconds. Every level reuses the same trial seeds.
pub fn min_power_search(
    setup: &SimulationSetup,
    target: f64,
    trials: usize,
    tolerance: f64,
    cap: f64,
    seed: u64,
) -> Result<PowerSearch> {
    if !(tolerance > 0.0) || !(cap > 0.0) {
        return Err(Error::config("search", "tolerance and cap must be positive"));
    }
    if target <= 0.0 {
        return Ok(PowerSearch {
            p0: 0.0,
            low: 0.0,
            high: 0.0,
            evaluations: 0,
        });
    }
    let mut evaluations = 1;
    if !reaches_target(setup, cap, target, trials, seed)? {
        return Err(Error::Unachievable { cap });
    }
    let (mut low, mut high) = (0.0, cap);
    while high - low > tolerance {
        let mid = 0.5 * (low + high);
        evaluations += 1;
        if reaches_target(setup, mid, target, trials, seed)? {
            high = mid;
        } else {
            low = mid;
        }
        log::debug!("min_power_search [{low}, {high}]");
    }
    Ok(PowerSearch {
        p0: 0.5 * (low + high),
        low,
        high,
        evaluations,
    })
}
