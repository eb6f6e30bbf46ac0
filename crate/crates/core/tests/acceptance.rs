//! End-to-end acceptance checks, one PASS/FAIL line each.
//!
//! `cargo test -p wpt-charge --test acceptance -- <name>...` runs only the
//! checks whose name contains one of the arguments. The full set takes a few
//! hours on one core; `properties` and `no_wpt_lifetime` take seconds.

use std::process::ExitCode;
use std::time::Instant;

use wpt_charge::analysis::{
    estimate_rates, martingale_drift_check, min_power_search, modeling_error_study, Conditioning,
    DriftConfig, ModelingErrorSetup,
};
use wpt_charge::channel::ChannelModel;
use wpt_charge::device::{cast_votes, update_battery_exact, BatteryStateConfig};
use wpt_charge::engine::{monte_carlo, monte_carlo_sequential, run_lifetime};
use wpt_charge::experiment::{lifetime_sweep, placement, placement_master_seed, setup_for};
use wpt_charge::policy::allocate_single;
use wpt_charge::rng::SeedKey;
use wpt_charge::stats::mann_kendall;
use wpt_charge::topology::{triangle_ens, ScenarioParams};
use wpt_charge::{
    BatteryMode, BatteryState, ConsumptionModel, DeviceState, ExperimentConfig, NetworkScenario, Position,
    PowerAllocation, Scheme, SimulationSetup, VoteSheet, WeightingMatrix,
};

use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn() -> Outcome;

const CHECKS: &[(&str, Check)] = &[
    ("lifetime_formula", lifetime_formula),
    ("scheme_ordering", scheme_ordering),
    ("minimum_power_saving", minimum_power_saving),
    ("weight_exponent_trend", weight_exponent_trend),
    ("feedback_tradeoff", feedback_tradeoff),
    ("modeling_error", modeling_error),
    ("properties", properties),
    ("no_wpt_lifetime", no_wpt_lifetime),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in CHECKS {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {name}: {} ({:.0} s)",
            out.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!out.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn base_config() -> ExperimentConfig {
    ExperimentConfig {
        seed: 2024,
        ..ExperimentConfig::default()
    }
}

fn mean_lifetime_hours(config: &ExperimentConfig, scheme: Scheme, weights: &WeightingMatrix, d: f64) -> f64 {
    let sweep = lifetime_sweep(config, scheme, weights, d, config.physical.tx_power).unwrap();
    sweep.summary.mean_lifetime / 3600.0
}

/// Closed-form lifetime against the simulated mean, first outage, 20 trials.
fn lifetime_formula() -> Outcome {
    let config = base_config();
    let weights = config.weights().unwrap();
    let scenario = placement(&config, &weights, 3.0, 0).unwrap();
    let seed = placement_master_seed(&config, 3.0, 0);
    let mut pass = true;
    let mut parts = Vec::new();
    for scheme in [Scheme::EqlPower, Scheme::SinglUniv, Scheme::PropoUniv] {
        for p0 in [0.1, 0.25, 0.5] {
            let setup = setup_for(&config, scenario.clone(), scheme, &weights)
                .unwrap()
                .with_p0(p0);
            match estimate_rates(&setup, 20, seed) {
                Ok(est) => {
                    let sim = est.simulated_lifetime();
                    let ana = est.estimate.expected_lifetime;
                    let ok = est.relative_error() <= 0.02 && ana <= 1.01 * sim && est.excluded == 0;
                    pass &= ok;
                    parts.push(format!(
                        "{scheme}@{p0}W sim {:.2} h ana {:.2} h err {:.4}%{}",
                        sim / 3600.0,
                        ana / 3600.0,
                        100.0 * est.relative_error(),
                        if ok { "" } else { " <-" }
                    ));
                }
                Err(e) => {
                    pass = false;
                    parts.push(format!("{scheme}@{p0}W {e} <-"));
                }
            }
        }
    }
    Outcome::new(pass, parts.join("; "))
}

/// Mean lifetimes at P0 = 1 W, 5 placements x 5 trials.
fn scheme_ordering() -> Outcome {
    let config = ExperimentConfig {
        placements: 5,
        trials: 5,
        ..base_config()
    };
    let weights = config.weights().unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for d in [3.0, 3.9] {
        let life = |s| mean_lifetime_hours(&config, s, &weights, d);
        let su = life(Scheme::SinglUniv);
        let pu = life(Scheme::PropoUniv);
        let eq = life(Scheme::EqlPower);
        let sp = life(Scheme::SinglPrio);
        let sg = life(Scheme::SinglGreedy);
        let pg = life(Scheme::PropoGreedy);
        let checks = [
            ("Singl-Univ>Propo-Univ>EqlPower", su > pu && pu > eq),
            ("Singl-Univ>=1.10xPropo-Univ", su >= 1.10 * pu),
            ("Singl-Univ>=1.25xEqlPower", su >= 1.25 * eq),
            ("Singl-Univ>Singl-Prio", su > sp),
            ("Singl-Greedy<Singl-Univ", sg < su),
            ("Propo-Greedy<Propo-Univ", pg < pu),
        ];
        let failed: Vec<_> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
        pass &= failed.is_empty();
        parts.push(format!(
            "d={d}: SU {su:.1} PU {pu:.1} EQ {eq:.1} SP {sp:.1} SG {sg:.1} PG {pg:.1} h, SU/PU {:.3} SU/EQ {:.3}{}",
            su / pu,
            su / eq,
            if failed.is_empty() { String::new() } else { format!(", failed [{}]", failed.join(", ")) }
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

/// Smallest P0 keeping 5 trials alive for 500 h.
fn minimum_power_saving() -> Outcome {
    let config = ExperimentConfig {
        trials: 5,
        target_hours: 500.0,
        ..base_config()
    };
    let weights = config.weights().unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for d in [3.0, 3.9] {
        let scenario = placement(&config, &weights, d, 0).unwrap();
        let seed = placement_master_seed(&config, d, 0);
        let mut star = Vec::new();
        for scheme in [Scheme::SinglUniv, Scheme::EqlPower] {
            let setup = setup_for(&config, scenario.clone(), scheme, &weights).unwrap();
            let r = min_power_search(
                &setup,
                config.target_hours * 3600.0,
                config.trials,
                config.search_tolerance,
                config.power_cap,
                seed,
            );
            star.push(r.map(|s| s.p0).ok());
        }
        match (star[0], star[1]) {
            (Some(su), Some(eq)) => {
                let ok = su <= 0.65 * eq;
                pass &= ok;
                parts.push(format!(
                    "d={d}: Singl-Univ {su:.3} W EqlPower {eq:.3} W ratio {:.3}",
                    su / eq
                ));
            }
            _ => {
                pass = false;
                parts.push(format!("d={d}: search failed {star:?}"));
            }
        }
    }
    Outcome::new(pass, parts.join("; "))
}

/// Lifetime over W(r), r = 2..6, must show a significant decreasing trend.
fn weight_exponent_trend() -> Outcome {
    let config = ExperimentConfig {
        placements: 5,
        trials: 5,
        ..base_config()
    };
    let lifetimes: Vec<f64> = [2.0, 3.0, 4.0, 5.0, 6.0]
        .iter()
        .map(|&r| {
            let w = WeightingMatrix::power_exponent(r).unwrap();
            mean_lifetime_hours(&config, Scheme::SinglUniv, &w, 3.0)
        })
        .collect();
    let mk = mann_kendall(&lifetimes);
    Outcome::new(
        mk.z <= -1.645,
        format!("lifetimes {:.1?} h, S {} Z {:.3}", lifetimes, mk.s, mk.z),
    )
}

/// Lifetime over feedback amounts 1..5 must peak at 3.
fn feedback_tradeoff() -> Outcome {
    let config = ExperimentConfig {
        placements: 5,
        trials: 5,
        ..base_config()
    };
    let lifetimes: Vec<f64> = (1..=5)
        .map(|a| {
            let w = WeightingMatrix::feedback_amount(a).unwrap();
            mean_lifetime_hours(&config, Scheme::SinglUniv, &w, 3.0)
        })
        .collect();
    let best = (0..5)
        .max_by(|&a, &b| lifetimes[a].total_cmp(&lifetimes[b]))
        .unwrap()
        + 1;
    Outcome::new(
        best == 3,
        format!("lifetimes {:.1?} h, peak at {best}", lifetimes),
    )
}

fn modeling_error() -> Outcome {
    let ratios = [0.5, 1.0, 1.5, 2.0];
    let r = modeling_error_study(&ModelingErrorSetup::default(), &ratios, 100_000, 7).unwrap();
    let pass = r.iter().all(|e| e.error < 3e-3);
    let parts: Vec<_> = r
        .iter()
        .map(|e| format!("{}: {:.4}%", e.ratio, 100.0 * e.error))
        .collect();
    Outcome::new(pass, parts.join(", "))
}

fn small_network(p0: f64) -> SimulationSetup {
    let params = ScenarioParams {
        p0,
        battery_capacity: 2.0,
        initial_energy: 1.5,
        ..Default::default()
    };
    let wds = vec![
        Position::new(0.0, 0.5),
        Position::new(-1.5, -1.0),
        Position::new(1.5, -1.0),
    ];
    SimulationSetup::new(
        NetworkScenario::new(&params, triangle_ens(), wds).unwrap(),
        Scheme::SinglUniv,
    )
}

fn random_sheet(rng: &mut impl Rng, scenario: &NetworkScenario, weights: &WeightingMatrix) -> VoteSheet {
    let k = scenario.num_wds();
    let mj = scenario.num_subchannels();
    let entries = (0..k)
        .map(|_| {
            let state = BatteryState::new(rng.random_range(1..=weights.num_states()));
            let gains: Vec<f64> = (0..mj).map(|_| rng.random::<f64>()).collect();
            let device = DeviceState {
                battery_state: state,
                ..DeviceState::new(1.0, &BatteryStateConfig::default_for(2.0))
            };
            (state, cast_votes(&device, &gains, weights))
        })
        .collect();
    VoteSheet::from_entries(entries)
}

/// Invariants that hold for any seed; each failing property is named.
fn properties() -> Outcome {
    let mut failed: Vec<&str> = Vec::new();
    let mut rng = SeedKey::new(99).rng();
    let config = base_config();
    let weights = config.weights().unwrap();
    let scenario = placement(&config, &weights, 3.0, 0).unwrap();
    let n = scenario.n_per_en;

    // Every scheme spends exactly P0 per EN.
    let mut conserved = true;
    for _ in 0..200 {
        let sheet = random_sheet(&mut rng, &scenario, &weights);
        for scheme in Scheme::ALL {
            let mut alloc = PowerAllocation::uniform(&scenario);
            scheme
                .policy()
                .allocate(&sheet, &weights, &scenario, &mut rng, &mut alloc);
            for en in 0..scenario.num_ens() {
                conserved &= (alloc.en_total(en, n) - scenario.p0).abs() <= 1e-12 * scenario.p0;
            }
        }
    }
    if !conserved {
        failed.push("power conservation");
    }

    let cfg = BatteryStateConfig::default_for(2.0);
    let mut clamped = true;
    for _ in 0..10_000 {
        let start = DeviceState::new(rng.random_range(0.0..=2.0), &cfg);
        let u = update_battery_exact(
            &start,
            rng.random_range(0.0..3.0),
            rng.random_range(0.0..3.0),
            &cfg,
        );
        let e = u.state.residual_energy;
        clamped &= (0.0..=2.0).contains(&e) && u.wasted >= 0.0 && u.shortfall >= 0.0;
    }
    if !clamped {
        failed.push("battery clamping");
    }

    // Vote counts depend only on the battery state.
    let mut counts = true;
    for _ in 0..500 {
        let sheet = random_sheet(&mut rng, &scenario, &weights);
        for (state, votes) in sheet.iter() {
            counts &= votes.len() == weights.votes_for(state);
        }
    }
    if !counts {
        failed.push("vote counts");
    }

    // Scaling the tallies leaves the single-channel choice unchanged.
    let mut scale = true;
    for i in 0..2000u64 {
        let v: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..4u8))).collect();
        let c = rng.random_range(1e-6..1e6);
        let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
        let a = allocate_single(&v, 1.0, &mut SeedKey::new(i).rng());
        let b = allocate_single(&scaled, 1.0, &mut SeedKey::new(i).rng());
        scale &= a == b;
    }
    if !scale {
        failed.push("single-channel scale invariance");
    }

    // Votes aimed at the last EN never move the other ENs' power.
    let mut independent = true;
    let last = scenario.num_ens() - 1;
    let last_channels: Vec<usize> = scenario.channels_of(last).collect();
    for i in 0..200u64 {
        let sheet = random_sheet(&mut rng, &scenario, &weights);
        let mut other = sheet.clone();
        for wd in 0..other.len() {
            for j in other.votes_mut(wd).iter_mut() {
                if scenario.owner(*j) == last {
                    *j = last_channels[rng.random_range(0..n)];
                }
            }
        }
        for scheme in Scheme::ALL {
            let mut a = PowerAllocation::uniform(&scenario);
            let mut b = PowerAllocation::uniform(&scenario);
            let policy = scheme.policy();
            policy.allocate(&sheet, &weights, &scenario, &mut SeedKey::new(i).rng(), &mut a);
            policy.allocate(&other, &weights, &scenario, &mut SeedKey::new(i).rng(), &mut b);
            independent &= a.per_en()[..last] == b.per_en()[..last];
        }
    }
    if !independent {
        failed.push("cross-EN independence");
    }

    let short = {
        let mut s = scenario.clone();
        s.initial_energy = 2.0;
        s.battery_capacity = 4.0;
        SimulationSetup::new(s, Scheme::SinglUniv)
            .with_weights(weights.clone())
            .with_channel(ChannelModel::OrderStatistics)
    };
    let a = monte_carlo(&short, 6, 5).unwrap();
    let b = monte_carlo(&short, 6, 5).unwrap();
    let c = monte_carlo_sequential(&short, 6, 5).unwrap();
    if !(a.runs == b.runs && a.runs == c.runs) {
        failed.push("reproducibility");
    }

    let drift = martingale_drift_check(
        &small_network(1.0),
        &DriftConfig {
            conditioning: Conditioning::Vector,
            ..DriftConfig::default()
        },
        11,
    )
    .unwrap();
    if !drift.is_zero_mean(0.99) {
        failed.push("drift");
    }

    let detail = format!(
        "drift {:.3e} J/block (z {:.2}, {} samples){}",
        drift.drift,
        drift.z(),
        drift.samples,
        if failed.is_empty() {
            String::new()
        } else {
            format!(", failed [{}]", failed.join(", "))
        }
    );
    Outcome::new(failed.is_empty(), detail)
}

/// No charging and a constant 3 mW drain from 0.75 C: 250 h.
fn no_wpt_lifetime() -> Outcome {
    let config = base_config();
    let weights = config.weights().unwrap();
    let scenario = placement(&config, &weights, 3.0, 0).unwrap();
    let setup = SimulationSetup::new(scenario, Scheme::EqlPower)
        .with_p0(0.0)
        .with_consumption(ConsumptionModel::constant(3e-3))
        .with_mode(BatteryMode::Exact);
    let r = run_lifetime(&setup, 1).unwrap();
    let expected = 250.0 * 3600.0;
    let ok = (r.lifetime - expected).abs() <= setup.scenario.block_length && !r.censored;
    Outcome::new(ok, format!("{} blocks, {:.4} h", r.blocks, r.lifetime / 3600.0))
}
