//! Experiment presets: parameter sweeps that write CSV tables.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::analysis::{self, ModelingErrorSetup};
use crate::config::ExperimentConfig;
use crate::engine::{
    monte_carlo, run_lifetime_traced, trial_seed, MonteCarloSummary, RunStatistics, SimulationSetup,
};
use crate::error::{Error, Result};
use crate::policy::{Scheme, WeightingMatrix};
use crate::report::{num, run_statistics_header, run_statistics_row, Table, TraceWriter};
use crate::rng::{self, SeedKey};
use crate::topology::{generate_clustered_placement, triangle_ens, NetworkScenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Exact versus approximate battery dynamics.
    Fig3,
    /// Closed-form versus simulated lifetime over `p0_grid`, first outage ends the run.
    Fig4,
    /// Lifetime of every scheme over `d_grid`.
    Fig5,
    /// Minimum power for the target lifetime over `d_grid`.
    Fig6,
    /// Lifetime over the weight power exponent.
    Fig7a,
    /// Lifetime over the feedback amount.
    Fig7b,
    /// Schemes x `d_grid` x `p0_grid`.
    Custom,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Fig3,
        Preset::Fig4,
        Preset::Fig5,
        Preset::Fig6,
        Preset::Fig7a,
        Preset::Fig7b,
        Preset::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig3 => "fig3",
            Preset::Fig4 => "fig4",
            Preset::Fig5 => "fig5",
            Preset::Fig6 => "fig6",
            Preset::Fig7a => "fig7a",
            Preset::Fig7b => "fig7b",
            Preset::Custom => "custom",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config("preset", format!("unknown preset `{s}`")))
    }
}

/// The scenario for cluster radius `d` and placement index `placement`.
/// Placements depend only on the seed, `d` and the index.
pub fn placement(
    config: &ExperimentConfig,
    weights: &WeightingMatrix,
    d: f64,
    index: usize,
) -> Result<NetworkScenario> {
    let key = SeedKey::new(config.seed).path(&[rng::PLACEMENT, d.to_bits(), index as u64]);
    generate_clustered_placement(
        &config.scenario_params(weights),
        &triangle_ens(),
        config.physical.wds_per_en,
        d,
        key,
    )
}

/// Seed from which a placement's trial seeds derive; shared by all schemes.
pub fn placement_master_seed(config: &ExperimentConfig, d: f64, index: usize) -> u64 {
    SeedKey::new(config.seed)
        .path(&[rng::TRIAL, d.to_bits(), index as u64])
        .value()
}

pub fn setup_for(
    config: &ExperimentConfig,
    scenario: NetworkScenario,
    scheme: Scheme,
    weights: &WeightingMatrix,
) -> Result<SimulationSetup> {
    let mut setup = SimulationSetup::new(scenario, scheme)
        .with_consumption(config.consumption)
        .with_max_blocks(config.max_blocks);
    setup.weights = weights.clone();
    setup.states = config.battery_states()?;
    setup.validate()?;
    Ok(setup)
}

/// Runs of one scheme over `placements` x `trials`.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub runs: Vec<(usize, RunStatistics)>,
    pub summary: MonteCarloSummary,
}

/// Lifetime of `scheme` at radius `d` over every placement and trial.
pub fn lifetime_sweep(
    config: &ExperimentConfig,
    scheme: Scheme,
    weights: &WeightingMatrix,
    d: f64,
    p0: f64,
) -> Result<Sweep> {
    let mut runs = Vec::new();
    for p in 0..config.placements {
        let scenario = placement(config, weights, d, p)?;
        let setup = setup_for(config, scenario, scheme, weights)?.with_p0(p0);
        let mc = monte_carlo(&setup, config.trials, placement_master_seed(config, d, p))?;
        runs.extend(mc.runs.into_iter().map(|r| (p, r)));
    }
    let summary = MonteCarloSummary::from_runs(runs.iter().map(|(_, r)| r.clone()).collect());
    Ok(Sweep { runs, summary })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Write a per-block trace for the first trial of each custom run.
    pub trace: bool,
}

fn hours(seconds: f64) -> String {
    num(seconds / 3600.0)
}

fn runs_table(num_wds: usize, keys: &[&str]) -> Table {
    let mut header: Vec<String> = keys.iter().map(|s| s.to_string()).collect();
    header.push("placement".into());
    header.extend(run_statistics_header(num_wds));
    Table::new(header)
}

fn push_runs(table: &mut Table, keys: &[String], sweep: &Sweep) {
    for (p, r) in &sweep.runs {
        let mut row = keys.to_vec();
        row.push(p.to_string());
        row.extend(run_statistics_row(r));
        table.push(row);
    }
}

const SUMMARY: [&str; 6] = [
    "seed",
    "placements",
    "trials",
    "mean_lifetime_h",
    "std_lifetime_h",
    "censored",
];

fn summary_fields(config: &ExperimentConfig, s: &MonteCarloSummary) -> Vec<String> {
    vec![
        config.seed.to_string(),
        config.placements.to_string(),
        config.trials.to_string(),
        hours(s.mean_lifetime),
        hours(s.std_lifetime),
        s.censored.to_string(),
    ]
}

fn with_summary(keys: &[&str]) -> Table {
    Table::new(keys.iter().copied().chain(SUMMARY))
}

fn num_wds(config: &ExperimentConfig) -> usize {
    3 * config.physical.wds_per_en
}

pub fn fig3(config: &ExperimentConfig) -> Result<Table> {
    let study = ModelingErrorSetup {
        capacity: config.physical.capacity(),
        ..Default::default()
    };
    let rows = analysis::modeling_error_study(&study, &config.ratio_grid, config.study_blocks, config.seed)?;
    let mut t = Table::new([
        "ratio",
        "seed",
        "blocks",
        "exact_net_j",
        "approx_net_j",
        "normalized_error",
    ]);
    for r in rows {
        t.push(vec![
            num(r.ratio),
            config.seed.to_string(),
            config.study_blocks.to_string(),
            num(r.exact_net),
            num(r.approx_net),
            num(r.error),
        ]);
    }
    Ok(t)
}

pub const FIG4_SCHEMES: [Scheme; 3] = [Scheme::EqlPower, Scheme::SinglUniv, Scheme::PropoUniv];

pub fn fig4(config: &ExperimentConfig) -> Result<(Table, Table)> {
    let weights = config.weights()?;
    let scenario = placement(config, &weights, config.fixed_d, 0)?;
    let trials = config.trials * config.placements;
    let mut t = Table::new([
        "scheme",
        "d_m",
        "p0_w",
        "seed",
        "trials",
        "excluded",
        "simulated_h",
        "analytical_h",
        "relative_error",
    ]);
    let mut runs = runs_table(scenario.num_wds(), &["scheme", "d_m", "p0_w"]);
    for scheme in FIG4_SCHEMES {
        for &p0 in &config.p0_grid {
            let setup = setup_for(config, scenario.clone(), scheme, &weights)?.with_p0(p0);
            let seed = placement_master_seed(config, config.fixed_d, 0);
            let keys = vec![scheme.to_string(), num(config.fixed_d), num(p0)];
            match analysis::estimate_rates(&setup, trials, seed) {
                Ok(est) => {
                    t.push(vec![
                        keys[0].clone(),
                        keys[1].clone(),
                        keys[2].clone(),
                        config.seed.to_string(),
                        trials.to_string(),
                        est.excluded.to_string(),
                        hours(est.simulated_lifetime()),
                        hours(est.estimate.expected_lifetime),
                        num(est.relative_error()),
                    ]);
                    let sweep = Sweep {
                        runs: est.runs.runs.iter().map(|r| (0, r.clone())).collect(),
                        summary: est.runs.clone(),
                    };
                    push_runs(&mut runs, &keys, &sweep);
                }
                Err(Error::AllCensored(_) | Error::InfiniteLifetime { .. }) => {
                    // Every run outlived max_blocks, or charging outpaces drain.
                    t.push(vec![
                        keys[0].clone(),
                        keys[1].clone(),
                        keys[2].clone(),
                        config.seed.to_string(),
                        trials.to_string(),
                        String::new(),
                        "inf".into(),
                        "inf".into(),
                        String::new(),
                    ]);
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok((t, runs))
}

pub fn fig5(config: &ExperimentConfig) -> Result<(Table, Table)> {
    let weights = config.weights()?;
    let mut t = with_summary(&["scheme", "d_m", "p0_w"]);
    let mut runs = runs_table(num_wds(config), &["scheme", "d_m", "p0_w"]);
    let p0 = config.physical.tx_power;
    for &d in &config.d_grid {
        for &scheme in &config.schemes {
            let sweep = lifetime_sweep(config, scheme, &weights, d, p0)?;
            let keys = vec![scheme.to_string(), num(d), num(p0)];
            let mut row = keys.clone();
            row.extend(summary_fields(config, &sweep.summary));
            t.push(row);
            push_runs(&mut runs, &keys, &sweep);
        }
    }
    Ok((t, runs))
}

pub const FIG6_SCHEMES: [Scheme; 3] = [Scheme::SinglUniv, Scheme::PropoUniv, Scheme::EqlPower];

pub fn fig6(config: &ExperimentConfig) -> Result<Table> {
    let weights = config.weights()?;
    let target = config.target_hours * 3600.0;
    let mut t = Table::new([
        "scheme",
        "d_m",
        "seed",
        "trials",
        "target_h",
        "p0_star_w",
        "low_w",
        "high_w",
        "evaluations",
    ]);
    for &d in &config.d_grid {
        let scenario = placement(config, &weights, d, 0)?;
        for scheme in FIG6_SCHEMES {
            let setup = setup_for(config, scenario.clone(), scheme, &weights)?;
            let seed = placement_master_seed(config, d, 0);
            let mut row = vec![
                scheme.to_string(),
                num(d),
                config.seed.to_string(),
                config.trials.to_string(),
                num(config.target_hours),
            ];
            match analysis::min_power_search(
                &setup,
                target,
                config.trials,
                config.search_tolerance,
                config.power_cap,
                seed,
            ) {
                Ok(s) => row.extend([num(s.p0), num(s.low), num(s.high), s.evaluations.to_string()]),
                Err(Error::Unachievable { cap }) => {
                    row.extend(["unachievable".into(), num(cap), num(cap), String::new()])
                }
                Err(e) => return Err(e),
            }
            t.push(row);
        }
    }
    Ok(t)
}

fn weight_sweep(
    config: &ExperimentConfig,
    key: &str,
    grid: Vec<(String, WeightingMatrix)>,
) -> Result<(Table, Table)> {
    let mut t = with_summary(&[key, "scheme", "d_m", "p0_w", "alpha2"]);
    let mut runs = runs_table(num_wds(config), &[key, "scheme", "d_m", "p0_w"]);
    let d = config.fixed_d;
    let p0 = config.physical.tx_power;
    for (label, w) in grid {
        let alpha2 = w.feedback_fraction(config.physical.feedback_slot_per_vote);
        let sweep = lifetime_sweep(config, Scheme::SinglUniv, &w, d, p0)?;
        let keys = vec![label, Scheme::SinglUniv.to_string(), num(d), num(p0)];
        let mut row = keys.clone();
        row.push(num(alpha2));
        row.extend(summary_fields(config, &sweep.summary));
        t.push(row);
        push_runs(&mut runs, &keys, &sweep);
    }
    Ok((t, runs))
}

pub fn fig7a(config: &ExperimentConfig) -> Result<(Table, Table)> {
    let grid = config
        .r_grid
        .iter()
        .map(|&r| Ok((num(r), WeightingMatrix::power_exponent(r)?)))
        .collect::<Result<Vec<_>>>()?;
    weight_sweep(config, "r", grid)
}

pub fn fig7b(config: &ExperimentConfig) -> Result<(Table, Table)> {
    let grid = config
        .feedback_grid
        .iter()
        .map(|&a| Ok((a.to_string(), WeightingMatrix::feedback_amount(a)?)))
        .collect::<Result<Vec<_>>>()?;
    weight_sweep(config, "feedback_amount", grid)
}

pub fn custom(config: &ExperimentConfig, options: &RunOptions) -> Result<(Table, Table)> {
    let weights = config.weights()?;
    let mut t = with_summary(&["scheme", "d_m", "p0_w"]);
    let mut runs = runs_table(num_wds(config), &["scheme", "d_m", "p0_w"]);
    for &d in &config.d_grid {
        for &p0 in &config.p0_grid {
            for &scheme in &config.schemes {
                let sweep = lifetime_sweep(config, scheme, &weights, d, p0)?;
                let keys = vec![scheme.to_string(), num(d), num(p0)];
                let mut row = keys.clone();
                row.extend(summary_fields(config, &sweep.summary));
                t.push(row);
                push_runs(&mut runs, &keys, &sweep);
                if options.trace {
                    write_trace(config, scheme, &weights, d, p0)?;
                }
            }
        }
    }
    Ok((t, runs))
}

fn write_trace(
    config: &ExperimentConfig,
    scheme: Scheme,
    weights: &WeightingMatrix,
    d: f64,
    p0: f64,
) -> Result<()> {
    let scenario = placement(config, weights, d, 0)?;
    let setup = setup_for(config, scenario, scheme, weights)?.with_p0(p0);
    let path = config.out_dir.join(format!("trace_{scheme}_d{d}_p{p0}.csv"));
    let mut writer = TraceWriter::create(&path, setup.scenario.num_wds())?;
    let mut failure = None;
    run_lifetime_traced(
        &setup,
        trial_seed(placement_master_seed(config, d, 0), 0),
        &mut |b| {
            if failure.is_none() {
                if let Err(e) = writer.write(b) {
                    failure = Some(e);
                }
            }
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    writer.finish()
}

/// Runs `preset` and writes its CSV files into `config.out_dir`.
pub fn run_experiment(
    preset: Preset,
    config: &ExperimentConfig,
    options: &RunOptions,
) -> Result<Vec<PathBuf>> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;
    let name = preset.name();
    let mut tables = Vec::new();
    match preset {
        Preset::Fig3 => tables.push((name.to_string(), fig3(config)?)),
        Preset::Fig6 => tables.push((name.to_string(), fig6(config)?)),
        _ => {
            let (summary, runs) = match preset {
                Preset::Fig4 => fig4(config)?,
                Preset::Fig5 => fig5(config)?,
                Preset::Fig7a => fig7a(config)?,
                Preset::Fig7b => fig7b(config)?,
                _ => custom(config, options)?,
            };
            tables.push((name.to_string(), summary));
            tables.push((format!("{name}_runs"), runs));
        }
    }
    let mut paths = Vec::new();
    for (file, table) in tables {
        let path = config.out_dir.join(format!("{file}.csv"));
        table.write(&path)?;
        log::info!("wrote {}", path.display());
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("fig8".parse::<Preset>().is_err());
    }

    #[test]
    fn placements_depend_on_seed_radius_and_index() {
        let config = ExperimentConfig::default();
        let w = config.weights().unwrap();
        let a = placement(&config, &w, 3.0, 0).unwrap();
        assert_eq!(a, placement(&config, &w, 3.0, 0).unwrap());
        assert_ne!(
            a.wd_positions,
            placement(&config, &w, 3.0, 1).unwrap().wd_positions
        );
        assert_ne!(
            a.wd_positions,
            placement(&config, &w, 3.3, 0).unwrap().wd_positions
        );
        let other = ExperimentConfig {
            seed: 2,
            ..ExperimentConfig::default()
        };
        assert_ne!(
            a.wd_positions,
            placement(&other, &w, 3.0, 0).unwrap().wd_positions
        );
        assert_eq!(a.num_wds(), 18);
        for (k, p) in a.wd_positions.iter().enumerate() {
            assert!(p.distance(&a.en_positions[k / 6]) <= 3.0);
        }
    }

    #[test]
    fn setup_carries_config_weights_and_states() {
        let config = ExperimentConfig::default();
        let w = WeightingMatrix::feedback_amount(5).unwrap();
        let scenario = placement(&config, &w, 3.0, 0).unwrap();
        assert!((scenario.alpha2 - 0.05).abs() < 1e-12);
        let setup = setup_for(&config, scenario, Scheme::SinglUniv, &w).unwrap();
        assert_eq!(setup.weights, w);
        assert_eq!(setup.states.num_states(), 4);
    }
}
