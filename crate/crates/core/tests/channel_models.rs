//! The lazy order-statistics channel must be distributed like the dense one.

use wpt_charge::channel::{build_channel, ChannelModel};
use wpt_charge::policy::EnPower;
use wpt_charge::rng::SeedKey;
use wpt_charge::stats::{mean, std_error};
use wpt_charge::topology::{triangle_ens, ScenarioParams};
use wpt_charge::{NetworkScenario, Position, PowerAllocation};

const BLOCKS: u64 = 100_000;

fn scenario() -> NetworkScenario {
    let params = ScenarioParams {
        n_per_en: 8,
        ..Default::default()
    };
    let wds = vec![
        Position::new(0.3, 0.2),
        Position::new(-1.0, -1.5),
        Position::new(2.5, 0.0),
    ];
    NetworkScenario::new(&params, triangle_ens(), wds).unwrap()
}

struct Sample {
    /// Owning EN of WD 0's strongest sub-channel, counted.
    top_owner: Vec<f64>,
    /// WD 0's gain on its own strongest sub-channel at 1 W.
    top_gain: Vec<f64>,
    /// WD 1's gain on that same sub-channel.
    bystander: Vec<f64>,
    /// WD 2's received power under uniform allocation.
    uniform: Vec<f64>,
}

fn sample(model: ChannelModel, seed: u64) -> Sample {
    let s = scenario();
    let mut ch = build_channel(&s, model);
    let uniform = PowerAllocation::uniform(&s);
    let mut out = Sample {
        top_owner: vec![0.0; 3],
        top_gain: vec![],
        bystander: vec![],
        uniform: vec![],
    };
    let mut votes = Vec::new();
    for block in 0..BLOCKS {
        ch.begin_block(SeedKey::new(seed).child(block).rng());
        ch.strongest(0, 2, &mut votes);
        let top = votes[0];
        let owner = s.owner(top);
        out.top_owner[owner] += 1.0;
        let per_en = (0..3)
            .map(|en| {
                if en == owner {
                    EnPower::Channels(vec![(top, 1.0)])
                } else {
                    EnPower::Uniform(0.0)
                }
            })
            .collect();
        let alloc = PowerAllocation::from_per_en(per_en);
        out.top_gain.push(ch.received(0, &alloc));
        out.bystander.push(ch.received(1, &alloc));
        out.uniform.push(ch.received(2, &uniform));
    }
    out
}

fn close(a: &[f64], b: &[f64], what: &str) {
    let se = (std_error(a).powi(2) + std_error(b).powi(2)).sqrt();
    let (ma, mb) = (mean(a), mean(b));
    assert!((ma - mb).abs() < 4.5 * se, "{what}: {ma} vs {mb} (se {se})");
}

#[test]
fn order_statistics_matches_dense() {
    let dense = sample(ChannelModel::Dense, 1);
    let lazy = sample(ChannelModel::OrderStatistics, 2);
    close(&dense.top_gain, &lazy.top_gain, "strongest gain");
    close(&dense.bystander, &lazy.bystander, "bystander gain");
    close(&dense.uniform, &lazy.uniform, "uniform power");
    for en in 0..3 {
        let p = (dense.top_owner[en] + lazy.top_owner[en]) / (2.0 * BLOCKS as f64);
        let se = (2.0 * p * (1.0 - p) / BLOCKS as f64).sqrt();
        let diff = (dense.top_owner[en] - lazy.top_owner[en]) / BLOCKS as f64;
        assert!(diff.abs() < 4.5 * se.max(1e-9), "owner {en}: {diff}");
    }
}

#[test]
fn uniform_power_has_closed_form_mean() {
    // E[sum_j (P0/N) h_j] = P0 * sum_i mean_gain(i, k)
    let s = scenario();
    let expected: f64 = (0..3).map(|en| s.mean_gain(en, 2).unwrap()).sum::<f64>() * s.p0;
    for (model, seed) in [(ChannelModel::Dense, 3), (ChannelModel::OrderStatistics, 4)] {
        let u = sample(model, seed).uniform;
        let m = mean(&u);
        assert!(
            (m - expected).abs() < 4.5 * std_error(&u),
            "{model:?}: {m} vs {expected}"
        );
    }
}

#[test]
fn bystander_sees_a_plain_exponential() {
    // WD 1 did not rank the channel, so its gain there keeps the unconditional mean.
    let s = scenario();
    for (model, seed) in [(ChannelModel::Dense, 5), (ChannelModel::OrderStatistics, 6)] {
        let out = sample(model, seed);
        let total = BLOCKS as f64;
        let expected: f64 = (0..3)
            .map(|en| out.top_owner[en] / total * s.mean_gain(en, 1).unwrap())
            .sum();
        let m = mean(&out.bystander);
        assert!(
            (m - expected).abs() < 4.5 * std_error(&out.bystander),
            "{model:?}: {m} vs {expected}"
        );
    }
}

#[test]
fn same_seed_same_gains() {
    let a = sample(ChannelModel::OrderStatistics, 9);
    let b = sample(ChannelModel::OrderStatistics, 9);
    assert_eq!(a.top_gain, b.top_gain);
    assert_eq!(a.uniform, b.uniform);
}
