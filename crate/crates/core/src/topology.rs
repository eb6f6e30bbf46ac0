//! Network geometry: EN/WD placement, sub-channel ownership and path loss.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedKey;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Planar position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Position {
    fn from([x, y]: [f64; 2]) -> Self {
        Position { x, y }
    }
}

impl From<Position> for [f64; 2] {
    fn from(p: Position) -> Self {
        [p.x, p.y]
    }
}

/// Free-space path-loss constant `Gt * Gr * (c / (4 pi fc))^2`.
pub fn friis_beta(tx_gain: f64, rx_gain: f64, carrier_hz: f64) -> f64 {
    let k = SPEED_OF_LIGHT / (4.0 * PI * carrier_hz);
    tx_gain * rx_gain * k * k
}

/// Mean power gain `beta * d^-delta`.
#[inline]
pub fn path_gain(beta: f64, delta: f64, distance: f64) -> f64 {
    beta * distance.powf(-delta)
}

/// The three-EN triangle used throughout the evaluation (4 m sides).
pub fn triangle_ens() -> Vec<Position> {
    let s3 = 3f64.sqrt();
    vec![
        Position::new(-2.0, -2.0 / s3),
        Position::new(2.0, -2.0 / s3),
        Position::new(0.0, 4.0 / s3),
    ]
}

/// Everything in a scenario except where the devices are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub n_per_en: usize,
    pub beta: f64,
    pub delta: f64,
    pub p0: f64,
    pub eta: f64,
    pub block_length: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub battery_capacity: f64,
    pub initial_energy: f64,
    /// Defaults to `floor(K/3) + 1`, i.e. more than a third of the devices.
    pub outage_quorum: Option<usize>,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        let capacity = 1000e-3 * 3600.0 * 1.0; // 1000 mAh at 1 V
        ScenarioParams {
            n_per_en: 30,
            beta: friis_beta(2.0, 2.0, 915e6),
            delta: 2.0,
            p0: 1.0,
            eta: 0.51,
            block_length: 0.5,
            alpha1: 0.02,
            alpha2: 0.03,
            battery_capacity: capacity,
            initial_energy: 0.75 * capacity,
            outage_quorum: None,
        }
    }
}

/// One experiment's network: positions, sub-channel sets and constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkScenario {
    pub en_positions: Vec<Position>,
    pub wd_positions: Vec<Position>,
    pub n_per_en: usize,
    /// Owning EN of each global sub-channel.
    pub subchannel_owner: Vec<usize>,
    pub beta: f64,
    pub delta: f64,
    pub p0: f64,
    pub eta: f64,
    pub block_length: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub battery_capacity: f64,
    pub initial_energy: f64,
    pub outage_quorum: usize,
}

/// Interleaved assignment: coherence band `n` holds sub-channels
/// `n*M .. n*M + M`, one per EN, so each EN's channels are a coherence
/// bandwidth apart.
pub fn interleaved_owners(m: usize, n_per_en: usize) -> Vec<usize> {
    (0..m * n_per_en).map(|j| j % m).collect()
}

impl NetworkScenario {
    pub fn new(
        params: &ScenarioParams,
        en_positions: Vec<Position>,
        wd_positions: Vec<Position>,
    ) -> Result<Self> {
        let k = wd_positions.len();
        let scenario = NetworkScenario {
            subchannel_owner: interleaved_owners(en_positions.len(), params.n_per_en),
            en_positions,
            wd_positions,
            n_per_en: params.n_per_en,
            beta: params.beta,
            delta: params.delta,
            p0: params.p0,
            eta: params.eta,
            block_length: params.block_length,
            alpha1: params.alpha1,
            alpha2: params.alpha2,
            battery_capacity: params.battery_capacity,
            initial_energy: params.initial_energy,
            outage_quorum: params.outage_quorum.unwrap_or(k / 3 + 1),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn num_ens(&self) -> usize {
        self.en_positions.len()
    }

    pub fn num_wds(&self) -> usize {
        self.wd_positions.len()
    }

    pub fn num_subchannels(&self) -> usize {
        self.subchannel_owner.len()
    }

    pub fn owner(&self, subchannel: usize) -> usize {
        self.subchannel_owner[subchannel]
    }

    /// The sub-channels owned by `en`, ascending.
    pub fn channels_of(&self, en: usize) -> impl Iterator<Item = usize> + '_ {
        self.subchannel_owner
            .iter()
            .enumerate()
            .filter(move |(_, &o)| o == en)
            .map(|(j, _)| j)
    }

    /// Sub-channel lists for every EN.
    pub fn channel_sets(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::with_capacity(self.n_per_en); self.num_ens()];
        for (j, &o) in self.subchannel_owner.iter().enumerate() {
            sets[o].push(j);
        }
        sets
    }

    pub fn distance(&self, en: usize, wd: usize) -> f64 {
        self.en_positions[en].distance(&self.wd_positions[wd])
    }

    /// Mean gain of every sub-channel owned by `en` towards `wd`.
    pub fn mean_gain(&self, en: usize, wd: usize) -> Result<f64> {
        let d = self.distance(en, wd);
        if d <= 0.0 {
            return Err(Error::InvalidScenario(format!("WD {wd} coincides with EN {en}")));
        }
        Ok(path_gain(self.beta, self.delta, d))
    }

    /// `gains[wd][en]`, for hot loops.
    pub fn mean_gain_table(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.num_wds())
            .map(|k| (0..self.num_ens()).map(|i| self.mean_gain(i, k)).collect())
            .collect()
    }

    pub fn initial_total_energy(&self) -> f64 {
        self.initial_energy * self.num_wds() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        let m = self.num_ens();
        let k = self.num_wds();
        if m == 0 || k == 0 {
            return bad(format!("need at least one EN and one WD (got {m}, {k})"));
        }
        if self.n_per_en == 0 {
            return bad("n_per_en must be positive".into());
        }
        if let Some(p) = self
            .en_positions
            .iter()
            .chain(&self.wd_positions)
            .find(|p| !p.is_finite())
        {
            return bad(format!("non-finite position {p:?}"));
        }
        if self.subchannel_owner.len() != m * self.n_per_en {
            return bad(format!(
                "subchannel_owner has {} entries, expected M*N = {}",
                self.subchannel_owner.len(),
                m * self.n_per_en
            ));
        }
        let mut counts = vec![0usize; m];
        for &o in &self.subchannel_owner {
            if o >= m {
                return bad(format!("sub-channel owner {o} out of range"));
            }
            counts[o] += 1;
        }
        if let Some(i) = counts.iter().position(|&c| c != self.n_per_en) {
            return bad(format!(
                "EN {i} owns {} sub-channels, expected {}",
                counts[i], self.n_per_en
            ));
        }
        for i in 0..m {
            for kk in 0..k {
                self.mean_gain(i, kk)?;
            }
        }
        let positive = [
            ("beta", self.beta),
            ("block_length", self.block_length),
            ("battery_capacity", self.battery_capacity),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.delta >= 2.0 && self.delta.is_finite()) {
            return bad(format!("delta must be >= 2, got {}", self.delta));
        }
        if !(self.p0 >= 0.0 && self.p0.is_finite()) {
            return bad(format!("p0 must be non-negative, got {}", self.p0));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad(format!("eta must lie in (0, 1], got {}", self.eta));
        }
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0 && self.alpha1 + self.alpha2 < 1.0) {
            return bad(format!(
                "need alpha1, alpha2 >= 0 and alpha1 + alpha2 < 1 (got {}, {})",
                self.alpha1, self.alpha2
            ));
        }
        if !(self.initial_energy >= 0.0 && self.initial_energy <= self.battery_capacity) {
            return bad(format!(
                "initial_energy {} outside [0, C = {}]",
                self.initial_energy, self.battery_capacity
            ));
        }
        if self.outage_quorum == 0 || self.outage_quorum > k {
            return bad(format!("outage_quorum {} outside 1..={k}", self.outage_quorum));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: NetworkScenario = toml::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }
}

/// Drops `wds_per_en` devices uniformly in a disk of `radius` around each EN.
pub fn generate_clustered_placement(
    params: &ScenarioParams,
    en_positions: &[Position],
    wds_per_en: usize,
    radius: f64,
    seed: SeedKey,
) -> Result<NetworkScenario> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidScenario(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let mut rng = seed.rng();
    let mut wds = Vec::with_capacity(en_positions.len() * wds_per_en);
    for en in en_positions {
        for _ in 0..wds_per_en {
            loop {
                let r = radius * rng.random::<f64>().sqrt();
                let theta = 2.0 * PI * rng.random::<f64>();
                let p = Position::new(en.x + r * theta.cos(), en.y + r * theta.sin());
                if en_positions.iter().all(|e| e.distance(&p) > 0.0) {
                    wds.push(p);
                    break;
                }
            }
        }
    }
    NetworkScenario::new(params, en_positions.to_vec(), wds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_pair(beta: f64, d: f64) -> NetworkScenario {
        let params = ScenarioParams {
            beta,
            n_per_en: 4,
            ..Default::default()
        };
        NetworkScenario::new(
            &params,
            vec![Position::new(0.0, 0.0)],
            vec![Position::new(d, 0.0)],
        )
        .unwrap()
    }

    #[test]
    fn unit_distance_unit_beta() {
        assert_eq!(one_pair(1.0, 1.0).mean_gain(0, 0).unwrap(), 1.0);
    }

    #[test]
    fn friis_beta_matches_hand_calculation() {
        // lambda = c / 915 MHz = 0.3276420 m; (lambda / 4 pi)^2 = 6.797974e-4; times Gt*Gr = 4.
        let beta = friis_beta(2.0, 2.0, 915e6);
        assert!((beta - 2.719190e-3).abs() < 1e-9, "{beta}");
        let s = one_pair(beta, 3.0);
        assert!((s.mean_gain(0, 0).unwrap() - 3.021322e-4).abs() < 1e-10);
        let s = one_pair(beta, 10.0);
        assert!((s.mean_gain(0, 0).unwrap() - 2.719190e-5).abs() < 1e-11);
    }

    #[test]
    fn coincident_positions_rejected() {
        let params = ScenarioParams::default();
        let err = NetworkScenario::new(
            &params,
            vec![Position::new(1.0, 1.0)],
            vec![Position::new(1.0, 1.0)],
        );
        assert!(matches!(err, Err(Error::InvalidScenario(_))));
    }

    #[test]
    fn subchannel_sets_partition() {
        let s = generate_clustered_placement(
            &ScenarioParams::default(),
            &triangle_ens(),
            6,
            3.0,
            SeedKey::new(1),
        )
        .unwrap();
        assert_eq!(s.num_wds(), 18);
        assert_eq!(s.num_subchannels(), 90);
        let sets = s.channel_sets();
        for (i, set) in sets.iter().enumerate() {
            assert_eq!(set.len(), 30);
            assert!(set.iter().all(|&j| s.owner(j) == i));
            assert_eq!(set, &s.channels_of(i).collect::<Vec<_>>());
        }
        assert_eq!(s.outage_quorum, 7);
    }

    #[test]
    fn placement_is_seeded_and_inside_disk() {
        let params = ScenarioParams::default();
        let ens = triangle_ens();
        let a = generate_clustered_placement(&params, &ens, 6, 3.9, SeedKey::new(5)).unwrap();
        let b = generate_clustered_placement(&params, &ens, 6, 3.9, SeedKey::new(5)).unwrap();
        assert_eq!(a, b);
        for (k, wd) in a.wd_positions.iter().enumerate() {
            assert!(ens[k / 6].distance(wd) <= 3.9);
        }
        let tiny = generate_clustered_placement(&params, &ens[..1], 1, 0.001, SeedKey::new(2)).unwrap();
        assert!(tiny.distance(0, 0) <= 0.001);
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let s = generate_clustered_placement(
            &ScenarioParams::default(),
            &triangle_ens(),
            2,
            1.0,
            SeedKey::new(3),
        )
        .unwrap();
        let back = NetworkScenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(s, back);

        let mut broken = s.clone();
        broken.subchannel_owner[0] = 1;
        assert!(NetworkScenario::from_toml(&broken.to_toml()).is_err());
        let mut broken = s.clone();
        broken.outage_quorum = 0;
        assert!(broken.validate().is_err());
        let mut broken = s;
        broken.alpha1 = 0.6;
        broken.alpha2 = 0.4;
        assert!(broken.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gain_monotone(beta in 1e-6f64..1.0, delta in 2.0f64..4.0, d1 in 0.01f64..50.0, d2 in 0.01f64..50.0) {
                prop_assume!((d1 - d2).abs() > 1e-9);
                let (near, far) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
                prop_assert!(path_gain(beta, delta, near) > path_gain(beta, delta, far));
                prop_assert!(path_gain(beta * 1.5, delta, near) > path_gain(beta, delta, near));
            }

            #[test]
            fn placement_within_radius(seed in any::<u64>(), radius in 0.01f64..10.0) {
                let ens = triangle_ens();
                let s = generate_clustered_placement(&ScenarioParams::default(), &ens, 3, radius, SeedKey::new(seed)).unwrap();
                for (k, wd) in s.wd_positions.iter().enumerate() {
                    prop_assert!(ens[k / 3].distance(wd) <= radius * (1.0 + 1e-12));
                }
            }
        }
    }
}
