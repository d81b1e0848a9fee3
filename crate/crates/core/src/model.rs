//! Static network description, per-entity state and the two-timescale clock.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::InterferenceHistogram;
use crate::evt::{self, TailTargets};
use crate::queues::{ServerQueues, UeQueues};

/// A point in the deployment plane, in meters.
pub type Point = [f64; 2];

/// RNG stream used to place UEs at build time.
pub(crate) const PLACEMENT_STREAM: u64 = 0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("{field}: expected {expected} entries, found {found}")]
    DimensionMismatch {
        field: String,
        expected: usize,
        found: usize,
    },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Name of the offending configuration field.
    pub fn field(&self) -> &str {
        match self {
            ConfigError::Invalid { field, .. } | ConfigError::DimensionMismatch { field, .. } => {
                field
            }
        }
    }
}

/// How UEs move between frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mobility {
    /// Positions are drawn once at build time.
    #[default]
    Static,
    /// Positions are redrawn uniformly at every frame boundary after the first.
    Resample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub num_ues: usize,
    pub num_servers: usize,
    pub area_side: f64,
    /// Empty means the servers are laid out on a regular grid.
    pub server_positions: Vec<Point>,
    /// Empty means the UEs are placed uniformly at random from `rng_seed`.
    pub ue_positions: Vec<Point>,
    /// Slot length in seconds.
    pub slot_length: f64,
    /// Frame length in slots.
    pub frame_length: u64,
    /// Bandwidth shared by the UEs of one server, in Hz.
    pub bandwidth: f64,
    /// Noise power spectral density in W/Hz.
    pub noise_psd: f64,
    pub tradeoff_v: f64,
    pub carrier_frequency_ghz: f64,
    /// Horizon in slots.
    pub horizon: u64,
    pub rng_seed: u64,
    pub mobility: Mobility,
}

impl NetworkConfig {
    /// Reference deployment: a 100 m square with four servers at the quadrant
    /// centers, 40 ms slots, 100-slot frames and a 10 MHz band per server.
    pub fn reference(num_ues: usize) -> Self {
        NetworkConfig {
            num_ues,
            num_servers: 4,
            area_side: 100.0,
            server_positions: Vec::new(),
            ue_positions: Vec::new(),
            slot_length: 0.04,
            frame_length: 100,
            bandwidth: 10e6,
            noise_psd: dbm_to_watts(-174.0),
            tradeoff_v: 0.0,
            carrier_frequency_ghz: 5.8,
            horizon: 20_000,
            rng_seed: 1,
            mobility: Mobility::Static,
        }
    }

    /// Noise power over the whole band, `N_0 W`.
    pub fn noise_power(&self) -> f64 {
        self.noise_psd * self.bandwidth
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_ues == 0 {
            return Err(ConfigError::invalid("network.num_ues", "must be at least 1"));
        }
        if self.num_servers == 0 {
            return Err(ConfigError::invalid("network.num_servers", "must be at least 1"));
        }
        positive("network.area_side_m", self.area_side)?;
        positive("network.slot_length_s", self.slot_length)?;
        if self.frame_length == 0 {
            return Err(ConfigError::invalid(
                "network.frame_length_slots",
                "must be at least 1",
            ));
        }
        positive("network.bandwidth_hz", self.bandwidth)?;
        positive("network.noise_psd", self.noise_psd)?;
        positive("network.carrier_frequency_ghz", self.carrier_frequency_ghz)?;
        if !(self.tradeoff_v >= 0.0) || !self.tradeoff_v.is_finite() {
            return Err(ConfigError::invalid(
                "network.tradeoff_v",
                "must be finite and nonnegative",
            ));
        }
        for (name, points, expected) in [
            ("network.server_positions", &self.server_positions, self.num_servers),
            ("network.ue_positions", &self.ue_positions, self.num_ues),
        ] {
            if points.is_empty() {
                continue;
            }
            if points.len() != expected {
                return Err(ConfigError::DimensionMismatch {
                    field: name.into(),
                    expected,
                    found: points.len(),
                });
            }
            for (k, p) in points.iter().enumerate() {
                let inside = p.iter().all(|c| c.is_finite() && *c >= 0.0 && *c <= self.area_side);
                if !inside {
                    return Err(ConfigError::invalid(
                        format!("{name}[{k}]"),
                        format!("({}, {}) lies outside [0, {}]^2", p[0], p[1], self.area_side),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Server positions, falling back to the centers of a regular grid.
    pub fn resolved_server_positions(&self) -> Vec<Point> {
        if !self.server_positions.is_empty() {
            return self.server_positions.clone();
        }
        grid_centers(self.num_servers, self.area_side)
    }
}

/// Centers of the first `count` cells of a near-square grid, row-major.
pub fn grid_centers(count: usize, side: f64) -> Vec<Point> {
    let cols = (count as f64).sqrt().ceil().max(1.0) as usize;
    let rows = count.div_ceil(cols);
    let (dx, dy) = (side / cols as f64, side / rows as f64);
    (0..count)
        .map(|k| {
            let (r, c) = (k / cols, k % cols);
            [(c as f64 + 0.5) * dx, (r as f64 + 0.5) * dy]
        })
        .collect()
}

/// Queue-length bound used by the probabilistic constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdRule {
    /// `d(t) = multiplier * moving average of split arrivals up to t-1`.
    Dynamic { multiplier: f64 },
    /// A constant bound in bits.
    Fixed { bits: f64 },
}

impl ThresholdRule {
    /// Threshold given the moving-average arrival up to the previous slot.
    /// A dynamic rule with no history yet yields `+inf` (no exceedance).
    pub fn threshold(&self, prev_average: f64) -> f64 {
        match *self {
            ThresholdRule::Dynamic { multiplier } => {
                if prev_average > 0.0 {
                    multiplier * prev_average
                } else {
                    f64::INFINITY
                }
            }
            ThresholdRule::Fixed { bits } => bits,
        }
    }

    fn validate(&self, field: &str) -> Result<(), ConfigError> {
        match *self {
            ThresholdRule::Dynamic { multiplier } => positive(field, multiplier),
            ThresholdRule::Fixed { bits } => positive(field, bits),
        }
    }
}

/// Upper bounds imposed on the scale and shape of the excess-value GPD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailThreshold {
    pub scale: f64,
    pub shape: f64,
}

impl TailThreshold {
    pub fn targets(&self) -> TailTargets {
        evt::constraint_targets(self.scale, self.shape)
            .expect("tail thresholds are validated at build time")
    }

    fn validate(&self, prefix: &str) -> Result<(), ConfigError> {
        positive(&format!("{prefix}_scale_bits"), self.scale)?;
        if !(self.shape < 0.5) {
            return Err(ConfigError::invalid(
                format!("{prefix}_shape"),
                format!(
                    "shape {} must satisfy xi < 1/2, otherwise the second-moment bound diverges",
                    self.shape
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeProfile {
    /// Power budget in W.
    pub power_budget: f64,
    /// CPU cycles per bit.
    pub processing_density: f64,
    /// Mean arrival rate in bits/s.
    pub arrival_rate: f64,
    /// Effective switched capacitance, W s^3 / cycle^3.
    pub kappa: f64,
    /// Indivisible task size in bits.
    pub unit_task: f64,
    pub local_threshold: ThresholdRule,
    pub offload_threshold: ThresholdRule,
    pub local_tolerance: f64,
    pub offload_tolerance: f64,
    pub local_tail: TailThreshold,
    pub offload_tail: TailThreshold,
}

impl Default for UeProfile {
    fn default() -> Self {
        UeProfile {
            power_budget: dbm_to_watts(30.0),
            processing_density: 8250.0,
            arrival_rate: 100e3,
            kappa: 1e-27,
            unit_task: 1500.0 * 8.0,
            local_threshold: ThresholdRule::Dynamic { multiplier: 100.0 },
            offload_threshold: ThresholdRule::Dynamic { multiplier: 100.0 },
            local_tolerance: 0.01,
            offload_tolerance: 0.01,
            local_tail: TailThreshold { scale: 40e6, shape: 0.3 },
            offload_tail: TailThreshold { scale: 40e6, shape: 0.3 },
        }
    }
}

impl UeProfile {
    /// Largest local CPU frequency the power budget allows, `(P_max / kappa)^(1/3)`.
    pub fn max_local_frequency(&self) -> f64 {
        (self.power_budget / self.kappa).cbrt()
    }

    /// Largest arrival rate local computation alone can sustain.
    pub fn sustainable_rate(&self) -> f64 {
        self.max_local_frequency() / self.processing_density
    }

    pub fn validate(&self, prefix: &str) -> Result<(), ConfigError> {
        positive(&format!("{prefix}.power_budget"), self.power_budget)?;
        positive(&format!("{prefix}.processing_density"), self.processing_density)?;
        if !(self.arrival_rate >= 0.0) || !self.arrival_rate.is_finite() {
            return Err(ConfigError::invalid(
                format!("{prefix}.arrival_rate_bps"),
                "must be finite and nonnegative",
            ));
        }
        positive(&format!("{prefix}.kappa"), self.kappa)?;
        positive(&format!("{prefix}.unit_task_bits"), self.unit_task)?;
        self.local_threshold.validate(&format!("{prefix}.local_threshold"))?;
        self.offload_threshold.validate(&format!("{prefix}.offload_threshold"))?;
        probability(&format!("{prefix}.local_tolerance"), self.local_tolerance)?;
        probability(&format!("{prefix}.offload_tolerance"), self.offload_tolerance)?;
        self.local_tail.validate(&format!("{prefix}.local_gpd"))?;
        self.offload_tail.validate(&format!("{prefix}.offload_gpd"))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerProfile {
    pub core_count: usize,
    /// Speed of one core, cycles/s.
    pub core_speed: f64,
    /// Delay bound `d_ji` in seconds, shared by every UE.
    pub delay_threshold: f64,
    pub tolerance: f64,
    pub tail: TailThreshold,
}

impl Default for ServerProfile {
    fn default() -> Self {
        ServerProfile {
            core_count: 8,
            core_speed: 1e10,
            delay_threshold: 20.0,
            tolerance: 0.01,
            tail: TailThreshold { scale: 40e6, shape: 0.3 },
        }
    }
}

impl ServerProfile {
    pub fn validate(&self, prefix: &str) -> Result<(), ConfigError> {
        if self.core_count == 0 {
            return Err(ConfigError::invalid(
                format!("{prefix}.core_count"),
                "must be at least 1",
            ));
        }
        positive(&format!("{prefix}.core_speed_hz"), self.core_speed)?;
        positive(&format!("{prefix}.delay_threshold_s"), self.delay_threshold)?;
        probability(&format!("{prefix}.tolerance"), self.tolerance)?;
        self.tail.validate(&format!("{prefix}.gpd"))?;
        Ok(())
    }
}

/// Slot and frame counters. Frame `n` covers slots `(n-1) T_0 .. n T_0 - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Clock {
    slot: u64,
    frame: u64,
    frame_length: u64,
}

impl Clock {
    pub fn new(frame_length: u64) -> Self {
        assert!(frame_length >= 1, "frame length must be positive");
        Clock {
            slot: 0,
            frame: 1,
            frame_length,
        }
    }

    pub fn at(slot: u64, frame_length: u64) -> Self {
        let mut c = Clock::new(frame_length);
        c.slot = slot;
        c.frame = slot / frame_length + 1;
        c
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn frame_length(&self) -> u64 {
        self.frame_length
    }

    pub fn is_frame_boundary(&self) -> bool {
        self.slot.is_multiple_of(self.frame_length)
    }

    pub fn advance(self) -> Clock {
        Clock::at(self.slot + 1, self.frame_length)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeState {
    pub position: Point,
    pub profile: UeProfile,
    pub queues: UeQueues,
    pub histogram: InterferenceHistogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub position: Point,
    pub profile: ServerProfile,
    /// One record per UE, indexed by UE.
    pub queues: Vec<ServerQueues>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub config: NetworkConfig,
    pub ues: Vec<UeState>,
    pub servers: Vec<ServerState>,
    pub clock: Clock,
}

impl NetworkState {
    pub fn num_ues(&self) -> usize {
        self.ues.len()
    }

    pub fn num_servers(&self) -> usize {
        self.servers.len()
    }
}

/// Builds a fully initialised network with every queue at zero.
pub fn build_network(
    config: NetworkConfig,
    ue_profiles: Vec<UeProfile>,
    server_profiles: Vec<ServerProfile>,
) -> Result<NetworkState, ConfigError> {
    config.validate()?;
    if ue_profiles.len() != config.num_ues {
        return Err(ConfigError::DimensionMismatch {
            field: "ue_profiles".into(),
            expected: config.num_ues,
            found: ue_profiles.len(),
        });
    }
    if server_profiles.len() != config.num_servers {
        return Err(ConfigError::DimensionMismatch {
            field: "server_profiles".into(),
            expected: config.num_servers,
            found: server_profiles.len(),
        });
    }
    for (i, p) in ue_profiles.iter().enumerate() {
        p.validate(&format!("ue[{i}]"))?;
    }
    for (j, p) in server_profiles.iter().enumerate() {
        p.validate(&format!("server[{j}]"))?;
    }

    let ue_positions = if config.ue_positions.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(PLACEMENT_STREAM);
        uniform_positions(&mut rng, config.num_ues, config.area_side)
    } else {
        config.ue_positions.clone()
    };
    let server_positions = config.resolved_server_positions();
    let noise_power = config.noise_power();
    let num_ues = config.num_ues;

    let ues = ue_profiles
        .into_iter()
        .zip(ue_positions)
        .map(|(profile, position)| UeState {
            position,
            profile,
            queues: UeQueues::default(),
            histogram: InterferenceHistogram::new(noise_power),
        })
        .collect();
    let servers = server_profiles
        .into_iter()
        .zip(server_positions)
        .map(|(profile, position)| ServerState {
            position,
            profile,
            queues: vec![ServerQueues::default(); num_ues],
        })
        .collect();
    let clock = Clock::new(config.frame_length);
    Ok(NetworkState {
        config,
        ues,
        servers,
        clock,
    })
}

pub(crate) fn uniform_positions<R: Rng>(rng: &mut R, count: usize, side: f64) -> Vec<Point> {
    (0..count)
        .map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side])
        .collect()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

fn positive(field: &str, value: f64) -> Result<(), ConfigError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::invalid(field, format!("must be positive and finite, got {value}")))
    }
}

fn probability(field: &str, value: f64) -> Result<(), ConfigError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(ConfigError::invalid(field, format!("must lie in (0, 1), got {value}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(num_ues: usize) -> NetworkState {
        build_network(
            NetworkConfig::reference(num_ues),
            vec![UeProfile::default(); num_ues],
            vec![ServerProfile::default(); 4],
        )
        .unwrap()
    }

    #[test]
    fn reference_deployment_places_servers_at_quadrant_centers() {
        let net = reference(30);
        let pos: Vec<Point> = net.servers.iter().map(|s| s.position).collect();
        assert_eq!(pos, vec![[25.0, 25.0], [75.0, 25.0], [25.0, 75.0], [75.0, 75.0]]);
        assert_eq!(net.num_ues(), 30);
        for ue in &net.ues {
            assert!(ue.position.iter().all(|c| (0.0..=100.0).contains(c)));
            assert_eq!(ue.queues, UeQueues::default());
        }
        for s in &net.servers {
            assert_eq!(s.queues.len(), 30);
            assert!(s.queues.iter().all(|q| *q == ServerQueues::default()));
        }
    }

    #[test]
    fn minimal_network() {
        let mut cfg = NetworkConfig::reference(1);
        cfg.num_servers = 1;
        let net = build_network(cfg, vec![UeProfile::default()], vec![ServerProfile::default()]).unwrap();
        assert_eq!(net.clock.slot(), 0);
        assert_eq!(net.servers[0].position, [50.0, 50.0]);
        assert_eq!(net.ues[0].queues.local, 0.0);
    }

    #[test]
    fn profile_count_mismatch_is_rejected() {
        let err = build_network(
            NetworkConfig::reference(30),
            vec![UeProfile::default(); 29],
            vec![ServerProfile::default(); 4],
        )
        .unwrap_err();
        assert_eq!(
            err,
            ConfigError::DimensionMismatch {
                field: "ue_profiles".into(),
                expected: 30,
                found: 29
            }
        );
    }

    #[test]
    fn invariant_violations_name_the_field() {
        let mut ue = UeProfile::default();
        ue.offload_tail.shape = 0.6;
        let err = build_network(NetworkConfig::reference(1), vec![ue], vec![ServerProfile::default(); 4])
            .unwrap_err();
        assert_eq!(err.field(), "ue[0].offload_gpd_shape");
        assert!(err.to_string().contains("1/2"));

        let mut cfg = NetworkConfig::reference(1);
        cfg.ue_positions = vec![[120.0, 3.0]];
        let err = build_network(cfg, vec![UeProfile::default()], vec![ServerProfile::default(); 4])
            .unwrap_err();
        assert_eq!(err.field(), "network.ue_positions[0]");
    }

    #[test]
    fn same_seed_gives_identical_state() {
        assert_eq!(reference(30), reference(30));
        let mut cfg = NetworkConfig::reference(30);
        cfg.rng_seed = 2;
        let other = build_network(cfg, vec![UeProfile::default(); 30], vec![ServerProfile::default(); 4]).unwrap();
        assert_ne!(other.ues[0].position, reference(30).ues[0].position);
    }

    #[test]
    fn clock_advances_and_tracks_frames() {
        let c = Clock::at(99, 100).advance();
        assert_eq!((c.slot(), c.frame(), c.is_frame_boundary()), (100, 2, true));
        let c = Clock::new(100).advance();
        assert_eq!((c.slot(), c.frame(), c.is_frame_boundary()), (1, 1, false));
        let c = Clock::at(199, 100).advance();
        assert_eq!((c.slot(), c.frame(), c.is_frame_boundary()), (200, 3, true));
    }

    #[test]
    fn dynamic_threshold_is_infinite_without_history() {
        let rule = ThresholdRule::Dynamic { multiplier: 100.0 };
        assert_eq!(rule.threshold(0.0), f64::INFINITY);
        assert_eq!(rule.threshold(12.0), 1200.0);
        assert_eq!(ThresholdRule::Fixed { bits: 5.0 }.threshold(0.0), 5.0);
    }

    #[test]
    fn reference_profile_sustainable_rate() {
        let ue = UeProfile::default();
        assert!((ue.max_local_frequency() - 1e9).abs() < 1.0);
        assert!((ue.sustainable_rate() - 1e9 / 8250.0).abs() < 1e-3);
        assert!((ue.power_budget - 1.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn frame_index_matches_slot(slot in 0u64..1_000_000, t0 in 1u64..500) {
                let c = Clock::at(slot, t0).advance();
                prop_assert_eq!(c.frame(), c.slot() / t0 + 1);
                prop_assert_eq!(c.is_frame_boundary(), c.slot().is_multiple_of(t0));
            }
        }
    }
}
