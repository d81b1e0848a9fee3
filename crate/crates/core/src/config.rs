//! TOML scenario files. Every field is optional and defaults to the reference
//! deployment; per-entity overrides patch individual UEs or servers.
//!
//! ```toml
//! [network]
//! num_ues = 30
//! tradeoff_v = 0.0
//!
//! [ue]
//! processing_density = 8250
//! arrival_rate_bps = 100e3
//!
//! [[ue_override]]
//! index = 3
//! arrival_rate_bps = 50e3
//!
//! [server]
//! core_count = 8
//!
//! [[server_override]]
//! index = 0
//! core_count = 2
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{PolicyKind, SimulationOptions};
use crate::model::{
    build_network, dbm_to_watts, ConfigError, Mobility, NetworkConfig, NetworkState, Point, ServerProfile,
    ThresholdRule, UeProfile,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub network: NetworkSection,
    pub ue: UePatch,
    #[serde(rename = "ue_override", skip_serializing_if = "Vec::is_empty")]
    pub ue_overrides: Vec<UePatch>,
    pub server: ServerPatch,
    #[serde(rename = "server_override", skip_serializing_if = "Vec::is_empty")]
    pub server_overrides: Vec<ServerPatch>,
    pub run: RunSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub num_ues: usize,
    pub num_servers: usize,
    pub area_side_m: f64,
    pub slot_length_s: f64,
    pub frame_length_slots: u64,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub tradeoff_v: f64,
    pub carrier_frequency_ghz: f64,
    pub horizon_slots: u64,
    pub rng_seed: u64,
    pub mobility: Mobility,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub server_positions: Option<Vec<Point>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ue_positions: Option<Vec<Point>>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let r = NetworkConfig::reference(30);
        NetworkSection {
            num_ues: r.num_ues,
            num_servers: r.num_servers,
            area_side_m: r.area_side,
            slot_length_s: r.slot_length,
            frame_length_slots: r.frame_length,
            bandwidth_hz: r.bandwidth,
            noise_psd_dbm_per_hz: -174.0,
            tradeoff_v: r.tradeoff_v,
            carrier_frequency_ghz: r.carrier_frequency_ghz,
            horizon_slots: r.horizon,
            rng_seed: r.rng_seed,
            mobility: r.mobility,
            server_positions: None,
            ue_positions: None,
        }
    }
}

/// UE fields. In `[ue]` they patch the reference profile; in
/// `[[ue_override]]` they patch UE `index` only.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UePatch {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_budget_dbm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub processing_density: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arrival_rate_bps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit_task_bits: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_threshold_multiplier: Option<f64>,
    /// A fixed bound; takes precedence over the multiplier.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_threshold_bits: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offload_threshold_multiplier: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offload_threshold_bits: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offload_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_gpd_scale_bits: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_gpd_shape: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offload_gpd_scale_bits: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offload_gpd_shape: Option<f64>,
}

impl UePatch {
    fn apply(&self, p: &mut UeProfile) {
        if let Some(v) = self.power_budget_dbm {
            p.power_budget = dbm_to_watts(v);
        }
        set(&mut p.processing_density, self.processing_density);
        set(&mut p.arrival_rate, self.arrival_rate_bps);
        set(&mut p.kappa, self.kappa);
        set(&mut p.unit_task, self.unit_task_bits);
        patch_threshold(&mut p.local_threshold, self.local_threshold_multiplier, self.local_threshold_bits);
        patch_threshold(&mut p.offload_threshold, self.offload_threshold_multiplier, self.offload_threshold_bits);
        set(&mut p.local_tolerance, self.local_tolerance);
        set(&mut p.offload_tolerance, self.offload_tolerance);
        set(&mut p.local_tail.scale, self.local_gpd_scale_bits);
        set(&mut p.local_tail.shape, self.local_gpd_shape);
        set(&mut p.offload_tail.scale, self.offload_gpd_scale_bits);
        set(&mut p.offload_tail.shape, self.offload_gpd_shape);
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerPatch {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub core_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub core_speed_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay_threshold_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gpd_scale_bits: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gpd_shape: Option<f64>,
}

impl ServerPatch {
    fn apply(&self, p: &mut ServerProfile) {
        set(&mut p.core_count, self.core_count);
        set(&mut p.core_speed, self.core_speed_hz);
        set(&mut p.delay_threshold, self.delay_threshold_s);
        set(&mut p.tolerance, self.tolerance);
        set(&mut p.tail.scale, self.gpd_scale_bits);
        set(&mut p.tail.shape, self.gpd_shape);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub policy: PolicyKind,
    /// Virtual-queue sampling interval; 0 means once per frame.
    pub trajectory_interval_slots: u64,
    /// Decision-log sampling interval; 0 disables the log.
    pub decision_log_interval_slots: u64,
    /// Keep every offload-queue exceedance for tail fitting.
    pub record_exceedances: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            policy: PolicyKind::Proposed,
            trajectory_interval_slots: 0,
            decision_log_interval_slots: 0,
            record_exceedances: false,
        }
    }
}

/// Axes of a parameter sweep. An empty axis keeps the base scenario's value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub arrival_rates_bps: Vec<f64>,
    pub processing_densities: Vec<f64>,
    pub tradeoffs: Vec<f64>,
    pub num_ues: Vec<usize>,
    pub policies: Vec<PolicyKind>,
    pub seeds: Vec<u64>,
}

fn set<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn patch_threshold(rule: &mut ThresholdRule, multiplier: Option<f64>, bits: Option<f64>) {
    if let Some(bits) = bits {
        *rule = ThresholdRule::Fixed { bits };
    } else if let Some(multiplier) = multiplier {
        *rule = ThresholdRule::Dynamic { multiplier };
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario is always representable as TOML")
    }

    pub fn network_config(&self) -> NetworkConfig {
        let n = &self.network;
        NetworkConfig {
            num_ues: n.num_ues,
            num_servers: n.num_servers,
            area_side: n.area_side_m,
            server_positions: n.server_positions.clone().unwrap_or_default(),
            ue_positions: n.ue_positions.clone().unwrap_or_default(),
            slot_length: n.slot_length_s,
            frame_length: n.frame_length_slots,
            bandwidth: n.bandwidth_hz,
            noise_psd: dbm_to_watts(n.noise_psd_dbm_per_hz),
            tradeoff_v: n.tradeoff_v,
            carrier_frequency_ghz: n.carrier_frequency_ghz,
            horizon: n.horizon_slots,
            rng_seed: n.rng_seed,
            mobility: n.mobility,
        }
    }

    pub fn ue_profiles(&self) -> Result<Vec<UeProfile>, ConfigError> {
        if self.ue.index.is_some() {
            return Err(ConfigError::invalid("ue.index", "only allowed in [[ue_override]]"));
        }
        let mut base = UeProfile::default();
        self.ue.apply(&mut base);
        let mut out = vec![base; self.network.num_ues];
        for (k, o) in self.ue_overrides.iter().enumerate() {
            let i = o
                .index
                .ok_or_else(|| ConfigError::invalid(format!("ue_override[{k}].index"), "missing"))?;
            let p = out.get_mut(i).ok_or_else(|| {
                ConfigError::invalid(
                    format!("ue_override[{k}].index"),
                    format!("{i} is not below num_ues = {}", self.network.num_ues),
                )
            })?;
            o.apply(p);
        }
        Ok(out)
    }

    pub fn server_profiles(&self) -> Result<Vec<ServerProfile>, ConfigError> {
        if self.server.index.is_some() {
            return Err(ConfigError::invalid("server.index", "only allowed in [[server_override]]"));
        }
        let mut base = ServerProfile::default();
        self.server.apply(&mut base);
        let mut out = vec![base; self.network.num_servers];
        for (k, o) in self.server_overrides.iter().enumerate() {
            let j = o
                .index
                .ok_or_else(|| ConfigError::invalid(format!("server_override[{k}].index"), "missing"))?;
            let p = out.get_mut(j).ok_or_else(|| {
                ConfigError::invalid(
                    format!("server_override[{k}].index"),
                    format!("{j} is not below num_servers = {}", self.network.num_servers),
                )
            })?;
            o.apply(p);
        }
        Ok(out)
    }

    pub fn build(&self) -> Result<NetworkState, ConfigError> {
        build_network(self.network_config(), self.ue_profiles()?, self.server_profiles()?)
    }

    pub fn options(&self) -> SimulationOptions {
        SimulationOptions {
            policy: self.run.policy,
            horizon: self.network.horizon_slots,
            trajectory_interval: match self.run.trajectory_interval_slots {
                0 => self.network.frame_length_slots,
                k => k,
            },
            decision_log_interval: self.run.decision_log_interval_slots,
            record_exceedances: self.run.record_exceedances,
        }
    }

    /// Checks the base scenario and every sweep point.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.build()?;
        if self.network.horizon_slots < self.network.frame_length_slots {
            return Err(ConfigError::invalid(
                "network.horizon_slots",
                format!(
                    "must cover at least one frame ({} slots)",
                    self.network.frame_length_slots
                ),
            ));
        }
        if let Some(sweep) = &self.sweep {
            for (k, point) in crate::engine::expand_grid(self, sweep).iter().enumerate() {
                point.apply(self).build().map_err(|e| {
                    ConfigError::invalid(format!("sweep point {k}"), e.to_string())
                })?;
            }
        }
        Ok(())
    }
}
