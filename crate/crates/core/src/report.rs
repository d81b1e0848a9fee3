//! Flat CSV and JSON renderings of simulation results.

use std::fmt::Write as _;

use serde::Serialize;

use crate::config::Scenario;
use crate::engine::{GridPoint, MetricsRecord, SweepResult, VIRTUAL_FAMILIES};
use crate::model::UeProfile;

pub const SCHEMA_VERSION: u32 = 1;

pub const METRICS_COLUMNS: [&str; 30] = [
    "point",
    "policy",
    "seed",
    "num_ues",
    "arrival_rate_bps",
    "processing_density",
    "tradeoff_v",
    "ue",
    "server",
    "association_snr_db",
    "delay_s",
    "local_delay_s",
    "offload_delay_s",
    "avg_local_arrival_bits",
    "avg_offload_arrival_bits",
    "split_ratio",
    "compute_power_w",
    "transmit_power_w",
    "total_power_w",
    "q99_local_bits",
    "q99_offload_bits",
    "local_exceedance_mean_bits",
    "local_exceedance_std_bits",
    "offload_exceedance_mean_bits",
    "offload_exceedance_std_bits",
    "local_violation_freq",
    "offload_violation_freq",
    "server_violation_freq",
    "final_local_bits",
    "final_offload_bits",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// The grid point and scenario values that produced a record.
#[derive(Debug, Clone, Copy)]
pub struct RowContext<'a> {
    pub point: usize,
    pub arrival_rate_bps: f64,
    pub processing_density: f64,
    pub tradeoff_v: f64,
    pub grid: Option<&'a GridPoint>,
}

/// One row per UE, header first.
pub fn metrics_csv<'a>(rows: impl IntoIterator<Item = (RowContext<'a>, &'a MetricsRecord)>) -> String {
    let mut out = METRICS_COLUMNS.join(",");
    out.push('\n');
    for (ctx, rec) in rows {
        for u in &rec.ues {
            let fields = [
                ctx.point.to_string(),
                rec.policy.to_string(),
                rec.seed.to_string(),
                rec.num_ues.to_string(),
                ctx.arrival_rate_bps.to_string(),
                ctx.processing_density.to_string(),
                ctx.tradeoff_v.to_string(),
                u.ue.to_string(),
                opt(u.server),
                u.association_snr_db.to_string(),
                u.delay_s.to_string(),
                u.local_delay_s.to_string(),
                u.offload_delay_s.to_string(),
                u.avg_local_arrival_bits.to_string(),
                u.avg_offload_arrival_bits.to_string(),
                u.split_ratio.to_string(),
                u.compute_power_w.to_string(),
                u.transmit_power_w.to_string(),
                u.total_power_w.to_string(),
                u.q99_local_bits.to_string(),
                u.q99_offload_bits.to_string(),
                u.local_exceedance_mean_bits.to_string(),
                u.local_exceedance_std_bits.to_string(),
                u.offload_exceedance_mean_bits.to_string(),
                u.offload_exceedance_std_bits.to_string(),
                u.local_violation_freq.to_string(),
                u.offload_violation_freq.to_string(),
                u.server_violation_freq.to_string(),
                u.final_local_bits.to_string(),
                u.final_offload_bits.to_string(),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
    }
    out
}

/// Frame-by-frame association of one record.
pub fn matching_csv(rec: &MetricsRecord) -> String {
    let mut out = String::from("frame,slot,ue,server,converged,swaps\n");
    for f in &rec.frames {
        for (i, j) in f.assignment.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{},{}", f.frame, f.slot, i, j, f.converged, f.swaps);
        }
    }
    out
}

pub fn virtual_queue_csv(rec: &MetricsRecord) -> String {
    let mut out = String::from("slot");
    for name in VIRTUAL_FAMILIES {
        let _ = write!(out, ",{name}_max,{name}_mean");
    }
    out.push('\n');
    for s in &rec.virtual_queues {
        out.push_str(&s.slot.to_string());
        for k in 0..VIRTUAL_FAMILIES.len() {
            let _ = write!(out, ",{},{}", s.max[k], s.mean[k]);
        }
        out.push('\n');
    }
    out
}

pub fn decision_log_csv(rec: &MetricsRecord) -> String {
    let mut out = String::from("slot,ue,server,frequency_hz,power_w,local_bits,offload_bits,served_cores\n");
    for d in &rec.decisions {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            d.slot,
            d.ue,
            opt(d.server),
            d.frequency_hz,
            d.power_w,
            d.local_bits,
            d.offload_bits,
            d.served_cores
        );
    }
    out
}

#[derive(Serialize)]
struct SummaryPoint<'a> {
    point: usize,
    grid: Option<&'a GridPoint>,
    policy: String,
    seed: u64,
    horizon: u64,
    num_ues: usize,
    network: &'a crate::engine::NetworkMetrics,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    points: Vec<SummaryPoint<'a>>,
}

/// Network-level aggregates for every point. Non-finite numbers become `null`.
pub fn summary_json<'a>(rows: impl IntoIterator<Item = (RowContext<'a>, &'a MetricsRecord)>) -> String {
    let points = rows
        .into_iter()
        .map(|(ctx, rec)| SummaryPoint {
            point: ctx.point,
            grid: ctx.grid,
            policy: rec.policy.to_string(),
            seed: rec.seed,
            horizon: rec.horizon,
            num_ues: rec.num_ues,
            network: &rec.network,
        })
        .collect();
    serde_json::to_string_pretty(&Summary { schema_version: SCHEMA_VERSION, points }).expect("summary serializes")
}

impl<'a> RowContext<'a> {
    /// Context for a record produced from `scenario`; unset UE fields take the
    /// reference profile's values.
    pub fn for_scenario(point: usize, scenario: &Scenario, grid: Option<&'a GridPoint>) -> Self {
        let d = UeProfile::default();
        RowContext {
            point,
            arrival_rate_bps: scenario.ue.arrival_rate_bps.unwrap_or(d.arrival_rate),
            processing_density: scenario.ue.processing_density.unwrap_or(d.processing_density),
            tradeoff_v: scenario.network.tradeoff_v,
            grid,
        }
    }
}

/// Row contexts for sweep output, in grid order.
pub fn sweep_rows<'a>(results: &'a [SweepResult], base: &Scenario) -> Vec<(RowContext<'a>, &'a MetricsRecord)> {
    results
        .iter()
        .map(|r| (RowContext::for_scenario(r.index, &r.point.apply(base), Some(&r.point)), &r.record))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run_simulation;

    fn record() -> (Scenario, MetricsRecord) {
        let mut s = Scenario::default();
        s.network.num_ues = 3;
        s.network.horizon_slots = 200;
        s.run.decision_log_interval_slots = 50;
        let rec = run_simulation(s.build().unwrap(), &s.options());
        (s, rec)
    }

    #[test]
    fn csv_has_one_row_per_ue() {
        let (s, rec) = record();
        let ctx = RowContext::for_scenario(0, &s, None);
        assert_eq!(ctx.arrival_rate_bps, 1e5);
        let csv = metrics_csv([(ctx, &rec)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        for l in &lines {
            assert_eq!(l.split(',').count(), METRICS_COLUMNS.len());
        }
        let json: serde_json::Value = serde_json::from_str(&summary_json([(ctx, &rec)])).unwrap();
        assert_eq!(json["schema_version"], SCHEMA_VERSION);
        assert_eq!(json["points"][0]["policy"], "proposed");
    }

    #[test]
    fn side_tables() {
        let (_, rec) = record();
        assert_eq!(matching_csv(&rec).lines().count(), 1 + 2 * 3);
        assert_eq!(decision_log_csv(&rec).lines().count(), 1 + 4 * 3);
        let vq = virtual_queue_csv(&rec);
        assert_eq!(vq.lines().next().unwrap().split(',').count(), 19);
    }
}
