//! Plot-ready tables, one per figure family. Column sets are fixed.

use std::fmt::Write as _;

use mecsim::report::RowContext;
use mecsim::MetricsRecord;

pub type Row<'a> = (RowContext<'a>, &'a MetricsRecord);

pub const SPLIT_RATIO_COLUMNS: &str =
    "point,policy,seed,processing_density,arrival_rate_bps,sustainable_rate_bps,tradeoff_v,split_ratio";
pub const POWER_COLUMNS: &str =
    "tradeoff_v,point,policy,seed,processing_density,arrival_rate_bps,avg_total_power_w,avg_compute_power_w,avg_transmit_power_w,split_ratio";
pub const DELAY_COLUMNS: &str = "point,policy,seed,num_ues,processing_density,arrival_rate_bps,avg_delay_s,\
q99_local_bits,q99_offload_bits,local_exceedance_mean_bits,local_exceedance_std_bits,\
offload_exceedance_mean_bits,offload_exceedance_std_bits";
pub const SNR_COLUMNS: &str = "point,policy,seed,snr_db,cdf";

/// Task split ratio against load, with the local watershed `1e9 / L`.
pub fn split_ratio(rows: &[Row]) -> String {
    let mut out = format!("{SPLIT_RATIO_COLUMNS}\n");
    for (ctx, rec) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            ctx.point,
            rec.policy,
            rec.seed,
            ctx.processing_density,
            ctx.arrival_rate_bps,
            1e9 / ctx.processing_density,
            ctx.tradeoff_v,
            rec.network.split_ratio
        );
    }
    out
}

/// Average per-UE power against the tradeoff parameter, sorted by V.
pub fn power_vs_v(rows: &[Row]) -> String {
    let mut sorted: Vec<&Row> = rows.iter().collect();
    sorted.sort_by(|a, b| a.0.tradeoff_v.total_cmp(&b.0.tradeoff_v).then(a.0.point.cmp(&b.0.point)));
    let mut out = format!("{POWER_COLUMNS}\n");
    for (ctx, rec) in sorted {
        let n = &rec.network;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            ctx.tradeoff_v,
            ctx.point,
            rec.policy,
            rec.seed,
            ctx.processing_density,
            ctx.arrival_rate_bps,
            n.avg_total_power_w,
            n.avg_compute_power_w,
            n.avg_transmit_power_w,
            n.split_ratio
        );
    }
    out
}

/// Delay and queue-tail statistics per point.
pub fn delay_reliability(rows: &[Row]) -> String {
    let mut out = format!("{DELAY_COLUMNS}\n");
    for (ctx, rec) in rows {
        let n = &rec.network;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            ctx.point,
            rec.policy,
            rec.seed,
            rec.num_ues,
            ctx.processing_density,
            ctx.arrival_rate_bps,
            n.avg_delay_s,
            n.q99_local_bits,
            n.q99_offload_bits,
            n.local_exceedance_mean_bits,
            n.local_exceedance_std_bits,
            n.offload_exceedance_mean_bits,
            n.offload_exceedance_std_bits
        );
    }
    out
}

/// Empirical CDF of the association SNR `P_max E[h] / (N0 W)` per point.
pub fn snr_cdf(rows: &[Row]) -> String {
    let mut out = format!("{SNR_COLUMNS}\n");
    for (ctx, rec) in rows {
        let mut snr: Vec<f64> = rec.ues.iter().map(|u| u.association_snr_db).collect();
        snr.sort_by(f64::total_cmp);
        let n = snr.len() as f64;
        for (k, s) in snr.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", ctx.point, rec.policy, rec.seed, s, (k + 1) as f64 / n);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use mecsim::config::SweepSection;
    use mecsim::engine::sweep;
    use mecsim::par::Execution;
    use mecsim::report::sweep_rows;
    use mecsim::Scenario;

    fn results() -> (Scenario, Vec<mecsim::engine::SweepResult>) {
        let mut base = Scenario::default();
        base.network.num_ues = 4;
        base.network.horizon_slots = 200;
        let grid = SweepSection { tradeoffs: vec![1e9, 0.0, 1e3], ..Default::default() };
        let out = sweep(&base, &grid, Execution::Sequential).unwrap();
        (base, out)
    }

    #[test]
    fn power_table_is_sorted_by_v() {
        let (base, out) = results();
        let rows = sweep_rows(&out, &base);
        let table = power_vs_v(&rows);
        let vs: Vec<f64> = table.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(vs, vec![0.0, 1e3, 1e9]);
    }

    #[test]
    fn split_table_marks_the_watershed() {
        let (base, out) = results();
        let rows = sweep_rows(&out, &base);
        let table = split_ratio(&rows);
        let first: Vec<&str> = table.lines().nth(1).unwrap().split(',').collect();
        let sustainable: f64 = first[5].parse().unwrap();
        assert!((sustainable - 1e9 / 8250.0).abs() < 1e-6);
        assert_eq!(table.lines().count(), 4);
    }

    #[test]
    fn snr_cdf_ends_at_one() {
        let (base, out) = results();
        let rows = sweep_rows(&out, &base);
        let table = snr_cdf(&rows);
        assert_eq!(table.lines().count(), 1 + 3 * 4);
        let last: Vec<&str> = table.lines().nth(4).unwrap().split(',').collect();
        assert_eq!(last[4], "1");
        for cols in [SPLIT_RATIO_COLUMNS, POWER_COLUMNS, DELAY_COLUMNS, SNR_COLUMNS] {
            assert!(!cols.contains(' '));
        }
        assert_eq!(delay_reliability(&rows).lines().count(), 4);
    }
}
