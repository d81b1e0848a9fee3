use mecsim::config::SweepSection;
use mecsim::engine::{expand_grid, sweep, Simulation};
use mecsim::par::Execution;
use mecsim::queues::QueueSnapshot;
use mecsim::report::{metrics_csv, sweep_rows};
use mecsim::{run_simulation, PolicyKind, Scenario, SimulationOptions};

fn small(num_ues: usize, horizon: u64) -> Scenario {
    let mut s = Scenario::default();
    s.network.num_ues = num_ues;
    s.network.horizon_slots = horizon;
    s
}

#[test]
fn scenario_toml_round_trips_and_reproduces_runs() {
    let mut s = small(5, 400);
    s.network.rng_seed = 42;
    s.ue.arrival_rate_bps = Some(2e5);
    let text = s.to_toml_string();
    let back = Scenario::from_toml_str(&text).unwrap();
    assert_eq!(back.to_toml_string(), text);

    let a = run_simulation(s.build().unwrap(), &s.options());
    let b = run_simulation(back.build().unwrap(), &back.options());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn snapshots_round_trip_mid_run() {
    let s = small(6, 1000);
    let mut sim = Simulation::new(s.build().unwrap(), s.options());
    for _ in 0..250 {
        sim.step();
    }
    let snap = sim.snapshot();
    assert_eq!(snap.slot, 250);
    assert_eq!(snap.ues.len(), 6);
    let back = QueueSnapshot::from_text(&snap.to_text()).unwrap();
    assert_eq!(back, snap);
    assert!(snap.ues.iter().all(|q| q.is_nonnegative()));
}

#[test]
fn every_policy_completes_with_finite_metrics() {
    let s = small(6, 600);
    for policy in PolicyKind::ALL {
        let rec = run_simulation(s.build().unwrap(), &SimulationOptions::new(policy, 600));
        assert_eq!(rec.ues.len(), 6, "{policy}");
        assert!(rec.network.avg_total_power_w.is_finite(), "{policy}");
        // Split ratio is offloaded over local arrivals.
        match policy {
            PolicyKind::NoMec => assert_eq!(rec.network.split_ratio, 0.0),
            PolicyKind::FullOffload => assert_eq!(rec.network.split_ratio, f64::INFINITY),
            _ => assert!(rec.network.split_ratio.is_finite(), "{policy}"),
        }
    }
}

#[test]
fn sweep_matches_individual_runs_in_any_execution_mode() {
    let base = small(4, 300);
    let grid = SweepSection {
        seeds: vec![3, 4],
        tradeoffs: vec![0.0, 1e9],
        ..Default::default()
    };
    let points = expand_grid(&base, &grid);
    assert_eq!(points.len(), 4);
    let seq = sweep(&base, &grid, Execution::Sequential).unwrap();
    let par = sweep(&base, &grid, Execution::Parallel).unwrap();
    assert_eq!(
        metrics_csv(sweep_rows(&seq, &base)),
        metrics_csv(sweep_rows(&par, &base))
    );
    for r in &seq {
        let s = r.point.apply(&base);
        let alone = run_simulation(s.build().unwrap(), &s.options());
        assert_eq!(
            serde_json::to_string(&alone).unwrap(),
            serde_json::to_string(&r.record).unwrap()
        );
    }
}
