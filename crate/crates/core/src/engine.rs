//! The two-timescale loop: association every frame, allocation, splitting and
//! core scheduling every slot, plus the baselines and metric collection.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::allocation::{schedule_cores, solve_ue_allocation, split_tasks, UeParams, UeWeights};
use crate::channel::{max_rate, shannon_rate, ChannelState};
use crate::config::{Scenario, SweepSection};
use crate::matching::{rss_association, run_matching, Matching, MatchingInputs, WeightEstimator};
use crate::model::{uniform_positions, ConfigError, NetworkState};
use crate::par::{self, Execution};
use crate::queues::{
    excess, moving_average, step_local_queue, step_offload_queue, step_server_queue, QueueSnapshot,
    UeTailInputs,
};

const ARRIVAL_STREAM: u64 = 1;
const FADING_STREAM: u64 = 2;
const MOBILITY_STREAM: u64 = 3;

/// Names of the nine virtual-queue families, in [`VirtualSample`] order.
pub const VIRTUAL_FAMILIES: [&str; 9] = [
    "local_x",
    "local_y",
    "local_viol",
    "offload_x",
    "offload_y",
    "offload_viol",
    "server_x",
    "server_y",
    "server_viol",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Matching-based association with per-slot splitting and allocation.
    #[default]
    Proposed,
    /// Everything is computed locally; servers are never used.
    NoMec,
    /// Every arrival is offloaded and the local CPU stays idle.
    FullOffload,
    /// Each UE joins the server with the strongest mean gain.
    #[serde(alias = "rss")]
    RssAssociation,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Proposed,
        PolicyKind::NoMec,
        PolicyKind::FullOffload,
        PolicyKind::RssAssociation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Proposed => "proposed",
            PolicyKind::NoMec => "no-mec",
            PolicyKind::FullOffload => "full-offload",
            PolicyKind::RssAssociation => "rss-association",
        }
    }

    fn uses_matching(self) -> bool {
        matches!(self, PolicyKind::Proposed | PolicyKind::FullOffload)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(PolicyKind::Proposed),
            "no-mec" => Ok(PolicyKind::NoMec),
            "full-offload" => Ok(PolicyKind::FullOffload),
            "rss" | "rss-association" => Ok(PolicyKind::RssAssociation),
            _ => Err(format!(
                "unknown policy `{s}` (expected proposed, no-mec, full-offload or rss-association)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOptions {
    pub policy: PolicyKind,
    pub horizon: u64,
    /// Virtual queues are sampled every this many slots; 0 disables sampling.
    pub trajectory_interval: u64,
    /// Decisions are logged every this many slots; 0 disables the log.
    pub decision_log_interval: u64,
    /// Keep every offload-queue exceedance value.
    pub record_exceedances: bool,
}

impl SimulationOptions {
    pub fn new(policy: PolicyKind, horizon: u64) -> Self {
        SimulationOptions {
            policy,
            horizon,
            trajectory_interval: 100,
            decision_log_interval: 0,
            record_exceedances: false,
        }
    }
}

/// Little's-law bookkeeping for one queue.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QueueTracker {
    pub sum_len: f64,
    pub samples: u64,
    pub departed: f64,
}

impl QueueTracker {
    pub fn record(&mut self, len: f64, departed: f64) {
        self.sum_len += len;
        self.samples += 1;
        self.departed += departed;
    }

    /// Mean backlog over mean departure rate, in seconds. Zero for a queue
    /// that never held anything; infinite for one that never drained.
    pub fn delay(&self, slot_length: f64) -> f64 {
        if self.sum_len == 0.0 {
            0.0
        } else if self.departed == 0.0 {
            f64::INFINITY
        } else {
            self.sum_len / self.departed * slot_length
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEstimate {
    pub local: f64,
    pub offload: f64,
    pub total: f64,
}

/// Local path: `Q^L` delay. Offload path: `Q^O` delay plus server delay plus
/// one slot of transmission. The total mixes the two by arrival share.
pub fn end_to_end_delay_estimate(
    local: &QueueTracker,
    offload: &QueueTracker,
    server: &QueueTracker,
    local_share: f64,
    offload_share: f64,
    slot_length: f64,
) -> DelayEstimate {
    let l = local.delay(slot_length);
    let o = offload.delay(slot_length) + server.delay(slot_length) + slot_length;
    let weight = local_share + offload_share;
    let total = if weight > 0.0 {
        let mut acc = 0.0;
        if local_share > 0.0 {
            acc += local_share * l;
        }
        if offload_share > 0.0 {
            acc += offload_share * o;
        }
        acc / weight
    } else {
        0.0
    };
    DelayEstimate { local: l, offload: o, total }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UeMetrics {
    pub ue: usize,
    /// Association in the last frame; `None` when the policy never associates.
    pub server: Option<usize>,
    /// `P_max E[h] / (N_0 W)` towards the associated (or strongest) server.
    pub association_snr_db: f64,
    pub delay_s: f64,
    pub local_delay_s: f64,
    pub offload_delay_s: f64,
    pub avg_local_arrival_bits: f64,
    pub avg_offload_arrival_bits: f64,
    pub split_ratio: f64,
    pub compute_power_w: f64,
    pub transmit_power_w: f64,
    pub total_power_w: f64,
    pub q99_local_bits: f64,
    pub q99_offload_bits: f64,
    pub local_exceedance_mean_bits: f64,
    pub local_exceedance_std_bits: f64,
    pub offload_exceedance_mean_bits: f64,
    pub offload_exceedance_std_bits: f64,
    pub local_violation_freq: f64,
    pub offload_violation_freq: f64,
    /// Worst server-side violation frequency over all servers.
    pub server_violation_freq: f64,
    pub final_local_bits: f64,
    pub final_offload_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkMetrics {
    pub avg_delay_s: f64,
    pub avg_compute_power_w: f64,
    pub avg_transmit_power_w: f64,
    pub avg_total_power_w: f64,
    /// Offloaded over locally kept arrivals, pooled over UEs.
    pub split_ratio: f64,
    pub q99_local_bits: f64,
    pub q99_offload_bits: f64,
    pub local_exceedance_mean_bits: f64,
    pub local_exceedance_std_bits: f64,
    pub offload_exceedance_mean_bits: f64,
    pub offload_exceedance_std_bits: f64,
    pub max_local_violation_freq: f64,
    pub max_offload_violation_freq: f64,
    pub max_server_violation_freq: f64,
    pub frames: usize,
    pub converged_frames: usize,
    pub total_swaps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    pub frame: u64,
    pub slot: u64,
    pub assignment: Vec<usize>,
    pub converged: bool,
    pub swaps: usize,
}

/// Max and mean over entities of each virtual-queue family at one slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VirtualSample {
    pub slot: u64,
    pub max: [f64; 9],
    pub mean: [f64; 9],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionEntry {
    pub slot: u64,
    pub ue: usize,
    pub server: Option<usize>,
    pub frequency_hz: f64,
    pub power_w: f64,
    pub local_bits: f64,
    pub offload_bits: f64,
    pub served_cores: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub policy: PolicyKind,
    pub seed: u64,
    pub horizon: u64,
    pub num_ues: usize,
    pub num_servers: usize,
    pub network: NetworkMetrics,
    pub ues: Vec<UeMetrics>,
    pub frames: Vec<FrameRecord>,
    pub virtual_queues: Vec<VirtualSample>,
    #[serde(skip)]
    pub offload_exceedances: Vec<f64>,
    pub decisions: Vec<DecisionEntry>,
}

/// 99th percentile as `sorted[ceil(0.99 n) - 1]`, then mean and standard
/// deviation of the amounts by which samples exceed it.
pub fn tail_summary(samples: &[f64]) -> (f64, f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((0.99 * sorted.len() as f64).ceil() as usize).max(1) - 1;
    let q = sorted[k];
    let over: Vec<f64> = sorted[k..].iter().filter(|&&x| x > q).map(|x| x - q).collect();
    if over.is_empty() {
        return (q, 0.0, 0.0);
    }
    let n = over.len() as f64;
    let mean = over.iter().sum::<f64>() / n;
    let var = over.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (q, mean, var.sqrt())
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// One simulation in progress.
pub struct Simulation {
    net: NetworkState,
    opts: SimulationOptions,
    channel: ChannelState,
    arrivals: Vec<Option<Poisson<f64>>>,
    arrival_rng: ChaCha8Rng,
    fading_rng: ChaCha8Rng,
    mobility_rng: ChaCha8Rng,
    matching: Option<Matching>,
    estimator: WeightEstimator,
    local_trk: Vec<QueueTracker>,
    offload_trk: Vec<QueueTracker>,
    server_trk: Vec<QueueTracker>,
    compute_power: Vec<f64>,
    transmit_power: Vec<f64>,
    viol_local: Vec<u64>,
    viol_offload: Vec<u64>,
    /// `[ue][server]`.
    viol_server: Vec<Vec<u64>>,
    local_samples: Vec<Vec<f64>>,
    offload_samples: Vec<Vec<f64>>,
    frames: Vec<FrameRecord>,
    virtual_queues: Vec<VirtualSample>,
    exceedances: Vec<f64>,
    decisions: Vec<DecisionEntry>,
}

impl Simulation {
    pub fn new(net: NetworkState, opts: SimulationOptions) -> Self {
        let seed = net.config.rng_seed;
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        let positions: Vec<_> = net.ues.iter().map(|u| u.position).collect();
        let servers: Vec<_> = net.servers.iter().map(|s| s.position).collect();
        let channel = ChannelState::from_geometry(&positions, &servers, net.config.carrier_frequency_ghz);
        let tau = net.config.slot_length;
        let arrivals = net
            .ues
            .iter()
            .map(|u| {
                let mean = u.profile.arrival_rate * tau / u.profile.unit_task;
                (mean > 0.0).then(|| Poisson::new(mean).expect("positive finite mean"))
            })
            .collect();
        let (u, s) = (net.num_ues(), net.num_servers());
        let capacity = opts.horizon as usize;
        Simulation {
            arrivals,
            arrival_rng: stream(ARRIVAL_STREAM),
            fading_rng: stream(FADING_STREAM),
            mobility_rng: stream(MOBILITY_STREAM),
            channel,
            matching: None,
            estimator: WeightEstimator::new(u, s),
            local_trk: vec![QueueTracker::default(); u],
            offload_trk: vec![QueueTracker::default(); u],
            server_trk: vec![QueueTracker::default(); u],
            compute_power: vec![0.0; u],
            transmit_power: vec![0.0; u],
            viol_local: vec![0; u],
            viol_offload: vec![0; u],
            viol_server: vec![vec![0; s]; u],
            local_samples: (0..u).map(|_| Vec::with_capacity(capacity)).collect(),
            offload_samples: (0..u).map(|_| Vec::with_capacity(capacity)).collect(),
            frames: Vec::new(),
            virtual_queues: Vec::new(),
            exceedances: Vec::new(),
            decisions: Vec::new(),
            net,
            opts,
        }
    }

    pub fn state(&self) -> &NetworkState {
        &self.net
    }

    pub fn matching(&self) -> Option<&Matching> {
        self.matching.as_ref()
    }

    pub fn snapshot(&self) -> QueueSnapshot {
        QueueSnapshot {
            slot: self.net.clock.slot(),
            ues: self.net.ues.iter().map(|u| u.queues).collect(),
            servers: self.net.servers.iter().map(|s| s.queues.clone()).collect(),
        }
    }

    fn associate(&mut self) {
        let policy = self.opts.policy;
        let clock = self.net.clock;
        if clock.frame() > 1 && self.net.config.mobility == crate::model::Mobility::Resample {
            let side = self.net.config.area_side;
            let pos = uniform_positions(&mut self.mobility_rng, self.net.num_ues(), side);
            for (ue, p) in self.net.ues.iter_mut().zip(&pos) {
                ue.position = *p;
            }
            let servers: Vec<_> = self.net.servers.iter().map(|s| s.position).collect();
            self.channel = ChannelState::from_geometry(&pos, &servers, self.net.config.carrier_frequency_ghz);
        }
        let s = self.net.num_servers();
        let (assignment, converged, swaps) = match policy {
            PolicyKind::NoMec => return,
            PolicyKind::RssAssociation => (rss_association(&self.channel.mean_gains), true, 0),
            PolicyKind::Proposed | PolicyKind::FullOffload => {
                let (ue_weights, server_weights) = self.estimator.estimates();
                let inputs = MatchingInputs {
                    mean_gains: self.channel.mean_gains.clone(),
                    ue_weights,
                    server_weights,
                    power_budgets: self.net.ues.iter().map(|u| u.profile.power_budget).collect(),
                    noise_power: self.net.config.noise_power(),
                };
                let out = run_matching(&inputs);
                (out.matching.assignment().to_vec(), out.converged, out.swaps)
            }
        };
        self.frames.push(FrameRecord {
            frame: clock.frame(),
            slot: clock.slot(),
            assignment: assignment.clone(),
            converged,
            swaps,
        });
        self.matching = Some(Matching::new(assignment, s));
    }

    /// Advances the network by one slot.
    pub fn step(&mut self) {
        let policy = self.opts.policy;
        if self.net.clock.is_frame_boundary() {
            self.associate();
        }
        let t = self.net.clock.slot();
        let cfg = self.net.config.clone();
        let (tau, w, noise) = (cfg.slot_length, cfg.bandwidth, cfg.noise_power());
        let (nu, ns) = (self.net.num_ues(), self.net.num_servers());

        // Arrivals and fading are drawn identically under every policy.
        let units: Vec<u64> = self
            .arrivals
            .iter()
            .map(|d| d.as_ref().map_or(0, |p| p.sample(&mut self.arrival_rng) as u64))
            .collect();
        self.channel.redraw(&mut self.fading_rng);
        let h = &self.channel.gains;

        // Weights from slot-t state.
        let mut beta_l = vec![0.0; nu];
        let mut beta_o = vec![0.0; nu];
        for (i, ue) in self.net.ues.iter().enumerate() {
            let a = units[i] as f64 * ue.profile.unit_task;
            beta_l[i] = ue.queues.beta_local(a, ue.profile.local_threshold.threshold(ue.queues.avg_local_arrival));
            beta_o[i] = ue.queues.beta_offload(a, ue.profile.offload_threshold.threshold(ue.queues.avg_offload_arrival));
        }
        let mut beta_s = vec![vec![0.0; nu]; ns];
        if policy != PolicyKind::NoMec {
            for (j, server) in self.net.servers.iter().enumerate() {
                for (i, ue) in self.net.ues.iter().enumerate() {
                    let q = &server.queues[i];
                    let tx_max = tau * max_rate(ue.profile.power_budget, h[i][j], w, noise);
                    beta_s[j][i] = q.beta(tx_max, q.avg_rate * server.profile.delay_threshold);
                }
            }
        }
        if policy.uses_matching() {
            if let Some(m) = &self.matching {
                self.estimator.record(&beta_o, &beta_s, m);
            }
        }

        // Per-UE split and allocation.
        let mut split = Vec::with_capacity(nu);
        let mut alloc = Vec::with_capacity(nu);
        let mut support = Vec::new();
        for (i, ue) in self.net.ues.iter().enumerate() {
            let serving = self.matching.as_ref().map(|m| m.server_of(i));
            let (mut wl, mut wo, mut ws) = (beta_l[i], beta_o[i], serving.map_or(0.0, |j| beta_s[j][i]));
            let s = match policy {
                PolicyKind::NoMec => {
                    wo = 0.0;
                    ws = 0.0;
                    split_tasks(units[i], 0.0, 1.0)
                }
                PolicyKind::FullOffload => {
                    wl = 0.0;
                    split_tasks(units[i], 1.0, 0.0)
                }
                PolicyKind::Proposed | PolicyKind::RssAssociation => split_tasks(units[i], wl, wo),
            };
            support.clear();
            support.extend(ue.histogram.support());
            let params = UeParams {
                slot_length: tau,
                processing_density: ue.profile.processing_density,
                kappa: ue.profile.kappa,
                power_budget: ue.profile.power_budget,
                bandwidth: w,
                noise_power: noise,
                tradeoff_v: cfg.tradeoff_v,
            };
            let weights = UeWeights {
                local: wl,
                offload: wo,
                server: ws,
                gain: serving.map_or(0.0, |j| h[i][j]),
            };
            split.push(s);
            alloc.push(solve_ue_allocation(&weights, &support, &params));
        }

        // Core schedules.
        let densities: Vec<f64> = self.net.ues.iter().map(|u| u.profile.processing_density).collect();
        let cores: Vec<Vec<f64>> = if policy == PolicyKind::NoMec {
            vec![vec![0.0; nu]; ns]
        } else {
            self.net
                .servers
                .iter()
                .enumerate()
                .map(|(j, s)| schedule_cores(&beta_s[j], &densities, s.profile.core_count, s.profile.core_speed).frequencies)
                .collect()
        };

        // Uplink rates under the realized interference.
        let mut received = vec![0.0; ns];
        if let Some(m) = &self.matching {
            for i in 0..nu {
                let j = m.server_of(i);
                received[j] += alloc[i].power * h[i][j];
            }
        }
        let mut rate = vec![0.0; nu];
        let mut observed = vec![0.0; nu];
        if let Some(m) = &self.matching {
            for i in 0..nu {
                let j = m.server_of(i);
                let own = alloc[i].power * h[i][j];
                observed[i] = (received[j] - own).max(0.0);
                rate[i] = shannon_rate(w, own, noise, observed[i]);
            }
        }

        // Physical queues, moving averages, exceedances, virtual queues.
        let serving: Vec<Option<usize>> = (0..nu).map(|i| self.matching.as_ref().map(|m| m.server_of(i))).collect();
        for i in 0..nu {
            let prof = self.net.ues[i].profile.clone();
            let a_l = split[i].local as f64 * prof.unit_task;
            let a_o = split[i].offload as f64 * prof.unit_task;
            let a = alloc[i];
            let q = self.net.ues[i].queues;
            let tx = tau * rate[i];
            let pending = q.offload + a_o;

            let local = step_local_queue(q.local, a_l, a.frequency, tau, prof.processing_density);
            let offload = step_offload_queue(q.offload, a_o, tx);
            self.local_trk[i].record(local, q.local + a_l - local);
            self.offload_trk[i].record(offload, pending - offload);

            let mut z_total = 0.0;
            let mut z_departed = 0.0;
            for (j, server) in self.net.servers.iter_mut().enumerate() {
                let sq = &mut server.queues[i];
                let transmitted = if serving[i] == Some(j) { tx } else { 0.0 };
                let service = tau * cores[j][i] / prof.processing_density;
                let arrived = pending.min(transmitted);
                let z = step_server_queue(sq.backlog, pending, transmitted, service);
                z_departed += sq.backlog + arrived - z;
                sq.backlog = z;
                z_total += z;
                let r = if serving[i] == Some(j) { rate[i] } else { 0.0 };
                sq.avg_rate = moving_average(sq.avg_rate, r, t);
                let ex = excess(z, sq.avg_rate * server.profile.delay_threshold);
                self.viol_server[i][j] += u64::from(ex.is_some());
                let targets = server.profile.tail.targets();
                sq.step_virtual(ex, targets, server.profile.tolerance);
            }
            self.server_trk[i].record(z_total, z_departed);

            let ue = &mut self.net.ues[i];
            ue.queues.local = local;
            ue.queues.offload = offload;
            ue.queues.avg_local_arrival = moving_average(q.avg_local_arrival, a_l, t);
            ue.queues.avg_offload_arrival = moving_average(q.avg_offload_arrival, a_o, t);
            let ex_l = excess(local, prof.local_threshold.threshold(ue.queues.avg_local_arrival));
            let ex_o = excess(offload, prof.offload_threshold.threshold(ue.queues.avg_offload_arrival));
            ue.queues.step_virtual(&UeTailInputs {
                local_excess: ex_l,
                offload_excess: ex_o,
                local_targets: prof.local_tail.targets(),
                offload_targets: prof.offload_tail.targets(),
                local_tolerance: prof.local_tolerance,
                offload_tolerance: prof.offload_tolerance,
            });
            self.viol_local[i] += u64::from(ex_l.is_some());
            self.viol_offload[i] += u64::from(ex_o.is_some());
            if self.opts.record_exceedances {
                if let Some(x) = ex_o {
                    self.exceedances.push(x);
                }
            }
            if policy != PolicyKind::NoMec {
                ue.histogram
                    .observe(observed[i])
                    .expect("observed interference is clamped nonnegative");
            }
            self.local_samples[i].push(local);
            self.offload_samples[i].push(offload);
            self.compute_power[i] += prof.kappa * a.frequency.powi(3);
            self.transmit_power[i] += a.power;

            if self.opts.decision_log_interval > 0 && t.is_multiple_of(self.opts.decision_log_interval) {
                self.decisions.push(DecisionEntry {
                    slot: t,
                    ue: i,
                    server: serving[i],
                    frequency_hz: a.frequency,
                    power_w: a.power,
                    local_bits: a_l,
                    offload_bits: a_o,
                    served_cores: cores.iter().filter(|c| c[i] > 0.0).count(),
                });
            }
        }

        self.net.clock = self.net.clock.advance();
        let interval = self.opts.trajectory_interval;
        if interval > 0 && self.net.clock.slot().is_multiple_of(interval) {
            self.sample_virtual_queues();
        }
    }

    fn sample_virtual_queues(&mut self) {
        let mut max = [0.0f64; 9];
        let mut sum = [0.0f64; 9];
        let mut push = |k: usize, v: f64| {
            max[k] = max[k].max(v);
            sum[k] += v;
        };
        for ue in &self.net.ues {
            let q = &ue.queues;
            for (k, v) in [q.local_x, q.local_y, q.local_viol, q.offload_x, q.offload_y, q.offload_viol]
                .into_iter()
                .enumerate()
            {
                push(k, v);
            }
        }
        for s in &self.net.servers {
            for q in &s.queues {
                push(6, q.x);
                push(7, q.y);
                push(8, q.viol);
            }
        }
        let nu = self.net.num_ues() as f64;
        let pairs = nu * self.net.num_servers() as f64;
        let mut mean = sum;
        for (k, m) in mean.iter_mut().enumerate() {
            *m /= if k < 6 { nu } else { pairs };
        }
        self.virtual_queues.push(VirtualSample {
            slot: self.net.clock.slot(),
            max,
            mean,
        });
    }

    /// Runs to the configured horizon and collects the metrics.
    pub fn run(mut self) -> MetricsRecord {
        while self.net.clock.slot() < self.opts.horizon {
            self.step();
        }
        self.finish()
    }

    pub fn finish(self) -> MetricsRecord {
        let slots = self.net.clock.slot().max(1) as f64;
        let tau = self.net.config.slot_length;
        let noise = self.net.config.noise_power();
        let best = rss_association(&self.channel.mean_gains);

        let ues: Vec<UeMetrics> = self
            .net
            .ues
            .iter()
            .enumerate()
            .map(|(i, ue)| {
                let q = &ue.queues;
                let d = end_to_end_delay_estimate(
                    &self.local_trk[i],
                    &self.offload_trk[i],
                    &self.server_trk[i],
                    q.avg_local_arrival,
                    q.avg_offload_arrival,
                    tau,
                );
                let server = self.matching.as_ref().map(|m| m.server_of(i));
                let snr = ue.profile.power_budget * self.channel.mean_gains[i][server.unwrap_or(best[i])] / noise;
                let (q99_l, ml, sl) = tail_summary(&self.local_samples[i]);
                let (q99_o, mo, so) = tail_summary(&self.offload_samples[i]);
                let pc = self.compute_power[i] / slots;
                let pt = self.transmit_power[i] / slots;
                UeMetrics {
                    ue: i,
                    server,
                    association_snr_db: 10.0 * snr.log10(),
                    delay_s: d.total,
                    local_delay_s: d.local,
                    offload_delay_s: d.offload,
                    avg_local_arrival_bits: q.avg_local_arrival,
                    avg_offload_arrival_bits: q.avg_offload_arrival,
                    split_ratio: ratio(q.avg_offload_arrival, q.avg_local_arrival),
                    compute_power_w: pc,
                    transmit_power_w: pt,
                    total_power_w: pc + pt,
                    q99_local_bits: q99_l,
                    q99_offload_bits: q99_o,
                    local_exceedance_mean_bits: ml,
                    local_exceedance_std_bits: sl,
                    offload_exceedance_mean_bits: mo,
                    offload_exceedance_std_bits: so,
                    local_violation_freq: self.viol_local[i] as f64 / slots,
                    offload_violation_freq: self.viol_offload[i] as f64 / slots,
                    server_violation_freq: self.viol_server[i].iter().copied().max().unwrap_or(0) as f64 / slots,
                    final_local_bits: q.local,
                    final_offload_bits: q.offload,
                }
            })
            .collect();

        let n = ues.len() as f64;
        let mean_of = |f: fn(&UeMetrics) -> f64| ues.iter().map(f).sum::<f64>() / n;
        let max_of = |f: fn(&UeMetrics) -> f64| ues.iter().map(f).fold(0.0, f64::max);
        let pooled_l: Vec<f64> = self.local_samples.concat();
        let pooled_o: Vec<f64> = self.offload_samples.concat();
        let (q99_l, ml, sl) = tail_summary(&pooled_l);
        let (q99_o, mo, so) = tail_summary(&pooled_o);
        let sum_l: f64 = ues.iter().map(|u| u.avg_local_arrival_bits).sum();
        let sum_o: f64 = ues.iter().map(|u| u.avg_offload_arrival_bits).sum();
        let network = NetworkMetrics {
            avg_delay_s: mean_of(|u| u.delay_s),
            avg_compute_power_w: mean_of(|u| u.compute_power_w),
            avg_transmit_power_w: mean_of(|u| u.transmit_power_w),
            avg_total_power_w: mean_of(|u| u.total_power_w),
            split_ratio: ratio(sum_o, sum_l),
            q99_local_bits: q99_l,
            q99_offload_bits: q99_o,
            local_exceedance_mean_bits: ml,
            local_exceedance_std_bits: sl,
            offload_exceedance_mean_bits: mo,
            offload_exceedance_std_bits: so,
            max_local_violation_freq: max_of(|u| u.local_violation_freq),
            max_offload_violation_freq: max_of(|u| u.offload_violation_freq),
            max_server_violation_freq: max_of(|u| u.server_violation_freq),
            frames: self.frames.len(),
            converged_frames: self.frames.iter().filter(|f| f.converged).count(),
            total_swaps: self.frames.iter().map(|f| f.swaps).sum(),
        };
        MetricsRecord {
            policy: self.opts.policy,
            seed: self.net.config.rng_seed,
            horizon: self.net.clock.slot(),
            num_ues: self.net.num_ues(),
            num_servers: self.net.num_servers(),
            network,
            ues,
            frames: self.frames,
            virtual_queues: self.virtual_queues,
            offload_exceedances: self.exceedances,
            decisions: self.decisions,
        }
    }
}

pub fn run_simulation(net: NetworkState, opts: &SimulationOptions) -> MetricsRecord {
    Simulation::new(net, opts.clone()).run()
}

/// One point of a sweep. `None` keeps the base scenario's value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub arrival_rate_bps: Option<f64>,
    pub processing_density: Option<f64>,
    pub tradeoff_v: Option<f64>,
    pub num_ues: Option<usize>,
    pub policy: PolicyKind,
    pub seed: u64,
}

impl GridPoint {
    pub fn apply(&self, base: &Scenario) -> Scenario {
        let mut s = base.clone();
        if let Some(l) = self.arrival_rate_bps {
            s.ue.arrival_rate_bps = Some(l);
            s.ue_overrides.iter_mut().for_each(|o| o.arrival_rate_bps = None);
        }
        if let Some(d) = self.processing_density {
            s.ue.processing_density = Some(d);
            s.ue_overrides.iter_mut().for_each(|o| o.processing_density = None);
        }
        if let Some(v) = self.tradeoff_v {
            s.network.tradeoff_v = v;
        }
        if let Some(u) = self.num_ues {
            s.network.num_ues = u;
        }
        s.run.policy = self.policy;
        s.network.rng_seed = self.seed;
        s.sweep = None;
        s
    }
}

/// Cartesian product of the sweep axes, seeds varying fastest.
pub fn expand_grid(base: &Scenario, sweep: &SweepSection) -> Vec<GridPoint> {
    fn axis<T: Copy>(v: &[T]) -> Vec<Option<T>> {
        if v.is_empty() {
            vec![None]
        } else {
            v.iter().copied().map(Some).collect()
        }
    }
    let policies = if sweep.policies.is_empty() { vec![base.run.policy] } else { sweep.policies.clone() };
    let seeds = if sweep.seeds.is_empty() { vec![base.network.rng_seed] } else { sweep.seeds.clone() };
    let mut out = Vec::new();
    for &policy in &policies {
        for num_ues in axis(&sweep.num_ues) {
            for processing_density in axis(&sweep.processing_densities) {
                for arrival_rate_bps in axis(&sweep.arrival_rates_bps) {
                    for tradeoff_v in axis(&sweep.tradeoffs) {
                        for &seed in &seeds {
                            out.push(GridPoint {
                                arrival_rate_bps,
                                processing_density,
                                tradeoff_v,
                                num_ues,
                                policy,
                                seed,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub index: usize,
    pub point: GridPoint,
    pub record: MetricsRecord,
}

/// Runs every grid point; results come back in grid order regardless of `exec`.
pub fn sweep(base: &Scenario, grid: &SweepSection, exec: Execution) -> Result<Vec<SweepResult>, ConfigError> {
    let points = expand_grid(base, grid);
    let scenarios: Vec<Scenario> = points.iter().map(|p| p.apply(base)).collect();
    let nets = scenarios.iter().map(Scenario::build).collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(NetworkState, SimulationOptions)> =
        nets.into_iter().zip(&scenarios).map(|(n, s)| (n, s.options())).collect();
    let records = par::map(&jobs, exec, |(net, opts)| run_simulation(net.clone(), opts));
    Ok(records
        .into_iter()
        .zip(points)
        .enumerate()
        .map(|(index, (record, point))| SweepResult { index, point, record })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_network, NetworkConfig, ServerProfile, UeProfile};

    fn small(num_ues: usize, rate: f64, horizon: u64) -> NetworkState {
        let mut cfg = NetworkConfig::reference(num_ues);
        cfg.horizon = horizon;
        let ue = UeProfile { arrival_rate: rate, ..Default::default() };
        build_network(cfg, vec![ue; num_ues], vec![ServerProfile::default(); 4]).unwrap()
    }

    #[test]
    fn idle_network_stays_empty() {
        for policy in PolicyKind::ALL {
            let rec = run_simulation(small(5, 0.0, 300), &SimulationOptions::new(policy, 300));
            assert_eq!(rec.network.avg_total_power_w, 0.0, "{policy}");
            assert_eq!(rec.network.q99_local_bits, 0.0);
            assert_eq!(rec.network.q99_offload_bits, 0.0);
            assert_eq!(rec.network.avg_delay_s, 0.0);
            assert!(rec.virtual_queues.iter().all(|v| v.max.iter().all(|x| *x == 0.0)));
        }
    }

    #[test]
    fn overloaded_local_only_network_diverges() {
        let rate = 3.0 * UeProfile::default().sustainable_rate();
        let rec = run_simulation(small(2, rate, 2000), &SimulationOptions::new(PolicyKind::NoMec, 2000));
        for u in &rec.ues {
            // Backlog grows at roughly (lambda - lambda_sus) tau bits per slot.
            assert!(u.final_local_bits / 2000.0 > 0.5 * (rate - rate / 3.0) * 0.04);
            assert_eq!(u.final_offload_bits, 0.0);
        }
    }

    #[test]
    fn same_seed_same_record() {
        let opts = SimulationOptions::new(PolicyKind::Proposed, 400);
        let a = run_simulation(small(6, 150e3, 400), &opts);
        let b = run_simulation(small(6, 150e3, 400), &opts);
        assert_eq!(a, b);
    }

    #[test]
    fn policies_are_sandboxed() {
        let net = small(4, 150e3, 500);
        let mut sim = Simulation::new(net.clone(), SimulationOptions::new(PolicyKind::NoMec, 500));
        for _ in 0..500 {
            sim.step();
            assert!(sim.state().servers.iter().all(|s| s.queues.iter().all(|q| q.backlog == 0.0 && q.viol == 0.0)));
            assert!(sim.state().ues.iter().all(|u| u.queues.offload == 0.0));
        }
        let mut sim = Simulation::new(net, SimulationOptions::new(PolicyKind::FullOffload, 500));
        for _ in 0..500 {
            sim.step();
            assert!(sim.state().ues.iter().all(|u| u.queues.local == 0.0));
        }
        let rec = sim.finish();
        assert!(rec.ues.iter().all(|u| u.compute_power_w == 0.0));
    }

    #[test]
    fn arrivals_are_conserved() {
        let mut opts = SimulationOptions::new(PolicyKind::Proposed, 300);
        opts.decision_log_interval = 1;
        let a = run_simulation(small(4, 150e3, 300), &opts);
        let b = run_simulation(small(4, 150e3, 300), &SimulationOptions { policy: PolicyKind::NoMec, ..opts.clone() });
        let total = |r: &MetricsRecord| -> f64 { r.decisions.iter().map(|d| d.local_bits + d.offload_bits).sum() };
        // Common random numbers: every policy sees the same arrivals.
        assert_eq!(total(&a), total(&b));
        assert!(total(&a) > 0.0);
        assert!(a.decisions.iter().all(|d| d.local_bits == 0.0 || d.offload_bits == 0.0));
        assert!(b.decisions.iter().all(|d| d.offload_bits == 0.0));
    }

    #[test]
    fn tracker_matches_hand_trace() {
        // Backlog 4a, arrival a, service 2a per slot, ten slots.
        let (a, tau) = (1000.0, 0.04);
        let mut q = 4.0 * a;
        let mut trk = QueueTracker::default();
        for _ in 0..10 {
            let next = step_offload_queue(q, a, 2.0 * a);
            trk.record(next, q + a - next);
            q = next;
        }
        assert_eq!(trk.sum_len, 6.0 * a);
        assert_eq!(trk.departed, 14.0 * a);
        assert!((trk.delay(tau) - 3.0 * tau / 7.0).abs() < 1e-15);
    }

    #[test]
    fn delay_edge_cases() {
        let empty = QueueTracker::default();
        let d = end_to_end_delay_estimate(&empty, &empty, &empty, 0.0, 0.0, 0.04);
        assert_eq!(d.total, 0.0);
        let stuck = QueueTracker { sum_len: 5.0, samples: 1, departed: 0.0 };
        assert_eq!(stuck.delay(0.04), f64::INFINITY);
        // A path with no arrivals does not contaminate the mix.
        let d = end_to_end_delay_estimate(&empty, &stuck, &empty, 1.0, 0.0, 0.04);
        assert_eq!(d.total, 0.0);
    }

    #[test]
    fn saturated_servers_slow_the_offload_path() {
        let local = QueueTracker { sum_len: 100.0, samples: 10, departed: 100.0 };
        let offload = QueueTracker { sum_len: 100.0, samples: 10, departed: 100.0 };
        let server = QueueTracker { sum_len: 1e6, samples: 10, departed: 10.0 };
        let d = end_to_end_delay_estimate(&local, &offload, &server, 1.0, 1.0, 0.04);
        assert!(d.offload >= d.local);
    }

    #[test]
    fn tail_summary_definition() {
        let xs: Vec<f64> = (1..=200).map(f64::from).collect();
        let (q, m, s) = tail_summary(&xs);
        assert_eq!(q, 198.0);
        assert_eq!(m, 1.5);
        assert_eq!(s, 0.5);
        assert_eq!(tail_summary(&[]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn grid_expansion_and_single_point_sweep() {
        let mut base = Scenario::default();
        base.network.num_ues = 3;
        base.network.horizon_slots = 200;
        let grid = SweepSection { seeds: vec![4], ..Default::default() };
        let out = sweep(&base, &grid, Execution::Sequential).unwrap();
        assert_eq!(out.len(), 1);
        let mut direct = base.clone();
        direct.network.rng_seed = 4;
        assert_eq!(out[0].record, run_simulation(direct.build().unwrap(), &direct.options()));

        let grid = SweepSection {
            tradeoffs: vec![0.0, 1.0],
            arrival_rates_bps: vec![1e4, 2e4, 3e4],
            seeds: vec![1, 2],
            ..Default::default()
        };
        let points = expand_grid(&base, &grid);
        assert_eq!(points.len(), 12);
        assert_eq!(points[0].seed, 1);
        assert_eq!(points[1].seed, 2);
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().parse::<PolicyKind>().unwrap(), p);
        }
        assert_eq!("rss".parse::<PolicyKind>().unwrap(), PolicyKind::RssAssociation);
        assert!("bogus".parse::<PolicyKind>().is_err());
    }
}
