//! Physical and virtual queue recursions, excess values, moving averages and
//! the drift-plus-penalty weights.

use std::fmt::Write as _;

use thiserror::Error;

use crate::evt::TailTargets;

/// Queues owned by one UE. Lengths in bits, second-moment queues in bits^2,
/// violation queues dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UeQueues {
    pub local: f64,
    pub offload: f64,
    pub local_x: f64,
    pub local_y: f64,
    pub offload_x: f64,
    pub offload_y: f64,
    pub local_viol: f64,
    pub offload_viol: f64,
    /// Running mean of the locally kept arrivals.
    pub avg_local_arrival: f64,
    /// Running mean of the offloaded arrivals.
    pub avg_offload_arrival: f64,
}

/// Queues a server keeps for one UE.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ServerQueues {
    /// Offloaded bits awaiting a core, `Z_ji`.
    pub backlog: f64,
    pub x: f64,
    pub y: f64,
    pub viol: f64,
    /// Running mean of the UE's rate towards this server, bits/s.
    pub avg_rate: f64,
}

/// Per-slot weights of one UE: local, offload and one per server.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BetaWeights {
    pub local: f64,
    pub offload: f64,
    pub server: Vec<f64>,
}

pub fn step_local_queue(q: f64, arrival: f64, frequency: f64, tau: f64, density: f64) -> f64 {
    (q + arrival - tau * frequency / density).max(0.0)
}

/// `served` is the bits the uplink can carry this slot, `tau * sum_j R_ij`.
pub fn step_offload_queue(q: f64, arrival: f64, served: f64) -> f64 {
    (q + arrival - served).max(0.0)
}

/// The server receives at most what the UE actually holds: `min(Q^O + A^O, tau R)`.
pub fn step_server_queue(z: f64, pending: f64, transmitted: f64, service: f64) -> f64 {
    (z + pending.min(transmitted) - service).max(0.0)
}

/// The looser recursion that ignores the UE-side cap on arrivals.
pub fn step_server_queue_bound(z: f64, transmitted: f64, service: f64) -> f64 {
    (z + transmitted - service).max(0.0)
}

/// `Q - d` when the queue strictly exceeds its bound.
pub fn excess(q: f64, threshold: f64) -> Option<f64> {
    (q > threshold).then_some(q - threshold)
}

/// Mean and second-moment virtual queues. Unchanged when there is no exceedance.
pub fn step_tail_queues(x_queue: f64, y_queue: f64, excess: Option<f64>, targets: TailTargets) -> (f64, f64) {
    match excess {
        Some(x) => (
            (x_queue + x - targets.mean).max(0.0),
            (y_queue + x * x - targets.second_moment).max(0.0),
        ),
        None => (x_queue, y_queue),
    }
}

pub fn step_violation_queue(q: f64, exceeded: bool, tolerance: f64) -> f64 {
    (q + if exceeded { 1.0 } else { 0.0 } - tolerance).max(0.0)
}

/// `(Q^X + 2 Q^Y Q + 2 Q^3 + Q) 1{active} + Q^viol + Q`.
pub fn beta(q: f64, x_queue: f64, y_queue: f64, viol_queue: f64, active: bool) -> f64 {
    let tail = if active {
        x_queue + 2.0 * y_queue * q + 2.0 * q * q * q + q
    } else {
        0.0
    };
    tail + viol_queue + q
}

/// Cumulative mean after `t` earlier samples: `(t m + x) / (t + 1)`.
pub fn moving_average(mean: f64, sample: f64, t: u64) -> f64 {
    let t = t as f64;
    (t * mean + sample) / (t + 1.0)
}

/// What one UE's virtual queues see at the end of a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeTailInputs {
    pub local_excess: Option<f64>,
    pub offload_excess: Option<f64>,
    pub local_targets: TailTargets,
    pub offload_targets: TailTargets,
    pub local_tolerance: f64,
    pub offload_tolerance: f64,
}

impl UeQueues {
    /// `beta^L` with its indicator on `Q^L + A > d^L`.
    pub fn beta_local(&self, arrival: f64, threshold: f64) -> f64 {
        beta(
            self.local,
            self.local_x,
            self.local_y,
            self.local_viol,
            self.local + arrival > threshold,
        )
    }

    pub fn beta_offload(&self, arrival: f64, threshold: f64) -> f64 {
        beta(
            self.offload,
            self.offload_x,
            self.offload_y,
            self.offload_viol,
            self.offload + arrival > threshold,
        )
    }

    pub fn step_virtual(&mut self, inp: &UeTailInputs) {
        (self.local_x, self.local_y) =
            step_tail_queues(self.local_x, self.local_y, inp.local_excess, inp.local_targets);
        (self.offload_x, self.offload_y) =
            step_tail_queues(self.offload_x, self.offload_y, inp.offload_excess, inp.offload_targets);
        self.local_viol =
            step_violation_queue(self.local_viol, inp.local_excess.is_some(), inp.local_tolerance);
        self.offload_viol = step_violation_queue(
            self.offload_viol,
            inp.offload_excess.is_some(),
            inp.offload_tolerance,
        );
    }

    pub fn is_nonnegative(&self) -> bool {
        self.as_array().iter().all(|v| *v >= 0.0)
    }

    fn as_array(&self) -> [f64; 10] {
        [
            self.local,
            self.offload,
            self.local_x,
            self.local_y,
            self.offload_x,
            self.offload_y,
            self.local_viol,
            self.offload_viol,
            self.avg_local_arrival,
            self.avg_offload_arrival,
        ]
    }
}

impl ServerQueues {
    /// `beta_ji` with its indicator on `Z + tau R^max > R~(t-1) d_ji`.
    pub fn beta(&self, max_transmit: f64, threshold: f64) -> f64 {
        beta(self.backlog, self.x, self.y, self.viol, self.backlog + max_transmit > threshold)
    }

    pub fn step_virtual(&mut self, excess: Option<f64>, targets: TailTargets, tolerance: f64) {
        (self.x, self.y) = step_tail_queues(self.x, self.y, excess, targets);
        self.viol = step_violation_queue(self.viol, excess.is_some(), tolerance);
    }

    pub fn is_nonnegative(&self) -> bool {
        self.as_array().iter().all(|v| *v >= 0.0)
    }

    fn as_array(&self) -> [f64; 5] {
        [self.backlog, self.x, self.y, self.viol, self.avg_rate]
    }
}

const UE_KEYS: [&str; 10] = [
    "local",
    "offload",
    "local_x",
    "local_y",
    "offload_x",
    "offload_y",
    "local_viol",
    "offload_viol",
    "avg_local_arrival",
    "avg_offload_arrival",
];
const SERVER_KEYS: [&str; 5] = ["backlog", "x", "y", "viol", "avg_rate"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SnapshotError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Every queue value at one slot. The text form round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueSnapshot {
    pub slot: u64,
    pub ues: Vec<UeQueues>,
    /// `servers[j][i]`.
    pub servers: Vec<Vec<ServerQueues>>,
}

impl QueueSnapshot {
    pub fn to_text(&self) -> String {
        let mut s = format!("slot {}\n", self.slot);
        for (i, q) in self.ues.iter().enumerate() {
            let _ = write!(s, "ue {i}");
            for (k, v) in UE_KEYS.iter().zip(q.as_array()) {
                let _ = write!(s, " {k}={v:?}");
            }
            s.push('\n');
        }
        for (j, row) in self.servers.iter().enumerate() {
            for (i, q) in row.iter().enumerate() {
                let _ = write!(s, "server {j} {i}");
                for (k, v) in SERVER_KEYS.iter().zip(q.as_array()) {
                    let _ = write!(s, " {k}={v:?}");
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, SnapshotError> {
        let mut snap = QueueSnapshot {
            slot: 0,
            ues: Vec::new(),
            servers: Vec::new(),
        };
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let err = |reason: String| SnapshotError::Parse { line, reason };
            let mut words = raw.split_whitespace();
            match words.next() {
                None => continue,
                Some("slot") => {
                    snap.slot = parse_word(words.next(), line)?;
                }
                Some("ue") => {
                    let i: usize = parse_word(words.next(), line)?;
                    if i != snap.ues.len() {
                        return Err(err(format!("ue {i} out of order")));
                    }
                    let v: [f64; 10] = parse_fields(&mut words, &UE_KEYS, line)?;
                    snap.ues.push(UeQueues {
                        local: v[0],
                        offload: v[1],
                        local_x: v[2],
                        local_y: v[3],
                        offload_x: v[4],
                        offload_y: v[5],
                        local_viol: v[6],
                        offload_viol: v[7],
                        avg_local_arrival: v[8],
                        avg_offload_arrival: v[9],
                    });
                }
                Some("server") => {
                    let j: usize = parse_word(words.next(), line)?;
                    let i: usize = parse_word(words.next(), line)?;
                    if j == snap.servers.len() {
                        snap.servers.push(Vec::new());
                    }
                    if j + 1 != snap.servers.len() || i != snap.servers[j].len() {
                        return Err(err(format!("server {j} ue {i} out of order")));
                    }
                    let v: [f64; 5] = parse_fields(&mut words, &SERVER_KEYS, line)?;
                    snap.servers[j].push(ServerQueues {
                        backlog: v[0],
                        x: v[1],
                        y: v[2],
                        viol: v[3],
                        avg_rate: v[4],
                    });
                }
                Some(other) => return Err(err(format!("unknown record `{other}`"))),
            }
        }
        Ok(snap)
    }
}

fn parse_word<T: std::str::FromStr>(word: Option<&str>, line: usize) -> Result<T, SnapshotError> {
    word.and_then(|w| w.parse().ok()).ok_or_else(|| SnapshotError::Parse {
        line,
        reason: format!("expected a number, found {word:?}"),
    })
}

fn parse_fields<'a, const N: usize>(
    words: &mut impl Iterator<Item = &'a str>,
    keys: &[&str; N],
    line: usize,
) -> Result<[f64; N], SnapshotError> {
    let mut out = [0.0; N];
    for (slot, key) in out.iter_mut().zip(keys) {
        let word = words.next().unwrap_or_default();
        let value = word
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .and_then(|v| v.parse::<f64>().ok());
        *slot = value.ok_or_else(|| SnapshotError::Parse {
            line,
            reason: format!("expected `{key}=<value>`, found `{word}`"),
        })?;
    }
    Ok(out)
}
