//! Frame-level UE-server association: a many-to-one matching game whose
//! utilities depend on co-associated UEs through interference.

use thiserror::Error;

/// Largest `S^U` the exhaustive search accepts.
pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchingError {
    #[error("{servers}^{ues} associations exceed the exhaustive-search limit")]
    TooLarge { ues: usize, servers: usize },
}

/// Total assignment of UEs to servers with its inverse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl Matching {
    pub fn new(assignment: Vec<usize>, num_servers: usize) -> Self {
        let mut members = vec![Vec::new(); num_servers];
        for (i, &j) in assignment.iter().enumerate() {
            members[j].push(i);
        }
        Matching { assignment, members }
    }

    pub fn server_of(&self, ue: usize) -> usize {
        self.assignment[ue]
    }

    pub fn members(&self, server: usize) -> &[usize] {
        &self.members[server]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn num_servers(&self) -> usize {
        self.members.len()
    }

    fn reassign(&mut self, ue: usize, to: usize) {
        let from = self.assignment[ue];
        self.members[from].retain(|&k| k != ue);
        let pos = self.members[to].partition_point(|&k| k < ue);
        self.members[to].insert(pos, ue);
        self.assignment[ue] = to;
    }
}

/// Everything the association game looks at.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingInputs {
    /// `E[h_ij]`, indexed `[ue][server]`.
    pub mean_gains: Vec<Vec<f64>>,
    /// Estimated offload weight per UE.
    pub ue_weights: Vec<f64>,
    /// Estimated per-UE queue weight per server.
    pub server_weights: Vec<f64>,
    pub power_budgets: Vec<f64>,
    pub noise_power: f64,
}

impl MatchingInputs {
    pub fn num_ues(&self) -> usize {
        self.mean_gains.len()
    }

    pub fn num_servers(&self) -> usize {
        self.server_weights.len()
    }

    fn received(&self, i: usize, j: usize) -> f64 {
        self.power_budgets[i] * self.mean_gains[i][j]
    }

    /// `(w_i - w_j) log2(1 + S_ij / (N0W + total_j - S_ij))`.
    fn utility_given_total(&self, i: usize, j: usize, total: f64) -> f64 {
        let s = self.received(i, j);
        let interference = (total - s).max(0.0);
        (self.ue_weights[i] - self.server_weights[j]) * (s / (self.noise_power + interference)).log2_1p()
    }

    fn totals(&self, m: &Matching) -> Vec<f64> {
        (0..m.num_servers())
            .map(|j| m.members(j).iter().map(|&i| self.received(i, j)).sum())
            .collect()
    }
}

trait Log2OnePlus {
    fn log2_1p(self) -> f64;
}

impl Log2OnePlus for f64 {
    fn log2_1p(self) -> f64 {
        self.ln_1p() / std::f64::consts::LN_2
    }
}

/// Highest mean gain per UE; ties go to the lower server index.
pub fn rss_association(mean_gains: &[Vec<f64>]) -> Vec<usize> {
    mean_gains
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &g)| if g > best.1 { (j, g) } else { best })
                .0
        })
        .collect()
}

/// Utility of UE `i` at its assigned server under `m`.
pub fn ue_utility(i: usize, m: &Matching, inputs: &MatchingInputs) -> f64 {
    let j = m.server_of(i);
    let total = m.members(j).iter().map(|&k| inputs.received(k, j)).sum();
    inputs.utility_given_total(i, j, total)
}

/// Sum of the utilities of the UEs assigned to `j`.
pub fn server_utility(j: usize, m: &Matching, inputs: &MatchingInputs) -> f64 {
    let total: f64 = m.members(j).iter().map(|&k| inputs.received(k, j)).sum();
    m.members(j)
        .iter()
        .map(|&k| inputs.utility_given_total(k, j, total))
        .sum()
}

/// Association objective: the sum of every UE's utility.
pub fn objective(m: &Matching, inputs: &MatchingInputs) -> f64 {
    (0..m.num_servers()).map(|j| server_utility(j, m, inputs)).sum()
}

/// A candidate deviation from the current matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Swap {
    /// UEs `a` and `b`, on different servers, trade places.
    Exchange { a: usize, b: usize },
    /// UE `ue` moves to an open spot of `to`.
    Move { ue: usize, to: usize },
}

/// Deterministic scan order: UE pairs lexicographically, then (UE, server) moves.
fn candidates(num_ues: usize, num_servers: usize) -> Vec<Swap> {
    let mut out = Vec::with_capacity(num_ues * num_ues / 2 + num_ues * num_servers);
    for a in 0..num_ues {
        for b in a + 1..num_ues {
            out.push(Swap::Exchange { a, b });
        }
    }
    for ue in 0..num_ues {
        for to in 0..num_servers {
            out.push(Swap::Move { ue, to });
        }
    }
    out
}

fn improves(before: f64, after: f64) -> (bool, bool) {
    let tol = 1e-12 * (1.0 + before.abs());
    let delta = after - before;
    (delta >= -tol, delta > tol)
}

/// Utility of the four (or three) affected parties before and after `swap`,
/// or `None` when the swap is not applicable.
fn swap_deltas(swap: Swap, m: &Matching, inputs: &MatchingInputs, totals: &[f64]) -> Option<Vec<(f64, f64)>> {
    let server_sum = |j: usize, total: f64, skip: usize, extra: Option<usize>| -> f64 {
        m.members(j)
            .iter()
            .filter(|&&k| k != skip)
            .chain(extra.as_ref())
            .map(|&k| inputs.utility_given_total(k, j, total))
            .sum()
    };
    match swap {
        Swap::Exchange { a, b } => {
            let (ja, jb) = (m.server_of(a), m.server_of(b));
            if ja == jb {
                return None;
            }
            let ta = totals[ja] - inputs.received(a, ja) + inputs.received(b, ja);
            let tb = totals[jb] - inputs.received(b, jb) + inputs.received(a, jb);
            Some(vec![
                (inputs.utility_given_total(a, ja, totals[ja]), inputs.utility_given_total(a, jb, tb)),
                (inputs.utility_given_total(b, jb, totals[jb]), inputs.utility_given_total(b, ja, ta)),
                (server_sum(ja, totals[ja], usize::MAX, None), server_sum(ja, ta, a, Some(b))),
                (server_sum(jb, totals[jb], usize::MAX, None), server_sum(jb, tb, b, Some(a))),
            ])
        }
        Swap::Move { ue, to } => {
            let from = m.server_of(ue);
            if from == to {
                return None;
            }
            let tf = totals[from] - inputs.received(ue, from);
            let tt = totals[to] + inputs.received(ue, to);
            Some(vec![
                (inputs.utility_given_total(ue, from, totals[from]), inputs.utility_given_total(ue, to, tt)),
                (server_sum(from, totals[from], usize::MAX, None), server_sum(from, tf, ue, None)),
                (server_sum(to, totals[to], usize::MAX, None), server_sum(to, tt, usize::MAX, Some(ue))),
            ])
        }
    }
}

fn is_blocking(swap: Swap, m: &Matching, inputs: &MatchingInputs, totals: &[f64]) -> bool {
    match swap_deltas(swap, m, inputs, totals) {
        None => false,
        Some(parties) => {
            let mut strict = false;
            for (before, after) in parties {
                let (weak, s) = improves(before, after);
                if !weak {
                    return false;
                }
                strict |= s;
            }
            strict
        }
    }
}

/// First swap-blocking pair in scan order, if any.
pub fn find_swap_blocking_pair(m: &Matching, inputs: &MatchingInputs) -> Option<Swap> {
    let totals = inputs.totals(m);
    candidates(inputs.num_ues(), inputs.num_servers())
        .into_iter()
        .find(|&s| is_blocking(s, m, inputs, &totals))
}

fn apply(swap: Swap, m: &mut Matching) {
    match swap {
        Swap::Exchange { a, b } => {
            let (ja, jb) = (m.server_of(a), m.server_of(b));
            m.reassign(a, jb);
            m.reassign(b, ja);
        }
        Swap::Move { ue, to } => m.reassign(ue, to),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingOutcome {
    pub matching: Matching,
    pub converged: bool,
    pub swaps: usize,
}

/// Swap iterations from the highest-mean-gain start until no blocking pair
/// remains or `50 U^2` swaps have been made.
pub fn run_matching(inputs: &MatchingInputs) -> MatchingOutcome {
    let start = Matching::new(rss_association(&inputs.mean_gains), inputs.num_servers());
    run_matching_from(start, inputs)
}

pub fn run_matching_from(mut m: Matching, inputs: &MatchingInputs) -> MatchingOutcome {
    let u = inputs.num_ues();
    let cap = 50 * u * u;
    let cands = candidates(u, inputs.num_servers());
    let mut totals = inputs.totals(&m);
    let mut swaps = 0;
    let mut idle = 0;
    let mut k = 0;
    while idle < cands.len() {
        let s = cands[k];
        if is_blocking(s, &m, inputs, &totals) {
            if swaps == cap {
                return MatchingOutcome { matching: m, converged: false, swaps };
            }
            apply(s, &mut m);
            totals = inputs.totals(&m);
            swaps += 1;
            idle = 0;
        } else {
            idle += 1;
        }
        k = (k + 1) % cands.len();
    }
    MatchingOutcome { matching: m, converged: true, swaps }
}

/// Global maximizer of the association objective by enumerating all `S^U`
/// assignments; the first maximizer in odometer order wins ties.
pub fn brute_force_association(inputs: &MatchingInputs) -> Result<(Matching, f64), MatchingError> {
    let (u, s) = (inputs.num_ues(), inputs.num_servers());
    if (s as f64).powi(u as i32) > BRUTE_FORCE_LIMIT {
        return Err(MatchingError::TooLarge { ues: u, servers: s });
    }
    let mut assign = vec![0usize; u];
    let mut totals = vec![0.0; s];
    let mut best = (assign.clone(), f64::NEG_INFINITY);
    loop {
        totals.iter_mut().for_each(|t| *t = 0.0);
        for (i, &j) in assign.iter().enumerate() {
            totals[j] += inputs.received(i, j);
        }
        let value: f64 = assign
            .iter()
            .enumerate()
            .map(|(i, &j)| inputs.utility_given_total(i, j, totals[j]))
            .sum();
        if value > best.1 {
            best = (assign.clone(), value);
        }
        // Odometer increment.
        let mut pos = 0;
        loop {
            if pos == u {
                return Ok((Matching::new(best.0, s), best.1));
            }
            assign[pos] += 1;
            if assign[pos] < s {
                break;
            }
            assign[pos] = 0;
            pos += 1;
        }
    }
}

/// Running estimates of the offload and per-server weights over past frames.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightEstimator {
    ue_sums: Vec<f64>,
    server_sums: Vec<f64>,
    slots: u64,
}

impl WeightEstimator {
    pub fn new(num_ues: usize, num_servers: usize) -> Self {
        WeightEstimator {
            ue_sums: vec![0.0; num_ues],
            server_sums: vec![0.0; num_servers],
            slots: 0,
        }
    }

    /// Adds one slot. `server_weights[j][i]` is `beta_ji`; each server
    /// contributes the mean over the UEs associated with it that frame, and
    /// nothing when it had none.
    pub fn record(&mut self, offload_weights: &[f64], server_weights: &[Vec<f64>], m: &Matching) {
        for (s, b) in self.ue_sums.iter_mut().zip(offload_weights) {
            *s += b;
        }
        for (j, sum) in self.server_sums.iter_mut().enumerate() {
            let members = m.members(j);
            if !members.is_empty() {
                *sum += members.iter().map(|&i| server_weights[j][i]).sum::<f64>() / members.len() as f64;
            }
        }
        self.slots += 1;
    }

    /// `(per-UE, per-server)` estimates; all zero before any slot is recorded.
    pub fn estimates(&self) -> (Vec<f64>, Vec<f64>) {
        if self.slots == 0 {
            return (vec![0.0; self.ue_sums.len()], vec![0.0; self.server_sums.len()]);
        }
        let n = self.slots as f64;
        (
            self.ue_sums.iter().map(|s| s / n).collect(),
            self.server_sums.iter().map(|s| s / n).collect(),
        )
    }
}
