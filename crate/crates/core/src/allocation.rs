//! Per-slot decisions: the UE's frequency/power solve, the task split and the
//! server core schedule.

use std::f64::consts::LN_2;

/// Interference support as `(value in W, probability)` pairs.
pub type Support = [(f64, f64)];

/// Physical constants of one UE's per-slot problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeParams {
    pub slot_length: f64,
    pub processing_density: f64,
    pub kappa: f64,
    pub power_budget: f64,
    pub bandwidth: f64,
    pub noise_power: f64,
    pub tradeoff_v: f64,
}

impl UeParams {
    pub fn max_frequency(&self) -> f64 {
        (self.power_budget / self.kappa).cbrt()
    }
}

/// Weights and channel seen by one UE in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeWeights {
    pub local: f64,
    pub offload: f64,
    /// Weight of this UE's queue at its serving server.
    pub server: f64,
    /// Current gain towards the serving server.
    pub gain: f64,
}

impl UeWeights {
    /// Net value of one offloaded bit, `beta^O - beta_j*i`.
    pub fn offload_value(&self) -> f64 {
        self.offload - self.server
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UeAllocation {
    pub frequency: f64,
    pub power: f64,
    /// Multiplier of the power budget.
    pub gamma: f64,
    /// Multiplier of `f >= 0`.
    pub alpha1: f64,
    /// Multiplier of `P >= 0`.
    pub alpha2: f64,
}

impl UeAllocation {
    pub fn consumed_power(&self, kappa: f64) -> f64 {
        kappa * self.frequency.powi(3) + self.power
    }
}

/// `E_I[w tau W h / ((N0W + I + P h) ln 2)]`: marginal value of transmit power.
pub fn marginal_rate_value(
    power: f64,
    support: &Support,
    gain: f64,
    offload_value: f64,
    params: &UeParams,
) -> f64 {
    let scale = offload_value * params.slot_length * params.bandwidth * gain / LN_2;
    support
        .iter()
        .map(|&(i, p)| p * scale / (params.noise_power + i + power * gain))
        .sum()
}

fn marginal_slope(power: f64, support: &Support, gain: f64, offload_value: f64, params: &UeParams) -> f64 {
    let scale = offload_value * params.slot_length * params.bandwidth * gain * gain / LN_2;
    -support
        .iter()
        .map(|&(i, p)| {
            let d = params.noise_power + i + power * gain;
            p * scale / (d * d)
        })
        .sum::<f64>()
}

/// Per-slot objective the UE minimizes:
/// `V (kappa f^3 + P) - beta^L tau f / L - E[(beta^O - beta_j*i) tau W log2(1 + P h / (N0W + I))]`.
pub fn ue_objective(frequency: f64, power: f64, w: &UeWeights, support: &Support, params: &UeParams) -> f64 {
    let rate_value: f64 = support
        .iter()
        .map(|&(i, p)| p * (power * w.gain / (params.noise_power + i)).ln_1p())
        .sum::<f64>()
        * w.offload_value()
        * params.slot_length
        * params.bandwidth
        / LN_2;
    params.tradeoff_v * (params.kappa * frequency.powi(3) + power)
        - w.local * params.slot_length * frequency / params.processing_density
        - rate_value
}

/// `f(gamma) = sqrt(beta^L tau / (3 L kappa (V + gamma)))`.
fn frequency_at_price(price: f64, local: f64, params: &UeParams) -> f64 {
    if local <= 0.0 {
        0.0
    } else {
        (local * params.slot_length / (3.0 * params.processing_density * params.kappa * price)).sqrt()
    }
}

/// Root of an increasing `g` on `[lo, hi]` with `g(lo) <= 0 <= g(hi)`, using
/// Newton steps that fall back to bisection. Returns the end with `g <= 0`.
fn increasing_root(mut lo: f64, mut hi: f64, g: impl Fn(f64) -> (f64, f64)) -> f64 {
    let mut x = lo;
    for _ in 0..200 {
        let (v, slope) = g(x);
        if v == 0.0 {
            return x;
        }
        if v < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        let newton = x - v / slope;
        x = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    lo
}

/// Exact solve of the UE's per-slot convex problem.
///
/// When the budget binds, the solve parametrises the boundary by `P`: the
/// power stationarity condition pins `gamma = m(P) - V`, which in turn pins
/// `f`, and the budget residual is monotone in `P`.
pub fn solve_ue_allocation(w: &UeWeights, support: &Support, params: &UeParams) -> UeAllocation {
    let v = params.tradeoff_v;
    let pmax = params.power_budget;
    let fmax = params.max_frequency();
    let value = w.offload_value();
    let m = |p: f64| {
        if value > 0.0 {
            marginal_rate_value(p, support, w.gain, value, params)
        } else {
            0.0
        }
    };
    let m0 = m(0.0);

    if w.local <= 0.0 && (value <= 0.0 || m0 <= v) {
        return UeAllocation {
            alpha2: (v - m0).max(0.0),
            ..Default::default()
        };
    }

    // Unconstrained point (gamma = 0); needs V > 0 to be finite.
    if v > 0.0 {
        let f = frequency_at_price(v, w.local, params);
        let p = if m0 <= v {
            Some(0.0)
        } else if m(pmax) >= v {
            None
        } else {
            Some(increasing_root(0.0, pmax, |p| {
                (v - m(p), -marginal_slope(p, support, w.gain, value, params))
            }))
        };
        if let Some(p) = p {
            if params.kappa * f.powi(3) + p <= pmax {
                return UeAllocation {
                    frequency: f,
                    power: p,
                    gamma: 0.0,
                    alpha1: 0.0,
                    alpha2: if p == 0.0 { v - m0 } else { 0.0 },
                };
            }
        }
    }

    // Budget binds.
    if w.local <= 0.0 {
        return UeAllocation {
            frequency: 0.0,
            power: pmax,
            gamma: (m(pmax) - v).max(0.0),
            ..Default::default()
        };
    }
    let gamma_cpu_only = w.local * params.slot_length / (3.0 * params.processing_density * params.kappa * fmax * fmax) - v;
    if value <= 0.0 || m0 <= v + gamma_cpu_only {
        return UeAllocation {
            frequency: fmax,
            power: 0.0,
            gamma: gamma_cpu_only.max(0.0),
            alpha1: 0.0,
            alpha2: v + gamma_cpu_only - m0,
        };
    }
    let c = w.local * params.slot_length / (3.0 * params.processing_density * params.kappa);
    let p = increasing_root(0.0, pmax, |p| {
        let mp = m(p);
        let f = (c / mp).sqrt();
        let g = params.kappa * f.powi(3) + p - pmax;
        let dm = marginal_slope(p, support, w.gain, value, params);
        // d/dP kappa (c/m)^{3/2} = -1.5 kappa c^{3/2} m^{-5/2} m'
        let slope = 1.0 - 1.5 * params.kappa * c.powf(1.5) * mp.powf(-2.5) * dm;
        (g, slope)
    });
    let gamma = (m(p) - v).max(0.0);
    let frequency = (c / (v + gamma)).sqrt().min(fmax);
    // kappa f^3 can sit below one ulp of P; keep f on its stationarity curve
    // and give the rounding to P instead.
    let power = p.min(pmax - params.kappa * frequency.powi(3)).max(0.0);
    UeAllocation {
        frequency,
        power,
        gamma,
        alpha1: 0.0,
        alpha2: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TaskSplit {
    pub local: u64,
    pub offload: u64,
}

/// Whole arrival to the lighter-weighted queue; ties stay local. Counts are in
/// unit tasks so that both parts remain multiples of the unit size.
pub fn split_tasks(units: u64, beta_local: f64, beta_offload: f64) -> TaskSplit {
    if beta_local <= beta_offload {
        TaskSplit { local: units, offload: 0 }
    } else {
        TaskSplit { local: 0, offload: units }
    }
}

/// Per-UE core speed a server grants this slot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoreSchedule {
    pub frequencies: Vec<f64>,
}

impl CoreSchedule {
    pub fn served(&self) -> impl Iterator<Item = usize> + '_ {
        self.frequencies
            .iter()
            .enumerate()
            .filter(|(_, f)| **f > 0.0)
            .map(|(i, _)| i)
    }
}

/// Dedicates one core to each of the (at most `cores`) UEs with the largest
/// positive `beta_ji / L_i`; equal ratios go to the lower index.
pub fn schedule_cores(weights: &[f64], densities: &[f64], cores: usize, core_speed: f64) -> CoreSchedule {
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (weights[a] / densities[a], weights[b] / densities[b]);
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut frequencies = vec![0.0; weights.len()];
    for &i in order.iter().take(cores) {
        frequencies[i] = core_speed;
    }
    CoreSchedule { frequencies }
}
