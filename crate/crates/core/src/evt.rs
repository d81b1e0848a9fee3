//! Generalized Pareto tails: closed forms, sampling and peaks-over-threshold fitting.

use rand::Rng;
use thiserror::Error;

/// Fewest exceedances a fit will accept.
pub const MIN_FIT_SAMPLES: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvtError {
    #[error("scale must be positive, got {0}")]
    InvalidScale(f64),
    #[error("{0} is outside the GPD support")]
    OutsideSupport(f64),
    #[error("{moment} undefined for shape {shape}")]
    MomentUndefined { moment: &'static str, shape: f64 },
    #[error("shape threshold {0} must satisfy xi < 1/2")]
    ShapeThreshold(f64),
    #[error("need at least {MIN_FIT_SAMPLES} exceedances, got {0}")]
    InsufficientData(usize),
    #[error("degenerate sample: {0}")]
    Degenerate(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gpd {
    pub scale: f64,
    pub shape: f64,
}

impl Gpd {
    pub fn new(scale: f64, shape: f64) -> Result<Self, EvtError> {
        if !(scale > 0.0) || !scale.is_finite() || !shape.is_finite() {
            return Err(EvtError::InvalidScale(scale));
        }
        Ok(Gpd { scale, shape })
    }

    /// Right end of the support; infinite for nonnegative shape.
    pub fn upper_endpoint(&self) -> f64 {
        if self.shape < 0.0 {
            -self.scale / self.shape
        } else {
            f64::INFINITY
        }
    }

    /// `(1 + xi x / sigma)^(-1/xi)`, or `exp(-x / sigma)` at `xi = 0`.
    /// Beyond the finite endpoint of a negative shape the result is 0.
    pub fn ccdf(&self, x: f64) -> Result<f64, EvtError> {
        if !(x >= 0.0) {
            return Err(EvtError::OutsideSupport(x));
        }
        Ok(self.ccdf_unchecked(x))
    }

    fn ccdf_unchecked(&self, x: f64) -> f64 {
        if x >= self.upper_endpoint() {
            return 0.0;
        }
        let z = x / self.scale;
        if self.shape == 0.0 {
            (-z).exp()
        } else {
            (-(self.shape * z).ln_1p() / self.shape).exp()
        }
    }

    pub fn mean(&self) -> Result<f64, EvtError> {
        if self.shape < 1.0 {
            Ok(self.scale / (1.0 - self.shape))
        } else {
            Err(EvtError::MomentUndefined { moment: "mean", shape: self.shape })
        }
    }

    pub fn variance(&self) -> Result<f64, EvtError> {
        if self.shape < 0.5 {
            let a = 1.0 - self.shape;
            Ok(self.scale * self.scale / (a * a * (1.0 - 2.0 * self.shape)))
        } else {
            Err(EvtError::MomentUndefined { moment: "variance", shape: self.shape })
        }
    }

    pub fn mean_var(&self) -> Result<(f64, f64), EvtError> {
        Ok((self.mean()?, self.variance()?))
    }

    /// Inverse transform with `u` uniform on `(0, 1]`.
    pub fn quantile_of_survival(&self, u: f64) -> f64 {
        if self.shape == 0.0 {
            -self.scale * u.ln()
        } else {
            self.scale * ((-self.shape * u.ln()).exp_m1() / self.shape)
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = 1.0 - rng.random::<f64>();
        self.quantile_of_survival(u)
    }
}

/// Drain rates of the mean and second-moment virtual queues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailTargets {
    pub mean: f64,
    pub second_moment: f64,
}

/// `sigma / (1 - xi)` and `2 sigma^2 / ((1 - xi)(1 - 2 xi))`.
pub fn constraint_targets(scale: f64, shape: f64) -> Result<TailTargets, EvtError> {
    if !(shape < 0.5) {
        return Err(EvtError::ShapeThreshold(shape));
    }
    if !(scale > 0.0) {
        return Err(EvtError::InvalidScale(scale));
    }
    Ok(TailTargets {
        mean: scale / (1.0 - shape),
        second_moment: 2.0 * scale * scale / ((1.0 - shape) * (1.0 - 2.0 * shape)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpdFit {
    pub gpd: Gpd,
    pub threshold: f64,
    pub exceedance_count: usize,
    pub ks_statistic: f64,
}

/// `Q - d` for every `Q > d`.
pub fn peaks_over_threshold(values: &[f64], threshold: f64) -> Vec<f64> {
    values
        .iter()
        .filter(|&&v| v > threshold)
        .map(|&v| v - threshold)
        .collect()
}

/// Probability-weighted-moment fit of exceedances over `threshold`.
pub fn fit_gpd_pot(exceedances: &[f64], threshold: f64) -> Result<GpdFit, EvtError> {
    let n = exceedances.len();
    if n < MIN_FIT_SAMPLES {
        return Err(EvtError::InsufficientData(n));
    }
    if exceedances.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(EvtError::Degenerate("exceedances must be finite and nonnegative"));
    }
    let mut sorted = exceedances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let m0 = sorted.iter().sum::<f64>() / nf;
    let m1 = sorted
        .iter()
        .enumerate()
        .map(|(k, x)| x * (nf - (k + 1) as f64) / (nf - 1.0))
        .sum::<f64>()
        / nf;
    let denom = m0 - 2.0 * m1;
    if !(denom > f64::EPSILON * m0.abs().max(f64::MIN_POSITIVE)) {
        return Err(EvtError::Degenerate("zero spread"));
    }
    let gpd = Gpd::new(2.0 * m0 * m1 / denom, 2.0 - m0 / denom)
        .map_err(|_| EvtError::Degenerate("nonpositive fitted scale"))?;
    Ok(GpdFit {
        gpd,
        threshold,
        exceedance_count: n,
        ks_statistic: ks_sorted(&sorted, &gpd),
    })
}

/// Kolmogorov-Smirnov distance between the sample and `gpd`.
pub fn ks_statistic(samples: &[f64], gpd: &Gpd) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    ks_sorted(&sorted, gpd)
}

fn ks_sorted(sorted: &[f64], gpd: &Gpd) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let cdf = 1.0 - gpd.ccdf_unchecked(x.max(0.0));
            let below = k as f64 / n;
            let at = (k + 1) as f64 / n;
            (cdf - below).abs().max((at - cdf).abs())
        })
        .fold(0.0, f64::max)
}

/// One value per line.
pub fn write_trace(samples: &[f64]) -> String {
    samples.iter().map(|x| format!("{x:?}\n")).collect()
}

/// Inverse of [`write_trace`]; blank lines and `#` comments are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<f64>, String> {
    text.lines()
        .enumerate()
        .map(|(n, l)| (n, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(n, l)| {
            l.parse::<f64>()
                .map_err(|e| format!("line {}: `{l}`: {e}", n + 1))
        })
        .collect()
}
