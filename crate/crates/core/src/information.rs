//! Closed-form mutual information of the k-subset channel under a uniform
//! prior, the optimal subset size, and the binary randomized response series.
//!
//! Everything is in nats.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{ln_add_exp, ln_binomial, CompensatedSum};
use crate::params::PrivacyParams;

/// Above this ε, `e^ε - 1` is replaced by forms in `e^-ε` to avoid overflow.
const LARGE_EPS: f64 = 30.0;

/// A subset size picked from the floor/ceil bracket of a continuous optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubsetSizeChoice {
    /// Continuous optimizer the bracket was taken around.
    pub beta: f64,
    /// Selected size in `[1, d - 1]`.
    pub k: usize,
    /// Objective at `k` (mutual information or squared ℓ₂ error).
    pub objective_value: f64,
}

/// Candidate sizes `{floor(x), ceil(x)}` clamped to `[1, d - 1]`, ascending, deduplicated.
pub(crate) fn bracket(x: f64, d: usize) -> Vec<usize> {
    let clamp = |v: f64| -> usize {
        let v = if v.is_finite() { v } else { 1.0 };
        (v.max(1.0) as usize).clamp(1, d - 1)
    };
    let lo = clamp(x.floor());
    let hi = clamp(x.ceil());
    if lo == hi {
        vec![lo]
    } else {
        vec![lo, hi]
    }
}

/// `I_k` for real-valued `k` in `[0, d]`.
///
/// Uses the rearrangement `I_k = ε·k·e^ε / (k·e^ε + d - k) - ln(1 + k(e^ε - 1)/d)`.
pub(crate) fn mutual_info_continuous(d: f64, epsilon: f64, k: f64) -> f64 {
    if k <= 0.0 {
        return 0.0;
    }
    let (weight, log_term) = if epsilon <= LARGE_EPS {
        let em1 = epsilon.exp_m1();
        let den = d + k * em1;
        (k * (em1 + 1.0) / den, (k * em1 / d).ln_1p())
    } else {
        let inv = (-epsilon).exp();
        let weight = k / (k + (d - k) * inv);
        let log_term = epsilon + (k / d).ln() + ((d - k) * inv / k).ln_1p();
        (weight, log_term)
    };
    (epsilon * weight - log_term).max(0.0)
}

/// Mutual information `I_k` between a uniform secret and the k-subset view.
pub fn mutual_info_ik(params: &PrivacyParams, k: usize) -> Result<f64> {
    if k > params.d() {
        return Err(Error::SubsetSizeOutOfRange {
            k,
            min: 0,
            max: params.d(),
        });
    }
    if k == 0 || k == params.d() {
        return Ok(0.0);
    }
    Ok(mutual_info_continuous(
        params.d() as f64,
        params.epsilon(),
        k as f64,
    ))
}

/// The unique stationary point of the continuous `I_k`:
/// `β = (ε·e^ε - e^ε + 1)·d / (e^ε - 1)²`.
pub fn beta_optimal(params: &PrivacyParams) -> f64 {
    let eps = params.epsilon();
    let d = params.d() as f64;
    if eps <= LARGE_EPS {
        let em1 = eps.exp_m1();
        // ε·e^ε - e^ε + 1 = ε·(e^ε - 1) - (e^ε - 1 - ε), the second factor
        // taken from expm1 directly so small ε keeps full precision.
        let numerator = eps * em1 - (em1 - eps);
        numerator * d / (em1 * em1)
    } else {
        let inv = (-eps).exp();
        d * (eps - 1.0 + inv) * inv / ((1.0 - inv) * (1.0 - inv))
    }
}

/// The mutual-information-optimal subset size.
///
/// Evaluates `I_k` on `{floor(β), ceil(β)}` clamped to `[1, d - 1]` and keeps
/// the larger; ties go to the smaller `k`.
pub fn kstar(params: &PrivacyParams) -> SubsetSizeChoice {
    let beta = beta_optimal(params);
    let d = params.d() as f64;
    let mut best: Option<(usize, f64)> = None;
    for k in bracket(beta, params.d()) {
        let value = mutual_info_continuous(d, params.epsilon(), k as f64);
        if best.map_or(true, |(_, v)| value > v) {
            best = Some((k, value));
        }
    }
    let (k, objective_value) = best.expect("bracket is never empty");
    SubsetSizeChoice {
        beta,
        k,
        objective_value,
    }
}

/// `I_{k*}`: the largest mutual information any ε-LDP channel attains on `d`
/// uniformly distributed symbols.
pub fn max_mutual_info(params: &PrivacyParams) -> f64 {
    kstar(params).objective_value
}

/// `I_β`, the continuous relaxation at the stationary point.
pub fn mutual_info_at_beta(params: &PrivacyParams) -> f64 {
    let beta = beta_optimal(params);
    mutual_info_continuous(params.d() as f64, params.epsilon(), beta)
}

/// `ln((e^ε - 1)/ε) + ε/(e^ε - 1) - 1`, the domain-size-free bound on `I_β`.
pub fn asymptotic_mi_bound(epsilon: f64) -> f64 {
    if epsilon > LARGE_EPS {
        // ln(e^ε - 1) = ε + ln(1 - e^-ε)
        let inv = (-epsilon).exp();
        return epsilon + (-inv).ln_1p() - epsilon.ln() + epsilon * inv / (1.0 - inv) - 1.0;
    }
    let em1 = epsilon.exp_m1();
    (em1 / epsilon).ln() + epsilon / em1 - 1.0
}

/// `ε²/8`, the quadratic bound implied by [`asymptotic_mi_bound`].
pub fn quadratic_mi_bound(epsilon: f64) -> f64 {
    epsilon * epsilon / 8.0
}

/// The chain `I_{k*} ≤ I_β ≤ ln((e^ε-1)/ε) + ε/(e^ε-1) - 1 ≤ ε²/8`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundChain {
    pub max_mutual_info: f64,
    pub mutual_info_at_beta: f64,
    pub asymptotic_bound: f64,
    pub quadratic_bound: f64,
}

impl BoundChain {
    pub fn new(params: &PrivacyParams) -> Self {
        Self {
            max_mutual_info: max_mutual_info(params),
            mutual_info_at_beta: mutual_info_at_beta(params),
            asymptotic_bound: asymptotic_mi_bound(params.epsilon()),
            quadratic_bound: quadratic_mi_bound(params.epsilon()),
        }
    }

    /// Smallest slack along the chain; negative means a link is violated.
    pub fn min_margin(&self) -> f64 {
        (self.mutual_info_at_beta - self.max_mutual_info)
            .min(self.asymptotic_bound - self.mutual_info_at_beta)
            .min(self.quadratic_bound - self.asymptotic_bound)
    }
}

/// Mutual information of binary randomized response, together with its
/// upper bound in terms of `I_{k*}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BrrInformation {
    pub series: f64,
    pub bound: f64,
}

/// Largest domain accepted by [`brr_mutual_info`]; the log-space sum is
/// accurate well beyond this, the cap only bounds runtime.
pub const BRR_SERIES_MAX_D: usize = 4096;

/// Binary randomized response mutual information as a mixture of `I_k` over
/// output sizes `k`, summed in log space with compensated accumulation.
///
/// Fails with [`Error::NumericRange`] if the series exceeds its bound, which
/// only happens when the parameters push the arithmetic out of range.
pub fn brr_mutual_info(params: &PrivacyParams) -> Result<BrrInformation> {
    let d = params.d();
    if d > BRR_SERIES_MAX_D {
        return Err(Error::TooLarge {
            d,
            reason: format!("binary randomized response series limited to d <= {BRR_SERIES_MAX_D}"),
        });
    }
    let eps = params.epsilon();
    let half = 0.5 * eps;
    let df = d as f64;
    // d · ln(e^{ε/2} + 1)
    let ln_norm = df * ln_add_exp(half, 0.0);

    let mut acc = CompensatedSum::new();
    for k in 0..=d {
        let ik = mutual_info_ik(params, k)?;
        if ik == 0.0 {
            continue;
        }
        let kf = k as f64;
        // ln(k·e^ε + d - k)
        let ln_mass = ln_add_exp(kf.ln() + eps, (df - kf).ln());
        let ln_weight = ln_binomial(d, k) + half * (df - kf - 1.0) + ln_mass - ln_norm - df.ln();
        acc.add(ln_weight.exp() * ik);
    }
    let series = acc.value();

    let excluded = (half * (df - 1.0) - ln_norm).exp() + (-half - ln_norm).exp();
    let bound = (1.0 - excluded) * max_mutual_info(params);

    if !series.is_finite() || !bound.is_finite() {
        return Err(Error::NumericRange(format!(
            "non-finite binary randomized response series at d={d}, eps={eps}"
        )));
    }
    if series > bound * (1.0 + 1e-12) + 1e-15 {
        return Err(Error::NumericRange(format!(
            "binary randomized response series {series} exceeds bound {bound} at d={d}, eps={eps}"
        )));
    }
    Ok(BrrInformation { series, bound })
}
