//! Frequency aggregation, the unbiased remapping estimator, simplex
//! projection, and the squared-ℓ₂ error analysis.
//!
//! Any mechanism whose view contains the true symbol with probability `g`
//! and each other symbol with probability `h` admits the same estimator:
//! `θ̂_j = (f_j - n·h) / (n·(g - h))`, where `f_j` counts views containing `j`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::information::{bracket, SubsetSizeChoice};
use crate::params::PrivacyParams;
use crate::sampling::{brr_flip_prob, Mechanism, SubsetView};

/// Own-symbol (`g`) and other-symbol (`h`) hit rates of a mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HitRates {
    g: f64,
    h: f64,
}

impl HitRates {
    /// Requires `0 <= h < g <= 1`.
    pub fn new(g: f64, h: f64) -> Result<Self> {
        if !(g.is_finite() && h.is_finite() && 0.0 <= h && h < g && g <= 1.0) {
            return Err(Error::InvalidHitRates { g, h });
        }
        Ok(Self { g, h })
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn h(&self) -> f64 {
        self.h
    }
}

/// `g_k = k·e^ε/(k·e^ε + d - k)` and
/// `h_k = (k·e^ε·(k - 1) + (d - k)·k) / ((k·e^ε + d - k)·(d - 1))`.
pub fn hit_rates_ksubset(params: &PrivacyParams, k: usize) -> Result<HitRates> {
    params.check_subset_size(k)?;
    let d = params.d() as f64;
    let kf = k as f64;
    let e = params.exp_eps();
    if !e.is_finite() {
        return HitRates::new(1.0, (kf - 1.0) / (d - 1.0));
    }
    let den = kf * e + d - kf;
    let g = kf * e / den;
    let h = (kf * e * (kf - 1.0) + (d - kf) * kf) / (den * (d - 1.0));
    HitRates::new(g, h)
}

/// `g = e^ε/(e^ε + d - 1)`, `h = 1/(e^ε + d - 1)`; identical to `k = 1`.
pub fn hit_rates_mrr(params: &PrivacyParams) -> Result<HitRates> {
    hit_rates_ksubset(params, 1)
}

/// `g = e^{ε/2}/(e^{ε/2} + 1)`, `h = 1/(e^{ε/2} + 1)`.
pub fn hit_rates_brr(params: &PrivacyParams) -> Result<HitRates> {
    let flip = brr_flip_prob(params.epsilon());
    HitRates::new(1.0 - flip, flip)
}

pub fn hit_rates(mechanism: Mechanism, params: &PrivacyParams) -> Result<HitRates> {
    match mechanism {
        Mechanism::Brr => hit_rates_brr(params),
        Mechanism::Mrr => hit_rates_mrr(params),
        Mechanism::KSubset(k) => hit_rates_ksubset(params, k),
    }
}

/// Per-symbol counts of views containing each symbol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrequencyVector {
    counts: Vec<u64>,
    n: u64,
}

impl FrequencyVector {
    pub fn new(d: usize) -> Self {
        Self {
            counts: vec![0; d],
            n: 0,
        }
    }

    pub fn from_counts(counts: Vec<u64>, n: u64) -> Self {
        Self { counts, n }
    }

    pub fn d(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Number of views aggregated.
    pub fn n(&self) -> u64 {
        self.n
    }

    /// Counts one view given as member indices.
    pub fn add_members(&mut self, members: &[usize]) -> Result<()> {
        let d = self.counts.len();
        if let Some(&x) = members.iter().find(|&&x| x >= d) {
            return Err(Error::SymbolOutOfRange { x, d });
        }
        for &j in members {
            self.counts[j] += 1;
        }
        self.n += 1;
        Ok(())
    }

    pub fn add_view(&mut self, view: &SubsetView) -> Result<()> {
        self.add_members(view.members())
    }

    /// Adds the counts of a disjoint shard.
    pub fn merge(&mut self, other: &FrequencyVector) -> Result<()> {
        if other.d() != self.d() {
            return Err(Error::InvalidConfig(format!(
                "cannot merge frequency vectors of sizes {} and {}",
                self.d(),
                other.d()
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n += other.n;
        Ok(())
    }
}

/// Counts, for each symbol, how many views contain it.
pub fn aggregate<'a, I>(views: I, d: usize) -> Result<FrequencyVector>
where
    I: IntoIterator<Item = &'a SubsetView>,
{
    let mut freq = FrequencyVector::new(d);
    for view in views {
        freq.add_view(view)?;
    }
    Ok(freq)
}

/// An estimate of the input distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionEstimate {
    pub theta_hat: Vec<f64>,
    /// Whether `theta_hat` has been projected onto the probability simplex.
    pub projected: bool,
}

/// The unbiased remapping estimator `(f_j - n·h) / (n·(g - h))`.
pub fn remap_estimate(freq: &FrequencyVector, rates: &HitRates) -> Result<DistributionEstimate> {
    if freq.n == 0 {
        return Err(Error::NoViews);
    }
    let n = freq.n as f64;
    let scale = n * (rates.g - rates.h);
    let offset = n * rates.h;
    let theta_hat = freq
        .counts
        .iter()
        .map(|&f| (f as f64 - offset) / scale)
        .collect();
    Ok(DistributionEstimate {
        theta_hat,
        projected: false,
    })
}

/// Euclidean projection onto `{p : p >= 0, Σp = 1}` by sorting and
/// thresholding.
pub fn project_onto_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut threshold = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            threshold = t;
        }
    }
    let mut p: Vec<f64> = v.iter().map(|&x| (x - threshold).max(0.0)).collect();
    // Fold the last rounding residue into the largest entry.
    let residue = 1.0 - p.iter().sum::<f64>();
    if let Some(max) = p.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *max += residue;
    }
    p
}

pub fn project_simplex(estimate: &DistributionEstimate) -> DistributionEstimate {
    DistributionEstimate {
        theta_hat: project_onto_simplex(&estimate.theta_hat),
        projected: true,
    }
}

/// `E‖θ̂ - θ‖₂² = (g(1-g) + (d-1)·h(1-h)) / (n·(g-h)²)` for any hit-rate pair.
pub fn l2_error_for_rates(rates: &HitRates, d: usize, n: u64) -> f64 {
    let HitRates { g, h } = *rates;
    (g * (1.0 - g) + (d as f64 - 1.0) * h * (1.0 - h)) / (n as f64 * (g - h) * (g - h))
}

/// Expected squared ℓ₂ error of the unprojected k-subset estimate; the same
/// for every input distribution.
pub fn analytic_l2_error(params: &PrivacyParams, k: usize, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::NoViews);
    }
    let rates = hit_rates_ksubset(params, k)?;
    Ok(l2_error_for_rates(&rates, params.d(), n))
}

/// The ℓ₂-optimal subset size: argmin of [`analytic_l2_error`] over
/// `{floor(d/(1+e^ε)), ceil(d/(1+e^ε))}` clamped to `[1, d - 1]`, ties to the
/// smaller `k`.
pub fn ksharp(params: &PrivacyParams, n: u64) -> Result<SubsetSizeChoice> {
    let center = params.d() as f64 / (1.0 + params.exp_eps());
    let mut best: Option<(usize, f64)> = None;
    for k in bracket(center, params.d()) {
        let value = analytic_l2_error(params, k, n)?;
        if best.map_or(true, |(_, v)| value < v) {
            best = Some((k, value));
        }
    }
    let (k, objective_value) = best.expect("bracket is never empty");
    Ok(SubsetSizeChoice {
        beta: center,
        k,
        objective_value,
    })
}

/// `f(g, h) = (g(1-g) + d·h(1-h)) / (g-h)²`, the per-provider error of a
/// mechanism mixing several subset sizes.
pub fn mixture_l2_objective(g: f64, h: f64, d: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&g) || !(0.0..=1.0).contains(&h) || g <= h {
        return Err(Error::InvalidHitRates { g, h });
    }
    Ok((g * (1.0 - g) + h * (1.0 - h) * d as f64) / ((g - h) * (g - h)))
}

/// Per-size hit rates of a power-set mechanism whose size-`k` outputs are
/// `c_k` times likelier when they contain the input:
/// `g'_k = k·c_k/(k·e^ε + d - k)`, `h'_k = (k·c_k·(k-1) + (d-k)·k)/((k·e^ε + d - k)(d-1))`.
pub fn size_class_hit_rates(params: &PrivacyParams, k: usize, c_k: f64) -> Result<(f64, f64)> {
    let d = params.d();
    if k > d {
        return Err(Error::SubsetSizeOutOfRange { k, min: 0, max: d });
    }
    let e = params.exp_eps();
    if !(1.0..=e * (1.0 + 1e-12)).contains(&c_k) {
        return Err(Error::InvalidMechanism(format!(
            "c_k = {c_k} outside [1, e^eps]"
        )));
    }
    let (df, kf) = (d as f64, k as f64);
    let den = kf * e + df - kf;
    Ok((
        kf * c_k / den,
        (kf * c_k * (kf - 1.0) + (df - kf) * kf) / (den * (df - 1.0)),
    ))
}

/// Aggregate `(g, h)` of a power-set mechanism given its output-size
/// distribution `size_probs[k]` and likelihood ratios `ratios[k]`.
pub fn power_set_hit_rates(
    params: &PrivacyParams,
    size_probs: &[f64],
    ratios: &[f64],
) -> Result<(f64, f64)> {
    let d = params.d();
    if size_probs.len() != d + 1 || ratios.len() != d + 1 {
        return Err(Error::InvalidMechanism(format!(
            "expected {} size classes",
            d + 1
        )));
    }
    let total: f64 = size_probs.iter().sum();
    if size_probs.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidMechanism(
            "size distribution must be a probability vector".into(),
        ));
    }
    let (mut g, mut h) = (0.0, 0.0);
    for k in 0..=d {
        let (gk, hk) = size_class_hit_rates(params, k, ratios[k])?;
        g += size_probs[k] * gk;
        h += size_probs[k] * hk;
    }
    Ok((g, h))
}

/// One row of the estimate CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub index: usize,
    pub theta_hat_raw: f64,
    pub theta_hat_projected: Option<f64>,
}

pub fn estimate_rows(
    raw: &DistributionEstimate,
    projected: Option<&DistributionEstimate>,
) -> Vec<EstimateRow> {
    raw.theta_hat
        .iter()
        .enumerate()
        .map(|(index, &r)| EstimateRow {
            index,
            theta_hat_raw: r,
            theta_hat_projected: projected.map(|p| p.theta_hat[index]),
        })
        .collect()
}

/// Writes `index,theta_hat_raw,theta_hat_projected` rows; the projected
/// column is left empty when `projected` is `None`.
pub fn write_estimate_csv<W: Write>(
    out: W,
    raw: &DistributionEstimate,
    projected: Option<&DistributionEstimate>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in estimate_rows(raw, projected) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::ksubset_channel;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p(eps: f64, d: usize) -> PrivacyParams {
        PrivacyParams::new(eps, d).unwrap()
    }

    #[test]
    fn ksubset_rates_examples() {
        let r = hit_rates_ksubset(&p(3f64.ln(), 4), 2).unwrap();
        assert_abs_diff_eq!(r.g(), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(r.h(), 10.0 / 24.0, epsilon = 1e-15);

        let eps: f64 = 0.6;
        let r = hit_rates_ksubset(&p(eps, 2), 1).unwrap();
        let e = eps.exp();
        assert_abs_diff_eq!(r.g(), e / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(r.h(), 1.0 / (e + 1.0), epsilon = 1e-15);

        assert!(hit_rates_ksubset(&p(1.0, 4), 4).is_err());
    }

    #[test]
    fn rates_match_channel_marginals() {
        // g = Σ_{Z∋x} Q(Z|x), h = Σ_{Z∋x'} Q(Z|x) for x' ≠ x.
        for &eps in &[0.1, 1.0, 3.0] {
            for d in 2..8 {
                for k in 1..d {
                    let params = p(eps, d);
                    let c = ksubset_channel(&params, k).unwrap();
                    let g: f64 = (0..c.num_outputs())
                        .filter(|&z| c.labels()[z] & 1 == 1)
                        .map(|z| c.prob(0, z))
                        .sum();
                    let h: f64 = (0..c.num_outputs())
                        .filter(|&z| c.labels()[z] & 2 == 2)
                        .map(|z| c.prob(0, z))
                        .sum();
                    let r = hit_rates_ksubset(&params, k).unwrap();
                    assert_abs_diff_eq!(r.g(), g, epsilon = 1e-12);
                    assert_abs_diff_eq!(r.h(), h, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn mrr_and_brr_rates() {
        let params = p(1.2, 7);
        let e = params.exp_eps();
        let m = hit_rates_mrr(&params).unwrap();
        assert_abs_diff_eq!(m.g(), e / (e + 6.0), epsilon = 1e-15);
        assert_abs_diff_eq!(m.h(), 1.0 / (e + 6.0), epsilon = 1e-15);
        let b = hit_rates_brr(&params).unwrap();
        let s = (0.6f64).exp();
        assert_abs_diff_eq!(b.g(), s / (s + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(b.h(), 1.0 / (s + 1.0), epsilon = 1e-15);
    }

    #[test]
    fn aggregate_examples() {
        let empty: Vec<SubsetView> = Vec::new();
        let f = aggregate(&empty, 3).unwrap();
        assert_eq!(f.counts(), &[0, 0, 0]);
        assert_eq!(f.n(), 0);

        let views = vec![SubsetView::new(vec![0, 1], 3).unwrap(); 5];
        let f = aggregate(&views, 3).unwrap();
        assert_eq!(f.counts(), &[5, 5, 0]);
        assert_eq!(f.n(), 5);

        let mut f = FrequencyVector::new(3);
        assert!(f.add_members(&[3]).is_err());
        assert_eq!(f.n(), 0);
    }

    #[test]
    fn merge_shards() {
        let mut a = FrequencyVector::from_counts(vec![1, 2], 2);
        a.merge(&FrequencyVector::from_counts(vec![3, 0], 3))
            .unwrap();
        assert_eq!(a, FrequencyVector::from_counts(vec![4, 2], 5));
        assert!(a.merge(&FrequencyVector::new(3)).is_err());
    }

    #[test]
    fn remap_algebraic_anchors() {
        let rates = HitRates::new(0.6, 0.2).unwrap();
        let freq = FrequencyVector::from_counts(vec![20, 60, 40], 100);
        let est = remap_estimate(&freq, &rates).unwrap();
        assert_abs_diff_eq!(est.theta_hat[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(est.theta_hat[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(est.theta_hat[2], 0.5, epsilon = 1e-15);
        assert!(!est.projected);
        assert!(matches!(
            remap_estimate(&FrequencyVector::new(3), &rates),
            Err(Error::NoViews)
        ));
    }

    #[test]
    fn hit_rates_validation() {
        assert!(HitRates::new(0.5, 0.5).is_err());
        assert!(HitRates::new(1.2, 0.1).is_err());
        assert!(HitRates::new(0.5, -0.1).is_err());
        assert!(HitRates::new(1.0, 0.0).is_ok());
    }

    #[test]
    fn projection_examples() {
        let out = project_onto_simplex(&[0.6, 0.6, -0.2]);
        for (a, b) in out.iter().zip([0.5, 0.5, 0.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let out = project_onto_simplex(&[2.0, 0.0, 0.0]);
        assert_eq!(out, vec![1.0, 0.0, 0.0]);
        let inside = [0.2, 0.3, 0.5];
        let out = project_onto_simplex(&inside);
        for (a, b) in out.iter().zip(inside) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    // Independent check: the projection p of v is characterized by the KKT
    // conditions p_i = max(v_i - τ, 0) with Σp = 1. Bisection on τ finds it
    // without sorting.
    fn projection_by_bisection(v: &[f64]) -> Vec<f64> {
        let mass = |t: f64| v.iter().map(|&x| (x - t).max(0.0)).sum::<f64>();
        let mut lo = v.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
        let mut hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mass(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        v.iter().map(|&x| (x - 0.5 * (lo + hi)).max(0.0)).collect()
    }

    proptest! {
        #[test]
        fn projection_matches_kkt_oracle(v in prop::collection::vec(-3.0f64..3.0, 1..40)) {
            let fast = project_onto_simplex(&v);
            let oracle = projection_by_bisection(&v);
            prop_assert!((fast.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(fast.iter().all(|&x| x >= 0.0));
            for (a, b) in fast.iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn projection_is_non_expansive_toward_simplex(
            v in prop::collection::vec(-2.0f64..2.0, 2..20),
            raw in prop::collection::vec(0.001f64..1.0, 2..20),
        ) {
            let n = v.len().min(raw.len());
            let s: f64 = raw[..n].iter().sum();
            let theta: Vec<f64> = raw[..n].iter().map(|x| x / s).collect();
            let v = &v[..n];
            let pr = project_onto_simplex(v);
            let before: f64 = v.iter().zip(&theta).map(|(a, b)| (a - b).powi(2)).sum();
            let after: f64 = pr.iter().zip(&theta).map(|(a, b)| (a - b).powi(2)).sum();
            prop_assert!(after <= before + 1e-12);
        }

        #[test]
        fn mixture_objective_quasiconcave(
            g1 in 0.0f64..=1.0, h1 in 0.0f64..=1.0,
            g2 in 0.0f64..=1.0, h2 in 0.0f64..=1.0,
            w in 0.0f64..=1.0, d in 2usize..=64,
        ) {
            prop_assume!(g1 > h1 && g2 > h2);
            let f1 = mixture_l2_objective(g1, h1, d).unwrap();
            let f2 = mixture_l2_objective(g2, h2, d).unwrap();
            let fm = mixture_l2_objective(w * g1 + (1.0 - w) * g2, w * h1 + (1.0 - w) * h2, d).unwrap();
            prop_assert!(fm >= f1.min(f2) * (1.0 - 1e-12) - 1e-12);
        }
    }

    #[test]
    fn binary_l2_reduces() {
        let params = p(0.8, 2);
        let r = hit_rates_ksubset(&params, 1).unwrap();
        assert_abs_diff_eq!(r.g() + r.h(), 1.0, epsilon = 1e-15);
        let n = 1000;
        let expected = 2.0 * r.g() * (1.0 - r.g()) / (n as f64 * (r.g() - r.h()).powi(2));
        assert_abs_diff_eq!(
            analytic_l2_error(&params, 1, n).unwrap(),
            expected,
            epsilon = 1e-15
        );
    }

    #[test]
    fn analytic_l2_near_table_value() {
        let v = analytic_l2_error(&p(1.0, 16), 4, 10_000).unwrap();
        assert!((v - 0.00434).abs() <= 0.2 * 0.00434, "{v}");
    }

    #[test]
    fn ksharp_examples() {
        assert_eq!(ksharp(&p(1.0, 16), 10_000).unwrap().k, 4);
        assert_eq!(ksharp(&p(2.0, 64), 10_000).unwrap().k, 8);
        for &eps in &[0.01, 1.0, 5.0] {
            assert_eq!(ksharp(&p(eps, 2), 10).unwrap().k, 1);
        }
    }

    #[test]
    fn ksharp_matches_exhaustive() {
        for &eps in &[0.01, 0.1, 0.5, 1.0, 2.0, 5.0] {
            for d in 2..=64 {
                let params = p(eps, d);
                let choice = ksharp(&params, 10_000).unwrap();
                let best = (1..d)
                    .map(|k| analytic_l2_error(&params, k, 10_000).unwrap())
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(choice.objective_value, best, "d={d} eps={eps}");
            }
        }
    }

    #[test]
    fn mixture_objective_anchors() {
        assert_eq!(mixture_l2_objective(1.0, 0.0, 10).unwrap(), 0.0);
        assert!(mixture_l2_objective(0.3, 0.3, 10).is_err());
        assert!(mixture_l2_objective(0.2, 0.3, 10).is_err());
    }

    #[test]
    fn size_class_rates_reduce_to_ksubset() {
        for d in 2..12 {
            for k in 1..d {
                let params = p(0.9, d);
                let (g, h) = size_class_hit_rates(&params, k, params.exp_eps()).unwrap();
                let r = hit_rates_ksubset(&params, k).unwrap();
                assert_abs_diff_eq!(g, r.g(), epsilon = 1e-15);
                assert_abs_diff_eq!(h, r.h(), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn estimate_csv_layout() {
        let est = DistributionEstimate {
            theta_hat: vec![0.6, 0.6, -0.2],
            projected: false,
        };
        let mut buf = Vec::new();
        write_estimate_csv(&mut buf, &est, Some(&project_simplex(&est))).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "index,theta_hat_raw,theta_hat_projected");
        assert_eq!(lines[1], "0,0.6,0.5");
        assert_eq!(lines[3], "2,-0.2,0.0");

        let mut buf = Vec::new();
        write_estimate_csv(&mut buf, &est, None).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().lines().nth(1).unwrap(),
            "0,0.6,"
        );
    }
}
