//! Self-check suites comparing closed forms against independent oracles.
//!
//! Each check returns a [`CheckOutcome`] listing failing cases with their
//! parameters and deltas. The formulas under test are taken from a
//! [`Formulas`] table so that tests can substitute a deliberately broken
//! implementation and confirm the suite notices.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;

use crate::channels::{
    amortize, brr_channel, brute_force_mi, ksubset_channel, mrr_channel, random_valid_staircase,
    validate_ldp,
};
use crate::error::{Error, Result};
use crate::estimation::{
    analytic_l2_error, ksharp, l2_error_for_rates, mixture_l2_objective, remap_estimate,
    FrequencyVector, HitRates,
};
use crate::information::{brr_mutual_info, kstar, max_mutual_info, mutual_info_ik, BoundChain};
use crate::params::PrivacyParams;
use crate::rng::{derive_seed, RngStream};
use crate::sampling::KSubsetRandomizer;
use crate::simulation::{draw_secrets, random_theta};

pub const EPSILON_GRID: [f64; 6] = [0.01, 0.1, 0.5, 1.0, 2.0, 5.0];

const MI_TOLERANCE: f64 = 1e-9;
const RATE_TOLERANCE: f64 = 1e-12;
const MAX_REPORTED_FAILURES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Quick,
    Default,
    Deep,
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quick" => Ok(Level::Quick),
            "default" => Ok(Level::Default),
            "deep" => Ok(Level::Deep),
            _ => Err(Error::InvalidConfig(format!("unknown level '{s}'"))),
        }
    }
}

impl Level {
    fn pick<T>(self, quick: T, default: T, deep: T) -> T {
        match self {
            Level::Quick => quick,
            Level::Default => default,
            Level::Deep => deep,
        }
    }
}

/// Implementations under test.
#[derive(Clone, Copy)]
pub struct Formulas {
    pub hit_rates_ksubset: fn(&PrivacyParams, usize) -> Result<HitRates>,
}

impl Default for Formulas {
    fn default() -> Self {
        Self {
            hit_rates_ksubset: crate::estimation::hit_rates_ksubset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed deviation, in the check's own units.
    pub max_delta: f64,
    /// Up to 20 failing cases, described with their parameters.
    pub details: Vec<String>,
}

impl CheckOutcome {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            failures: 0,
            max_delta: 0.0,
            details: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn record(&mut self, ok: bool, delta: f64, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if delta.is_nan() || delta > self.max_delta {
            self.max_delta = delta;
        }
        if !ok {
            self.failures += 1;
            if self.details.len() < MAX_REPORTED_FAILURES {
                self.details.push(describe());
            }
        }
    }

    fn fail(&mut self, message: String) {
        self.record(false, f64::NAN, || message);
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{status} {:<24} cases={:<8} failures={:<6} max_delta={:.3e}",
            self.name, self.cases, self.failures, self.max_delta
        )?;
        for d in &self.details {
            write!(f, "\n    {d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub level: Level,
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckOutcome::passed)
    }
}

fn params(eps: f64, d: usize) -> PrivacyParams {
    PrivacyParams::new(eps, d).expect("grid parameters are valid")
}

/// I_k against the brute-force MI of the explicit k-subset channel.
pub fn check_closed_form_mi(max_d: usize) -> CheckOutcome {
    let mut out = CheckOutcome::new("closed_form_mi");
    for &eps in &EPSILON_GRID {
        for d in 2..=max_d {
            let p = params(eps, d);
            for k in 1..d {
                match (
                    mutual_info_ik(&p, k),
                    ksubset_channel(&p, k).and_then(|c| brute_force_mi(&c)),
                ) {
                    (Ok(closed), Ok(brute)) => {
                        let delta = (closed - brute).abs();
                        out.record(delta <= MI_TOLERANCE, delta, || {
                            format!("d={d} eps={eps} k={k}: I_k={closed} brute={brute}")
                        });
                    }
                    (a, b) => out.fail(format!("d={d} eps={eps} k={k}: {a:?} {b:?}")),
                }
            }
        }
    }
    out
}

/// BRR series against the brute-force MI of the explicit BRR channel.
pub fn check_brr_series(max_d: usize) -> CheckOutcome {
    let mut out = CheckOutcome::new("brr_series");
    for &eps in &EPSILON_GRID {
        for d in 2..=max_d {
            let p = params(eps, d);
            match (
                brr_mutual_info(&p),
                brr_channel(&p).and_then(|c| brute_force_mi(&c)),
            ) {
                (Ok(info), Ok(brute)) => {
                    let delta = (info.series - brute).abs();
                    let dominated = info.series < max_mutual_info(&p);
                    out.record(delta <= MI_TOLERANCE && dominated, delta, || {
                        format!(
                            "d={d} eps={eps}: series={} brute={brute} dominated={dominated}",
                            info.series
                        )
                    });
                }
                (a, b) => out.fail(format!("d={d} eps={eps}: {a:?} {b:?}")),
            }
        }
    }
    out
}

/// Amortization preserves MI, and no valid staircase beats I_{k*}.
pub fn check_amortization(count: usize, seed: u64) -> CheckOutcome {
    let mut out = CheckOutcome::new("amortization");
    for i in 0..count {
        let d = 3 + i % 2;
        let eps = EPSILON_GRID[(i / 2) % EPSILON_GRID.len()].max(0.1);
        let case_seed = derive_seed(seed, &[i as u64]);
        let result = (|| -> Result<(f64, f64, f64)> {
            let mech = random_valid_staircase(d, eps, case_seed)?;
            let before = brute_force_mi(&mech.to_channel()?)?;
            let after = brute_force_mi(&amortize(&mech)?.to_channel()?)?;
            Ok((before, after, max_mutual_info(&params(eps, d))))
        })();
        match result {
            Ok((before, after, best)) => {
                let delta = (before - after).abs();
                let ok = delta <= MI_TOLERANCE && before <= best + MI_TOLERANCE;
                out.record(ok, delta, || {
                    format!("d={d} eps={eps} seed={case_seed}: before={before} after={after} max={best}")
                });
            }
            Err(e) => out.fail(format!("d={d} eps={eps} seed={case_seed}: {e}")),
        }
    }
    out
}

/// I_{k*} ≤ I_β ≤ asymptotic bound ≤ ε²/8.
pub fn check_bound_chain(max_d: usize) -> CheckOutcome {
    let mut out = CheckOutcome::new("bound_chain");
    for &eps in &EPSILON_GRID {
        for d in 2..=max_d {
            let chain = BoundChain::new(&params(eps, d));
            let margin = chain.min_margin();
            out.record(margin >= -1e-12, (-margin).max(0.0), || {
                format!("d={d} eps={eps}: {chain:?}")
            });
        }
    }
    out
}

/// The bracket choice of k* equals the exhaustive argmax of I_k.
pub fn check_kstar_bracket(max_d: usize) -> CheckOutcome {
    let mut out = CheckOutcome::new("kstar_bracket");
    for &eps in &EPSILON_GRID {
        for d in 2..=max_d {
            let p = params(eps, d);
            let choice = kstar(&p);
            let best = (1..d)
                .map(|k| mutual_info_ik(&p, k).unwrap_or(f64::NAN))
                .fold(f64::NEG_INFINITY, f64::max);
            let delta = (best - choice.objective_value).max(0.0);
            out.record(delta == 0.0, delta, || {
                format!(
                    "d={d} eps={eps}: k*={} value={} exhaustive={best}",
                    choice.k, choice.objective_value
                )
            });
        }
    }
    out
}

/// The bracket choice of k# equals the exhaustive argmin of the ℓ₂ error.
pub fn check_ksharp_bracket(max_d: usize) -> CheckOutcome {
    let mut out = CheckOutcome::new("ksharp_bracket");
    let n = 10_000;
    for &eps in &EPSILON_GRID {
        for d in 2..=max_d {
            let p = params(eps, d);
            match ksharp(&p, n) {
                Ok(choice) => {
                    let best = (1..d)
                        .map(|k| analytic_l2_error(&p, k, n).unwrap_or(f64::NAN))
                        .fold(f64::INFINITY, f64::min);
                    let delta = (choice.objective_value - best).max(0.0);
                    out.record(delta == 0.0, delta, || {
                        format!(
                            "d={d} eps={eps}: k#={} value={} exhaustive={best}",
                            choice.k, choice.objective_value
                        )
                    });
                }
                Err(e) => out.fail(format!("d={d} eps={eps}: {e}")),
            }
        }
    }
    out
}

/// The hit-rate formulas against marginals of the explicit channel.
pub fn check_hit_rates(formulas: &Formulas, max_d: usize) -> CheckOutcome {
    let mut out = CheckOutcome::new("hit_rate_marginals");
    for &eps in &EPSILON_GRID {
        for d in 2..=max_d {
            let p = params(eps, d);
            for k in 1..d {
                let result = (|| -> Result<(HitRates, f64, f64)> {
                    let c = ksubset_channel(&p, k)?;
                    let (mut g, mut h) = (0.0, 0.0);
                    for (z, &label) in c.labels().iter().enumerate() {
                        if label & 1 != 0 {
                            g += c.prob(0, z);
                        }
                        if label & 2 != 0 {
                            h += c.prob(0, z);
                        }
                    }
                    Ok(((formulas.hit_rates_ksubset)(&p, k)?, g, h))
                })();
                match result {
                    Ok((rates, g, h)) => {
                        let delta = (rates.g() - g).abs().max((rates.h() - h).abs());
                        out.record(delta <= RATE_TOLERANCE, delta, || {
                            format!(
                                "d={d} eps={eps} k={k}: formula=({}, {}) channel=({g}, {h})",
                                rates.g(),
                                rates.h()
                            )
                        });
                    }
                    Err(e) => out.fail(format!("d={d} eps={eps} k={k}: {e}")),
                }
            }
        }
    }
    out
}

/// Every explicit channel is ε-LDP and not ε/2-LDP.
pub fn check_channel_privacy(max_d: usize) -> CheckOutcome {
    let mut out = CheckOutcome::new("channel_privacy");
    for &eps in &EPSILON_GRID {
        for d in 2..=max_d {
            let p = params(eps, d);
            let mut channels = vec![("mrr".to_string(), mrr_channel(&p))];
            channels.extend((1..d).map(|k| (format!("kss:{k}"), ksubset_channel(&p, k))));
            for (name, channel) in channels {
                match channel {
                    Ok(c) => {
                        let at_eps = validate_ldp(&c, eps);
                        let at_half = validate_ldp(&c, eps / 2.0);
                        let delta = (at_eps.worst_ratio.ln() - eps).abs();
                        out.record(at_eps.satisfied && !at_half.satisfied, delta, || {
                            format!("d={d} eps={eps} {name}: worst ratio {}", at_eps.worst_ratio)
                        });
                    }
                    Err(e) => out.fail(format!("d={d} eps={eps} {name}: {e}")),
                }
            }
        }
    }
    out
}

/// f(mix) ≥ min(f(a), f(b)) for random hit-rate pairs.
pub fn check_mixture_inequality(count: usize, seed: u64) -> CheckOutcome {
    let mut out = CheckOutcome::new("mixture_inequality");
    let mut rng = RngStream::derive(seed, &[0x006d_6978]);
    while out.cases < count {
        let d = rng.random_range(2..=64usize);
        let (g1, h1, g2, h2) = (
            rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random::<f64>(),
        );
        if g1 <= h1 || g2 <= h2 {
            continue;
        }
        let w = rng.random::<f64>();
        let (gm, hm) = (w * g1 + (1.0 - w) * g2, w * h1 + (1.0 - w) * h2);
        match (
            mixture_l2_objective(g1, h1, d),
            mixture_l2_objective(g2, h2, d),
            mixture_l2_objective(gm, hm, d),
        ) {
            (Ok(f1), Ok(f2), Ok(fm)) => {
                let lower = f1.min(f2);
                let deficit = ((lower - fm) / lower.max(1.0)).max(0.0);
                out.record(deficit <= 1e-12, deficit, || {
                    format!(
                        "d={d} (g,h)=({g1},{h1}) (g',h')=({g2},{h2}) p={w}: mix={fm} min={lower}"
                    )
                });
            }
            (a, b, c) => out.fail(format!("d={d}: {a:?} {b:?} {c:?}")),
        }
    }
    out
}

/// Random power-set mechanisms never beat the best k-subset size in the k#
/// bracket under the mixture objective.
pub fn check_power_set_dominance(formulas: &Formulas, count: usize, seed: u64) -> CheckOutcome {
    let mut out = CheckOutcome::new("power_set_dominance");
    let mut rng = RngStream::derive(seed, &[0x7073]);
    while out.cases < count {
        let d = rng.random_range(2..=64usize);
        let eps = EPSILON_GRID[rng.random_range(0..EPSILON_GRID.len())];
        let p = params(eps, d);
        let e = p.exp_eps();
        let (df, mut g, mut h) = (d as f64, 0.0, 0.0);
        let weights: Vec<f64> = (0..=d).map(|_| rng.random::<f64>()).collect();
        let total: f64 = weights.iter().sum();
        for (k, w) in weights.iter().enumerate() {
            let c_k = rng.random_range(1.0..=e);
            let kf = k as f64;
            let den = kf * e + df - kf;
            g += w / total * kf * c_k / den;
            h += w / total * (kf * c_k * (kf - 1.0) + (df - kf) * kf) / (den * (df - 1.0));
        }
        if g <= h {
            continue;
        }
        let bracket = crate::information::bracket(df / (1.0 + e), d);
        let result = (|| -> Result<(f64, f64)> {
            let mut best = f64::INFINITY;
            for k in bracket {
                let r = (formulas.hit_rates_ksubset)(&p, k)?;
                best = best.min(mixture_l2_objective(r.g(), r.h(), d)?);
            }
            Ok((mixture_l2_objective(g, h, d)?, best))
        })();
        match result {
            Ok((mixed, best)) => {
                let deficit = ((best - mixed) / best.max(1.0)).max(0.0);
                out.record(deficit <= 1e-12, deficit, || {
                    format!("d={d} eps={eps}: power-set f={mixed} best k-subset f={best}")
                });
            }
            Err(e) => out.fail(format!("d={d} eps={eps}: {e}")),
        }
    }
    out
}

/// Monte Carlo squared ℓ₂ error of the unprojected estimate, built with the
/// formulas under test, against the analytic variance.
pub fn check_variance(formulas: &Formulas, reps: usize, seed: u64) -> CheckOutcome {
    let mut out = CheckOutcome::new("variance_monte_carlo");
    for &(d, eps, k) in &[(6usize, 1.0f64, 2usize), (10, 0.5, 3)] {
        let n = 2_000u64;
        let p = params(eps, d);
        let result = (|| -> Result<(f64, f64, f64)> {
            let rates = (formulas.hit_rates_ksubset)(&p, k)?;
            let randomizer = KSubsetRandomizer::new(&p, k)?;
            let mut errors = Vec::with_capacity(reps);
            let mut view = Vec::with_capacity(k);
            for rep in 0..reps {
                let mut rng = RngStream::derive(seed, &[d as u64, rep as u64]);
                let theta = random_theta(d, &mut rng);
                let secrets = draw_secrets(&theta, n, &mut rng);
                let mut freq = FrequencyVector::new(d);
                let mut hist = vec![0.0; d];
                for &x in &secrets {
                    randomizer.randomize_into(x, &mut rng, &mut view)?;
                    freq.add_members(&view)?;
                    hist[x] += 1.0 / n as f64;
                }
                let est = remap_estimate(&freq, &rates)?;
                errors.push(
                    est.theta_hat
                        .iter()
                        .zip(&hist)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>(),
                );
            }
            let m = errors.len() as f64;
            let mean = errors.iter().sum::<f64>() / m;
            let var = errors.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
            Ok((mean, (var / m).sqrt(), l2_error_for_rates(&rates, d, n)))
        })();
        match result {
            Ok((mean, se, analytic)) => {
                let delta = (mean - analytic).abs() / analytic;
                let ok = (mean - analytic).abs() <= 4.0 * se + 0.02 * analytic;
                out.record(ok, delta, || {
                    format!(
                        "d={d} eps={eps} k={k} n={n}: empirical={mean} ± {se} analytic={analytic}"
                    )
                });
            }
            Err(e) => out.fail(format!("d={d} eps={eps} k={k}: {e}")),
        }
    }
    out
}

/// Runs every suite at `level` with the given formula table.
pub fn run_with(level: Level, formulas: &Formulas, seed: u64) -> VerifyReport {
    let checks = vec![
        check_closed_form_mi(level.pick(5, 8, 12)),
        check_brr_series(level.pick(6, 10, 14)),
        check_amortization(level.pick(40, 200, 1000), seed),
        check_bound_chain(level.pick(16, 64, 256)),
        check_kstar_bracket(level.pick(16, 64, 256)),
        check_ksharp_bracket(level.pick(16, 64, 256)),
        check_hit_rates(formulas, level.pick(5, 8, 10)),
        check_channel_privacy(level.pick(5, 8, 10)),
        check_mixture_inequality(level.pick(10_000, 100_000, 1_000_000), seed),
        check_power_set_dominance(formulas, level.pick(200, 1_000, 10_000), seed),
        check_variance(formulas, level.pick(100, 300, 1000), seed),
    ];
    VerifyReport { level, checks }
}

pub fn run(level: Level, seed: u64) -> VerifyReport {
    run_with(level, &Formulas::default(), seed)
}
