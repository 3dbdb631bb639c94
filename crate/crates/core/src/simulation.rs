//! Monte Carlo harness for distribution-estimation error.
//!
//! Each repetition draws a true distribution θ, draws `n` secrets i.i.d.
//! from it, passes every secret through each mechanism, estimates θ with the
//! remapping estimator (optionally projected onto the simplex), and records
//! the squared ℓ₂ and ℓ₁ errors. Errors are measured against the empirical
//! distribution of the drawn secrets.
//!
//! Randomness is addressed by position rather than consumed in order:
//!
//! | stream                | path under `master_seed`   |
//! |-----------------------|----------------------------|
//! | θ for rep `r`         | `[r, 0]`                   |
//! | secrets for rep `r`   | `[r, 1]`                   |
//! | provider `i`, rep `r` | `[r, mechanism tag, i]`    |
//!
//! so results do not depend on the thread count or scheduling.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    hit_rates, ksharp, project_onto_simplex, remap_estimate, FrequencyVector, HitRates,
};
use crate::information::kstar;
use crate::params::PrivacyParams;
use crate::rng::RngStream;
use crate::sampling::{Mechanism, Randomizer};

const TAG_THETA: u64 = 0;
const TAG_SECRETS: u64 = 1;

/// A mechanism as named in experiment configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MechanismKind {
    Brr,
    Mrr,
    /// k-subset at the information-optimal size k*.
    KssMi,
    /// k-subset at the ℓ₂-optimal size k#.
    KssL2,
    /// k-subset at a fixed size.
    Kss(usize),
}

impl MechanismKind {
    pub const STANDARD: [MechanismKind; 4] = [
        MechanismKind::Brr,
        MechanismKind::Mrr,
        MechanismKind::KssMi,
        MechanismKind::KssL2,
    ];

    fn stream_tag(self) -> u64 {
        match self {
            MechanismKind::Brr => 2,
            MechanismKind::Mrr => 3,
            MechanismKind::KssMi => 4,
            MechanismKind::KssL2 => 5,
            MechanismKind::Kss(k) => 0x1_0000 + k as u64,
        }
    }

    /// The concrete mechanism for `params` and sample size `n`.
    pub fn resolve(self, params: &PrivacyParams, n: u64) -> Result<Mechanism> {
        Ok(match self {
            MechanismKind::Brr => Mechanism::Brr,
            MechanismKind::Mrr => Mechanism::Mrr,
            MechanismKind::KssMi => Mechanism::KSubset(kstar(params).k),
            MechanismKind::KssL2 => Mechanism::KSubset(ksharp(params, n.max(1))?.k),
            MechanismKind::Kss(k) => {
                params.check_subset_size(k)?;
                Mechanism::KSubset(k)
            }
        })
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MechanismKind::Brr => f.write_str("BRR"),
            MechanismKind::Mrr => f.write_str("MRR"),
            MechanismKind::KssMi => f.write_str("KSS_MI"),
            MechanismKind::KssL2 => f.write_str("KSS_L2"),
            MechanismKind::Kss(k) => write!(f, "KSS:{k}"),
        }
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    /// Accepts `BRR`, `MRR`, `KSS_MI`, `KSS_L2`, or `KSS:<k>` in any case.
    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        match upper.as_str() {
            "BRR" => Ok(MechanismKind::Brr),
            "MRR" => Ok(MechanismKind::Mrr),
            "KSS_MI" => Ok(MechanismKind::KssMi),
            "KSS_L2" => Ok(MechanismKind::KssL2),
            _ => upper
                .strip_prefix("KSS:")
                .and_then(|k| k.parse().ok())
                .map(MechanismKind::Kss)
                .ok_or_else(|| Error::InvalidMechanism(format!("unknown mechanism '{s}'"))),
        }
    }
}

/// Where each repetition's true distribution comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ThetaSource {
    /// Fresh uniform draw from the simplex every repetition.
    Random,
    /// The same distribution every repetition.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub d: usize,
    pub epsilon: f64,
    /// Providers per repetition.
    pub n: u64,
    pub reps: usize,
    pub mechanisms: Vec<MechanismKind>,
    pub master_seed: u64,
    pub theta_source: ThetaSource,
    /// Project estimates onto the simplex before measuring error.
    pub project: bool,
    /// Worker threads; `None` uses the global default. Never affects results.
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    /// Defaults: all four standard mechanisms, random θ, projection on.
    pub fn new(d: usize, epsilon: f64, n: u64, reps: usize, master_seed: u64) -> Self {
        Self {
            d,
            epsilon,
            n,
            reps,
            mechanisms: MechanismKind::STANDARD.to_vec(),
            master_seed,
            theta_source: ThetaSource::Random,
            project: true,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<PrivacyParams> {
        let params = PrivacyParams::new(self.epsilon, self.d)?;
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if self.mechanisms.is_empty() {
            return Err(Error::InvalidConfig("no mechanisms selected".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        if let ThetaSource::Fixed(theta) = &self.theta_source {
            check_distribution(theta, self.d)?;
        }
        Ok(params)
    }
}

fn check_distribution(theta: &[f64], d: usize) -> Result<()> {
    if theta.len() != d {
        return Err(Error::InvalidConfig(format!(
            "theta has {} entries, d = {d}",
            theta.len()
        )));
    }
    if theta.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(Error::InvalidConfig(
            "theta entries must be non-negative".into(),
        ));
    }
    let total: f64 = theta.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "theta sums to {total}, not 1"
        )));
    }
    Ok(())
}

/// Error statistics of one mechanism over all repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismSummary {
    pub mechanism: MechanismKind,
    /// Subset size for k-subset mechanisms.
    pub k: Option<usize>,
    pub mean_l2_sq: f64,
    pub se_l2_sq: f64,
    pub mean_l1: f64,
    pub se_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub d: usize,
    pub epsilon: f64,
    pub n: u64,
    pub reps: usize,
    pub master_seed: u64,
    pub kstar: usize,
    pub ksharp: usize,
    pub projected: bool,
    pub mechanisms: Vec<MechanismSummary>,
}

impl ExperimentResult {
    pub fn summary(&self, kind: MechanismKind) -> Option<&MechanismSummary> {
        self.mechanisms.iter().find(|m| m.mechanism == kind)
    }
}

/// Uniform draw from the probability simplex (symmetric Dirichlet with
/// concentration 1), via normalized unit exponentials.
pub fn random_theta<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let mut theta: Vec<f64> = (0..d).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = theta.iter().sum();
    for p in &mut theta {
        *p /= total;
    }
    theta
}

/// Draws `n` i.i.d. secrets from `theta` by inverting its cumulative sums.
pub fn draw_secrets<R: Rng + ?Sized>(theta: &[f64], n: u64, rng: &mut R) -> Vec<usize> {
    let mut cumulative = Vec::with_capacity(theta.len());
    let mut acc = 0.0;
    for &p in theta {
        acc += p;
        cumulative.push(acc);
    }
    let last = theta.len() - 1;
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            cumulative.partition_point(|&c| c <= u).min(last)
        })
        .collect()
}

struct Prepared {
    kind: MechanismKind,
    mechanism: Mechanism,
    randomizer: Randomizer,
    rates: HitRates,
}

fn run_rep(
    config: &ExperimentConfig,
    prepared: &[Prepared],
    rep: usize,
) -> Result<Vec<(f64, f64)>> {
    let d = config.d;
    let r = rep as u64;
    let theta = match &config.theta_source {
        ThetaSource::Random => random_theta(
            d,
            &mut RngStream::derive(config.master_seed, &[r, TAG_THETA]),
        ),
        ThetaSource::Fixed(theta) => theta.clone(),
    };
    let secrets = draw_secrets(
        &theta,
        config.n,
        &mut RngStream::derive(config.master_seed, &[r, TAG_SECRETS]),
    );
    let mut histogram = vec![0u64; d];
    for &x in &secrets {
        histogram[x] += 1;
    }
    let n = config.n as f64;
    let empirical: Vec<f64> = histogram.iter().map(|&c| c as f64 / n).collect();

    let mut errors = Vec::with_capacity(prepared.len());
    let mut view = Vec::with_capacity(d);
    for p in prepared {
        let tag = p.kind.stream_tag();
        let mut freq = FrequencyVector::new(d);
        for (i, &x) in secrets.iter().enumerate() {
            let mut rng = RngStream::derive(config.master_seed, &[r, tag, i as u64]);
            p.randomizer.randomize_into(x, &mut rng, &mut view)?;
            freq.add_members(&view)?;
        }
        let raw = remap_estimate(&freq, &p.rates)?.theta_hat;
        let estimate = if config.project {
            project_onto_simplex(&raw)
        } else {
            raw
        };
        let (mut l2, mut l1) = (0.0, 0.0);
        for (a, b) in estimate.iter().zip(&empirical) {
            l2 += (a - b) * (a - b);
            l1 += (a - b).abs();
        }
        errors.push((l2, l1));
    }
    Ok(errors)
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Runs every repetition and reduces them in repetition order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let params = config.validate()?;
    let prepared = config
        .mechanisms
        .iter()
        .map(|&kind| {
            let mechanism = kind.resolve(&params, config.n)?;
            Ok(Prepared {
                kind,
                mechanism,
                randomizer: Randomizer::new(mechanism, &params)?,
                rates: hit_rates(mechanism, &params)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let work = || {
        (0..config.reps)
            .into_par_iter()
            .map(|rep| run_rep(config, &prepared, rep))
            .collect::<Result<Vec<_>>>()
    };
    let per_rep = match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(work)?,
        None => work()?,
    };

    let mechanisms = prepared
        .iter()
        .enumerate()
        .map(|(m, p)| {
            let l2: Vec<f64> = per_rep.iter().map(|e| e[m].0).collect();
            let l1: Vec<f64> = per_rep.iter().map(|e| e[m].1).collect();
            let (mean_l2_sq, se_l2_sq) = mean_and_se(&l2);
            let (mean_l1, se_l1) = mean_and_se(&l1);
            let k = match p.mechanism {
                Mechanism::KSubset(k) => Some(k),
                _ => None,
            };
            MechanismSummary {
                mechanism: p.kind,
                k,
                mean_l2_sq,
                se_l2_sq,
                mean_l1,
                se_l1,
            }
        })
        .collect();

    Ok(ExperimentResult {
        d: config.d,
        epsilon: config.epsilon,
        n: config.n,
        reps: config.reps,
        master_seed: config.master_seed,
        kstar: kstar(&params).k,
        ksharp: ksharp(&params, config.n)?.k,
        projected: config.project,
        mechanisms,
    })
}

/// Runs `base` once per `(d, ε)` row with the four standard mechanisms.
pub fn table_grid(rows: &[(usize, f64)], base: &ExperimentConfig) -> Result<Vec<ExperimentResult>> {
    rows.iter()
        .map(|&(d, epsilon)| {
            let config = ExperimentConfig {
                d,
                epsilon,
                mechanisms: MechanismKind::STANDARD.to_vec(),
                ..base.clone()
            };
            run_experiment(&config)
        })
        .collect()
}

/// Parses a row label such as `d16e1.0` into `(16, 1.0)`.
pub fn parse_row_label(label: &str) -> Result<(usize, f64)> {
    let bad = || {
        Error::InvalidConfig(format!(
            "row label '{label}' is not of the form d<int>e<float>"
        ))
    };
    let rest = label.trim().strip_prefix('d').ok_or_else(bad)?;
    let (d, eps) = rest.split_once('e').ok_or_else(bad)?;
    let d: usize = d.parse().map_err(|_| bad())?;
    let eps: f64 = eps.parse().map_err(|_| bad())?;
    PrivacyParams::new(eps, d)?;
    Ok((d, eps))
}

/// A published result row at n = 10000 with 100 repetitions, errors listed
/// in the order BRR, MRR, KSS_MI, KSS_L2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub d: usize,
    pub epsilon: f64,
    pub l2_sq: [f64; 4],
    pub l1: [f64; 4],
    pub kstar: usize,
    pub ksharp: usize,
}

const fn row(
    d: usize,
    epsilon: f64,
    l2_sq: [f64; 4],
    l1: [f64; 4],
    kstar: usize,
    ksharp: usize,
) -> ReferenceRow {
    ReferenceRow {
        d,
        epsilon,
        l2_sq,
        l1,
        kstar,
        ksharp,
    }
}

#[rustfmt::skip]
#[allow(clippy::approx_constant)]
pub const REFERENCE_ROWS: &[ReferenceRow] = &[
    row(2, 0.1, [0.03361, 0.009983, 0.01001, 0.009026], [0.2058, 0.1123, 0.1132, 0.1048], 1, 1),
    row(2, 1.0, [0.00043, 9.75e-05, 9.82e-05, 8.21e-05], [0.02341, 0.01112, 0.01084, 0.01024], 1, 1),
    row(4, 0.01, [0.6492, 0.604, 0.5797, 0.5822], [1.313, 1.271, 1.233, 1.242], 2, 2),
    row(4, 0.1, [0.09319, 0.06928, 0.05542, 0.05383], [0.4863, 0.4194, 0.3728, 0.3683], 2, 2),
    row(4, 0.5, [0.00427, 0.00286, 0.00262, 0.00276], [0.1044, 0.08596, 0.08118, 0.08458], 2, 2),
    row(4, 1.0, [0.0011, 0.00052, 0.00056, 0.00056], [0.05362, 0.03664, 0.03828, 0.03787], 1, 1),
    row(6, 0.01, [0.6523, 0.6956, 0.6366, 0.6356], [1.47, 1.51, 1.45, 1.45], 3, 3),
    row(6, 0.1, [0.1195, 0.1333, 0.09006, 0.09741], [0.6773, 0.7154, 0.5851, 0.6112], 3, 3),
    row(6, 0.5, [0.00740, 0.00689, 0.00520, 0.00512], [0.1664, 0.162, 0.14, 0.1398], 3, 2),
    row(6, 1.0, [0.00185, 0.00138, 0.001216, 0.00119], [0.08388, 0.0723, 0.06813, 0.06764], 2, 2),
    row(8, 0.01, [0.7177, 0.7516, 0.6477, 0.6769], [1.613, 1.633, 1.558, 1.586], 4, 4),
    row(8, 0.1, [0.1367, 0.184, 0.1186, 0.1176], [0.831, 0.9464, 0.7708, 0.7654], 4, 4),
    row(8, 0.5, [0.01015, 0.01189, 0.00797, 0.00786], [0.2272, 0.2457, 0.2003, 0.1994], 3, 3),
    row(8, 1.0, [0.0025, 0.00241, 0.00195, 0.00190], [0.1124, 0.1103, 0.09971, 0.09808], 3, 2),
    row(8, 2.0, [0.00062, 0.00032, 0.0004, 0.00031], [0.05651, 0.04001, 0.04565, 0.03976], 2, 1),
    row(16, 0.01, [0.7008, 0.8152, 0.6988, 0.7109], [1.77, 1.819, 1.767, 1.777], 8, 8),
    row(16, 0.1, [0.1593, 0.2754, 0.1535, 0.1511], [1.188, 1.431, 1.178, 1.166], 8, 8),
    row(16, 0.5, [0.01976, 0.03955, 0.017, 0.01677], [0.4442, 0.6302, 0.4127, 0.4097], 7, 6),
    row(16, 1.0, [0.00531, 0.00837, 0.00447, 0.00434], [0.2304, 0.2896, 0.2117, 0.2086], 5, 4),
    row(16, 2.0, [0.00132, 0.00094, 0.00091, 0.00085], [0.1157, 0.09716, 0.09577, 0.09265], 3, 2),
    row(16, 3.0, [0.00055, 0.0002, 0.000295, 0.00021], [0.07454, 0.04555, 0.05492, 0.04567], 2, 1),
    row(32, 0.01, [0.7025, 0.8804, 0.6925, 0.6969], [1.878, 1.919, 1.879, 1.875], 16, 16),
    row(32, 0.1, [0.161, 0.3684, 0.1555, 0.1565], [1.484, 1.739, 1.469, 1.487], 15, 15),
    row(32, 1.0, [0.00971, 0.02396, 0.00899, 0.00876], [0.4393, 0.6923, 0.4256, 0.418], 11, 9),
    row(32, 1.5, [0.00473, 0.00822, 0.004, 0.00384], [0.3074, 0.4042, 0.2838, 0.2779], 9, 6),
    row(32, 2.0, [0.00261, 0.00308, 0.00211, 0.00188], [0.2285, 0.2476, 0.2059, 0.1954], 7, 4),
    row(32, 3.0, [0.0011, 0.00056, 0.00074, 0.00055], [0.1495, 0.1053, 0.1221, 0.1051], 4, 2),
    row(64, 0.1, [0.1543, 0.4348, 0.1536, 0.1519], [1.691, 1.88, 1.69, 1.69], 31, 30),
    row(64, 0.5, [0.03388, 0.105, 0.03359, 0.03383], [1.114, 1.578, 1.107, 1.11], 27, 24),
    row(64, 1.0, [0.01476, 0.04257, 0.01414, 0.01383], [0.7649, 1.213, 0.7439, 0.7397], 22, 17),
    row(64, 1.5, [0.00789, 0.0193, 0.0072, 0.0068], [0.5603, 0.8649, 0.5343, 0.5209], 17, 12),
    row(64, 2.0, [0.00476, 0.00882, 0.00403, 0.00368], [0.4358, 0.5903, 0.3998, 0.3823], 13, 8),
    row(64, 3.0, [0.00206, 0.00162, 0.00141, 0.00113], [0.2872, 0.2538, 0.2382, 0.212], 7, 3),
    row(64, 5.0, [0.00058, 9.97e-05, 0.000189, 9.95e-05], [0.1523, 0.06337, 0.0873, 0.06334], 2, 1),
    row(128, 0.1, [0.148, 0.523, 0.1431, 0.1456], [1.824, 1.95, 1.823, 1.824], 62, 61),
    row(128, 1.0, [0.01723, 0.05896, 0.01675, 0.01658], [1.122, 1.61, 1.108, 1.103], 43, 34),
    row(128, 3.0, [0.00358, 0.00436, 0.00263, 0.00222], [0.5339, 0.5858, 0.4573, 0.4203], 14, 6),
    row(128, 5.0, [0.0011, 0.00025, 0.00047, 0.00024], [0.2964, 0.1379, 0.1934, 0.1385], 4, 1),
    row(256, 1.0, [0.01753, 0.07743, 0.01726, 0.01703], [1.432, 1.83, 1.424, 1.417], 87, 69),
    row(256, 3.0, [0.0049, 0.00826, 0.004, 0.00345], [0.8757, 1.093, 0.7928, 0.7389], 29, 12),
    row(256, 5.0, [0.00187, 0.000599, 0.000863, 0.00055], [0.5447, 0.3074, 0.3707, 0.2944], 7, 2),
];

pub fn reference_row(d: usize, epsilon: f64) -> Option<&'static ReferenceRow> {
    REFERENCE_ROWS
        .iter()
        .find(|r| r.d == d && (r.epsilon - epsilon).abs() < 1e-12)
}

/// One line of the results CSV (and of its JSON mirror).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub d: usize,
    pub epsilon: f64,
    pub mechanism: String,
    pub k: Option<usize>,
    pub mean_l2_sq: f64,
    pub se_l2_sq: f64,
    pub mean_l1: f64,
    pub se_l1: f64,
    pub reps: usize,
    pub n: u64,
    pub master_seed: u64,
}

pub fn result_rows(results: &[ExperimentResult]) -> Vec<ResultRow> {
    results
        .iter()
        .flat_map(|r| {
            r.mechanisms.iter().map(move |m| ResultRow {
                d: r.d,
                epsilon: r.epsilon,
                mechanism: m.mechanism.to_string(),
                k: m.k,
                mean_l2_sq: m.mean_l2_sq,
                se_l2_sq: m.se_l2_sq,
                mean_l1: m.mean_l1,
                se_l1: m.se_l1,
                reps: r.reps,
                n: r.n,
                master_seed: r.master_seed,
            })
        })
        .collect()
}

pub fn write_results_csv<W: Write>(out: W, results: &[ExperimentResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in result_rows(results) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_results_json<W: Write>(mut out: W, results: &[ExperimentResult]) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, &result_rows(results))?;
    writeln!(out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::analytic_l2_error;

    #[test]
    fn theta_is_a_distribution_and_reproducible() {
        let a = random_theta(7, &mut RngStream::from_seed(11));
        let b = random_theta(7, &mut RngStream::from_seed(11));
        assert_eq!(a, b);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn theta_coordinate_means() {
        // Dirichlet(1) marginals are Beta(1, d-1): mean 1/d, var (d-1)/(d²(d+1)).
        let d = 5;
        let draws = 10_000;
        let mut rng = RngStream::from_seed(5);
        let mut sums = vec![0.0; d];
        for _ in 0..draws {
            for (s, p) in sums.iter_mut().zip(random_theta(d, &mut rng)) {
                *s += p;
            }
        }
        let df = d as f64;
        let sd = ((df - 1.0) / (df * df * (df + 1.0)) / draws as f64).sqrt();
        for s in sums {
            assert!((s / draws as f64 - 1.0 / df).abs() < 3.5 * sd);
        }
    }

    #[test]
    fn secrets_follow_theta() {
        let theta = [0.5, 0.0, 0.3, 0.2];
        let secrets = draw_secrets(&theta, 100_000, &mut RngStream::from_seed(9));
        let mut counts = [0usize; 4];
        for x in secrets {
            counts[x] += 1;
        }
        assert_eq!(counts[1], 0);
        for (c, p) in counts.iter().zip(theta) {
            let f = *c as f64 / 100_000.0;
            assert!((f - p).abs() < 0.006, "{f} vs {p}");
        }
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::new(4, 1.0, 100, 2, 1);
        assert!(c.validate().is_ok());
        c.reps = 0;
        assert!(c.validate().is_err());
        c.reps = 1;
        c.n = 0;
        assert!(c.validate().is_err());
        c.n = 10;
        c.theta_source = ThetaSource::Fixed(vec![0.5, 0.5]);
        assert!(c.validate().is_err());
        c.theta_source = ThetaSource::Fixed(vec![0.25; 4]);
        c.mechanisms = vec![MechanismKind::Kss(4)];
        assert!(run_experiment(&c).is_err());
    }

    #[test]
    fn mechanism_names_roundtrip() {
        for kind in [
            MechanismKind::Brr,
            MechanismKind::Mrr,
            MechanismKind::KssMi,
            MechanismKind::KssL2,
            MechanismKind::Kss(3),
        ] {
            assert_eq!(kind.to_string().parse::<MechanismKind>().unwrap(), kind);
        }
        assert!("KSS".parse::<MechanismKind>().is_err());
    }

    #[test]
    fn row_labels() {
        assert_eq!(parse_row_label("d16e1.0").unwrap(), (16, 1.0));
        assert_eq!(parse_row_label("d256e5").unwrap(), (256, 5.0));
        assert!(parse_row_label("16e1").is_err());
        assert!(parse_row_label("d1e1").is_err());
    }

    #[test]
    fn reference_rows_match_selection() {
        for r in REFERENCE_ROWS {
            let params = PrivacyParams::new(r.epsilon, r.d).unwrap();
            assert_eq!(kstar(&params).k, r.kstar, "d={} eps={}", r.d, r.epsilon);
            assert_eq!(
                ksharp(&params, 10_000).unwrap().k,
                r.ksharp,
                "d={} eps={}",
                r.d,
                r.epsilon
            );
        }
    }

    #[test]
    fn noiseless_limit() {
        let mut c = ExperimentConfig::new(4, 40.0, 2000, 5, 3);
        c.mechanisms = vec![MechanismKind::KssMi, MechanismKind::KssL2];
        let r = run_experiment(&c).unwrap();
        assert_eq!((r.kstar, r.ksharp), (1, 1));
        for m in &r.mechanisms {
            assert!(m.mean_l2_sq >= 0.0 && m.mean_l2_sq <= 2.0 * 4.0 / 2000.0);
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut c = ExperimentConfig::new(6, 1.0, 500, 8, 42);
        c.threads = Some(1);
        let a = run_experiment(&c).unwrap();
        c.threads = Some(3);
        let b = run_experiment(&c).unwrap();
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        write_results_csv(&mut ca, &[a]).unwrap();
        write_results_csv(&mut cb, &[b]).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn unprojected_error_near_formula() {
        let mut c = ExperimentConfig::new(6, 1.0, 2000, 200, 8);
        c.mechanisms = vec![MechanismKind::Kss(2)];
        c.project = false;
        let r = run_experiment(&c).unwrap();
        let m = &r.mechanisms[0];
        let expected = analytic_l2_error(&PrivacyParams::new(1.0, 6).unwrap(), 2, 2000).unwrap();
        assert!(
            (m.mean_l2_sq - expected).abs() < 4.0 * m.se_l2_sq,
            "{} vs {expected}",
            m.mean_l2_sq
        );
    }

    #[test]
    fn csv_header() {
        let r = run_experiment(&ExperimentConfig::new(2, 1.0, 10, 1, 0)).unwrap();
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "d,epsilon,mechanism,k,mean_l2_sq,se_l2_sq,mean_l1,se_l1,reps,n,master_seed"
        );
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(1).unwrap().starts_with("2,1.0,BRR,,"));
    }
}
