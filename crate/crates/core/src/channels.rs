//! Explicit channel matrices for small domains.
//!
//! A [`Channel`] stores `Q(z | x)` densely, one row per input symbol. Output
//! columns are labelled by subset bitmasks: bit `j` set means symbol `j` is in
//! the output set (a randomized-response output `j` is the singleton `1 << j`).
//! Columns are ordered by ascending bitmask.
//!
//! These constructions exist to check the closed forms in
//! [`information`](crate::information) against [`brute_force_mi`], so they are
//! capped at [`MAX_EXPLICIT_D`] symbols and [`MAX_COLUMNS`] outputs.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{binomial, compensated_sum, CompensatedSum};
use crate::params::PrivacyParams;
use crate::rng::RngStream;

pub const MAX_EXPLICIT_D: usize = 20;
pub const MAX_COLUMNS: usize = 1 << 20;

/// Row-sum tolerance accepted as a valid probability distribution.
pub const ROW_SUM_TOLERANCE: f64 = 1e-10;

/// Relative slack on `e^ε` when checking likelihood ratios.
pub const LDP_RATIO_SLACK: f64 = 1e-9;

/// A conditional distribution `Q(z | x)` over `d` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    d: usize,
    labels: Vec<u64>,
    /// Row-major, `d × labels.len()`.
    probs: Vec<f64>,
}

impl Channel {
    /// Builds a channel from row-major probabilities, checking non-negativity
    /// and unit row sums.
    pub fn new(d: usize, labels: Vec<u64>, probs: Vec<f64>) -> Result<Self> {
        let channel = Self::from_parts(d, labels, probs)?;
        channel.check_rows()?;
        Ok(channel)
    }

    fn from_parts(d: usize, labels: Vec<u64>, probs: Vec<f64>) -> Result<Self> {
        if d == 0 || labels.is_empty() {
            return Err(Error::InvalidChannel("empty channel".into()));
        }
        if probs.len() != d * labels.len() {
            return Err(Error::InvalidChannel(format!(
                "expected {} entries for {d} rows x {} columns, got {}",
                d * labels.len(),
                labels.len(),
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidChannel(format!(
                "entry {p} is not a probability"
            )));
        }
        Ok(Self { d, labels, probs })
    }

    fn check_rows(&self) -> Result<()> {
        for x in 0..self.d {
            let sum = compensated_sum(self.row(x).iter().copied());
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidChannel(format!("row {x} sums to {sum}")));
            }
        }
        Ok(())
    }

    /// Input alphabet size.
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_outputs(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn row(&self, x: usize) -> &[f64] {
        let m = self.labels.len();
        &self.probs[x * m..(x + 1) * m]
    }

    pub fn prob(&self, x: usize, z: usize) -> f64 {
        self.probs[x * self.labels.len() + z]
    }

    /// Column index for an output label.
    pub fn column_of(&self, label: u64) -> Option<usize> {
        self.labels.binary_search(&label).ok()
    }

    /// Writes the matrix as CSV: a header of `input` followed by hex output
    /// labels, then one row per input symbol.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = Vec::with_capacity(self.labels.len() + 1);
        header.push("input".to_string());
        header.extend(self.labels.iter().map(|l| format!("0x{l:x}")));
        w.write_record(&header)?;
        for x in 0..self.d {
            let mut record = Vec::with_capacity(self.labels.len() + 1);
            record.push(x.to_string());
            record.extend(self.row(x).iter().map(|p| p.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_explicit_d(d: usize) -> Result<()> {
    if d > MAX_EXPLICIT_D {
        return Err(Error::TooLarge {
            d,
            reason: format!("explicit channels are limited to d <= {MAX_EXPLICIT_D}"),
        });
    }
    Ok(())
}

/// Bitmasks of all `k`-subsets of `0..d` in ascending order (Gosper's hack).
pub(crate) fn subsets_of_size(d: usize, k: usize) -> Vec<u64> {
    if k > d {
        return Vec::new();
    }
    if k == 0 {
        return vec![0];
    }
    let limit = 1u64 << d;
    let mut out = Vec::new();
    let mut mask: u64 = (1u64 << k) - 1;
    while mask < limit {
        out.push(mask);
        let c = mask & mask.wrapping_neg();
        let r = mask + c;
        mask = (((r ^ mask) >> 2) / c) | r;
    }
    out
}

/// The k-subset channel: `C(d, k)` outputs, each a size-`k` subset, with
/// `Q(Z | X) ∝ e^ε` when `X ∈ Z` and `∝ 1` otherwise.
pub fn ksubset_channel(params: &PrivacyParams, k: usize) -> Result<Channel> {
    params.check_subset_size(k)?;
    let d = params.d();
    check_explicit_d(d)?;
    let count = binomial(d, k).unwrap_or(u64::MAX);
    if count > MAX_COLUMNS as u64 {
        return Err(Error::TooLarge {
            d,
            reason: format!("C({d}, {k}) = {count} exceeds {MAX_COLUMNS} columns"),
        });
    }
    let labels = subsets_of_size(d, k);
    let e = params.exp_eps();
    let miss = d as f64 / (k as f64 * e + (d - k) as f64) / count as f64;
    let hit = miss * e;

    let m = labels.len();
    let mut probs = vec![0.0; d * m];
    for (z, &mask) in labels.iter().enumerate() {
        for x in 0..d {
            probs[x * m + z] = if mask >> x & 1 == 1 { hit } else { miss };
        }
    }
    Channel::new(d, labels, probs)
}

/// Multivariate randomized response: keep the symbol with probability
/// `e^ε/(e^ε + d - 1)`, otherwise report one of the others uniformly.
pub fn mrr_channel(params: &PrivacyParams) -> Result<Channel> {
    let d = params.d();
    if d > 1 << 12 {
        return Err(Error::TooLarge {
            d,
            reason: "dense d x d matrix".into(),
        });
    }
    let e = params.exp_eps();
    let den = e + (d - 1) as f64;
    let keep = e / den;
    let other = 1.0 / den;
    let labels: Vec<u64> = if d <= 64 {
        (0..d).map(|j| 1u64 << j).collect()
    } else {
        // Bitmask labels do not fit; fall back to plain symbol indices.
        (0..d as u64).collect()
    };
    let mut probs = vec![other; d * d];
    for x in 0..d {
        probs[x * d + x] = keep;
    }
    Channel::new(d, labels, probs)
}

/// Binary randomized response over all `2^d` subsets.
pub fn brr_channel(params: &PrivacyParams) -> Result<Channel> {
    brr_channel_raw(params.d(), params.epsilon())
}

/// As [`brr_channel`] but also admits `d = 1` (a single randomized bit).
pub(crate) fn brr_channel_raw(d: usize, epsilon: f64) -> Result<Channel> {
    check_explicit_d(d)?;
    let half = 0.5 * epsilon;
    let ln_norm = d as f64 * (half.exp() + 1.0).ln();
    let labels: Vec<u64> = (0..1u64 << d).collect();
    let m = labels.len();
    let mut probs = vec![0.0; d * m];
    for (z, &mask) in labels.iter().enumerate() {
        let size = mask.count_ones() as f64;
        let hit = (half * (d as f64 - size + 1.0) - ln_norm).exp();
        let miss = (half * (d as f64 - size - 1.0) - ln_norm).exp();
        for x in 0..d {
            probs[x * m + z] = if mask >> x & 1 == 1 { hit } else { miss };
        }
    }
    Channel::new(d, labels, probs)
}

/// `I(X; Z)` for `X` uniform on the channel's inputs, by direct summation.
///
/// Terms with `Q(z | x) = 0` contribute nothing; columns with zero marginal
/// are skipped.
pub fn brute_force_mi(channel: &Channel) -> Result<f64> {
    channel.check_rows()?;
    let d = channel.d();
    let inv_d = 1.0 / d as f64;
    let mut acc = CompensatedSum::new();
    for z in 0..channel.num_outputs() {
        let marginal = compensated_sum((0..d).map(|x| channel.prob(x, z))) * inv_d;
        if marginal <= 0.0 {
            continue;
        }
        for x in 0..d {
            let q = channel.prob(x, z);
            if q > 0.0 {
                acc.add(inv_d * q * (q / marginal).ln());
            }
        }
    }
    Ok(acc.value().max(0.0))
}

/// Outcome of [`validate_ldp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdpReport {
    pub satisfied: bool,
    /// Largest `max_x Q(z|x) / min_x Q(z|x)` over columns (infinite if some
    /// column mixes zero and non-zero entries).
    pub worst_ratio: f64,
    /// Column attaining `worst_ratio`.
    pub worst_column: Option<usize>,
}

/// Checks `Q(z|x) ≤ e^ε · Q(z|x')` for every column, with relative slack
/// [`LDP_RATIO_SLACK`].
pub fn validate_ldp(channel: &Channel, epsilon: f64) -> LdpReport {
    let mut worst_ratio = 1.0;
    let mut worst_column = None;
    for z in 0..channel.num_outputs() {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for x in 0..channel.d() {
            let q = channel.prob(x, z);
            lo = lo.min(q);
            hi = hi.max(q);
        }
        if hi == 0.0 {
            continue;
        }
        let ratio = if lo == 0.0 { f64::INFINITY } else { hi / lo };
        if ratio > worst_ratio || worst_column.is_none() {
            worst_ratio = ratio;
            worst_column = Some(z);
        }
    }
    LdpReport {
        satisfied: worst_ratio <= epsilon.exp() * (1.0 + LDP_RATIO_SLACK),
        worst_ratio,
        worst_column,
    }
}

/// A staircase mechanism: weight `w_c` on pattern column `c` of the
/// `d × 2^d` pattern matrix, whose entry in row `x` is `e^ε` when bit `x`
/// of `c` is set and `1` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct StaircaseMechanism {
    d: usize,
    epsilon: f64,
    weights: Vec<f64>,
}

impl StaircaseMechanism {
    /// Wraps a weight vector of length `2^d`, indexed by pattern bitmask.
    pub fn new(d: usize, epsilon: f64, weights: Vec<f64>) -> Result<Self> {
        check_explicit_d(d)?;
        if d == 0 {
            return Err(Error::InvalidMechanism("empty domain".into()));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidParams(format!(
                "epsilon must be > 0, got {epsilon}"
            )));
        }
        if weights.len() != 1 << d {
            return Err(Error::InvalidMechanism(format!(
                "expected {} weights, got {}",
                1usize << d,
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidMechanism(format!(
                "weight {w} is negative or not finite"
            )));
        }
        Ok(Self {
            d,
            epsilon,
            weights,
        })
    }

    /// The k-subset mechanism written as a staircase: all `C(d, k)` columns
    /// of class `k` carry weight `d / (k·e^ε + d - k) / C(d, k)`.
    pub fn ksubset(params: &PrivacyParams, k: usize) -> Result<Self> {
        params.check_subset_size(k)?;
        let d = params.d();
        check_explicit_d(d)?;
        let e = params.exp_eps();
        let count = binomial(d, k).expect("d <= 20") as f64;
        let w = d as f64 / (k as f64 * e + (d - k) as f64) / count;
        let weights = (0..1u64 << d)
            .map(|c| if c.count_ones() as usize == k { w } else { 0.0 })
            .collect();
        Self::new(d, params.epsilon(), weights)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ_c w_c · S[x, c]` for each row `x`.
    pub fn row_sums(&self) -> Vec<f64> {
        let e = self.epsilon.exp();
        (0..self.d)
            .map(|x| {
                compensated_sum(self.weights.iter().enumerate().map(|(c, &w)| {
                    if c >> x & 1 == 1 {
                        w * e
                    } else {
                        w
                    }
                }))
            })
            .collect()
    }

    pub fn check_valid(&self) -> Result<()> {
        for (x, s) in self.row_sums().into_iter().enumerate() {
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidMechanism(format!("row {x} sums to {s}")));
            }
        }
        Ok(())
    }

    /// Total weight in each pattern class `0..=d`.
    pub fn class_totals(&self) -> Vec<f64> {
        let mut totals = vec![CompensatedSum::new(); self.d + 1];
        for (c, &w) in self.weights.iter().enumerate() {
            totals[(c as u64).count_ones() as usize].add(w);
        }
        totals.iter().map(CompensatedSum::value).collect()
    }

    /// Induced channel, restricted to columns with non-zero weight.
    pub fn to_channel(&self) -> Result<Channel> {
        let e = self.epsilon.exp();
        let labels: Vec<u64> = (0..self.weights.len() as u64)
            .filter(|&c| self.weights[c as usize] > 0.0)
            .collect();
        let m = labels.len();
        let mut probs = vec![0.0; self.d * m];
        for (z, &c) in labels.iter().enumerate() {
            let w = self.weights[c as usize];
            for x in 0..self.d {
                probs[x * m + z] = if c >> x & 1 == 1 { w * e } else { w };
            }
        }
        Channel::new(self.d, labels, probs)
    }

    /// Whether every class already carries uniform weight.
    pub fn is_amortized(&self, tol: f64) -> bool {
        let mut seen: Vec<Option<f64>> = vec![None; self.d + 1];
        for (c, &w) in self.weights.iter().enumerate() {
            let class = (c as u64).count_ones() as usize;
            match seen[class] {
                None => seen[class] = Some(w),
                Some(v) if (v - w).abs() > tol * v.abs().max(w.abs()).max(1.0) => return false,
                Some(_) => {}
            }
        }
        true
    }
}

/// Replaces every weight in class `k` with the class average
/// `sum(W^(d,k)) / C(d, k)`. Mutual information and validity are preserved.
pub fn amortize(mech: &StaircaseMechanism) -> Result<StaircaseMechanism> {
    mech.check_valid()?;
    let totals = mech.class_totals();
    let averages: Vec<f64> = totals
        .iter()
        .enumerate()
        .map(|(k, &t)| t / binomial(mech.d, k).expect("d <= 20") as f64)
        .collect();
    let weights = (0..mech.weights.len() as u64)
        .map(|c| averages[c.count_ones() as usize])
        .collect();
    StaircaseMechanism::new(mech.d, mech.epsilon, weights)
}

const STAIRCASE_ATTEMPTS: usize = 400;

/// A random valid staircase mechanism with non-uniform weights inside at
/// least one pattern class, for `d` in `{3, 4}`.
///
/// Support is pattern classes `1..d`. The `d` singleton columns are solved
/// for from the row-sum constraints; the remaining columns get random
/// positive weights. Draws that leave a singleton weight negative are
/// rejected, and the spread of the random weights shrinks after each
/// rejection so small ε still terminates.
pub fn random_valid_staircase(d: usize, epsilon: f64, seed: u64) -> Result<StaircaseMechanism> {
    if !(3..=4).contains(&d) {
        return Err(Error::InvalidConfig(format!(
            "random staircase generation supports d in {{3, 4}}, got {d}"
        )));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidParams(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    let e = epsilon.exp();
    let em1 = epsilon.exp_m1();
    let mut rng = RngStream::from_seed(seed);
    let free: Vec<usize> = (0..d).map(|x| 1 << x).collect();
    let others: Vec<usize> = (0..1usize << d)
        .filter(|c| (2..d).contains(&(c.count_ones() as usize)))
        .collect();

    let mut spread = 1.0;
    for _ in 0..STAIRCASE_ATTEMPTS {
        let mut weights = vec![0.0; 1 << d];
        for &c in &others {
            weights[c] = 1.0 + spread * (2.0 * rng.random::<f64>() - 1.0);
        }
        // Mass each row receives from the non-singleton columns.
        let mut rest: Vec<f64> = (0..d)
            .map(|x| {
                others
                    .iter()
                    .map(|&c| {
                        if c >> x & 1 == 1 {
                            weights[c] * e
                        } else {
                            weights[c]
                        }
                    })
                    .sum()
            })
            .collect();
        let target = 0.05 + 0.9 * rng.random::<f64>();
        let scale = target / rest.iter().copied().fold(0.0, f64::max);
        for &c in &others {
            weights[c] *= scale;
        }
        for r in &mut rest {
            *r *= scale;
        }

        // Row x: (e^ε - 1)·w_x + Σ_j w_j = 1 - rest_x.
        let s = (d as f64 - rest.iter().sum::<f64>()) / (em1 + d as f64);
        let solved: Vec<f64> = rest.iter().map(|r| (1.0 - r - s) / em1).collect();
        if solved.iter().any(|&w| w < 0.0) {
            spread *= 0.8;
            continue;
        }
        for (&c, &w) in free.iter().zip(&solved) {
            weights[c] = w;
        }
        let mech = StaircaseMechanism::new(d, epsilon, weights)?;
        if mech.check_valid().is_err() || mech.is_amortized(1e-9) {
            spread *= 0.8;
            continue;
        }
        return Ok(mech);
    }
    Err(Error::Generation(format!(
        "no valid staircase mechanism found for d={d}, eps={epsilon} after {STAIRCASE_ATTEMPTS} attempts"
    )))
}
