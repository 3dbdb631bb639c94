//! Per-provider randomizers. Each runs in O(d) time and memory.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::PrivacyParams;
use crate::rng::uniform_below;

/// One provider's private view: a set of domain indices, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SubsetView {
    members: Vec<usize>,
}

impl SubsetView {
    /// Sorts and validates `members` against domain size `d`.
    pub fn new(mut members: Vec<usize>, d: usize) -> Result<Self> {
        members.sort_unstable();
        if let Some(&x) = members.last() {
            if x >= d {
                return Err(Error::SymbolOutOfRange { x, d });
            }
        }
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidMechanism("duplicate member in view".into()));
        }
        Ok(Self { members })
    }

    /// Wraps an already-sorted, duplicate-free list.
    pub(crate) fn from_sorted(members: Vec<usize>) -> Self {
        debug_assert!(members.windows(2).all(|w| w[0] < w[1]));
        Self { members }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.members.binary_search(&x).is_ok()
    }

    /// Bitmask form for `d <= 64`.
    pub fn to_mask(&self) -> u64 {
        self.members.iter().fold(0u64, |m, &j| m | 1u64 << j)
    }
}

impl fmt::Display for SubsetView {
    /// Wire form: comma-separated ascending indices, empty for the empty set.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, j) in self.members.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{j}")?;
        }
        Ok(())
    }
}

/// Fills `out` with `m` distinct indices drawn uniformly without replacement
/// from `0..d` minus `skip`, using reservoir sampling (Algorithm R) over the
/// implicit complement. Order in `out` is unspecified.
pub(crate) fn reservoir_sample_excluding<R: Rng + ?Sized>(
    d: usize,
    skip: usize,
    m: usize,
    rng: &mut R,
    out: &mut Vec<usize>,
) {
    out.clear();
    if m == 0 {
        return;
    }
    let item = |s: usize| s + usize::from(s >= skip);
    out.extend((0..m).map(item));
    // Slot `m` absorbs rejected items so the loop body has no branch.
    out.push(0);
    for s in m..d - 1 {
        let j = uniform_below(rng, s as u64 + 1) as usize;
        out[j.min(m)] = item(s);
    }
    out.truncate(m);
}

const BITMAP_WORDS: usize = 64;

/// Sorts distinct indices below `d`, via a stack bitmap when `d <= 4096`.
fn sort_small_domain(d: usize, out: &mut Vec<usize>) {
    if d > BITMAP_WORDS * 64 {
        out.sort_unstable();
        return;
    }
    let mut bits = [0u64; BITMAP_WORDS];
    for &j in out.iter() {
        bits[j / 64] |= 1 << (j % 64);
    }
    out.clear();
    for (w, &word) in bits[..d.div_ceil(64)].iter().enumerate() {
        let mut word = word;
        while word != 0 {
            out.push(w * 64 + word.trailing_zeros() as usize);
            word &= word - 1;
        }
    }
}

/// The k-subset randomizer with its inclusion probability precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KSubsetRandomizer {
    d: usize,
    k: usize,
    include_prob: f64,
}

impl KSubsetRandomizer {
    pub fn new(params: &PrivacyParams, k: usize) -> Result<Self> {
        params.check_subset_size(k)?;
        let e = params.exp_eps();
        let kf = k as f64;
        let include_prob = if e.is_finite() {
            kf * e / (kf * e + (params.d() - k) as f64)
        } else {
            1.0
        };
        Ok(Self {
            d: params.d(),
            k,
            include_prob,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Probability the true symbol is in the view.
    pub fn include_prob(&self) -> f64 {
        self.include_prob
    }

    /// Writes the view for secret `x` into `out`, sorted ascending.
    ///
    /// With probability `k·e^ε/(k·e^ε + d - k)` the view is `x` plus `k - 1`
    /// other symbols; otherwise `k` other symbols. Others are uniform without
    /// replacement from the domain minus `x`.
    pub fn randomize_into<R: Rng + ?Sized>(
        &self,
        x: usize,
        rng: &mut R,
        out: &mut Vec<usize>,
    ) -> Result<()> {
        if x >= self.d {
            return Err(Error::SymbolOutOfRange { x, d: self.d });
        }
        let include = rng.random::<f64>() < self.include_prob;
        let others = if include { self.k - 1 } else { self.k };
        reservoir_sample_excluding(self.d, x, others, rng, out);
        if include {
            out.push(x);
        }
        sort_small_domain(self.d, out);
        Ok(())
    }
}

/// Algorithm: see [`KSubsetRandomizer::randomize_into`].
pub fn ksubset_randomize<R: Rng + ?Sized>(
    x: usize,
    params: &PrivacyParams,
    k: usize,
    rng: &mut R,
) -> Result<SubsetView> {
    let randomizer = KSubsetRandomizer::new(params, k)?;
    let mut out = Vec::with_capacity(k);
    randomizer.randomize_into(x, rng, &mut out)?;
    Ok(SubsetView::from_sorted(out))
}

/// Multivariate randomized response: keep `x` with probability
/// `e^ε/(e^ε + d - 1)`, otherwise report one of the other symbols uniformly.
pub fn mrr_randomize<R: Rng + ?Sized>(
    x: usize,
    params: &PrivacyParams,
    rng: &mut R,
) -> Result<usize> {
    params.check_symbol(x)?;
    let d = params.d();
    let e = params.exp_eps();
    let keep = if e.is_finite() {
        e / (e + (d - 1) as f64)
    } else {
        1.0
    };
    if rng.random::<f64>() < keep {
        return Ok(x);
    }
    let j = uniform_below(rng, (d - 1) as u64) as usize;
    Ok(if j >= x { j + 1 } else { j })
}

/// Probability that binary randomized response flips a given bit.
pub fn brr_flip_prob(epsilon: f64) -> f64 {
    1.0 / ((0.5 * epsilon).exp() + 1.0)
}

fn brr_into<R: Rng + ?Sized>(x: usize, d: usize, flip: f64, rng: &mut R, out: &mut Vec<usize>) {
    out.clear();
    for i in 0..d {
        let bit = (i == x) ^ (rng.random::<f64>() < flip);
        if bit {
            out.push(i);
        }
    }
}

/// Binary randomized response: flip each bit of the one-hot encoding of `x`
/// independently with probability `1/(e^{ε/2} + 1)`.
pub fn brr_randomize<R: Rng + ?Sized>(
    x: usize,
    params: &PrivacyParams,
    rng: &mut R,
) -> Result<SubsetView> {
    params.check_symbol(x)?;
    let mut out = Vec::new();
    brr_into(
        x,
        params.d(),
        brr_flip_prob(params.epsilon()),
        rng,
        &mut out,
    );
    Ok(SubsetView::from_sorted(out))
}

/// A mechanism with its subset size resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mechanism {
    /// Binary randomized response.
    Brr,
    /// Multivariate randomized response.
    Mrr,
    /// k-subset with the given size.
    KSubset(usize),
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mechanism::Brr => f.write_str("BRR"),
            Mechanism::Mrr => f.write_str("MRR"),
            Mechanism::KSubset(k) => write!(f, "KSS(k={k})"),
        }
    }
}

/// A ready-to-run randomizer for any [`Mechanism`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Randomizer {
    Brr { d: usize, flip: f64 },
    Mrr { d: usize, keep: f64 },
    KSubset(KSubsetRandomizer),
}

impl Randomizer {
    pub fn new(mechanism: Mechanism, params: &PrivacyParams) -> Result<Self> {
        let d = params.d();
        Ok(match mechanism {
            Mechanism::Brr => Randomizer::Brr {
                d,
                flip: brr_flip_prob(params.epsilon()),
            },
            Mechanism::Mrr => {
                let e = params.exp_eps();
                let keep = if e.is_finite() {
                    e / (e + (d - 1) as f64)
                } else {
                    1.0
                };
                Randomizer::Mrr { d, keep }
            }
            Mechanism::KSubset(k) => Randomizer::KSubset(KSubsetRandomizer::new(params, k)?),
        })
    }

    pub fn d(&self) -> usize {
        match self {
            Randomizer::Brr { d, .. } | Randomizer::Mrr { d, .. } => *d,
            Randomizer::KSubset(r) => r.d,
        }
    }

    /// Exact view size if the mechanism fixes one.
    pub fn view_size(&self) -> Option<usize> {
        match self {
            Randomizer::Brr { .. } => None,
            Randomizer::Mrr { .. } => Some(1),
            Randomizer::KSubset(r) => Some(r.k),
        }
    }

    /// Writes the sorted view for `x` into `out`.
    pub fn randomize_into<R: Rng + ?Sized>(
        &self,
        x: usize,
        rng: &mut R,
        out: &mut Vec<usize>,
    ) -> Result<()> {
        match *self {
            Randomizer::Brr { d, flip } => {
                if x >= d {
                    return Err(Error::SymbolOutOfRange { x, d });
                }
                brr_into(x, d, flip, rng, out);
            }
            Randomizer::Mrr { d, keep } => {
                if x >= d {
                    return Err(Error::SymbolOutOfRange { x, d });
                }
                out.clear();
                let z = if rng.random::<f64>() < keep {
                    x
                } else {
                    let j = uniform_below(rng, (d - 1) as u64) as usize;
                    if j >= x {
                        j + 1
                    } else {
                        j
                    }
                };
                out.push(z);
            }
            Randomizer::KSubset(r) => r.randomize_into(x, rng, out)?,
        }
        Ok(())
    }

    pub fn randomize<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> Result<SubsetView> {
        let mut out = Vec::new();
        self.randomize_into(x, rng, &mut out)?;
        Ok(SubsetView::from_sorted(out))
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    /// Parses `brr`, `mrr`, or `kss:<k>` (case-insensitive).
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "brr" => Ok(Mechanism::Brr),
            "mrr" => Ok(Mechanism::Mrr),
            _ => lower
                .strip_prefix("kss:")
                .and_then(|k| k.parse().ok())
                .map(Mechanism::KSubset)
                .ok_or_else(|| Error::InvalidMechanism(format!("unknown mechanism '{s}'"))),
        }
    }
}
