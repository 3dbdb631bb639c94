//! C ABI for the `ksubset` library.
//!
//! Conventions:
//!
//! - Every fallible function returns a [`KsStatus`] and writes results
//!   through out-pointers, which are left untouched on failure.
//! - On failure a message is stored for the calling thread and can be read
//!   with [`ks_last_error_message`].
//! - Handles ([`KsRandomizer`], [`KsAggregator`], [`KsChannel`]) are opaque,
//!   created by `*_new` functions and released by the matching `*_free`.
//!   Passing NULL to a `*_free` function is a no-op.
//! - Panics never cross the boundary; they surface as `KS_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ksubset::channels::{self, Channel};
use ksubset::estimation::{self, FrequencyVector, HitRates};
use ksubset::information;
use ksubset::rng::RngStream;
use ksubset::sampling::{Mechanism, Randomizer};
use ksubset::simulation::{self, ExperimentConfig, MechanismKind};
use ksubset::{Error, PrivacyParams};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// Parameters violate a precondition (ε ≤ 0, d < 2, unknown mechanism, ...).
    InvalidArgument = 2,
    /// An index or subset size is outside its allowed range.
    OutOfRange = 3,
    /// An output buffer is too small; the required length is still reported.
    BufferTooSmall = 4,
    /// No views have been aggregated yet.
    NoData = 5,
    /// A computation left its supported numeric range.
    Numeric = 6,
    /// A Rust panic was caught.
    Internal = 7,
}

/// Mechanism selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsMechanism {
    /// Binary randomized response; `k` is ignored.
    Brr = 0,
    /// Multivariate randomized response; `k` is ignored.
    Mrr = 1,
    /// k-subset with the caller's `k`.
    KSubset = 2,
    /// k-subset at the information-optimal size.
    KSubsetMi = 3,
    /// k-subset at the ℓ₂-optimal size.
    KSubsetL2 = 4,
}

/// Error statistics for one mechanism of [`ks_run_experiment`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsMechanismResult {
    pub mechanism: KsMechanism,
    /// Subset size, or 0 for BRR and MRR.
    pub k: usize,
    pub mean_l2_sq: f64,
    pub se_l2_sq: f64,
    pub mean_l1: f64,
    pub se_l1: f64,
}

/// A seeded randomizer for one mechanism.
pub struct KsRandomizer {
    randomizer: Randomizer,
    rng: RngStream,
    scratch: Vec<usize>,
}

/// Accumulates views and produces distribution estimates.
pub struct KsAggregator {
    freq: FrequencyVector,
    rates: HitRates,
    view_size: Option<usize>,
}

/// An explicit channel matrix.
pub struct KsChannel {
    channel: Channel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(error: &Error) -> KsStatus {
    match error {
        Error::SubsetSizeOutOfRange { .. }
        | Error::SymbolOutOfRange { .. }
        | Error::TooLarge { .. } => KsStatus::OutOfRange,
        Error::NoViews => KsStatus::NoData,
        Error::NumericRange(_) | Error::Generation(_) => KsStatus::Numeric,
        _ => KsStatus::InvalidArgument,
    }
}

struct Failure(KsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(KsStatus::NullPointer, format!("{name} is NULL"))
}

fn guard<F>(f: F) -> KsStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KsStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            KsStatus::Internal
        }
    }
}

/// Writes `value` through `out`, failing on NULL.
unsafe fn put<T>(out: *mut T, name: &str, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    *out = value;
    Ok(())
}

fn params(d: usize, epsilon: f64) -> Result<PrivacyParams, Failure> {
    Ok(PrivacyParams::new(epsilon, d)?)
}

fn mechanism_of(
    kind: KsMechanism,
    k: usize,
    p: &PrivacyParams,
    n: u64,
) -> Result<Mechanism, Failure> {
    let kind = match kind {
        KsMechanism::Brr => MechanismKind::Brr,
        KsMechanism::Mrr => MechanismKind::Mrr,
        KsMechanism::KSubset => MechanismKind::Kss(k),
        KsMechanism::KSubsetMi => MechanismKind::KssMi,
        KsMechanism::KSubsetL2 => MechanismKind::KssL2,
    };
    Ok(kind.resolve(p, n)?)
}

/// Message for the last failure on this thread, or NULL if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ks_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ks_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// I_k in nats for `0 <= k <= d`.
///
/// # Safety
/// `out` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_mutual_info_ik(
    d: usize,
    epsilon: f64,
    k: usize,
    out: *mut f64,
) -> KsStatus {
    guard(|| {
        put(
            out,
            "out",
            information::mutual_info_ik(&params(d, epsilon)?, k)?,
        )
    })
}

/// The continuous maximizer β of I_k.
///
/// # Safety
/// `out` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_beta_optimal(d: usize, epsilon: f64, out: *mut f64) -> KsStatus {
    guard(|| put(out, "out", information::beta_optimal(&params(d, epsilon)?)))
}

/// Information-optimal subset size and its I_k.
///
/// # Safety
/// Out-pointers must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_kstar(
    d: usize,
    epsilon: f64,
    out_k: *mut usize,
    out_info: *mut f64,
) -> KsStatus {
    guard(|| {
        if out_k.is_null() || out_info.is_null() {
            return Err(null("output pointer"));
        }
        let c = information::kstar(&params(d, epsilon)?);
        *out_k = c.k;
        *out_info = c.objective_value;
        Ok(())
    })
}

/// ℓ₂-optimal subset size and its expected squared ℓ₂ error at `n` views.
///
/// # Safety
/// Out-pointers must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_ksharp(
    d: usize,
    epsilon: f64,
    n: u64,
    out_k: *mut usize,
    out_l2: *mut f64,
) -> KsStatus {
    guard(|| {
        if out_k.is_null() || out_l2.is_null() {
            return Err(null("output pointer"));
        }
        let c = estimation::ksharp(&params(d, epsilon)?, n)?;
        *out_k = c.k;
        *out_l2 = c.objective_value;
        Ok(())
    })
}

/// Maximum mutual information over subset sizes, in nats.
///
/// # Safety
/// `out` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_max_mutual_info(d: usize, epsilon: f64, out: *mut f64) -> KsStatus {
    guard(|| {
        put(
            out,
            "out",
            information::max_mutual_info(&params(d, epsilon)?),
        )
    })
}

/// Mutual information of binary randomized response and its upper bound.
///
/// # Safety
/// Out-pointers must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_brr_mutual_info(
    d: usize,
    epsilon: f64,
    out_info: *mut f64,
    out_bound: *mut f64,
) -> KsStatus {
    guard(|| {
        if out_info.is_null() || out_bound.is_null() {
            return Err(null("output pointer"));
        }
        let b = information::brr_mutual_info(&params(d, epsilon)?)?;
        *out_info = b.series;
        *out_bound = b.bound;
        Ok(())
    })
}

/// Expected squared ℓ₂ error of the unprojected k-subset estimate.
///
/// # Safety
/// `out` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_analytic_l2_error(
    d: usize,
    epsilon: f64,
    k: usize,
    n: u64,
    out: *mut f64,
) -> KsStatus {
    guard(|| {
        put(
            out,
            "out",
            estimation::analytic_l2_error(&params(d, epsilon)?, k, n)?,
        )
    })
}

/// Own-symbol and other-symbol hit rates of a mechanism.
///
/// # Safety
/// Out-pointers must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_hit_rates(
    d: usize,
    epsilon: f64,
    mechanism: KsMechanism,
    k: usize,
    out_g: *mut f64,
    out_h: *mut f64,
) -> KsStatus {
    guard(|| {
        if out_g.is_null() || out_h.is_null() {
            return Err(null("output pointer"));
        }
        let p = params(d, epsilon)?;
        let r = estimation::hit_rates(mechanism_of(mechanism, k, &p, 1)?, &p)?;
        *out_g = r.g();
        *out_h = r.h();
        Ok(())
    })
}

/// Creates a randomizer drawing from a stream seeded with `seed`.
///
/// # Safety
/// `out` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_randomizer_new(
    d: usize,
    epsilon: f64,
    mechanism: KsMechanism,
    k: usize,
    seed: u64,
    out: *mut *mut KsRandomizer,
) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = params(d, epsilon)?;
        let randomizer = Randomizer::new(mechanism_of(mechanism, k, &p, 1)?, &p)?;
        let handle = KsRandomizer {
            randomizer,
            rng: RngStream::from_seed(seed),
            scratch: Vec::with_capacity(d),
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Fixed view size of the randomizer's mechanism, or 0 when views vary in
/// size (BRR).
///
/// # Safety
/// `r` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ks_randomizer_view_size(r: *const KsRandomizer) -> usize {
    r.as_ref()
        .and_then(|r| r.randomizer.view_size())
        .unwrap_or(0)
}

/// Privatizes secret `x`, writing the ascending view members into
/// `members[0..*out_len]`. A buffer of `d` entries always suffices. On
/// `KS_STATUS_BUFFER_TOO_SMALL`, `*out_len` holds the needed length and the
/// draw is discarded.
///
/// # Safety
/// `r` must be a live handle; `members` must be valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn ks_randomizer_randomize(
    r: *mut KsRandomizer,
    x: usize,
    members: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> KsStatus {
    guard(|| {
        let r = r.as_mut().ok_or_else(|| null("randomizer"))?;
        if out_len.is_null() || (members.is_null() && capacity > 0) {
            return Err(null("output pointer"));
        }
        let KsRandomizer {
            randomizer,
            rng,
            scratch,
        } = r;
        randomizer.randomize_into(x, rng, scratch)?;
        *out_len = scratch.len();
        if scratch.len() > capacity {
            return Err(Failure(
                KsStatus::BufferTooSmall,
                format!("view needs {} entries", scratch.len()),
            ));
        }
        if !scratch.is_empty() {
            ptr::copy_nonoverlapping(scratch.as_ptr(), members, scratch.len());
        }
        Ok(())
    })
}

/// # Safety
/// `r` must be NULL or a handle from [`ks_randomizer_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ks_randomizer_free(r: *mut KsRandomizer) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Creates an aggregator for views produced by `mechanism`.
///
/// # Safety
/// `out` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_aggregator_new(
    d: usize,
    epsilon: f64,
    mechanism: KsMechanism,
    k: usize,
    out: *mut *mut KsAggregator,
) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = params(d, epsilon)?;
        let m = mechanism_of(mechanism, k, &p, 1)?;
        let view_size = match m {
            Mechanism::KSubset(k) => Some(k),
            Mechanism::Mrr => Some(1),
            Mechanism::Brr => None,
        };
        let handle = KsAggregator {
            freq: FrequencyVector::new(d),
            rates: estimation::hit_rates(m, &p)?,
            view_size,
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Adds one view of `len` strictly ascending members.
///
/// # Safety
/// `a` must be a live handle; `members` must be valid for `len` reads.
#[no_mangle]
pub unsafe extern "C" fn ks_aggregator_add_view(
    a: *mut KsAggregator,
    members: *const usize,
    len: usize,
) -> KsStatus {
    guard(|| {
        let a = a.as_mut().ok_or_else(|| null("aggregator"))?;
        let view: &[usize] = if len == 0 {
            &[]
        } else if members.is_null() {
            return Err(null("members"));
        } else {
            std::slice::from_raw_parts(members, len)
        };
        if let Some(k) = a.view_size {
            if len != k {
                return Err(Failure(
                    KsStatus::InvalidArgument,
                    format!("view has {len} members, expected {k}"),
                ));
            }
        }
        if view.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Failure(
                KsStatus::InvalidArgument,
                "members must be strictly ascending".into(),
            ));
        }
        a.freq.add_members(view)?;
        Ok(())
    })
}

/// Number of views added so far, or 0 for NULL.
///
/// # Safety
/// `a` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ks_aggregator_count(a: *const KsAggregator) -> u64 {
    a.as_ref().map_or(0, |a| a.freq.n())
}

/// Writes the `d`-entry estimate into `theta`, projected onto the simplex
/// when `project` is true.
///
/// # Safety
/// `a` must be a live handle; `theta` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ks_aggregator_estimate(
    a: *const KsAggregator,
    project: bool,
    theta: *mut f64,
    len: usize,
) -> KsStatus {
    guard(|| {
        let a = a.as_ref().ok_or_else(|| null("aggregator"))?;
        if theta.is_null() {
            return Err(null("theta"));
        }
        let d = a.freq.d();
        if len < d {
            return Err(Failure(
                KsStatus::BufferTooSmall,
                format!("estimate needs {d} entries"),
            ));
        }
        let mut est = estimation::remap_estimate(&a.freq, &a.rates)?;
        if project {
            est = estimation::project_simplex(&est);
        }
        ptr::copy_nonoverlapping(est.theta_hat.as_ptr(), theta, d);
        Ok(())
    })
}

/// # Safety
/// `a` must be NULL or a handle from [`ks_aggregator_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ks_aggregator_free(a: *mut KsAggregator) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

/// Builds the explicit channel of a mechanism (`d <= 20`).
///
/// # Safety
/// `out` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_channel_new(
    d: usize,
    epsilon: f64,
    mechanism: KsMechanism,
    k: usize,
    out: *mut *mut KsChannel,
) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = params(d, epsilon)?;
        let channel = match mechanism_of(mechanism, k, &p, 1)? {
            Mechanism::Brr => channels::brr_channel(&p)?,
            Mechanism::Mrr => channels::mrr_channel(&p)?,
            Mechanism::KSubset(k) => channels::ksubset_channel(&p, k)?,
        };
        *out = Box::into_raw(Box::new(KsChannel { channel }));
        Ok(())
    })
}

/// Number of output columns, or 0 for NULL.
///
/// # Safety
/// `c` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ks_channel_num_outputs(c: *const KsChannel) -> usize {
    c.as_ref().map_or(0, |c| c.channel.num_outputs())
}

/// Conditional probability of output column `z` given input `x`.
///
/// # Safety
/// `c` must be a live handle; `out` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_channel_prob(
    c: *const KsChannel,
    x: usize,
    z: usize,
    out: *mut f64,
) -> KsStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("channel"))?;
        let (d, m) = (c.channel.d(), c.channel.num_outputs());
        if x >= d || z >= m {
            return Err(Failure(
                KsStatus::OutOfRange,
                format!("({x}, {z}) outside {d}x{m}"),
            ));
        }
        put(out, "out", c.channel.prob(x, z))
    })
}

/// Mutual information under a uniform prior, in nats.
///
/// # Safety
/// `c` must be a live handle; `out` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_channel_mutual_info(c: *const KsChannel, out: *mut f64) -> KsStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("channel"))?;
        put(out, "out", channels::brute_force_mi(&c.channel)?)
    })
}

/// Checks ε-local differential privacy; reports the worst column ratio.
///
/// # Safety
/// `c` must be a live handle; out-pointers must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_channel_validate_ldp(
    c: *const KsChannel,
    epsilon: f64,
    out_satisfied: *mut bool,
    out_worst_ratio: *mut f64,
) -> KsStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("channel"))?;
        if out_satisfied.is_null() || out_worst_ratio.is_null() {
            return Err(null("output pointer"));
        }
        let report = channels::validate_ldp(&c.channel, epsilon);
        *out_satisfied = report.satisfied;
        *out_worst_ratio = report.worst_ratio;
        Ok(())
    })
}

/// # Safety
/// `c` must be NULL or a handle from [`ks_channel_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ks_channel_free(c: *mut KsChannel) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Runs the Monte Carlo experiment for BRR, MRR, and both optimal k-subset
/// sizes, writing four results into `out` in that order. `threads == 0`
/// uses the default pool; the thread count never affects results.
///
/// # Safety
/// `out` must be valid for `capacity` writes; `out_len` for one write.
#[no_mangle]
pub unsafe extern "C" fn ks_run_experiment(
    d: usize,
    epsilon: f64,
    n: u64,
    reps: usize,
    seed: u64,
    threads: usize,
    project: bool,
    out: *mut KsMechanismResult,
    capacity: usize,
    out_len: *mut usize,
) -> KsStatus {
    guard(|| {
        if out.is_null() || out_len.is_null() {
            return Err(null("output pointer"));
        }
        let mut config = ExperimentConfig::new(d, epsilon, n, reps, seed);
        config.project = project;
        config.threads = (threads > 0).then_some(threads);
        *out_len = config.mechanisms.len();
        if capacity < config.mechanisms.len() {
            return Err(Failure(
                KsStatus::BufferTooSmall,
                format!("need {} results", config.mechanisms.len()),
            ));
        }
        let result = simulation::run_experiment(&config)?;
        for (i, m) in result.mechanisms.iter().enumerate() {
            let mechanism = match m.mechanism {
                MechanismKind::Brr => KsMechanism::Brr,
                MechanismKind::Mrr => KsMechanism::Mrr,
                MechanismKind::KssMi => KsMechanism::KSubsetMi,
                MechanismKind::KssL2 => KsMechanism::KSubsetL2,
                MechanismKind::Kss(_) => KsMechanism::KSubset,
            };
            *out.add(i) = KsMechanismResult {
                mechanism,
                k: m.k.unwrap_or(0),
                mean_l2_sq: m.mean_l2_sq,
                se_l2_sq: m.se_l2_sq,
                mean_l1: m.mean_l1,
                se_l1: m.se_l1,
            };
        }
        Ok(())
    })
}
