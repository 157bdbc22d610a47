//! C ABI over the steerlab core.
//!
//! Every fallible function returns an [`SlStatus`]; on failure the message is
//! available from [`sl_last_error`] on the same thread. Objects are opaque
//! handles created by `sl_*_new`-style functions and released with the
//! matching `sl_*_free`. Output arrays are caller-allocated: pass the buffer
//! and its length, and the call fails with `SL_STATUS_BUFFER_TOO_SMALL` if the
//! length is short. Strings returned through `char **` are owned by the caller
//! and must be released with [`sl_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use steerlab::analysis::{self, Direction, Peak, PeakOptions};
use steerlab::config::RunConfig;
use steerlab::dataset::DatasetSpec;
use steerlab::nalgebra::DVector;
use steerlab::steering::{self, LogOddsProfile, SteeringMode, SteeringSpec, DEFAULT_TIE_TOL};
use steerlab::transformer::{NormKind, Sign, SteerPositions, TransformerParams, TransformerShape};
use steerlab::ufm::{self, TrainConfig, UfmParams};
use steerlab::{verify, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Validation = 3,
    Domain = 4,
    OutOfRange = 5,
    Diverged = 6,
    BracketExhausted = 7,
    Config = 8,
    Io = 9,
    Parse = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

impl From<&Error> for SlStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Validation(_) => SlStatus::Validation,
            Error::Domain(_) => SlStatus::Domain,
            Error::OutOfRange { .. } => SlStatus::OutOfRange,
            Error::Diverged { .. } => SlStatus::Diverged,
            Error::BracketExhausted { .. } => SlStatus::BracketExhausted,
            Error::Config { .. } => SlStatus::Config,
            Error::Io { .. } => SlStatus::Io,
            Error::Json(_) | Error::Csv(_) => SlStatus::Parse,
        }
    }
}

/// Concept dataset: partition, probabilities and contexts.
pub struct SlDataset {
    inner: DatasetSpec,
}

/// Unconstrained-features parameters `(W, H)`.
pub struct SlUfm {
    inner: UfmParams,
}

/// Steering vector together with its index sets and log-odds profile.
pub struct SlSteering {
    spec: SteeringSpec,
    profile: LogOddsProfile,
}

/// Toy pre-norm transformer.
pub struct SlToyModel {
    inner: TransformerParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(SlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(SlStatus::from(&e), e.to_string())
    }
}

type FfiResult = std::result::Result<(), Fail>;

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(SlStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any error message and converts panics into `Panic`.
fn guard(f: impl FnOnce() -> FfiResult) -> SlStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SlStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            SlStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> std::result::Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(SlStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> std::result::Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(SlStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> std::result::Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(SlStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> std::result::Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(SlStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn write_out(values: &[f64], out: *mut f64, out_len: usize) -> FfiResult {
    if out.is_null() {
        return Err(Fail(SlStatus::NullPointer, "output buffer is null".into()));
    }
    if out_len < values.len() {
        return Err(Fail(
            SlStatus::BufferTooSmall,
            format!("output buffer holds {out_len} values, {} needed", values.len()),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn write_string(s: String, out: *mut *mut c_char) -> FfiResult {
    let slot = out_ref(out, "string output")?;
    let c = CString::new(s).map_err(|_| invalid("string contains a nul byte"))?;
    *slot = c.into_raw();
    Ok(())
}

unsafe fn emit<T>(value: T, out: *mut *mut T) -> FfiResult {
    let slot = out_ref(out, "handle output")?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn direction(sign: c_int) -> std::result::Result<Direction, Fail> {
    match sign {
        1 => Ok(Direction::Plus),
        -1 => Ok(Direction::Minus),
        _ => Err(invalid("sign must be +1 or -1")),
    }
}

/// Message of the last failed call on this thread, or null if the last call
/// succeeded. The pointer stays valid until the next `sl_*` call on the same
/// thread.
#[no_mangle]
pub extern "C" fn sl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, nul-terminated library version.
#[no_mangle]
pub extern "C" fn sl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---- dataset ----

/// Symmetric dataset with `per_concept` contexts per concept.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn sl_dataset_symmetric(
    vocab_size: usize,
    group_count: usize,
    seq_len: usize,
    epsilon: f64,
    per_concept: usize,
    seed: u64,
    out: *mut *mut SlDataset,
) -> SlStatus {
    guard(|| {
        let ds = DatasetSpec::symmetric(vocab_size, group_count, seq_len, epsilon, per_concept, seed)?;
        emit(SlDataset { inner: ds }, out)
    })
}

/// Weighted dataset; `gamma` and `omega` each hold `vocab_size` values.
///
/// # Safety
/// `gamma` and `omega` must point to `len` readable doubles; `out` must be a
/// valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn sl_dataset_weighted(
    vocab_size: usize,
    group_count: usize,
    seq_len: usize,
    epsilon: f64,
    gamma: *const f64,
    omega: *const f64,
    len: usize,
    per_concept: usize,
    seed: u64,
    out: *mut *mut SlDataset,
) -> SlStatus {
    guard(|| {
        let g = slice(gamma, len, "gamma")?;
        let o = slice(omega, len, "omega")?;
        let ds = DatasetSpec::weighted(vocab_size, group_count, seq_len, epsilon, g, o, per_concept, seed)?;
        emit(SlDataset { inner: ds }, out)
    })
}

/// The reference instance (V=9, G=3, T=4, eps=0.1, four contexts per concept).
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn sl_dataset_canonical(out: *mut *mut SlDataset) -> SlStatus {
    guard(|| emit(SlDataset { inner: DatasetSpec::canonical() }, out))
}

/// Parses a dataset document. Documents violating the sign-separation
/// assumption are rejected.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn sl_dataset_from_json(json: *const c_char, out: *mut *mut SlDataset) -> SlStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        emit(SlDataset { inner: DatasetSpec::from_json(text)? }, out)
    })
}

/// Serializes the dataset; release the result with [`sl_string_free`].
///
/// # Safety
/// `ds` must be a live handle; `out` a valid string slot.
#[no_mangle]
pub unsafe extern "C" fn sl_dataset_to_json(ds: *const SlDataset, out: *mut *mut c_char) -> SlStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        write_string(ds.inner.to_json()?, out)
    })
}

/// Vocabulary size, concept count and context count.
///
/// # Safety
/// `ds` must be a live handle; the outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sl_dataset_shape(
    ds: *const SlDataset,
    vocab_size: *mut usize,
    group_count: *mut usize,
    context_count: *mut usize,
) -> SlStatus {
    guard(|| {
        let ds = &deref(ds, "dataset")?.inner;
        *out_ref(vocab_size, "vocab_size")? = ds.vocab_size();
        *out_ref(group_count, "group_count")? = ds.partition().group_count();
        *out_ref(context_count, "context_count")? = ds.context_count();
        Ok(())
    })
}

/// Concept index of context `j`.
///
/// # Safety
/// `ds` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_dataset_concept_of_context(ds: *const SlDataset, j: usize, out: *mut usize) -> SlStatus {
    guard(|| {
        let ds = &deref(ds, "dataset")?.inner;
        if j >= ds.context_count() {
            return Err(Error::OutOfRange { what: "contexts", index: j, len: ds.context_count() }.into());
        }
        *out_ref(out, "output")? = ds.concept_of_context(j);
        Ok(())
    })
}

/// Next-token distribution of context `j` (`vocab_size` values).
///
/// # Safety
/// `ds` must be a live handle; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sl_dataset_next_token(ds: *const SlDataset, j: usize, out: *mut f64, out_len: usize) -> SlStatus {
    guard(|| {
        let p = deref(ds, "dataset")?.inner.next_token_distribution(j)?;
        write_out(&p, out, out_len)
    })
}

/// Weighted next-token entropy, the minimal attainable cross-entropy.
///
/// # Safety
/// `ds` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_dataset_entropy(ds: *const SlDataset, out: *mut f64) -> SlStatus {
    guard(|| {
        *out_ref(out, "output")? = deref(ds, "dataset")?.inner.entropy();
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sl_dataset_free(ds: *mut SlDataset) {
    free(ds)
}

// ---- unconstrained-features model ----

/// Closed-form minimizer `W = I`, `h_j = log p(.|c_j)`.
///
/// # Safety
/// `ds` must be a live handle; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn sl_ufm_perfect_fit(ds: *const SlDataset, out: *mut *mut SlUfm) -> SlStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        emit(SlUfm { inner: ufm::analytic_perfect_fit(&ds.inner) }, out)
    })
}

/// Full-batch gradient descent with `d = V`. `final_loss` may be null.
///
/// # Safety
/// `ds` must be a live handle; `out` a valid handle slot; `final_loss` null
/// or valid.
#[no_mangle]
pub unsafe extern "C" fn sl_ufm_train(
    ds: *const SlDataset,
    learning_rate: f64,
    steps: usize,
    init_scale: f64,
    seed: u64,
    out: *mut *mut SlUfm,
    final_loss: *mut f64,
) -> SlStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        let cfg = TrainConfig { dim: None, learning_rate, steps, init_scale, seed };
        let outcome = ufm::train_gd(&ds.inner, &cfg)?;
        if let Some(slot) = final_loss.as_mut() {
            *slot = *outcome.losses.last().expect("at least the initial loss");
        }
        emit(SlUfm { inner: outcome.params }, out)
    })
}

/// Unsteered logits `W h_j` (`vocab_size` values).
///
/// # Safety
/// `m` must be a live handle; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sl_ufm_logits(m: *const SlUfm, j: usize, out: *mut f64, out_len: usize) -> SlStatus {
    guard(|| {
        let z = deref(m, "model")?.inner.logits(j)?;
        write_out(&z, out, out_len)
    })
}

/// Weighted cross-entropy of the model on the dataset.
///
/// # Safety
/// Handles must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_ufm_cross_entropy(m: *const SlUfm, ds: *const SlDataset, out: *mut f64) -> SlStatus {
    guard(|| {
        let ce = ufm::cross_entropy(&deref(m, "model")?.inner, &deref(ds, "dataset")?.inner)?;
        *out_ref(out, "output")? = ce;
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sl_ufm_free(m: *mut SlUfm) {
    free(m)
}

// ---- steering ----

/// Builds a steering vector toward concept `target` from `pairs` sampled
/// positive/negative contexts. With `contrastive` nonzero the negatives come
/// from concept `opposite`; otherwise they are any non-target contexts.
///
/// # Safety
/// Handles must be live; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn sl_steering_build(
    ds: *const SlDataset,
    m: *const SlUfm,
    target: usize,
    contrastive: c_int,
    opposite: usize,
    pairs: usize,
    seed: u64,
    out: *mut *mut SlSteering,
) -> SlStatus {
    guard(|| {
        let ds = &deref(ds, "dataset")?.inner;
        let m = &deref(m, "model")?.inner;
        let mode = if contrastive != 0 {
            SteeringMode::Contrastive { opposite }
        } else {
            SteeringMode::Random
        };
        let spec = SteeringSpec::build(ds, m, target, mode, pairs, seed)?;
        let profile = steering::log_odds(ds, &spec.positive, &spec.negative, DEFAULT_TIE_TOL)?;
        emit(SlSteering { spec, profile }, out)
    })
}

/// Number of positive/negative pairs and the vector width.
///
/// # Safety
/// `st` must be a live handle; outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sl_steering_shape(st: *const SlSteering, pairs: *mut usize, dim: *mut usize) -> SlStatus {
    guard(|| {
        let st = deref(st, "steering")?;
        *out_ref(pairs, "pairs")? = st.spec.pair_count();
        *out_ref(dim, "dim")? = st.spec.vector.len();
        Ok(())
    })
}

/// The steering vector `v` (`dim` values).
///
/// # Safety
/// `st` must be a live handle; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sl_steering_vector(st: *const SlSteering, out: *mut f64, out_len: usize) -> SlStatus {
    guard(|| write_out(&deref(st, "steering")?.spec.vector, out, out_len))
}

/// Per-token log-odds `M` (`vocab_size` values).
///
/// # Safety
/// `st` must be a live handle; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sl_steering_log_odds(st: *const SlSteering, out: *mut f64, out_len: usize) -> SlStatus {
    guard(|| write_out(&deref(st, "steering")?.profile.values, out, out_len))
}

/// Positive and negative context indices (`pairs` values each). Either
/// output may be null to skip it.
///
/// # Safety
/// `st` must be a live handle; non-null outputs must hold `len` entries.
#[no_mangle]
pub unsafe extern "C" fn sl_steering_index_sets(
    st: *const SlSteering,
    positive: *mut usize,
    negative: *mut usize,
    len: usize,
) -> SlStatus {
    guard(|| {
        let st = deref(st, "steering")?;
        let q = st.spec.pair_count();
        if len < q {
            return Err(Fail(SlStatus::BufferTooSmall, format!("index buffers hold {len}, {q} needed")));
        }
        if !positive.is_null() {
            ptr::copy_nonoverlapping(st.spec.positive.as_ptr(), positive, q);
        }
        if !negative.is_null() {
            ptr::copy_nonoverlapping(st.spec.negative.as_ptr(), negative, q);
        }
        Ok(())
    })
}

/// Steered distribution of context `j` at strength `alpha`.
///
/// # Safety
/// Handles must be live; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sl_steered_probs(
    ds: *const SlDataset,
    st: *const SlSteering,
    j: usize,
    alpha: f64,
    out: *mut f64,
    out_len: usize,
) -> SlStatus {
    guard(|| {
        let s = steering::steered_probs_closed_form(&deref(ds, "dataset")?.inner, &deref(st, "steering")?.profile, j, alpha)?;
        write_out(&s, out, out_len)
    })
}

/// # Safety
/// `st` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sl_steering_free(st: *mut SlSteering) {
    free(st)
}

// ---- strength analysis ----

/// Shared body of the scalar `(ds, steering) -> f64` analysis calls.
unsafe fn scalar(
    ds: *const SlDataset,
    st: *const SlSteering,
    out: *mut f64,
    f: impl FnOnce(&DatasetSpec, &SlSteering) -> steerlab::Result<f64>,
) -> SlStatus {
    guard(|| {
        let value = f(&deref(ds, "dataset")?.inner, deref(st, "steering")?)?;
        *out_ref(out, "output")? = value;
        Ok(())
    })
}

/// `Δp(z|c_j, α)`.
///
/// # Safety
/// Handles must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_delta_p(ds: *const SlDataset, st: *const SlSteering, j: usize, z: usize, alpha: f64, out: *mut f64) -> SlStatus {
    scalar(ds, st, out, |d, s| analysis::delta_p(d, &s.profile, j, z, alpha))
}

/// `dΔp(z|c_j, α)/dα`.
///
/// # Safety
/// Handles must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_delta_p_derivative(ds: *const SlDataset, st: *const SlSteering, j: usize, z: usize, alpha: f64, out: *mut f64) -> SlStatus {
    scalar(ds, st, out, |d, s| analysis::delta_p_derivative(d, &s.profile, j, z, alpha))
}

/// Expected log-odds under the steered distribution.
///
/// # Safety
/// Handles must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_expected_log_odds(ds: *const SlDataset, st: *const SlSteering, j: usize, alpha: f64, out: *mut f64) -> SlStatus {
    scalar(ds, st, out, |d, s| analysis::expected_log_odds(d, &s.profile, j, alpha))
}

/// Variance of the log-odds under the steered distribution, the derivative
/// of the expected log-odds.
///
/// # Safety
/// Handles must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_expected_log_odds_derivative(ds: *const SlDataset, st: *const SlSteering, j: usize, alpha: f64, out: *mut f64) -> SlStatus {
    scalar(ds, st, out, |d, s| analysis::expected_log_odds_derivative(d, &s.profile, j, alpha))
}

/// Strength maximizing `Δp(z|c_j, ·)`, with default bisection settings.
/// Writes `+inf` (`-inf`) for tokens whose curve increases (decreases) on
/// the whole line.
///
/// # Safety
/// Handles must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_peak_alpha(ds: *const SlDataset, st: *const SlSteering, j: usize, z: usize, out: *mut f64) -> SlStatus {
    scalar(ds, st, out, |d, s| {
        analysis::peak_alpha(d, &s.profile, j, z, &PeakOptions::default()).map(|p: Peak| p.as_f64())
    })
}

/// Average probability increase over the tokens of `concept`.
///
/// # Safety
/// Handles must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_concept_increase(ds: *const SlDataset, st: *const SlSteering, j: usize, concept: usize, alpha: f64, out: *mut f64) -> SlStatus {
    scalar(ds, st, out, |d, s| analysis::concept_increase(d, &s.profile, j, concept, alpha))
}

/// Logistic decomposition of the concept mass: offset `r`, integral `nu`,
/// and the reconstruction error against the direct mass. Any output may be
/// null. `points` of 0 selects the default quadrature.
///
/// # Safety
/// Handles must be live; non-null outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sl_tanh_decomposition(
    ds: *const SlDataset,
    st: *const SlSteering,
    j: usize,
    concept: usize,
    alpha: f64,
    points: usize,
    r: *mut f64,
    nu: *mut f64,
    reconstruction_error: *mut f64,
) -> SlStatus {
    guard(|| {
        let points = if points == 0 { analysis::DEFAULT_QUADRATURE_POINTS } else { points };
        let t = analysis::tanh_decomposition(&deref(ds, "dataset")?.inner, &deref(st, "steering")?.profile, j, concept, alpha, points)?;
        for (slot, v) in [(r, t.r), (nu, t.nu), (reconstruction_error, t.reconstruction_error)] {
            if let Some(s) = slot.as_mut() {
                *s = v;
            }
        }
        Ok(())
    })
}

/// Cross-entropy change when every embedding is shifted by `α v`.
///
/// # Safety
/// Handles must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_delta_ce(ds: *const SlDataset, m: *const SlUfm, st: *const SlSteering, alpha: f64, out: *mut f64) -> SlStatus {
    guard(|| {
        let v = deref(st, "steering")?.spec.vector();
        let value = analysis::delta_ce(&deref(ds, "dataset")?.inner, &deref(m, "model")?.inner, &v, alpha)?;
        *out_ref(out, "output")? = value;
        Ok(())
    })
}

/// Second-order coefficient of the cross-entropy change at the perfect fit.
///
/// # Safety
/// Handles must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_ce_quadratic_coefficient(ds: *const SlDataset, st: *const SlSteering, out: *mut f64) -> SlStatus {
    scalar(ds, st, out, |d, s| analysis::ce_quadratic_coefficient(d, &s.profile))
}

/// `lim Δp(z|c_j, α)` as `α → +∞` (`sign = 1`) or `-∞` (`sign = -1`).
///
/// # Safety
/// Handles must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_delta_p_limit(ds: *const SlDataset, st: *const SlSteering, j: usize, z: usize, sign: c_int, out: *mut f64) -> SlStatus {
    guard(|| {
        let dir = direction(sign)?;
        let value = analysis::delta_p_limit(&deref(ds, "dataset")?.inner, &deref(st, "steering")?.profile, j, z, dir)?;
        *out_ref(out, "output")? = value;
        Ok(())
    })
}

// ---- toy transformer ----

/// Normalization used by the toy model.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlNorm {
    Rms = 0,
    Layer = 1,
}

/// Seeded toy transformer.
///
/// # Safety
/// `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn sl_toy_from_seed(
    layers: usize,
    dim: usize,
    vocab: usize,
    seq_len: usize,
    norm: SlNorm,
    seed: u64,
    out: *mut *mut SlToyModel,
) -> SlStatus {
    guard(|| {
        let norm = match norm {
            SlNorm::Rms => NormKind::Rmsnorm,
            SlNorm::Layer => NormKind::Layernorm,
        };
        let shape = TransformerShape { layers, dim, vocab, seq_len, norm };
        emit(SlToyModel { inner: TransformerParams::from_seed(shape, seed)? }, out)
    })
}

/// Layer count, width and vocabulary size.
///
/// # Safety
/// `m` must be a live handle; outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sl_toy_shape(m: *const SlToyModel, layers: *mut usize, dim: *mut usize, vocab: *mut usize) -> SlStatus {
    guard(|| {
        let s = deref(m, "toy model")?.inner.shape;
        *out_ref(layers, "layers")? = s.layers;
        *out_ref(dim, "dim")? = s.dim;
        *out_ref(vocab, "vocab")? = s.vocab;
        Ok(())
    })
}

fn row_major(m: &steerlab::nalgebra::DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Logits for every position, row-major `n_tokens × vocab`. A `v` of null
/// (with `v_len` 0) or `alpha` of 0 gives the unsteered forward pass;
/// otherwise `α v` is added to the residual stream after `layer` blocks, at
/// the last position only if `last_only` is nonzero.
///
/// # Safety
/// `m` must be a live handle; `tokens` must hold `n_tokens` entries, `v`
/// `v_len` doubles, and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sl_toy_forward(
    m: *const SlToyModel,
    tokens: *const usize,
    n_tokens: usize,
    layer: usize,
    v: *const f64,
    v_len: usize,
    alpha: f64,
    last_only: c_int,
    out: *mut f64,
    out_len: usize,
) -> SlStatus {
    guard(|| {
        let model = &deref(m, "toy model")?.inner;
        let toks = slice(tokens, n_tokens, "tokens")?;
        let logits = if v_len == 0 {
            model.forward(toks)?
        } else {
            let v = DVector::from_column_slice(slice(v, v_len, "v")?);
            let pos = if last_only != 0 { SteerPositions::Last } else { SteerPositions::All };
            model.forward_steered(toks, layer, &v, alpha, pos)?
        };
        write_out(&row_major(&logits), out, out_len)
    })
}

/// Difference of position-averaged residuals after `layer` blocks between
/// two prompt sets, each given as `count` prompts of `prompt_len` tokens
/// laid out back to back. Writes `dim` values.
///
/// # Safety
/// `m` must be a live handle; each prompt array must hold
/// `count * prompt_len` entries and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sl_toy_steering_vector(
    m: *const SlToyModel,
    layer: usize,
    positive: *const usize,
    negative: *const usize,
    count: usize,
    prompt_len: usize,
    out: *mut f64,
    out_len: usize,
) -> SlStatus {
    guard(|| {
        let model = &deref(m, "toy model")?.inner;
        let n = count
            .checked_mul(prompt_len)
            .ok_or_else(|| invalid("prompt array size overflows"))?;
        if prompt_len == 0 {
            return Err(invalid("prompt_len must be positive"));
        }
        let split = |s: &[usize]| s.chunks(prompt_len).map(<[usize]>::to_vec).collect::<Vec<_>>();
        let pos = split(slice(positive, n, "positive")?);
        let neg = split(slice(negative, n, "negative")?);
        let v = model.steering_vector_from_prompts(layer, &pos, &neg)?;
        write_out(v.as_slice(), out, out_len)
    })
}

/// Limiting logits as `α → ±∞` (`sign` of +1 or -1), `vocab` values.
///
/// # Safety
/// `m` must be a live handle; `v` must hold `v_len` doubles and `out`
/// `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sl_toy_limit_logits(
    m: *const SlToyModel,
    v: *const f64,
    v_len: usize,
    sign: c_int,
    out: *mut f64,
    out_len: usize,
) -> SlStatus {
    guard(|| {
        let model = &deref(m, "toy model")?.inner;
        let s = match direction(sign)? {
            Direction::Plus => Sign::Plus,
            Direction::Minus => Sign::Minus,
        };
        let v = DVector::from_column_slice(slice(v, v_len, "v")?);
        write_out(&model.limit_logits(&v, s)?, out, out_len)
    })
}

/// # Safety
/// `m` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sl_toy_free(m: *mut SlToyModel) {
    free(m)
}

// ---- runs ----

/// Loads a TOML run configuration, runs every verification check and
/// writes the report as JSON. `passed` is set to 1 if all checks passed.
///
/// # Safety
/// `config_path` must be a nul-terminated string; `passed` and
/// `report_json` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sl_verify_all(config_path: *const c_char, passed: *mut c_int, report_json: *mut *mut c_char) -> SlStatus {
    guard(|| {
        let path = str_arg(config_path, "config_path")?;
        let cfg = RunConfig::load(Path::new(path))?;
        let report = verify::verify_all(&cfg)?;
        let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
        *out_ref(passed, "passed")? = c_int::from(report.passed);
        write_string(json, report_json)
    })
}
