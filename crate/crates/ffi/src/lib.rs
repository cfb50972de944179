//! C ABI surface for the entiq library.
//!
//! Exposes the embedding index and the evaluation metrics to other
//! languages through opaque handles, integer status codes, and UTF-8
//! strings. Every function is panic-safe: unwinding is caught at the
//! boundary and reported as [`EntiqStatus::Panic`] instead of crossing
//! into foreign frames.
//!
//! Conventions:
//! - Functions return an [`EntiqStatus`]; results travel through `out`
//!   pointers that are written only on [`EntiqStatus::Ok`].
//! - Strings returned through `*mut c_char` are NUL-terminated UTF-8
//!   owned by the caller and must be released with [`entiq_string_free`].
//! - Handles created by `entiq_index_load` must be released with
//!   [`entiq_index_free`].

use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use entiq::dataset::{check_anonymity, AnonymityCheck};
use entiq::eval::{
    bleu, fleiss_kappa, judge_answer, kendall_tau_b, meteor_simplified, rouge_l_f1, token_f1,
    RankingPair, RatingMatrix,
};
use entiq::index::{EmbeddingIndex, IndexError};

/// Status code returned by every fallible function in this library.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntiqStatus {
    /// The call succeeded and all `out` parameters are populated.
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument was structurally invalid (zero k, dimension mismatch,
    /// ragged matrix, empty input, ...).
    InvalidArgument = 3,
    /// The operation failed reading or writing a file.
    IoError = 4,
    /// A persisted artifact failed validation (bad magic, truncation).
    CorruptData = 5,
    /// The input is a degenerate case the statistic is undefined for
    /// (all-tied ranking, expected agreement of one).
    DegenerateInput = 6,
    /// A panic was caught at the boundary; out parameters are untouched.
    Panic = 7,
}

/// Opaque handle to a loaded embedding index.
pub struct EntiqIndex {
    inner: EmbeddingIndex,
}

fn status_from_index_error(e: &IndexError) -> EntiqStatus {
    match e {
        IndexError::IoFailure(_) => EntiqStatus::IoError,
        IndexError::CorruptHeader(_) | IndexError::TruncatedPayload(_) => EntiqStatus::CorruptData,
        _ => EntiqStatus::InvalidArgument,
    }
}

/// Reads a NUL-terminated UTF-8 string argument.
///
/// # Safety
/// `ptr` must be NULL or point to a NUL-terminated buffer valid for the
/// duration of the call.
unsafe fn arg_str<'a>(ptr: *const c_char) -> Result<&'a str, EntiqStatus> {
    if ptr.is_null() {
        return Err(EntiqStatus::NullPointer);
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| EntiqStatus::InvalidUtf8)
}

/// Reads an array of NUL-terminated UTF-8 strings.
///
/// # Safety
/// Unless `len` is zero, `ptr` must point to `len` valid string pointers.
unsafe fn arg_str_array(ptr: *const *const c_char, len: usize) -> Result<Vec<String>, EntiqStatus> {
    if len == 0 {
        return Ok(Vec::new());
    }
    if ptr.is_null() {
        return Err(EntiqStatus::NullPointer);
    }
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let s = arg_str(*ptr.add(i))?;
        out.push(s.to_owned());
    }
    Ok(out)
}

/// Moves a Rust string across the boundary. Interior NUL bytes cannot be
/// represented in a C string, so they are rejected as invalid.
fn export_string(s: String, out: *mut *mut c_char) -> EntiqStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            EntiqStatus::Ok
        }
        Err(_) => EntiqStatus::InvalidArgument,
    }
}

/// Runs `body` with panics converted to [`EntiqStatus::Panic`].
fn guarded(body: impl FnOnce() -> EntiqStatus) -> EntiqStatus {
    catch_unwind(AssertUnwindSafe(body)).unwrap_or(EntiqStatus::Panic)
}

/// Loads an embedding index from `path` and writes a new handle to
/// `out_index`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_index` a valid,
/// writable pointer. The returned handle must be released with
/// [`entiq_index_free`].
#[no_mangle]
pub unsafe extern "C" fn entiq_index_load(
    path: *const c_char,
    out_index: *mut *mut EntiqIndex,
) -> EntiqStatus {
    guarded(|| {
        if out_index.is_null() {
            return EntiqStatus::NullPointer;
        }
        let path = match arg_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match EmbeddingIndex::load(Path::new(path)) {
            Ok(index) => {
                *out_index = Box::into_raw(Box::new(EntiqIndex { inner: index }));
                EntiqStatus::Ok
            }
            Err(e) => status_from_index_error(&e),
        }
    })
}

/// Returns the number of entries in the index, or 0 for a NULL handle.
///
/// # Safety
/// `index` must be NULL or a live handle from [`entiq_index_load`].
#[no_mangle]
pub unsafe extern "C" fn entiq_index_len(index: *const EntiqIndex) -> u64 {
    if index.is_null() {
        return 0;
    }
    (*index).inner.len() as u64
}

/// Returns the vector dimension of the index, or 0 for a NULL handle.
///
/// # Safety
/// `index` must be NULL or a live handle from [`entiq_index_load`].
#[no_mangle]
pub unsafe extern "C" fn entiq_index_dim(index: *const EntiqIndex) -> u64 {
    if index.is_null() {
        return 0;
    }
    (*index).inner.dim() as u64
}

/// Runs a k-nearest-neighbour query and writes the retrieval set to
/// `out_json` as a JSON document (`{"hits": [...]}` with entries ordered
/// by descending cosine score, ties broken by ascending entry id).
///
/// # Safety
/// `index` must be a live handle, `query` must point to `query_len`
/// floats, and `out_json` must be valid and writable. The returned string
/// must be released with [`entiq_string_free`].
#[no_mangle]
pub unsafe extern "C" fn entiq_index_knn_json(
    index: *const EntiqIndex,
    query: *const f32,
    query_len: usize,
    k: usize,
    out_json: *mut *mut c_char,
) -> EntiqStatus {
    guarded(|| {
        if index.is_null() || query.is_null() || out_json.is_null() {
            return EntiqStatus::NullPointer;
        }
        let query = std::slice::from_raw_parts(query, query_len);
        match (*index).inner.knn(query, k) {
            Ok(set) => match serde_json::to_string(&set) {
                Ok(json) => export_string(json, out_json),
                Err(_) => EntiqStatus::InvalidArgument,
            },
            Err(e) => status_from_index_error(&e),
        }
    })
}

/// Releases a handle returned by [`entiq_index_load`]. NULL is a no-op.
///
/// # Safety
/// `index` must be NULL or a handle not yet freed; it must not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn entiq_index_free(index: *mut EntiqIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Releases a string returned by this library. NULL is a no-op.
///
/// # Safety
/// `s` must be NULL or a string returned by an `entiq_*` function that
/// has not yet been freed.
#[no_mangle]
pub unsafe extern "C" fn entiq_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// ROUGE-L F1 between a candidate and a reference string.
///
/// # Safety
/// `candidate` and `reference` must be NUL-terminated strings; `out` must
/// be valid and writable.
#[no_mangle]
pub unsafe extern "C" fn entiq_rouge_l_f1(
    candidate: *const c_char,
    reference: *const c_char,
    out: *mut f64,
) -> EntiqStatus {
    guarded(|| {
        if out.is_null() {
            return EntiqStatus::NullPointer;
        }
        let (c, r) = match (arg_str(candidate), arg_str(reference)) {
            (Ok(c), Ok(r)) => (c, r),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        *out = rouge_l_f1(c, r);
        EntiqStatus::Ok
    })
}

/// BLEU with up to `max_n`-gram precision against one or more references.
///
/// # Safety
/// `candidate` must be a NUL-terminated string, `references` must point
/// to `n_references` such strings, and `out` must be valid and writable.
#[no_mangle]
pub unsafe extern "C" fn entiq_bleu(
    candidate: *const c_char,
    references: *const *const c_char,
    n_references: usize,
    max_n: usize,
    out: *mut f64,
) -> EntiqStatus {
    guarded(|| {
        if out.is_null() {
            return EntiqStatus::NullPointer;
        }
        let c = match arg_str(candidate) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let refs = match arg_str_array(references, n_references) {
            Ok(r) => r,
            Err(s) => return s,
        };
        *out = bleu(c, &refs, max_n);
        EntiqStatus::Ok
    })
}

/// Simplified METEOR (harmonic mean weighted toward recall) between a
/// candidate and a reference string.
///
/// # Safety
/// `candidate` and `reference` must be NUL-terminated strings; `out` must
/// be valid and writable.
#[no_mangle]
pub unsafe extern "C" fn entiq_meteor(
    candidate: *const c_char,
    reference: *const c_char,
    out: *mut f64,
) -> EntiqStatus {
    guarded(|| {
        if out.is_null() {
            return EntiqStatus::NullPointer;
        }
        let (c, r) = match (arg_str(candidate), arg_str(reference)) {
            (Ok(c), Ok(r)) => (c, r),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        *out = meteor_simplified(c, r);
        EntiqStatus::Ok
    })
}

/// Bag-of-tokens F1 overlap between a prediction and a gold answer.
///
/// # Safety
/// `prediction` and `gold` must be NUL-terminated strings; `out` must be
/// valid and writable.
#[no_mangle]
pub unsafe extern "C" fn entiq_token_f1(
    prediction: *const c_char,
    gold: *const c_char,
    out: *mut f64,
) -> EntiqStatus {
    guarded(|| {
        if out.is_null() {
            return EntiqStatus::NullPointer;
        }
        let (p, g) = match (arg_str(prediction), arg_str(gold)) {
            (Ok(p), Ok(g)) => (p, g),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        *out = token_f1(p, g);
        EntiqStatus::Ok
    })
}

/// Kendall tau-b with a two-sided p-value over two rankings aligned by
/// position. Returns [`EntiqStatus::DegenerateInput`] when either ranking
/// is entirely tied.
///
/// # Safety
/// `a` and `b` must point to `len` values each; `out_tau` and
/// `out_p_value` must be valid and writable.
#[no_mangle]
pub unsafe extern "C" fn entiq_kendall_tau_b(
    a: *const i64,
    b: *const i64,
    len: usize,
    out_tau: *mut f64,
    out_p_value: *mut f64,
) -> EntiqStatus {
    guarded(|| {
        if a.is_null() || b.is_null() || out_tau.is_null() || out_p_value.is_null() {
            return EntiqStatus::NullPointer;
        }
        let a = std::slice::from_raw_parts(a, len).to_vec();
        let b = std::slice::from_raw_parts(b, len).to_vec();
        let pair = match RankingPair::new(a, b) {
            Ok(p) => p,
            Err(_) => return EntiqStatus::InvalidArgument,
        };
        match kendall_tau_b(&pair) {
            Ok(result) => {
                *out_tau = result.tau;
                *out_p_value = result.p_value;
                EntiqStatus::Ok
            }
            Err(_) => EntiqStatus::DegenerateInput,
        }
    })
}

/// Fleiss' kappa over a row-major items-by-categories count matrix where
/// every row sums to the same rater count. Returns
/// [`EntiqStatus::DegenerateInput`] when expected agreement is exactly
/// one (kappa undefined).
///
/// # Safety
/// `counts` must point to `n_items * n_categories` values; `out` must be
/// valid and writable.
#[no_mangle]
pub unsafe extern "C" fn entiq_fleiss_kappa(
    counts: *const u64,
    n_items: usize,
    n_categories: usize,
    out: *mut f64,
) -> EntiqStatus {
    guarded(|| {
        if counts.is_null() || out.is_null() {
            return EntiqStatus::NullPointer;
        }
        if n_items == 0 || n_categories == 0 {
            return EntiqStatus::InvalidArgument;
        }
        let flat = std::slice::from_raw_parts(counts, n_items * n_categories);
        let rows: Vec<Vec<u64>> = flat.chunks(n_categories).map(<[u64]>::to_vec).collect();
        let matrix = match RatingMatrix::new(rows) {
            Ok(m) => m,
            Err(_) => return EntiqStatus::InvalidArgument,
        };
        match fleiss_kappa(&matrix) {
            Ok(kappa) => {
                *out = kappa;
                EntiqStatus::Ok
            }
            Err(_) => EntiqStatus::DegenerateInput,
        }
    })
}

/// Judges a prediction: correct iff it names the entity (or an alias) as
/// a contiguous token phrase and its token F1 against the gold answer
/// meets `f1_threshold`. Writes the verdict to `out_correct`.
///
/// # Safety
/// String arguments must be NUL-terminated; `aliases` must point to
/// `n_aliases` strings (or be NULL when `n_aliases` is 0); `out_correct`
/// must be valid and writable.
#[no_mangle]
pub unsafe extern "C" fn entiq_judge_answer(
    prediction: *const c_char,
    gold_answer: *const c_char,
    entity_name: *const c_char,
    aliases: *const *const c_char,
    n_aliases: usize,
    f1_threshold: f64,
    out_correct: *mut bool,
) -> EntiqStatus {
    guarded(|| {
        if out_correct.is_null() {
            return EntiqStatus::NullPointer;
        }
        let p = match arg_str(prediction) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let g = match arg_str(gold_answer) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let name = match arg_str(entity_name) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let aliases = match arg_str_array(aliases, n_aliases) {
            Ok(v) => v,
            Err(s) => return s,
        };
        *out_correct = judge_answer(p, g, name, &aliases, f1_threshold).is_correct();
        EntiqStatus::Ok
    })
}

/// Checks that a question does not leak its entity. Writes `true` to
/// `out_pass` when clean; on a leak writes `false` and, when `out_span`
/// is non-NULL, the normalized leaking phrase (caller frees it with
/// [`entiq_string_free`]).
///
/// # Safety
/// String arguments must be NUL-terminated; `aliases` must point to
/// `n_aliases` strings (or be NULL when `n_aliases` is 0); `out_pass`
/// must be valid and writable; `out_span` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn entiq_check_anonymity(
    question: *const c_char,
    entity_name: *const c_char,
    aliases: *const *const c_char,
    n_aliases: usize,
    out_pass: *mut bool,
    out_span: *mut *mut c_char,
) -> EntiqStatus {
    guarded(|| {
        if out_pass.is_null() {
            return EntiqStatus::NullPointer;
        }
        let q = match arg_str(question) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let name = match arg_str(entity_name) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let aliases = match arg_str_array(aliases, n_aliases) {
            Ok(v) => v,
            Err(s) => return s,
        };
        match check_anonymity(q, name, &aliases) {
            AnonymityCheck::Pass => {
                *out_pass = true;
                if !out_span.is_null() {
                    *out_span = std::ptr::null_mut();
                }
                EntiqStatus::Ok
            }
            AnonymityCheck::Fail { span } => {
                *out_pass = false;
                if out_span.is_null() {
                    return EntiqStatus::Ok;
                }
                export_string(span, out_span)
            }
        }
    })
}
