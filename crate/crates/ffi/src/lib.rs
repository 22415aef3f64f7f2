//! C ABI over `semhash`.
//!
//! Handles are opaque and owned by the caller once created; release them
//! with the matching `*_free`. Every fallible call returns a
//! [`SemhashStatus`]; on failure [`semhash_last_error`] describes the most
//! recent error on the calling thread.
//!
//! Codes cross the boundary bit-packed: `ceil(k/64)` `uint64_t` words per
//! code, bit `j` at position `j % 64` of word `j / 64`, unused high bits
//! zero.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use semhash::codebook::{read_codebook, BinaryCodebook, BitCode};
use semhash::head::{read_head, HashHeadParams};
use semhash::index::{binarize, query};
use semhash::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemhashStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    Panic = 6,
}

/// A trained hashing head.
pub struct SemhashHead {
    inner: HashHeadParams,
}

/// An immutable packed codebook; safe to query from several threads.
pub struct SemhashIndex {
    inner: BinaryCodebook,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: SemhashStatus, msg: impl Into<String>) -> SemhashStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> SemhashStatus {
    match e {
        Error::Io { .. } => SemhashStatus::Io,
        Error::DimensionMismatch { .. } => SemhashStatus::DimensionMismatch,
        Error::BadMagic { .. }
        | Error::UnsupportedVersion { .. }
        | Error::Truncated { .. }
        | Error::TrailingBytes { .. }
        | Error::NonFinite { .. }
        | Error::NonzeroPadBits { .. }
        | Error::InvalidHeader { .. } => SemhashStatus::Format,
        _ => SemhashStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), SemhashStatus>) -> SemhashStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SemhashStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(SemhashStatus::Panic, "internal panic"),
    }
}

fn check<T>(r: semhash::Result<T>) -> Result<T, SemhashStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), SemhashStatus> {
    if p.is_null() {
        Err(fail(SemhashStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, SemhashStatus> {
    non_null(path, "path")?;
    CStr::from_ptr(path)
        .to_str()
        .map_err(|_| fail(SemhashStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], SemhashStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_arg_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], SemhashStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, name)?;
    Ok(slice::from_raw_parts_mut(p, len))
}

fn need_len(name: &str, have: usize, need: usize) -> Result<(), SemhashStatus> {
    if have < need {
        Err(fail(
            SemhashStatus::DimensionMismatch,
            format!("{name} holds {have} elements, need {need}"),
        ))
    } else {
        Ok(())
    }
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn semhash_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Number of `uint64_t` words holding one `bits`-bit code.
#[no_mangle]
pub extern "C" fn semhash_code_words(bits: usize) -> usize {
    bits.div_ceil(64)
}

/// Thresholds `k` relaxed values at 0.5 (inclusive) into packed words.
///
/// # Safety
/// `relaxed` must point to `k` doubles and `out_words` to `n_words`
/// writable words.
#[no_mangle]
pub unsafe extern "C" fn semhash_binarize(
    relaxed: *const f64,
    k: usize,
    out_words: *mut u64,
    n_words: usize,
) -> SemhashStatus {
    guard(|| {
        let values = slice_arg(relaxed, k, "relaxed")?;
        need_len("out_words", n_words, k.div_ceil(64))?;
        let out = slice_arg_mut(out_words, n_words, "out_words")?;
        let code = check(binarize(values))?;
        out[..code.words().len()].copy_from_slice(code.words());
        Ok(())
    })
}

/// Loads a parameter file written by `semhash train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn semhash_head_load(path: *const c_char, out: *mut *mut SemhashHead) -> SemhashStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = path_arg(path)?;
        let inner = check(read_head(path))?;
        *out = Box::into_raw(Box::new(SemhashHead { inner }));
        Ok(())
    })
}

/// # Safety
/// `head` must come from [`semhash_head_load`] and not be used afterwards.
/// NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn semhash_head_free(head: *mut SemhashHead) {
    if !head.is_null() {
        drop(Box::from_raw(head));
    }
}

/// Code length `k`; 0 for NULL.
///
/// # Safety
/// `head` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn semhash_head_bits(head: *const SemhashHead) -> usize {
    head.as_ref().map_or(0, |h| h.inner.bits())
}

/// Input dimension `d`; 0 for NULL.
///
/// # Safety
/// `head` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn semhash_head_dim(head: *const SemhashHead) -> usize {
    head.as_ref().map_or(0, |h| h.inner.dim())
}

/// Encodes `n` row-major feature rows of dimension `d` into packed codes,
/// `semhash_code_words(k)` words per row.
///
/// # Safety
/// `head` must be a live handle, `features` must point to `n * d` floats
/// and `out_words` to `out_len` writable words.
#[no_mangle]
pub unsafe extern "C" fn semhash_head_encode(
    head: *const SemhashHead,
    features: *const f32,
    n: usize,
    d: usize,
    out_words: *mut u64,
    out_len: usize,
) -> SemhashStatus {
    guard(|| {
        non_null(head, "head")?;
        let head = &(*head).inner;
        if d != head.dim() {
            return Err(fail(
                SemhashStatus::DimensionMismatch,
                format!("features have d={d}, head expects {}", head.dim()),
            ));
        }
        let total = n
            .checked_mul(d)
            .ok_or_else(|| fail(SemhashStatus::InvalidArgument, "n * d overflows"))?;
        let rows = slice_arg(features, total, "features")?;
        let per = head.bits().div_ceil(64);
        need_len("out_words", out_len, n * per)?;
        let out = slice_arg_mut(out_words, out_len, "out_words")?;
        for i in 0..n {
            let code = check(head.encode_row(&rows[i * d..(i + 1) * d]))?;
            out[i * per..(i + 1) * per].copy_from_slice(code.words());
        }
        Ok(())
    })
}

/// Loads a codebook file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn semhash_index_load(path: *const c_char, out: *mut *mut SemhashIndex) -> SemhashStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = path_arg(path)?;
        let inner = check(read_codebook(path))?;
        *out = Box::into_raw(Box::new(SemhashIndex { inner }));
        Ok(())
    })
}

/// Builds an index from `n` packed codes of `bits` bits. `ids` may be NULL,
/// in which case ids are `0..n`.
///
/// # Safety
/// `words` must point to `n * semhash_code_words(bits)` words, `ids` to
/// `n` ids when non-NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn semhash_index_from_codes(
    bits: usize,
    words: *const u64,
    n: usize,
    ids: *const u64,
    out: *mut *mut SemhashIndex,
) -> SemhashStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        if bits == 0 {
            return Err(fail(SemhashStatus::InvalidArgument, "bits must be positive"));
        }
        let per = bits.div_ceil(64);
        let words = slice_arg(words, n * per, "words")?;
        let ids: Vec<u64> = if ids.is_null() {
            (0..n as u64).collect()
        } else {
            slice_arg(ids, n, "ids")?.to_vec()
        };
        let codes = words
            .chunks_exact(per)
            .map(|w| BitCode::from_words(bits, w))
            .collect::<semhash::Result<Vec<_>>>();
        let inner = if n == 0 {
            BinaryCodebook::new(bits)
        } else {
            check(BinaryCodebook::from_codes(&check(codes)?, &ids))?
        };
        *out = Box::into_raw(Box::new(SemhashIndex { inner }));
        Ok(())
    })
}

/// # Safety
/// `index` must come from this library and not be used afterwards. NULL
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn semhash_index_free(index: *mut SemhashIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Number of stored codes; 0 for NULL.
///
/// # Safety
/// `index` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn semhash_index_len(index: *const SemhashIndex) -> usize {
    index.as_ref().map_or(0, |i| i.inner.len())
}

/// Code length `k`; 0 for NULL.
///
/// # Safety
/// `index` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn semhash_index_bits(index: *const SemhashIndex) -> usize {
    index.as_ref().map_or(0, |i| i.inner.bits())
}

/// Exact top-`top_k` Hamming search. Writes up to `top_k` results ordered
/// by distance then id and stores their count in `out_count`.
///
/// # Safety
/// `index` must be a live handle, `query_words` must point to `n_words`
/// words, `out_ids` and `out_distances` to `top_k` writable elements each,
/// and `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn semhash_index_query(
    index: *const SemhashIndex,
    query_words: *const u64,
    n_words: usize,
    top_k: usize,
    out_ids: *mut u64,
    out_distances: *mut u32,
    out_count: *mut usize,
) -> SemhashStatus {
    guard(|| {
        non_null(index, "index")?;
        non_null(out_count, "out_count")?;
        *out_count = 0;
        let index = &(*index).inner;
        let q = check(BitCode::from_words(
            index.bits(),
            slice_arg(query_words, n_words, "query_words")?,
        ))?;
        let result = check(query(index, &q, top_k))?;
        let ids = slice_arg_mut(out_ids, top_k, "out_ids")?;
        let dists = slice_arg_mut(out_distances, top_k, "out_distances")?;
        for (slot, hit) in result.hits.iter().enumerate() {
            ids[slot] = hit.id;
            dists[slot] = hit.distance;
        }
        *out_count = result.hits.len();
        Ok(())
    })
}
