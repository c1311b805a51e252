//! C interface to the memory bank.
//!
//! Every function returns a [`CamelotStatus`]; results come back through out
//! pointers. Banks are opaque handles created by [`camelot_bank_new`] or
//! [`camelot_bank_restore`] and released with [`camelot_bank_free`]. Vectors
//! are passed as row-major `f64` arrays of `n * dim` elements.

use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use camelot::memory::{Ablation, BankConfig, MemoryBank};
use camelot::vector::{nearest_slot, similarity};
use camelot::{DenseVector, Error, SimilarityKind};

#[repr(i32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CamelotStatus {
    Ok = 0,
    NullPointer = 1,
    DimensionMismatch = 2,
    ZeroVector = 3,
    NonFinite = 4,
    InvalidConfig = 5,
    InvalidInput = 6,
    SnapshotCorrupt = 7,
    SnapshotVersion = 8,
    SnapshotConfigMismatch = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

impl From<&Error> for CamelotStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::DimensionMismatch { .. } => CamelotStatus::DimensionMismatch,
            Error::ZeroVector => CamelotStatus::ZeroVector,
            Error::NonFinite(_) => CamelotStatus::NonFinite,
            Error::InvalidConfig(_) => CamelotStatus::InvalidConfig,
            Error::InvalidInput(_) => CamelotStatus::InvalidInput,
            Error::SnapshotCorrupt(_) => CamelotStatus::SnapshotCorrupt,
            Error::SnapshotVersion { .. } => CamelotStatus::SnapshotVersion,
            Error::SnapshotConfigMismatch(_) => CamelotStatus::SnapshotConfigMismatch,
        }
    }
}

/// Similarity tags: 0 cosine, 1 negative euclidean.
/// Ablation tags: 0 full, 1 no-read, 2 no-recency, 3 no-novelty,
/// 4 no-consolidation.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CamelotBankConfig {
    pub capacity: usize,
    pub dim: usize,
    pub threshold: f64,
    pub similarity: u8,
    pub ablation: u8,
    pub seed: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CamelotWriteSummary {
    pub consolidated: usize,
    pub novel_inserted: usize,
    pub evicted: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CamelotBankStats {
    pub capacity: usize,
    pub dim: usize,
    pub occupancy: usize,
    pub total_count: u64,
}

/// Opaque bank handle.
pub struct CamelotBank {
    inner: MemoryBank,
}

fn guard(f: impl FnOnce() -> Result<(), CamelotStatus>) -> CamelotStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CamelotStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => CamelotStatus::Panic,
    }
}

fn core<T>(r: camelot::Result<T>) -> Result<T, CamelotStatus> {
    r.map_err(|e| CamelotStatus::from(&e))
}

fn kind(tag: u8) -> Result<SimilarityKind, CamelotStatus> {
    SimilarityKind::from_tag(tag).ok_or(CamelotStatus::InvalidConfig)
}

impl CamelotBankConfig {
    fn to_core(self) -> Result<BankConfig, CamelotStatus> {
        let ablation = Ablation::from_tag(self.ablation).ok_or(CamelotStatus::InvalidConfig)?;
        Ok(BankConfig::new(self.capacity, self.dim)
            .with_threshold(self.threshold)
            .with_similarity(kind(self.similarity)?)
            .with_ablation(ablation)
            .with_seed(self.seed))
    }
}

unsafe fn vectors(ptr: *const f64, n: usize, dim: usize) -> Result<Vec<DenseVector>, CamelotStatus> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if ptr.is_null() {
        return Err(CamelotStatus::NullPointer);
    }
    let len = n.checked_mul(dim).ok_or(CamelotStatus::InvalidInput)?;
    let data: &[f64] = slice::from_raw_parts(ptr, len);
    core(data.chunks(dim.max(1)).map(|c| DenseVector::new(c.to_vec())).collect())
}

unsafe fn bank_mut<'a>(bank: *mut CamelotBank) -> Result<&'a mut MemoryBank, CamelotStatus> {
    bank.as_mut().map(|b| &mut b.inner).ok_or(CamelotStatus::NullPointer)
}

unsafe fn bank_ref<'a>(bank: *const CamelotBank) -> Result<&'a MemoryBank, CamelotStatus> {
    bank.as_ref().map(|b| &b.inner).ok_or(CamelotStatus::NullPointer)
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), CamelotStatus> {
    if out.is_null() {
        return Err(CamelotStatus::NullPointer);
    }
    out.write(value);
    Ok(())
}

/// Default configuration: threshold 0.93, cosine, full, seed 0.
#[no_mangle]
pub extern "C" fn camelot_bank_config_default(capacity: usize, dim: usize) -> CamelotBankConfig {
    let c = BankConfig::new(capacity, dim);
    CamelotBankConfig {
        capacity,
        dim,
        threshold: c.threshold,
        similarity: c.similarity.tag(),
        ablation: c.ablation.tag(),
        seed: c.seed,
    }
}

/// Creates an empty bank.
///
/// # Safety
/// `config` must point to a valid config and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn camelot_bank_new(
    config: *const CamelotBankConfig,
    out: *mut *mut CamelotBank,
) -> CamelotStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or(CamelotStatus::NullPointer)?.to_core()?;
        let bank = core(MemoryBank::new(cfg))?;
        put(out, Box::into_raw(Box::new(CamelotBank { inner: bank })))
    })
}

/// Releases a bank. Null is ignored.
///
/// # Safety
/// `bank` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn camelot_bank_free(bank: *mut CamelotBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Writes `n` tokens. On error the bank is unchanged. `summary` may be null.
///
/// # Safety
/// `keys` and `values` must hold `n * dim` elements each.
#[no_mangle]
pub unsafe extern "C" fn camelot_bank_write(
    bank: *mut CamelotBank,
    keys: *const f64,
    values: *const f64,
    n: usize,
    summary: *mut CamelotWriteSummary,
) -> CamelotStatus {
    guard(|| {
        let b = bank_mut(bank)?;
        let dim = b.dim();
        let report = core(b.write(&vectors(keys, n, dim)?, &vectors(values, n, dim)?))?;
        if !summary.is_null() {
            summary.write(CamelotWriteSummary {
                consolidated: report.consolidated,
                novel_inserted: report.novel_inserted,
                evicted: report.evicted_slot_indices.len(),
            });
        }
        Ok(())
    })
}

/// Retrieves one slot per query. `out_keys` and `out_values` need room for
/// `n * dim` elements and `out_slots` for `n`; `out_count` receives the
/// number retrieved (0 for an empty bank, otherwise `n`).
///
/// # Safety
/// All pointers must be valid for the sizes above.
#[no_mangle]
pub unsafe extern "C" fn camelot_bank_read(
    bank: *mut CamelotBank,
    keys: *const f64,
    n: usize,
    out_keys: *mut f64,
    out_values: *mut f64,
    out_slots: *mut usize,
    out_count: *mut usize,
) -> CamelotStatus {
    guard(|| {
        let b = bank_mut(bank)?;
        let dim = b.dim();
        let read = core(b.read(&vectors(keys, n, dim)?))?;
        let got = read.len();
        if got > 0 && (out_keys.is_null() || out_values.is_null() || out_slots.is_null()) {
            return Err(CamelotStatus::NullPointer);
        }
        for i in 0..got {
            slice::from_raw_parts_mut(out_keys.add(i * dim), dim).copy_from_slice(&read.keys[i]);
            slice::from_raw_parts_mut(out_values.add(i * dim), dim).copy_from_slice(&read.values[i]);
            out_slots.add(i).write(read.slot_indices[i]);
        }
        put(out_count, got)
    })
}

/// # Safety
/// `bank` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn camelot_bank_stats(bank: *const CamelotBank, out: *mut CamelotBankStats) -> CamelotStatus {
    guard(|| {
        let b = bank_ref(bank)?;
        put(
            out,
            CamelotBankStats {
                capacity: b.capacity(),
                dim: b.dim(),
                occupancy: b.occupancy(),
                total_count: b.total_count(),
            },
        )
    })
}

/// Serializes the bank. `out_len` always receives the snapshot size; when
/// `buf` is null or shorter than that, nothing is copied and
/// `BufferTooSmall` is returned.
///
/// # Safety
/// `buf` must be valid for `buf_len` bytes when non-null.
#[no_mangle]
pub unsafe extern "C" fn camelot_bank_snapshot(
    bank: *const CamelotBank,
    buf: *mut u8,
    buf_len: usize,
    out_len: *mut usize,
) -> CamelotStatus {
    guard(|| {
        let bytes = bank_ref(bank)?.snapshot();
        put(out_len, bytes.len())?;
        if buf.is_null() || buf_len < bytes.len() {
            return Err(CamelotStatus::BufferTooSmall);
        }
        slice::from_raw_parts_mut(buf, bytes.len()).copy_from_slice(&bytes);
        Ok(())
    })
}

/// Rebuilds a bank from a snapshot. With a non-null `expected`, the snapshot
/// must match its dimension, capacity, similarity, ablation and threshold,
/// and the random stream is reseeded from it.
///
/// # Safety
/// `bytes` must be valid for `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn camelot_bank_restore(
    bytes: *const u8,
    len: usize,
    expected: *const CamelotBankConfig,
    out: *mut *mut CamelotBank,
) -> CamelotStatus {
    guard(|| {
        if bytes.is_null() && len > 0 {
            return Err(CamelotStatus::NullPointer);
        }
        let data: &[u8] = if len == 0 { &[] } else { slice::from_raw_parts(bytes, len) };
        let bank = match expected.as_ref() {
            Some(cfg) => core(MemoryBank::restore(data, &cfg.to_core()?))?,
            None => core(MemoryBank::from_snapshot(data))?,
        };
        put(out, Box::into_raw(Box::new(CamelotBank { inner: bank })))
    })
}

/// # Safety
/// `a` and `b` must hold `dim` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn camelot_similarity(
    a: *const f64,
    b: *const f64,
    dim: usize,
    similarity_kind: u8,
    out: *mut f64,
) -> CamelotStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(CamelotStatus::NullPointer);
        }
        let s = core(similarity(slice::from_raw_parts(a, dim), slice::from_raw_parts(b, dim), kind(similarity_kind)?))?;
        put(out, s)
    })
}

/// Argmax over the occupied rows of `keys` (`n_slots * dim`). `out_found` is
/// set to 0 when no slot is occupied. Ties go to the lowest index.
///
/// # Safety
/// `keys` must hold `n_slots * dim` elements, `occupied` `n_slots` bytes,
/// `query` `dim` elements; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn camelot_nearest_slot(
    keys: *const f64,
    occupied: *const u8,
    n_slots: usize,
    dim: usize,
    query: *const f64,
    similarity_kind: u8,
    out_index: *mut usize,
    out_score: *mut f64,
    out_found: *mut u8,
) -> CamelotStatus {
    guard(|| {
        if query.is_null() || (n_slots > 0 && (keys.is_null() || occupied.is_null())) {
            return Err(CamelotStatus::NullPointer);
        }
        let rows: Vec<&[f64]> = (0..n_slots).map(|i| slice::from_raw_parts(keys.add(i * dim), dim)).collect();
        let flags: Vec<bool> = if n_slots == 0 {
            Vec::new()
        } else {
            slice::from_raw_parts(occupied, n_slots).iter().map(|&o| o != 0).collect()
        };
        let hit = core(nearest_slot(&rows, &flags, slice::from_raw_parts(query, dim), kind(similarity_kind)?))?;
        put(out_found, hit.is_some() as u8)?;
        if let Some((i, s)) = hit {
            put(out_index, i)?;
            put(out_score, s)?;
        }
        Ok(())
    })
}

/// Static, NUL-terminated description of a status code.
#[no_mangle]
pub extern "C" fn camelot_status_message(status: CamelotStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        CamelotStatus::Ok => b"ok\0",
        CamelotStatus::NullPointer => b"null pointer\0",
        CamelotStatus::DimensionMismatch => b"dimension mismatch\0",
        CamelotStatus::ZeroVector => b"zero vector under cosine similarity\0",
        CamelotStatus::NonFinite => b"non-finite element\0",
        CamelotStatus::InvalidConfig => b"invalid configuration\0",
        CamelotStatus::InvalidInput => b"invalid input\0",
        CamelotStatus::SnapshotCorrupt => b"snapshot corrupt\0",
        CamelotStatus::SnapshotVersion => b"unsupported snapshot version\0",
        CamelotStatus::SnapshotConfigMismatch => b"snapshot does not match the expected configuration\0",
        CamelotStatus::BufferTooSmall => b"buffer too small\0",
        CamelotStatus::Panic => b"internal panic\0",
    };
    s.as_ptr().cast()
}
