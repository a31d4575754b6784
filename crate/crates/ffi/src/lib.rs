//! C ABI over the mfmap library.
//!
//! Objects are opaque handles created by `mfmap_*_new`/`_load`/`mfmap_train`
//! and released with the matching `_free`. Every fallible call returns an
//! [`MfmapStatus`]; on failure `mfmap_last_error` describes the problem until
//! the next failing call on the same thread. Fidelity indices are 0-based.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use mfmap::checkpoint::Checkpoint;
use mfmap::error::{Error, ErrorClass};
use mfmap::model::{ModelKind, ModelSpec};
use mfmap::predict::{log_score, sample_conditional, sample_joint};
use mfmap::spatial::{load_ensemble, load_locations, Ensemble, Location, MultiFidelityLocations};
use mfmap::train::{fit, TrainConfig, TrainedMap};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfmapStatus {
    Ok = 0,
    InvalidArgument = 1,
    Io = 2,
    Data = 3,
    Numerical = 4,
    Panic = 5,
}

/// Location sets of all fidelities.
pub struct MfmapLocations(MultiFidelityLocations);

/// Replicated values at every location.
pub struct MfmapEnsemble(Ensemble);

/// A fitted transport map.
pub struct MfmapModel {
    map: TrainedMap,
    kind: ModelKind,
}

/// Training options. A tolerance <= 0 disables early stopping; a nonzero
/// `linear` drops the nonlinear kernel term.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MfmapTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub linear: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(e: Error) -> MfmapStatus {
    let status = match e.class() {
        ErrorClass::Usage => MfmapStatus::InvalidArgument,
        ErrorClass::Io => MfmapStatus::Io,
        ErrorClass::Data => MfmapStatus::Data,
        ErrorClass::Numerical => MfmapStatus::Numerical,
    };
    set_error(e.to_string());
    status
}

fn invalid(msg: &str) -> MfmapStatus {
    set_error(msg.to_string());
    MfmapStatus::InvalidArgument
}

fn guard(f: impl FnOnce() -> MfmapStatus) -> MfmapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic".into());
            MfmapStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Option<&'a str> {
    if p.is_null() {
        return None;
    }
    CStr::from_ptr(p).to_str().ok()
}

fn put<T>(out: *mut *mut T, value: T) -> MfmapStatus {
    // SAFETY: callers check `out` for null before building the value.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    MfmapStatus::Ok
}

/// Message of the last failure on this thread; valid until the next failing call.
#[no_mangle]
pub extern "C" fn mfmap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Reads a locations CSV (`fidelity,x,y,...`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfmap_locations_load(path: *const c_char, out: *mut *mut MfmapLocations) -> MfmapStatus {
    guard(|| {
        let Some(p) = path_arg(path) else { return invalid("path must be UTF-8 and non-null") };
        if out.is_null() {
            return invalid("output pointer is null");
        }
        match load_locations(p) {
            Ok(l) => put(out, MfmapLocations(l)),
            Err(e) => fail(e),
        }
    })
}

/// Builds locations from `sizes[r]` points per fidelity, coordinates packed
/// fidelity by fidelity with `dim` values per point.
///
/// # Safety
/// `sizes` must hold `num_fidelities` entries and `coords` `dim * sum(sizes)` values.
#[no_mangle]
pub unsafe extern "C" fn mfmap_locations_new(
    dim: usize,
    num_fidelities: usize,
    sizes: *const usize,
    coords: *const f64,
    out: *mut *mut MfmapLocations,
) -> MfmapStatus {
    guard(|| {
        if sizes.is_null() || coords.is_null() || out.is_null() || dim == 0 {
            return invalid("null pointer or zero dimension");
        }
        let sizes = std::slice::from_raw_parts(sizes, num_fidelities);
        let total: usize = sizes.iter().sum();
        let coords = std::slice::from_raw_parts(coords, total * dim);
        let mut sets = Vec::with_capacity(num_fidelities);
        let mut points = coords.chunks_exact(dim);
        for &n in sizes {
            let set: Result<Vec<Location>, Error> =
                points.by_ref().take(n).map(|c| Location::new(c.to_vec())).collect();
            match set {
                Ok(s) => sets.push(s),
                Err(e) => return fail(e),
            }
        }
        match MultiFidelityLocations::new(sets) {
            Ok(l) => put(out, MfmapLocations(l)),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `locs` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mfmap_locations_num_fidelities(locs: *const MfmapLocations) -> usize {
    locs.as_ref().map_or(0, |l| l.0.num_fidelities())
}

/// Number of points in fidelity `r` (0 if out of range).
///
/// # Safety
/// `locs` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mfmap_locations_len(locs: *const MfmapLocations, r: usize) -> usize {
    locs.as_ref().filter(|l| r < l.0.num_fidelities()).map_or(0, |l| l.0.len(r))
}

/// # Safety
/// `locs` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mfmap_locations_free(locs: *mut MfmapLocations) {
    if !locs.is_null() {
        drop(Box::from_raw(locs));
    }
}

/// Reads one ensemble CSV per fidelity and checks them against `locs`.
///
/// # Safety
/// `paths` must hold `count` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn mfmap_ensemble_load(
    locs: *const MfmapLocations,
    paths: *const *const c_char,
    count: usize,
    out: *mut *mut MfmapEnsemble,
) -> MfmapStatus {
    guard(|| {
        let Some(locs) = locs.as_ref() else { return invalid("locations handle is null") };
        if paths.is_null() || out.is_null() {
            return invalid("null pointer");
        }
        let mut files = Vec::with_capacity(count);
        for &p in std::slice::from_raw_parts(paths, count) {
            match path_arg(p) {
                Some(s) => files.push(s.to_string()),
                None => return invalid("path must be UTF-8 and non-null"),
            }
        }
        match load_ensemble(&files, &locs.0) {
            Ok(e) => put(out, MfmapEnsemble(e)),
            Err(e) => fail(e),
        }
    })
}

/// Builds an ensemble from one row-major `replicates x sizes[r]` array per fidelity.
///
/// # Safety
/// `sizes` and `values` must hold `num_fidelities` entries, each array sized as stated.
#[no_mangle]
pub unsafe extern "C" fn mfmap_ensemble_new(
    replicates: usize,
    num_fidelities: usize,
    sizes: *const usize,
    values: *const *const f64,
    out: *mut *mut MfmapEnsemble,
) -> MfmapStatus {
    guard(|| {
        if (num_fidelities > 0 && (sizes.is_null() || values.is_null())) || out.is_null() {
            return invalid("null pointer");
        }
        let (sizes, ptrs) = if num_fidelities == 0 {
            (&[][..], &[][..])
        } else {
            (std::slice::from_raw_parts(sizes, num_fidelities), std::slice::from_raw_parts(values, num_fidelities))
        };
        let mut vals = Vec::with_capacity(num_fidelities);
        for (&n, &p) in sizes.iter().zip(ptrs) {
            if p.is_null() && n * replicates > 0 {
                return invalid("null value array");
            }
            vals.push(if n * replicates == 0 { Vec::new() } else { std::slice::from_raw_parts(p, n * replicates).to_vec() });
        }
        match Ensemble::new(replicates, sizes.to_vec(), vals) {
            Ok(e) => put(out, MfmapEnsemble(e)),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `ens` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mfmap_ensemble_replicates(ens: *const MfmapEnsemble) -> usize {
    ens.as_ref().map_or(0, |e| e.0.replicates())
}

/// Copies fidelity `r` (row-major, replicates x N_r) into `buf` of length `len`.
///
/// # Safety
/// `buf` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn mfmap_ensemble_copy_fidelity(
    ens: *const MfmapEnsemble,
    r: usize,
    buf: *mut f64,
    len: usize,
) -> MfmapStatus {
    guard(|| {
        let Some(ens) = ens.as_ref() else { return invalid("ensemble handle is null") };
        if r >= ens.0.num_fidelities() {
            return invalid("fidelity index out of range");
        }
        let src = ens.0.fidelity(r);
        if buf.is_null() || len != src.len() {
            return invalid("buffer length does not match the fidelity");
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(src);
        MfmapStatus::Ok
    })
}

/// # Safety
/// `ens` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mfmap_ensemble_free(ens: *mut MfmapEnsemble) {
    if !ens.is_null() {
        drop(Box::from_raw(ens));
    }
}

#[no_mangle]
pub extern "C" fn mfmap_train_options_default() -> MfmapTrainOptions {
    let c = TrainConfig::default();
    MfmapTrainOptions {
        epochs: c.epochs,
        batch_size: c.batch_size,
        learning_rate: c.learning_rate,
        tolerance: c.tolerance.unwrap_or(0.0),
        seed: c.seed,
        linear: 0,
    }
}

fn spec_for(linear: bool) -> ModelSpec {
    if linear {
        ModelSpec::linear()
    } else {
        ModelSpec::default()
    }
}

/// Fits a model; `options` may be null for defaults.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mfmap_train(
    locs: *const MfmapLocations,
    train: *const MfmapEnsemble,
    options: *const MfmapTrainOptions,
    out: *mut *mut MfmapModel,
) -> MfmapStatus {
    guard(|| {
        let (Some(locs), Some(train)) = (locs.as_ref(), train.as_ref()) else { return invalid("null handle") };
        if out.is_null() {
            return invalid("output pointer is null");
        }
        let o = options.as_ref().copied().unwrap_or_else(|| mfmap_train_options_default());
        let config = TrainConfig {
            epochs: o.epochs,
            batch_size: o.batch_size,
            learning_rate: o.learning_rate,
            tolerance: (o.tolerance > 0.0).then_some(o.tolerance),
            seed: o.seed,
            ..TrainConfig::default()
        };
        let kind = if o.linear != 0 { ModelKind::Linear } else { ModelKind::Mfbtm };
        match fit(&train.0, &locs.0, &spec_for(o.linear != 0), &config) {
            Ok(map) => put(out, MfmapModel { map, kind }),
            Err(e) => fail(e),
        }
    })
}

/// Restores a model from a checkpoint and the data it was trained on.
///
/// # Safety
/// `path` must be NUL-terminated; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn mfmap_model_load(
    path: *const c_char,
    locs: *const MfmapLocations,
    train: *const MfmapEnsemble,
    out: *mut *mut MfmapModel,
) -> MfmapStatus {
    guard(|| {
        let Some(p) = path_arg(path) else { return invalid("path must be UTF-8 and non-null") };
        let (Some(locs), Some(train)) = (locs.as_ref(), train.as_ref()) else { return invalid("null handle") };
        if out.is_null() {
            return invalid("output pointer is null");
        }
        let result = Checkpoint::load(p).and_then(|ck| {
            if ck.model == ModelKind::Indep {
                return Err(Error::InvalidArgument("independent-baseline checkpoints hold no map".into()));
            }
            let map = TrainedMap::from_params(ck.hyperparams()?, ck.spec(), &locs.0, &train.0)?;
            Ok(MfmapModel { map, kind: ck.model })
        });
        match result {
            Ok(m) => put(out, m),
            Err(e) => fail(e),
        }
    })
}

/// Writes the model's checkpoint JSON.
///
/// # Safety
/// `model` must be live and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mfmap_model_save(model: *const MfmapModel, path: *const c_char) -> MfmapStatus {
    guard(|| {
        let Some(m) = model.as_ref() else { return invalid("model handle is null") };
        let Some(p) = path_arg(path) else { return invalid("path must be UTF-8 and non-null") };
        match Checkpoint::from_map(&m.map, m.kind, None).save(p) {
            Ok(()) => MfmapStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Mean negative log score of `test`; per-replicate values are written to
/// `per_replicate` when it is non-null (`len` must equal the replicate count).
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn mfmap_model_log_score(
    model: *const MfmapModel,
    test: *const MfmapEnsemble,
    mean: *mut f64,
    per_replicate: *mut f64,
    len: usize,
) -> MfmapStatus {
    guard(|| {
        let (Some(m), Some(test)) = (model.as_ref(), test.as_ref()) else { return invalid("null handle") };
        if mean.is_null() {
            return invalid("mean pointer is null");
        }
        if !per_replicate.is_null() && len != test.0.replicates() {
            return invalid("per-replicate buffer length does not match the test ensemble");
        }
        match log_score(&m.map, &test.0) {
            Ok(s) => {
                *mean = s.mean;
                if !per_replicate.is_null() {
                    std::slice::from_raw_parts_mut(per_replicate, len).copy_from_slice(&s.per_replicate);
                }
                MfmapStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Draws `count` joint samples, or conditional ones when `given` is non-null
/// (its fidelities are held fixed; it has 1 or `count` replicates).
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mfmap_model_sample(
    model: *const MfmapModel,
    given: *const MfmapEnsemble,
    count: usize,
    seed: u64,
    out: *mut *mut MfmapEnsemble,
) -> MfmapStatus {
    guard(|| {
        let Some(m) = model.as_ref() else { return invalid("model handle is null") };
        if out.is_null() {
            return invalid("output pointer is null");
        }
        let result = match given.as_ref() {
            Some(g) => sample_conditional(&m.map, &g.0, count, seed),
            None => sample_joint(&m.map, count, seed),
        };
        match result {
            Ok(e) => put(out, MfmapEnsemble(e)),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mfmap_model_free(model: *mut MfmapModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
