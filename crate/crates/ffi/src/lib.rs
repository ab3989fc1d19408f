//! C interface.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every function returns a `TarproStatus`;
//! on failure `tarpro_last_error` describes the error on the calling thread.
//! Functions never unwind into C.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use tarpro::checkpoint::{load_pipeline, save_pipeline};
use tarpro::classifier::predict;
use tarpro::config::{parse_config, RunConfig};
use tarpro::data::{load_csv, Dataset, LabeledExample};
use tarpro::numerics::Tensor2;
use tarpro::pipeline::{train_pipeline, Pipeline};
use tarpro::projection::infer_all;
use tarpro::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TarproStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Shape = 3,
    Numeric = 4,
    Parse = 5,
    Config = 6,
    CheckpointNotFound = 7,
    Checkpoint = 8,
    Io = 9,
    Utf8 = 10,
    Panic = 11,
}

/// Trained pipeline.
pub struct TarproPipeline {
    inner: Pipeline,
}

/// Labelled dataset.
pub struct TarproDataset {
    inner: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> TarproStatus {
    match e {
        Error::Shape(_) => TarproStatus::Shape,
        Error::Numeric(_) => TarproStatus::Numeric,
        Error::InvalidInput(_) => TarproStatus::InvalidInput,
        Error::Parse { .. } => TarproStatus::Parse,
        Error::Config { .. } => TarproStatus::Config,
        Error::CheckpointNotFound(_) => TarproStatus::CheckpointNotFound,
        Error::Checkpoint(_) => TarproStatus::Checkpoint,
        Error::Io(_) => TarproStatus::Io,
    }
}

struct Fail(TarproStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TarproStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TarproStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TarproStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            TarproStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(TarproStatus::Utf8, format!("{what} is not valid utf-8")))
}

unsafe fn config_arg(p: *const c_char) -> Result<RunConfig, Fail> {
    if p.is_null() {
        Ok(RunConfig::default())
    } else {
        Ok(parse_config(str_arg(p, "config")?)?)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn rows_arg(x: *const f64, n_rows: usize, n_cols: usize) -> Result<Tensor2, Fail> {
    if n_rows == 0 {
        return Ok(Tensor2::zeros(0, n_cols));
    }
    if x.is_null() {
        return Err(null("input rows"));
    }
    let len = n_rows
        .checked_mul(n_cols)
        .ok_or_else(|| Fail(TarproStatus::Shape, "row count overflows".into()))?;
    Ok(Tensor2::from_vec(n_rows, n_cols, std::slice::from_raw_parts(x, len).to_vec())?)
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len < need {
        return Err(Fail(TarproStatus::Shape, format!("{what} holds {len} values, {need} needed")));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn tarpro_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tarpro_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Generate the benchmark dataset described by `config` (NULL for defaults).
#[no_mangle]
pub unsafe extern "C" fn tarpro_dataset_generate(config: *const c_char, out: *mut *mut TarproDataset) -> TarproStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let run = config_arg(config)?;
        let inner = run.data.generate(run.seed)?;
        *out = Box::into_raw(Box::new(TarproDataset { inner }));
        Ok(())
    })
}

/// Build a dataset from row-major inputs, labels and domain ids.
#[no_mangle]
pub unsafe extern "C" fn tarpro_dataset_from_arrays(
    x: *const f64,
    labels: *const usize,
    domains: *const usize,
    n_rows: usize,
    n_cols: usize,
    out: *mut *mut TarproDataset,
) -> TarproStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let t = rows_arg(x, n_rows, n_cols)?;
        if n_rows > 0 && (labels.is_null() || domains.is_null()) {
            return Err(null("labels or domains"));
        }
        let (ys, ds) = if n_rows == 0 {
            (&[][..], &[][..])
        } else {
            (std::slice::from_raw_parts(labels, n_rows), std::slice::from_raw_parts(domains, n_rows))
        };
        let num_classes = ys.iter().max().map_or(0, |m| m + 1);
        let num_domains = ds.iter().max().map_or(0, |m| m + 1);
        let inner = Dataset {
            examples: (0..n_rows)
                .map(|i| LabeledExample {
                    x: t.row(i).to_vec(),
                    y: ys[i],
                    d: ds[i],
                })
                .collect(),
            dim: n_cols,
            num_classes,
            domain_names: (0..num_domains).map(|d| format!("d{d}")).collect(),
        };
        inner.validate()?;
        *out = Box::into_raw(Box::new(TarproDataset { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tarpro_dataset_load_csv(path: *const c_char, out: *mut *mut TarproDataset) -> TarproStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inner = load_csv(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(TarproDataset { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tarpro_dataset_free(d: *mut TarproDataset) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Number of rows and input columns.
#[no_mangle]
pub unsafe extern "C" fn tarpro_dataset_shape(
    d: *const TarproDataset,
    n_rows: *mut usize,
    n_cols: *mut usize,
) -> TarproStatus {
    guard(|| {
        let d = handle(d, "dataset")?;
        *out_ptr(n_rows, "n_rows")? = d.inner.len();
        *out_ptr(n_cols, "n_cols")? = d.inner.dim;
        Ok(())
    })
}

/// Copy inputs (row-major), labels and domain ids. Any output may be NULL
/// to skip it; `capacity` is the row capacity of the outputs.
#[no_mangle]
pub unsafe extern "C" fn tarpro_dataset_copy(
    d: *const TarproDataset,
    x: *mut f64,
    labels: *mut usize,
    domains: *mut usize,
    capacity: usize,
) -> TarproStatus {
    guard(|| {
        let d = &handle(d, "dataset")?.inner;
        let n = d.len();
        if !x.is_null() {
            let out = out_slice(x, capacity * d.dim, n * d.dim, "x")?;
            for (chunk, e) in out.chunks_exact_mut(d.dim.max(1)).zip(&d.examples) {
                chunk.copy_from_slice(&e.x);
            }
        }
        if !labels.is_null() {
            for (o, e) in out_slice(labels, capacity, n, "labels")?.iter_mut().zip(&d.examples) {
                *o = e.y;
            }
        }
        if !domains.is_null() {
            for (o, e) in out_slice(domains, capacity, n, "domains")?.iter_mut().zip(&d.examples) {
                *o = e.d;
            }
        }
        Ok(())
    })
}

/// Train a full pipeline on the configured source domains of `data`.
#[no_mangle]
pub unsafe extern "C" fn tarpro_pipeline_train(
    config: *const c_char,
    data: *const TarproDataset,
    out: *mut *mut TarproPipeline,
) -> TarproStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let run = config_arg(config)?;
        let data = &handle(data, "dataset")?.inner;
        let sources = data.filter_domains(&run.data.sources);
        if sources.is_empty() {
            return Err(Fail(TarproStatus::InvalidInput, "dataset has no source-domain rows".into()));
        }
        let (inner, _) = train_pipeline(&sources, &run.pipeline_for(run.seed))?;
        *out = Box::into_raw(Box::new(TarproPipeline { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tarpro_pipeline_load(path: *const c_char, out: *mut *mut TarproPipeline) -> TarproStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inner = load_pipeline(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(TarproPipeline { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tarpro_pipeline_save(p: *const TarproPipeline, path: *const c_char) -> TarproStatus {
    guard(|| {
        let p = handle(p, "pipeline")?;
        save_pipeline(&p.inner, &PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tarpro_pipeline_free(p: *mut TarproPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Input width, feature width and class count.
#[no_mangle]
pub unsafe extern "C" fn tarpro_pipeline_dims(
    p: *const TarproPipeline,
    input_dim: *mut usize,
    feature_dim: *mut usize,
    num_classes: *mut usize,
) -> TarproStatus {
    guard(|| {
        let p = &handle(p, "pipeline")?.inner;
        *out_ptr(input_dim, "input_dim")? = p.metric.input_dim();
        *out_ptr(feature_dim, "feature_dim")? = p.metric.feature_dim;
        *out_ptr(num_classes, "num_classes")? = p.classifier.num_classes;
        Ok(())
    })
}

/// Hash of every model parameter.
#[no_mangle]
pub unsafe extern "C" fn tarpro_pipeline_fingerprint(p: *const TarproPipeline, out: *mut u64) -> TarproStatus {
    guard(|| {
        let p = &handle(p, "pipeline")?.inner;
        *out_ptr(out, "out")? = p.fingerprint();
        Ok(())
    })
}

fn check_width(p: &Pipeline, n_cols: usize) -> Result<(), Fail> {
    if n_cols != p.metric.input_dim() {
        return Err(Fail(
            TarproStatus::Shape,
            format!("rows have {n_cols} columns, pipeline expects {}", p.metric.input_dim()),
        ));
    }
    Ok(())
}

fn rows_dataset(t: &Tensor2) -> Dataset {
    Dataset {
        examples: (0..t.rows())
            .map(|i| LabeledExample {
                x: t.row(i).to_vec(),
                y: 0,
                d: 0,
            })
            .collect(),
        dim: t.cols(),
        num_classes: 1,
        domain_names: vec!["input".into()],
    }
}

/// Extractor features of `n_rows` inputs; `out` receives
/// `n_rows * feature_dim` values.
#[no_mangle]
pub unsafe extern "C" fn tarpro_pipeline_embed(
    p: *const TarproPipeline,
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut f64,
    out_len: usize,
) -> TarproStatus {
    guard(|| {
        let p = &handle(p, "pipeline")?.inner;
        check_width(p, n_cols)?;
        let t = rows_arg(x, n_rows, n_cols)?;
        let bank = p.embed(&rows_dataset(&t))?;
        out_slice(out, out_len, bank.features.data().len(), "out")?.copy_from_slice(bank.features.data());
        Ok(())
    })
}

/// Predicted labels for `n_rows` inputs. Targets are projected when the
/// pipeline has a sampler. `threads` = 0 uses the default pool size.
#[no_mangle]
pub unsafe extern "C" fn tarpro_pipeline_infer(
    p: *const TarproPipeline,
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    threads: usize,
    labels_out: *mut usize,
    out_len: usize,
) -> TarproStatus {
    guard(|| {
        let p = &handle(p, "pipeline")?.inner;
        check_width(p, n_cols)?;
        let t = rows_arg(x, n_rows, n_cols)?;
        let out = out_slice(labels_out, out_len, n_rows, "labels_out")?;
        let data = rows_dataset(&t);
        let labels = match p.sampler {
            Some(_) => {
                let threads = (threads > 0).then_some(threads);
                infer_all(&data, p, &p.config.projection, threads)?
                    .into_iter()
                    .map(|r| r.label)
                    .collect()
            }
            None => predict(&p.classifier, &p.embed(&data)?.features)?,
        };
        out.copy_from_slice(&labels);
        Ok(())
    })
}
