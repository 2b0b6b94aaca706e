//! C ABI over the `uncertseg` core.
//!
//! Objects cross the boundary as opaque handles (`UsTensor`, `UsNetwork`)
//! that the caller releases with the matching `*_free` function. Every
//! fallible call returns a `UsStatus`; on failure a message is available
//! from `us_last_error` on the same thread until the next failing call.
//! Panics are caught at the boundary and reported as `US_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use uncertseg::bayes::mc_predict_threaded;
use uncertseg::engine::{Mode, Tensor};
use uncertseg::metrics::{dice, pr_auc};
use uncertseg::model::{build_network, load_checkpoint, save_checkpoint, ArchitectureSpec, Network, Variant};
use uncertseg::postprocess::{otsu_threshold, SegmentationMask};
use uncertseg::{Error, RngState};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UsStatus {
    Ok = 0,
    InvalidArgument = 1,
    Shape = 2,
    NonFinite = 3,
    Format = 4,
    Io = 5,
    NullPointer = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UsVariant {
    Unet = 0,
    U2net = 1,
    Bunet = 2,
}

/// Network mode. Training uses batch statistics and dropout, evaluation
/// neither; MC sampling uses running statistics with dropout active.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UsMode {
    Train = 0,
    Eval = 1,
    McSample = 2,
}

/// Dense row-major f32 tensor.
pub struct UsTensor(Tensor);

/// Segmentation network with its weights and batch-norm statistics.
pub struct UsNetwork(Network);

struct Failure(UsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape(_) => UsStatus::Shape,
            Error::InvalidArgument(_) => UsStatus::InvalidArgument,
            Error::NonFinite(_) => UsStatus::NonFinite,
            Error::Format { .. } => UsStatus::Format,
            Error::Io { .. } => UsStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            UsStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(UsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(UsStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn us_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn us_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Creates a tensor of the given shape. `data` holds the product of the
/// extents in row-major order, or is NULL for zeros.
///
/// # Safety
/// `shape` must point to `ndim` values; `data`, when non-NULL, to as many
/// floats as the shape implies.
#[no_mangle]
pub unsafe extern "C" fn us_tensor_new(
    shape: *const usize,
    ndim: usize,
    data: *const f32,
    out: *mut *mut UsTensor,
) -> UsStatus {
    guard(|| {
        if shape.is_null() || ndim == 0 {
            return Err(Failure(UsStatus::InvalidArgument, "shape must have at least one extent".into()));
        }
        let dims = std::slice::from_raw_parts(shape, ndim).to_vec();
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Failure(UsStatus::InvalidArgument, "shape overflows".into()))?;
        let values = if data.is_null() {
            vec![0.0; n]
        } else {
            std::slice::from_raw_parts(data, n).to_vec()
        };
        put(out, UsTensor(Tensor::new(&dims, values)?))
    })
}

/// # Safety
/// `t` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn us_tensor_free(t: *mut UsTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of dimensions, 0 for NULL.
///
/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn us_tensor_ndim(t: *const UsTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.shape().len())
}

/// Number of elements, 0 for NULL.
///
/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn us_tensor_len(t: *const UsTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.len())
}

/// Copies the extents into `out`, which has room for `cap` values.
///
/// # Safety
/// `t` must be a live handle and `out` writable for `cap` values.
#[no_mangle]
pub unsafe extern "C" fn us_tensor_shape(t: *const UsTensor, out: *mut usize, cap: usize) -> UsStatus {
    guard(|| {
        let t = deref(t, "tensor")?;
        if out.is_null() {
            return Err(null("output buffer"));
        }
        let shape = t.0.shape();
        if cap < shape.len() {
            return Err(Failure(
                UsStatus::InvalidArgument,
                format!("shape buffer holds {cap} values, tensor has {} dimensions", shape.len()),
            ));
        }
        std::ptr::copy_nonoverlapping(shape.as_ptr(), out, shape.len());
        Ok(())
    })
}

/// Borrowed pointer to the elements, valid while the handle lives; NULL
/// for a NULL handle.
///
/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn us_tensor_data(t: *const UsTensor) -> *const f32 {
    t.as_ref().map_or(std::ptr::null(), |t| t.0.data().as_ptr())
}

/// Reads a `.tnsr` file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn us_tensor_load(path: *const c_char, out: *mut *mut UsTensor) -> UsStatus {
    guard(|| {
        let p = path_arg(path)?;
        put(out, UsTensor(uncertseg::data::load_tensor(p)?))
    })
}

/// Writes a `.tnsr` file.
///
/// # Safety
/// `t` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn us_tensor_save(t: *const UsTensor, path: *const c_char) -> UsStatus {
    guard(|| {
        let t = deref(t, "tensor")?;
        uncertseg::data::save_tensor(path_arg(path)?, &t.0)?;
        Ok(())
    })
}

/// Builds a freshly initialised network with `base_width` channels in the
/// first block. The network starts in eval mode.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn us_network_build(
    variant: UsVariant,
    base_width: usize,
    seed: u64,
    out: *mut *mut UsNetwork,
) -> UsStatus {
    guard(|| {
        let v = match variant {
            UsVariant::Unet => Variant::UNet,
            UsVariant::U2net => Variant::U2Net,
            UsVariant::Bunet => Variant::BUNet,
        };
        if base_width == 0 {
            return Err(Failure(UsStatus::InvalidArgument, "base width must be positive".into()));
        }
        let mut net = build_network(ArchitectureSpec::with_base_width(v, base_width), &mut RngState::new(seed))?;
        net.set_mode(Mode::Eval);
        put(out, UsNetwork(net))
    })
}

/// Loads a checkpoint directory. The network starts in eval mode.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn us_network_load(dir: *const c_char, out: *mut *mut UsNetwork) -> UsStatus {
    guard(|| {
        let p = path_arg(dir)?;
        put(out, UsNetwork(load_checkpoint(p)?))
    })
}

/// Writes a checkpoint directory.
///
/// # Safety
/// `net` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn us_network_save(net: *const UsNetwork, dir: *const c_char) -> UsStatus {
    guard(|| {
        let net = deref(net, "network")?;
        save_checkpoint(&net.0, path_arg(dir)?)?;
        Ok(())
    })
}

/// # Safety
/// `net` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn us_network_free(net: *mut UsNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn us_network_set_mode(net: *mut UsNetwork, mode: UsMode) -> UsStatus {
    guard(|| {
        let net = deref_mut(net, "network")?;
        net.0.set_mode(match mode {
            UsMode::Train => Mode::Train,
            UsMode::Eval => Mode::Eval,
            UsMode::McSample => Mode::McSample,
        });
        Ok(())
    })
}

/// Number of layers with a non-zero dropout rate, 0 for NULL.
///
/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn us_network_dropout_sites(net: *const UsNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.spec().dropout_sites().len())
}

/// Monte-Carlo prediction of one `[H, W]` B-scan: `samples` stochastic
/// passes, pixel-wise mean foreground probability and standard deviation.
/// The network must be in eval or MC-sample mode. Results do not depend on
/// `threads`.
///
/// # Safety
/// `net` and `bscan` must be live handles; `out_mean` and `out_std`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn us_mc_predict(
    net: *const UsNetwork,
    bscan: *const UsTensor,
    samples: usize,
    seed: u64,
    threads: usize,
    out_mean: *mut *mut UsTensor,
    out_std: *mut *mut UsTensor,
) -> UsStatus {
    guard(|| {
        let net = deref(net, "network")?;
        let bscan = deref(bscan, "bscan")?;
        if out_mean.is_null() || out_std.is_null() {
            return Err(null("output pointer"));
        }
        let r = mc_predict_threaded(&net.0, &bscan.0, samples, &RngState::new(seed), threads.max(1))?;
        put(out_mean, UsTensor(r.mean_prob))?;
        put(out_std, UsTensor(r.epistemic_std))
    })
}

/// Otsu binarisation of an `[H, W]` probability map into a `{0, 1}` mask.
/// `out_degenerate` (optional) is set to 1 when the map has fewer than two
/// occupied histogram bins, in which case the mask is empty.
///
/// # Safety
/// `prob` must be a live handle, `out_mask` and `out_threshold` writable,
/// `out_degenerate` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn us_otsu_threshold(
    prob: *const UsTensor,
    out_mask: *mut *mut UsTensor,
    out_threshold: *mut f32,
    out_degenerate: *mut i32,
) -> UsStatus {
    guard(|| {
        let prob = deref(prob, "probability map")?;
        let out_threshold = deref_mut(out_threshold, "threshold output")?;
        let m = otsu_threshold(&prob.0)?;
        *out_threshold = m.threshold;
        if let Some(d) = out_degenerate.as_mut() {
            *d = m.degenerate as i32;
        }
        put(out_mask, UsTensor(m.to_tensor()))
    })
}

/// Dice overlap of two `[H, W]` `{0, 1}` masks; two empty masks score 1.
///
/// # Safety
/// `a` and `b` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn us_dice(a: *const UsTensor, b: *const UsTensor, out: *mut f64) -> UsStatus {
    guard(|| {
        let a = SegmentationMask::from_binary(&deref(a, "first mask")?.0)?;
        let b = SegmentationMask::from_binary(&deref(b, "second mask")?.0)?;
        *deref_mut(out, "output")? = dice(&a, &b)?;
        Ok(())
    })
}

/// Area under the precision-recall curve (average precision) of `n`
/// scores against labels (non-zero = positive).
///
/// # Safety
/// `scores` and `labels` must point to `n` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn us_pr_auc(scores: *const f32, labels: *const u8, n: usize, out: *mut f64) -> UsStatus {
    guard(|| {
        if scores.is_null() || labels.is_null() {
            return Err(null("input array"));
        }
        let s = std::slice::from_raw_parts(scores, n);
        let l: Vec<bool> = std::slice::from_raw_parts(labels, n).iter().map(|&v| v != 0).collect();
        *deref_mut(out, "output")? = pr_auc(s, &l)?.1;
        Ok(())
    })
}
