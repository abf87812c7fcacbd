//! C ABI for the core library: opaque handles, status codes, and a
//! thread-local error message. The header in `include/scdm.h` is generated
//! from this file by cbindgen at build time.
//!
//! Conventions: every fallible call returns [`ScdmStatus`] and writes its
//! result through trailing out-pointers, which are left untouched on
//! failure. Handles are created and released only by this library; passing
//! a handle to the wrong `_free` function is undefined behavior. All
//! strings are NUL-terminated UTF-8. No call unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use scdm_core::imagediff::{
    load_denoiser, sample, sample_fixed_label, Denoiser, SamplerConfig, ToyImage,
};
use scdm_core::labelmap::{estimate_stats, miou, ClassStats, SemanticMap, StatsOptions};
use scdm_core::metrics::{psnr, ssim, SsimOptions};
use scdm_core::rng::Stream;
use scdm_core::schedule::{
    build_image_schedule, build_label_schedule, Eta, ImageScheduleKind, ScheduleSet,
};
use scdm_core::{corrupt, labeldiff, verify, Error};

/// Result of every fallible call. Anything other than `Ok` leaves a
/// description in the thread-local message read by [`scdm_last_error`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScdmStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// A value argument was outside its documented domain.
    InvalidArgument = 2,
    /// Bytes that could not be parsed as the expected format.
    BadData = 3,
    Io = 4,
    /// Floating-point breakdown or a diverged computation.
    Numeric = 5,
    /// A bug: an internal invariant failed or a panic was caught.
    Internal = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let owned = CString::new(msg.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = owned);
}

fn fail(err: &Error) -> ScdmStatus {
    set_error(&err.to_string());
    match err {
        Error::Format(_) | Error::Corruption(_) | Error::Truncation(_) => ScdmStatus::BadData,
        Error::Io(_) => ScdmStatus::Io,
        Error::Argument(_) | Error::Contract(_) | Error::Degenerate(_) => {
            ScdmStatus::InvalidArgument
        }
        Error::Numeric(_) | Error::Training(_) => ScdmStatus::Numeric,
        Error::Invariant(_) => ScdmStatus::Internal,
    }
}

fn null_arg(name: &str) -> ScdmStatus {
    set_error(&format!("{name} is NULL"));
    ScdmStatus::NullPointer
}

/// Run a body with a panic guard; a caught panic becomes `Internal` rather
/// than undefined behavior in the caller.
fn guarded(f: impl FnOnce() -> ScdmStatus) -> ScdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("panic caught at the C boundary");
            ScdmStatus::Internal
        }
    }
}

unsafe fn path_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a Path, ScdmStatus> {
    if ptr.is_null() {
        return Err(null_arg(name));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error(&format!("{name} is not valid UTF-8"));
            Err(ScdmStatus::InvalidArgument)
        }
    }
}

macro_rules! out_write {
    ($out:expr, $name:literal, $value:expr) => {{
        if $out.is_null() {
            return null_arg($name);
        }
        unsafe { $out.write($value) };
        ScdmStatus::Ok
    }};
}

macro_rules! deref {
    ($ptr:expr, $name:literal) => {{
        match unsafe { $ptr.as_ref() } {
            Some(r) => r,
            None => return null_arg($name),
        }
    }};
}

/// Copy the message for the most recent failure on this thread into `buf`
/// (NUL-terminated, truncated to `cap` bytes) and return the full message
/// length excluding the terminator. `buf` may be NULL to query the length.
///
/// # Safety
/// `buf` must be NULL or point to at least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn scdm_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                buf.add(n).write(0);
            }
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string; never freed.
#[no_mangle]
pub extern "C" fn scdm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// ---------------------------------------------------------------------------
// Label maps
// ---------------------------------------------------------------------------

/// A semantic label map (opaque).
pub struct ScdmMap(SemanticMap);

/// Per-class corpus statistics (opaque).
pub struct ScdmStats(ClassStats);

/// A paired label/image diffusion schedule (opaque).
pub struct ScdmSchedule(ScheduleSet);

/// A dense multichannel image (opaque).
pub struct ScdmImage(ToyImage);

/// A denoising model, oracle or trained checkpoint (opaque).
pub struct ScdmDenoiser(Box<dyn Denoiser>);

/// Build a map from row-major cells. Values must lie in `0..=num_classes`,
/// where `num_classes` itself encodes the masked state.
///
/// # Safety
/// `cells` must point to `height * width` readable `uint16_t`s; `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scdm_map_create(
    height: usize,
    width: usize,
    num_classes: u16,
    cells: *const u16,
    out: *mut *mut ScdmMap,
) -> ScdmStatus {
    guarded(|| {
        if cells.is_null() {
            return null_arg("cells");
        }
        let n = match height.checked_mul(width) {
            Some(n) => n,
            None => {
                set_error("height * width overflows");
                return ScdmStatus::InvalidArgument;
            }
        };
        let vec = unsafe { std::slice::from_raw_parts(cells, n) }.to_vec();
        match SemanticMap::from_cells(height, width, num_classes, vec) {
            Ok(map) => out_write!(out, "out", Box::into_raw(Box::new(ScdmMap(map)))),
            Err(e) => fail(&e),
        }
    })
}

/// Load a map from an SLM1 file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scdm_map_load(
    path: *const c_char,
    out: *mut *mut ScdmMap,
) -> ScdmStatus {
    guarded(|| {
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match SemanticMap::load(path) {
            Ok(map) => out_write!(out, "out", Box::into_raw(Box::new(ScdmMap(map)))),
            Err(e) => fail(&e),
        }
    })
}

/// Write a map as an SLM1 file (atomically).
///
/// # Safety
/// `map` must be a live handle from this library; `path` a NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn scdm_map_save(map: *const ScdmMap, path: *const c_char) -> ScdmStatus {
    guarded(|| {
        let map = deref!(map, "map");
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match map.0.save(path) {
            Ok(()) => ScdmStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Map height in cells; 0 if `map` is NULL.
///
/// # Safety
/// `map` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scdm_map_height(map: *const ScdmMap) -> usize {
    unsafe { map.as_ref() }.map_or(0, |m| m.0.height())
}

/// Map width in cells; 0 if `map` is NULL.
///
/// # Safety
/// `map` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scdm_map_width(map: *const ScdmMap) -> usize {
    unsafe { map.as_ref() }.map_or(0, |m| m.0.width())
}

/// Number of real classes (the masked state is `num_classes`); 0 if NULL.
///
/// # Safety
/// `map` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scdm_map_num_classes(map: *const ScdmMap) -> u16 {
    unsafe { map.as_ref() }.map_or(0, |m| m.0.num_classes())
}

/// Copy the row-major cells into `buf`.
///
/// # Safety
/// `map` must be a live handle; `buf` must have room for
/// `scdm_map_height * scdm_map_width` values.
#[no_mangle]
pub unsafe extern "C" fn scdm_map_cells(map: *const ScdmMap, buf: *mut u16) -> ScdmStatus {
    guarded(|| {
        let map = deref!(map, "map");
        if buf.is_null() {
            return null_arg("buf");
        }
        let cells = map.0.cells();
        unsafe { std::ptr::copy_nonoverlapping(cells.as_ptr(), buf, cells.len()) };
        ScdmStatus::Ok
    })
}

/// Release a map handle. NULL is a no-op.
///
/// # Safety
/// `map` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scdm_map_free(map: *mut ScdmMap) {
    if !map.is_null() {
        drop(unsafe { Box::from_raw(map) });
    }
}

// ---------------------------------------------------------------------------
// Statistics and schedules
// ---------------------------------------------------------------------------

/// Estimate class statistics from `count` maps with phi clamped to >= 1.
///
/// # Safety
/// `maps` must point to `count` live map handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdm_stats_estimate(
    maps: *const *const ScdmMap,
    count: usize,
    out: *mut *mut ScdmStats,
) -> ScdmStatus {
    guarded(|| {
        if maps.is_null() {
            return null_arg("maps");
        }
        let handles = unsafe { std::slice::from_raw_parts(maps, count) };
        let mut corpus = Vec::with_capacity(count);
        for (k, &h) in handles.iter().enumerate() {
            match unsafe { h.as_ref() } {
                Some(m) => corpus.push(m.0.clone()),
                None => {
                    set_error(&format!("maps[{k}] is NULL"));
                    return ScdmStatus::NullPointer;
                }
            }
        }
        match estimate_stats(&corpus, &StatsOptions::default()) {
            Ok(stats) => out_write!(out, "out", Box::into_raw(Box::new(ScdmStats(stats)))),
            Err(e) => fail(&e),
        }
    })
}

/// Load statistics from a JSON file written by the library.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdm_stats_load(
    path: *const c_char,
    out: *mut *mut ScdmStats,
) -> ScdmStatus {
    guarded(|| {
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ClassStats::load(path) {
            Ok(stats) => out_write!(out, "out", Box::into_raw(Box::new(ScdmStats(stats)))),
            Err(e) => fail(&e),
        }
    })
}

/// The scaled rarity product for one class.
///
/// # Safety
/// `stats` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdm_stats_product(
    stats: *const ScdmStats,
    class: u16,
    out: *mut f64,
) -> ScdmStatus {
    guarded(|| {
        let stats = deref!(stats, "stats");
        if class >= stats.0.num_classes {
            set_error(&format!(
                "class {class} outside 0..{}",
                stats.0.num_classes
            ));
            return ScdmStatus::InvalidArgument;
        }
        out_write!(out, "out", stats.0.product(class))
    })
}

/// Release a statistics handle. NULL is a no-op.
///
/// # Safety
/// `stats` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scdm_stats_free(stats: *mut ScdmStats) {
    if !stats.is_null() {
        drop(unsafe { Box::from_raw(stats) });
    }
}

/// Build a class-wise label schedule plus the matching image schedule.
/// `eta` must be positive; pass INFINITY for the identity (no masking)
/// schedule. The image side uses the linear ramp equivalent to the
/// conventional 1000-step one.
///
/// # Safety
/// `stats` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdm_schedule_build(
    stats: *const ScdmStats,
    num_steps: usize,
    eta: f64,
    out: *mut *mut ScdmSchedule,
) -> ScdmStatus {
    guarded(|| {
        let stats = deref!(stats, "stats");
        let eta = if eta.is_infinite() && eta > 0.0 {
            Eta::Infinite
        } else {
            match Eta::finite(eta) {
                Ok(e) => e,
                Err(e) => return fail(&e),
            }
        };
        let label = match build_label_schedule(&stats.0, num_steps, eta, &[]) {
            Ok(l) => l,
            Err(e) => return fail(&e),
        };
        let image =
            match build_image_schedule(num_steps, ImageScheduleKind::linear_analog(num_steps)) {
                Ok(i) => i,
                Err(e) => return fail(&e),
            };
        let set = ScheduleSet { label, image };
        out_write!(out, "out", Box::into_raw(Box::new(ScdmSchedule(set))))
    })
}

/// Load a schedule pair from a JSON file written by the library.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdm_schedule_load(
    path: *const c_char,
    out: *mut *mut ScdmSchedule,
) -> ScdmStatus {
    guarded(|| {
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ScheduleSet::load(path) {
            Ok(set) => out_write!(out, "out", Box::into_raw(Box::new(ScdmSchedule(set)))),
            Err(e) => fail(&e),
        }
    })
}

/// Write a schedule pair as JSON (atomically).
///
/// # Safety
/// `sched` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn scdm_schedule_save(
    sched: *const ScdmSchedule,
    path: *const c_char,
) -> ScdmStatus {
    guarded(|| {
        let sched = deref!(sched, "sched");
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match sched.0.save(path) {
            Ok(()) => ScdmStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Number of diffusion steps; 0 if `sched` is NULL.
///
/// # Safety
/// `sched` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scdm_schedule_num_steps(sched: *const ScdmSchedule) -> usize {
    unsafe { sched.as_ref() }.map_or(0, |s| s.0.label.num_steps())
}

/// Cumulative masking probability for `class` at step `t` (1-based;
/// `t = 0` reads as 0).
///
/// # Safety
/// `sched` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdm_schedule_gamma(
    sched: *const ScdmSchedule,
    t: usize,
    class: u16,
    out: *mut f64,
) -> ScdmStatus {
    guarded(|| {
        let sched = deref!(sched, "sched");
        let label = &sched.0.label;
        if t > label.num_steps() {
            set_error(&format!("t {t} outside 0..={}", label.num_steps()));
            return ScdmStatus::InvalidArgument;
        }
        if class >= label.num_classes() {
            set_error(&format!("class {class} outside 0..{}", label.num_classes()));
            return ScdmStatus::InvalidArgument;
        }
        let value = if t == 0 { 0.0 } else { label.gamma(t, class) };
        out_write!(out, "out", value)
    })
}

/// Release a schedule handle. NULL is a no-op.
///
/// # Safety
/// `sched` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scdm_schedule_free(sched: *mut ScdmSchedule) {
    if !sched.is_null() {
        drop(unsafe { Box::from_raw(sched) });
    }
}

// ---------------------------------------------------------------------------
// Label diffusion and corruptions
// ---------------------------------------------------------------------------

/// Forward-diffuse a map to step `t`: each cell is masked if its sampled
/// first-masking time is at or before `t`. The whole trajectory is coupled,
/// so increasing `t` with the same seed only grows the masked set.
///
/// # Safety
/// `map` and `sched` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdm_diffuse_labels(
    map: *const ScdmMap,
    sched: *const ScdmSchedule,
    t: usize,
    seed: u64,
    out: *mut *mut ScdmMap,
) -> ScdmStatus {
    guarded(|| {
        let map = deref!(map, "map");
        let sched = deref!(sched, "sched");
        let stream = Stream::named(seed, "diffuse-labels");
        let times = match labeldiff::sample_mask_times(&map.0, &sched.0.label, &stream) {
            Ok(m) => m,
            Err(e) => return fail(&e),
        };
        match times.reconstruct(&map.0, t) {
            Ok(y_t) => out_write!(out, "out", Box::into_raw(Box::new(ScdmMap(y_t)))),
            Err(e) => fail(&e),
        }
    })
}

/// Which corruption [`scdm_corrupt`] applies.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScdmCorruption {
    /// Blocky downsampling by `factor`.
    Downsample = 0,
    /// Relabel cells within Chebyshev `distance` of a class boundary.
    EdgeBand = 1,
    /// Relabel each cell independently with probability `rate`.
    Random = 2,
}

/// Degrade a map. `factor` is used by `Downsample`, `distance` and
/// `unlabeled` by `EdgeBand`, `rate`, `unlabeled`, and `seed` by `Random`.
///
/// # Safety
/// `map` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdm_corrupt(
    map: *const ScdmMap,
    mode: ScdmCorruption,
    factor: usize,
    distance: usize,
    rate: f64,
    unlabeled: u16,
    seed: u64,
    out: *mut *mut ScdmMap,
) -> ScdmStatus {
    guarded(|| {
        let map = deref!(map, "map");
        let result = match mode {
            ScdmCorruption::Downsample => corrupt::corrupt_ds(&map.0, factor),
            ScdmCorruption::EdgeBand => corrupt::corrupt_edge(&map.0, distance, unlabeled),
            ScdmCorruption::Random => {
                corrupt::corrupt_random(&map.0, rate, unlabeled, &Stream::named(seed, "corrupt"))
            }
        };
        match result {
            Ok(m) => out_write!(out, "out", Box::into_raw(Box::new(ScdmMap(m)))),
            Err(e) => fail(&e),
        }
    })
}

// ---------------------------------------------------------------------------
// Images, denoisers, sampling
// ---------------------------------------------------------------------------

/// Load an image from a SIM1 file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdm_image_load(
    path: *const c_char,
    out: *mut *mut ScdmImage,
) -> ScdmStatus {
    guarded(|| {
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ToyImage::load(path) {
            Ok(img) => out_write!(out, "out", Box::into_raw(Box::new(ScdmImage(img)))),
            Err(e) => fail(&e),
        }
    })
}

/// Write an image as a SIM1 file (atomically). Values are stored as f32.
///
/// # Safety
/// `img` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn scdm_image_save(
    img: *const ScdmImage,
    path: *const c_char,
) -> ScdmStatus {
    guarded(|| {
        let img = deref!(img, "img");
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match img.0.save(path) {
            Ok(()) => ScdmStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Image height in pixels; 0 if `img` is NULL.
///
/// # Safety
/// `img` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scdm_image_height(img: *const ScdmImage) -> usize {
    unsafe { img.as_ref() }.map_or(0, |i| i.0.height())
}

/// Image width in pixels; 0 if `img` is NULL.
///
/// # Safety
/// `img` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scdm_image_width(img: *const ScdmImage) -> usize {
    unsafe { img.as_ref() }.map_or(0, |i| i.0.width())
}

/// Image channel count; 0 if `img` is NULL.
///
/// # Safety
/// `img` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scdm_image_channels(img: *const ScdmImage) -> usize {
    unsafe { img.as_ref() }.map_or(0, |i| i.0.channels())
}

/// Copy the image values (row-major, channel-interleaved) into `buf`.
///
/// # Safety
/// `img` must be a live handle; `buf` must have room for
/// `height * width * channels` doubles.
#[no_mangle]
pub unsafe extern "C" fn scdm_image_values(img: *const ScdmImage, buf: *mut f64) -> ScdmStatus {
    guarded(|| {
        let img = deref!(img, "img");
        if buf.is_null() {
            return null_arg("buf");
        }
        let values = img.0.values();
        unsafe { std::ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len()) };
        ScdmStatus::Ok
    })
}

/// Release an image handle. NULL is a no-op.
///
/// # Safety
/// `img` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scdm_image_free(img: *mut ScdmImage) {
    if !img.is_null() {
        drop(unsafe { Box::from_raw(img) });
    }
}

/// Load a denoiser checkpoint, dispatching on the flavor declared in the
/// file: an oracle spec or a trained MLP.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdm_denoiser_load(
    path: *const c_char,
    out: *mut *mut ScdmDenoiser,
) -> ScdmStatus {
    guarded(|| {
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_denoiser(path) {
            Ok(den) => out_write!(out, "out", Box::into_raw(Box::new(ScdmDenoiser(den)))),
            Err(e) => fail(&e),
        }
    })
}

/// Release a denoiser handle. NULL is a no-op.
///
/// # Safety
/// `den` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scdm_denoiser_free(den: *mut ScdmDenoiser) {
    if !den.is_null() {
        drop(unsafe { Box::from_raw(den) });
    }
}

/// Sampler knobs for [`scdm_sample`]. Zero-initialize and override, or
/// start from [`scdm_sample_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ScdmSampleOptions {
    /// Respaced step count; 0 means every schedule step.
    pub num_steps: usize,
    /// Classifier-free guidance scale (0 disables the unconditional pass).
    pub guidance_scale: f64,
    /// Extrapolation weight on consecutive clean-image estimates.
    pub extrapolation: f64,
    /// Condition every step on the input map, skipping label diffusion.
    pub fixed_label: bool,
    pub seed: u64,
}

/// The defaults: full step count, no guidance, no extrapolation, label
/// diffusion on, seed 0.
#[no_mangle]
pub extern "C" fn scdm_sample_options_default() -> ScdmSampleOptions {
    ScdmSampleOptions {
        num_steps: 0,
        guidance_scale: 0.0,
        extrapolation: 0.0,
        fixed_label: false,
        seed: 0,
    }
}

/// Run the reverse chain conditioned on `map` and return the sampled image.
///
/// # Safety
/// `den`, `map`, `sched`, and `opts` must be live pointers from this
/// library or caller stack memory; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdm_sample(
    den: *const ScdmDenoiser,
    map: *const ScdmMap,
    sched: *const ScdmSchedule,
    opts: *const ScdmSampleOptions,
    out: *mut *mut ScdmImage,
) -> ScdmStatus {
    guarded(|| {
        let den = deref!(den, "den");
        let map = deref!(map, "map");
        let sched = deref!(sched, "sched");
        let opts = deref!(opts, "opts");
        let cfg = SamplerConfig {
            num_steps: (opts.num_steps > 0).then_some(opts.num_steps),
            guidance_scale: opts.guidance_scale,
            extrapolation: opts.extrapolation,
            ..SamplerConfig::default()
        };
        let stream = Stream::named(opts.seed, "sample");
        let result = if opts.fixed_label {
            sample_fixed_label(den.0.as_ref(), &map.0, &sched.0.image, &cfg, &stream)
        } else {
            sample(
                den.0.as_ref(),
                &map.0,
                &sched.0.label,
                &sched.0.image,
                &cfg,
                &stream,
            )
        };
        match result {
            Ok(img) => out_write!(out, "out", Box::into_raw(Box::new(ScdmImage(img)))),
            Err(e) => fail(&e),
        }
    })
}

// ---------------------------------------------------------------------------
// Metrics and self-checks
// ---------------------------------------------------------------------------

/// Mean intersection-over-union between two maps. `ignore_class` below 0
/// means no class is ignored.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdm_miou(
    a: *const ScdmMap,
    b: *const ScdmMap,
    ignore_class: i32,
    out: *mut f64,
) -> ScdmStatus {
    guarded(|| {
        let a = deref!(a, "a");
        let b = deref!(b, "b");
        let ignore = if ignore_class < 0 {
            None
        } else if ignore_class <= u16::MAX as i32 {
            Some(ignore_class as u16)
        } else {
            set_error(&format!("ignore_class {ignore_class} out of range"));
            return ScdmStatus::InvalidArgument;
        };
        match miou(&a.0, &b.0, ignore) {
            Ok(v) => out_write!(out, "out", v),
            Err(e) => fail(&e),
        }
    })
}

/// Peak signal-to-noise ratio in dB; +INFINITY for identical images.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdm_psnr(
    a: *const ScdmImage,
    b: *const ScdmImage,
    data_range: f64,
    out: *mut f64,
) -> ScdmStatus {
    guarded(|| {
        let a = deref!(a, "a");
        let b = deref!(b, "b");
        match psnr(&a.0, &b.0, data_range) {
            Ok(v) => out_write!(out, "out", v),
            Err(e) => fail(&e),
        }
    })
}

/// Mean structural similarity with a `window`-sided uniform window.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdm_ssim(
    a: *const ScdmImage,
    b: *const ScdmImage,
    window: usize,
    data_range: f64,
    out: *mut f64,
) -> ScdmStatus {
    guarded(|| {
        let a = deref!(a, "a");
        let b = deref!(b, "b");
        let opts = SsimOptions {
            window,
            data_range,
            ..SsimOptions::default()
        };
        match ssim(&a.0, &b.0, &opts) {
            Ok(v) => out_write!(out, "out", v),
            Err(e) => fail(&e),
        }
    })
}

/// Run one named numerical self-check ("prop1", "prop2", "marginal",
/// "trajectory", "oracle", or "gradcheck") and write whether it passed.
/// Returns `Ok` even for a failed check; only invalid names or internal
/// errors produce a non-`Ok` status.
///
/// # Safety
/// `target` must be a NUL-terminated string; `passed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdm_verify(
    target: *const c_char,
    seed: u64,
    passed: *mut bool,
) -> ScdmStatus {
    guarded(|| {
        if target.is_null() {
            return null_arg("target");
        }
        let name = match unsafe { CStr::from_ptr(target) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("target is not valid UTF-8");
                return ScdmStatus::InvalidArgument;
            }
        };
        let parsed = match name.parse::<verify::VerifyTarget>() {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        match verify::run_target(parsed, seed) {
            Ok(outcome) => out_write!(passed, "passed", outcome.pass()),
            Err(e) => fail(&e),
        }
    })
}
