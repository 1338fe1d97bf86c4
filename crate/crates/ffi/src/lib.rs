//! C ABI over the `obval` library.
//!
//! Objects cross the boundary as opaque handles created by `*_load` and
//! released by the matching `*_free`. Every fallible call returns an
//! [`ObvalStatus`]; on failure a message for the calling thread is kept
//! until the next call and can be copied out with
//! [`obval_last_error_message`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use obval::descriptors::{compose, ColorScaling, DescriptorExtractor, DescriptorParams, DESCRIPTOR_LEN};
use obval::evaluation::{metrics, ConfusionCounts};
use obval::geom::Vec2;
use obval::pipeline::{self, Verdict};
use obval::projection::{project_point, Label, ProjectedSample, Projected};
use obval::scene::{GeoPoint, Scene};
use obval::svm::SvmModel;
use obval::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObvalStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    OutOfBounds = 6,
    NonFinite = 7,
    SingleClass = 8,
    NotConverged = 9,
    UnknownTarget = 10,
    DegenerateCamera = 11,
    ClassTooSmall = 12,
    Empty = 13,
    Image = 14,
    BehindCamera = 15,
    BufferTooSmall = 16,
    Panic = 17,
}

/// Per-segment outcome codes written by [`obval_validate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObvalVerdict {
    Consistent = 0,
    Inconsistent = 1,
    Occluded = 2,
    Unsampled = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ObvalSegmentReport {
    pub segment_id: u32,
    pub samples: u32,
    pub hidden: u32,
    pub scored: u32,
    pub positive: u32,
    pub verdict: i32,
}

/// Undefined ratios are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ObvalMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
}

pub struct ObvalScene(Scene);
pub struct ObvalModel(SvmModel);
pub struct ObvalImage(image::RgbImage);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> ObvalStatus {
    match e {
        Error::Io { .. } => ObvalStatus::Io,
        Error::Parse { .. } => ObvalStatus::Parse,
        Error::Validation { .. } => ObvalStatus::Validation,
        Error::OutOfBounds { .. } => ObvalStatus::OutOfBounds,
        Error::NonFinite(_) => ObvalStatus::NonFinite,
        Error::SingleClass => ObvalStatus::SingleClass,
        Error::NotConverged { .. } => ObvalStatus::NotConverged,
        Error::UnknownTarget { .. } => ObvalStatus::UnknownTarget,
        Error::DegenerateCamera(_) => ObvalStatus::DegenerateCamera,
        Error::ClassTooSmall { .. } => ObvalStatus::ClassTooSmall,
        Error::Empty(_) => ObvalStatus::Empty,
        Error::Image(_) => ObvalStatus::Image,
    }
}

fn fail(status: ObvalStatus, msg: impl Into<String>) -> ObvalStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> ObvalStatus {
    let s = status_of(&e);
    fail(s, e.to_string())
}

/// Runs `f`, converting panics into [`ObvalStatus::Panic`].
fn guard(f: impl FnOnce() -> ObvalStatus) -> ObvalStatus {
    set_error(String::new());
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(ObvalStatus::Panic, "internal panic"),
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, ObvalStatus> {
    if p.is_null() {
        return Err(fail(ObvalStatus::NullArgument, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(ObvalStatus::InvalidUtf8, "path is not valid UTF-8"))
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(ObvalStatus::NullArgument, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn obval_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// always NUL-terminated when `len > 0`). Returns the full message length.
#[no_mangle]
pub unsafe extern "C" fn obval_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

#[no_mangle]
pub extern "C" fn obval_descriptor_len() -> usize {
    DESCRIPTOR_LEN
}

#[no_mangle]
pub unsafe extern "C" fn obval_scene_load(path: *const c_char, out: *mut *mut ObvalScene) -> ObvalStatus {
    guard(|| {
        non_null!(out);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Scene::load(path) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(ObvalScene(s)));
                ObvalStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn obval_scene_free(scene: *mut ObvalScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

#[no_mangle]
pub unsafe extern "C" fn obval_scene_segment_count(scene: *const ObvalScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.roads.segments.len())
}

/// Projects a geodetic point through the scene camera.
#[no_mangle]
pub unsafe extern "C" fn obval_project(
    scene: *const ObvalScene,
    lat: f64,
    lon: f64,
    alt: f64,
    u: *mut f64,
    v: *mut f64,
) -> ObvalStatus {
    guard(|| {
        non_null!(scene, u, v);
        let s = &(*scene).0;
        let p = GeoPoint::new(lat, lon, alt);
        if let Err(e) = p.validate("point") {
            return from_error(e);
        }
        match project_point(&s.camera, &s.frame(), p) {
            Projected::Image(px) => {
                *u = px.x;
                *v = px.y;
                ObvalStatus::Ok
            }
            Projected::BehindCamera => fail(ObvalStatus::BehindCamera, "point lies behind the camera"),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn obval_model_load(path: *const c_char, out: *mut *mut ObvalModel) -> ObvalStatus {
    guard(|| {
        non_null!(out);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match SvmModel::load(path) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(ObvalModel(m)));
                ObvalStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn obval_model_free(model: *mut ObvalModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Decision value and class (+1/-1) of a composed descriptor of `len`
/// values.
#[no_mangle]
pub unsafe extern "C" fn obval_model_predict(
    model: *const ObvalModel,
    descriptor: *const f64,
    len: usize,
    score: *mut f64,
    class: *mut i8,
) -> ObvalStatus {
    guard(|| {
        non_null!(model, descriptor, score, class);
        let x = std::slice::from_raw_parts(descriptor, len);
        match (*model).0.predict(x) {
            Ok(p) => {
                *score = p.score;
                *class = p.class;
                ObvalStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn obval_image_load(path: *const c_char, out: *mut *mut ObvalImage) -> ObvalStatus {
    guard(|| {
        non_null!(out);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match image::open(&path) {
            Ok(img) => {
                *out = Box::into_raw(Box::new(ObvalImage(img.to_rgb8())));
                ObvalStatus::Ok
            }
            Err(e) => from_error(Error::Image(e)),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn obval_image_free(image: *mut ObvalImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

#[no_mangle]
pub unsafe extern "C" fn obval_image_size(image: *const ObvalImage, width: *mut u32, height: *mut u32) -> ObvalStatus {
    guard(|| {
        non_null!(image, width, height);
        let (w, h) = (*image).0.dimensions();
        *width = w;
        *height = h;
        ObvalStatus::Ok
    })
}

/// Composed descriptor of the patch around `(u, v)` with the given road
/// direction, written to `out` (at least [`obval_descriptor_len`] values).
/// When `model` is non-null its descriptor settings and color scaling are
/// used; otherwise defaults with unit scaling.
#[no_mangle]
pub unsafe extern "C" fn obval_describe(
    image: *const ObvalImage,
    model: *const ObvalModel,
    u: f64,
    v: f64,
    dir_u: f64,
    dir_v: f64,
    out: *mut f64,
    len: usize,
) -> ObvalStatus {
    guard(|| {
        non_null!(image, out);
        if len < DESCRIPTOR_LEN {
            return fail(ObvalStatus::BufferTooSmall, format!("need {DESCRIPTOR_LEN} values"));
        }
        let (params, scaling) = match model.as_ref() {
            Some(m) => (m.0.descriptor, m.0.color_scaling),
            None => (DescriptorParams::default(), ColorScaling::default()),
        };
        let Some(primary) = Vec2::new(dir_u, dir_v).normalized() else {
            return fail(ObvalStatus::Validation, "direction must be a nonzero finite vector");
        };
        let extractor = match DescriptorExtractor::new(params) {
            Ok(x) => x,
            Err(e) => return from_error(e),
        };
        let sample = ProjectedSample {
            segment_id: 0,
            world: GeoPoint::new(0.0, 0.0, 0.0),
            px: Vec2::new(u, v),
            primary_dir: primary,
            normal_dir: primary.perp(),
            visible: true,
            label: Label::Unlabeled,
        };
        let Some(raw) = extractor.raw(&(*image).0, &sample) else {
            return fail(ObvalStatus::OutOfBounds, "patch leaves the image");
        };
        match compose(&raw, &scaling) {
            Ok(d) => {
                ptr::copy_nonoverlapping(d.values.as_ptr(), out, DESCRIPTOR_LEN);
                ObvalStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Validates every segment of `scene`. Up to `capacity` reports are written
/// to `out`; `written` receives the number of segments. When `capacity` is
/// too small, nothing is written and [`ObvalStatus::BufferTooSmall`] is
/// returned with `written` set to the required count.
#[no_mangle]
pub unsafe extern "C" fn obval_validate(
    scene: *const ObvalScene,
    image: *const ObvalImage,
    model: *const ObvalModel,
    spacing_px: f64,
    out: *mut ObvalSegmentReport,
    capacity: usize,
    written: *mut usize,
) -> ObvalStatus {
    guard(|| {
        non_null!(scene, image, model, written);
        let scene = &(*scene).0;
        *written = scene.roads.segments.len();
        if capacity < scene.roads.segments.len() {
            return fail(ObvalStatus::BufferTooSmall, format!("need {} reports", scene.roads.segments.len()));
        }
        if scene.roads.segments.is_empty() {
            return ObvalStatus::Ok;
        }
        non_null!(out);
        let v = match pipeline::validate(scene, &(*image).0, &(*model).0, spacing_px) {
            Ok(v) => v,
            Err(e) => return from_error(e),
        };
        for (k, r) in v.segments.iter().enumerate() {
            *out.add(k) = ObvalSegmentReport {
                segment_id: r.segment_id,
                samples: r.samples as u32,
                hidden: r.hidden as u32,
                scored: r.scored as u32,
                positive: r.positive as u32,
                verdict: match r.verdict {
                    Verdict::Consistent => ObvalVerdict::Consistent,
                    Verdict::Inconsistent => ObvalVerdict::Inconsistent,
                    Verdict::Occluded => ObvalVerdict::Occluded,
                    Verdict::Unsampled => ObvalVerdict::Unsampled,
                } as i32,
            };
        }
        ObvalStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn obval_metrics(tp: u64, fn_: u64, tn: u64, fp: u64, out: *mut ObvalMetrics) -> ObvalStatus {
    guard(|| {
        non_null!(out);
        let m = metrics(ConfusionCounts { tp, tn, fp, fn_ });
        *out = ObvalMetrics {
            sensitivity: m.sensitivity.unwrap_or(f64::NAN),
            specificity: m.specificity.unwrap_or(f64::NAN),
            accuracy: m.accuracy.unwrap_or(f64::NAN),
        };
        ObvalStatus::Ok
    })
}
