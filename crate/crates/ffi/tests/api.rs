use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;
use std::sync::OnceLock;

use obval::descriptors::{DescriptorExtractor, DESCRIPTOR_LEN};
use obval::geom::Vec2;
use obval::pipeline::{extract_rows, train_from_rows, validate, Verdict};
use obval::projection::{project_point, Label, ProjectedSample};
use obval::svm::TrainParams;
use obval::synthgen::{label_samples, render, LabelBudget, SceneRecipe};
use obval_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    scene: CString,
    image: CString,
    model: CString,
    core_scene: obval::scene::Scene,
    core_model: obval::svm::SvmModel,
    core_image: image::RgbImage,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let rendered = render(&SceneRecipe::default()).unwrap();
        let params = obval::descriptors::DescriptorParams::default();
        let budget = LabelBudget {
            positives: 80,
            negatives: 80,
            ..LabelBudget::default()
        };
        let samples = label_samples(&rendered, &rendered.scene, &params, &budget).unwrap();
        let rows = extract_rows(&rendered.image, &samples, params).unwrap();
        let model = train_from_rows(&rows, params, &TrainParams::default()).unwrap();

        let path = |name: &str| dir.path().join(name);
        rendered.scene.save(path("scene.json")).unwrap();
        rendered.image.save(path("image.png")).unwrap();
        model.save(path("model.json")).unwrap();
        let c = |p: &Path| CString::new(p.to_str().unwrap()).unwrap();
        Fixture {
            scene: c(&path("scene.json")),
            image: c(&path("image.png")),
            model: c(&path("model.json")),
            _dir: dir,
            core_scene: rendered.scene,
            core_model: model,
            core_image: rendered.image,
        }
    })
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    unsafe {
        obval_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

struct Handles {
    scene: *mut ObvalScene,
    image: *mut ObvalImage,
    model: *mut ObvalModel,
}

impl Handles {
    fn open() -> Self {
        let f = fixture();
        let mut h = Handles {
            scene: ptr::null_mut(),
            image: ptr::null_mut(),
            model: ptr::null_mut(),
        };
        unsafe {
            assert_eq!(obval_scene_load(f.scene.as_ptr(), &mut h.scene), ObvalStatus::Ok);
            assert_eq!(obval_image_load(f.image.as_ptr(), &mut h.image), ObvalStatus::Ok);
            assert_eq!(obval_model_load(f.model.as_ptr(), &mut h.model), ObvalStatus::Ok);
        }
        h
    }
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            obval_scene_free(self.scene);
            obval_image_free(self.image);
            obval_model_free(self.model);
        }
    }
}

#[test]
fn version_and_sizes() {
    let v = unsafe { CStr::from_ptr(obval_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    assert_eq!(obval_descriptor_len(), DESCRIPTOR_LEN);
}

#[test]
fn null_arguments_are_reported() {
    let status = unsafe { obval_scene_load(ptr::null(), ptr::null_mut()) };
    assert_eq!(status, ObvalStatus::NullArgument);
    assert!(last_error().contains("out"), "{}", last_error());
    unsafe {
        obval_scene_free(ptr::null_mut());
        assert_eq!(obval_scene_segment_count(ptr::null()), 0);
    }
}

#[test]
fn missing_file_names_the_path() {
    let path = CString::new("/nonexistent/scene.json").unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { obval_scene_load(path.as_ptr(), &mut out) };
    assert_eq!(status, ObvalStatus::Io);
    assert!(out.is_null());
    assert!(last_error().contains("/nonexistent/scene.json"), "{}", last_error());
}

#[test]
fn truncated_error_message_is_terminated() {
    let path = CString::new("/nonexistent/model.json").unwrap();
    let mut out = ptr::null_mut();
    unsafe { obval_model_load(path.as_ptr(), &mut out) };
    let mut buf = [0x7f as c_char; 8];
    let full = unsafe { obval_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(full > 7);
    assert_eq!(buf[7], 0);
}

#[test]
fn projection_matches_library() {
    let f = fixture();
    let h = Handles::open();
    assert_eq!(unsafe { obval_scene_segment_count(h.scene) }, f.core_scene.roads.segments.len());
    let p = f.core_scene.roads.segments[0].polyline[0];
    let (mut u, mut v) = (0.0, 0.0);
    let status = unsafe { obval_project(h.scene, p.lat, p.lon, p.alt, &mut u, &mut v) };
    assert_eq!(status, ObvalStatus::Ok);
    let want = project_point(&f.core_scene.camera, &f.core_scene.frame(), p).pixel().unwrap();
    assert_eq!((u, v), (want.x, want.y));

    let status = unsafe { obval_project(h.scene, f64::NAN, p.lon, p.alt, &mut u, &mut v) };
    assert_ne!(status, ObvalStatus::Ok);
}

#[test]
fn describe_and_predict_match_library() {
    let f = fixture();
    let h = Handles::open();
    let (mut w, mut ht) = (0, 0);
    assert_eq!(unsafe { obval_image_size(h.image, &mut w, &mut ht) }, ObvalStatus::Ok);
    assert_eq!((w, ht), f.core_image.dimensions());

    let (u, v) = (w as f64 / 2.0, ht as f64 / 2.0);
    let mut d = [0.0; DESCRIPTOR_LEN];
    let status = unsafe { obval_describe(h.image, h.model, u, v, 3.0, 4.0, d.as_mut_ptr(), d.len()) };
    assert_eq!(status, ObvalStatus::Ok);

    let primary = Vec2::new(3.0, 4.0).normalized().unwrap();
    let sample = ProjectedSample {
        segment_id: 0,
        world: obval::scene::GeoPoint::new(0.0, 0.0, 0.0),
        px: Vec2::new(u, v),
        primary_dir: primary,
        normal_dir: primary.perp(),
        visible: true,
        label: Label::Unlabeled,
    };
    let ex = DescriptorExtractor::new(f.core_model.descriptor).unwrap();
    let want = ex
        .describe(&f.core_image, &sample, &f.core_model.color_scaling)
        .unwrap()
        .unwrap();
    assert_eq!(d.to_vec(), want.values.to_vec());

    let (mut score, mut class) = (0.0, 0i8);
    let status = unsafe { obval_model_predict(h.model, d.as_ptr(), d.len(), &mut score, &mut class) };
    assert_eq!(status, ObvalStatus::Ok);
    let p = f.core_model.predict(&want.values).unwrap();
    assert_eq!((score, class), (p.score, p.class));

    let status = unsafe { obval_model_predict(h.model, d.as_ptr(), 3, &mut score, &mut class) };
    assert_eq!(status, ObvalStatus::Validation);
}

#[test]
fn describe_rejects_bad_input() {
    let h = Handles::open();
    let mut d = [0.0; DESCRIPTOR_LEN];
    unsafe {
        assert_eq!(
            obval_describe(h.image, ptr::null(), 100.0, 100.0, 1.0, 0.0, d.as_mut_ptr(), 5),
            ObvalStatus::BufferTooSmall
        );
        assert_eq!(
            obval_describe(h.image, ptr::null(), 2.0, 2.0, 1.0, 0.0, d.as_mut_ptr(), d.len()),
            ObvalStatus::OutOfBounds
        );
        assert_eq!(
            obval_describe(h.image, ptr::null(), 100.0, 100.0, 0.0, 0.0, d.as_mut_ptr(), d.len()),
            ObvalStatus::Validation
        );
    }
}

#[test]
fn validate_matches_library() {
    let f = fixture();
    let h = Handles::open();
    let n = f.core_scene.roads.segments.len();
    let mut written = 0;
    let status = unsafe { obval_validate(h.scene, h.image, h.model, 12.0, ptr::null_mut(), 0, &mut written) };
    assert_eq!(status, ObvalStatus::BufferTooSmall);
    assert_eq!(written, n);

    let mut out = vec![
        ObvalSegmentReport {
            segment_id: 0,
            samples: 0,
            hidden: 0,
            scored: 0,
            positive: 0,
            verdict: -1,
        };
        n
    ];
    let status = unsafe { obval_validate(h.scene, h.image, h.model, 12.0, out.as_mut_ptr(), n, &mut written) };
    assert_eq!(status, ObvalStatus::Ok);
    let want = validate(&f.core_scene, &f.core_image, &f.core_model, 12.0).unwrap();
    for (got, r) in out.iter().zip(&want.segments) {
        assert_eq!(got.segment_id, r.segment_id);
        assert_eq!(got.scored as usize, r.scored);
        assert_eq!(got.positive as usize, r.positive);
        let code = match r.verdict {
            Verdict::Consistent => ObvalVerdict::Consistent,
            Verdict::Inconsistent => ObvalVerdict::Inconsistent,
            Verdict::Occluded => ObvalVerdict::Occluded,
            Verdict::Unsampled => ObvalVerdict::Unsampled,
        };
        assert_eq!(got.verdict, code as i32);
    }
}

#[test]
fn metrics_reproduce_reference_counts() {
    let mut m = ObvalMetrics {
        sensitivity: 0.0,
        specificity: 0.0,
        accuracy: 0.0,
    };
    assert_eq!(unsafe { obval_metrics(89, 11, 71, 29, &mut m) }, ObvalStatus::Ok);
    assert_eq!((m.sensitivity, m.specificity, m.accuracy), (0.89, 0.71, 0.80));
    assert_eq!(unsafe { obval_metrics(0, 0, 5, 0, &mut m) }, ObvalStatus::Ok);
    assert!(m.sensitivity.is_nan());
    assert_eq!(m.specificity, 1.0);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/obval.h")).unwrap();
    for name in [
        "obval_version",
        "obval_last_error_message",
        "obval_descriptor_len",
        "obval_scene_load",
        "obval_scene_free",
        "obval_scene_segment_count",
        "obval_project",
        "obval_model_load",
        "obval_model_free",
        "obval_model_predict",
        "obval_image_load",
        "obval_image_free",
        "obval_image_size",
        "obval_describe",
        "obval_validate",
        "obval_metrics",
        "typedef struct ObvalScene ObvalScene",
        "OBVAL_STATUS_BUFFER_TOO_SMALL = 16",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
