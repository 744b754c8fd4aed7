use std::fs;
use std::path::Path;

use gtm::dataset::{ColmapModel, Image, SceneManifest, Split};
use gtm::synth::{SynthScene, SynthSpec};
use gtm::GtmError;

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

/// Three images around a point at the origin; the world-to-camera
/// transforms are hand-written so the expected pixels can be derived by
/// hand.
fn three_image_model(dir: &Path) {
    write(
        dir,
        "cameras.txt",
        "# comment\n1 PINHOLE 100 80 100 90 50 40\n2 SIMPLE_PINHOLE 64 64 32 32 32\n",
    );
    // Image 1: identity rotation, origin 5 units ahead.
    // Image 2: 90° about y, (qw, qy) = (cos 45°, sin 45°).
    // Image 3: identity rotation shifted right by one unit.
    let h = std::f64::consts::FRAC_1_SQRT_2;
    write(
        dir,
        "images.txt",
        &format!("1 1 0 0 0 0 0 5 1 a.png\n\n2 {h} 0 {h} 0 0 0 4 2 b.png\n10 20 1\n3 1 0 0 0 -1 0 5 1 c.png\n\n"),
    );
    write(dir, "points3D.txt", "1 0.1 -0.2 0.3 255 0 0 0.5 1 0\n");
}

#[test]
fn colmap_round_trip_reprojects_known_point() {
    let dir = tempfile::tempdir().unwrap();
    three_image_model(dir.path());
    let model = ColmapModel::read_text(dir.path()).unwrap();
    assert_eq!(model.images.len(), 3);
    assert_eq!(model.points.positions, vec![[0.1, -0.2, 0.3]]);

    // x_cam = (0.1, -0.2, 5.3) → u = 100·0.1/5.3 + 50, v = 90·(-0.2)/5.3 + 40
    let p = [0.1, -0.2, 0.3];
    let a = model.camera_for("a.png").unwrap().project(p).unwrap();
    assert!((a[0] - (100.0 * 0.1 / 5.3 + 50.0)).abs() < 1e-9);
    assert!((a[1] - (90.0 * -0.2 / 5.3 + 40.0)).abs() < 1e-9);

    // Rotation by 90° about y maps (x, y, z) → (z, y, -x); t = (0, 0, 4).
    // x_cam = (0.3, -0.2, 3.9), focal 32, principal point (32, 32).
    let b = model.camera_for("b.png").unwrap().project(p).unwrap();
    assert!((b[0] - (32.0 * 0.3 / 3.9 + 32.0)).abs() < 1e-9);
    assert!((b[1] - (32.0 * -0.2 / 3.9 + 32.0)).abs() < 1e-9);

    let c = model.camera_for("c.png").unwrap().project(p).unwrap();
    assert!((c[0] - (100.0 * -0.9 / 5.3 + 50.0)).abs() < 1e-9);

    // Writing and re-reading preserves every camera.
    let out = tempfile::tempdir().unwrap();
    model.write_text(out.path()).unwrap();
    let again = ColmapModel::read_text(out.path()).unwrap();
    assert_eq!(again.cameras, model.cameras);
    assert_eq!(again.images, model.images);
    assert_eq!(again.points.positions, model.points.positions);
}

#[test]
fn unsupported_camera_model_is_named() {
    let dir = tempfile::tempdir().unwrap();
    three_image_model(dir.path());
    write(dir.path(), "cameras.txt", "1 OPENCV 10 10 5 5 5 5 0 0 0 0\n");
    match ColmapModel::read_text(dir.path()) {
        Err(GtmError::Unsupported(m)) => assert!(m.contains("OPENCV"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn malformed_line_reports_its_number() {
    let dir = tempfile::tempdir().unwrap();
    three_image_model(dir.path());
    write(dir.path(), "images.txt", "# header\n1 1 0 0 0 0 0 oops 1 a.png\n\n");
    match ColmapModel::read_text(dir.path()) {
        Err(GtmError::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

fn manifest_fixture() -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SynthSpec::two_time();
    spec.cameras = 2;
    spec.image_size = 16;
    spec.test_pairs = vec![(1, 1)];
    let path = SynthScene::generate(spec).unwrap().write(dir.path()).unwrap();
    (dir, path)
}

#[test]
fn manifest_resolves_times_and_splits() {
    let (_dir, path) = manifest_fixture();
    let m = SceneManifest::load(&path).unwrap();
    assert_eq!(m.times, vec!["t00", "t01"]);
    assert_eq!(m.frames(Split::Train).count(), 3);
    let test: Vec<_> = m.frames(Split::Test).collect();
    assert_eq!(test.len(), 1);
    assert_eq!(test[0].time_index, 1);
    let views = m.load_split(Split::Train).unwrap();
    assert_eq!(views[0].image.width, 16);
}

#[test]
fn time_indices_ignore_frame_order() {
    let (dir, path) = manifest_fixture();
    let text = fs::read_to_string(&path).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["frames"].as_array_mut().unwrap().reverse();
    let shuffled = dir.path().join("shuffled.json");
    fs::write(&shuffled, v.to_string()).unwrap();
    let a = SceneManifest::load(&path).unwrap();
    let b = SceneManifest::load(&shuffled).unwrap();
    assert_eq!(a.times, b.times);
    for f in &a.frames {
        let g = b.frames.iter().find(|g| g.name == f.name).unwrap();
        assert_eq!(f.time_index, g.time_index);
    }
}

fn edit_manifest(path: &Path, edit: impl Fn(&mut serde_json::Value)) -> Result<SceneManifest, GtmError> {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    edit(&mut v);
    let out = path.with_file_name("edited.json");
    fs::write(&out, v.to_string()).unwrap();
    SceneManifest::load(&out)
}

#[test]
fn manifest_errors() {
    let (_dir, path) = manifest_fixture();
    let dup = edit_manifest(&path, |v| {
        let first = v["frames"][0].clone();
        v["frames"].as_array_mut().unwrap().push(first);
    });
    assert!(matches!(dup, Err(GtmError::Config(m)) if m.contains("duplicate")));

    let no_train = edit_manifest(&path, |v| {
        for f in v["frames"].as_array_mut().unwrap() {
            f["split"] = "test".into();
        }
    });
    assert!(matches!(no_train, Err(GtmError::Config(_))));

    let unknown_camera = edit_manifest(&path, |v| v["frames"][0]["camera"] = "colmap:nope.png".into());
    assert!(matches!(unknown_camera, Err(GtmError::Config(_))));

    let bad_split = edit_manifest(&path, |v| v["frames"][0]["split"] = "val".into());
    assert!(matches!(bad_split, Err(GtmError::Parse { .. })));
}

#[test]
fn png_round_trip_within_half_a_level() {
    let (w, h) = (7u32, 5u32);
    let data: Vec<f32> = (0..w * h * 3).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
    let img = Image::new(w, h, data.clone()).unwrap();
    let back = Image::decode_png(&img.encode_png().unwrap()).unwrap();
    assert_eq!((back.width, back.height), (w, h));
    let worst = data
        .iter()
        .zip(&back.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f32::max);
    assert!(worst <= 1.0 / 510.0 + 1e-7, "{worst}");
}

#[test]
fn rgba_alpha_is_dropped_and_grayscale_rejected() {
    let mut rgba = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut rgba, 1, 1);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(&[255, 0, 51, 7]).unwrap();
    }
    let img = Image::decode_png(&rgba).unwrap();
    assert_eq!(img.data, vec![1.0, 0.0, 0.2]);

    let mut gray = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut gray, 1, 1);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(&[9]).unwrap();
    }
    assert!(matches!(Image::decode_png(&gray), Err(GtmError::Format(_))));
}
