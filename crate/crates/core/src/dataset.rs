//! Training data: scene manifests, COLMAP text models and 8-bit PNG images.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{GtmError, Result};

/// RGB image with channels in `[0, 1]`, row-major `H × W × 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(GtmError::shape(format!(
                "{} values do not form a {width}×{height} RGB image",
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn from_real<T: crate::Real>(width: u32, height: u32, data: &[T]) -> Result<Self> {
        Image::new(width, height, data.iter().map(|v| v.as_f32()).collect())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let decoder = png::Decoder::new(Cursor::new(bytes));
        let mut reader = decoder
            .read_info()
            .map_err(|e| GtmError::Format(format!("PNG decode: {e}")))?;
        let info = reader.info();
        if info.bit_depth != png::BitDepth::Eight {
            return Err(GtmError::Format(format!(
                "unsupported PNG bit depth {:?} (8-bit RGB or RGBA expected)",
                info.bit_depth
            )));
        }
        let channels = match info.color_type {
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            other => {
                return Err(GtmError::Format(format!(
                    "unsupported PNG color type {other:?} (8-bit RGB or RGBA expected)"
                )))
            }
        };
        let (width, height) = (info.width, info.height);
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| GtmError::Format("PNG too large".into()))?;
        let mut buf = vec![0u8; size];
        let frame = reader
            .next_frame(&mut buf)
            .map_err(|e| GtmError::Format(format!("PNG decode: {e}")))?;
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for row in buf[..frame.buffer_size()].chunks_exact(frame.line_size) {
            for px in row[..width as usize * channels].chunks_exact(channels) {
                data.extend(px[..3].iter().map(|&v| v as f32 / 255.0));
            }
        }
        Image::new(width, height, data)
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| GtmError::io(path, e))?;
        Image::decode_png(&bytes).map_err(|e| match e {
            GtmError::Format(m) => GtmError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// 8-bit quantization with round-half-up; values are clamped to `[0, 1]`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8)
            .collect()
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc
                .write_header()
                .map_err(|e| GtmError::Format(format!("PNG encode: {e}")))?;
            writer
                .write_image_data(&self.to_rgb8())
                .map_err(|e| GtmError::Format(format!("PNG encode: {e}")))?;
            writer
                .finish()
                .map_err(|e| GtmError::Format(format!("PNG encode: {e}")))?;
        }
        Ok(out)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode_png()?;
        crate::scene_io::write_atomic(path, &bytes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColmapCamera {
    pub id: u32,
    pub model: String,
    pub width: u32,
    pub height: u32,
    pub params: Vec<f64>,
}

impl ColmapCamera {
    /// `(fx, fy, cx, cy)` for the supported pinhole models.
    pub fn intrinsics(&self) -> Result<[f64; 4]> {
        let want = match self.model.as_str() {
            "PINHOLE" => 4,
            "SIMPLE_PINHOLE" => 3,
            other => return Err(GtmError::Unsupported(format!("COLMAP camera model {other}"))),
        };
        if self.params.len() != want {
            return Err(GtmError::Format(format!(
                "{} camera {} has {} parameters, expected {want}",
                self.model,
                self.id,
                self.params.len()
            )));
        }
        let p = &self.params;
        Ok(if want == 4 {
            [p[0], p[1], p[2], p[3]]
        } else {
            [p[0], p[0], p[1], p[2]]
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColmapImage {
    pub id: u32,
    /// World-to-camera rotation `(qw, qx, qy, qz)`.
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
    pub camera_id: u32,
    pub name: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SfmPointCloud {
    pub positions: Vec<[f64; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

/// A COLMAP sparse model in memory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColmapModel {
    pub cameras: BTreeMap<u32, ColmapCamera>,
    pub images: Vec<ColmapImage>,
    pub points: SfmPointCloud,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> GtmError {
    GtmError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_fields<F: std::str::FromStr>(path: &Path, line: usize, fields: &[&str], what: &str) -> Result<Vec<F>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<F>()
                .map_err(|_| parse_err(path, line, format!("invalid {what} `{f}`")))
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| GtmError::io(path, e))
}

impl ColmapModel {
    /// Reads `cameras.txt`, `images.txt` and `points3D.txt` from `dir`.
    pub fn read_text(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut model = ColmapModel::default();

        let path = dir.join("cameras.txt");
        for (i, line) in read_text(&path)?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() < 4 {
                return Err(parse_err(
                    &path,
                    i + 1,
                    "expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]",
                ));
            }
            let ids: Vec<u32> = parse_fields(&path, i + 1, &[f[0], f[2], f[3]], "integer")?;
            let cam = ColmapCamera {
                id: ids[0],
                model: f[1].to_string(),
                width: ids[1],
                height: ids[2],
                params: parse_fields(&path, i + 1, &f[4..], "camera parameter")?,
            };
            cam.intrinsics()?;
            model.cameras.insert(cam.id, cam);
        }

        let path = dir.join("images.txt");
        let text = read_text(&path)?;
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim_start().starts_with('#'));
        while let Some((i, line)) = lines.next() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 10 {
                return Err(parse_err(
                    &path,
                    i + 1,
                    "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME",
                ));
            }
            let nums: Vec<f64> = parse_fields(&path, i + 1, &f[1..8], "number")?;
            let ids: Vec<u32> = parse_fields(&path, i + 1, &[f[0], f[8]], "integer")?;
            if !model.cameras.contains_key(&ids[1]) {
                return Err(parse_err(&path, i + 1, format!("unknown camera id {}", ids[1])));
            }
            model.images.push(ColmapImage {
                id: ids[0],
                qvec: [nums[0], nums[1], nums[2], nums[3]],
                tvec: [nums[4], nums[5], nums[6]],
                camera_id: ids[1],
                name: f[9].to_string(),
            });
            // the 2D observation line that follows is not used
            lines.next();
        }

        let path = dir.join("points3D.txt");
        let mut colors = Vec::new();
        for (i, line) in read_text(&path)?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() < 8 {
                return Err(parse_err(&path, i + 1, "expected POINT3D_ID X Y Z R G B ERROR TRACK[]"));
            }
            let xyz: Vec<f64> = parse_fields(&path, i + 1, &f[1..4], "coordinate")?;
            if !xyz.iter().all(|v| v.is_finite()) {
                return Err(parse_err(&path, i + 1, "non-finite point coordinate"));
            }
            let rgb: Vec<u8> = parse_fields(&path, i + 1, &f[4..7], "color")?;
            model.points.positions.push([xyz[0], xyz[1], xyz[2]]);
            colors.push([rgb[0], rgb[1], rgb[2]]);
        }
        model.points.colors = Some(colors);
        Ok(model)
    }

    pub fn write_text(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| GtmError::io(dir, e))?;
        let mut s = String::from(
            "# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n",
        );
        for c in self.cameras.values() {
            let _ = write!(s, "{} {} {} {}", c.id, c.model, c.width, c.height);
            for p in &c.params {
                let _ = write!(s, " {p}");
            }
            s.push('\n');
        }
        crate::scene_io::write_atomic(&dir.join("cameras.txt"), s.as_bytes())?;

        let mut s = String::from(
            "# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n",
        );
        for im in &self.images {
            let [qw, qx, qy, qz] = im.qvec;
            let [tx, ty, tz] = im.tvec;
            let _ = writeln!(
                s,
                "{} {qw} {qx} {qy} {qz} {tx} {ty} {tz} {} {}\n",
                im.id, im.camera_id, im.name
            );
        }
        crate::scene_io::write_atomic(&dir.join("images.txt"), s.as_bytes())?;

        let mut s = String::from(
            "# 3D point list with one line of data per point:\n#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[]\n",
        );
        for (i, p) in self.points.positions.iter().enumerate() {
            let c = self
                .points
                .colors
                .as_ref()
                .and_then(|c| c.get(i).copied())
                .unwrap_or([128; 3]);
            let _ = writeln!(s, "{} {} {} {} {} {} {} 0", i + 1, p[0], p[1], p[2], c[0], c[1], c[2]);
        }
        crate::scene_io::write_atomic(&dir.join("points3D.txt"), s.as_bytes())
    }

    pub fn camera_for(&self, image_name: &str) -> Result<Camera> {
        let im = self
            .images
            .iter()
            .find(|im| im.name == image_name)
            .ok_or_else(|| GtmError::Config(format!("no COLMAP image named {image_name}")))?;
        let cam = &self.cameras[&im.camera_id];
        let [fx, fy, cx, cy] = cam.intrinsics()?;
        Camera::from_quaternion(fx, fy, cx, cy, cam.width, cam.height, im.qvec, im.tvec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = GtmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(GtmError::Config(format!("unknown split `{other}` (train or test)"))),
        }
    }
}

/// On-disk manifest schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub sfm: String,
    pub frames: Vec<FrameEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub image: String,
    pub time: String,
    pub split: Split,
    pub camera: String,
}

/// A manifest frame resolved against its COLMAP model.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub name: String,
    pub image_path: PathBuf,
    pub camera: Camera,
    pub time_index: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneManifest {
    pub path: PathBuf,
    /// Distinct time tags in ascending order; a frame's time index points here.
    pub times: Vec<String>,
    pub frames: Vec<Frame>,
    pub sfm: ColmapModel,
}

/// Sorted distinct tags and each input tag's index among them.
pub fn assign_time_indices<S: AsRef<str>>(tags: &[S]) -> (Vec<String>, Vec<usize>) {
    let distinct: BTreeSet<&str> = tags.iter().map(|t| t.as_ref()).collect();
    let sorted: Vec<String> = distinct.into_iter().map(str::to_string).collect();
    let lookup: HashMap<&str, usize> = sorted.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let idx = tags.iter().map(|t| lookup[t.as_ref()]).collect();
    (sorted, idx)
}

impl SceneManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_text(path)?;
        let file: ManifestFile = serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e.to_string()))?;
        SceneManifest::resolve(path, file)
    }

    pub fn resolve(path: &Path, file: ManifestFile) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let sfm = ColmapModel::read_text(base.join(&file.sfm))?;
        let tags: Vec<&str> = file.frames.iter().map(|f| f.time.as_str()).collect();
        let (times, indices) = assign_time_indices(&tags);

        let mut seen = BTreeSet::new();
        let mut frames = Vec::with_capacity(file.frames.len());
        for (entry, time_index) in file.frames.iter().zip(indices) {
            if !seen.insert(entry.image.as_str()) {
                return Err(GtmError::Config(format!(
                    "duplicate manifest entry for image {}",
                    entry.image
                )));
            }
            let name = entry.camera.strip_prefix("colmap:").ok_or_else(|| {
                GtmError::Config(format!(
                    "camera reference `{}` must be colmap:<image_name>",
                    entry.camera
                ))
            })?;
            let image_path = base.join(&entry.image);
            if !image_path.is_file() {
                return Err(GtmError::Config(format!(
                    "image {} does not exist",
                    image_path.display()
                )));
            }
            frames.push(Frame {
                name: entry.image.clone(),
                image_path,
                camera: sfm.camera_for(name)?,
                time_index,
                split: entry.split,
            });
        }
        if !frames.iter().any(|f| f.split == Split::Train) {
            return Err(GtmError::Config("manifest has no train frames".into()));
        }
        Ok(SceneManifest {
            path: path.to_path_buf(),
            times,
            frames,
            sfm,
        })
    }

    pub fn num_times(&self) -> usize {
        self.times.len()
    }

    pub fn frames(&self, split: Split) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(move |f| f.split == split)
    }

    /// Loads the images of one split, checking each against its camera.
    pub fn load_split(&self, split: Split) -> Result<Vec<View>> {
        self.frames(split).map(View::load).collect()
    }
}

/// A training or evaluation sample: image, camera and time index.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub name: String,
    pub camera: Camera,
    pub time_index: usize,
    pub image: Image,
}

impl View {
    pub fn load(frame: &Frame) -> Result<Self> {
        let image = Image::read_png(&frame.image_path)?;
        if image.width != frame.camera.width || image.height != frame.camera.height {
            return Err(GtmError::Config(format!(
                "{} is {}×{} but its camera is {}×{}",
                frame.name, image.width, image.height, frame.camera.width, frame.camera.height
            )));
        }
        Ok(View {
            name: frame.name.clone(),
            camera: frame.camera.clone(),
            time_index: frame.time_index,
            image,
        })
    }
}

/// Scene extent used for normalization: the diagonal of the point cloud's
/// bounding box.
pub fn bounding_diagonal(points: &[[f64; 3]]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt()
}
