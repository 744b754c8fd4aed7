//! WebAssembly viewer: load a `.gtms` scene, orbit around it and scrub
//! through time with interpolated embeddings.

use gtm::dataset::Image;
use gtm::raster::{render, RenderSettings};
use gtm::scene_io::decode_scene;
use gtm::{Camera, SceneModel, TimeInput};
use wasm_bindgen::prelude::*;

const MIN_PITCH: f64 = -1.4;
const MAX_PITCH: f64 = 1.4;

/// Orbit camera plus the current time position, independent of JS.
pub struct ViewState {
    model: SceneModel<f32>,
    target: [f64; 3],
    radius: f64,
    yaw: f64,
    pitch: f64,
    /// Continuous time in `[0, T - 1]`.
    time: f64,
    width: u32,
    height: u32,
}

impl ViewState {
    pub fn from_bytes(bytes: &[u8], width: u32, height: u32) -> Result<Self, String> {
        let model = decode_scene(bytes).map_err(|e| e.to_string())?;
        if width == 0 || height == 0 {
            return Err("viewport must be non-empty".into());
        }
        let n = model.anchors.len().max(1) as f64;
        let mut target = [0.0; 3];
        for i in 0..model.anchors.len() {
            let c = model.anchors.center(i);
            for k in 0..3 {
                target[k] += c[k] as f64 / n;
            }
        }
        let radius = 0.6 * model.scene_extent.max(1e-3);
        Ok(ViewState {
            model,
            target,
            radius,
            yaw: 0.0,
            pitch: 0.3,
            time: 0.0,
            width,
            height,
        })
    }

    pub fn num_times(&self) -> usize {
        self.model.num_times()
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t.clamp(0.0, (self.num_times() - 1) as f64);
    }

    pub fn orbit(&mut self, d_yaw: f64, d_pitch: f64) {
        self.yaw = (self.yaw + d_yaw).rem_euclid(std::f64::consts::TAU);
        self.pitch = (self.pitch + d_pitch).clamp(MIN_PITCH, MAX_PITCH);
    }

    pub fn zoom(&mut self, factor: f64) {
        if factor.is_finite() && factor > 0.0 {
            self.radius *= factor;
        }
    }

    pub fn camera(&self) -> Result<Camera, String> {
        let (r, t) = (self.radius, self.target);
        let eye = [
            t[0] + r * self.pitch.cos() * self.yaw.cos(),
            t[1] + r * self.pitch.cos() * self.yaw.sin(),
            t[2] + r * self.pitch.sin(),
        ];
        let focal = 1.2 * self.width.max(self.height) as f64;
        Camera::look_at(eye, t, [0.0, 0.0, 1.0], focal, self.width, self.height).map_err(|e| e.to_string())
    }

    /// The bracketing trained times and the weight of the later one.
    pub fn time_bracket(&self) -> (usize, usize, f64) {
        let last = self.num_times() - 1;
        let t0 = (self.time.floor() as usize).min(last);
        let t1 = (t0 + 1).min(last);
        (t0, t1, self.time - t0 as f64)
    }

    /// RGBA8 pixels, row-major.
    pub fn render_rgba(&self) -> Result<Vec<u8>, String> {
        let cam = self.camera()?;
        let (t0, t1, alpha) = self.time_bracket();
        let z = self
            .model
            .interpolated_time_vector(t0, t1, alpha)
            .map_err(|e| e.to_string())?;
        let out = render(
            &self.model,
            &cam,
            TimeInput::Vector(&z),
            &RenderSettings::default(),
            false,
        )
        .map_err(|e| e.to_string())?
        .output;
        let rgb = Image::from_real(self.width, self.height, &out.image)
            .map_err(|e| e.to_string())?
            .to_rgb8();
        let mut rgba = Vec::with_capacity(rgb.len() / 3 * 4);
        for px in rgb.chunks_exact(3) {
            rgba.extend_from_slice(&[px[0], px[1], px[2], 255]);
        }
        Ok(rgba)
    }
}

#[wasm_bindgen]
pub struct Viewer(ViewState);

#[wasm_bindgen]
impl Viewer {
    #[wasm_bindgen(constructor)]
    pub fn new(bytes: &[u8], width: u32, height: u32) -> Result<Viewer, JsError> {
        ViewState::from_bytes(bytes, width, height)
            .map(Viewer)
            .map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = numTimes)]
    pub fn num_times(&self) -> usize {
        self.0.num_times()
    }

    #[wasm_bindgen(js_name = numAnchors)]
    pub fn num_anchors(&self) -> usize {
        self.0.model.anchors.len()
    }

    #[wasm_bindgen(js_name = setTime)]
    pub fn set_time(&mut self, t: f64) {
        self.0.set_time(t);
    }

    pub fn orbit(&mut self, d_yaw: f64, d_pitch: f64) {
        self.0.orbit(d_yaw, d_pitch);
    }

    pub fn zoom(&mut self, factor: f64) {
        self.0.zoom(factor);
    }

    pub fn render(&self) -> Result<Vec<u8>, JsError> {
        self.0.render_rgba().map_err(|e| JsError::new(&e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gtm::model::ModelInit;
    use gtm::scene_io::encode_scene;
    use gtm::ModelConfig;

    fn scene_bytes(num_times: usize) -> Vec<u8> {
        let init = ModelInit {
            centers: vec![[0.0, 0.0, 0.0], [0.2, 0.1, 0.0], [-0.1, 0.2, 0.1]],
            scene_extent: 1.0,
            num_times,
            anchor_scale: 0.05,
            gaussian_scale: 0.05,
            seed: 1,
        };
        let config = ModelConfig {
            feature_dim: 8,
            offsets_per_anchor: 4,
            embedding_dim: 4,
            hidden_width: 8,
            hidden_layers: 1,
            ..Default::default()
        };
        encode_scene(&SceneModel::initialize(config, &init).unwrap()).unwrap()
    }

    #[test]
    fn renders_rgba_of_viewport_size() {
        let v = ViewState::from_bytes(&scene_bytes(2), 20, 12).unwrap();
        let px = v.render_rgba().unwrap();
        assert_eq!(px.len(), 20 * 12 * 4);
        assert!(px.chunks_exact(4).all(|p| p[3] == 255));
    }

    #[test]
    fn time_bracket_and_clamping() {
        let mut v = ViewState::from_bytes(&scene_bytes(3), 8, 8).unwrap();
        v.set_time(1.25);
        assert_eq!(v.time_bracket(), (1, 2, 0.25));
        v.set_time(9.0);
        assert_eq!(v.time_bracket(), (2, 2, 0.0));
        v.set_time(-1.0);
        assert_eq!(v.time_bracket(), (0, 1, 0.0));
    }

    #[test]
    fn slider_at_trained_time_matches_direct_render() {
        let bytes = scene_bytes(2);
        let mut v = ViewState::from_bytes(&bytes, 16, 16).unwrap();
        v.set_time(1.0);
        let model = decode_scene(&bytes).unwrap();
        let direct = render(
            &model,
            &v.camera().unwrap(),
            TimeInput::Index(1),
            &RenderSettings::default(),
            false,
        )
        .unwrap()
        .output;
        let rgb = Image::from_real(16, 16, &direct.image).unwrap().to_rgb8();
        let rgba = v.render_rgba().unwrap();
        assert!(rgb.chunks_exact(3).zip(rgba.chunks_exact(4)).all(|(a, b)| a == &b[..3]));
    }

    #[test]
    fn orbit_keeps_pitch_in_range_and_rejects_bad_input() {
        let mut v = ViewState::from_bytes(&scene_bytes(1), 8, 8).unwrap();
        v.orbit(10.0, 5.0);
        assert!(v.pitch <= MAX_PITCH && v.yaw < std::f64::consts::TAU);
        let r = v.radius;
        v.zoom(-2.0);
        assert_eq!(v.radius, r);
        assert!(v.camera().is_ok());
        assert!(ViewState::from_bytes(b"GTMS", 8, 8).is_err());
    }
}
