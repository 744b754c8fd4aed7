mod common;

use common::{rel_err, rng};
use gtm::model::{decode_backward, decode_neural_gaussians, GaussianGrads, ModelGrads, ModelInit, TimeInput};
use gtm::raster::{composite_backward, project_backward, render, RenderSettings};
use gtm::{Camera, EncoderMode, ModelConfig, SceneModel};
use proptest::prelude::*;
use rand::Rng;

fn config(encoder: EncoderMode) -> ModelConfig {
    ModelConfig {
        feature_dim: 6,
        offsets_per_anchor: 3,
        embedding_dim: 4,
        hidden_width: 8,
        hidden_layers: 2,
        encoder,
        pe_levels: 2,
    }
}

fn model(seed: u64, centers: Vec<[f64; 3]>, encoder: EncoderMode) -> SceneModel<f64> {
    let mut m = SceneModel::initialize(
        config(encoder),
        &ModelInit {
            centers,
            scene_extent: 2.0,
            num_times: 3,
            anchor_scale: 0.2,
            gaussian_scale: 0.15,
            seed,
        },
    )
    .unwrap();
    // spread embeddings so time actually matters
    let mut r = rng(seed ^ 0xabc);
    for v in &mut m.embeddings.data {
        *v = r.random_range(-1.0..1.0);
    }
    m
}

fn camera() -> Camera {
    Camera::look_at([0.4, -0.6, -3.0], [0.0; 3], [0.0, -1.0, 0.0], 24.0, 24, 24).unwrap()
}

fn flat_params(m: &SceneModel<f64>) -> Vec<f64> {
    m.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
}

fn set_param(m: &mut SceneModel<f64>, mut idx: usize, value: f64) {
    for (_, t) in m.tensors_mut() {
        if idx < t.len() {
            t[idx] = value;
            return;
        }
        idx -= t.len();
    }
    panic!("parameter index out of range");
}

fn flat_grads(g: &ModelGrads<f64>) -> Vec<f64> {
    g.tensors().into_iter().flat_map(|t| t.iter().copied()).collect()
}

/// Weighted sum over every decoded attribute.
fn attribute_objective(m: &SceneModel<f64>, cam: &Camera, time: usize, w: &GaussianGrads<f64>) -> f64 {
    let b = decode_neural_gaussians(m, cam, TimeInput::Index(time), false).unwrap();
    let g = &b.gaussians;
    let mut s = 0.0;
    for i in 0..g.len() {
        for a in 0..3 {
            s += g.means[i][a] * w.means[i][a] + g.scales[i][a] * w.scales[i][a] + g.colors[i][a] * w.colors[i][a];
        }
        for a in 0..4 {
            s += g.rotations[i][a] * w.rotations[i][a];
        }
        s += g.opacities[i] * w.opacities[i];
    }
    s
}

#[test]
fn decode_backward_matches_finite_differences() {
    let cam = camera();
    let m = model(21, vec![[0.1, -0.2, 0.3]], EncoderMode::Embedding);
    let time = 1;
    let batch = decode_neural_gaussians(&m, &cam, TimeInput::Index(time), true).unwrap();
    let n = batch.len();
    assert_eq!(n, 3);
    let mut r = rng(5);
    let mut w = GaussianGrads::zeros(n);
    for i in 0..n {
        w.means[i] = [
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        ];
        w.scales[i] = [
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        ];
        w.colors[i] = [
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        ];
        w.rotations[i] = [
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        ];
        w.opacities[i] = r.random_range(-1.0..1.0);
    }
    let mut grads = ModelGrads::zeros(&m);
    decode_backward(&m, &batch, &w, &mut grads).unwrap();
    let analytic = flat_grads(&grads);
    let params = flat_params(&m);
    assert_eq!(analytic.len(), params.len());

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut p = m.clone();
        set_param(&mut p, i, params[i] + h);
        let mut q = m.clone();
        set_param(&mut q, i, params[i] - h);
        let fd = (attribute_objective(&p, &cam, time, &w) - attribute_objective(&q, &cam, time, &w)) / (2.0 * h);
        let e = rel_err(analytic[i], fd, 1e-6);
        worst = worst.max(e);
        assert!(e < 1e-4, "parameter {i}: analytic {} fd {fd}", analytic[i]);
    }
    assert!(worst < 1e-4);
    // only the decoded time's embedding row receives gradient
    let l = m.config.embedding_dim;
    for t in 0..3 {
        let row = &grads.embeddings[t * l..(t + 1) * l];
        assert_eq!(row.iter().any(|v| *v != 0.0), t == time);
    }
}

#[test]
fn full_render_gradient_matches_finite_differences() {
    let cam = camera();
    let m = model(4, vec![[0.0, 0.0, 0.0], [0.3, 0.2, -0.1]], EncoderMode::Embedding);
    let settings = RenderSettings::gradient_check();
    let mut r = rng(8);
    let weights: Vec<f64> = (0..24 * 24 * 3).map(|_| r.random_range(-1.0..1.0)).collect();
    let objective = |m: &SceneModel<f64>| {
        let out = render(m, &cam, TimeInput::Index(0), &settings, false).unwrap().output;
        out.image.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
    };

    let rendered = render(&m, &cam, TimeInput::Index(0), &settings, true).unwrap();
    let sg = composite_backward(&rendered.output, &weights).unwrap();
    let splats = rendered.output.state.as_ref().unwrap().splats();
    let gg = project_backward(&sg, splats, &rendered.batch.gaussians, &cam).unwrap();
    let mut grads = ModelGrads::zeros(&m);
    decode_backward(&m, &rendered.batch, &gg, &mut grads).unwrap();
    let analytic = flat_grads(&grads);
    let params = flat_params(&m);

    let h = 1e-5;
    let scale = analytic.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for i in (0..params.len()).step_by(5) {
        let mut p = m.clone();
        set_param(&mut p, i, params[i] + h);
        let mut q = m.clone();
        set_param(&mut q, i, params[i] - h);
        let fd = (objective(&p) - objective(&q)) / (2.0 * h);
        assert!(
            rel_err(analytic[i], fd, 1e-4 * scale) < 1e-3,
            "parameter {i}: analytic {} fd {fd}",
            analytic[i]
        );
    }
}

#[test]
fn explicit_time_vector_receives_gradient() {
    let cam = camera();
    let m = model(2, vec![[0.0, 0.1, 0.0]], EncoderMode::Embedding);
    let z = m.embeddings.interpolate(0, 2, 0.3).unwrap();
    let batch = decode_neural_gaussians(&m, &cam, TimeInput::Vector(&z), true).unwrap();
    let mut w = GaussianGrads::zeros(batch.len());
    for i in 0..batch.len() {
        w.opacities[i] = 1.0;
        w.colors[i] = [0.5, -0.25, 1.0];
    }
    let mut grads = ModelGrads::zeros(&m);
    decode_backward(&m, &batch, &w, &mut grads).unwrap();
    assert!(grads.embeddings.iter().all(|v| *v == 0.0));

    let objective = |z: &[f64]| {
        let b = decode_neural_gaussians(&m, &cam, TimeInput::Vector(z), false).unwrap();
        (0..b.len())
            .map(|i| {
                b.gaussians.opacities[i] + 0.5 * b.gaussians.colors[i][0] - 0.25 * b.gaussians.colors[i][1]
                    + b.gaussians.colors[i][2]
            })
            .sum::<f64>()
    };
    for k in 0..z.len() {
        let mut p = z.clone();
        p[k] += 1e-5;
        let mut q = z.clone();
        q[k] -= 1e-5;
        let fd = (objective(&p) - objective(&q)) / 2e-5;
        assert!(rel_err(grads.time_vector[k], fd, 1e-6) < 1e-4);
    }
}

#[test]
fn interpolation_with_equal_endpoints_matches_row() {
    let cam = camera();
    let m = model(3, vec![[0.0; 3], [0.2, 0.1, 0.4]], EncoderMode::Embedding);
    let settings = RenderSettings::default();
    let base = render(&m, &cam, TimeInput::Index(1), &settings, false)
        .unwrap()
        .output
        .image;
    for alpha in [0.0, 0.3, 0.77, 1.0] {
        let z = m.interpolated_time_vector(1, 1, alpha).unwrap();
        let img = render(&m, &cam, TimeInput::Vector(&z), &settings, false)
            .unwrap()
            .output
            .image;
        assert_eq!(img, base);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn geometry_is_time_independent(seed in 0u64..1_000_000, pe in any::<bool>(), alpha in 0.0f64..1.0) {
        let mut r = rng(seed);
        let centers = (0..6).map(|_| [r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)]).collect();
        let encoder = if pe { EncoderMode::Positional } else { EncoderMode::Embedding };
        let m = model(seed, centers, encoder);
        let cam = camera();
        let reference = decode_neural_gaussians(&m, &cam, TimeInput::Index(0), false).unwrap().gaussians;
        let z = m.interpolated_time_vector(0, 2, alpha).unwrap();
        let mut others = vec![decode_neural_gaussians(&m, &cam, TimeInput::Vector(&z), false).unwrap().gaussians];
        for t in 1..3 {
            others.push(decode_neural_gaussians(&m, &cam, TimeInput::Index(t), false).unwrap().gaussians);
        }
        for g in others {
            prop_assert_eq!(&g.means, &reference.means);
            prop_assert_eq!(&g.scales, &reference.scales);
            prop_assert_eq!(&g.rotations, &reference.rotations);
        }
    }

    #[test]
    fn decoded_attributes_respect_ranges(seed in 0u64..1_000_000) {
        let mut r = rng(seed);
        let centers = (0..5).map(|_| [r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)]).collect();
        let m = model(seed, centers, EncoderMode::Embedding);
        let b = decode_neural_gaussians(&m, &camera(), TimeInput::Index(2), true).unwrap();
        let g = &b.gaussians;
        for i in 0..g.len() {
            prop_assert!(g.opacities[i] > -1.0 && g.opacities[i] < 1.0);
            let n: f64 = g.rotations[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-6);
            prop_assert!(g.scales[i].iter().all(|&s| s > 0.0));
        }
        let again = decode_neural_gaussians(&m, &camera(), TimeInput::Index(2), true).unwrap();
        prop_assert_eq!(&again.gaussians, g);
    }
}
