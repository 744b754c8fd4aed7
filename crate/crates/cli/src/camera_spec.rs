//! Camera selection shared by `render` and `interpolate`.

use std::path::PathBuf;

use clap::Args;
use gtm::dataset::SceneManifest;
use gtm::{Camera, GtmError};

use crate::{usage, Failure};

/// Either a COLMAP image from a manifest, or an explicit pose.
#[derive(Args)]
pub struct CameraArgs {
    /// Manifest whose sparse model holds the named camera.
    #[arg(long, requires = "camera")]
    pub manifest: Option<PathBuf>,
    /// `colmap:<image_name>`.
    #[arg(long, requires = "manifest", conflicts_with_all = ["pose", "intrinsics"])]
    pub camera: Option<String>,
    /// World-to-camera `[R | t]` as 12 row-major numbers.
    #[arg(long, requires = "intrinsics", allow_hyphen_values = true)]
    pub pose: Option<String>,
    /// `fx,fy,cx,cy` in pixels.
    #[arg(long, requires = "pose")]
    pub intrinsics: Option<String>,
    /// `WIDTHxHEIGHT`; defaults to twice the principal point.
    #[arg(long, requires = "pose")]
    pub size: Option<String>,
}

fn numbers(flag: &str, s: &str, n: usize) -> Result<Vec<f64>, Failure> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("--{flag} `{s}` is not a comma-separated list of numbers")))?;
    if v.len() != n {
        return Err(usage(format!("--{flag} needs {n} numbers, got {}", v.len())));
    }
    Ok(v)
}

fn parse_size(s: &str) -> Result<(u32, u32), Failure> {
    let bad = || usage(format!("--size `{s}` is not WIDTHxHEIGHT"));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    Ok((w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?))
}

impl CameraArgs {
    pub fn resolve(&self) -> Result<Camera, Failure> {
        if let (Some(manifest), Some(reference)) = (&self.manifest, &self.camera) {
            let name = reference
                .strip_prefix("colmap:")
                .ok_or_else(|| usage(format!("camera `{reference}` must be colmap:<image_name>")))?;
            let m = SceneManifest::load(manifest)?;
            return Ok(m.sfm.camera_for(name)?);
        }
        let (Some(pose), Some(intr)) = (&self.pose, &self.intrinsics) else {
            return Err(usage("give --manifest with --camera, or --pose with --intrinsics"));
        };
        let p = numbers("pose", pose, 12)?;
        let k = numbers("intrinsics", intr, 4)?;
        let (w, h) = match &self.size {
            Some(s) => parse_size(s)?,
            None => ((2.0 * k[2]).round() as u32, (2.0 * k[3]).round() as u32),
        };
        let rotation = [[p[0], p[1], p[2]], [p[4], p[5], p[6]], [p[8], p[9], p[10]]];
        let translation = [p[3], p[7], p[11]];
        Camera::new(k[0], k[1], k[2], k[3], w, h, rotation, translation).map_err(|e: GtmError| e.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_pose_builds_camera() {
        let args = CameraArgs {
            manifest: None,
            camera: None,
            pose: Some("1,0,0,0, 0,1,0,0, 0,0,1,4".into()),
            intrinsics: Some("50,50,16,12".into()),
            size: None,
        };
        let cam = args.resolve().ok().unwrap();
        assert_eq!((cam.width, cam.height), (32, 24));
        assert_eq!(cam.translation, [0.0, 0.0, 4.0]);
    }

    #[test]
    fn wrong_arity_is_usage_error() {
        assert!(matches!(numbers("pose", "1,2,3", 12), Err(Failure::Usage(_))));
        assert!(parse_size("64").is_err());
    }
}
