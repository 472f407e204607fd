//! The scene document: a TOML file describing the workcell, camera and noise.
//!
//! ```toml
//! expected_robots = 1            # optional, default 1
//! height_threshold = 0.3         # optional, default tallest box + 0.05
//! expected_object_height = 0.15  # optional
//!
//! [sensor]                       # optional
//! position = [0.0, 0.0, 2.1]
//! tilt_radius = 0.06
//!
//! [mirror]                       # optional, every key defaults
//! plane = [1.0, 0.0, 0.0, -1.2]
//! center = [1.2, 0.0, 1.0]
//! width = 1.8
//! height = 1.3
//! reflectance = 0.9
//!
//! [[boxes]]                      # required, at least one entry
//! center = [0.1, 0.0, 0.1]
//! size = [0.3, 0.2, 0.2]
//! yaw = 0.0
//!
//! [arm]                          # optional
//! base = [0.0, -1.25]
//! base_yaw = 1.5708
//! link_lengths = [0.85, 0.8]
//! link_radius = 0.06
//! joint_angles = [1.2, 1.6]
//!
//! [workspace]    min = [..], max = [..]
//! [camera]       width, height, horizontal_fov, vertical_fov (radians)
//! [noise]        sigma0, reference_distance, exponent, dropout_threshold, seed
//! [calibration]  plane = [a, b, c, d]   (written by `calibrate`)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Plane, SensorRig};
use crate::scene::{
    default_mirror, default_sensor, default_threshold, ArmModel, MirrorPatch, SceneBox, SceneModel, Workspace,
    DEFAULT_OBJECT_HEIGHT, DEFAULT_REFLECTANCE, DEFAULT_TILT_RADIUS,
};
use crate::sensor::{CameraIntrinsics, NoiseModel};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensorDoc {
    position: Option<[f64; 3]>,
    tilt_radius: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MirrorDoc {
    plane: Option<[f64; 4]>,
    center: Option<[f64; 3]>,
    width: Option<f64>,
    height: Option<f64>,
    reflectance: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationDoc {
    plane: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    expected_robots: Option<usize>,
    height_threshold: Option<f64>,
    expected_object_height: Option<f64>,
    sensor: Option<SensorDoc>,
    mirror: Option<MirrorDoc>,
    workspace: Option<Workspace>,
    boxes: Vec<SceneBox>,
    arm: Option<ArmModel>,
    camera: Option<CameraIntrinsics>,
    noise: Option<NoiseModel>,
    calibration: Option<CalibrationDoc>,
}

/// A parsed scene document with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub scene: SceneModel,
    pub camera: CameraIntrinsics,
    pub noise: NoiseModel,
    /// Mirror plane estimated by a previous calibration run.
    pub calibrated_plane: Option<Plane>,
}

impl SceneConfig {
    pub fn new(scene: SceneModel) -> Self {
        Self {
            scene,
            camera: CameraIntrinsics::default(),
            noise: NoiseModel::default(),
            calibrated_plane: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc: Document = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let sdoc = doc.sensor.unwrap_or_default();
        let mut sensor: SensorRig = default_sensor();
        if let Some(p) = sdoc.position {
            sensor.position = p;
        }
        sensor.tilt_radius = sdoc.tilt_radius.unwrap_or(DEFAULT_TILT_RADIUS);
        sensor.validate()?;

        let base = default_mirror(&sensor);
        let mdoc = doc.mirror.unwrap_or_default();
        let plane = match mdoc.plane {
            Some(p) => Plane::try_from(p).map_err(|e| Error::Validation(format!("mirror.plane: {e}")))?,
            None => base.plane,
        };
        let mirror = MirrorPatch {
            plane,
            center: mdoc.center.unwrap_or(base.center),
            width: mdoc.width.unwrap_or(base.width),
            height: mdoc.height.unwrap_or(base.height),
            reflectance: mdoc.reflectance.unwrap_or(DEFAULT_REFLECTANCE),
        };
        if doc.boxes.is_empty() {
            return Err(Error::Config("`boxes` must contain at least one entry".into()));
        }
        let scene = SceneModel {
            height_threshold: doc.height_threshold.unwrap_or_else(|| default_threshold(&doc.boxes)),
            boxes: doc.boxes,
            arm: doc.arm,
            mirror,
            sensor,
            expected_robots: doc.expected_robots.unwrap_or(1),
            workspace: doc.workspace.unwrap_or_default(),
            expected_object_height: doc.expected_object_height.unwrap_or(DEFAULT_OBJECT_HEIGHT),
        };
        scene.validate()?;
        let camera = doc.camera.unwrap_or_default();
        camera.validate()?;
        let noise = doc.noise.unwrap_or_default();
        noise.validate()?;
        let calibrated_plane = doc
            .calibration
            .map(|c| Plane::try_from(c.plane).map_err(|e| Error::Validation(format!("calibration.plane: {e}"))))
            .transpose()?;
        Ok(Self {
            scene,
            camera,
            noise,
            calibrated_plane,
        })
    }

    /// Serializes every field explicitly; `parse(to_toml())` reproduces `self`.
    pub fn to_toml(&self) -> String {
        let s = &self.scene;
        let doc = Document {
            expected_robots: Some(s.expected_robots),
            height_threshold: Some(s.height_threshold),
            expected_object_height: Some(s.expected_object_height),
            sensor: Some(SensorDoc {
                position: Some(s.sensor.position),
                tilt_radius: Some(s.sensor.tilt_radius),
            }),
            mirror: Some(MirrorDoc {
                plane: Some(s.mirror.plane.coefficients()),
                center: Some(s.mirror.center),
                width: Some(s.mirror.width),
                height: Some(s.mirror.height),
                reflectance: Some(s.mirror.reflectance),
            }),
            workspace: Some(s.workspace),
            boxes: s.boxes.clone(),
            arm: s.arm,
            camera: Some(self.camera),
            noise: Some(self.noise),
            calibration: self.calibrated_plane.map(|p| CalibrationDoc {
                plane: p.coefficients(),
            }),
        };
        toml::to_string(&doc).expect("scene document serializes")
    }
}

/// Parses a scene document into a validated scene.
pub fn scene_from_config(text: &str) -> Result<SceneModel> {
    SceneConfig::parse(text).map(|c| c.scene)
}
