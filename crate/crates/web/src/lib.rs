//! Browser bindings for the static demo page in `www/`.

use mirrorsense::geometry::Frame;
use mirrorsense::pipeline::{
    bev_project, detect_occlusions_with, realize_capture, tilt_aim, BevGrid, PipelineParams, EMPTY_CELL,
};
use mirrorsense::scene::{randomized_scene, Difficulty, SceneModel};
use mirrorsense::sensor::{render, CameraIntrinsics, NoiseModel};
use nalgebra::Point3;
use wasm_bindgen::prelude::*;

fn js(e: mirrorsense::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A generated scene with its direct-view bird's-eye grid.
#[wasm_bindgen]
pub struct Demo {
    scene: SceneModel,
    noise: NoiseModel,
    intrinsics: CameraIntrinsics,
    grid: BevGrid,
    labels: Vec<u8>,
    auto_tilt: Option<f64>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, hard: bool) -> Result<Demo, JsError> {
        let difficulty = if hard { Difficulty::Hard } else { Difficulty::Easy };
        let scene = randomized_scene(seed.into(), difficulty).map_err(js)?;
        let noise = NoiseModel::default().with_seed(seed.into());
        let params = PipelineParams::default();
        let direct = render(&scene, 0.0, &noise, &params.intrinsics).map_err(js)?;
        let world = realize_capture(&direct, &scene.sensor, &scene.mirror.transform()).map_err(js)?;
        debug_assert_eq!(world.frame, Frame::World);
        let grid = bev_project(&world, params.cell_size).map_err(js)?;
        let regions = detect_occlusions_with(&grid, scene.height_threshold, scene.expected_robots, params.closing_cells)
            .map_err(js)?;
        let mut labels = vec![0u8; grid.cells.len()];
        for (i, region) in regions.iter().enumerate() {
            for &(r, c) in &region.cells {
                labels[r * grid.cols + c] = (i + 1).min(255) as u8;
            }
        }
        let auto_tilt = regions
            .first()
            .and_then(|r| {
                let target = Point3::new(r.centroid[0], r.centroid[1], scene.expected_object_height / 2.0);
                tilt_aim(&scene.sensor, &target, &scene.mirror.transform()).ok()
            })
            .map(|a| a.theta.to_degrees());
        Ok(Demo {
            scene,
            noise,
            intrinsics: params.intrinsics,
            grid,
            labels,
            auto_tilt,
        })
    }

    pub fn summary(&self) -> String {
        format!(
            "{} box(es), arm {}, height threshold {:.3} m, mirror at x = {:.2} m",
            self.scene.boxes.len(),
            if self.scene.arm.is_some() { "present" } else { "absent" },
            self.scene.height_threshold,
            -self.scene.mirror.plane.offset() / self.scene.mirror.plane.normal().x,
        )
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Range image in meters at `tilt_deg`, row-major; 0 where nothing returned.
    pub fn depth(&self, tilt_deg: f64) -> Result<Vec<f32>, JsError> {
        let cap = render(&self.scene, tilt_deg.to_radians(), &self.noise, &self.intrinsics).map_err(js)?;
        Ok(cap.depth_image.iter().map(|&d| d as f32).collect())
    }

    #[wasm_bindgen(getter)]
    pub fn bev_rows(&self) -> usize {
        self.grid.rows
    }

    #[wasm_bindgen(getter)]
    pub fn bev_cols(&self) -> usize {
        self.grid.cols
    }

    /// World X, Y of cell (0, 0)'s lower-left corner and the cell size.
    pub fn bev_geometry(&self) -> Vec<f64> {
        vec![self.grid.origin[0], self.grid.origin[1], self.grid.cell_size]
    }

    /// Per-cell max height of the direct view, NaN where empty.
    pub fn bev_heights(&self) -> Vec<f32> {
        self.grid
            .cells
            .iter()
            .map(|&h| if h == EMPTY_CELL { f32::NAN } else { h as f32 })
            .collect()
    }

    /// Occlusion label per cell: 0 for none, k for the k-th largest region.
    pub fn occlusion_labels(&self) -> Vec<u8> {
        self.labels.clone()
    }

    /// Tilt aimed at the largest occlusion, if one was found and is reachable.
    pub fn auto_tilt(&self) -> Option<f64> {
        self.auto_tilt
    }

    /// Tilt in degrees that aims at world point (x, y, z) through the mirror, with the
    /// unreachable lateral offset: `[theta_deg, y_residual]`.
    pub fn aim(&self, x: f64, y: f64, z: f64) -> Result<Vec<f64>, JsError> {
        let a = tilt_aim(&self.scene.sensor, &Point3::new(x, y, z), &self.scene.mirror.transform()).map_err(js)?;
        Ok(vec![a.theta.to_degrees(), a.y_residual])
    }
}
