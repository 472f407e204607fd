//! Adaptive sensing: direct capture, occlusion detection, tilt selection,
//! reflection capture, fusion and bird's-eye-view box detection.

use nalgebra::{Point2, Point3, Vector3};
use std::collections::VecDeque;

use crate::detection::{min_area_rect, DetectedBox};
use crate::error::{Error, Result};
use crate::geometry::{apply, Frame, HomogeneousTransform, PointCloud, SensorRig};
use crate::scene::SceneModel;
use crate::seed;
use crate::sensor::{render, CameraIntrinsics, Capture, NoiseModel};
use crate::spatial::VoxelIndex;

/// Marks a cell that received no point.
pub const EMPTY_CELL: f64 = f64::NEG_INFINITY;
pub const DEFAULT_CELL_SIZE: f64 = 0.01;
pub const DEFAULT_COVERAGE_RADIUS: f64 = 0.01;

/// Top-down raster holding the maximum point height per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    pub cell_size: f64,
    /// World position of the lower-left corner of cell (0, 0).
    pub origin: [f64; 2],
    pub rows: usize,
    pub cols: usize,
    /// Row-major, rows along Y and columns along X.
    pub cells: Vec<f64>,
}

impl BevGrid {
    fn empty(cell_size: f64, origin: [f64; 2], rows: usize, cols: usize) -> Self {
        Self {
            cell_size,
            origin,
            rows,
            cols,
            cells: vec![EMPTY_CELL; rows * cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.cols + col]
    }

    pub fn is_occupied(&self, row: usize, col: usize) -> bool {
        self.get(row, col) > EMPTY_CELL
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&h| h > EMPTY_CELL).count()
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.origin[0] + (col as f64 + 0.5) * self.cell_size,
            self.origin[1] + (row as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Cell containing world point `(x, y)`, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.origin[0]) / self.cell_size).floor();
        let r = ((y - self.origin[1]) / self.cell_size).floor();
        (c >= 0.0 && r >= 0.0 && (c as usize) < self.cols && (r as usize) < self.rows).then(|| (r as usize, c as usize))
    }

    fn splat(&mut self, cloud: &PointCloud) {
        let inv = 1.0 / self.cell_size;
        let (gx, gy) = ((self.origin[0] * inv).round() as i64, (self.origin[1] * inv).round() as i64);
        for p in &cloud.points {
            let c = (p.x * inv).floor() as i64 - gx;
            let r = (p.y * inv).floor() as i64 - gy;
            if c >= 0 && r >= 0 && (c as usize) < self.cols && (r as usize) < self.rows {
                let cell = &mut self.cells[r as usize * self.cols + c as usize];
                *cell = cell.max(p.z);
            }
        }
    }
}

fn check_world(cloud: &PointCloud) -> Result<()> {
    if cloud.frame != Frame::World {
        return Err(Error::FrameMismatch {
            expected: Frame::World,
            found: cloud.frame,
        });
    }
    Ok(())
}

/// Bird's-eye-view grid spanning the cloud's footprint, cells aligned to multiples of `cell_size`.
pub fn bev_project(cloud: &PointCloud, cell_size: f64) -> Result<BevGrid> {
    check_world(cloud)?;
    if !(cell_size > 0.0) {
        return Err(Error::Validation(format!("cell size must be > 0, got {cell_size}")));
    }
    if cloud.is_empty() {
        return Ok(BevGrid::empty(cell_size, [0.0, 0.0], 1, 1));
    }
    let inv = 1.0 / cell_size;
    let (mut c0, mut c1, mut r0, mut r1) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
    for p in &cloud.points {
        let (c, r) = ((p.x * inv).floor() as i64, (p.y * inv).floor() as i64);
        c0 = c0.min(c);
        c1 = c1.max(c);
        r0 = r0.min(r);
        r1 = r1.max(r);
    }
    let mut grid = BevGrid::empty(
        cell_size,
        [c0 as f64 * cell_size, r0 as f64 * cell_size],
        (r1 - r0 + 1) as usize,
        (c1 - c0 + 1) as usize,
    );
    grid.splat(cloud);
    Ok(grid)
}

/// Bird's-eye-view grid over the fixed window `[min, max]`; points outside are ignored.
pub fn bev_project_bounded(cloud: &PointCloud, cell_size: f64, min: [f64; 2], max: [f64; 2]) -> Result<BevGrid> {
    check_world(cloud)?;
    if !(cell_size > 0.0) || !(max[0] > min[0] && max[1] > min[1]) {
        return Err(Error::Validation("invalid grid window".into()));
    }
    let inv = 1.0 / cell_size;
    let (c0, r0) = ((min[0] * inv).floor() as i64, (min[1] * inv).floor() as i64);
    let (c1, r1) = (((max[0] * inv).ceil() as i64 - 1).max(c0), ((max[1] * inv).ceil() as i64 - 1).max(r0));
    let mut grid = BevGrid::empty(
        cell_size,
        [c0 as f64 * cell_size, r0 as f64 * cell_size],
        (r1 - r0 + 1) as usize,
        (c1 - c0 + 1) as usize,
    );
    grid.splat(cloud);
    Ok(grid)
}

/// Binary image over a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub rows: usize,
    pub cols: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn from_grid(grid: &BevGrid, keep: impl Fn(f64) -> bool) -> Self {
        Self {
            rows: grid.rows,
            cols: grid.cols,
            bits: grid.cells.iter().map(|&h| h > EMPTY_CELL && keep(h)).collect(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    fn morph(&self, radius: usize, dilate: bool) -> Self {
        // separable square structuring element; outside the grid counts as empty
        let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
            let mut out = vec![false; src.len()];
            for r in 0..self.rows {
                for c in 0..self.cols {
                    let (pos, len) = if horizontal { (c, self.cols) } else { (r, self.rows) };
                    let lo = pos.saturating_sub(radius);
                    let hi = pos + radius;
                    let at = |k: usize| {
                        if horizontal {
                            src[r * self.cols + k]
                        } else {
                            src[k * self.cols + c]
                        }
                    };
                    out[r * self.cols + c] = if dilate {
                        (lo..=hi.min(len - 1)).any(at)
                    } else {
                        pos >= radius && hi < len && (lo..=hi).all(at)
                    };
                }
            }
            out
        };
        let h = pass(&self.bits, true);
        Self {
            rows: self.rows,
            cols: self.cols,
            bits: pass(&h, false),
        }
    }

    /// Morphological closing with a `(2 radius + 1)` square, bridging gaps between sparse samples.
    pub fn closed(&self, radius: usize) -> Self {
        if radius == 0 {
            return self.clone();
        }
        // pad so the erosion is not clipped at the border
        let pad = radius;
        let mut padded = Mask {
            rows: self.rows + 2 * pad,
            cols: self.cols + 2 * pad,
            bits: vec![false; (self.rows + 2 * pad) * (self.cols + 2 * pad)],
        };
        for r in 0..self.rows {
            for c in 0..self.cols {
                padded.bits[(r + pad) * padded.cols + c + pad] = self.get(r, c);
            }
        }
        padded = padded.morph(radius, true).morph(radius, false);
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.bits[r * self.cols + c] = padded.bits[(r + pad) * padded.cols + c + pad];
            }
        }
        out
    }

    /// Sets runs of at most `max_run` unsampled cells of `grid` that have set
    /// cells at both ends, along rows or columns.
    ///
    /// Only the original cells count as ends, and cells holding data are never set.
    pub fn fill_gaps(&self, grid: &BevGrid, max_run: usize) -> Self {
        let mut out = self.clone();
        let lines = [(self.rows, self.cols, true), (self.cols, self.rows, false)];
        for (count, len, horizontal) in lines {
            for line in 0..count {
                let idx = |k: usize| if horizontal { line * self.cols + k } else { k * self.cols + line };
                let mut k = 0;
                while k < len {
                    if !self.bits[idx(k)] {
                        k += 1;
                        continue;
                    }
                    let start = k + 1;
                    let mut end = start;
                    while end < len && !self.bits[idx(end)] && grid.cells[idx(end)] == EMPTY_CELL {
                        end += 1;
                    }
                    if end < len && end > start && end - start <= max_run && self.bits[idx(end)] {
                        for j in start..end {
                            out.bits[idx(j)] = true;
                        }
                    }
                    k = end.max(start);
                }
            }
        }
        out
    }

    /// 4-connected components, each listed in row-major order, components ordered by first cell.
    pub fn components(&self) -> Vec<Vec<(usize, usize)>> {
        let mut label = vec![false; self.bits.len()];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..self.bits.len() {
            if !self.bits[start] || label[start] {
                continue;
            }
            label[start] = true;
            queue.push_back(start);
            let mut cells = Vec::new();
            while let Some(i) = queue.pop_front() {
                let (r, c) = (i / self.cols, i % self.cols);
                cells.push((r, c));
                let mut visit = |j: usize| {
                    if self.bits[j] && !label[j] {
                        label[j] = true;
                        queue.push_back(j);
                    }
                };
                if r > 0 {
                    visit(i - self.cols);
                }
                if r + 1 < self.rows {
                    visit(i + self.cols);
                }
                if c > 0 {
                    visit(i - 1);
                }
                if c + 1 < self.cols {
                    visit(i + 1);
                }
            }
            cells.sort_unstable();
            out.push(cells);
        }
        out
    }
}

/// Connected set of grid cells above the height threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionRegion {
    pub cells: Vec<(usize, usize)>,
    pub area: usize,
    pub centroid: [f64; 2],
}

/// Gap-bridging radius, in cells, applied before labeling components.
pub const DEFAULT_CLOSING_CELLS: usize = 2;

pub fn detect_occlusions(grid: &BevGrid, height_threshold: f64, n: usize) -> Result<Vec<OcclusionRegion>> {
    detect_occlusions_with(grid, height_threshold, n, DEFAULT_CLOSING_CELLS)
}

/// The `n` largest connected regions whose height exceeds `height_threshold`, largest first.
///
/// Equal areas are ordered by the lower (row, col) corner of their bounding box.
pub fn detect_occlusions_with(
    grid: &BevGrid,
    height_threshold: f64,
    n: usize,
    closing: usize,
) -> Result<Vec<OcclusionRegion>> {
    if n == 0 {
        return Err(Error::Validation("expected robot count must be >= 1".into()));
    }
    let mask = Mask::from_grid(grid, |h| h > height_threshold).closed(closing);
    let mut regions: Vec<(usize, (usize, usize), Vec<(usize, usize)>)> = mask
        .components()
        .into_iter()
        .map(|cells| {
            let corner = cells.iter().fold((usize::MAX, usize::MAX), |(r, c), &(cr, cc)| (r.min(cr), c.min(cc)));
            (cells.len(), corner, cells)
        })
        .collect();
    regions.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(regions
        .into_iter()
        .take(n)
        .map(|(area, _, cells)| {
            let (sx, sy) = cells.iter().fold((0.0, 0.0), |(sx, sy), &(r, c)| {
                let p = grid.cell_center(r, c);
                (sx + p[0], sy + p[1])
            });
            OcclusionRegion {
                centroid: [sx / area as f64, sy / area as f64],
                cells,
                area,
            }
        })
        .collect())
}

/// Tilt that points the optical axis at a target through the mirror.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltAim {
    pub theta: f64,
    /// Mirror image of the target.
    pub virtual_target: Point3<f64>,
    /// Angle of the virtual target out of the X-Z plane through the pivot; a tilt-only rig cannot remove it.
    pub y_residual: f64,
}

/// Aims the rig at the mirror image of `target`.
///
/// Angles are measured from the tilt pivot, which stays on the optical axis
/// at every tilt; with a zero tilt radius this is the optical center.
pub fn tilt_aim(sensor: &SensorRig, target: &Point3<f64>, h_m: &HomogeneousTransform) -> Result<TiltAim> {
    let virtual_target = h_m.inverse().transform_point(target);
    let pivot = sensor.position() - Vector3::z() * sensor.tilt_radius;
    let delta: Vector3<f64> = virtual_target - pivot;
    let depth = -delta.z;
    if depth <= 1e-9 {
        return Err(Error::UnreachableTarget(format!(
            "virtual target ({:.3}, {:.3}, {:.3}) is not below the sensor",
            virtual_target.x, virtual_target.y, virtual_target.z
        )));
    }
    let theta = delta.x.atan2(depth);
    if theta.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::UnreachableTarget("tilt would reach +-90 degrees".into()));
    }
    Ok(TiltAim {
        theta,
        virtual_target,
        y_residual: delta.y.atan2(delta.x.hypot(depth)),
    })
}

/// Tilt angle that aims at `target` via the mirror described by `h_m`.
pub fn optimal_tilt_angle(sensor: &SensorRig, target: &Point3<f64>, h_m: &HomogeneousTransform) -> Result<f64> {
    tilt_aim(sensor, target, h_m).map(|a| a.theta)
}

/// Direct and reflection data merged in the world frame with virtual points realized.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedCloud {
    pub cloud: PointCloud,
    pub direct_count: usize,
    pub mirror_count: usize,
}

impl FusedCloud {
    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }
}

/// Maps a rig capture to the world frame, realizing mirror points with `h_m`.
///
/// Realized points that land behind the mirror plane are dropped.
pub fn realize_capture(capture: &Capture, rig: &SensorRig, h_m: &HomogeneousTransform) -> Result<PointCloud> {
    if capture.cloud.frame != Frame::TiltedSensor {
        return Err(Error::FrameMismatch {
            expected: Frame::TiltedSensor,
            found: capture.cloud.frame,
        });
    }
    let world_from_tilted = rig.world_from_tilted(capture.tilt_angle)?;
    let world = apply(&world_from_tilted, &capture.cloud, Frame::World);
    let mirror_plane = crate::geometry::nearest_reflection_plane(h_m).ok().map(|(p, _)| p);
    let front = mirror_plane.map(|p| p.signed_distance(&rig.position()).signum());
    let mut out = PointCloud::new(Frame::World);
    for (p, via_mirror) in world.iter() {
        if via_mirror {
            let real = h_m.transform_point(p);
            if let (Some(plane), Some(side)) = (mirror_plane, front) {
                if plane.signed_distance(&real) * side < 0.0 {
                    continue;
                }
            }
            out.push(real, true);
        } else {
            out.push(*p, false);
        }
    }
    Ok(out)
}

/// Concatenates the direct and reflection captures in the world frame.
pub fn fuse(direct: &Capture, reflect: &Capture, rig: &SensorRig, h_m: &HomogeneousTransform) -> Result<FusedCloud> {
    let mut cloud = realize_capture(direct, rig, h_m)?;
    cloud.extend(&realize_capture(reflect, rig, h_m)?)?;
    let mirror_count = cloud.mirror_count();
    Ok(FusedCloud {
        direct_count: cloud.len() - mirror_count,
        mirror_count,
        cloud,
    })
}

/// Wraps an already realized world cloud.
pub fn fused_from_world(cloud: PointCloud) -> Result<FusedCloud> {
    check_world(&cloud)?;
    let mirror_count = cloud.mirror_count();
    Ok(FusedCloud {
        direct_count: cloud.len() - mirror_count,
        mirror_count,
        cloud,
    })
}

/// Settings of the bird's-eye-view box detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    /// Cells at or below this height are floor.
    pub min_height: f64,
    /// Components with a smaller footprint, in square meters, are dropped.
    pub min_area: f64,
    /// Longest run of unsampled cells bridged inside an object.
    pub max_gap_cells: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            min_height: 0.03,
            min_area: 0.015,
            max_gap_cells: 3,
        }
    }
}

pub fn detect_boxes(grid: &BevGrid, min_height: f64, max_height: f64) -> Vec<DetectedBox> {
    detect_boxes_with(
        grid,
        max_height,
        &DetectorParams {
            min_height,
            ..DetectorParams::default()
        },
    )
}

/// Fits a minimum-area rectangle to every component of cells with height in `[min_height, max_height]`.
pub fn detect_boxes_with(grid: &BevGrid, max_height: f64, params: &DetectorParams) -> Vec<DetectedBox> {
    let mask = Mask::from_grid(grid, |h| h >= params.min_height && h <= max_height)
        .fill_gaps(grid, params.max_gap_cells)
        .fill_gaps(grid, 1);
    let cell = grid.cell_size;
    let cell_area = cell * cell;
    let mut out = Vec::new();
    for cells in mask.components() {
        let area = cells.len() as f64 * cell_area;
        if area < params.min_area {
            continue;
        }
        let centers: Vec<Point2<f64>> = cells
            .iter()
            .map(|&(r, c)| {
                let p = grid.cell_center(r, c);
                Point2::new(p[0], p[1])
            })
            .collect();
        let Some((center, extent, yaw)) = min_area_rect(&centers) else {
            continue;
        };
        // keep the fitted shape, scale it to the occupied area
        let outer = (extent[0] + cell) * (extent[1] + cell);
        let scale = (area / outer).sqrt();
        out.push(DetectedBox {
            center,
            extent: [(extent[0] + cell) * scale, (extent[1] + cell) * scale],
            yaw,
            score: (area / outer).clamp(0.0, 1.0),
        });
    }
    out
}

/// Fraction of `reference` points with a fused point within `radius`.
pub fn coverage(fused: &PointCloud, reference: &PointCloud, radius: f64) -> Result<f64> {
    check_world(fused)?;
    check_world(reference)?;
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let index = VoxelIndex::new(&fused.points, radius.max(1e-6));
    let hits = reference.points.iter().filter(|q| index.any_within(q, radius)).count();
    Ok(hits as f64 / reference.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    pub cell_size: f64,
    pub intrinsics: CameraIntrinsics,
    pub detector: DetectorParams,
    pub closing_cells: usize,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            cell_size: DEFAULT_CELL_SIZE,
            intrinsics: CameraIntrinsics::default(),
            detector: DetectorParams::default(),
            closing_cells: DEFAULT_CLOSING_CELLS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub fused: FusedCloud,
    pub detections: Vec<DetectedBox>,
    /// 0 when reflection sensing was skipped.
    pub theta: f64,
    pub occlusions: Vec<OcclusionRegion>,
    pub aim: Option<TiltAim>,
    pub direct: Capture,
    pub reflect: Option<Capture>,
    pub warning: Option<String>,
}

/// Noise model of the reflection capture, decorrelated from the direct one.
pub fn reflect_noise(noise: &NoiseModel) -> NoiseModel {
    noise.with_seed(seed::derive(noise.seed, "reflect"))
}

/// Point the pipeline aims at for an occlusion region.
pub fn aim_target(scene: &SceneModel, region: &OcclusionRegion) -> Point3<f64> {
    Point3::new(region.centroid[0], region.centroid[1], scene.expected_object_height / 2.0)
}

/// Boxes detected in the workspace of `cloud`, robot points above the height threshold removed first.
pub fn detect_in_workspace(scene: &SceneModel, cloud: &PointCloud, params: &PipelineParams) -> Result<Vec<DetectedBox>> {
    let below = cloud.filtered(|p, _| p.z <= scene.height_threshold);
    let grid = bev_project_bounded(&below, params.cell_size, scene.workspace.min, scene.workspace.max)?;
    Ok(detect_boxes_with(&grid, scene.height_threshold, &params.detector))
}

pub fn run_pipeline(scene: &SceneModel, noise: &NoiseModel) -> Result<PipelineOutput> {
    run_pipeline_with(scene, noise, &PipelineParams::default())
}

/// Direct capture, then a reflection capture aimed at the largest occlusion when there is one.
pub fn run_pipeline_with(scene: &SceneModel, noise: &NoiseModel, params: &PipelineParams) -> Result<PipelineOutput> {
    scene.validate()?;
    let h_m = scene.mirror.transform();
    let direct = render(scene, 0.0, noise, &params.intrinsics)?;
    let direct_world = realize_capture(&direct, &scene.sensor, &h_m)?;
    let grid = bev_project(&direct_world, params.cell_size)?;
    let occlusions = detect_occlusions_with(&grid, scene.height_threshold, scene.expected_robots, params.closing_cells)?;

    let mut warning = None;
    let mut aim = None;
    if let Some(region) = occlusions.first() {
        match tilt_aim(&scene.sensor, &aim_target(scene, region), &h_m) {
            Ok(a) => aim = Some(a),
            Err(e @ Error::UnreachableTarget(_)) => warning = Some(format!("{e}; using direct sensing only")),
            Err(e) => return Err(e),
        }
    }

    let (fused, reflect, theta) = match aim {
        Some(a) => {
            let reflect = render(scene, a.theta, &reflect_noise(noise), &params.intrinsics)?;
            (fuse(&direct, &reflect, &scene.sensor, &h_m)?, Some(reflect), a.theta)
        }
        None => (fused_from_world(direct_world)?, None, 0.0),
    };
    let detections = detect_in_workspace(scene, &fused.cloud, params)?;
    Ok(PipelineOutput {
        fused,
        detections,
        theta,
        occlusions,
        aim,
        direct,
        reflect,
        warning,
    })
}
