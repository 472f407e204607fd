use mirrorsense::detection::{iou, match_detections, yaw_difference, DetectedBox};
use mirrorsense::evaluation::{evaluate_scene, Strategy};
use mirrorsense::geometry::{Frame, HomogeneousTransform, PointCloud, SensorRig};
use mirrorsense::pipeline::*;
use mirrorsense::scene::*;
use mirrorsense::sensor::{render, CameraIntrinsics, Capture, NoiseModel, Surface};
use nalgebra::{Point3, Vector3};
use proptest::prelude::*;

fn world(points: Vec<Point3<f64>>) -> PointCloud {
    PointCloud::from_points(points, Frame::World)
}

fn direct_world(scene: &SceneModel, noise: &NoiseModel) -> PointCloud {
    direct_world_with(scene, noise, &CameraIntrinsics::default())
}

fn direct_world_with(scene: &SceneModel, noise: &NoiseModel, camera: &CameraIntrinsics) -> PointCloud {
    let cap = render(scene, 0.0, noise, camera).unwrap();
    realize_capture(&cap, &scene.sensor, &scene.mirror.transform()).unwrap()
}

#[test]
fn box_top_cells_hold_the_box_height() {
    let b = SceneBox::on_ground(0.2, 0.1, [0.3, 0.2, 0.15], 0.0);
    let scene = SceneModel::with_defaults(vec![b], None);
    let noise = NoiseModel::default().with_seed(5);
    let grid = bev_project(&direct_world(&scene, &noise), 0.01).unwrap();
    let sigma = noise.sigma(2.1 - 0.15);
    let mut checked = 0;
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let [x, y] = grid.cell_center(r, c);
            let inner = (x - 0.2).abs() < 0.13 && (y - 0.1).abs() < 0.08;
            if inner && grid.is_occupied(r, c) {
                checked += 1;
                assert!((grid.get(r, c) - 0.15).abs() < 4.0 * sigma, "{}", grid.get(r, c));
            }
        }
    }
    assert!(checked > 150);
}

#[test]
fn nothing_above_threshold_means_no_occlusion() {
    let g = bev_project(&world(vec![Point3::new(0.0, 0.0, 0.1), Point3::new(0.5, 0.2, 0.2)]), 0.01).unwrap();
    assert!(detect_occlusions(&g, 0.3, 1).unwrap().is_empty());
}

#[test]
fn largest_region_wins() {
    let mut pts = Vec::new();
    for i in 0..8 {
        for j in 0..5 {
            pts.push(Point3::new(0.005 + 0.01 * i as f64, 0.005 + 0.01 * j as f64, 0.5));
        }
    }
    for i in 0..7 {
        pts.push(Point3::new(0.505 + 0.01 * i as f64, 0.505, 0.5));
    }
    let g = bev_project(&world(pts), 0.01).unwrap();
    let all = detect_occlusions_with(&g, 0.3, 5, 0).unwrap();
    assert_eq!(all.iter().map(|r| r.area).collect::<Vec<_>>(), vec![40, 7]);
    let one = detect_occlusions(&g, 0.3, 1).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].area, 40);
}

#[test]
fn occlusion_centroid_sits_under_the_forearm() {
    let arm = ArmModel {
        base: [-0.3, -0.35],
        base_yaw: 0.0,
        link_lengths: [0.5, 0.6],
        link_radius: 0.05,
        joint_angles: [std::f64::consts::FRAC_PI_2; 2],
        joint_limits: [[-1.6, 1.6]; 2],
    };
    let scene = SceneModel::with_defaults(Vec::new(), Some(arm));
    let grid = bev_project(&direct_world(&scene, &NoiseModel::noiseless()), 0.01).unwrap();
    let regions = detect_occlusions(&grid, scene.height_threshold, 1).unwrap();
    assert_eq!(regions.len(), 1);
    let [c0, c1] = arm_capsules(&arm).unwrap();
    let mid = Point3::from((c1.p0.coords + c1.p1.coords) / 2.0);
    let off = ((regions[0].centroid[0] - mid.x).powi(2) + (regions[0].centroid[1] - mid.y).powi(2)).sqrt();
    assert!(off < 1.5 * grid.cell_size, "centroid {:?} vs {mid}", regions[0].centroid);
    // and the region matches the analytic footprint of both capsules
    let footprint = |x: f64, y: f64| {
        [c0, c1].iter().any(|c| {
            let flat = |p: Point3<f64>| Point3::new(p.x, p.y, 0.0);
            mirrorsense::raycast::point_segment_distance(&Point3::new(x, y, 0.0), &flat(c.p0), &flat(c.p1)) <= c.radius
        })
    };
    let inside = regions[0].cells.iter().filter(|&&(r, c)| {
        let [x, y] = grid.cell_center(r, c);
        footprint(x, y)
    });
    assert!(inside.count() as f64 > 0.9 * regions[0].area as f64);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn occlusions_ignore_point_order(seed in 0u64..500, shuffle in any::<u64>()) {
        let scene = randomized_scene(seed, Difficulty::Easy).unwrap();
        let cloud = direct_world(&scene, &NoiseModel::default().with_seed(seed));
        let mut pts = cloud.points.clone();
        let mut state = shuffle;
        for i in (1..pts.len()).rev() {
            state = mirrorsense::seed::splitmix64(state);
            pts.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let a = detect_occlusions(&bev_project(&cloud, 0.01).unwrap(), scene.height_threshold, 1).unwrap();
        let b = detect_occlusions(&bev_project(&world(pts), 0.01).unwrap(), scene.height_threshold, 1).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn tilt_is_invariant_to_mirror_bookkeeping(x in -0.6..0.8f64, y in -0.5..0.5f64, z in 0.0..0.4f64, tilt in -0.2..0.2f64) {
        let scene = SceneModel::with_defaults(Vec::new(), None).with_mirror(default_mirror(&default_sensor()).tilted(tilt));
        let h_m = scene.mirror.transform();
        let target = Point3::new(x, y, z);
        let with_mirror = optimal_tilt_angle(&scene.sensor, &target, &h_m).unwrap();
        let premirrored = optimal_tilt_angle(&scene.sensor, &h_m.transform_point(&target), &HomogeneousTransform::identity()).unwrap();
        prop_assert!((with_mirror - premirrored).abs() < 1e-12);
    }
}

#[test]
fn tilt_toward_the_mirror_image() {
    let sensor = SensorRig {
        tilt_radius: 0.0,
        ..default_sensor()
    };
    let h_m = default_mirror(&sensor).transform();
    let theta = optimal_tilt_angle(&sensor, &Point3::new(0.5, 0.0, 0.0), &h_m).unwrap();
    assert!((theta - (1.9f64 / 2.1).atan()).abs() < 1e-12);
    assert!((theta.to_degrees() - 42.14).abs() < 0.005);
    let below = optimal_tilt_angle(&sensor, &Point3::new(0.0, 0.0, 0.0), &HomogeneousTransform::identity()).unwrap();
    assert_eq!(below, 0.0);
    assert!(optimal_tilt_angle(&sensor, &Point3::new(0.5, 0.0, 2.1), &h_m).is_err());
}

#[test]
fn tilted_axis_passes_through_the_virtual_target() {
    let sensor = default_sensor();
    let h_m = default_mirror(&sensor).transform();
    for target in [[0.5, 0.0, 0.0], [-0.3, 0.0, 0.1], [0.2, 0.0, 0.3], [0.7, 0.0, 0.05]] {
        let aim = tilt_aim(&sensor, &Point3::from(target), &h_m).unwrap();
        let pose = sensor.world_from_tilted(aim.theta).unwrap();
        let eye = pose.transform_point(&Point3::origin());
        let axis = pose.transform_vector(&-Vector3::z());
        let miss = axis.cross(&(aim.virtual_target - eye)).norm();
        assert!(miss < 1e-12, "{target:?}: {miss}");
    }
}

#[test]
fn empty_reflection_leaves_direct_cloud() {
    let scene = randomized_scene(3, Difficulty::Easy).unwrap();
    let h_m = scene.mirror.transform();
    let direct = render(&scene, 0.0, &NoiseModel::default(), &CameraIntrinsics::default()).unwrap();
    let empty = Capture::empty(0.4, &CameraIntrinsics::default());
    let fused = fuse(&direct, &empty, &scene.sensor, &h_m).unwrap();
    assert_eq!(fused.cloud, realize_capture(&direct, &scene.sensor, &h_m).unwrap());
    assert_eq!(fused.direct_count + fused.mirror_count, fused.len());
}

#[test]
fn virtual_point_is_realized_at_its_source() {
    let scene = SceneModel::with_defaults(Vec::new(), None);
    let h_m = scene.mirror.transform();
    let mut reflect = Capture::empty(0.0, &CameraIntrinsics::default());
    // mirror image (1.9, 0, 0.1) seen from the untilted rig at (0, 0, 2.1)
    reflect.cloud.push(Point3::new(1.9, 0.0, 0.1 - 2.1), true);
    let direct = Capture::empty(0.0, &CameraIntrinsics::default());
    let fused = fuse(&direct, &reflect, &scene.sensor, &h_m).unwrap();
    assert_eq!(fused.mirror_count, 1);
    assert!((fused.cloud.points[0] - Point3::new(0.5, 0.0, 0.1)).amax() < 1e-9);
}

fn surface_distance(scene: &SceneModel, p: &Point3<f64>) -> f64 {
    let mut d = p.z.abs();
    for b in &scene.boxes {
        d = d.min(b.distance_to_surface(p));
    }
    for c in scene.capsules().unwrap() {
        d = d.min(c.distance_to_surface(p));
    }
    d
}

#[test]
fn noiseless_fusion_lies_on_true_surfaces() {
    for seed in [1, 6] {
        let scene = randomized_scene(seed, Difficulty::Hard).unwrap();
        let out = run_pipeline(&scene, &NoiseModel::noiseless()).unwrap();
        assert!(out.fused.mirror_count > 0);
        let cloud = &out.fused.cloud;
        let on = cloud.points.iter().filter(|p| surface_distance(&scene, p) < 1e-6).count();
        assert!(on as f64 >= 0.99 * cloud.len() as f64, "{on} of {}", cloud.len());
        let plane = scene.mirror.plane;
        let side = plane.signed_distance(&scene.sensor.position()).signum();
        for (p, via) in cloud.iter() {
            if via {
                assert!(plane.signed_distance(p) * side >= 0.0);
            }
        }
    }
}

fn detect_alone(boxes: Vec<SceneBox>, camera: &CameraIntrinsics) -> (SceneModel, Vec<DetectedBox>) {
    let scene = SceneModel::with_defaults(boxes, None);
    let cloud = direct_world_with(&scene, &NoiseModel::noiseless(), camera);
    let det = detect_in_workspace(&scene, &cloud, &PipelineParams::default()).unwrap();
    (scene, det)
}

#[test]
fn empty_grid_has_no_boxes() {
    let g = bev_project(&world(Vec::new()), 0.01).unwrap();
    assert!(detect_boxes(&g, 0.03, 1.0).is_empty());
}

const POSES: [(f64, f64, f64); 5] = [(0.0, 0.0, 0.0), (0.1, 0.05, 0.0), (0.3, -0.3, 0.0), (-0.25, 0.2, 0.35), (0.4, -0.2, -0.5)];

fn check_single_box(camera: &CameraIntrinsics, min_iou: f64) {
    for (x, y, yaw) in POSES {
        let (scene, det) = detect_alone(vec![SceneBox::on_ground(x, y, [0.3, 0.2, 0.12], yaw)], camera);
        assert_eq!(det.len(), 1, "{x} {y} {yaw}");
        let truth = DetectedBox::from(&scene.boxes[0]);
        let overlap = iou(&det[0], &truth);
        assert!(overlap >= min_iou, "{x} {y} {yaw}: iou {overlap}");
        let off = (det[0].center[0] - x).abs().max((det[0].center[1] - y).abs());
        assert!(off <= 0.01 + 1e-9, "center off by {off}");
        assert!(yaw_difference(det[0].yaw, truth.yaw).to_degrees() < 5.0);
    }
}

#[test]
fn single_box_is_recovered_when_pixels_are_finer_than_cells() {
    let camera = CameraIntrinsics {
        width: 320,
        height: 240,
        ..CameraIntrinsics::default()
    };
    check_single_box(&camera, 0.9);
}

#[test]
fn single_box_center_and_yaw_at_default_resolution() {
    // pixels are ~1.4 cm apart on the box top, coarser than the 1 cm grid
    check_single_box(&CameraIntrinsics::default(), 0.8);
}

#[test]
fn separated_boxes_give_two_detections() {
    let (_, det) = detect_alone(
        vec![
            SceneBox::on_ground(-0.2, 0.0, [0.3, 0.2, 0.1], 0.0),
            SceneBox::on_ground(0.13, 0.0, [0.3, 0.2, 0.1], 0.0),
        ],
        &CameraIntrinsics::default(),
    );
    assert_eq!(det.len(), 2);
}

#[test]
fn coverage_extremes() {
    let reference = world(vec![Point3::new(0.0, 0.0, 0.0), Point3::new(0.1, 0.0, 0.0)]);
    let mut fused = reference.clone();
    fused.push(Point3::new(5.0, 5.0, 5.0), false);
    assert_eq!(coverage(&fused, &reference, 0.01).unwrap(), 1.0);
    let far = world(vec![Point3::new(1.0, 1.0, 1.0)]);
    assert_eq!(coverage(&far, &reference, 0.01).unwrap(), 0.0);
    assert!(coverage(&far, &world(Vec::new()), 0.01).is_err());
}

#[test]
fn no_arm_means_direct_only() {
    let scene = randomized_scene(8, Difficulty::Easy).unwrap().with_arm(None);
    let out = run_pipeline(&scene, &NoiseModel::default()).unwrap();
    assert!(out.occlusions.is_empty());
    assert_eq!(out.theta, 0.0);
    assert!(out.reflect.is_none());
    assert_eq!(out.fused.mirror_count, 0);
}

#[test]
fn arm_over_box_triggers_reflection_and_recovers_the_box() {
    for seed in [0, 3, 5] {
        let scene = randomized_scene(seed, Difficulty::Easy).unwrap();
        let out = run_pipeline(&scene, &NoiseModel::default().with_seed(seed)).unwrap();
        assert!(out.theta > 0.0, "seed {seed}");
        assert!(out.fused.mirror_count > 0);
        let truth: Vec<DetectedBox> = scene.boxes.iter().map(DetectedBox::from).collect();
        let m = match_detections(&out.detections, &truth, 0.5);
        assert_eq!(m.true_positives, truth.len(), "seed {seed}: {m:?}");
        let again = run_pipeline(&scene, &NoiseModel::default().with_seed(seed)).unwrap();
        assert_eq!(again.fused.cloud, out.fused.cloud);
        assert_eq!(again.detections, out.detections);
    }
}

#[test]
fn fusion_never_lowers_coverage() {
    for seed in 0..6 {
        let d = if seed % 2 == 0 { Difficulty::Easy } else { Difficulty::Hard };
        let scene = randomized_scene(seed, d).unwrap();
        let ev = evaluate_scene(&scene, &NoiseModel::default().with_seed(seed), &Strategy::ALL, &PipelineParams::default()).unwrap();
        let direct = ev.report(Strategy::Direct).unwrap().coverage;
        let both = ev.report(Strategy::DirectMirror).unwrap().coverage;
        assert!(both >= direct - 1e-9, "seed {seed}");
    }
}

#[test]
fn without_the_arm_mirror_data_changes_no_detection() {
    for seed in 0..4 {
        let scene = randomized_scene(seed, Difficulty::Easy).unwrap().with_arm(None);
        let ev = evaluate_scene(&scene, &NoiseModel::default().with_seed(seed), &[Strategy::Direct, Strategy::DirectMirror], &PipelineParams::default()).unwrap();
        let d = ev.report(Strategy::Direct).unwrap();
        let dm = ev.report(Strategy::DirectMirror).unwrap();
        assert_eq!(d.matches_50, dm.matches_50, "seed {seed}");
        assert_eq!(d.detections.len(), dm.detections.len());
    }
}

#[test]
fn two_sensor_view_matches_direct_without_occlusion() {
    let scene = randomized_scene(2, Difficulty::Easy).unwrap().with_arm(None);
    let ev = evaluate_scene(&scene, &NoiseModel::default(), &[Strategy::Direct, Strategy::TwoSensor], &PipelineParams::default()).unwrap();
    let d = ev.report(Strategy::Direct).unwrap().coverage;
    let two = ev.report(Strategy::TwoSensor).unwrap().coverage;
    assert!(two - d <= 0.02, "{d} vs {two}");
}

#[test]
fn surfaces_reported_per_return() {
    let scene = randomized_scene(1, Difficulty::Easy).unwrap();
    let cap = render(&scene, 0.0, &NoiseModel::noiseless(), &CameraIntrinsics::default()).unwrap();
    assert!(cap.returns.iter().any(|r| matches!(r.surface, Surface::Arm(_))));
    assert!(cap.returns.iter().any(|r| r.surface == Surface::Ground));
    let _ = Vector3::<f64>::zeros();
}
