use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use mirrorsense::calibration::{
    calibrate_once, calibration_sweep, find_optimal_pose, CalibrationSetup, PoseSearchSpace, RegistrationParams,
};
use mirrorsense::config::SceneConfig;
use mirrorsense::evaluation::{evaluate_scene, fallback_aim, Strategy};
use mirrorsense::geometry::PointCloud;
use mirrorsense::io::{depth_to_pgm, write_detections_csv, write_ply, write_report_csv, write_sweep_csv};
use mirrorsense::pipeline::{realize_capture, reflect_noise, run_pipeline_with, PipelineParams};
use mirrorsense::scene::{arm_capsules, default_mirror, randomized_scene, ArmModel, Difficulty, SceneModel};
use mirrorsense::sensor::{render, NoiseModel};
use mirrorsense::{seed, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EXIT_USAGE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

/// Mirror reflection sensing: scene generation, captures, pipeline runs and mirror calibration.
#[derive(Debug, Parser)]
#[command(name = "mirrorsense", version)]
struct Cli {
    /// Root seed; overrides the noise seed stored in a scene file.
    #[arg(long, global = true, env = "MIRRORSENSE_SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DifficultyArg {
    Easy,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CaptureStrategy {
    Direct,
    Mirror,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PoseChoice {
    Optimal,
    Random,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a randomized scene document.
    Scene {
        #[arg(long, value_enum, default_value = "easy")]
        difficulty: DifficultyArg,
        /// Output file; the document goes to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render one capture to PLY.
    Capture {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum, default_value = "direct")]
        strategy: CaptureStrategy,
        /// Tilt in degrees; mirror captures aim at the detected occlusion when omitted.
        #[arg(long, allow_hyphen_values = true)]
        tilt: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the depth image (16-bit PGM, millimeters).
        #[arg(long)]
        depth: Option<PathBuf>,
        /// Keep points in the camera frame as recorded instead of realizing them in the world.
        #[arg(long)]
        raw: bool,
    },
    /// Run the sensing strategies on a scene and write the report.
    Run {
        #[arg(long)]
        scene: PathBuf,
        /// Comma-separated strategies or `all`.
        #[arg(long, default_value = "all")]
        strategies: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Choose a calibration pose and sweep the mirror displacement.
    Calibrate {
        #[arg(long)]
        scene: PathBuf,
        /// Angle range in degrees, `lo..hi`.
        #[arg(long, default_value = "-5..5", allow_hyphen_values = true)]
        sweep: String,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, value_enum, default_value = "optimal")]
        pose: PoseChoice,
        #[arg(long)]
        out: PathBuf,
        /// Noise-free captures.
        #[arg(long)]
        noiseless: bool,
        /// Calibrate the scene's mirror against the upright prior and store the plane in the scene file.
        #[arg(long)]
        update_scene: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let start = Instant::now();
    let result = dispatch(&cli);
    eprintln!("wall time: {} ms", start.elapsed().as_millis());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME })
        }
    }
}

fn dispatch(cli: &Cli) -> mirrorsense::Result<()> {
    match &cli.command {
        Command::Scene { difficulty, out } => cmd_scene(cli.seed.unwrap_or(0), *difficulty, out.as_deref()),
        Command::Capture {
            scene,
            strategy,
            tilt,
            out,
            depth,
            raw,
        } => cmd_capture(&load(scene, cli.seed)?, *strategy, *tilt, out, depth.as_deref(), *raw),
        Command::Run {
            scene,
            strategies,
            out_dir,
        } => cmd_run(scene, &load(scene, cli.seed)?, &parse_strategies(strategies)?, out_dir),
        Command::Calibrate {
            scene,
            sweep,
            step,
            runs,
            pose,
            out,
            noiseless,
            update_scene,
        } => {
            let mut cfg = load(scene, cli.seed)?;
            if *noiseless {
                cfg.noise = NoiseModel {
                    seed: cfg.noise.seed,
                    ..NoiseModel::noiseless()
                };
            }
            let angles = sweep_angles(sweep, *step)?;
            cmd_calibrate(&mut cfg, &angles, *runs, *pose, out)?;
            if *update_scene {
                fs::write(scene, cfg.to_toml())?;
                println!("scene updated: {}", scene.display());
            }
            Ok(())
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> mirrorsense::Result<SceneConfig> {
    let text = fs::read_to_string(path)?;
    let mut cfg = SceneConfig::parse(&text)?;
    if let Some(s) = seed {
        cfg.noise.seed = s;
    }
    Ok(cfg)
}

fn create(path: &Path) -> mirrorsense::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn save_ply(cloud: &PointCloud, path: &Path) -> mirrorsense::Result<()> {
    let mut w = create(path)?;
    write_ply(cloud, &mut w)?;
    w.flush()?;
    Ok(())
}

fn parse_strategies(text: &str) -> mirrorsense::Result<Vec<Strategy>> {
    if text.trim() == "all" {
        return Ok(Strategy::ALL.to_vec());
    }
    let mut out = Vec::new();
    for token in text.split(',').map(str::trim) {
        let s: Strategy = token.parse()?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    Ok(out)
}

fn sweep_angles(range: &str, step: f64) -> mirrorsense::Result<Vec<f64>> {
    let bad = || Error::Validation(format!("sweep `{range}`: expected `lo..hi` in degrees"));
    let (lo, hi) = range.split_once("..").ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Validation(format!("step must be > 0, got {step}")));
    }
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err(bad());
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

fn cmd_scene(seed: u64, difficulty: DifficultyArg, out: Option<&Path>) -> mirrorsense::Result<()> {
    let difficulty = match difficulty {
        DifficultyArg::Easy => Difficulty::Easy,
        DifficultyArg::Hard => Difficulty::Hard,
    };
    let mut cfg = SceneConfig::new(randomized_scene(seed, difficulty)?);
    cfg.noise.seed = seed;
    let text = cfg.to_toml();
    match out {
        Some(path) => {
            fs::write(path, &text)?;
            let s = &cfg.scene;
            println!(
                "scene seed {seed}: {} boxes, arm {}, height threshold {:.3} m -> {}",
                s.boxes.len(),
                if s.arm.is_some() { "present" } else { "absent" },
                s.height_threshold,
                path.display()
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_capture(
    cfg: &SceneConfig,
    strategy: CaptureStrategy,
    tilt: Option<f64>,
    out: &Path,
    depth: Option<&Path>,
    raw: bool,
) -> mirrorsense::Result<()> {
    let scene = &cfg.scene;
    let (theta, noise) = match strategy {
        CaptureStrategy::Direct => (tilt.map_or(0.0, f64::to_radians), cfg.noise),
        CaptureStrategy::Mirror => {
            let theta = match tilt {
                Some(t) => t.to_radians(),
                None => {
                    let params = PipelineParams {
                        intrinsics: cfg.camera,
                        ..PipelineParams::default()
                    };
                    match run_pipeline_with(scene, &cfg.noise, &params)?.aim {
                        Some(aim) => aim.theta,
                        None => fallback_aim(scene)?.theta,
                    }
                }
            };
            (theta, reflect_noise(&cfg.noise))
        }
    };
    let capture = render(scene, theta, &noise, &cfg.camera)?;
    let cloud = if raw {
        capture.cloud.clone()
    } else {
        realize_capture(&capture, &scene.sensor, &scene.mirror.transform())?
    };
    save_ply(&cloud, out)?;
    if let Some(path) = depth {
        fs::write(path, depth_to_pgm(&capture)?)?;
    }
    println!(
        "tilt {:.3} deg: {} points ({} via mirror) -> {}",
        theta.to_degrees(),
        cloud.len(),
        cloud.mirror_count(),
        out.display()
    );
    Ok(())
}

fn cmd_run(path: &Path, cfg: &SceneConfig, strategies: &[Strategy], out_dir: &Path) -> mirrorsense::Result<()> {
    fs::create_dir_all(out_dir)?;
    let params = PipelineParams {
        intrinsics: cfg.camera,
        ..PipelineParams::default()
    };
    let eval = evaluate_scene(&cfg.scene, &cfg.noise, strategies, &params)?;
    let scene_id = path.file_stem().map_or("scene".into(), |s| s.to_string_lossy().into_owned());

    let mut w = create(&out_dir.join("report.csv"))?;
    write_report_csv(&scene_id, &eval, &mut w)?;
    w.flush()?;
    fs::write(out_dir.join("direct.pgm"), depth_to_pgm(&eval.direct)?)?;
    fs::write(out_dir.join("reflect.pgm"), depth_to_pgm(&eval.reflect)?)?;
    for r in &eval.reports {
        let name = r.strategy.name().replace('+', "-");
        save_ply(&r.cloud, &out_dir.join(format!("{name}.ply")))?;
        let mut w = create(&out_dir.join(format!("detections-{name}.csv")))?;
        write_detections_csv(&r.detections, &mut w)?;
        w.flush()?;
    }

    if let Some(warning) = &eval.warning {
        println!("warning: {warning}");
    }
    println!(
        "scene {scene_id}: tilt {:.3} deg, {} occlusion(s), {} reference points",
        eval.theta.to_degrees(),
        eval.occlusions.len(),
        eval.reference_points
    );
    println!("{:<14} {:>8} {:>8} {:>9} {:>7} {:>7}", "strategy", "direct", "mirror", "coverage", "F1@50", "F1@75");
    for r in &eval.reports {
        println!(
            "{:<14} {:>8} {:>8} {:>9.4} {:>7.3} {:>7.3}",
            r.strategy.name(),
            r.direct_points,
            r.mirror_points,
            r.coverage,
            r.matches_50.f1(),
            r.matches_75.f1()
        );
    }
    println!("artifacts -> {}", out_dir.display());
    Ok(())
}

fn random_pose(template: &ArmModel, space: &PoseSearchSpace, seed: u64) -> mirrorsense::Result<ArmModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "random-pose"));
    for _ in 0..1000 {
        let mut arm = *template;
        for (joint, grid) in space.joints.iter().zip(&space.angle_grid) {
            let (lo, hi) = grid.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            let angle = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            arm = arm.with_joint(*joint, angle);
        }
        if arm_capsules(&arm).is_ok() {
            return Ok(arm);
        }
    }
    Err(Error::InvalidPose("no feasible random pose found".into()))
}

fn cmd_calibrate(
    cfg: &mut SceneConfig,
    angles: &[f64],
    runs: usize,
    pose: PoseChoice,
    out: &Path,
) -> mirrorsense::Result<()> {
    let scene: SceneModel = cfg.scene.clone();
    let template = scene
        .arm
        .ok_or_else(|| Error::Validation("calibration needs an `[arm]` section".into()))?;
    let setup = CalibrationSetup {
        intrinsics: cfg.camera,
        ..CalibrationSetup::for_scene(&scene)?
    };
    let space = PoseSearchSpace::default();
    let arm = match pose {
        PoseChoice::Optimal => {
            let search = find_optimal_pose(&scene, &space, &cfg.noise, &setup)?;
            if search.degenerate {
                println!("warning: no pose shows the arm; keeping the initial pose");
            }
            println!(
                "optimal pose: shoulder {:.1} deg, elbow {:.1} deg, n_points {:.0} ({} direct, {} mirror) over {} captures",
                search.arm.joint_angles[0].to_degrees(),
                search.arm.joint_angles[1].to_degrees(),
                search.n_points,
                search.n_direct,
                search.n_reflect,
                search.captures
            );
            search.arm
        }
        PoseChoice::Random => {
            let arm = random_pose(&template, &space, cfg.noise.seed)?;
            println!(
                "random pose: shoulder {:.1} deg, elbow {:.1} deg",
                arm.joint_angles[0].to_degrees(),
                arm.joint_angles[1].to_degrees()
            );
            arm
        }
    };
    let params = RegistrationParams::default();
    let rows = calibration_sweep(&scene, angles, &arm, runs, &cfg.noise, &setup, &params)?;
    let mut w = create(out)?;
    write_sweep_csv(&rows, &mut w)?;
    w.flush()?;
    println!("{:>8} {:>12} {:>12} {:>10}", "angle", "trans [m]", "rot [deg]", "converged");
    for r in &rows {
        println!(
            "{:>8.2} {:>12.6} {:>12.4} {:>10.2}",
            r.angle_deg, r.mean_translational, r.mean_rotational, r.converged_fraction
        );
    }
    println!("sweep -> {}", out.display());

    // the scene's own mirror against the upright prior
    let prior = default_mirror(&scene.sensor).transform();
    let reg_params = RegistrationParams {
        seed: seed::derive(cfg.noise.seed, "ransac"),
        ..params
    };
    let result = calibrate_once(&scene, &arm, &prior, &setup, &cfg.noise, &reg_params)?;
    let [a, b, c, d] = result.plane_estimated.coefficients();
    println!(
        "estimated mirror plane: [{a:.6}, {b:.6}, {c:.6}, {d:.6}] (error {:.6} m, {:.4} deg, converged {})",
        result.translational_error, result.rotational_error, result.converged
    );
    cfg.calibrated_plane = Some(result.plane_estimated);
    Ok(())
}
