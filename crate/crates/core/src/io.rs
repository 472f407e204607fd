//! File formats: ASCII PLY point clouds, PGM depth images and CSV reports.
//!
//! CSV numbers use fixed decimal places so reports diff cleanly.

use std::io::{BufReader, Read, Write};

use image::ImageFormat;
use nalgebra::Point3;
use ply_rs::parser::Parser;
use ply_rs::ply::{
    Addable, DefaultElement, ElementDef, Encoding, Ply, Property, PropertyDef, PropertyType, ScalarType,
};
use ply_rs::writer::Writer;

use crate::calibration::SweepRow;
use crate::detection::DetectedBox;
use crate::error::{Error, Result};
use crate::evaluation::SceneEvaluation;
use crate::geometry::{Frame, PointCloud};
use crate::sensor::{Capture, NO_RETURN};

fn ply_err(e: impl std::fmt::Display) -> Error {
    Error::Format {
        format: "PLY",
        message: e.to_string(),
    }
}

fn frame_name(frame: Frame) -> &'static str {
    match frame {
        Frame::World => "world",
        Frame::Sensor => "sensor",
        Frame::TiltedSensor => "tilted_sensor",
    }
}

/// Writes `cloud` as ASCII PLY with `x y z` doubles and an integer `via_mirror`.
///
/// The frame is kept in a `frame <name>` comment.
pub fn write_ply<W: Write>(cloud: &PointCloud, out: &mut W) -> Result<()> {
    let mut ply = Ply::<DefaultElement>::new();
    ply.header.encoding = Encoding::Ascii;
    ply.header.comments.push(format!("frame {}", frame_name(cloud.frame)));
    let mut vertex = ElementDef::new("vertex".to_string());
    for axis in ["x", "y", "z"] {
        vertex.properties.add(PropertyDef::new(axis.to_string(), PropertyType::Scalar(ScalarType::Double)));
    }
    vertex.properties.add(PropertyDef::new("via_mirror".to_string(), PropertyType::Scalar(ScalarType::Int)));
    ply.header.elements.add(vertex);
    let points = cloud
        .iter()
        .map(|(p, via)| {
            let mut e = DefaultElement::new();
            e.insert("x".to_string(), Property::Double(p.x));
            e.insert("y".to_string(), Property::Double(p.y));
            e.insert("z".to_string(), Property::Double(p.z));
            e.insert("via_mirror".to_string(), Property::Int(i32::from(via)));
            e
        })
        .collect();
    ply.payload.insert("vertex".to_string(), points);
    Writer::new().write_ply(out, &mut ply).map_err(ply_err)?;
    Ok(())
}

fn scalar(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::Char(v) => v.into(),
        Property::UChar(v) => v.into(),
        Property::Short(v) => v.into(),
        Property::UShort(v) => v.into(),
        Property::Int(v) => v.into(),
        Property::UInt(v) => v.into(),
        Property::Float(v) => v.into(),
        Property::Double(v) => v,
        _ => return None,
    })
}

/// Reads a PLY vertex list. `via_mirror` is optional and defaults to 0; the
/// frame comes from a `frame <name>` comment and defaults to world.
pub fn read_ply<R: Read>(input: R) -> Result<PointCloud> {
    let ply = Parser::<DefaultElement>::new()
        .read_ply(&mut BufReader::new(input))
        .map_err(ply_err)?;
    let frame = ply
        .header
        .comments
        .iter()
        .find_map(|c| c.strip_prefix("frame "))
        .map(|name| match name.trim() {
            "world" => Ok(Frame::World),
            "sensor" => Ok(Frame::Sensor),
            "tilted_sensor" => Ok(Frame::TiltedSensor),
            other => Err(ply_err(format!("unknown frame `{other}`"))),
        })
        .transpose()?
        .unwrap_or(Frame::World);
    let vertices = ply
        .payload
        .get("vertex")
        .ok_or_else(|| ply_err("no vertex element"))?;
    let mut cloud = PointCloud::new(frame);
    for (i, v) in vertices.iter().enumerate() {
        let get = |k: &str| {
            v.get(k)
                .and_then(scalar)
                .ok_or_else(|| ply_err(format!("vertex {i}: missing numeric property `{k}`")))
        };
        let via = match v.get("via_mirror") {
            Some(p) => scalar(p).ok_or_else(|| ply_err(format!("vertex {i}: via_mirror is not a scalar")))? != 0.0,
            None => false,
        };
        cloud.push(Point3::new(get("x")?, get("y")?, get("z")?), via);
    }
    Ok(cloud)
}

/// Encodes the depth image as a 16-bit binary PGM in millimeters; 0 means no return.
pub fn depth_to_pgm(capture: &Capture) -> Result<Vec<u8>> {
    if capture.depth_image.len() != capture.width * capture.height {
        return Err(Error::Format {
            format: "PGM",
            message: format!(
                "{} depth samples for a {}x{} image",
                capture.depth_image.len(),
                capture.width,
                capture.height
            ),
        });
    }
    // 16-bit samples are big-endian
    let mut out = format!("P5\n{} {}\n{}\n", capture.width, capture.height, u16::MAX).into_bytes();
    for &d in &capture.depth_image {
        let mm = if d == NO_RETURN || !d.is_finite() {
            0
        } else {
            (d * 1000.0).round().clamp(1.0, u16::MAX as f64) as u16
        };
        out.extend_from_slice(&mm.to_be_bytes());
    }
    Ok(out)
}

/// Decodes a depth PGM into `(width, height, meters)`, with 0 for missing returns.
pub fn depth_from_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)
        .map_err(|e| Error::Format {
            format: "PGM",
            message: e.to_string(),
        })?
        .into_luma16();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.pixels().map(|p| p.0[0] as f64 / 1000.0).collect()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format {
        format: "CSV",
        message: e.to_string(),
    }
}

fn write_rows<W: Write>(out: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Detections as `center_x, center_y, w, d, yaw, score`.
pub fn write_detections_csv<W: Write>(detections: &[DetectedBox], out: W) -> Result<()> {
    write_rows(
        out,
        &["center_x", "center_y", "w", "d", "yaw", "score"],
        detections.iter().map(|b| {
            vec![
                format!("{:.4}", b.center[0]),
                format!("{:.4}", b.center[1]),
                format!("{:.4}", b.extent[0]),
                format!("{:.4}", b.extent[1]),
                format!("{:.4}", b.yaw),
                format!("{:.4}", b.score),
            ]
        }),
    )
}

/// Sweep rows as `angle_deg, mean_trans_m, mean_rot_deg, converged_fraction`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    write_rows(
        out,
        &["angle_deg", "mean_trans_m", "mean_rot_deg", "converged_fraction"],
        rows.iter().map(|r| {
            vec![
                format!("{:.2}", r.angle_deg),
                format!("{:.6}", r.mean_translational),
                format!("{:.4}", r.mean_rotational),
                format!("{:.2}", r.converged_fraction),
            ]
        }),
    )
}

/// Header of the run report.
pub const REPORT_HEADER: [&str; 12] = [
    "scene",
    "strategy",
    "theta_deg",
    "direct_points",
    "mirror_points",
    "coverage",
    "tp50",
    "fp50",
    "fn50",
    "tp75",
    "fp75",
    "fn75",
];

/// One row per strategy of a scene evaluation.
pub fn write_report_csv<W: Write>(scene_id: &str, eval: &SceneEvaluation, out: W) -> Result<()> {
    write_rows(
        out,
        &REPORT_HEADER,
        eval.reports.iter().map(|r| {
            vec![
                scene_id.to_string(),
                r.strategy.to_string(),
                format!("{:.3}", r.theta.to_degrees()),
                r.direct_points.to_string(),
                r.mirror_points.to_string(),
                format!("{:.4}", r.coverage),
                r.matches_50.true_positives.to_string(),
                r.matches_50.false_positives.to_string(),
                r.matches_50.false_negatives.to_string(),
                r.matches_75.true_positives.to_string(),
                r.matches_75.false_positives.to_string(),
                r.matches_75.false_negatives.to_string(),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::CameraIntrinsics;

    fn sample_cloud() -> PointCloud {
        let mut c = PointCloud::new(Frame::TiltedSensor);
        c.push(Point3::new(0.1, -0.25, 1.0 / 3.0), false);
        c.push(Point3::new(-1e-9, 2.5, -0.75), true);
        c.push(Point3::new(0.0, 0.0, 0.0), false);
        c
    }

    #[test]
    fn ply_round_trip_is_exact() {
        let cloud = sample_cloud();
        let mut buf = Vec::new();
        write_ply(&cloud, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("ply\nformat ascii 1.0\n"));
        assert!(text.contains("property int via_mirror"));
        assert!(text.contains("element vertex 3"));
        let back = read_ply(buf.as_slice()).unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn ply_without_flag_or_frame() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n0.5 0 -1\n";
        let cloud = read_ply(text.as_bytes()).unwrap();
        assert_eq!(cloud.frame, Frame::World);
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.mirror_count(), 0);
        assert_eq!(cloud.points[1], Point3::new(0.5, 0.0, -1.0));
    }

    #[test]
    fn ply_garbage_is_a_format_error() {
        assert!(matches!(read_ply("not a ply".as_bytes()), Err(Error::Format { .. })));
        let missing = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n";
        assert!(matches!(read_ply(missing.as_bytes()), Err(Error::Format { .. })));
    }

    #[test]
    fn pgm_round_trip_in_millimeters() {
        let intr = CameraIntrinsics {
            width: 3,
            height: 2,
            ..CameraIntrinsics::default()
        };
        let mut cap = Capture::empty(0.0, &intr);
        cap.depth_image = vec![NO_RETURN, 1.2344, 2.0, 0.0004, 70.0, 3.9996];
        let bytes = depth_to_pgm(&cap).unwrap();
        assert!(bytes.starts_with(b"P5"));
        let (w, h, d) = depth_from_pgm(&bytes).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(d, vec![0.0, 1.234, 2.0, 0.001, 65.535, 4.0]);
    }

    #[test]
    fn detections_csv_has_fixed_decimals() {
        let b = DetectedBox {
            center: [0.1, -0.25],
            extent: [0.3, 0.2],
            yaw: 0.123456,
            score: 1.0,
        };
        let mut buf = Vec::new();
        write_detections_csv(&[b], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "center_x,center_y,w,d,yaw,score\n0.1000,-0.2500,0.3000,0.2000,0.1235,1.0000\n"
        );
    }

    #[test]
    fn sweep_csv_columns() {
        let row = SweepRow {
            angle_deg: -5.0,
            mean_translational: 0.00123449,
            mean_rotational: 0.05,
            converged_fraction: 1.0,
            runs: Vec::new(),
        };
        let mut buf = Vec::new();
        write_sweep_csv(&[row], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "angle_deg,mean_trans_m,mean_rot_deg,converged_fraction\n-5.00,0.001234,0.0500,1.00\n"
        );
    }
}
