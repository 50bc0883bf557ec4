//! Plain-text camera pose files.
//!
//! ```text
//! # optional comment lines
//! fx fy cx cy
//! frame qw qx qy qz tx ty tz
//! frame r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz
//! ```
//!
//! Each record maps world points into the camera frame (`X_cam = R·X + t`).
//! The quaternion and the row-major matrix forms may be mixed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::model::{rotation_deviation, CameraPose, Intrinsics};

/// Rotations this close to orthonormal are snapped back; beyond it, rejected.
const REPAIR_TOL: f64 = 1e-4;

fn parse_numbers(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::MalformedPoses(format!("line {lineno}: bad number {t:?}")))
        })
        .collect()
}

fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    u * v_t
}

/// Builds a pose from a (possibly slightly unnormalized) quaternion.
pub fn pose_from_quaternion(frame: usize, q: [f64; 4], t: Vector3<f64>, intrinsics: Intrinsics) -> Result<CameraPose> {
    let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
    let deviation = (quat.norm_squared() - 1.0).abs();
    if deviation > REPAIR_TOL || !deviation.is_finite() {
        return Err(Error::NonOrthonormalRotation { frame, deviation });
    }
    let r = *UnitQuaternion::from_quaternion(quat).to_rotation_matrix().matrix();
    CameraPose::new(frame, r, t, intrinsics)
}

fn pose_from_matrix(frame: usize, m: Matrix3<f64>, t: Vector3<f64>, intrinsics: Intrinsics) -> Result<CameraPose> {
    let deviation = rotation_deviation(&m);
    if deviation > REPAIR_TOL || !deviation.is_finite() {
        return Err(Error::NonOrthonormalRotation { frame, deviation });
    }
    CameraPose::new(frame, nearest_rotation(&m), t, intrinsics)
}

/// Parses pose text; `expected` (when given) is the number of frames in the
/// dataset, and records must then cover frames `0..expected` exactly.
pub fn parse_poses(text: &str, expected: Option<usize>) -> Result<Vec<CameraPose>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::MalformedPoses("missing intrinsics header".into()))?;
    let h = parse_numbers(header, hline)?;
    if h.len() != 4 {
        return Err(Error::MalformedPoses(format!(
            "line {hline}: intrinsics header needs 4 values, got {}",
            h.len()
        )));
    }
    let intrinsics = Intrinsics::new(h[0], h[1], h[2], h[3]);

    let mut poses = Vec::new();
    for (lineno, line) in lines {
        let v = parse_numbers(line, lineno)?;
        let frame = v[0];
        if frame < 0.0 || frame.fract() != 0.0 {
            return Err(Error::MalformedPoses(format!("line {lineno}: bad frame index {frame}")));
        }
        let frame = frame as usize;
        let pose = match v.len() {
            8 => pose_from_quaternion(frame, [v[1], v[2], v[3], v[4]], Vector3::new(v[5], v[6], v[7]), intrinsics)?,
            13 => pose_from_matrix(
                frame,
                Matrix3::from_row_slice(&v[1..10]),
                Vector3::new(v[10], v[11], v[12]),
                intrinsics,
            )?,
            n => {
                return Err(Error::MalformedPoses(format!(
                    "line {lineno}: expected 8 or 13 values, got {n}"
                )))
            }
        };
        poses.push(pose);
    }
    poses.sort_by_key(|p| p.frame);
    if poses.windows(2).any(|w| w[0].frame == w[1].frame) {
        return Err(Error::MalformedPoses("duplicate frame index".into()));
    }
    if let Some(n) = expected {
        let consecutive = poses.iter().enumerate().all(|(i, p)| p.frame == i);
        if poses.len() != n || !consecutive {
            return Err(Error::FrameCountMismatch {
                expected: n,
                found: poses.len(),
            });
        }
    }
    Ok(poses)
}

pub fn load_poses(path: &Path, expected: Option<usize>) -> Result<Vec<CameraPose>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    parse_poses(&text, expected)
}

/// Writes poses in quaternion form. All poses must share intrinsics.
pub fn write_poses(poses: &[CameraPose], header_comment: Option<&str>, path: &Path) -> Result<()> {
    let mut out = String::new();
    if let Some(c) = header_comment {
        for l in c.lines() {
            let _ = writeln!(out, "# {l}");
        }
    }
    let k = poses
        .first()
        .map(|p| p.intrinsics)
        .unwrap_or(Intrinsics::new(1.0, 1.0, 0.0, 0.0));
    let _ = writeln!(out, "{} {} {} {}", k.fx, k.fy, k.cx, k.cy);
    for p in poses {
        let q = UnitQuaternion::from_matrix(&p.rotation);
        let t = p.translation;
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            p.frame, q.w, q.i, q.j, q.k, t.x, t.y, t.z
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
