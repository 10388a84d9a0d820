//! Stage ground estimation and camera-to-world transforms.
//!
//! The reconstructed point cloud is projected onto the camera's (z, y)
//! plane, a robust line is fitted to its ground-side envelope, and the line
//! yields camera tilt and height. World coordinates put the ground at
//! `y = 0` with `+y` up, the origin directly below the camera, and `x`
//! inherited from the camera.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{add, is_finite3, Mat3, Vec3};
use crate::model::{Sample, Skeleton, Track, TrackSet, YAxis};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    points: Vec<Vec3<T>>,
    y_axis: YAxis,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Vec3<T>>, y_axis: YAxis) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Input("point cloud: nonempty required".into()));
        }
        if let Some(i) = points.iter().position(|p| !is_finite3(p)) {
            return Err(Error::Input(format!("point cloud: point {i} is not finite")));
        }
        Ok(PointCloud { points, y_axis })
    }

    pub fn points(&self) -> &[Vec3<T>] {
        &self.points
    }

    pub fn y_axis(&self) -> YAxis {
        self.y_axis
    }
}

/// Stage profile `y = slope·z + intercept` in camera coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundLine<T> {
    pub slope: T,
    pub intercept: T,
    pub inliers: Vec<usize>,
    pub y_axis: YAxis,
}

impl<T: Real> GroundLine<T> {
    /// Camera pitch relative to the stage, radians.
    pub fn tilt(&self) -> T {
        self.slope.atan()
    }

    pub fn eval(&self, z: T) -> T {
        self.slope * z + self.intercept
    }
}

/// Least-squares `y = m z + c`; `None` when all `z` coincide.
fn fit_line<T: Real>(pts: impl Iterator<Item = (T, T)> + Clone) -> Option<(T, T)> {
    let n = T::from_count(pts.clone().count());
    if n < T::lit(2.0) {
        return None;
    }
    let (sz, sy) = pts.clone().fold((T::zero(), T::zero()), |(a, b), (z, y)| (a + z, b + y));
    let (mz, my) = (sz / n, sy / n);
    let (szz, szy) = pts.fold((T::zero(), T::zero()), |(a, b), (z, y)| {
        let dz = z - mz;
        (a + dz * dz, b + dz * (y - my))
    });
    let scale = mz.abs().max(T::one());
    if !(szz > T::epsilon() * scale * scale * n) {
        return None;
    }
    let m = szy / szz;
    Some((m, my - m * mz))
}

/// Fits the stage line to the ground-side envelope of `cloud`.
///
/// The z-range is split into `bins` equal bins; each nonempty bin contributes
/// the point at quantile `q` counted from the ground side (largest `y` for a
/// y-down camera). After the first least-squares fit, each further iteration
/// refits to every point within one residual standard deviation of the line.
pub fn fit_ground_line<T: Real>(cloud: &PointCloud<T>, q: T, bins: usize, iterations: usize) -> Result<GroundLine<T>> {
    if !(q > T::zero() && q < T::one()) {
        return Err(Error::Input("ground quantile must lie in (0, 1)".into()));
    }
    if bins == 0 || iterations == 0 {
        return Err(Error::Input("ground bins and iterations must be positive".into()));
    }
    let pts = cloud.points();
    if pts.len() < bins {
        return Err(Error::Input(format!("point cloud has {} points, fewer than {bins} bins", pts.len())));
    }
    let ground_side = |y: T| match cloud.y_axis() {
        YAxis::Down => y,
        YAxis::Up => -y,
    };
    let (zmin, zmax) = pts.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), p| (lo.min(p[2]), hi.max(p[2])));
    let span = zmax - zmin;
    if !(span > T::zero()) {
        return Err(Error::Degenerate("all points share one depth; the z-range is empty".into()));
    }
    let nb = T::from_count(bins);
    let mut binned: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (i, p) in pts.iter().enumerate() {
        let b = ((p[2] - zmin) / span * nb).floor().to_usize().unwrap_or(0).min(bins - 1);
        binned[b].push(i);
    }
    let mut selected: Vec<usize> = binned
        .iter_mut()
        .filter(|b| !b.is_empty())
        .map(|b| {
            b.sort_by(|&i, &j| {
                ground_side(pts[j][1]).partial_cmp(&ground_side(pts[i][1])).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
            });
            let rank = (q * T::from_count(b.len() - 1)).round().to_usize().unwrap_or(0).min(b.len() - 1);
            b[rank]
        })
        .collect();
    selected.sort_unstable();

    let as_zy = |idx: &[usize]| idx.iter().map(|&i| (pts[i][2], pts[i][1])).collect::<Vec<_>>();
    let zy = as_zy(&selected);
    let (mut m, mut c) = fit_line(zy.iter().copied())
        .ok_or_else(|| Error::Degenerate("ground candidates share one depth".into()))?;

    let ymag = pts.iter().fold(T::one(), |acc, p| acc.max(p[1].abs()).max(p[2].abs()));
    let floor = T::lit(1e-9) * ymag;
    for _ in 1..iterations {
        let n = T::from_count(selected.len());
        let var = selected.iter().map(|&i| {
            let r = pts[i][1] - (m * pts[i][2] + c);
            r * r
        }).sum::<T>() / n;
        let band = var.sqrt().max(floor);
        let band_idx: Vec<usize> =
            (0..pts.len()).filter(|&i| (pts[i][1] - (m * pts[i][2] + c)).abs() <= band).collect();
        let zy = as_zy(&band_idx);
        match fit_line(zy.iter().copied()) {
            Some((m2, c2)) => {
                m = m2;
                c = c2;
                selected = band_idx;
            }
            None => break,
        }
    }
    if !(m.is_finite() && c.is_finite()) {
        return Err(Error::Numerical("ground line fit produced non-finite coefficients".into()));
    }
    Ok(GroundLine { slope: m, intercept: c, inliers: selected, y_axis: cloud.y_axis() })
}

/// Rigid map from camera to world coordinates: `R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> CameraExtrinsics<T> {
    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Result<Self> {
        let tol = T::lit(1e-9);
        if !rotation.is_finite() || !is_finite3(&translation) {
            return Err(Error::Input("extrinsics must be finite".into()));
        }
        if rotation.orthonormality_error() > tol || (rotation.det() - T::one()).abs() > tol {
            return Err(Error::Input("rotation must be orthonormal with determinant +1".into()));
        }
        Ok(CameraExtrinsics { rotation, translation })
    }

    pub fn identity() -> Self {
        CameraExtrinsics { rotation: Mat3::identity(), translation: [T::zero(); 3] }
    }

    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        add(self.rotation.mul_vec(p), self.translation)
    }

    /// `self` after `first`: `p -> self(first(p))`.
    pub fn after(&self, first: &Self) -> Self {
        CameraExtrinsics {
            rotation: self.rotation.mul(&first.rotation),
            translation: self.apply(first.translation),
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let t = rt.mul_vec(self.translation);
        CameraExtrinsics { rotation: rt, translation: [-t[0], -t[1], -t[2]] }
    }

    /// Height of the camera origin above the world ground.
    pub fn camera_height(&self) -> T {
        self.translation[1]
    }
}

/// Levels the stage line and puts the ground at world `y = 0`, `+y` up.
pub fn extrinsics_from_ground<T: Real>(line: &GroundLine<T>) -> CameraExtrinsics<T> {
    let tilt = line.tilt();
    let level = Mat3::rot_x(tilt);
    // Leveled camera-frame coordinate of the ground plane.
    let ground_y = line.intercept * tilt.cos();
    let (o, z) = (T::one(), T::zero());
    match line.y_axis {
        YAxis::Down => {
            let flip = Mat3([[o, z, z], [z, -o, z], [z, z, -o]]);
            CameraExtrinsics { rotation: flip.mul(&level), translation: [z, ground_y, z] }
        }
        YAxis::Up => CameraExtrinsics { rotation: level, translation: [z, -ground_y, z] },
    }
}

/// Per-frame camera motion; frames not listed are identity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameExtrinsics<T> {
    pub frames: BTreeMap<u32, CameraExtrinsics<T>>,
}

impl<T: Real> FrameExtrinsics<T> {
    pub fn get(&self, frame: u32) -> CameraExtrinsics<T> {
        self.frames.get(&frame).copied().unwrap_or_else(CameraExtrinsics::identity)
    }
}

fn transform_skeleton<T: Real>(s: &Skeleton<T>, e: &CameraExtrinsics<T>) -> Skeleton<T> {
    Skeleton { joints3d: s.joints3d.iter().map(|&p| e.apply(p)).collect(), joints2d: s.joints2d.clone() }
}

/// Maps every joint and pelvis `p` to `R_f·(R_b·p + t_b) + t_f`.
pub fn to_world<T: Real>(
    ts: &TrackSet<T>,
    base: &CameraExtrinsics<T>,
    per_frame: Option<&FrameExtrinsics<T>>,
) -> TrackSet<T> {
    let tracks = ts
        .tracks
        .iter()
        .map(|t| Track {
            id: t.id,
            provenance: t.provenance,
            samples: t
                .samples
                .iter()
                .map(|s| {
                    let e = match per_frame {
                        Some(pf) => pf.get(s.frame).after(base),
                        None => *base,
                    };
                    Sample {
                        frame: s.frame,
                        skeleton: transform_skeleton(&s.skeleton, &e),
                        pelvis: e.apply(s.pelvis),
                        detection: s.detection,
                    }
                })
                .collect(),
        })
        .collect();
    TrackSet { fps: ts.fps, layout: ts.layout.clone(), tracks }
}
