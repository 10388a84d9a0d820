//! Linear-kernel RBF smoothing and gap filling of trajectories.
//!
//! The model is `f(t) = Σ w_i·|t − t_i| + slope·t + intercept` with
//! `Σ w_i = Σ w_i·t_i = 0`. Because `|r|` is conditionally positive definite
//! only up to sign, the smoothing penalty enters as `(K − λI)`: the fitted
//! values are `f(t_i) = y_i + λ·w_i`, and `λ = 0` interpolates.
//!
//! In one dimension `f` is piecewise linear with knots at the centers, and
//! the knot values satisfy `(I + (λ/2)(L − e·eᵀ/T))·f = y`, where `L` is the
//! path Laplacian with edge weights `1/(t_{k+1} − t_k)`, `e = e_0 − e_{n−1}`
//! and `T = t_{n−1} − t_0`. That is a tridiagonal solve plus a rank-one
//! correction, so fitting is `O(n)`.

use crate::error::{Error, Result};
use crate::linalg::{solve_tridiagonal, Vec3};
use crate::model::{Provenance, Sample, Skeleton, Track, TrackSet};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct RbfModel<T> {
    /// Sample times in seconds, ascending.
    pub centers: Vec<T>,
    pub weights: Vec<T>,
    pub slope: T,
    pub intercept: T,
    pub smoothing: T,
    /// Model value at each center.
    knots: Vec<T>,
}

impl<T: Real> RbfModel<T> {
    /// Builds a model from explicit parameters, as stored elsewhere.
    pub fn from_parts(centers: Vec<T>, weights: Vec<T>, slope: T, intercept: T, smoothing: T) -> Result<Self> {
        if centers.len() != weights.len() || centers.is_empty() {
            return Err(Error::Dimension("centers and weights must be nonempty and equally long".into()));
        }
        if centers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("centers must be strictly increasing".into()));
        }
        let mut m = RbfModel { centers, weights, slope, intercept, smoothing, knots: Vec::new() };
        m.knots = m.centers.iter().map(|&t| m.eval_direct(t)).collect();
        Ok(m)
    }

    /// `Σ w_i·|t − t_i| + slope·t + intercept`.
    pub fn eval_direct(&self, t: T) -> T {
        self.centers.iter().zip(&self.weights).map(|(&c, &w)| w * (t - c).abs()).sum::<T>()
            + self.slope * t
            + self.intercept
    }

    /// Same value as [`RbfModel::eval_direct`], by interpolating the knot values.
    pub fn eval(&self, t: T) -> T {
        let (c, f) = (&self.centers, &self.knots);
        let n = c.len();
        let outer = self.slope;
        if t <= c[0] {
            return f[0] + outer * (t - c[0]);
        }
        if t >= c[n - 1] {
            return f[n - 1] + outer * (t - c[n - 1]);
        }
        let k = c.partition_point(|&x| x <= t) - 1;
        let u = (t - c[k]) / (c[k + 1] - c[k]);
        f[k] + (f[k + 1] - f[k]) * u
    }

    /// `(Σ w_i, Σ w_i·t_i)`; both vanish for a fitted model.
    pub fn orthogonality(&self) -> (T, T) {
        let s0 = self.weights.iter().copied().sum();
        let s1 = self.centers.iter().zip(&self.weights).map(|(&c, &w)| c * w).sum();
        (s0, s1)
    }
}

/// Fits the smoothing RBF to `(times, values)`.
pub fn rbf_fit<T: Real>(times: &[T], values: &[T], smoothing: T) -> Result<RbfModel<T>> {
    if times.len() != values.len() {
        return Err(Error::Dimension(format!("{} times but {} values", times.len(), values.len())));
    }
    if !(smoothing >= T::zero() && smoothing.is_finite()) {
        return Err(Error::Input("smoothing must be a finite nonnegative number".into()));
    }
    if times.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::Input("times and values must be finite".into()));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).expect("finite"));
    let t: Vec<T> = order.iter().map(|&i| times[i]).collect();
    let y: Vec<T> = order.iter().map(|&i| values[i]).collect();
    if let Some(w) = t.windows(2).find(|w| w[1] == w[0]) {
        return Err(Error::Input(format!("duplicate sample time {}", w[0])));
    }
    let n = t.len();
    if n < 2 {
        return Err(Error::Input("at least 2 distinct sample times are required".into()));
    }
    let span = t[n - 1] - t[0];
    let two = T::lit(2.0);
    let f = if smoothing == T::zero() || n == 2 {
        y.clone()
    } else {
        let half = smoothing / two;
        let inv_h: Vec<T> = t.windows(2).map(|w| T::one() / (w[1] - w[0])).collect();
        let diag: Vec<T> = (0..n)
            .map(|i| {
                let left = if i > 0 { inv_h[i - 1] } else { T::zero() };
                let right = if i + 1 < n { inv_h[i] } else { T::zero() };
                T::one() + half * (left + right)
            })
            .collect();
        let off: Vec<T> = inv_h.iter().map(|&g| -half * g).collect();
        let mut e = vec![T::zero(); n];
        e[0] = T::one();
        e[n - 1] = -T::one();
        let numerical = |what: &str| {
            Error::Numerical(format!(
                "{what} (n = {n}, λ = {smoothing}, min spacing {}, span {span})",
                t.windows(2).map(|w| w[1] - w[0]).fold(T::infinity(), T::min)
            ))
        };
        let z = solve_tridiagonal(&off, &diag, &off, &y).ok_or_else(|| numerical("singular tridiagonal pivot"))?;
        let u = solve_tridiagonal(&off, &diag, &off, &e).ok_or_else(|| numerical("singular tridiagonal pivot"))?;
        let c = half / span;
        let denom = T::one() - c * (u[0] - u[n - 1]);
        if !(denom.abs() > T::epsilon()) {
            return Err(numerical("rank-one update is singular"));
        }
        let scale = c * (z[0] - z[n - 1]) / denom;
        z.iter().zip(&u).map(|(&zi, &ui)| zi + scale * ui).collect()
    };
    let outer = (f[n - 1] - f[0]) / span;
    let slopes: Vec<T> = (0..n - 1).map(|k| (f[k + 1] - f[k]) / (t[k + 1] - t[k])).collect();
    let weights: Vec<T> = (0..n)
        .map(|j| {
            let before = if j == 0 { outer } else { slopes[j - 1] };
            let after = if j == n - 1 { outer } else { slopes[j] };
            (after - before) / two
        })
        .collect();
    let tail: T = weights.iter().zip(&t).map(|(&w, &c)| w * (c - t[0])).sum();
    let intercept = f[0] - outer * t[0] - tail;
    if !(f.iter().all(|v| v.is_finite()) && intercept.is_finite()) {
        return Err(Error::Numerical(format!("non-finite fit (n = {n}, λ = {smoothing})")));
    }
    Ok(RbfModel { centers: t, weights, slope: outer, intercept, smoothing, knots: f })
}

pub fn rbf_eval<T: Real>(model: &RbfModel<T>, t: T) -> T {
    model.eval_direct(t)
}

fn fit3<T: Real>(times: &[T], points: &[Vec3<T>], smoothing: T) -> Result<[RbfModel<T>; 3]> {
    let axis = |a: usize| -> Result<RbfModel<T>> {
        let v: Vec<T> = points.iter().map(|p| p[a]).collect();
        rbf_fit(times, &v, smoothing)
    };
    Ok([axis(0)?, axis(1)?, axis(2)?])
}

fn eval3<T: Real>(m: &[RbfModel<T>; 3], t: T) -> Vec3<T> {
    [m[0].eval(t), m[1].eval(t), m[2].eval(t)]
}

/// Smooths one track and resamples it at every frame of its span.
pub fn smooth_track<T: Real>(track: &Track<T>, fps: T, smoothing: T, all_joints: bool) -> Result<Track<T>> {
    let samples = &track.samples;
    if samples.len() < 2 {
        return Err(Error::Input(format!("track {} has {} samples; at least 2 needed", track.id, samples.len())));
    }
    let times: Vec<T> = samples.iter().map(|s| T::from_count(s.frame as usize) / fps).collect();
    let pelvis_model = fit3(&times, &samples.iter().map(|s| s.pelvis).collect::<Vec<_>>(), smoothing)?;
    let joint_models = if all_joints {
        let joints = samples[0].skeleton.joints3d.len();
        (0..joints)
            .map(|j| fit3(&times, &samples.iter().map(|s| s.skeleton.joints3d[j]).collect::<Vec<_>>(), smoothing))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let (first, last) = (samples[0].frame, samples[samples.len() - 1].frame);
    let mut out = Vec::with_capacity((last - first + 1) as usize);
    let mut next = 0;
    for frame in first..=last {
        while next + 1 < samples.len() && samples[next].frame < frame {
            next += 1;
        }
        // Nearest observed sample, earlier on ties.
        let nearest = if next > 0 && frame - samples[next - 1].frame <= samples[next].frame.abs_diff(frame) {
            &samples[next - 1]
        } else {
            &samples[next]
        };
        let t = T::from_count(frame as usize) / fps;
        let pelvis = eval3(&pelvis_model, t);
        let joints3d = if all_joints {
            joint_models.iter().map(|m| eval3(m, t)).collect()
        } else {
            nearest
                .skeleton
                .joints3d
                .iter()
                .map(|j| [pelvis[0] + j[0] - nearest.pelvis[0], pelvis[1] + j[1] - nearest.pelvis[1], pelvis[2] + j[2] - nearest.pelvis[2]])
                .collect()
        };
        let observed = nearest.frame == frame;
        out.push(Sample {
            frame,
            skeleton: Skeleton { joints3d, joints2d: nearest.skeleton.joints2d.clone() },
            pelvis,
            detection: if observed { nearest.detection } else { None },
        });
    }
    Ok(Track { id: track.id, samples: out, provenance: Provenance::Smoothed })
}

/// Smooths every non-discarded track; tracks too short to fit are kept as
/// they are, with a warning.
pub fn smooth_tracks<T: Real>(ts: &TrackSet<T>, smoothing: T, all_joints: bool) -> Result<TrackSet<T>> {
    let mut tracks = Vec::with_capacity(ts.tracks.len());
    for t in &ts.tracks {
        if t.is_discarded() {
            tracks.push(t.clone());
        } else if t.samples.len() < 2 {
            log::warn!("track {} has {} sample(s); left unsmoothed", t.id, t.samples.len());
            tracks.push(t.clone());
        } else {
            tracks.push(smooth_track(t, ts.fps, smoothing, all_joints)?);
        }
    }
    Ok(TrackSet { fps: ts.fps, layout: ts.layout.clone(), tracks })
}
