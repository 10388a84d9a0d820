//! Small fixed-size vector and matrix helpers plus a tridiagonal solver.

use crate::scalar::Real;

pub type Vec3<T> = [T; 3];
pub type Vec2<T> = [T; 2];

#[inline]
pub fn add<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<T: Real>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm_sq<T: Real>(a: Vec3<T>) -> T {
    dot(a, a)
}

#[inline]
pub fn dist_sq<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    norm_sq(sub(a, b))
}

#[inline]
pub fn dist<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    dist_sq(a, b).sqrt()
}

#[inline]
pub fn is_finite3<T: Real>(a: &Vec3<T>) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3<T>(pub [[T; 3]; 3]);

impl<T: Real> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Mat3([[o, z, z], [z, o, z], [z, z, o]])
    }

    pub fn from_row_major(v: &[T]) -> Option<Self> {
        if v.len() != 9 {
            return None;
        }
        Some(Mat3([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]]))
    }

    pub fn to_row_major(&self) -> [T; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    /// Rotation about the x axis: `(y, z) -> (y cos a - z sin a, y sin a + z cos a)`.
    pub fn rot_x(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Mat3([[o, z, z], [z, c, -s], [z, s, c]])
    }

    /// Rotation about the y axis.
    pub fn rot_y(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Mat3([[c, z, s], [z, o, z], [-s, z, c]])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        let mut out = [[T::zero(); 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn det(&self) -> T {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest absolute entry of `RᵀR - I`.
    pub fn orthonormality_error(&self) -> T {
        let g = self.transpose().mul(self);
        let mut worst = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { T::one() } else { T::zero() };
                worst = worst.max((g.0[i][j] - target).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

/// Solves a tridiagonal system with the Thomas algorithm.
///
/// `lower[i]` multiplies `x[i]` in row `i + 1`, `upper[i]` multiplies
/// `x[i + 1]` in row `i`. Returns `None` when a pivot vanishes or turns
/// non-finite; the system is expected to be diagonally dominant.
pub fn solve_tridiagonal<T: Real>(lower: &[T], diag: &[T], upper: &[T], rhs: &[T]) -> Option<Vec<T>> {
    let n = diag.len();
    debug_assert!(rhs.len() == n && lower.len() + 1 == n.max(1) && upper.len() + 1 == n.max(1));
    if n == 0 {
        return Some(Vec::new());
    }
    let mut c = vec![T::zero(); n];
    let mut d = vec![T::zero(); n];
    let mut pivot = diag[0];
    if pivot == T::zero() || !pivot.is_finite() {
        return None;
    }
    if n > 1 {
        c[0] = upper[0] / pivot;
    }
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i - 1] * c[i - 1];
        if pivot == T::zero() || !pivot.is_finite() {
            return None;
        }
        if i + 1 < n {
            c[i] = upper[i] / pivot;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        let next = d[i + 1];
        d[i] -= c[i] * next;
    }
    Some(d)
}
