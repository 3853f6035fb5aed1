//! Unit-quaternion rotations with a canonical sign.
//!
//! A [`Rotation`] is stored scalar-first as `(w, x, y, z)` and always has
//! `w >= 0` (when `w == 0` the first nonzero vector component is positive),
//! so `q` and `-q` share one representative. Matrices are computed on demand.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Tolerance used by [`Rotation::from_matrix`] for orthogonality.
pub const MATRIX_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, PartialEq)]
pub struct Rotation {
    q: [f64; 4],
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [w, x, y, z] = self.q;
        write!(f, "Rotation({w:.6}, {x:.6}, {y:.6}, {z:.6})")
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::IDENTITY
    }
}

fn canonical(mut q: [f64; 4]) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    for c in q.iter_mut() {
        *c /= n;
    }
    let flip = if q[0] != 0.0 {
        q[0] < 0.0
    } else {
        q[1..].iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0)
    };
    if flip {
        for c in q.iter_mut() {
            *c = -*c;
        }
    }
    // -0.0 and 0.0 must compare bitwise equal for determinism.
    for c in q.iter_mut() {
        if *c == 0.0 {
            *c = 0.0;
        }
    }
    q
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation { q: [1.0, 0.0, 0.0, 0.0] };

    /// Builds a rotation from a (not necessarily normalized) quaternion.
    ///
    /// Panics if the quaternion is zero or not finite.
    pub fn from_quat(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n2 = w * w + x * x + y * y + z * z;
        assert!(n2.is_finite() && n2 > 0.0, "quaternion must be finite and nonzero");
        Rotation { q: canonical([w, x, y, z]) }
    }

    /// Rebuilds a rotation read from a float32 file. The stored values are
    /// kept as-is when already unit length within 1e-6, so writing the
    /// rotation back reproduces the same bytes.
    pub fn from_stored(q: [f32; 4]) -> Result<Self> {
        let q = q.map(f64::from);
        let n2: f64 = q.iter().map(|c| c * c).sum();
        if !n2.is_finite() || n2 == 0.0 {
            return Err(Error::Format("stored quaternion is zero or not finite".into()));
        }
        if (n2.sqrt() - 1.0).abs() > 1e-6 {
            return Ok(Self::from_quat_array(q));
        }
        let mut r = Rotation { q };
        let flip = if q[0] != 0.0 {
            q[0] < 0.0
        } else {
            q[1..].iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0)
        };
        if flip {
            r.q = q.map(|c| -c);
        }
        Ok(r)
    }

    pub fn from_quat_array(q: [f64; 4]) -> Self {
        Self::from_quat(q[0], q[1], q[2], q[3])
    }

    /// Rotation by `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let a = axis.normalize();
        let (s, c) = (angle / 2.0).sin_cos();
        Self::from_quat(c, s * a.x, s * a.y, s * a.z)
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if !ortho.is_finite() || ortho >= MATRIX_TOLERANCE || det <= 0.0 {
            return Err(Error::NotARotation { ortho, det });
        }
        // Shepperd: pick the largest diagonal combination for stability.
        let tr = m.trace();
        let q = if tr > m[(0, 0)] && tr > m[(1, 1)] && tr > m[(2, 2)] {
            let s = (1.0 + tr).sqrt() * 2.0;
            [
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            ]
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            [
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            ]
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            [
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            ]
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            [
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            ]
        };
        Ok(Self::from_quat_array(q))
    }

    /// Row-major 3x3 array, the layout used by the dataset manifest.
    pub fn from_row_major(r: &[f64; 9]) -> Result<Self> {
        Self::from_matrix(&Matrix3::from_row_slice(r))
    }

    pub fn quat(&self) -> [f64; 4] {
        self.q
    }

    pub fn w(&self) -> f64 {
        self.q[0]
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.q;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = self.to_matrix();
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn inverse(&self) -> Self {
        let [w, x, y, z] = self.q;
        Self::from_quat(w, -x, -y, -z)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        // v + 2w (u x v) + 2 u x (u x v)
        let [w, x, y, z] = self.q;
        let u = Vector3::new(x, y, z);
        let t = 2.0 * u.cross(v);
        v + w * t + u.cross(&t)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.q[0].abs().min(1.0).acos()
    }

    pub fn dot(&self, other: &Rotation) -> f64 {
        self.q.iter().zip(other.q.iter()).map(|(a, b)| a * b).sum()
    }

    /// Haar-uniform rotation from a normalized 4D Gaussian.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let q: [f64; 4] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let n2: f64 = q.iter().map(|c| c * c).sum();
            if n2 > 1e-12 {
                return Self::from_quat_array(q);
            }
        }
    }

    /// Haar-uniform rotation conditioned on `angle <= radius`.
    ///
    /// The angle has density proportional to `1 - cos(theta)` on `[0, radius]`;
    /// it is drawn by inverting `theta - sin(theta)`.
    pub fn random_in_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Self {
        let radius = radius.clamp(0.0, PI);
        if radius == 0.0 {
            return Self::IDENTITY;
        }
        let target = rng.gen::<f64>() * (radius - radius.sin());
        let mut lo = 0.0;
        let mut hi = radius;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if mid - mid.sin() < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let axis: Vector3<f64> = loop {
            let v = Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            if v.norm_squared() > 1e-12 {
                break v;
            }
        };
        Self::from_axis_angle(axis, 0.5 * (lo + hi))
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        let [a, b, c, d] = self.q;
        let [e, f, g, h] = rhs.q;
        Rotation::from_quat(
            a * e - b * f - c * g - d * h,
            a * f + b * e + c * h - d * g,
            a * g - b * h + c * e + d * f,
            a * h + b * g - c * f + d * e,
        )
    }
}

/// Geodesic distance `2 acos |<qa, qb>|` in radians, in `[0, pi]`.
///
/// Evaluated as `4 atan2(|qa - s qb|, |qa + s qb|)` with `s = sign <qa, qb>`,
/// which is the same quantity without the loss of precision of `acos` near 1.
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    let s = if a.dot(b) < 0.0 { -1.0 } else { 1.0 };
    let (mut minus, mut plus) = (0.0, 0.0);
    for (x, y) in a.q.iter().zip(b.q.iter()) {
        minus += (x - s * y) * (x - s * y);
        plus += (x + s * y) * (x + s * y);
    }
    4.0 * minus.sqrt().atan2(plus.sqrt())
}

/// Minimum geodesic distance from `r` to any member of `set`.
pub fn min_distance(r: &Rotation, set: &[Rotation]) -> f64 {
    set.iter().map(|g| geodesic_distance(r, g)).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_matrix() {
        assert_eq!(Rotation::IDENTITY.to_matrix(), Matrix3::identity());
        let r = Rotation::from_matrix(&Matrix3::identity()).unwrap();
        assert_eq!(r.quat(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn quarter_turn_about_x() {
        let h = std::f64::consts::FRAC_PI_4;
        let r = Rotation::from_quat(h.cos(), h.sin(), 0.0, 0.0);
        let v = r.to_matrix() * Vector3::new(0.0, 1.0, 0.0);
        assert!((v - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert!((r.rotate(&Vector3::y()) - v).norm() < 1e-12);
    }

    #[test]
    fn half_turn_about_z_is_canonical() {
        let m = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        let r = Rotation::from_matrix(&m).unwrap();
        assert_eq!(r.quat(), [0.0, 0.0, 0.0, 1.0]);
        let neg = Rotation::from_quat(0.0, 0.0, 0.0, -1.0);
        assert_eq!(neg.quat(), [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_non_rotations() {
        let reflect = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(matches!(Rotation::from_matrix(&reflect), Err(Error::NotARotation { .. })));
        let sheared = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Rotation::from_matrix(&sheared).is_err());
    }

    #[test]
    fn round_trips_and_matrix_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let r = Rotation::random(&mut rng);
            let n: f64 = r.quat().iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
            assert!(r.w() >= 0.0);
            let m = r.to_matrix();
            assert!((m.transpose() * m - Matrix3::identity()).abs().max() < 1e-6);
            assert!((m.determinant() - 1.0).abs() < 1e-6);
            let back = Rotation::from_matrix(&m).unwrap();
            assert!(geodesic_distance(&r, &back) < 1e-6);
            let dq: f64 = r.quat().iter().zip(back.quat()).map(|(a, b)| (a - b).abs()).sum();
            assert!(dq < 1e-9, "canonical representative differs: {r:?} {back:?}");
        }
    }

    #[test]
    fn geodesic_basics() {
        assert_eq!(geodesic_distance(&Rotation::IDENTITY, &Rotation::IDENTITY), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let axis = Vector3::new(rng.gen(), rng.gen(), rng.gen::<f64>() + 0.1);
            let half = Rotation::from_axis_angle(axis, PI);
            assert!((geodesic_distance(&Rotation::IDENTITY, &half) - PI).abs() < 1e-7);
        }
    }

    #[test]
    fn geodesic_is_a_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let a = Rotation::random(&mut rng);
            let b = Rotation::random(&mut rng);
            let c = Rotation::random(&mut rng);
            let ab = geodesic_distance(&a, &b);
            assert_eq!(ab, geodesic_distance(&b, &a));
            assert!(ab <= geodesic_distance(&a, &c) + geodesic_distance(&c, &b) + 1e-9);
            // left invariance
            assert!((geodesic_distance(&(c * a), &(c * b)) - ab).abs() < 1e-7);
        }
    }

    #[test]
    fn random_is_reproducible() {
        let a: Vec<_> = (0..5).map({
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            move |_| Rotation::random(&mut rng)
        }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for r in a {
            assert_eq!(r, Rotation::random(&mut rng));
        }
    }

    #[test]
    fn haar_mean_matrix_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let mut acc = Matrix3::zeros();
        for _ in 0..n {
            acc += Rotation::random(&mut rng).to_matrix();
        }
        acc /= n as f64;
        assert!(acc.abs().max() < 0.02, "{acc}");
    }

    #[test]
    fn haar_angle_law_chi_square() {
        // Angle density (1 - cos t) / pi on [0, pi]; CDF (t - sin t) / pi.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let bins = 20;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let t = Rotation::random(&mut rng).angle();
            counts[((t / PI * bins as f64) as usize).min(bins - 1)] += 1;
        }
        let cdf = |t: f64| (t - t.sin()) / PI;
        let chi2: f64 = (0..bins)
            .map(|i| {
                let lo = PI * i as f64 / bins as f64;
                let hi = PI * (i + 1) as f64 / bins as f64;
                let e = n as f64 * (cdf(hi) - cdf(lo));
                (counts[i] as f64 - e).powi(2) / e
            })
            .sum();
        // chi^2 critical value, 19 degrees of freedom, 1% level
        assert!(chi2 < 36.19, "chi2 = {chi2}");
    }

    #[test]
    fn ball_sampling_respects_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = 0.1;
        let mut max: f64 = 0.0;
        let mut mean = 0.0;
        for _ in 0..10_000 {
            let a = Rotation::random_in_ball(&mut rng, r).angle();
            max = max.max(a);
            mean += a / 10_000.0;
        }
        assert!(max <= r + 1e-12);
        // E[t] under density ~ t^2 on [0, r] is 3r/4 for small r
        assert!((mean - 0.75 * r).abs() < 0.003, "mean {mean}");
    }

    #[test]
    fn products_stay_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut acc = Rotation::IDENTITY;
        for _ in 0..10_000 {
            acc = acc * Rotation::random(&mut rng);
            let n: f64 = acc.quat().iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        let r = Rotation::random(&mut rng);
        assert!(geodesic_distance(&(r * r.inverse()), &Rotation::IDENTITY) < 1e-7);
    }
}
